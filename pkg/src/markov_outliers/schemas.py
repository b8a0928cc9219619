"""JSON schemas for the documents the CLI reads and writes."""

from __future__ import annotations

import jsonschema

_FRACTION = {"type": "string", "pattern": r"^-?\d+(/\d+)?$"}
_NUMBER = {"anyOf": [{"type": "number"}, {"type": "string"}]}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "SignificanceReport",
    "type": "object",
    "required": ["test", "params", "observed", "p_value", "bound_formula", "seed", "truncation_flags"],
    "additionalProperties": False,
    "properties": {
        "test": {"enum": ["single", "serial", "two-path", "parallel", "star-split", "outlier", "geometric",
                          "product-serial", "product-two-path", "product-uniform"]},
        "params": {"type": "object"},
        "observed": {
            "type": "object",
            "required": ["epsilon"],
            "properties": {
                "epsilon": _FRACTION,
                "epsilons": {"type": "array", "items": _FRACTION},
                "count_leq": {"type": "integer", "minimum": 1},
                "n_total": {"type": "integer", "minimum": 1},
                "rho": {"type": "integer", "minimum": 1},
            },
        },
        "p_value": {"type": "number", "minimum": 0, "maximum": 1},
        "bound_formula": {"enum": ["sqrt_2eps", "eps", "two_eps", "two_pow_d_eps",
                                   "binomial_tail_sqrt_2eps_over_alpha", "binomial_tail_sqrt_eps_over_alpha",
                                   "binomial_tail_eps_over_alpha"]},
        "seed": {
            "type": "object",
            "required": ["seed", "stream_id"],
            "properties": {"seed": {"type": "integer", "minimum": 0}, "stream_id": {"type": "integer", "minimum": 0}},
        },
        "truncation_flags": {"type": "array", "items": {"type": "string"}},
        "nominal": {
            "type": "object",
            "required": ["epsilon", "is_outlier", "p_value"],
            "properties": {"epsilon": _FRACTION, "is_outlier": {"type": "boolean"},
                           "p_value": {"type": "number", "minimum": 0, "maximum": 1}},
        },
    },
}

EVENT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "EventCount",
    "type": "object",
    "required": ["delta", "count", "total", "epsilon"],
    "additionalProperties": False,
    "properties": {
        "delta": {"type": "string"},
        "count": {"type": "integer", "minimum": 0},
        "total": {"type": "integer", "minimum": 1},
        "epsilon": _FRACTION,
    },
}

CHAIN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ChainSpecDocument",
    "type": "object",
    "required": ["states"],
    "additionalProperties": False,
    "properties": {
        "states": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "object", "required": ["id", "label"], "additionalProperties": False,
                      "properties": {"id": {}, "label": _NUMBER}},
        },
        "matrix": {"type": "array", "items": {"type": "array", "items": _NUMBER}},
        "edges": {
            "type": "array",
            "items": {"type": "object", "required": ["u", "v", "weight"], "additionalProperties": False,
                      "properties": {"u": {}, "v": {}, "weight": _NUMBER}},
        },
        "stationary": {"type": "array", "items": _NUMBER},
    },
    "oneOf": [{"required": ["matrix"]}, {"required": ["edges"]}],
}

SCHEMAS = {"report": REPORT_SCHEMA, "event": EVENT_SCHEMA, "chain": CHAIN_SCHEMA}


def validate_document(doc, kind: str = "report") -> list[str]:
    """Schema violations as readable strings (empty when the document is valid)."""
    validator = jsonschema.Draft202012Validator(SCHEMAS[kind])
    return [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}"
            for e in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))]
