"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 work budget exceeded,
4 a check failed (chain validation, theorem audit, or schema check).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import oracle
from .audit import audit_chain
from .chain import as_fraction, dumps_chain, load_chain, validate_chain
from .errors import BudgetExceeded, ConfigError
from .product import (
    ProductChain,
    convolve_histograms,
    count_event,
    load_histograms,
    run_product_serial_test,
    run_product_two_path_test,
    run_product_uniform_pivot_test,
)
from .sampling import RngSeed
from .schemas import SCHEMAS, validate_document
from .significance import (
    run_geometric_outlier_test,
    run_outlier_test,
    run_parallel_test,
    run_serial_test,
    run_single_trajectory_test,
    run_star_split_test,
    run_two_path_test,
)
from .zoo import random_reversible_chain, zoo_chain

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_CHECK = 0, 2, 3, 4

TESTS = ("single", "serial", "two-path", "parallel", "star-split", "outlier", "geometric",
         "product-serial", "product-two-path", "product-uniform")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_source(p):
    p.add_argument("--zoo", action="append", default=[], metavar="SPEC",
                   help="built-in chain, e.g. knn:3, iid:5, random:5:SEED, grid (repeat for products)")
    p.add_argument("--chain", action="append", default=[], metavar="PATH", help="chain document (repeatable)")
    p.add_argument("--blocks", metavar="CSV", help="block table for a districting chain")
    p.add_argument("--districts", type=int, default=2)
    p.add_argument("--pop-deviation", type=float, default=0.25)
    p.add_argument("--label", choices=("margin", "seats"), default="margin")
    p.add_argument("--negate", action="store_true", help="flip the label sign (flag high scores instead)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="markov-outliers", description="Outlier significance tests for reversible Markov chains.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("validate", help="check stochasticity and detailed balance")
    _add_source(p)
    p.add_argument("--out")

    p = sub.add_parser("test", help="run a significance test and emit a report")
    _add_source(p)
    p.add_argument("--test", required=True, choices=TESTS)
    p.add_argument("--k", type=int)
    p.add_argument("--ks", help="comma-separated per-component lengths (product-uniform)")
    p.add_argument("--m", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--alpha")
    p.add_argument("--mu", type=float)
    p.add_argument("--epsilon", help="nominal level; adds a verdict at that level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--start", help="start state (id, index, districting string; comma-separated for products)")
    p.add_argument("--workers", type=int, default=None, help="processes for multi-trajectory tests")
    p.add_argument("--out")
    p.add_argument("--csv", help="write comparison labels (or per-trajectory epsilons) here")
    p.add_argument("--figure", help="write a figure of the same data (png/pdf/svg)")

    p = sub.add_parser("oracle", help="exact probabilities and theorem audits on small chains")
    _add_source(p)
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--rho", action="store_true", help="rho^k_{j,l}")
    what.add_argument("--p", action="store_true", help="p^k_{0,eps}(sigma) for --start")
    what.add_argument("--certify", action="store_true", help="(eps, alpha) certification of --start")
    what.add_argument("--audit", action="store_true", help="run every bound check")
    what.add_argument("--audit-random", type=int, metavar="N", help="audit N random reversible chains")
    p.add_argument("--k", type=int)
    p.add_argument("--j", type=int, default=0)
    p.add_argument("--l", type=int, default=0)
    p.add_argument("--epsilon")
    p.add_argument("--alpha")
    p.add_argument("--start")
    p.add_argument("--ties", choices=("leq", "random"), default="leq",
                   help="leq: ties count against the pivot; random: pivot placed uniformly among its ties")
    p.add_argument("--k-max", type=int, default=3)
    p.add_argument("--tree-k-max", type=int, default=2)
    p.add_argument("--tree-m-max", type=int, default=3)
    p.add_argument("--states", type=int, default=4, help="size of random chains for --audit-random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--out")

    p = sub.add_parser("count-event", help="exact number of low-sum outcome tuples")
    p.add_argument("--histograms", required=True, help="JSON: region -> {value: count}")
    p.add_argument("--delta", required=True)
    p.add_argument("--out")
    p.add_argument("--csv", help="write the summed-value distribution up to delta")
    p.add_argument("--figure")

    p = sub.add_parser("zoo", help="write a built-in chain as a chain document")
    p.add_argument("spec")
    p.add_argument("--out")

    p = sub.add_parser("schema", help="print a document schema or check a document against it")
    p.add_argument("--kind", choices=sorted(SCHEMAS), default="report")
    p.add_argument("--check", metavar="PATH")
    return ap


# -- helpers -------------------------------------------------------------------------

def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _load_sources(args) -> list:
    chains = []
    for spec in args.zoo:
        c = zoo_chain(spec)
        if getattr(c, "label_kind", None) is not None and (args.label != c.label_kind or args.negate):
            from .districting import bundled_grid_chain

            c = bundled_grid_chain("4x4" if spec == "grid" else "2x2", args.label, args.negate)
        chains.append(c)
    for path in args.chain:
        chains.append(load_chain(path))
    if args.blocks:
        from .districting import GridDistrictingChain, load_block_table

        chains.append(GridDistrictingChain(load_block_table(args.blocks), args.districts, args.pop_deviation,
                                           args.label, args.negate))
    if not chains:
        raise ConfigError("give a chain with --zoo, --chain or --blocks")
    return chains


def _one_source(args):
    chains = _load_sources(args)
    if len(chains) != 1:
        raise ConfigError(f"this command takes exactly one chain, got {len(chains)}")
    return chains[0]


def _resolve_state(chain, text: str | None):
    if text is None:
        return getattr(chain, "initial", 0)
    if hasattr(chain, "parse_state"):
        state = chain.parse_state(text)
        if not chain.is_valid(state):
            raise ConfigError(f"start districting is invalid: {chain.violation(state)}")
        return state
    ids = getattr(chain, "state_ids", None)
    if ids is not None:
        for i, sid in enumerate(ids):
            if str(sid) == text:
                return i
    try:
        i = int(text)
    except ValueError:
        raise ConfigError(f"unknown state {text!r}") from None
    if not 0 <= i < chain.n_states:
        raise ConfigError(f"state index {i} out of range")
    return i


def _need(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigError(f"test {args.test!r} needs {', '.join(missing)}")


def _write_trace(report, csv_path, fig_path):
    trace = report.trace or {}
    if "epsilons" in trace:
        if csv_path:
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["trajectory", "epsilon"])
                for i, e in enumerate(report.observed["epsilons"]):
                    w.writerow([i, e])
        if fig_path:
            from .plots import plot_epsilons

            plot_epsilons(trace["epsilons"], int(report.params["t"]), fig_path, report.test)
        return
    labels = trace.get("comparison_labels") or []
    pivot = trace.get("pivot_label")
    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["position", "label", "leq_pivot"])
            for i, a in enumerate(labels):
                w.writerow([i, str(a), int(a <= pivot)])
    if fig_path:
        if not labels:
            raise ConfigError("no comparison labels to plot for this test")
        from .plots import plot_comparison

        plot_comparison([float(a) for a in labels], float(pivot), fig_path, report.test)


# -- subcommands -----------------------------------------------------------------

def cmd_validate(args) -> int:
    chain = _one_source(args)
    if not hasattr(chain, "transition"):
        chain = chain.to_labeled_chain()
    rep = validate_chain(chain)
    _emit(_dump(rep.to_dict()), args.out)
    return EXIT_OK if rep.ok else EXIT_CHECK


def cmd_test(args) -> int:
    seed = RngSeed(args.seed, args.stream)
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if workers < 1:
        raise ConfigError("--workers must be at least 1")
    name = args.test
    if name.startswith("product"):
        comps = _load_sources(args)
        product = ProductChain(tuple(comps))
        starts = args.start.split(",") if args.start else [None] * len(comps)
        if len(starts) != len(comps):
            raise ConfigError(f"--start needs {len(comps)} comma-separated states")
        sigma0 = tuple(_resolve_state(c, s) for c, s in zip(comps, starts))
        if name == "product-serial":
            _need(args, "k")
            rep = run_product_serial_test(product, sigma0, args.k, seed, args.epsilon)
        elif name == "product-two-path":
            _need(args, "k")
            rep = run_product_two_path_test(product, sigma0, args.k, seed, args.epsilon)
        else:
            _need(args, "m", "t", "alpha")
            if args.ks:
                ks = tuple(int(x) for x in args.ks.split(","))
            elif args.k is not None:
                ks = (args.k,) * len(comps)
            else:
                raise ConfigError("product-uniform needs --k or --ks")
            rep = run_product_uniform_pivot_test(product, sigma0, ks, args.alpha, args.m, args.t, seed, workers)
    else:
        chain = _one_source(args)
        sigma0 = _resolve_state(chain, args.start)
        if name in ("single", "serial", "two-path"):
            _need(args, "k")
            fn = {"single": run_single_trajectory_test, "serial": run_serial_test,
                  "two-path": run_two_path_test}[name]
            rep = fn(chain, sigma0, args.k, seed, args.epsilon)
        elif name in ("parallel", "star-split"):
            _need(args, "k", "m")
            fn = run_parallel_test if name == "parallel" else run_star_split_test
            rep = fn(chain, sigma0, args.k, args.m, seed, args.epsilon)
        elif name == "outlier":
            _need(args, "k", "m", "t", "alpha")
            rep = run_outlier_test(chain, sigma0, args.k, args.m, args.t, args.alpha, seed, workers)
        else:
            _need(args, "mu", "m", "t", "alpha")
            rep = run_geometric_outlier_test(chain, sigma0, args.mu, args.m, args.t, args.alpha, seed, workers)
    _emit(rep.to_json(), args.out)
    _write_trace(rep, args.csv, args.figure)
    return EXIT_OK


def _value_doc(query: dict, result) -> dict:
    v = result.value
    doc = {"query": query, "value": str(v) if isinstance(v, Fraction) else v, "value_float": float(v),
           "exact": result.exact}
    if not result.exact:
        doc["error_bound"] = result.error_bound
    return doc


def cmd_oracle(args) -> int:
    if args.audit_random is not None:
        if args.zoo or args.chain or args.blocks:
            raise ConfigError("--audit-random generates its own chains; drop the chain source")
        chains = [(f"random:{args.states}:{args.seed + i}", random_reversible_chain(args.states, args.seed + i))
                  for i in range(args.audit_random)]
    else:
        chain = _one_source(args)
        if not hasattr(chain, "transition"):
            chain = chain.to_labeled_chain()
        chains = [("chain", chain)]

    if args.audit or args.audit_random is not None:
        results = []
        ok = True
        for name, c in chains:
            res = audit_chain(c, k_max=args.k_max, tree_k_max=args.tree_k_max, tree_m_max=args.tree_m_max,
                              budget=args.budget)
            ok &= res.ok
            results.append({"chain": name, "ok": res.ok, "checks": res.summary(),
                            "violations": [v.to_dict() for v in res.violations]})
        _emit(_dump({"audit": results, "ok": ok}), args.out)
        return EXIT_OK if ok else EXIT_CHECK

    chain = chains[0][1]
    if args.k is None:
        raise ConfigError("--k is required")
    if args.rho:
        fn = oracle.exact_rho if args.ties == "leq" else oracle.exact_rho_tied
        res = fn(chain, args.k, args.j, args.l, budget=args.budget)
        doc = _value_doc({"quantity": "rho", "k": args.k, "j": args.j, "l": args.l, "ties": args.ties}, res)
    else:
        if args.epsilon is None:
            raise ConfigError("--epsilon is required")
        sigma = _resolve_state(chain, args.start)
        eps = as_fraction(args.epsilon)
        if args.p:
            fn = oracle.exact_p_conditional if args.ties == "leq" else oracle.exact_p_conditional_tied
            res = fn(chain, sigma, args.k, eps, budget=args.budget)
            doc = _value_doc({"quantity": "p", "k": args.k, "sigma": sigma, "epsilon": str(eps),
                              "ties": args.ties}, res)
        else:
            if args.alpha is None:
                raise ConfigError("--alpha is required")
            cert = oracle.certify_eps_alpha(chain, sigma, args.k, eps, args.alpha, budget=args.budget)
            doc = {"query": {"quantity": "certify", "k": args.k, "sigma": sigma, "epsilon": str(eps),
                             "alpha": str(cert.alpha)},
                   "status": cert.status, "p_sigma0": str(cert.p_sigma0), "mass_at_least": str(cert.mass_at_least)}
    _emit(_dump(doc), args.out)
    return EXIT_OK


def cmd_count_event(args) -> int:
    hists = load_histograms(args.histograms)
    delta = as_fraction(args.delta)
    ev = count_event(hists, delta)
    _emit(_dump(ev.to_dict() | {"delta": args.delta}), args.out)
    if args.csv or args.figure:
        dist = convolve_histograms(hists, delta)
        if args.csv:
            with open(args.csv, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["value", "count", "cumulative"])
                acc = 0
                for v, c in dist.items():
                    acc += c
                    w.writerow([str(v), c, acc])
        if args.figure:
            from .plots import plot_sum_distribution

            plot_sum_distribution(dist, float(delta), args.figure, "outcome tuples by summed value")
    return EXIT_OK


def cmd_zoo(args) -> int:
    chain = zoo_chain(args.spec)
    if not hasattr(chain, "transition"):
        chain = chain.to_labeled_chain()
    _emit(dumps_chain(chain), args.out)
    return EXIT_OK


def cmd_schema(args) -> int:
    if not args.check:
        sys.stdout.write(_dump(SCHEMAS[args.kind]))
        return EXIT_OK
    try:
        doc = json.loads(Path(args.check).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {args.check}: {exc}") from None
    problems = validate_document(doc, args.kind)
    _emit(_dump({"document": args.check, "kind": args.kind, "valid": not problems, "problems": problems}), None)
    return EXIT_OK if not problems else EXIT_CHECK


COMMANDS = {"validate": cmd_validate, "test": cmd_test, "oracle": cmd_oracle, "count-event": cmd_count_event,
            "zoo": cmd_zoo, "schema": cmd_schema}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
