"""Local-outlier significance tests for reversible Markov chains.

Library layout:

* :mod:`.chain` - explicit labeled chains, validation, chain documents
* :mod:`.sampling` - reproducible samplers with per-trajectory substreams
* :mod:`.significance` - outlier statistics, p-value bounds, test drivers
* :mod:`.oracle` - exact probabilities on small chains
* :mod:`.audit` - sweeps of every bound over a chain
* :mod:`.product` - product-space tests and exact event counting
* :mod:`.zoo`, :mod:`.districting` - built-in chain families
* :mod:`.montecarlo` - vectorized frequency estimates
"""

from .chain import (
    LabeledChain,
    build_from_edge_list,
    from_dense,
    load_chain,
    stationary_distribution,
    validate_chain,
)
from .errors import BudgetExceeded, ConfigError, ShapeMismatch, ValueExplosion
from .oracle import ExactProbability, TreeShape, certify_eps_alpha, exact_p_conditional, exact_rho, exact_tree_rho
from .product import EventCount, ProductChain, RegionHistogram, count_event, epsilon_from_event
from .sampling import RngSeed
from .significance import (
    SignificanceReport,
    binomial_tail,
    chernoff_tail,
    observe_outlier,
    run_outlier_test,
    select_epsilon_t,
)
from .zoo import make_iid, make_knn, random_reversible_chain

__version__ = "0.1.0"
