"""Stochastic damped L-BFGS with SPIDER variance reduction and momentum."""

from .data import (
    Dataset,
    binarize_one_vs_rest,
    generate_synthetic,
    load_libsvm,
    make_rng,
    max_abs_scale,
    parse_libsvm,
    write_libsvm,
)
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    NumericalError,
    OracleError,
    ParseError,
    SpiderSQNError,
)
from .momentum import MomentumSchedule, ThreeSequenceState, alpha, alpha_exact, dual_update, interpolate
from .numeric import OracleCounter, SparseExample, axpy, dot, sparse_dot
from .objectives import (
    NonconvexLogisticObjective,
    Objective,
    QuadraticObjective,
    RobustRegressionObjective,
    StreamingOracle,
    SvmSigmoidObjective,
    grad_check,
    make_objective,
    quadratic_stream,
    synthetic_stream,
)
from .sdlbfgs import (
    CurvaturePair,
    LbfgsMemory,
    dense_hessian_oracle,
    theoretical_eig_bounds,
    two_loop_direction,
    update_memory,
)
from .solvers import (
    ALGORITHMS,
    RunMonitor,
    RunTrace,
    SolverConfig,
    online_batch_sizes,
    select_output,
    solve,
    solve_baseline,
    solve_online,
    solve_spider_sqn,
    solve_spider_sqn_m,
    theoretical_stepsize,
)
from .spider import SpiderState, advance, refresh

__version__ = "0.1.0"
