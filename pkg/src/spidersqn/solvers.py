"""SpiderSQN and its momentum/online variants, plus first-order and SVRG baselines.

All solvers share one contract: ``solve_*(cfg, source) -> RunTrace`` where
``source`` is a finite-sum :class:`~spidersqn.objectives.Objective` or, in
online mode, a :class:`~spidersqn.objectives.StreamingOracle`. Three RNG
streams are derived from ``cfg.seed``: 0 for minibatch sampling, 1 for the
uniform-iterate reservoir and 2 for a random starting point.
"""

import math
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import spider
from .data import make_rng
from .errors import ConfigError, DivergenceError
from .momentum import (
    LAMBDA_RULES,
    MomentumSchedule,
    ThreeSequenceState,
    alpha,
    dual_update,
    interpolate,
    lambda_step,
)
from .numeric import OracleCounter
from .objectives import StreamingOracle
from .sdlbfgs import LbfgsMemory, theoretical_eig_bounds, two_loop_direction, update_memory

ALGORITHMS = (
    "spider_sqn",
    "spider_sqn_m",
    "spider_sqn_mer",
    "spider_sqn_med",
    "sgd",
    "spider_boost",
    "spider_med",
    "sdlbfgs_vr",
)
MOMENTUM_OF = {
    "spider_sqn_m": "vanilla",
    "spider_sqn_mer": "epoch_restart",
    "spider_sqn_med": "epoch_diminishing",
    "spider_med": "epoch_diminishing",
}
FIRST_ORDER = ("sgd", "spider_boost", "spider_med")

DIVERGENCE_LIMIT = 1e12


@dataclass
class SolverConfig:
    algorithm: str = "spider_sqn"
    mode: str = "finite_sum"
    q: int = 1
    batch: int = 1
    refresh_batch: int = 0
    step: str = "practical"
    eta: float = 1e-3
    beta: Optional[float] = None
    L: Optional[float] = None
    sigma_min: Optional[float] = None
    sigma_max: Optional[float] = None
    kappa: Optional[float] = None
    m: int = 5
    delta: float = 1.0
    K: int = 100
    seed: int = 0
    lambda_rule: str = "max"
    momentum: Optional[str] = None  # overrides the algorithm's schedule
    output_rule: str = "last"
    checkpoint_every: int = 10
    init: str = "zero"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.mode not in ("finite_sum", "online"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        for name in ("q", "batch", "K"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.m < 0:
            raise ConfigError("m must be >= 0")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.mode == "online" and self.refresh_batch < 1:
            raise ConfigError("online mode needs refresh_batch >= 1")
        if self.lambda_rule not in LAMBDA_RULES:
            raise ConfigError(f"unknown lambda rule {self.lambda_rule!r}")
        if self.output_rule not in ("last", "uniform"):
            raise ConfigError(f"unknown output rule {self.output_rule!r}")
        if self.init not in ("zero", "normal"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.step == "practical":
            if not self.eta > 0 or (self.beta is not None and not self.beta > 0):
                raise ConfigError("step sizes must be positive")
        elif self.step == "theoretical":
            if self.L is None or not self.L > 0:
                raise ConfigError("theoretical step needs L > 0")
            have_sigma = self.sigma_min is not None and self.sigma_max is not None
            if not have_sigma and self.kappa is None and self.algorithm not in FIRST_ORDER:
                raise ConfigError("theoretical step needs sigma_min/sigma_max or kappa")
            if have_sigma and not 0 < self.sigma_min <= self.sigma_max:
                raise ConfigError("need 0 < sigma_min <= sigma_max")
        else:
            raise ConfigError(f"unknown step mode {self.step!r}")

    @property
    def uses_quasi_newton(self):
        return self.algorithm not in FIRST_ORDER

    def spectral_bounds(self):
        """``(sigma_min, sigma_max)`` used by the theoretical step rules."""
        if not self.uses_quasi_newton:
            return 1.0, 1.0
        if self.sigma_min is not None and self.sigma_max is not None:
            return self.sigma_min, self.sigma_max
        return theoretical_eig_bounds(self.delta, self.kappa, max(self.m, 1))

    def step_sizes(self):
        """``(eta, beta)``: plain step and momentum step."""
        if self.step == "practical":
            return self.eta, self.eta if self.beta is None else self.beta
        smin, smax = self.spectral_bounds()
        return (
            theoretical_stepsize("eta", self.L, smin, smax),
            theoretical_stepsize("beta", self.L, smin, smax),
        )


def theoretical_stepsize(variant, L, sigma_min, sigma_max):
    """Step size from the convergence theory.

    ``"eta"``: ``(1 + sqrt 5) sigma_min / (2 L sigma_max^2)`` (no momentum).
    ``"beta"``: ``sigma_min / ((3 + sqrt 15) L sigma_max^2)`` (momentum).
    """
    if not (L > 0 and sigma_min > 0 and sigma_max > 0):
        raise ConfigError("L, sigma_min and sigma_max must be positive")
    if sigma_min > sigma_max:
        raise ConfigError("sigma_min must not exceed sigma_max")
    if variant == "eta":
        return (1.0 + math.sqrt(5.0)) * sigma_min / (2.0 * L * sigma_max**2)
    if variant == "beta":
        return sigma_min / ((3.0 + math.sqrt(15.0)) * L * sigma_max**2)
    raise ConfigError(f"unknown step variant {variant!r}")


def online_batch_sizes(eps, sigma1, L, sigma_min, sigma_max, momentum=False):
    """``(q, batch, refresh_batch)`` with ``q = batch = sqrt(refresh_batch)``.

    The refresh batch follows the online parameter rule for the requested
    accuracy ``eps``. ``q`` is rounded up and ``refresh_batch = q^2`` so the
    square-root relation holds exactly. Raises :class:`ConfigError` when the
    descent constant of the rule is not positive for the given constants
    (always the case without momentum, and with momentum when
    ``sigma_min == sigma_max``) or the batch would exceed ``1e12``.
    """
    if not (eps > 0 and sigma1 > 0):
        raise ConfigError("eps and sigma1 must be positive")
    if momentum:
        b = theoretical_stepsize("beta", L, sigma_min, sigma_max)
        b_star = b * (sigma_min / 2 - 3 * L * b * sigma_max**2 - 3 * L**2 * b**2 * sigma_max**3)
        # vanishes analytically when sigma_min == sigma_max
        size = 4.0 * (1.0 + b / b_star) * sigma1**2 / eps**2 if b_star > 1e-12 * b * sigma_min else None
    else:
        e = theoretical_stepsize("eta", L, sigma_min, sigma_max)
        b_star = e * sigma_min / 2 - L * e**2 * sigma_max**2 / 2 - e**3 * sigma_max**3 * L**2 / 2
        if b_star > 0:
            size = (e * sigma_max / b_star + 2 + L**2 * e**3 * sigma_max**3 / b_star) * 2 * sigma1**2 / eps**2
        else:
            size = None
    if size is None or size > 1e12:
        raise ConfigError(f"descent constant {b_star:.3g} is not positive for these L/sigma values")
    q = max(1, math.ceil(math.sqrt(size)))
    return q, q, q * q


class Checkpoint(NamedTuple):
    k: int
    paper_sfo: int
    grad_evals: int
    f: float
    grad_norm: float
    wall_ms: float


@dataclass
class RunTrace:
    algorithm: str
    seed: int
    K: int
    checkpoints: list = field(default_factory=list)
    final_x: np.ndarray = None
    final_z: np.ndarray = None
    sampled_x: np.ndarray = None
    sampled_index: int = 0
    final_f: float = float("nan")
    final_grad_norm: float = float("nan")
    counter: OracleCounter = field(default_factory=OracleCounter)

    @property
    def output_x(self):
        return self.final_x


def select_output(trace, rule="last"):
    """``x_K`` for ``"last"``; the reservoir-sampled ``x_zeta``, zeta ~ Unif{1..K}, for ``"uniform"``."""
    if rule == "last":
        return trace.final_x
    if rule == "uniform":
        return trace.sampled_x
    raise ConfigError(f"unknown output rule {rule!r}")


class RunMonitor:
    """Hooks called during a run; subclass and override what you need."""

    def on_estimate(self, k, point, v, refreshed):
        pass

    def on_pair(self, k, mem, pair):
        pass

    def on_direction(self, k, mem, v, d):
        pass


class _Recorder:
    """Checkpoints, divergence guard and the uniform-iterate reservoir."""

    def __init__(self, cfg, evaluator, counter):
        self.cfg = cfg
        self.evaluator = evaluator
        self.counter = counter
        self.trace = RunTrace(cfg.algorithm, cfg.seed, cfg.K, counter=counter)
        self._rng = make_rng(cfg.seed, stream=1)
        self._t0 = time.perf_counter()

    def _measure(self, k, x):
        f = self.evaluator.value(x)
        if not math.isfinite(f) or f > DIVERGENCE_LIMIT:
            raise DivergenceError(k, f"objective value {f!r}")
        g = self.evaluator.full_grad(x)
        return f, float(np.linalg.norm(g))

    def checkpoint(self, k, x):
        if k % self.cfg.checkpoint_every:
            return
        f, gn = self._measure(k, x)
        c = self.counter
        wall = (time.perf_counter() - self._t0) * 1e3
        self.trace.checkpoints.append(Checkpoint(k, c.paper_sfo, c.component_grad_evals, f, gn, wall))

    def stepped(self, k, x, v):
        """Called with ``x_{k+1}`` after iteration ``k``."""
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise DivergenceError(k, "non-finite iterate or gradient estimate")
        j = k + 1
        if self._rng.integers(0, j) == 0:
            self.trace.sampled_x = x
            self.trace.sampled_index = j

    def finish(self, x, z=None):
        K = self.cfg.K
        self.checkpoint(K, x)
        t = self.trace
        t.final_x = x
        t.final_z = z
        t.final_f, t.final_grad_norm = self._measure(K, x)
        return t


def _evaluator(source):
    return source.population if isinstance(source, StreamingOracle) else source


def _check_mode(cfg, source):
    online = isinstance(source, StreamingOracle)
    if online != (cfg.mode == "online"):
        raise ConfigError(f"mode {cfg.mode!r} does not match a {type(source).__name__} source")


def _initial_point(cfg, d, x0):
    if x0 is not None:
        x = np.array(x0, dtype=np.float64)
        if x.shape != (d,):
            raise ConfigError(f"x0 must have shape ({d},)")
        return x
    if cfg.init == "normal":
        return make_rng(cfg.seed, stream=2).standard_normal(d)
    return np.zeros(d)


def _setup(cfg, source, x0):
    _check_mode(cfg, source)
    counter = OracleCounter()
    rec = _Recorder(cfg, _evaluator(source), counter)
    x = _initial_point(cfg, source.d, x0)
    rng = make_rng(cfg.seed, stream=0)
    return counter, rec, x, rng


def _memory(cfg):
    return LbfgsMemory(m=cfg.m if cfg.uses_quasi_newton else 0, delta=cfg.delta)


def solve_spider_sqn(cfg, source, monitor=None, x0=None):
    """SPIDER estimator + damped L-BFGS direction with a fixed step.

    At iteration ``k`` the pair ``(x_k - x_{k-1}, v_k - v_{k-1})`` enters
    the memory before ``d_k = H_k v_k`` is formed, so step 0 is a plain
    estimator step. Also runs SpiderBoost when ``cfg.algorithm`` is
    ``spider_boost`` (no curvature memory, ``d_k = v_k``).
    """
    counter, rec, x, rng = _setup(cfg, source, x0)
    eta, _ = cfg.step_sizes()
    mem = _memory(cfg)
    quasi_newton = cfg.uses_quasi_newton
    state = spider.SpiderState(cfg.q, cfg.batch, cfg.refresh_batch)
    x_prev = v_prev = None
    for k in range(cfg.K):
        rec.checkpoint(k, x)
        refreshed = state.at_boundary
        spider.step(state, source, x, rng, counter)
        v = state.v
        if monitor:
            monitor.on_estimate(k, x, v, refreshed)
        if quasi_newton:
            if k > 0:
                pair = update_memory(mem, x - x_prev, v - v_prev, float(np.linalg.norm(x)))
                if monitor and pair is not None:
                    monitor.on_pair(k, mem, pair)
            d = two_loop_direction(mem, v)
        else:
            d = v
        if monitor:
            monitor.on_direction(k, mem, v, d)
        x_prev, v_prev = x, v
        x = x - eta * d
        rec.stepped(k, x, v)
    return rec.finish(x)


def solve_spider_sqn_m(cfg, source, monitor=None, x0=None):
    """Momentum variant: estimator and curvature pairs live on the z-sequence.

    The schedule comes from ``cfg.momentum`` if set, otherwise from the
    algorithm (``spider_sqn_m`` vanilla, ``spider_sqn_mer`` epoch-restart,
    ``spider_sqn_med`` and ``spider_med`` epoch-diminishing). ``spider_med``
    uses ``d_k = v_k``.
    """
    counter, rec, x, rng = _setup(cfg, source, x0)
    _, beta = cfg.step_sizes()
    kind = cfg.momentum or MOMENTUM_OF.get(cfg.algorithm)
    if kind is None:
        raise ConfigError(f"{cfg.algorithm} has no momentum schedule; set cfg.momentum")
    schedule = MomentumSchedule(kind, cfg.q)
    mem = _memory(cfg)
    quasi_newton = cfg.uses_quasi_newton
    state = spider.SpiderState(cfg.q, cfg.batch, cfg.refresh_batch)
    seq = ThreeSequenceState.start(x, beta)
    z_prev = v_prev = None
    for k in range(cfg.K):
        rec.checkpoint(k, seq.x)
        if kind == "none":
            seq.z = seq.x
        else:
            seq.z = interpolate(seq, alpha(schedule, k + 1))
        refreshed = state.at_boundary
        spider.step(state, source, seq.z, rng, counter)
        v = state.v
        if monitor:
            monitor.on_estimate(k, seq.z, v, refreshed)
        if quasi_newton:
            if k > 0:
                pair = update_memory(mem, seq.z - z_prev, v - v_prev, float(np.linalg.norm(seq.z)))
                if monitor and pair is not None:
                    monitor.on_pair(k, mem, pair)
            d = two_loop_direction(mem, v)
        else:
            d = v
        if monitor:
            monitor.on_direction(k, mem, v, d)
        seq.lam = beta if kind == "none" else lambda_step(beta, alpha(schedule, k), cfg.lambda_rule)
        z_prev, v_prev = seq.z, v
        dual_update(seq, d)
        rec.stepped(k, seq.x, v)
    z_final = seq.x if kind == "none" else interpolate(seq, alpha(schedule, cfg.K + 1))
    return rec.finish(seq.x, z_final)


def solve_sgd(cfg, source, monitor=None, x0=None):
    counter, rec, x, rng = _setup(cfg, source, x0)
    eta, _ = cfg.step_sizes()
    for k in range(cfg.K):
        rec.checkpoint(k, x)
        if isinstance(source, StreamingOracle):
            chunk = source.draw(cfg.batch)
            g = chunk.batch_grad(np.arange(cfg.batch), x, counter)
        else:
            g = source.batch_grad(rng.integers(0, source.n, size=cfg.batch), x, counter)
        if monitor:
            monitor.on_estimate(k, x, g, False)
        x = x - eta * g
        rec.stepped(k, x, g)
    return rec.finish(x)


def solve_sdlbfgs_vr(cfg, source, monitor=None, x0=None):
    """SVRG estimator (fixed epoch anchor) driving the damped L-BFGS engine.

    The estimator is ``v = g_B(x_k) - g_B(x_anchor) + mu``. Curvature pairs
    use the same minibatch at consecutive iterates,
    ``y = g_B(x_k) - g_B(x_{k-1})``, since differences of SVRG estimates
    carry batch noise uncorrelated with ``s``. Each correction step charges
    ``batch`` to the ``paper_sfo`` count and ``3 * batch`` to the raw count;
    no pair is formed at anchor refreshes.
    """
    counter, rec, x, rng = _setup(cfg, source, x0)
    eta, _ = cfg.step_sizes()
    mem = _memory(cfg)
    anchor = spider.SpiderState(cfg.q, cfg.batch, cfg.refresh_batch)
    x_prev = None
    for k in range(cfg.K):
        rec.checkpoint(k, x)
        refreshed = k % cfg.q == 0
        y_bar = None
        if refreshed:
            anchor.k = 0
            spider.refresh(anchor, source, x, counter)
            mu, x_tilde = anchor.v, anchor.prev_point
            v = mu
        else:
            g_new, g_anchor, g_prev = spider.batch_grads_at(
                source, rng, cfg.batch, (x, x_tilde, x_prev), counter
            )
            v = g_new - g_anchor + mu
            y_bar = g_new - g_prev
        if monitor:
            monitor.on_estimate(k, x, v, refreshed)
        if y_bar is not None:
            pair = update_memory(mem, x - x_prev, y_bar, float(np.linalg.norm(x)))
            if monitor and pair is not None:
                monitor.on_pair(k, mem, pair)
        d = two_loop_direction(mem, v)
        if monitor:
            monitor.on_direction(k, mem, v, d)
        x_prev = x
        x = x - eta * d
        rec.stepped(k, x, v)
    return rec.finish(x)


_DISPATCH = {
    "spider_sqn": solve_spider_sqn,
    "spider_boost": solve_spider_sqn,
    "spider_sqn_m": solve_spider_sqn_m,
    "spider_sqn_mer": solve_spider_sqn_m,
    "spider_sqn_med": solve_spider_sqn_m,
    "spider_med": solve_spider_sqn_m,
    "sgd": solve_sgd,
    "sdlbfgs_vr": solve_sdlbfgs_vr,
}


def solve_baseline(cfg, source, monitor=None, x0=None):
    if cfg.algorithm not in ("sgd", "spider_boost", "spider_med", "sdlbfgs_vr"):
        raise ConfigError(f"{cfg.algorithm} is not a baseline")
    return _DISPATCH[cfg.algorithm](cfg, source, monitor, x0)


def solve_online(cfg, stream, monitor=None, x0=None):
    if not isinstance(stream, StreamingOracle):
        raise ConfigError("solve_online needs a StreamingOracle")
    if cfg.mode != "online":
        cfg = replace(cfg, mode="online")
    return _DISPATCH[cfg.algorithm](cfg, stream, monitor, x0)


def solve(cfg, source, monitor=None, x0=None):
    """Run ``cfg.algorithm`` on ``source``."""
    return _DISPATCH[cfg.algorithm](cfg, source, monitor, x0)


def expected_sfo(K, q, batch, refresh):
    """Closed-form ``(paper_sfo, component_grad_evals)`` for a SPIDER-type run.

    ``refresh`` is ``n`` (finite-sum) or ``|xi_0|`` (online).
    """
    refreshes = -(-K // q)
    steps = K - refreshes
    return refreshes * refresh + steps * batch, refreshes * refresh + steps * 2 * batch
