"""Self-contained invariant checks for the quasi-Newton engine and the estimator.

Every check builds its own small instance from a fixed seed and reports a
measured margin. Fault injections flip one safeguard off so the gate can be
shown to fail:

* ``damping-off``: pairs are stored without theta-damping
* ``gamma-floor-off``: the ``gamma >= delta`` floor is dropped
* ``spider-batch``: the estimator uses independent batches at the two points
"""

from dataclasses import dataclass

import numpy as np

from . import spider
from .data import generate_synthetic, make_rng
from .errors import SpiderSQNError
from .objectives import QuadraticObjective, make_objective
from .sdlbfgs import (
    LbfgsMemory,
    dense_hessian_oracle,
    theoretical_eig_bounds,
    two_loop_direction,
    update_memory,
)
from .solvers import RunMonitor, SolverConfig, expected_sfo, solve

INJECTIONS = ("damping-off", "gamma-floor-off", "spider-batch")


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.margin}"


@dataclass(frozen=True)
class Faults:
    damping: bool = True
    gamma_floor: bool = True
    same_batch: bool = True

    @classmethod
    def from_injection(cls, name):
        if name is None:
            return cls()
        if name == "damping-off":
            return cls(damping=False)
        if name == "gamma-floor-off":
            return cls(gamma_floor=False)
        if name == "spider-batch":
            return cls(same_batch=False)
        raise ValueError(f"unknown injection {name!r}; choose from {INJECTIONS}")

    def memory(self, m, delta=1.0):
        return LbfgsMemory(m=m, delta=delta, damping=self.damping, gamma_floor=self.gamma_floor)


def _guarded(name, fn):
    try:
        return fn()
    except (SpiderSQNError, ZeroDivisionError, FloatingPointError) as exc:
        return CheckResult(name, False, f"raised {type(exc).__name__}: {exc}")


def _random_history(rng, faults, d, m, count):
    mem = faults.memory(m, delta=rng.uniform(0.1, 2.0))
    for _ in range(count):
        s = rng.standard_normal(d)
        y = rng.standard_normal(d) * rng.uniform(0.1, 3.0)
        update_memory(mem, s, y)
    return mem


def check_two_loop_dense(faults, seed=0, histories=1000):
    """Two-loop product against the dense recursion on random histories."""
    rng = make_rng(seed, stream=11)
    worst = 0.0
    for _ in range(histories):
        d = int(rng.integers(1, 6))
        m = int(rng.integers(1, 4))
        mem = _random_history(rng, faults, d, m, int(rng.integers(0, 6)))
        v = rng.standard_normal(d)
        dense = dense_hessian_oracle(mem, d) @ v
        err = np.linalg.norm(two_loop_direction(mem, v) - dense) / max(np.linalg.norm(dense), 1e-300)
        worst = max(worst, err)
    return CheckResult("two-loop-vs-dense", worst <= 1e-10, f"max_rel_err={worst:.3e} (limit 1e-10)")


def _adversarial_pairs(rng, count=500, d=6):
    """Pairs with negative, tiny and weak positive curvature."""
    out = [(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))]
    for j in range(count):
        s = rng.standard_normal(d)
        kind = j % 3
        if kind == 0:
            y = -rng.uniform(0.1, 5.0) * s + 0.1 * rng.standard_normal(d)
        elif kind == 1:
            y = rng.standard_normal(d)
            y -= (s @ y) / (s @ s) * s
        else:
            y = rng.uniform(0.01, 0.2) * s
        out.append((s, y))
    return out


def check_damping_floor(faults, seed=0):
    """Every stored pair satisfies s^T y_hat >= 0.25 gamma s^T s."""
    rng = make_rng(seed, stream=12)
    worst = np.inf
    for s, y in _adversarial_pairs(rng):
        mem = faults.memory(3)
        pair = update_memory(mem, s, y)
        if pair is not None:
            worst = min(worst, pair.floor_ratio)
    ok = worst >= 1.0 - 1e-12
    return CheckResult("damping-floor", ok, f"min s'y_hat/(0.25*gamma*s's)={worst:.6g} (limit 1)")


def check_gamma_floor(faults, seed=0):
    """gamma never drops below delta, including after weak-curvature pairs."""
    rng = make_rng(seed, stream=13)
    worst = np.inf
    for s, y in _adversarial_pairs(rng):
        mem = faults.memory(3, delta=1.0)
        if update_memory(mem, s, y) is not None:
            worst = min(worst, mem.gamma / mem.delta)
    ok = worst >= 1.0
    return CheckResult("gamma-floor", ok, f"min gamma/delta={worst:.6g} (limit 1)")


class _SpectrumProbe(RunMonitor):
    def __init__(self, seed, probes):
        self.rng = make_rng(seed, stream=14)
        self.probes = probes
        self.low = np.inf
        self.high = -np.inf
        self.descent = np.inf

    def on_direction(self, k, mem, v, d):
        Z = self.rng.standard_normal((v.shape[0], self.probes))
        HZ = two_loop_direction(mem, Z)
        rq = np.einsum("ij,ij->j", Z, HZ) / np.einsum("ij,ij->j", Z, Z)
        self.low = min(self.low, float(rq.min()))
        self.high = max(self.high, float(rq.max()))
        nv = float(np.linalg.norm(v))
        if nv > 0:
            self.descent = min(self.descent, float(d @ v) / (nv * nv))


def spectral_run(n=400, d=20, K=400, m=5, delta=1.0, probes=20, seed=0, density=0.2, batch=32, eta=1e-2):
    """Probe ``H_k`` along a SpiderSQN run on a small SVM instance.

    Returns ``(probe, lower, upper, kappa)``.
    """
    obj = make_objective("svm", generate_synthetic(n, d, density, seed=seed), r=1e-3)
    kappa = obj.curvature_bound()
    lower, upper = theoretical_eig_bounds(delta, kappa, m)
    probe = _SpectrumProbe(seed, probes)
    cfg = SolverConfig(
        q=max(1, 2 * n // batch), batch=batch, eta=eta, m=m, delta=delta, K=K, seed=seed, checkpoint_every=K
    )
    solve(cfg, obj, probe)
    return probe, lower, upper, kappa


def check_spectrum(faults, seed=0):
    probe, lower, upper, _ = spectral_run(seed=seed)
    ok = probe.low > 0 and probe.descent > 0 and lower - 1e-8 <= probe.low and probe.high <= upper + 1e-8
    return CheckResult(
        "positive-definite+spectral-sandwich",
        ok,
        f"rayleigh in [{probe.low:.4g}, {probe.high:.4g}] within [{lower:.4g}, {upper:.4g}]; "
        f"min d'v/|v|^2={probe.descent:.4g}",
    )


def quadratic_family(seed=0, n=10, d=2, spread=10.0):
    """Ten random symmetric components with widely spread linear terms."""
    rng = make_rng(seed, stream=15)
    B = rng.standard_normal((n, d, d))
    H = 0.5 * (B + np.swapaxes(B, 1, 2))
    c = spread * rng.standard_normal((n, d))
    return QuadraticObjective(H, c)


def spider_variance(obj, batch=2, steps=5, resamples=10000, step_len=0.05, seed=0, same_batch=True):
    """Monte Carlo of the estimator error along a fixed path.

    Returns ``(empirical, bound)`` arrays of length ``steps``. The bound at
    step ``k`` is ``L^2/batch * |x_k - x_{k-1}|^2 + empirical[k-1]`` (zero
    error at the refresh).
    """
    rng = make_rng(seed, stream=16)
    direction = rng.standard_normal(obj.d)
    path = [np.ones(obj.d) + j * step_len * direction / np.linalg.norm(direction) for j in range(steps + 1)]
    true = [obj.full_grad(p) for p in path]
    err = np.zeros(steps)
    for _ in range(resamples):
        state = spider.SpiderState(q=steps + 1, batch=batch)
        spider.refresh(state, obj, path[0])
        for j in range(1, steps + 1):
            spider.advance(state, obj, path[j], rng, same_batch=same_batch)
            diff = state.v - true[j]
            err[j - 1] += diff @ diff
    err /= resamples
    L2 = obj.lipschitz**2
    prev = np.concatenate([[0.0], err[:-1]])
    moves = np.array([np.sum((path[j] - path[j - 1]) ** 2) for j in range(1, steps + 1)])
    return err, L2 / batch * moves + prev


def check_spider_variance(faults, seed=0, resamples=2000):
    emp, bound = spider_variance(quadratic_family(seed), resamples=resamples, seed=seed, same_batch=faults.same_batch)
    ratio = float(np.max(emp / bound))
    return CheckResult("spider-variance", ratio <= 1.05, f"max empirical/bound={ratio:.4f} (limit 1.05)")


def check_sfo(faults, seed=0):
    """Counter totals of short runs match the closed form."""
    rng = make_rng(seed, stream=17)
    H = np.broadcast_to(np.eye(3), (50, 3, 3))
    obj = QuadraticObjective(H, rng.standard_normal((50, 3)))
    bad = []
    for q, b, K in ((5, 4, 23), (1, 3, 7), (10, 10, 10)):
        cfg = SolverConfig(q=q, batch=b, K=K, seed=seed, eta=0.1, checkpoint_every=K)
        c = solve(cfg, obj).counter
        if (c.paper_sfo, c.component_grad_evals) != expected_sfo(K, q, b, obj.n):
            bad.append((q, b, K))
    return CheckResult("sfo-accounting", not bad, f"mismatching (q, batch, K): {bad or 'none'}")


CHECKS = (
    ("two-loop-vs-dense", check_two_loop_dense),
    ("damping-floor", check_damping_floor),
    ("gamma-floor", check_gamma_floor),
    ("positive-definite+spectral-sandwich", check_spectrum),
    ("spider-variance", check_spider_variance),
    ("sfo-accounting", check_sfo),
)


def run_audit(inject=None, seed=0):
    """Run every check; returns a list of :class:`CheckResult`."""
    faults = Faults.from_injection(inject)
    return [_guarded(name, lambda fn=fn: fn(faults, seed)) for name, fn in CHECKS]
