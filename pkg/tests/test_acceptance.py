"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are repeated in the
terminal summary.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from spidersqn.audit import quadratic_family, spectral_run, spider_variance
from spidersqn.cli import main as cli_main
from spidersqn.data import generate_synthetic, make_rng
from spidersqn.momentum import MomentumSchedule, alpha_exact
from spidersqn.objectives import QuadraticObjective, grad_check, make_objective
from spidersqn.sdlbfgs import LbfgsMemory, dense_hessian_oracle, two_loop_direction, update_memory
from spidersqn.solvers import RunMonitor, SolverConfig, solve

pytestmark = pytest.mark.acceptance

PROBLEMS = ("svm", "robust", "logistic")


def desk_objective(problem, seed=0):
    return make_objective(problem, generate_synthetic(2000, 100, 0.05, seed=seed), r=1e-3)


def test_01_two_loop_matches_dense(acceptance_report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 6))
        m = int(rng.integers(1, 4))
        mem = LbfgsMemory(m=m, delta=float(rng.uniform(0.1, 2.0)))
        for _ in range(int(rng.integers(1, 2 * m + 2))):
            update_memory(mem, rng.standard_normal(d), rng.standard_normal(d) * rng.uniform(0.1, 3.0))
        v = rng.standard_normal(d)
        dense = dense_hessian_oracle(mem, d) @ v
        err = np.linalg.norm(two_loop_direction(mem, v) - dense) / np.linalg.norm(dense)
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 5.0
    acceptance_report(1, "two-loop vs dense", ok, f"max rel err {worst:.2e} (<=1e-10), {elapsed:.2f}s (<5s)")
    assert ok


class FloorMonitor(RunMonitor):
    """Damping floor on every stored pair; refresh exactness at epoch starts."""

    def __init__(self, obj):
        self.obj = obj
        self.pairs = 0
        self.violations = 0
        self.worst = math.inf
        self.refreshes = 0
        self.inexact = 0

    def on_estimate(self, k, point, v, refreshed):
        if refreshed:
            self.refreshes += 1
            self.inexact += not np.array_equal(v, self.obj.full_grad(point))

    def on_pair(self, k, mem, pair):
        self.pairs += 1
        sy = float(pair.s @ pair.y_hat)
        need = 0.25 * pair.gamma * float(pair.s @ pair.s)
        if sy < need * (1 - 1e-12):
            self.violations += 1
        self.worst = min(self.worst, sy / need)


def test_02_damping_floor_in_full_runs(acceptance_report):
    parts, total_violations = [], 0
    for problem in PROBLEMS:
        obj = desk_objective(problem)
        mon = FloorMonitor(obj)
        cfg = SolverConfig(q=63, batch=64, K=2000, eta=1e-3, m=5, checkpoint_every=2000)
        solve(cfg, obj, mon)
        total_violations += mon.violations + mon.inexact
        parts.append(f"{problem}: {mon.pairs} pairs, min ratio {mon.worst:.4g}, {mon.inexact}/{mon.refreshes} inexact refreshes")
    ok = total_violations == 0
    acceptance_report(2, "damping floor", ok, f"{total_violations} violations; " + "; ".join(parts))
    assert ok


def verified_curvature(obj, points=5, seed=0):
    """Analytic bound, cross-checked against central-difference Hessians."""
    kappa = obj.curvature_bound()
    rng = make_rng(seed, stream=40)
    h = 1e-5
    for _ in range(points):
        x = rng.uniform(-1, 1, obj.d)
        i = int(rng.integers(obj.n))
        cols = [(obj.component_grad(i, x + h * e) - obj.component_grad(i, x - h * e)) / (2 * h) for e in np.eye(obj.d)]
        hess = np.array(cols)
        if np.linalg.norm(0.5 * (hess + hess.T), 2) > kappa * (1 + 1e-6):
            return None
    return kappa


def test_03_spectral_sandwich(acceptance_report):
    kappa = verified_curvature(desk_objective("svm"))
    assert kappa is not None, "curvature bound failed verification"
    probe, lower, upper, used = spectral_run(
        n=2000, d=100, K=2000, m=5, delta=1.0, probes=100, density=0.05, batch=64, eta=1e-3
    )
    ok = used == kappa and probe.low >= lower - 1e-8 and probe.high <= upper + 1e-8
    acceptance_report(
        3,
        "spectral sandwich",
        ok,
        f"kappa {kappa:.4g}; Rayleigh quotients in [{probe.low:.4g}, {probe.high:.4g}] "
        f"within [{lower:.4g}, {upper:.4g}]",
    )
    assert ok


def test_04_spider_variance_bound(acceptance_report):
    t0 = time.perf_counter()
    emp, bound = spider_variance(quadratic_family(0), resamples=10000)
    elapsed = time.perf_counter() - t0
    ratio = float(np.max(emp / bound))
    ok = bool(np.all(emp <= 1.05 * bound)) and elapsed < 30.0
    acceptance_report(4, "SPIDER variance bound", ok, f"max empirical/bound {ratio:.4f} (<=1.05), {elapsed:.2f}s (<30s)")
    assert ok


def test_05_sfo_accounting(acceptance_report):
    bad = []
    for n, q, b, K in ((1024, 32, 32, 320), (100, 10, 10, 100), (2000, 125, 64, 1000)):
        obj = QuadraticObjective(np.broadcast_to(np.eye(2), (n, 2, 2)), np.ones((n, 2)))
        cfg = SolverConfig(q=q, batch=b, K=K, eta=0.1, checkpoint_every=K)
        c = solve(cfg, obj).counter
        epochs = -(-K // q)
        want = (epochs * n + (K - epochs) * b, epochs * n + (K - epochs) * 2 * b)
        got = (c.paper_sfo, c.component_grad_evals)
        if got != want:
            bad.append(((n, q, b, K), got, want))
    ok = not bad
    acceptance_report(5, "SFO accounting", ok, "all three tuples exact" if ok else f"mismatches {bad}")
    assert ok


def test_06_gradient_correctness(acceptance_report):
    data = generate_synthetic(200, 50, 0.2, seed=6)
    rng = make_rng(6, stream=41)
    worst = {}
    for problem in PROBLEMS:
        obj = make_objective(problem, data, r=1e-3)
        worst[problem] = max(grad_check(obj, rng.uniform(-1, 1, obj.d), h=1e-6) for _ in range(20))
    ok = max(worst.values()) <= 1e-6
    acceptance_report(6, "gradient check", ok, ", ".join(f"{p} {w:.2e}" for p, w in worst.items()) + " (<=1e-6)")
    assert ok


def _same(a, b):
    return (
        [c[:5] for c in a.checkpoints] == [c[:5] for c in b.checkpoints]
        and np.array_equal(a.final_x, b.final_x)
        and a.counter.snapshot() == b.counter.snapshot()
    )


def test_07_reduction_lattice(acceptance_report):
    mismatches = []
    for problem, seed in zip(PROBLEMS, (0, 1, 2)):
        obj = make_objective(problem, generate_synthetic(300, 30, 0.2, seed=seed), r=1e-3)
        common = dict(q=9, batch=16, K=90, eta=5e-3, seed=seed, checkpoint_every=3)
        sqn = solve(SolverConfig(**common), obj)
        m_none = solve(SolverConfig(algorithm="spider_sqn_m", momentum="none", beta=5e-3, lambda_rule="min", **common), obj)
        if not _same(sqn, m_none):
            mismatches.append(f"{problem}: momentum none")
        zero = solve(SolverConfig(m=0, **common), obj)
        boost = solve(SolverConfig(algorithm="spider_boost", **common), obj)
        if not _same(zero, boost):
            mismatches.append(f"{problem}: m=0")
    ok = not mismatches
    acceptance_report(7, "reduction lattice", ok, "bitwise equal on 3 instances" if ok else "; ".join(mismatches))
    assert ok


def test_08_desk_scale_ordering(acceptance_report):
    t0 = time.perf_counter()
    parts, ok = [], True
    for problem in PROBLEMS:
        obj = desk_objective(problem)
        q = round(2 * obj.n / 64)
        med = {}
        for algorithm in ("spider_sqn", "spider_boost", "spider_sqn_m", "spider_sqn_med"):
            finals = []
            for seed in range(5):
                cfg = SolverConfig(
                    algorithm=algorithm, q=q, batch=64, eta=1e-3, beta=1e-3, m=5, K=20 * q, seed=seed,
                    checkpoint_every=q,
                )
                finals.append(solve(cfg, obj).final_f)
            med[algorithm] = float(np.median(finals))
        a = med["spider_sqn"] < med["spider_boost"]
        b = med["spider_sqn_med"] <= med["spider_sqn_m"] + 1e-4 and med["spider_sqn_med"] <= med["spider_sqn"] + 1e-4
        ok = ok and a and b
        parts.append(f"{problem} [" + ", ".join(f"{k} {v:.6f}" for k, v in med.items()) + "]")
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 120.0
    acceptance_report(8, "desk-scale ordering", ok, "; ".join(parts) + f"; {elapsed:.1f}s (<120s)")
    assert ok


def test_09_momentum_schedules(acceptance_report):
    restart = [alpha_exact(MomentumSchedule("epoch_restart", q=4), k) for k in range(10)]
    dimin = [alpha_exact(MomentumSchedule("epoch_diminishing", q=4), k) for k in range(10)]
    want_restart = [Fraction(2, (k % 4) + 1) for k in range(10)]
    want_dimin = [Fraction(2, (k + 3) // 4 + 1) for k in range(10)]
    frozen = [2, 1, 1, 1, 1, Fraction(2, 3), Fraction(2, 3), Fraction(2, 3), Fraction(2, 3), Fraction(1, 2)]
    ok = restart == want_restart and dimin == want_dimin == frozen
    acceptance_report(9, "momentum schedules", ok, f"restart {[str(a) for a in restart]}, diminishing {[str(a) for a in dimin]}")
    assert ok


def test_10_audit_gate(acceptance_report, capsys):
    codes = {"clean": cli_main(["audit"])}
    for inject in ("damping-off", "gamma-floor-off", "spider-batch"):
        codes[inject] = cli_main(["audit", "--inject", inject])
    capsys.readouterr()
    ok = codes["clean"] == 0 and all(codes[k] == 1 for k in codes if k != "clean")
    acceptance_report(10, "audit gate", ok, ", ".join(f"{k} -> exit {v}" for k, v in codes.items()))
    assert ok
