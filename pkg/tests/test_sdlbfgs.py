import numpy as np
import pytest

from spidersqn.errors import ConfigError, NumericalError
from spidersqn.sdlbfgs import (
    LbfgsMemory,
    dense_hessian_oracle,
    theoretical_eig_bounds,
    two_loop_direction,
    update_memory,
)


def random_memory(rng, d, m, pairs, delta=1.0):
    mem = LbfgsMemory(m=m, delta=delta)
    for _ in range(pairs):
        update_memory(mem, rng.standard_normal(d), rng.standard_normal(d))
    return mem


def test_undamped_branch_keeps_y():
    mem = LbfgsMemory(m=3, delta=0.1)
    s = np.array([1.0, 2.0])
    y = np.array([2.0, 3.0])
    pair = update_memory(mem, s, y)
    assert pair.theta == 1.0
    assert np.array_equal(pair.y_hat, y)


def test_damped_example():
    mem = LbfgsMemory(m=2, delta=1.0)
    pair = update_memory(mem, np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert pair.gamma == 1.0
    assert pair.theta == 0.375
    assert np.array_equal(pair.y_hat, [0.25, 0.0])
    assert float(pair.s @ pair.y_hat) == 0.25
    assert pair.rho == 4.0


def test_y_equal_s():
    mem = LbfgsMemory(m=2, delta=0.5)
    s = np.array([1.0, -2.0, 0.5])
    pair = update_memory(mem, s, s.copy())
    assert mem.gamma == 1.0 and pair.theta == 1.0
    assert pair.rho == pytest.approx(1.0 / (s @ s), rel=1e-15)


def test_ring_buffer_evicts_oldest():
    rng = np.random.default_rng(0)
    mem = LbfgsMemory(m=2)
    stored = [update_memory(mem, rng.standard_normal(3), rng.standard_normal(3)) for _ in range(3)]
    assert len(mem) == 2
    assert mem.pairs[0] is stored[1] and mem.pairs[1] is stored[2]


def test_skip_tiny_step():
    mem = LbfgsMemory(m=2)
    assert update_memory(mem, np.full(3, 1e-16), np.ones(3), x_norm=10.0) is None
    assert len(mem) == 0 and mem.skipped == 1


def test_zero_memory_never_stores():
    mem = LbfgsMemory(m=0)
    assert update_memory(mem, np.ones(2), np.ones(2)) is None
    v = np.array([1.0, 2.0])
    assert np.array_equal(two_loop_direction(mem, v), v)


def test_rejects_non_finite_and_bad_config():
    with pytest.raises(NumericalError):
        update_memory(LbfgsMemory(), np.array([np.nan, 1.0]), np.ones(2))
    with pytest.raises(ConfigError):
        LbfgsMemory(m=-1)
    with pytest.raises(ConfigError):
        LbfgsMemory(delta=0.0)


def test_empty_memory_is_identity():
    mem = LbfgsMemory(m=3)
    v = np.array([3.0, -1.0])
    out = two_loop_direction(mem, v)
    assert np.array_equal(out, v) and out is not v
    assert np.array_equal(dense_hessian_oracle(mem, 2), np.eye(2))


def test_zero_vector_maps_to_zero():
    mem = random_memory(np.random.default_rng(1), 4, 3, 3)
    assert np.array_equal(two_loop_direction(mem, np.zeros(4)), np.zeros(4))


def test_two_loop_matches_dense_d3_m2():
    rng = np.random.default_rng(2)
    mem = random_memory(rng, 3, 2, 2)
    v = rng.standard_normal(3)
    dense = dense_hessian_oracle(mem, 3) @ v
    assert np.linalg.norm(two_loop_direction(mem, v) - dense) <= 1e-10 * np.linalg.norm(dense)


def test_two_loop_matches_dense_on_probes():
    rng = np.random.default_rng(3)
    mem = random_memory(rng, 8, 4, 7)
    H = dense_hessian_oracle(mem, 8)
    Z = rng.standard_normal((8, 100))
    HZ = two_loop_direction(mem, Z)
    err = np.linalg.norm(HZ - H @ Z, axis=0) / np.linalg.norm(H @ Z, axis=0)
    assert err.max() <= 1e-10


def test_one_pair_dense_is_spd():
    mem = random_memory(np.random.default_rng(4), 2, 1, 1)
    H = dense_hessian_oracle(mem, 2)
    assert np.allclose(H, H.T, rtol=0, atol=1e-14)
    assert np.all(np.linalg.eigvalsh(H) > 0)


def test_dense_oracle_size_limit():
    with pytest.raises(ConfigError):
        dense_hessian_oracle(LbfgsMemory(), 65)


def test_eig_bounds_example():
    lower, upper = theoretical_eig_bounds(1.0, 1.0, 1)
    assert lower == pytest.approx(1 / 14, rel=1e-15)
    assert upper == pytest.approx(85.0, rel=1e-15)


def test_eig_bounds_ordering_and_monotonicity():
    for delta in (0.1, 1.0, 3.0):
        for kappa in (0.5, 1.0, 10.0):
            prev = None
            for m in range(1, 8):
                lower, upper = theoretical_eig_bounds(delta, kappa, m)
                assert 0 < lower < upper
                if prev:
                    assert lower < prev[0] and upper > prev[1]
                prev = (lower, upper)


@pytest.mark.parametrize("args", [(0.0, 1.0, 1), (1.0, -1.0, 1), (1.0, 1.0, 0)])
def test_eig_bounds_validation(args):
    with pytest.raises(ConfigError):
        theoretical_eig_bounds(*args)


def test_audit_switches_break_safeguards():
    mem = LbfgsMemory(m=2, damping=False)
    pair = update_memory(mem, np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert pair.floor_ratio < 1
    mem = LbfgsMemory(m=2, gamma_floor=False)
    update_memory(mem, np.array([1.0, 0.0]), np.array([0.1, 0.0]))
    assert mem.gamma < mem.delta
