"""Momentum coefficients and the three-sequence (x, y, z) update.

Each iteration forms the evaluation point ``z_k = (1 - a_{k+1}) y_k + a_{k+1} x_k``,
then moves ``x <- x - lambda_k d`` and ``y <- z - beta_k d``. Three schedules
for ``a_k`` are provided:

* ``vanilla``: ``2 / (k + 1)``
* ``epoch_restart``: ``2 / (k mod q + 1)``
* ``epoch_diminishing``: ``2 / (ceil(k / q) + 1)``

``none`` switches momentum off: ``z = x`` and ``lambda = beta``.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError

KINDS = ("none", "vanilla", "epoch_restart", "epoch_diminishing")
LAMBDA_RULES = ("min", "mid", "max")


@dataclass(frozen=True)
class MomentumSchedule:
    kind: str = "vanilla"
    q: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown momentum kind {self.kind!r}")
        if self.q < 1:
            raise ConfigError("q must be >= 1")

    def alpha(self, k):
        return alpha(self, k)


def alpha_exact(schedule, k):
    """The coefficient as an exact fraction (``none`` yields 1)."""
    if k < 0:
        raise ConfigError("k must be >= 0")
    if schedule.kind == "none":
        return Fraction(1)
    if schedule.kind == "vanilla":
        return Fraction(2, k + 1)
    if schedule.kind == "epoch_restart":
        return Fraction(2, k % schedule.q + 1)
    # ceil(k / q) in integer arithmetic
    return Fraction(2, -(-k // schedule.q) + 1)


def alpha(schedule, k):
    return float(alpha_exact(schedule, k))


def lambda_step(beta, alpha_k, rule="max"):
    """Pick ``lambda_k`` in ``[beta, (1 + alpha_k) beta]``."""
    if rule == "min":
        return beta
    if rule == "mid":
        return (1.0 + 0.5 * alpha_k) * beta
    if rule == "max":
        return (1.0 + alpha_k) * beta
    raise ConfigError(f"unknown lambda rule {rule!r}")


@dataclass
class ThreeSequenceState:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray = None
    beta: float = 1e-3
    lam: float = 1e-3

    @classmethod
    def start(cls, x0, beta):
        x0 = np.asarray(x0, dtype=np.float64)
        return cls(x=x0.copy(), y=x0.copy(), z=x0.copy(), beta=beta, lam=beta)


def interpolate(state, alpha_next):
    """``z = (1 - alpha) y + alpha x``; extrapolates when ``alpha > 1``."""
    if not 0.0 < alpha_next <= 2.0:
        raise ConfigError(f"momentum coefficient {alpha_next} outside (0, 2]")
    return (1.0 - alpha_next) * state.y + alpha_next * state.x


def dual_update(state, d):
    """``x <- x - lambda d`` and ``y <- z - beta d``."""
    state.x = state.x - state.lam * d
    state.y = state.z - state.beta * d
    return state
