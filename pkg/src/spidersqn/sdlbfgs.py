"""Stochastic damped L-BFGS: curvature-pair memory and the two-loop product.

The inverse-Hessian approximation ``H_k`` is never formed. It is defined by
the recursion, applied oldest pair first,

    H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T,

started from ``H_0 = I / gamma`` (or ``I`` while the memory is empty), where
each stored ``y`` is already damped so that ``s^T y >= 0.25 * gamma * s^T s``.
"""

import collections
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError


@dataclass(frozen=True)
class CurvaturePair:
    s: np.ndarray
    y_hat: np.ndarray
    rho: float
    # diagnostics recorded at insertion time
    gamma: float = 1.0
    theta: float = 1.0
    sy_bar: float = 0.0

    @property
    def floor_ratio(self):
        """``s^T y_hat / (0.25 * gamma * s^T s)``; at least 1 for a valid pair."""
        return float(np.dot(self.s, self.y_hat)) / (0.25 * self.gamma * float(np.dot(self.s, self.s)))


@dataclass
class LbfgsMemory:
    """Ring buffer of at most ``m`` damped curvature pairs.

    ``m = 0`` disables the quasi-Newton correction (``H = I``).
    ``damping`` and ``gamma_floor`` exist so the audit can inject faults;
    leave them on.
    """

    m: int = 5
    delta: float = 1.0
    gamma: float = 1.0
    theta_last: float = 1.0
    damping: bool = True
    gamma_floor: bool = True
    pairs: collections.deque = field(default=None, repr=False)
    skipped: int = 0

    def __post_init__(self):
        if self.m < 0:
            raise ConfigError("memory size m must be >= 0")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if self.pairs is None:
            self.pairs = collections.deque(maxlen=self.m)
        self.gamma = max(self.gamma, self.delta)

    def __len__(self):
        return len(self.pairs)


def update_memory(mem, s, y_bar, x_norm=0.0):
    """Damp ``(s, y_bar)`` and push it; returns the stored pair or ``None``.

    ``gamma = max(y^T y / s^T y, delta)`` when ``s^T y`` is safely positive,
    ``delta`` otherwise. The same ``gamma`` seeds the damping threshold
    ``sigma = gamma * s^T s``. Pairs with ``||s|| <= 1e-14 (1 + x_norm)``
    are skipped and leave the memory untouched.
    """
    s = np.asarray(s, dtype=np.float64)
    y_bar = np.asarray(y_bar, dtype=np.float64)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(y_bar))):
        raise NumericalError("non-finite curvature pair")
    if mem.m == 0:
        return None

    ss = float(np.dot(s, s))
    s_norm = np.sqrt(ss)
    if s_norm <= 1e-14 * (1.0 + x_norm):
        mem.skipped += 1
        return None
    sy = float(np.dot(s, y_bar))
    yy = float(np.dot(y_bar, y_bar))

    curvature_eps = 1e-12 * (1.0 + s_norm * np.sqrt(yy))
    if sy > curvature_eps:
        ratio = yy / sy
        gamma = max(ratio, mem.delta) if mem.gamma_floor else ratio
    else:
        gamma = mem.delta

    sigma = gamma * ss
    if mem.damping and sy < 0.25 * sigma:
        theta = 0.75 * sigma / (sigma - sy)
        y_hat = theta * y_bar + (1.0 - theta) * gamma * s
    else:
        theta = 1.0
        y_hat = y_bar
    sy_hat = float(np.dot(s, y_hat))
    if sy_hat == 0.0 or not np.isfinite(sy_hat):
        # only reachable with damping disabled
        raise NumericalError("curvature pair with s^T y_hat = 0")

    pair = CurvaturePair(s.copy(), np.array(y_hat, copy=True), 1.0 / sy_hat, gamma, theta, sy)
    mem.pairs.append(pair)
    mem.gamma = gamma
    mem.theta_last = theta
    return pair


def two_loop_direction(mem, v):
    """Return ``H_k v`` by the two-loop recursion.

    ``v`` may be a vector of shape ``(d,)`` or a block of probes ``(d, p)``.
    """
    v = np.asarray(v, dtype=np.float64)
    if not mem.pairs:
        return v.copy()
    q = v.copy()
    alphas = []
    for pair in reversed(mem.pairs):
        a = pair.rho * (pair.s @ q)
        q -= np.multiply.outer(pair.y_hat, a)
        alphas.append(a)
    r = q / mem.gamma
    for pair, a in zip(mem.pairs, reversed(alphas)):
        b = pair.rho * (pair.y_hat @ r)
        r += np.multiply.outer(pair.s, a - b)
    return r


def dense_hessian_oracle(mem, d):
    """Materialize ``H_k`` by the dense product recursion (test scale only)."""
    if d > 64:
        raise ConfigError("dense oracle is limited to d <= 64")
    eye = np.eye(d)
    if not mem.pairs:
        return eye
    H = eye / mem.gamma
    for pair in mem.pairs:
        left = eye - pair.rho * np.outer(pair.s, pair.y_hat)
        H = left @ H @ left.T + pair.rho * np.outer(pair.s, pair.s)
    return H


def theoretical_eig_bounds(delta, kappa, m):
    """Spectral bounds ``(lower, upper)`` on ``H_k`` for Hessians bounded by ``kappa``.

    lower = 1 / (4 m kappa^2 / delta + (4m + 1)(kappa + delta))
    upper = (alpha^(2m) - 1) / (alpha^2 - 1) * 4 / delta + alpha^(2m) / delta,
    alpha = (4 kappa + 5 delta) / delta
    """
    if not (delta > 0 and kappa > 0):
        raise ConfigError("delta and kappa must be positive")
    if m < 1:
        raise ConfigError("memory size must be >= 1")
    lower = 1.0 / (4.0 * m * kappa**2 / delta + (4 * m + 1) * (kappa + delta))
    alpha = (4.0 * kappa + 5.0 * delta) / delta
    a2m = alpha ** (2 * m)
    upper = (a2m - 1.0) / (alpha**2 - 1.0) * 4.0 / delta + a2m / delta
    return lower, upper
