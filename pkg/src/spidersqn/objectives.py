"""Finite-sum objectives ``f(x) = (1/n) sum_i f_i(x)`` with counted gradients.

Every gradient method takes an optional :class:`~spidersqn.numeric.OracleCounter`.
Passing ``counter=None`` evaluates without charging, which is what the
harness uses for checkpoint diagnostics.
"""

import math

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .data import Dataset, labels_from_hyperplane, make_rng
from .errors import ConfigError, DimensionError, OracleError
from .numeric import as_vector

# max over t of |d^2/dt^2 (1 - tanh t)| = max |2 tanh(t) sech^2(t)|
_TANH_CURVATURE = 4.0 / (3.0 * math.sqrt(3.0))


class Objective:
    """Base class. Subclasses implement ``_values`` and ``_grad_mean``.

    ``rows`` passed to the hooks is either ``None`` (all components, in
    order) or an integer index array that may contain duplicates.
    """

    n = 0
    d = 0

    def _values(self, rows, x):
        raise NotImplementedError

    def _grad_mean(self, rows, x):
        raise NotImplementedError

    def curvature_bound(self):
        """Upper bound on ``max_i sup_x ||Hess f_i(x)||_2``."""
        raise NotImplementedError

    def _check_x(self, x):
        x = as_vector(x)
        if x.shape[0] != self.d:
            raise DimensionError(f"x has length {x.shape[0]}, objective has d={self.d}")
        return x

    def _check_index(self, i):
        if not 0 <= i < self.n:
            raise OracleError(f"component index {i} outside [0, {self.n})")

    def value(self, x):
        return float(np.mean(self._values(None, self._check_x(x))))

    def value_component(self, i, x):
        self._check_index(i)
        return float(self._values(np.array([i]), self._check_x(x))[0])

    def component_grad(self, i, x, counter=None):
        self._check_index(i)
        g = self._grad_mean(np.array([i]), self._check_x(x))
        if counter is not None:
            counter.charge(1, 1)
        return g

    def batch_grad(self, batch, x, counter=None, charge_sfo=True):
        """Mean gradient over a multiset of component indices.

        With ``charge_sfo=False`` only the raw evaluation count is charged;
        SPIDER and SVRG corrections use this for their second evaluation of
        the same batch.
        """
        rows = np.asarray(batch, dtype=np.int64).reshape(-1)
        if rows.size == 0:
            raise ConfigError("batch must be non-empty")
        if rows.min() < 0 or rows.max() >= self.n:
            raise OracleError(f"batch index outside [0, {self.n})")
        g = self._grad_mean(rows, self._check_x(x))
        if counter is not None:
            counter.charge(rows.size, rows.size if charge_sfo else 0)
        return g

    def full_grad(self, x, counter=None):
        g = self._grad_mean(None, self._check_x(x))
        if counter is not None:
            counter.charge(self.n, self.n, full=1)
        return g


class LinearModelObjective(Objective):
    """Losses of the form ``loss(<x, a_i>, b_i) + reg(x)``.

    The regularizer sits inside every component, so the average of the
    component gradients equals the full gradient.
    """

    def __init__(self, dataset, r=0.0):
        if not isinstance(dataset, Dataset):
            raise TypeError("dataset must be a Dataset")
        if r < 0:
            raise ConfigError("regularization coefficient must be >= 0")
        self.dataset = dataset
        self.r = float(r)
        self.n = dataset.n
        self.d = dataset.d
        self._A = dataset.matrix
        self._b = dataset.labels

    def _rows(self, rows):
        if rows is None:
            return self._A, self._b
        return self._A[rows], self._b[rows]

    def _values(self, rows, x):
        A, b = self._rows(rows)
        return self._loss(A @ x, b) + self._reg_value(x)

    def _grad_mean(self, rows, x):
        A, b = self._rows(rows)
        slopes = self._slope(A @ x, b)
        return (A.T @ slopes) / A.shape[0] + self._reg_grad(x)

    def _reg_value(self, x):
        return 0.0

    def _reg_grad(self, x):
        return np.zeros_like(x)

    def _max_row_norm_sq(self):
        A = self._A
        return float(np.max(A.multiply(A).sum(axis=1))) if A.nnz else 0.0


class SvmSigmoidObjective(LinearModelObjective):
    """Nonconvex SVM: ``f_i(x) = 1 - tanh(b_i <x, a_i>) + r ||x||^2``."""

    def _loss(self, t, b):
        return 1.0 - np.tanh(b * t)

    def _slope(self, t, b):
        th = np.tanh(b * t)
        return -b * (1.0 - th * th)

    def _reg_value(self, x):
        return self.r * float(np.dot(x, x))

    def _reg_grad(self, x):
        return 2.0 * self.r * x

    def curvature_bound(self):
        b2 = float(np.max(self._b**2))
        return _TANH_CURVATURE * b2 * self._max_row_norm_sq() + 2.0 * self.r


class RobustRegressionObjective(LinearModelObjective):
    """``f_i(x) = log((b_i - <x, a_i>)^2 / 2 + 1)``; no regularizer."""

    def __init__(self, dataset, r=0.0):
        super().__init__(dataset, 0.0)

    def _loss(self, t, b):
        res = b - t
        return np.log1p(0.5 * res * res)

    def _slope(self, t, b):
        res = b - t
        return -res / (1.0 + 0.5 * res * res)

    def curvature_bound(self):
        # |l''(u)| = |1 - u^2/2| / (1 + u^2/2)^2 <= 1
        return self._max_row_norm_sq()


class NonconvexLogisticObjective(LinearModelObjective):
    """Cross-entropy on ``sigmoid(<x, a_i>)`` plus ``r * sum_j x_j^2 / (1 + x_j^2)``.

    Labels are mapped to {0, 1} (positive -> 1). The loss uses the stable form
    ``log(1 + exp(t)) - y t``.
    """

    def __init__(self, dataset, r=0.0):
        super().__init__(dataset, r)
        self._y = np.where(self._b > 0, 1.0, 0.0)

    def _rows(self, rows):
        if rows is None:
            return self._A, self._y
        return self._A[rows], self._y[rows]

    def _loss(self, t, y):
        return np.logaddexp(0.0, t) - y * t

    def _slope(self, t, y):
        return expit(t) - y

    def _reg_value(self, x):
        x2 = x * x
        return self.r * float(np.sum(x2 / (1.0 + x2)))

    def _reg_grad(self, x):
        return 2.0 * self.r * x / (1.0 + x * x) ** 2

    def curvature_bound(self):
        # sigmoid' <= 1/4; |d^2/du^2 u^2/(1+u^2)| <= 2
        return 0.25 * self._max_row_norm_sq() + 2.0 * self.r


class QuadraticObjective(Objective):
    """``f_i(x) = 0.5 x^T A_i x + c_i^T x`` with symmetric ``A_i``.

    Used for oracle checks where the smoothness constant is known exactly.
    """

    def __init__(self, hessians, linear):
        H = np.asarray(hessians, dtype=np.float64)
        c = np.asarray(linear, dtype=np.float64)
        if H.ndim != 3 or H.shape[1] != H.shape[2] or c.shape != H.shape[:2]:
            raise DimensionError("hessians must be (n, d, d) and linear terms (n, d)")
        if not np.allclose(H, np.swapaxes(H, 1, 2)):
            raise ConfigError("component Hessians must be symmetric")
        self.hessians = H
        self.linear = c
        self.n, self.d = c.shape

    def _pick(self, rows):
        if rows is None:
            return self.hessians, self.linear
        return self.hessians[rows], self.linear[rows]

    def _values(self, rows, x):
        H, c = self._pick(rows)
        return 0.5 * np.einsum("i,bij,j->b", x, H, x) + c @ x

    def _grad_mean(self, rows, x):
        H, c = self._pick(rows)
        return (np.einsum("bij,j->bi", H, x) + c).sum(axis=0) / c.shape[0]

    @property
    def lipschitz(self):
        return float(max(np.linalg.norm(h, 2) for h in self.hessians))

    def curvature_bound(self):
        return self.lipschitz


PROBLEMS = {
    "svm": SvmSigmoidObjective,
    "robust": RobustRegressionObjective,
    "logistic": NonconvexLogisticObjective,
}


def make_objective(problem, dataset, r=0.0):
    try:
        cls = PROBLEMS[problem]
    except KeyError:
        raise ConfigError(f"unknown problem {problem!r}; choose from {sorted(PROBLEMS)}") from None
    return cls(dataset, r)


def grad_check(obj, x, h=1e-6):
    """Max over coordinates of the central-difference gradient mismatch.

    Each coordinate error is scaled by ``1 + |grad_j|``.
    """
    if h <= 0:
        raise ConfigError("h must be positive")
    x = as_vector(x).copy()
    g = obj.full_grad(x)
    worst = 0.0
    for j in range(x.shape[0]):
        xj = x[j]
        x[j] = xj + h
        fp = obj.value(x)
        x[j] = xj - h
        fm = obj.value(x)
        x[j] = xj
        fd = (fp - fm) / (2.0 * h)
        worst = max(worst, abs(fd - g[j]) / (1.0 + abs(g[j])))
    return worst


class StreamingOracle:
    """Source of fresh i.i.d. component functions for the online setting.

    ``sampler(rng, count)`` returns an :class:`Objective` over ``count`` newly
    drawn components; nothing is ever drawn twice. ``population`` is an
    objective used only to report ``f`` and ``||grad f||`` (exact for the
    quadratic stream, a large held-out sample otherwise). ``sigma1`` is the
    user-supplied gradient-noise level.
    """

    def __init__(self, sampler, population, d, seed=0, sigma1=None):
        self._sampler = sampler
        self.population = population
        self.d = int(d)
        self.seed = int(seed)
        self.sigma1 = sigma1
        self._rng = make_rng(seed, stream=101)
        self.drawn = 0

    def draw(self, count):
        if count < 1:
            raise ConfigError("must draw at least one sample")
        chunk = self._sampler(self._rng, int(count))
        self.drawn += int(count)
        return chunk


def synthetic_stream(problem, d, density=0.05, r=0.0, seed=0, eval_size=4096, sigma1=None, draw_seed=None):
    """Stream of synthetic examples labelled by a hidden hyperplane.

    The hyperplane and the held-out evaluation sample come from
    ``make_rng(seed, 102)``; the training draws use the oracle's own stream,
    seeded by ``draw_seed`` (default ``seed``).
    """
    if not (0.0 < density <= 1.0):
        raise ConfigError(f"density must lie in (0, 1], got {density}")
    setup = make_rng(seed, stream=102)
    u = setup.uniform(-1.0, 1.0, size=d)

    def sample(rng, count):
        mask = rng.random((count, d)) < density
        rr, cc = np.nonzero(mask)
        A = sp.csr_matrix((rng.random(rr.size), (rr, cc)), shape=(count, d))
        return make_objective(problem, Dataset(A, labels_from_hyperplane(A, u)), r)

    population = sample(setup, eval_size)
    draw_seed = seed if draw_seed is None else draw_seed
    return StreamingOracle(sample, population, d, seed=draw_seed, sigma1=sigma1)


def quadratic_stream(hessian, mean_linear, noise, seed=0):
    """Stream of ``0.5 x^T A x + c^T x`` with ``c ~ N(mean_linear, noise^2 I)``.

    Every component shares ``A``, so the gradient noise is exactly
    ``c - mean_linear`` and ``sigma1^2 = d * noise^2``.
    """
    A = np.asarray(hessian, dtype=np.float64)
    c_bar = np.asarray(mean_linear, dtype=np.float64)
    d = c_bar.shape[0]

    def sample(rng, count):
        c = c_bar + noise * rng.standard_normal((count, d))
        return QuadraticObjective(np.broadcast_to(A, (count, d, d)), c)

    population = QuadraticObjective(A[None], c_bar[None])
    return StreamingOracle(sample, population, d, seed=seed, sigma1=math.sqrt(d) * noise)
