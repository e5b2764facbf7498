"""Vector primitives and the oracle-call counter.

Dense vectors are plain 1-D ``float64`` numpy arrays. Sparse data points are
:class:`SparseExample` instances holding 0-based, strictly ascending feature
indices.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


def as_vector(x):
    """Return ``x`` as a 1-D float64 array (no copy when already one)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {arr.shape}")
    return arr


def _check_same_length(a, b):
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"length mismatch: {a.shape[0]} != {b.shape[0]}")


def dot(a, b):
    a, b = as_vector(a), as_vector(b)
    _check_same_length(a, b)
    return float(np.dot(a, b))


def axpy(alpha, x, y):
    """Return ``y + alpha * x`` as a new array."""
    x, y = as_vector(x), as_vector(y)
    _check_same_length(x, y)
    return y + alpha * x


def sparse_dot(example, x):
    """Inner product of a sparse example with a dense vector."""
    x = as_vector(x)
    if example.indices.size and example.indices[-1] >= x.shape[0]:
        raise DimensionError(
            f"feature index {int(example.indices[-1])} out of range for d={x.shape[0]}"
        )
    return float(np.dot(example.values, x[example.indices]))


@dataclass(frozen=True)
class SparseExample:
    """One data point ``(a_i, b_i)`` in coordinate form."""

    indices: np.ndarray
    values: np.ndarray
    label: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        val = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if idx.shape != val.shape:
            raise DimensionError("indices and values must have equal length")
        if idx.size:
            if idx[0] < 0:
                raise DimensionError("feature indices must be non-negative")
            if np.any(np.diff(idx) <= 0):
                raise DimensionError("feature indices must be strictly ascending")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "label", float(self.label))

    @property
    def nnz(self):
        return int(self.indices.size)

    def densify(self, d):
        if self.indices.size and self.indices[-1] >= d:
            raise DimensionError(f"feature index {int(self.indices[-1])} >= d={d}")
        out = np.zeros(d)
        out[self.indices] = self.values
        return out


@dataclass
class OracleCounter:
    """Tally of gradient work done by one solver run.

    ``component_grad_evals`` counts every single-component gradient actually
    evaluated. ``paper_sfo`` follows the accounting convention in which a
    SPIDER/SVRG correction step over a batch is charged once per sample even
    though each sample is evaluated at two points.
    """

    component_grad_evals: int = 0
    paper_sfo: int = 0
    full_grad_evals: int = 0

    def charge(self, evals, sfo, full=0):
        if evals < 0 or sfo < 0 or full < 0:
            raise ValueError("counter increments must be non-negative")
        self.component_grad_evals += int(evals)
        self.paper_sfo += int(sfo)
        self.full_grad_evals += int(full)

    def snapshot(self):
        return (self.component_grad_evals, self.paper_sfo, self.full_grad_evals)
