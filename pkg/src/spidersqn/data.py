"""Datasets: LIBSVM text I/O, label binarization and synthetic generation.

All randomness goes through :func:`make_rng`, a numpy ``Generator`` driven by
the counter-based Philox-4x64 bit generator, so a 64-bit seed reproduces the
same stream on every platform.
"""

import io

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DimensionError, ParseError
from .numeric import SparseExample

# rows generated per block by generate_synthetic; part of the reproducibility
# contract, do not change without bumping the data format
_SYNTH_BLOCK = 512


def make_rng(seed, stream=0):
    """Philox generator keyed by ``(seed, stream)``."""
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


class Dataset:
    """Immutable collection of sparse examples in CSR layout.

    Parameters
    ----------
    matrix : scipy.sparse matrix, shape (n, d)
        Feature rows. Converted to CSR with sorted indices.
    labels : array_like, shape (n,)
    """

    def __init__(self, matrix, labels):
        A = sp.csr_matrix(matrix, dtype=np.float64)
        A.sort_indices()
        labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        if A.shape[0] < 1:
            raise ConfigError("a dataset needs at least one example")
        if labels.shape[0] != A.shape[0]:
            raise DimensionError(f"{labels.shape[0]} labels for {A.shape[0]} rows")
        A.indices.flags.writeable = False
        A.data.flags.writeable = False
        labels.flags.writeable = False
        self._A = A
        self._labels = labels

    @classmethod
    def from_examples(cls, examples, d=None):
        examples = list(examples)
        if not examples:
            raise ConfigError("a dataset needs at least one example")
        max_idx = max((int(e.indices[-1]) for e in examples if e.nnz), default=-1)
        if d is None:
            d = max_idx + 1
        if d < max_idx + 1:
            raise DimensionError(f"d={d} but feature index {max_idx} present")
        indptr = np.zeros(len(examples) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([e.nnz for e in examples])
        indices = np.concatenate([e.indices for e in examples]) if indptr[-1] else np.zeros(0, np.int64)
        values = np.concatenate([e.values for e in examples]) if indptr[-1] else np.zeros(0)
        A = sp.csr_matrix((values, indices, indptr), shape=(len(examples), d))
        return cls(A, [e.label for e in examples])

    @property
    def matrix(self):
        return self._A

    @property
    def labels(self):
        return self._labels

    @property
    def n(self):
        return self._A.shape[0]

    @property
    def d(self):
        return self._A.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        A = self._A
        lo, hi = A.indptr[i], A.indptr[i + 1]
        return SparseExample(A.indices[lo:hi], A.data[lo:hi], self._labels[i])

    @property
    def examples(self):
        return [self[i] for i in range(self.n)]

    def with_labels(self, labels):
        return Dataset(self._A, labels)

    def with_dimension(self, d):
        """Same examples embedded in a larger feature space."""
        if d < self.d:
            raise DimensionError(f"cannot shrink dimension {self.d} to {d}")
        A = sp.csr_matrix((self._A.data, self._A.indices, self._A.indptr), shape=(self.n, d))
        return Dataset(A, self._labels)

    def density(self):
        return self._A.nnz / float(self.n * self.d) if self.d else 0.0

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        a, b = self._A, other._A
        return (
            a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self._labels, other._labels)
        )

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d}, nnz={self._A.nnz})"


def sign_labels(raw):
    """Map raw labels to +/-1: positive values to +1, everything else to -1."""
    raw = np.asarray(raw, dtype=np.float64)
    return np.where(raw > 0, 1.0, -1.0)


def binarize_one_vs_rest(labels, positive_class):
    labels = np.asarray(labels)
    hits = labels == positive_class
    if not np.any(hits):
        raise ConfigError(f"class {positive_class!r} does not occur in the labels")
    return np.where(hits, 1.0, -1.0)


def _resolve_label_map(label_map):
    if label_map is None or label_map == "sign":
        return sign_labels
    if label_map == "identity":
        return lambda raw: np.asarray(raw, dtype=np.float64)
    if isinstance(label_map, str) and label_map.startswith("ovr:"):
        target = float(label_map[4:])
        return lambda raw: binarize_one_vs_rest(raw, target)
    if callable(label_map):
        return label_map
    raise ConfigError(f"unknown label map {label_map!r}")


def parse_libsvm(source, label_map="sign", d=None):
    """Parse LIBSVM text into a :class:`Dataset`.

    ``source`` may be ``str``, ``bytes``, a path-less file object or any
    iterable of lines. Indices on disk are 1-based and must be strictly
    ascending within a line; blank lines and ``#`` comments are skipped.

    ``label_map`` is ``"sign"`` (default), ``"identity"``, ``"ovr:<class>"``
    or a callable mapping the raw label array to the stored one. ``d``
    overrides the inferred dimension and may only enlarge it.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = io.StringIO(source)

    raw_labels = []
    indptr = [0]
    indices = []
    values = []
    for lineno, line in enumerate(source, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
        if not np.isfinite(label):
            raise ParseError(f"non-finite label {tokens[0]!r}", lineno)
        raw_labels.append(label)
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"expected idx:val, got {tok!r}", lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"non-numeric token {tok!r}", lineno) from None
            if not np.isfinite(val):
                raise ParseError(f"non-finite value in {tok!r}", lineno)
            if idx < 1:
                raise ParseError(f"feature index {idx} < 1", lineno)
            if idx <= prev:
                raise ParseError(f"feature indices not ascending at {tok!r}", lineno)
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        indptr.append(len(indices))

    if not raw_labels:
        raise ParseError("no examples in input")
    max_idx = max(indices, default=-1)
    if d is None:
        d = max_idx + 1
    elif d < max_idx + 1:
        raise DimensionError(f"d={d} but feature index {max_idx + 1} (1-based) present")
    A = sp.csr_matrix(
        (np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(raw_labels), d),
    )
    labels = _resolve_label_map(label_map)(np.asarray(raw_labels))
    return Dataset(A, labels)


def load_libsvm(path, label_map="sign", d=None):
    with open(path, "rb") as fh:
        return parse_libsvm(fh, label_map=label_map, d=d)


def format_libsvm(dataset):
    """Serialize to LIBSVM text with 17 significant digits (lossless)."""
    A = dataset.matrix
    out = []
    for i in range(dataset.n):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        parts = ["%.17g" % dataset.labels[i]]
        parts.extend("%d:%.17g" % (j + 1, v) for j, v in zip(A.indices[lo:hi], A.data[lo:hi]))
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def write_libsvm(dataset, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_libsvm(dataset))


def max_abs_scale(dataset):
    """Scale every feature column by its maximum absolute value."""
    A = dataset.matrix.tocsc()
    scale = np.abs(A).max(axis=0).toarray().ravel()
    scale[scale == 0] = 1.0
    return Dataset(dataset.matrix @ sp.diags(1.0 / scale), dataset.labels)


def generate_synthetic(n, d, density=0.05, seed=0):
    """Sparse classification data with labels from a hidden hyperplane.

    Each coordinate of each example is independently nonzero with probability
    ``density``; nonzero values are Uniform[0, 1]. A single ``u`` drawn from
    Uniform[-1, 1]^d labels every example by ``sign(<u, a>)`` with
    ``sign(0) = +1``.

    The stream order is fixed: ``u`` first, then for each block of rows the
    occupancy draws followed by the values of the occupied cells (row-major).
    """
    if n < 1 or d < 1:
        raise ConfigError("n and d must be positive")
    if not (0.0 < density <= 1.0):
        raise ConfigError(f"density must lie in (0, 1], got {density}")
    rng = make_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=d)
    blocks = []
    for start in range(0, n, _SYNTH_BLOCK):
        rows = min(_SYNTH_BLOCK, n - start)
        mask = rng.random((rows, d)) < density
        r, c = np.nonzero(mask)
        vals = rng.random(r.size)
        blocks.append(sp.csr_matrix((vals, (r, c)), shape=(rows, d)))
    A = sp.vstack(blocks, format="csr")
    A.sort_indices()
    return Dataset(A, labels_from_hyperplane(A, u))


def labels_from_hyperplane(A, u):
    margin = A @ u
    return np.where(margin >= 0, 1.0, -1.0)
