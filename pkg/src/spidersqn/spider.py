"""SPIDER gradient estimator.

At epoch boundaries (``k % q == 0``) the estimator is reset to a full
gradient (finite-sum) or a large fresh-sample average (online). In between,

    v_k = grad_B(p_k) - grad_B(p_{k-1}) + v_{k-1}

with the same minibatch ``B`` at both points. Finite-sum batches are drawn
uniformly with replacement from the solver's RNG; online batches are fresh
draws from the stream.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .objectives import StreamingOracle


@dataclass
class SpiderState:
    """Running estimator. ``k`` is the index of the next estimate to form."""

    q: int
    batch: int
    refresh_batch: int = 0
    v: np.ndarray = None
    prev_point: np.ndarray = None
    k: int = 0

    def __post_init__(self):
        if self.q < 1:
            raise ConfigError("epoch length q must be >= 1")
        if self.batch < 1:
            raise ConfigError("batch size must be >= 1")

    @property
    def at_boundary(self):
        return self.k % self.q == 0


def refresh(state, source, point, counter=None):
    """Reset ``v`` at an epoch boundary."""
    if not state.at_boundary:
        raise ContractError(f"refresh called at k={state.k}, not a multiple of q={state.q}")
    if isinstance(source, StreamingOracle):
        if state.refresh_batch < 1:
            raise ConfigError("online mode needs refresh_batch >= 1")
        chunk = source.draw(state.refresh_batch)
        state.v = chunk.batch_grad(np.arange(chunk.n), point, counter)
    else:
        state.v = source.full_grad(point, counter)
    state.prev_point = point
    state.k += 1
    return state


def batch_grads_at(source, rng, batch, points, counter=None):
    """Gradients of one freshly drawn minibatch at several points.

    Only the first evaluation is charged to the ``paper_sfo`` count; every
    evaluation is charged to the raw count.
    """
    if isinstance(source, StreamingOracle):
        chunk = source.draw(batch)
        rows = np.arange(batch)
    else:
        chunk = source
        rows = rng.integers(0, source.n, size=batch)
    return [chunk.batch_grad(rows, p, counter, charge_sfo=(j == 0)) for j, p in enumerate(points)]


def paired_batch_grads(source, rng, batch, point, other, counter=None, same_batch=True):
    """Minibatch gradients of one batch at two points.

    Returns ``(grad_B(point), grad_B(other))``. ``same_batch=False`` draws an
    independent batch for ``other``; only the audit uses it, to break the
    estimator.
    """
    if same_batch:
        g_new, g_old = batch_grads_at(source, rng, batch, (point, other), counter)
        return g_new, g_old
    (g_new,) = batch_grads_at(source, rng, batch, (point,), counter)
    (g_old,) = batch_grads_at(source, rng, batch, (other,), None)
    if counter is not None:
        counter.charge(batch, 0)
    return g_new, g_old


def advance(state, source, point, rng, counter=None, same_batch=True):
    """Recursive SPIDER update off an epoch boundary."""
    if state.at_boundary:
        raise ContractError(f"advance called at epoch boundary k={state.k}")
    if state.v is None:
        raise ContractError("advance called before the first refresh")
    g_new, g_old = paired_batch_grads(
        source, rng, state.batch, point, state.prev_point, counter, same_batch
    )
    state.v = g_new - g_old + state.v
    state.prev_point = point
    state.k += 1
    return state


def step(state, source, point, rng, counter=None, same_batch=True):
    """Refresh or advance, whichever the epoch position calls for."""
    if state.at_boundary:
        return refresh(state, source, point, counter)
    return advance(state, source, point, rng, counter, same_batch)
