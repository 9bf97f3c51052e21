"""Matrix factorization with the BPR pairwise loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..optim import BatchGradient
from ..sparse import ValidationError, spmm


class SamplingError(ValidationError):
    """A user has no item left to draw a negative from."""


@dataclass
class MfModel:
    user_embeddings: np.ndarray
    item_embeddings: np.ndarray

    @property
    def dimension(self):
        return self.item_embeddings.shape[1]

    @classmethod
    def init(cls, n_users, n_items, dim, std=0.02, seed=0):
        if dim < 1:
            raise ValidationError("dimension must be >= 1")
        rng = np.random.default_rng(seed)
        users = rng.normal(0.0, std, size=(n_users, dim))
        items = rng.normal(0.0, std, size=(n_items, dim))
        return cls(users, items)

    def scores(self, users):
        return self.user_embeddings[np.asarray(users)] @ self.item_embeddings.T

    def copy(self):
        return MfModel(self.user_embeddings.copy(), self.item_embeddings.copy())


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def bpr_loss(model: MfModel, users, pos, neg) -> float:
    """``sum -ln sigmoid(p_u.q_i - p_u.q_j)`` over the batch."""
    P = model.user_embeddings[users]
    gap = np.einsum("bd,bd->b", P, model.item_embeddings[pos] - model.item_embeddings[neg])
    return float(-_log_sigmoid(gap).sum())


def bpr_gradient(model: MfModel, users, pos, neg):
    """Gradients of :func:`bpr_loss`.

    Returns ``(item_grad, user_grad, loss)``; ``item_grad`` is a
    :class:`BatchGradient` sampled on the batch's positives and negatives,
    ``user_grad`` likewise on its users.
    """
    users, pos, neg = (np.asarray(a, dtype=np.int64) for a in (users, pos, neg))
    P = model.user_embeddings[users]
    diff = model.item_embeddings[pos] - model.item_embeddings[neg]
    gap = np.einsum("bd,bd->b", P, diff)
    loss = float(-_log_sigmoid(gap).sum())
    # d/dgap of -ln sigmoid(gap) = -sigmoid(-gap)
    coef = -np.exp(_log_sigmoid(-gap))[:, None]
    item_grad = np.zeros_like(model.item_embeddings)
    np.add.at(item_grad, pos, coef * P)
    np.add.at(item_grad, neg, -coef * P)
    user_grad = np.zeros_like(model.user_embeddings)
    np.add.at(user_grad, users, coef * diff)
    return (
        BatchGradient(item_grad, np.concatenate([pos, neg])),
        BatchGradient(user_grad, users),
        loss,
    )


def smoothness_reg_gradient(items, graph, weight) -> np.ndarray:
    """Gradient ``2 w (I - A_norm) E`` of ``w Tr(E^T L E)``."""
    if weight < 0:
        raise ValidationError("regularizer weight must be >= 0")
    items = np.asarray(items, dtype=np.float64)
    if weight == 0:
        return np.zeros_like(items)
    return 2.0 * weight * (items - spmm(graph.normalized, items))


class NegativeSampler:
    """Uniform negatives, rejecting items present in the user's history."""

    def __init__(self, sequences: dict, n_items, rng, max_rounds=1000):
        self.n_items = n_items
        self.rng = rng
        self.max_rounds = max_rounds
        keys = [u * n_items + np.unique(seq) for u, seq in sequences.items()]
        self._keys = np.unique(np.concatenate(keys)) if keys else np.zeros(0, dtype=np.int64)
        for u, seq in sequences.items():
            if len(set(seq)) >= n_items:
                raise SamplingError(f"user {u} has interacted with every item")

    def _seen(self, users, items):
        keys = users * self.n_items + items
        idx = np.searchsorted(self._keys, keys)
        idx = np.minimum(idx, len(self._keys) - 1)
        return self._keys[idx] == keys if len(self._keys) else np.zeros(len(keys), dtype=bool)

    def sample(self, users):
        users = np.asarray(users, dtype=np.int64)
        neg = self.rng.integers(self.n_items, size=len(users))
        bad = self._seen(users, neg)
        rounds = 0
        while bad.any():
            rounds += 1
            if rounds > self.max_rounds:
                raise SamplingError("negative sampling did not terminate")
            neg[bad] = self.rng.integers(self.n_items, size=int(bad.sum()))
            bad[bad] = self._seen(users[bad], neg[bad])
        return neg
