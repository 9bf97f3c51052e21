"""Synthetic clustered interaction logs and leave-one-out splits."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..graph import InteractionLog
from ..sparse import ValidationError


@dataclass
class SyntheticSpec:
    n_items: int = 200
    n_users: int = 500
    n_clusters: int = 10
    seq_len: int = 20
    intra_cluster_prob: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.n_items < 1 or self.n_users < 1 or self.n_clusters < 1 or self.seq_len < 1:
            raise ValidationError("synthetic sizes must be positive")
        if self.n_items % self.n_clusters:
            raise ValidationError("n_clusters must divide n_items evenly")
        if not 0.0 < self.intra_cluster_prob <= 1.0:
            raise ValidationError("intra_cluster_prob must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)


def generate_synthetic(spec: SyntheticSpec):
    """Users walk mostly inside a home cluster of contiguous item ids.

    Returns the log and the cluster label of every item.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.n_items // spec.n_clusters
    labels = np.arange(spec.n_items) // size
    homes = rng.integers(spec.n_clusters, size=spec.n_users)
    stay = rng.random((spec.n_users, spec.seq_len)) < spec.intra_cluster_prob
    local = rng.integers(size, size=(spec.n_users, spec.seq_len))
    anywhere = rng.integers(spec.n_items, size=(spec.n_users, spec.seq_len))
    items = np.where(stay, homes[:, None] * size + local, anywhere)
    seqs = {u: items[u].tolist() for u in range(spec.n_users)}
    return InteractionLog(seqs, spec.n_items), labels


@dataclass
class EvalSplit:
    """Leave-one-out split: last item tests, penultimate validates."""

    train: InteractionLog
    valid: dict
    test: dict


def leave_one_out(log: InteractionLog) -> EvalSplit:
    """Users with fewer than three interactions stay in train only."""
    train, valid, test = {}, {}, {}
    for user, seq in log.user_sequences.items():
        if len(seq) >= 3:
            train[user] = list(seq[:-2])
            valid[user] = seq[-2]
            test[user] = seq[-1]
        else:
            train[user] = list(seq)
    return EvalSplit(InteractionLog(train, log.n_items), valid, test)
