"""Full-catalog HR@N and NDCG@N."""
from __future__ import annotations

import numpy as np


def rank_of_targets(scores, targets):
    """1-based rank of each target under descending score, ties to lower item id."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    rows = np.arange(len(targets))
    target_scores = scores[rows, targets][:, None]
    ids = np.arange(scores.shape[1])[None, :]
    ahead = (scores > target_scores) | ((scores == target_scores) & (ids < targets[:, None]))
    return ahead.sum(axis=1) + 1


def metrics_from_ranks(ranks, Ns=(1, 5, 10)):
    ranks = np.asarray(ranks)
    out = {}
    for N in Ns:
        hit = ranks <= N
        out[f"HR@{N}"] = float(hit.mean()) if len(ranks) else 0.0
        gain = np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)
        out[f"NDCG@{N}"] = float(gain.mean()) if len(ranks) else 0.0
    return out


def evaluate(model, split, Ns=(1, 5, 10), target="test", mask_history=False, batch_size=1024):
    """Rank the held-out item of every user against all items.

    Users without a held-out item are skipped; their count is reported
    under ``"skipped"``. With ``mask_history`` the user's other known items
    are excluded from the ranking.
    """
    held = split.test if target == "test" else split.valid
    users = sorted(u for u in split.train.user_sequences if u in held)
    skipped = len(split.train.user_sequences) - len(users)
    ranks = []
    for lo in range(0, len(users), batch_size):
        chunk = users[lo : lo + batch_size]
        targets = np.array([held[u] for u in chunk])
        scores = model.scores(np.array(chunk))
        if mask_history:
            for row, u in enumerate(chunk):
                history = list(split.train.user_sequences[u])
                if target == "test" and u in split.valid:
                    history.append(split.valid[u])
                hist = np.unique(history)
                hist = hist[hist != targets[row]]
                scores[row, hist] = -np.inf
        ranks.append(rank_of_targets(scores, targets))
    ranks = np.concatenate(ranks) if ranks else np.zeros(0, dtype=np.int64)
    out = metrics_from_ranks(ranks, Ns)
    out["skipped"] = skipped
    return out
