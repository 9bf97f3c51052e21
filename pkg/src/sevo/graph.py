"""Item graphs from interaction sequences, categories, or teacher embeddings."""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .sparse import CsrMatrix, ValidationError, from_triplets, is_symmetric

SLICES = ("first", "last")
WEIGHTINGS = ("frequency", "distance")


@dataclass
class InteractionLog:
    """Time-ordered item sequences keyed by user id."""

    user_sequences: dict
    n_items: int

    def __post_init__(self):
        if self.n_items < 0:
            raise ValidationError("n_items must be non-negative")
        for user, seq in self.user_sequences.items():
            if len(seq) == 0:
                raise ValidationError(f"user {user} has an empty sequence")
            for item in seq:
                if not 0 <= item < self.n_items:
                    raise ValidationError(f"user {user}: item {item} outside [0, {self.n_items})")

    @property
    def n_users(self):
        return len(self.user_sequences)

    @property
    def n_interactions(self):
        return sum(len(s) for s in self.user_sequences.values())

    def max_length(self):
        return max((len(s) for s in self.user_sequences.values()), default=0)

    def sequences(self):
        """Sequences in ascending user-id order."""
        return [self.user_sequences[u] for u in sorted(self.user_sequences)]


@dataclass
class SimilarityConfig:
    window: int | None = None  # None: longest sequence in the log
    slice: str = "last"
    max_walk: int = 1
    weighting: str = "frequency"

    def __post_init__(self):
        if self.window is not None and self.window < 1:
            raise ValidationError("window must be >= 1")
        if self.slice not in SLICES:
            raise ValidationError(f"slice must be one of {SLICES}")
        if self.max_walk < 1:
            raise ValidationError("max_walk must be >= 1")
        if self.weighting not in WEIGHTINGS:
            raise ValidationError(f"weighting must be one of {WEIGHTINGS}")

    def to_dict(self):
        return asdict(self)


@dataclass
class KnnGraphConfig:
    k_neighbors: int = 10
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValidationError("k_neighbors must be >= 1")
        if not self.bandwidth > 0:
            raise ValidationError("bandwidth must be > 0")


@dataclass(eq=False)
class SparseGraph:
    """Symmetric non-negative adjacency with its degrees and normalized view.

    ``normalized`` is ``D^{-1/2} A D^{-1/2}`` where isolated nodes carry a
    unit self-loop, so ``degrees`` reflects that loop too.
    """

    adjacency: CsrMatrix
    degrees: np.ndarray
    normalized: CsrMatrix
    isolated: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_nodes(self):
        return self.adjacency.n_rows

    @property
    def nnz(self):
        return self.adjacency.nnz


def normalize(adjacency: CsrMatrix, tol=1e-10) -> SparseGraph:
    """Symmetric normalization with self-loops injected on isolated nodes."""
    if adjacency.n_rows != adjacency.n_cols:
        raise ValidationError("adjacency must be square")
    if adjacency.nnz and adjacency.values.min() < 0:
        raise ValidationError("adjacency weights must be non-negative")
    if not is_symmetric(adjacency, tol):
        raise ValidationError("adjacency must be symmetric")
    mat = adjacency.to_scipy()
    degrees = np.asarray(mat.sum(axis=1)).ravel()
    isolated = np.flatnonzero(degrees == 0)
    if len(isolated):
        import scipy.sparse as sp

        loops = sp.csr_matrix((np.ones(len(isolated)), (isolated, isolated)), shape=mat.shape)
        mat = mat + loops
        degrees = degrees.copy()
        degrees[isolated] = 1.0
    inv_sqrt = 1.0 / np.sqrt(degrees)
    coo = mat.tocoo()
    vals = inv_sqrt[coo.row] * coo.data * inv_sqrt[coo.col]
    normalized = from_triplets(mat.shape[0], mat.shape[1], coo.row, coo.col, vals)
    return SparseGraph(adjacency=adjacency, degrees=degrees, normalized=normalized, isolated=isolated)


def _from_weight_map(weights, n):
    if weights:
        keys = sorted(weights)
        rows = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
        cols = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
        vals = np.fromiter((weights[k] for k in keys), dtype=np.float64, count=len(keys))
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return from_triplets(n, n, rows, cols, vals)


def cooccurrence_weights(sequences, cfg: SimilarityConfig, window):
    """Pair weights accumulated along each sequence; diagonal hits are dropped."""
    weights = defaultdict(float)
    H = cfg.max_walk
    for seq in sequences:
        seq = list(seq[:window]) if cfg.slice == "first" else list(seq[-window:])
        for i in range(len(seq) - 1):
            for h, j in enumerate(range(i + 1, min(i + H + 1, len(seq))), start=1):
                a, b = seq[i], seq[j]
                if a == b:
                    continue
                w = 1.0 if cfg.weighting == "frequency" else 1.0 / h
                weights[a, b] += w
                weights[b, a] += w
    return weights


def build_from_sequences(log: InteractionLog, cfg: SimilarityConfig | None = None) -> SparseGraph:
    cfg = cfg or SimilarityConfig()
    if log.n_users == 0:
        raise ValidationError("interaction log is empty")
    window = cfg.window if cfg.window is not None else log.max_length()
    weights = cooccurrence_weights(log.sequences(), cfg, window)
    return normalize(_from_weight_map(weights, log.n_items))


def build_from_categories(labels, n_items) -> SparseGraph:
    """Unit edges between distinct items sharing at least one category."""
    members = defaultdict(set)
    for item, cats in labels.items():
        if not 0 <= item < n_items:
            raise ValidationError(f"item {item} outside [0, {n_items})")
        for c in cats:
            members[c].add(item)
    weights = {}
    for items in members.values():
        items = sorted(items)
        for a in items:
            for b in items:
                if a != b:
                    weights[a, b] = 1.0
    return normalize(_from_weight_map(weights, n_items))


def knn_weights(teacher, cfg: KnnGraphConfig):
    """Reweighted, symmetrized KNN adjacency as a dense array (oracle-sized inputs)."""
    teacher = np.asarray(teacher, dtype=np.float64)
    n = teacher.shape[0]
    norms = np.linalg.norm(teacher, axis=1)
    if np.any(norms == 0):
        raise ValidationError("teacher embeddings contain zero-norm rows")
    if not cfg.k_neighbors < n:
        raise ValidationError("k_neighbors must be smaller than the number of nodes")
    unit = teacher / norms[:, None]
    dist = 2.0 - 2.0 * np.clip(unit @ unit.T, -1.0, 1.0)
    np.fill_diagonal(dist, np.inf)
    # stable sort => ties resolved by ascending node index
    nearest = np.argsort(dist, axis=1, kind="stable")[:, : cfg.k_neighbors]
    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), cfg.k_neighbors), nearest.ravel()] = True
    kernel = np.exp(-np.where(mask, dist, 0.0) / cfg.bandwidth) * mask
    return kernel + kernel.T


def build_knn_from_embeddings(teacher, cfg: KnnGraphConfig | None = None) -> SparseGraph:
    from .sparse import from_dense

    cfg = cfg or KnnGraphConfig()
    return normalize(from_dense(knn_weights(teacher, cfg)))


# -- estimator wrappers ------------------------------------------------------


class CooccurrenceGraph(BaseEstimator):
    """Fit an item graph to interaction sequences."""

    def __init__(self, window=None, slice="last", max_walk=1, weighting="frequency"):
        self.window = window
        self.slice = slice
        self.max_walk = max_walk
        self.weighting = weighting

    def fit(self, log, y=None):
        cfg = SimilarityConfig(self.window, self.slice, self.max_walk, self.weighting)
        self.graph_ = build_from_sequences(log, cfg)
        self.n_features_in_ = log.n_items
        return self


class CategoryGraph(BaseEstimator):
    def fit(self, labels, n_items):
        self.graph_ = build_from_categories(labels, n_items)
        return self


class KnnGraph(BaseEstimator):
    """KNN item graph from teacher embeddings under cosine distance."""

    def __init__(self, k_neighbors=10, bandwidth=1.0):
        self.k_neighbors = k_neighbors
        self.bandwidth = bandwidth

    def fit(self, X, y=None):
        from sklearn.utils.validation import check_array

        X = check_array(X, dtype=np.float64)
        self.graph_ = build_knn_from_embeddings(X, KnnGraphConfig(self.k_neighbors, self.bandwidth))
        self.n_features_in_ = X.shape[1]
        return self


# -- file formats ------------------------------------------------------------


class ParseError(ValidationError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def _int_fields(parts, count, path, lineno):
    if len(parts) != count:
        raise ParseError(path, lineno, f"expected {count} tab-separated fields, got {len(parts)}")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise ParseError(path, lineno, "fields must be integers") from None


def read_interactions(path, n_items=None) -> InteractionLog:
    """Parse ``user<TAB>item<TAB>timestamp`` lines into per-user sequences.

    Sequences are sorted by timestamp; equal timestamps keep file order.
    """
    rows = defaultdict(list)
    max_item = -1
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            user, item, ts = _int_fields(line.split("\t"), 3, path, lineno)
            if item < 0 or user < 0:
                raise ParseError(path, lineno, "ids must be non-negative")
            rows[user].append((ts, lineno, item))
            max_item = max(max_item, item)
    n = max_item + 1 if n_items is None else n_items
    if max_item >= n:
        raise ValidationError(f"item id {max_item} exceeds n_items={n}")
    seqs = {u: [it for _, _, it in sorted(r)] for u, r in rows.items()}
    return InteractionLog(seqs, n)


def write_interactions(path, log: InteractionLog):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for user in sorted(log.user_sequences):
            for ts, item in enumerate(log.user_sequences[user]):
                fh.write(f"{user}\t{item}\t{ts}\n")


def read_categories(path):
    """Parse ``item<TAB>category`` lines into item -> set of categories."""
    labels = defaultdict(set)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            item, cat = _int_fields(line.split("\t"), 2, path, lineno)
            labels[item].add(cat)
    return dict(labels)


def dumps_graph(adjacency: CsrMatrix) -> str:
    """Triplet text: header ``n nnz`` then ``i j w`` for i <= j.

    ``nnz`` counts the stored (upper-triangle) triplets.
    """
    coo = adjacency.to_scipy().tocoo()
    keep = coo.row <= coo.col
    rows, cols, vals = coo.row[keep], coo.col[keep], coo.data[keep]
    order = np.lexsort((cols, rows))
    buf = io.StringIO()
    buf.write(f"{adjacency.n_rows} {len(order)}\n")
    for k in order:
        buf.write(f"{rows[k]} {cols[k]} {float(vals[k])!r}\n")
    return buf.getvalue()


def save_graph(path, graph_or_adjacency):
    adjacency = getattr(graph_or_adjacency, "adjacency", graph_or_adjacency)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps_graph(adjacency))


def load_adjacency(path) -> CsrMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError(path, 1, "header must be 'n nnz'")
        n, nnz = int(header[0]), int(header[1])
        rows, cols, vals = [], [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(path, lineno, "expected 'i j w'")
            i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
            if not (0 <= i < n and 0 <= j < n):
                raise ParseError(path, lineno, "node index out of range")
            rows.append(i)
            cols.append(j)
            vals.append(w)
            if i != j:
                rows.append(j)
                cols.append(i)
                vals.append(w)
    stored = sum(1 for r, c in zip(rows, cols) if r <= c)
    if stored != nnz:
        raise ValidationError(f"{path}: header declares {nnz} triplets, found {stored}")
    return from_triplets(n, n, rows, cols, vals)


def load_graph(path) -> SparseGraph:
    return normalize(load_adjacency(path))


def graph_stats(graph: SparseGraph, bins=10, cap=512):
    """Summary used by the build-graph command."""
    from .sparse import symmetric_eigen_bounds

    raw_deg = np.asarray(graph.adjacency.to_scipy().sum(axis=1)).ravel()
    counts, edges = np.histogram(raw_deg, bins=bins)
    stats = {
        "nodes": graph.n_nodes,
        "nnz": graph.nnz,
        "isolated": int(len(graph.isolated)),
        "total_weight": float(graph.adjacency.values.sum()),
        "degree_histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
    }
    if graph.n_nodes <= cap:
        lo, hi = symmetric_eigen_bounds(graph.normalized)
        stats["eigen_bounds"] = {"min": lo, "max": hi}
    return stats


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# -- synthetic graphs --------------------------------------------------------


def random_adjacency(n, rng, density=0.3, connected=True, max_weight=3.0) -> CsrMatrix:
    """Random symmetric non-negative weights; ``connected`` adds a Hamiltonian
    path through a random node order."""
    mask = np.triu(rng.random((n, n)) < density, 1)
    weights = np.where(mask, rng.uniform(0.1, max_weight, size=(n, n)), 0.0)
    if connected and n > 1:
        order = rng.permutation(n)
        a, b = np.minimum(order[:-1], order[1:]), np.maximum(order[:-1], order[1:])
        weights[a, b] = np.maximum(weights[a, b], rng.uniform(0.1, max_weight, size=n - 1))
    weights = weights + weights.T
    rows, cols = np.nonzero(weights)
    return from_triplets(n, n, rows, cols, weights[rows, cols])


def random_graph(n, rng, density=0.3, connected=True) -> SparseGraph:
    return normalize(random_adjacency(n, rng, density, connected))


def cycle_graph(n) -> SparseGraph:
    i = np.arange(n)
    j = (i + 1) % n
    return normalize(from_triplets(n, n, np.r_[i, j], np.r_[j, i], np.ones(2 * n)))


def path_graph(n) -> SparseGraph:
    i = np.arange(n - 1)
    return normalize(from_triplets(n, n, np.r_[i, i + 1], np.r_[i + 1, i], np.ones(2 * (n - 1))))
