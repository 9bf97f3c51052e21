"""Graph smoothing of embedding variations.

All transforms act on an ``n x d`` variation matrix whose rows are nodes of
the graph. The production transform is :func:`transform_rescaled`.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .sparse import DENSE_CAP, DenseCapError, ShapeError, ValidationError, from_dense, spmm, to_dense

VARIANTS = ("exact", "iterative", "neumann", "rescaled-neumann")


@dataclass
class SEvoConfig:
    beta: float = 0.99
    layers: int = 3
    variant: str = "rescaled-neumann"

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValidationError("beta must lie in [0, 1)")
        if int(self.layers) != self.layers or self.layers < 0:
            raise ValidationError("layers must be a non-negative integer")
        self.layers = int(self.layers)
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}")

    def to_dict(self):
        return asdict(self)


def _as_panel(x, graph):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != graph.n_nodes:
        raise ShapeError(f"variation has shape {x.shape}, graph has {graph.n_nodes} nodes")
    return x


def smoothness(x, graph) -> float:
    """``Tr(X^T L X)`` with ``L = I - A_norm``, evaluated as ``<X, X - A_norm X>``."""
    x = _as_panel(x, graph)
    return float(np.vdot(x, x - spmm(graph.normalized, x)))


def transform_exact(dx, graph, beta, cap=DENSE_CAP):
    """Closed-form minimizer ``(1 - beta) (I - beta A)^{-1} dx`` by a dense solve."""
    dx = _as_panel(dx, graph)
    if beta == 0:
        return dx.copy()
    if graph.n_nodes > cap:
        raise DenseCapError(f"exact transform refused for {graph.n_nodes} nodes (cap {cap})")
    system = np.eye(graph.n_nodes) - beta * to_dense(graph.normalized, cap)
    return np.linalg.solve(system, (1.0 - beta) * dx)


def transform_iterative(dx, graph, cfg: SEvoConfig):
    """``y <- beta A y + (1 - beta) dx`` for ``layers`` rounds, starting at dx."""
    dx = _as_panel(dx, graph)
    y = dx.copy()
    for _ in range(cfg.layers):
        y = cfg.beta * spmm(graph.normalized, y) + (1.0 - cfg.beta) * dx
    return y


def _horner(dx, graph, beta, layers):
    # sum_{l<=L} beta^l A^l dx with exactly L products
    y = dx.copy()
    for _ in range(layers):
        y = dx + beta * spmm(graph.normalized, y)
    return y


def transform_neumann(dx, graph, cfg: SEvoConfig):
    """Truncated Neumann series ``(1 - beta) sum_{l=0}^{L} beta^l A^l dx``."""
    dx = _as_panel(dx, graph)
    if cfg.beta == 0:
        return dx.copy()
    return (1.0 - cfg.beta) * _horner(dx, graph, cfg.beta, cfg.layers)


def transform_rescaled(dx, graph, cfg: SEvoConfig):
    """Neumann series rescaled by ``1 / (1 - beta^{L+1})``; the default transform."""
    dx = _as_panel(dx, graph)
    if cfg.beta == 0 or cfg.layers == 0:
        return dx.copy()
    scale = (1.0 - cfg.beta) / (1.0 - cfg.beta ** (cfg.layers + 1))
    return scale * _horner(dx, graph, cfg.beta, cfg.layers)


def apply(dx, graph, cfg: SEvoConfig):
    """Dispatch on ``cfg.variant``; a missing graph means no smoothing."""
    if graph is None:
        return np.array(dx, dtype=np.float64, copy=True)
    if cfg.variant == "exact":
        return transform_exact(dx, graph, cfg.beta)
    if cfg.variant == "iterative":
        return transform_iterative(dx, graph, cfg)
    if cfg.variant == "neumann":
        return transform_neumann(dx, graph, cfg)
    return transform_rescaled(dx, graph, cfg)


def direction_warning(cfg: SEvoConfig):
    """Message when the iterative variant may reverse update directions, else None."""
    if cfg.variant == "iterative" and cfg.beta >= 0.5 and cfg.layers >= 1:
        return (
            f"iterative approximation with beta={cfg.beta} >= 0.5 is not guaranteed "
            "to be direction-aware; updates may oppose the gradient"
        )
    return None


def propagation_matrix(graph, cfg: SEvoConfig, cap=512):
    """Dense matrix of the linear map ``dx -> apply(dx)``, as CSR (diagnostics only)."""
    if graph.n_nodes > cap:
        raise DenseCapError(f"propagation matrix refused for {graph.n_nodes} nodes (cap {cap})")
    return from_dense(apply(np.eye(graph.n_nodes), graph, cfg), keep_zeros=True)


class SEvoTransformer(TransformerMixin, BaseEstimator):
    """Smooth embedding variations over a fixed item graph.

    Parameters
    ----------
    graph : SparseGraph
        Node graph; rows of the transformed matrices index its nodes.
    beta : float, default=0.99
        Smoothing strength in [0, 1).
    layers : int, default=3
        Number of propagation layers.
    variant : {'rescaled-neumann', 'neumann', 'iterative', 'exact'}
    """

    def __init__(self, graph=None, beta=0.99, layers=3, variant="rescaled-neumann"):
        self.graph = graph
        self.beta = beta
        self.layers = layers
        self.variant = variant

    def fit(self, X=None, y=None):
        if self.graph is None:
            raise ValidationError("SEvoTransformer requires a graph")
        self.config_ = SEvoConfig(self.beta, self.layers, self.variant)
        msg = direction_warning(self.config_)
        if msg:
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        self.n_nodes_ = self.graph.n_nodes
        return self

    def transform(self, X):
        from sklearn.utils.validation import check_array, check_is_fitted

        check_is_fitted(self, "config_")
        X = check_array(X, dtype=np.float64)
        return apply(X, self.graph, self.config_)

    def smoothness(self, X):
        return smoothness(X, self.graph)
