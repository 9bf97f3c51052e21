"""Separable quadratic benchmark for the convergence behaviour of SEvo.

``f(E, theta) = 0.5 ||E - E*||_F^2 + 0.5 ||theta - theta*||^2`` has an
identity Hessian, hence a gradient Lipschitz constant of 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import transform
from ..optim import OptimizerConfig, dense_param_step
from ..transform import SEvoConfig

DIVERGENCE_PATIENCE = 10


@dataclass
class BenchmarkResult:
    status: str  # converged | diverged | max_iter
    iterations: int
    trace: list = field(repr=False)

    @property
    def converged(self):
        return self.status == "converged"


def quadratic_loss(E, theta, e_star, theta_star):
    return 0.5 * float(np.sum((E - e_star) ** 2)) + 0.5 * float(np.sum((theta - theta_star) ** 2))


def quadratic_benchmark(
    graph,
    cfg: SEvoConfig,
    variant=None,
    lr=1.0,
    dense_lr=1.0,
    threshold=1e-6,
    max_iter=200_000,
    dim=4,
    theta_dim=4,
    seed=0,
    e_init=None,
    e_star=None,
    transform_fn=None,
) -> BenchmarkResult:
    """Gradient descent with smoothed embedding steps until ``f <= threshold``.

    ``transform_fn(dx, graph, cfg)`` overrides the dispatch on ``variant``.
    The run is declared diverged once the loss rises for ten consecutive
    steps or stops being finite.
    """
    if variant is not None:
        cfg = replace(cfg, variant=variant)
    smooth = transform_fn or transform.apply
    rng = np.random.default_rng(seed)
    n = graph.n_nodes
    e_star = rng.normal(size=(n, dim)) if e_star is None else np.asarray(e_star, dtype=np.float64)
    theta_star = rng.normal(size=theta_dim)
    E = np.zeros_like(e_star) if e_init is None else np.array(e_init, dtype=np.float64)
    theta = np.zeros(theta_dim)
    dense_cfg = OptimizerConfig(learning_rate=lr, dense_learning_rate=dense_lr)

    loss = quadratic_loss(E, theta, e_star, theta_star)
    trace = [loss]
    rising = 0
    for it in range(1, max_iter + 1):
        grad_e = E - e_star
        grad_theta = theta - theta_star
        E = E - lr * smooth(grad_e, graph, cfg)
        theta = dense_param_step(theta, grad_theta, dense_cfg)
        new = quadratic_loss(E, theta, e_star, theta_star)
        trace.append(new)
        if not np.isfinite(new):
            return BenchmarkResult("diverged", it, trace)
        rising = rising + 1 if new > loss else 0
        loss = new
        if loss <= threshold:
            return BenchmarkResult("converged", it, trace)
        if rising >= DIVERGENCE_PATIENCE:
            return BenchmarkResult("diverged", it, trace)
    return BenchmarkResult("max_iter", max_iter, trace)


def plain_gd_iterations(initial_gap_sq, lr, threshold):
    """Iterations of plain GD on ``0.5 ||x - x*||^2``; the gap shrinks by ``|1 - lr|``."""
    rate = abs(1.0 - lr)
    f = 0.5 * initial_gap_sq
    if f <= threshold:
        return 0
    if rate == 0:
        return 1
    # f_t = f_0 * rate^(2t)
    return int(np.ceil(np.log(threshold / f) / (2 * np.log(rate)) - 1e-12))
