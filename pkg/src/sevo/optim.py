"""SGD with momentum, Adam and AdamW whose embedding updates pass through SEvo.

Step functions update the embedding matrix and the optimizer state in place
and return the raw and smoothed variations for diagnostics.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import transform
from .sparse import ShapeError, ValidationError
from .transform import SEvoConfig

CHECKPOINT_FORMAT = "sevo-optimizer-state"
CHECKPOINT_VERSION = 1


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    momentum: float = 0.9
    weight_decay: float = 0.0
    epsilon: float = 1e-8
    moment_correction: bool = True
    dense_learning_rate: float | None = None  # None: same as learning_rate
    sevo: SEvoConfig = field(default_factory=SEvoConfig)

    def __post_init__(self):
        if isinstance(self.sevo, dict):
            self.sevo = SEvoConfig(**self.sevo)
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        for name in ("beta1", "beta2", "momentum"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValidationError(f"{name} must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be > 0")
        if self.dense_learning_rate is not None and not self.dense_learning_rate > 0:
            raise ValidationError("dense_learning_rate must be > 0")

    @property
    def dense_lr(self):
        return self.learning_rate if self.dense_learning_rate is None else self.dense_learning_rate

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape), 0)


@dataclass
class BatchGradient:
    """Gradient of the loss w.r.t. an embedding table and the rows it touches.

    Rows outside ``sampled`` must be exactly zero. A sampled row may be zero.
    """

    gradient: np.ndarray
    sampled: np.ndarray

    def __post_init__(self):
        self.gradient = np.asarray(self.gradient, dtype=np.float64)
        self.sampled = np.unique(np.asarray(self.sampled, dtype=np.int64))
        if self.gradient.ndim != 2:
            raise ShapeError("gradient must be 2-D")
        n = self.gradient.shape[0]
        if len(self.sampled) and (self.sampled[0] < 0 or self.sampled[-1] >= n):
            raise ValidationError("sampled index out of range")

    @classmethod
    def dense(cls, gradient):
        """Every row counts as sampled."""
        gradient = np.asarray(gradient, dtype=np.float64)
        return cls(gradient, np.arange(gradient.shape[0]))

    def mask(self):
        m = np.zeros(self.gradient.shape[0], dtype=bool)
        m[self.sampled] = True
        return m

    def validate(self):
        idle = ~self.mask()
        if np.any(self.gradient[idle] != 0):
            raise ValidationError("gradient has nonzero rows outside the sampled set")


class StepInfo(NamedTuple):
    delta: np.ndarray  # variation before smoothing
    update: np.ndarray  # variation after smoothing


def _check(embeddings, grad, state):
    if not isinstance(grad, BatchGradient):
        grad = BatchGradient.dense(grad)
    if grad.gradient.shape != embeddings.shape:
        raise ShapeError(f"gradient {grad.gradient.shape} does not match embeddings {embeddings.shape}")
    if state.first_moment.shape != embeddings.shape or state.second_moment.shape != embeddings.shape:
        raise ShapeError("optimizer state does not match embeddings")
    grad.validate()
    return grad


def step_adamw(embeddings, grad, state, cfg: OptimizerConfig, graph=None) -> StepInfo:
    """One SEvo-AdamW step: moments per node, smoothed update, decoupled decay."""
    grad = _check(embeddings, grad, state)
    b1, b2 = cfg.beta1, cfg.beta2
    state.step += 1
    t = state.step
    M, V, G = state.first_moment, state.second_moment, grad.gradient
    active = grad.mask()
    idle = ~active

    M[active] = b1 * M[active] + (1 - b1) * G[active]
    V[active] = b2 * V[active] + (1 - b2) * G[active] ** 2
    if cfg.moment_correction and t >= 2:
        # idle rows: estimate the missing gradient from the unbiased moments
        M[idle] = b1 * M[idle] + (1 - b1) / (1 - b1 ** (t - 1)) * M[idle]
        V[idle] = b2 * V[idle] + (1 - b2) / (1 - b2 ** (t - 1)) * V[idle]
    else:
        M[idle] *= b1
        V[idle] *= b2

    m_hat = M / (1 - b1**t)
    v_hat = V / (1 - b2**t)
    delta = m_hat / np.sqrt(v_hat + cfg.epsilon)
    update = transform.apply(delta, graph, cfg.sevo)
    decay = cfg.learning_rate * cfg.weight_decay * embeddings
    embeddings -= cfg.learning_rate * update
    if cfg.weight_decay:
        embeddings -= decay
    return StepInfo(delta, update)


def step_adam(embeddings, grad, state, cfg: OptimizerConfig, graph=None) -> StepInfo:
    """One SEvo-Adam step; weight decay is folded into the gradient."""
    grad = _check(embeddings, grad, state)
    b1, b2 = cfg.beta1, cfg.beta2
    state.step += 1
    t = state.step
    G = grad.gradient + cfg.weight_decay * embeddings if cfg.weight_decay else grad.gradient
    state.first_moment[:] = b1 * state.first_moment + (1 - b1) * G
    state.second_moment[:] = b2 * state.second_moment + (1 - b2) * G**2
    m_hat = state.first_moment / (1 - b1**t)
    v_hat = state.second_moment / (1 - b2**t)
    delta = m_hat / np.sqrt(v_hat + cfg.epsilon)
    update = transform.apply(delta, graph, cfg.sevo)
    embeddings -= cfg.learning_rate * update
    return StepInfo(delta, update)


def step_sgd(embeddings, grad, state, cfg: OptimizerConfig, graph=None) -> StepInfo:
    """One SEvo-SGD step with heavy-ball momentum ``M <- mu M + G``."""
    grad = _check(embeddings, grad, state)
    state.step += 1
    G = grad.gradient + cfg.weight_decay * embeddings if cfg.weight_decay else grad.gradient
    state.first_moment[:] = cfg.momentum * state.first_moment + G
    delta = state.first_moment.copy()
    update = transform.apply(delta, graph, cfg.sevo)
    embeddings -= cfg.learning_rate * update
    return StepInfo(delta, update)


def dense_param_step(params, grad, cfg: OptimizerConfig):
    """Plain gradient step on non-embedding parameters, never smoothed."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ShapeError(f"gradient {grad.shape} does not match parameters {params.shape}")
    return params - cfg.dense_lr * grad


STEPS = {"adamw": step_adamw, "adam": step_adam, "sgd": step_sgd}


class SEvoOptimizer:
    """Stateful wrapper: one optimizer state bound to one embedding table."""

    def __init__(self, kind, cfg: OptimizerConfig, graph=None, shape=None):
        if kind not in STEPS:
            raise ValidationError(f"optimizer must be one of {sorted(STEPS)}")
        self.kind = kind
        self.cfg = cfg
        self.graph = graph
        self.state = None if shape is None else OptimizerState.zeros(shape)

    def step(self, embeddings, grad) -> StepInfo:
        if self.state is None:
            self.state = OptimizerState.zeros(embeddings.shape)
        return STEPS[self.kind](embeddings, grad, self.state, self.cfg, self.graph)


def save_state(path, state: OptimizerState, cfg: OptimizerConfig):
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg.config_hash(),
        "step": state.step,
        "shape": list(state.first_moment.shape),
        "first_moment": state.first_moment.ravel().tolist(),
        "second_moment": state.second_moment.ravel().tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_state(path, cfg: OptimizerConfig | None = None) -> OptimizerState:
    """Read a checkpoint; with ``cfg`` given, its hash must match the stored one."""
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path} is not an optimizer checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {blob.get('version')}")
    if cfg is not None and blob["config_hash"] != cfg.config_hash():
        raise ValidationError("checkpoint was written under a different optimizer config")
    shape = tuple(blob["shape"])
    m = np.asarray(blob["first_moment"], dtype=np.float64).reshape(shape)
    v = np.asarray(blob["second_moment"], dtype=np.float64).reshape(shape)
    if np.any(v < 0):
        raise ValidationError("second moment must be non-negative")
    return OptimizerState(m, v, int(blob["step"]))
