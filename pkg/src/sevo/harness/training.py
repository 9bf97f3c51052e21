"""MF-BPR training loop with SEvo-smoothed item updates."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from ..graph import SimilarityConfig, build_from_sequences
from ..optim import BatchGradient, OptimizerConfig, SEvoOptimizer
from ..sparse import ValidationError
from ..transform import SEvoConfig, direction_warning, smoothness
from .evaluation import evaluate
from .model import MfModel, NegativeSampler, bpr_gradient, smoothness_reg_gradient

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or parameters."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    dim: int = 32
    epochs: int = 30
    batch_size: int = 256
    optimizer: str = "adamw"
    init_std: float = 0.02
    reg_weight: float = 0.0
    eval_every: int = 0
    select_best: bool = False  # report test metrics of the best-validation epoch
    select_metric: str = "NDCG@10"
    Ns: list = field(default_factory=lambda: [1, 5, 10])
    mask_history: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("dim and batch_size must be >= 1, epochs >= 0")
        if self.optimizer not in ("adamw", "adam", "sgd"):
            raise ValidationError("optimizer must be adamw, adam or sgd")
        if self.reg_weight < 0:
            raise ValidationError("reg_weight must be >= 0")
        self.Ns = [int(n) for n in self.Ns]

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: MfModel
    history: list  # one dict per epoch
    evaluations: list  # (epoch, validation metrics)
    test_metrics: dict
    best_epoch: int | None = None
    optimizers: dict = field(default_factory=dict)  # "items"/"users" -> SEvoOptimizer


def _training_pairs(sequences):
    users, items = [], []
    for u in sorted(sequences):
        seq = sequences[u]
        users.extend([u] * len(seq))
        items.extend(seq)
    return np.array(users, dtype=np.int64), np.array(items, dtype=np.int64)


def _norms(info):
    return {
        "delta_norm": float(np.linalg.norm(info.delta)),
        "update_norm": float(np.linalg.norm(info.update)),
        "delta_finite": bool(np.all(np.isfinite(info.delta))),
    }


def train(split, graph, train_cfg: TrainConfig, opt_cfg: OptimizerConfig) -> TrainResult:
    """Train MF-BPR on ``split.train``; item updates are smoothed over ``graph``.

    The user table is updated by the same optimizer without smoothing.
    """
    msg = direction_warning(opt_cfg.sevo)
    if msg:
        log.warning(msg)
    n_items = split.train.n_items
    n_users = max(split.train.user_sequences, default=-1) + 1
    rng = np.random.default_rng(train_cfg.seed)
    model = MfModel.init(n_users, n_items, train_cfg.dim, train_cfg.init_std, seed=train_cfg.seed)
    sampler = NegativeSampler(split.train.user_sequences, n_items, rng)
    item_opt = SEvoOptimizer(train_cfg.optimizer, opt_cfg, graph, model.item_embeddings.shape)
    user_opt = SEvoOptimizer(train_cfg.optimizer, opt_cfg, None, model.user_embeddings.shape)
    pair_users, pair_items = _training_pairs(split.train.user_sequences)

    history, evaluations = [], []
    info = None
    best = (-np.inf, None, None)  # (valid score, epoch, test metrics)
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(pair_users))
        epoch_loss = raw_s = smooth_s = 0.0
        n_batches = 0
        for lo in range(0, len(order), train_cfg.batch_size):
            idx = order[lo : lo + train_cfg.batch_size]
            users, pos = pair_users[idx], pair_items[idx]
            neg = sampler.sample(users)
            item_grad, user_grad, loss = bpr_gradient(model, users, pos, neg)
            if train_cfg.reg_weight:
                reg = smoothness_reg_gradient(model.item_embeddings, graph, train_cfg.reg_weight)
                item_grad = BatchGradient.dense(item_grad.gradient + reg)
                loss += train_cfg.reg_weight * smoothness(model.item_embeddings, graph)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}",
                    {"epoch": epoch, "step": item_opt.state.step, **(_norms(info) if info else {})},
                )
            info = item_opt.step(model.item_embeddings, item_grad)
            user_opt.step(model.user_embeddings, user_grad)
            epoch_loss += loss
            if graph is not None:
                raw_s += smoothness(info.delta, graph)
                smooth_s += smoothness(info.update, graph)
            n_batches += 1
        if not (np.all(np.isfinite(model.item_embeddings)) and np.all(np.isfinite(model.user_embeddings))):
            raise NumericalError(
                f"non-finite parameters after epoch {epoch}",
                {"epoch": epoch, "step": item_opt.state.step, **_norms(info)},
            )
        n_batches = max(n_batches, 1)
        row = {
            "step": item_opt.state.step,
            "epoch": epoch,
            "loss": epoch_loss / max(len(order), 1),
            "smoothness": smoothness(model.item_embeddings, graph) if graph is not None else float("nan"),
            "raw_delta_smoothness": raw_s / n_batches if graph is not None else float("nan"),
            "smoothed_delta_smoothness": smooth_s / n_batches if graph is not None else float("nan"),
        }
        history.append(row)
        if train_cfg.eval_every and epoch % train_cfg.eval_every == 0:
            valid = evaluate(model, split, train_cfg.Ns, "valid", train_cfg.mask_history)
            evaluations.append((epoch, valid))
            if train_cfg.select_best and valid[train_cfg.select_metric] > best[0]:
                test = evaluate(model, split, train_cfg.Ns, "test", train_cfg.mask_history)
                best = (valid[train_cfg.select_metric], epoch, test)
    opts = {"items": item_opt, "users": user_opt}
    if train_cfg.select_best and best[1] is not None:
        return TrainResult(model, history, evaluations, best[2], best[1], opts)
    test_metrics = evaluate(model, split, train_cfg.Ns, "test", train_cfg.mask_history)
    return TrainResult(model, history, evaluations, test_metrics, train_cfg.epochs, opts)


def layer_sweep(split, graph, train_cfg, opt_cfg, layers=range(6)):
    """Test metrics for each layer count; a report, peak location is data-dependent."""
    rows = []
    for L in layers:
        cfg = replace(opt_cfg, sevo=replace(opt_cfg.sevo, layers=int(L)))
        rows.append((int(L), train(split, graph, train_cfg, cfg).test_metrics))
    return rows


def window_sweep(split, windows, train_cfg, opt_cfg, slices=("first", "last"), sim_cfg=None):
    """Test metrics for graphs built from the first/last K items of each sequence."""
    sim_cfg = sim_cfg or SimilarityConfig()
    rows = []
    for sl in slices:
        for K in windows:
            graph = build_from_sequences(split.train, replace(sim_cfg, window=int(K), slice=sl))
            result = train(split, graph, train_cfg, opt_cfg)
            rows.append((sl, int(K), graph.nnz, result.test_metrics))
    return rows


class BPRMatrixFactorization(BaseEstimator):
    """MF-BPR recommender trained with a SEvo-enhanced optimizer.

    ``fit`` takes an :class:`InteractionLog` of training sequences (or an
    :class:`EvalSplit`, whose ``train`` part is used). With ``graph=None``
    an item co-occurrence graph is built from the training sequences.
    """

    def __init__(
        self,
        graph=None,
        dim=32,
        epochs=30,
        batch_size=256,
        optimizer="adamw",
        learning_rate=1e-3,
        beta1=0.9,
        beta2=0.999,
        momentum=0.9,
        weight_decay=0.0,
        epsilon=1e-8,
        moment_correction=True,
        beta=0.99,
        layers=3,
        variant="rescaled-neumann",
        reg_weight=0.0,
        init_std=0.02,
        random_state=0,
    ):
        self.graph = graph
        self.dim = dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epsilon = epsilon
        self.moment_correction = moment_correction
        self.beta = beta
        self.layers = layers
        self.variant = variant
        self.reg_weight = reg_weight
        self.init_std = init_std
        self.random_state = random_state

    def _configs(self):
        sevo = SEvoConfig(self.beta, self.layers, self.variant)
        opt = OptimizerConfig(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            epsilon=self.epsilon,
            moment_correction=self.moment_correction,
            sevo=sevo,
        )
        tcfg = TrainConfig(
            dim=self.dim,
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            init_std=self.init_std,
            reg_weight=self.reg_weight,
            seed=self.random_state,
        )
        return tcfg, opt

    def fit(self, X, y=None):
        from .data import EvalSplit

        split = X if isinstance(X, EvalSplit) else EvalSplit(X, {}, {})
        graph = self.graph if self.graph is not None else build_from_sequences(split.train)
        tcfg, opt = self._configs()
        result = train(split, graph, tcfg, opt)
        self.graph_ = graph
        self.model_ = result.model
        self.history_ = result.history
        self.n_items_ = split.train.n_items
        return self

    def decision_function(self, users):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "model_")
        return self.model_.scores(np.asarray(users, dtype=np.int64))

    def predict(self, users, n=10):
        """Top-``n`` item ids per user, best first (ties to lower id)."""
        scores = self.decision_function(users)
        order = np.lexsort((np.broadcast_to(np.arange(scores.shape[1]), scores.shape), -scores), axis=1)
        return order[:, :n]

    def score(self, split, y=None, N=10):
        """Test NDCG@N on a leave-one-out split."""
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "model_")
        return evaluate(self.model_, split, [N], "test")[f"NDCG@{N}"]
