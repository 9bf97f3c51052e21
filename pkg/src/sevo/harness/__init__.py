"""Desk-scale recommendation harness: MF-BPR, evaluation, benchmarks."""
from .benchmark import BenchmarkResult, quadratic_benchmark
from .data import EvalSplit, SyntheticSpec, generate_synthetic, leave_one_out
from .evaluation import evaluate
from .model import MfModel, bpr_gradient, bpr_loss, smoothness_reg_gradient
from .training import BPRMatrixFactorization, NumericalError, TrainConfig, TrainResult, train

__all__ = [
    "BPRMatrixFactorization",
    "BenchmarkResult",
    "EvalSplit",
    "MfModel",
    "NumericalError",
    "SyntheticSpec",
    "TrainConfig",
    "TrainResult",
    "bpr_gradient",
    "bpr_loss",
    "evaluate",
    "generate_synthetic",
    "leave_one_out",
    "quadratic_benchmark",
    "smoothness_reg_gradient",
    "train",
]
