"""Structure-aware embedding evolution: graph-smoothed optimizer updates."""
from .graph import (
    CategoryGraph,
    CooccurrenceGraph,
    InteractionLog,
    KnnGraph,
    KnnGraphConfig,
    SimilarityConfig,
    SparseGraph,
    build_from_categories,
    build_from_sequences,
    build_knn_from_embeddings,
    normalize,
)
from .optim import (
    BatchGradient,
    OptimizerConfig,
    OptimizerState,
    SEvoOptimizer,
    dense_param_step,
    step_adam,
    step_adamw,
    step_sgd,
)
from .sparse import CsrMatrix, ShapeError, ValidationError, spmm, symmetric_eigen_bounds, to_dense
from .transform import (
    SEvoConfig,
    SEvoTransformer,
    smoothness,
    transform_exact,
    transform_iterative,
    transform_neumann,
    transform_rescaled,
)

__version__ = "0.1.0"
