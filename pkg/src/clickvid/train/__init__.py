from .losses import (
    LossValue,
    hard_aware_loss,
    listwise_loss,
    pair_loss,
    plackett_log_prob,
    plackett_prob,
    relevance,
    softmax_ce,
    triplet_loss,
)
from .loop import (
    CATEGORY,
    FEATURE,
    CategorySamples,
    FeatureSamples,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history,
)
from .network import (
    CategoryBatch,
    FeatureBatch,
    category_loss,
    embed,
    ensemble_scores,
    feature_loss,
    init_params,
    predict_categories,
    predict_category,
)

__all__ = [
    "CATEGORY",
    "FEATURE",
    "CategoryBatch",
    "CategorySamples",
    "FeatureBatch",
    "FeatureSamples",
    "LossValue",
    "TrainConfig",
    "TrainResult",
    "category_loss",
    "embed",
    "ensemble_scores",
    "feature_loss",
    "hard_aware_loss",
    "init_params",
    "listwise_loss",
    "load_checkpoint",
    "pair_loss",
    "plackett_log_prob",
    "plackett_prob",
    "predict_categories",
    "predict_category",
    "relevance",
    "save_checkpoint",
    "softmax_ce",
    "train",
    "triplet_loss",
    "write_history",
]
