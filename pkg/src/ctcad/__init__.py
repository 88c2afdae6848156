"""ctcad: chest-CT computer-aided diagnosis toolkit.

Pipeline: decode and normalize a CT image, run it through a densely
connected CNN feature extractor, classify the feature vector with a
Nu-SVM, and report metrics from stratified cross-validation.  A small
HTTP service exposes the trained pipeline for online prediction.
"""

__version__ = "0.1.0"

from ctcad.imaging import DecodeError, RawImage, decode_image, preprocess
from ctcad.backbone import (
    BundleError,
    LayerSpec,
    NetworkGraph,
    ReshapeError,
    ShapeError,
    forward,
    load_bundle,
    reshape_feature_grid,
    save_bundle,
)
from ctcad.svm import (
    DimError,
    InfeasibleNu,
    NuSvmConfig,
    NuSvmModel,
    decision_value,
    predict_label,
    rbf_kernel,
    train_nu_svm,
)
from ctcad.tuner import SearchSpace, TuneResult, bayes_optimize, expected_improvement
from ctcad.evaluation import (
    BadK,
    ConfusionCounts,
    CVReport,
    MetricSet,
    SingleClass,
    cross_validate,
    metrics_from_confusion,
    roc_auc,
    stratified_kfold,
)

__all__ = [
    "BadK",
    "BundleError",
    "ConfusionCounts",
    "CVReport",
    "DecodeError",
    "DimError",
    "InfeasibleNu",
    "LayerSpec",
    "MetricSet",
    "NetworkGraph",
    "NuSvmConfig",
    "NuSvmModel",
    "RawImage",
    "ReshapeError",
    "SearchSpace",
    "ShapeError",
    "SingleClass",
    "TuneResult",
    "bayes_optimize",
    "cross_validate",
    "decision_value",
    "decode_image",
    "expected_improvement",
    "forward",
    "load_bundle",
    "metrics_from_confusion",
    "predict_label",
    "preprocess",
    "rbf_kernel",
    "reshape_feature_grid",
    "roc_auc",
    "save_bundle",
    "stratified_kfold",
    "train_nu_svm",
]
