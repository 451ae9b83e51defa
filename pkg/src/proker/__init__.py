"""Training-free few-shot adaptation of frozen linear classifiers.

The package corrects the logits of a frozen classifier with a handful of
labeled examples per class, using kernel estimators that need no gradient
training: an additive cache, a proximally-regularized locally-constant
fit, a per-query locally-affine fit, and a global kernel ridge regression
on the classifier's residuals, optionally compressed with random Fourier
features so memory no longer grows with the support set.
"""

from .adapters import (
    METHODS,
    AdapterConfig,
    Logits,
    ProKeRModel,
    llr_predict,
    load_model,
    predict,
    proker_fit,
    proker_predict,
    proximal_nw_predict,
    save_model,
    tip_predict,
    zero_shot,
)
from .errors import DataError, ProkerError, SolverError
from .featurestore import (
    FeatureSet,
    FewShotTask,
    OneHotLabels,
    TextClassifier,
    ensure_unit_norm,
    l2_normalize,
    load_featureset,
    load_text_classifier,
    one_hot,
    sample_task,
    save_featureset,
    save_text_classifier,
)
from .harness import EvalReport, EvalRow, SweepGrid, SynthSpec, emit_report, evaluate, sweep, synth_generate
from .kernels import GramMatrix, KernelSpec, OutputKernel, gram, kernel_eval, kernel_row, median_heuristic_beta
from .metrics import PrecisionEstimate, estimate_precision, mahalanobis_sq
from .spectral import (
    FourierMap,
    PrototypeModel,
    build_fourier_map,
    compress,
    featurize,
    load_prototype_model,
    prototype_predict,
    save_prototype_model,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig", "DataError", "EvalReport", "EvalRow", "FeatureSet",
    "FewShotTask", "FourierMap", "GramMatrix", "KernelSpec", "Logits",
    "METHODS", "OneHotLabels", "OutputKernel", "PrecisionEstimate",
    "ProKeRModel", "ProkerError", "PrototypeModel", "SolverError",
    "SweepGrid", "SynthSpec", "TextClassifier", "build_fourier_map",
    "compress", "emit_report", "ensure_unit_norm", "estimate_precision",
    "evaluate", "featurize", "gram", "kernel_eval", "kernel_row",
    "l2_normalize", "llr_predict", "load_featureset", "load_model",
    "load_prototype_model", "load_text_classifier", "mahalanobis_sq",
    "median_heuristic_beta", "one_hot", "predict", "proker_fit",
    "proker_predict", "prototype_predict", "proximal_nw_predict",
    "sample_task", "save_featureset", "save_model", "save_prototype_model",
    "save_text_classifier", "sweep", "synth_generate", "tip_predict",
    "zero_shot",
]
