"""Risk-calibrated cross-entropy, baseline losses, a small numpy trainer and
a three-tier (visual ambiguity / Type I / Type II) error evaluator."""

from .hierarchy import (
    ClassTaxonomy,
    ErrorKind,
    SeverityMatrix,
    build_severity_matrix,
    classify_confusion,
    load_taxonomy,
    preset_taxonomy,
)
from .losses import (
    LossConfig,
    LossResult,
    LossSpec,
    batch_loss,
    ce_loss,
    class_weights_from_counts,
    focal_loss,
    label_smoothing_loss,
    rcl_loss,
    softmax,
    wce_loss,
)
from .metrics import (
    ConfusionMatrix,
    TaxonomyReport,
    accuracy,
    cer,
    confusion_matrix,
    f1_macro,
    taxonomy_report,
)

__version__ = "0.1.0"

__all__ = [
    "ClassTaxonomy",
    "ErrorKind",
    "SeverityMatrix",
    "build_severity_matrix",
    "classify_confusion",
    "load_taxonomy",
    "preset_taxonomy",
    "LossConfig",
    "LossResult",
    "LossSpec",
    "batch_loss",
    "ce_loss",
    "class_weights_from_counts",
    "focal_loss",
    "label_smoothing_loss",
    "rcl_loss",
    "softmax",
    "wce_loss",
    "ConfusionMatrix",
    "TaxonomyReport",
    "accuracy",
    "cer",
    "confusion_matrix",
    "f1_macro",
    "taxonomy_report",
]
