"""Post-hoc OOD detection by rectified activations (ReAct).

Percentile-calibrated activation clipping on penultimate features, the usual
logit/feature scores (MSP, ODIN, energy, Mahalanobis), detection metrics, the
closed-form rectified-Gaussian / epsilon-skew-normal activation model, and a
small numpy MLP for desk-scale experiments.
"""

from react_ood.core import ReactError, ShapeError, matmul, percentile, make_rng
from react_ood.featureio import ClassifierHead, FeaturePack, read_pack, write_pack
from react_ood.rectifier import RectifierConfig, calibrate, react, rectified_logits
from react_ood.scoring import (
    MahalanobisModel,
    OdinConfig,
    ScoreVector,
    energy_score,
    fit_mahalanobis,
    mahalanobis_score,
    msp_score,
    odin_score,
    score_pack,
    softmax,
)
from react_ood.metrics import EvalReport, aupr, auroc, evaluate, fpr_at_tpr

__version__ = "0.1.0"

__all__ = [
    "ReactError",
    "ShapeError",
    "matmul",
    "percentile",
    "make_rng",
    "FeaturePack",
    "ClassifierHead",
    "read_pack",
    "write_pack",
    "RectifierConfig",
    "calibrate",
    "react",
    "rectified_logits",
    "MahalanobisModel",
    "OdinConfig",
    "ScoreVector",
    "softmax",
    "msp_score",
    "energy_score",
    "odin_score",
    "fit_mahalanobis",
    "mahalanobis_score",
    "score_pack",
    "EvalReport",
    "fpr_at_tpr",
    "auroc",
    "aupr",
    "evaluate",
]
