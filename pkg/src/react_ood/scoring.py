"""OOD scores. Every score follows "higher means more in-distribution"."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from react_ood.core import ReactError, ShapeError, as_matrix, as_vector
from react_ood.featureio import ClassifierHead, FeaturePack
from react_ood.rectifier import RectifierConfig, clip, rectified_logits

logger = logging.getLogger(__name__)


class Method(str, enum.Enum):
    MSP = "msp"
    ODIN = "odin"
    ENERGY = "energy"
    MAHALANOBIS = "mahalanobis"


@dataclass(frozen=True)
class OdinConfig:
    temperature: float = 1000.0
    epsilon: float = 0.0

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")


@dataclass(frozen=True)
class ScoreVector:
    values: np.ndarray
    method: Method
    react_applied: bool

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MahalanobisModel:
    """Class means (K x m) and the precision matrix of the tied covariance."""

    class_means: np.ndarray
    precision: np.ndarray

    def __post_init__(self) -> None:
        means = as_matrix(self.class_means, "class_means")
        prec = as_matrix(self.precision, "precision")
        m = means.shape[1]
        if prec.shape != (m, m):
            raise ShapeError(f"precision must be {m}x{m}, got {prec.shape}", prec.shape, means.shape)
        if not np.allclose(prec, prec.T, rtol=0.0, atol=1e-8):
            raise ValueError("precision matrix is not symmetric")
        object.__setattr__(self, "_chol", np.linalg.cholesky(prec))

    @property
    def k(self) -> int:
        return self.class_means.shape[0]

    def to_pack(self) -> FeaturePack:
        """Means stacked over the precision rows; K stored in the pack header."""
        return FeaturePack(
            np.vstack([self.class_means, self.precision]), tag="mahalanobis", n_classes=self.k
        )

    @classmethod
    def from_pack(cls, pack: FeaturePack) -> "MahalanobisModel":
        k, m = pack.n_classes, pack.m
        if k <= 0 or pack.n != k + m:
            raise ShapeError(
                f"Mahalanobis pack must be (K+m) x m with K in the header, got {pack.n}x{m}, K={k}",
                (pack.n, m),
            )
        return cls(pack.features[:k], pack.features[k:])


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Max-subtracted softmax along the last axis."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def msp_score(logits_row) -> float:
    return float(softmax(as_vector(logits_row, "logits")).max())


def odin_score(logits_row, cfg: OdinConfig = OdinConfig()) -> float:
    """Temperature-scaled MSP. Input perturbation happens upstream (smallnet)."""
    return float(softmax(as_vector(logits_row, "logits"), cfg.temperature).max())


def energy_score(logits_row) -> float:
    """Negative energy, ``logsumexp(logits)``."""
    return float(logsumexp(as_vector(logits_row, "logits")))


def msp_scores(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    return softmax(logits, temperature).max(axis=1)


def energy_scores(logits: np.ndarray) -> np.ndarray:
    return logsumexp(logits, axis=1)


def fit_mahalanobis(id_features: FeaturePack, n_classes: int | None = None) -> MahalanobisModel:
    """Class means plus the inverse of the pooled within-class covariance.

    The covariance divisor is N (all samples). If its Cholesky factorization
    fails, a ridge of ``1e-6 * trace / m`` is added to the diagonal.
    """
    if id_features.labels is None:
        raise ReactError("fit_mahalanobis needs labelled features")
    x = id_features.features
    y = id_features.labels
    k = n_classes or id_features.n_classes or int(y.max()) + 1
    if y.max() >= k:
        raise ValueError(f"label {y.max()} out of range for K={k}")
    means = np.empty((k, x.shape[1]))
    centered = np.empty_like(x)
    for cls_idx in range(k):
        mask = y == cls_idx
        if not mask.any():
            raise ReactError(f"class {cls_idx} has no samples")
        means[cls_idx] = x[mask].mean(axis=0)
        centered[mask] = x[mask] - means[cls_idx]
    cov = centered.T @ centered / x.shape[0]
    cov = (cov + cov.T) / 2
    m = cov.shape[0]
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        ridge = 1e-6 * np.trace(cov) / m
        if ridge <= 0:
            ridge = 1e-6
        logger.warning("tied covariance is singular; adding ridge %.3g to the diagonal", ridge)
        cov = cov + ridge * np.eye(m)
        chol = linalg.cholesky(cov, lower=True)
    inv_chol = linalg.solve_triangular(chol, np.eye(m), lower=True)
    precision = inv_chol.T @ inv_chol
    return MahalanobisModel(means, (precision + precision.T) / 2)


def mahalanobis_scores(features: np.ndarray, model: MahalanobisModel) -> np.ndarray:
    """``max_k -(x - mu_k)^T P (x - mu_k)`` for each row of ``features``."""
    features = as_matrix(features, "features")
    if features.shape[1] != model.class_means.shape[1]:
        raise ShapeError(
            f"feature width {features.shape[1]} != model width {model.class_means.shape[1]}",
            features.shape,
            model.class_means.shape,
        )
    # with P = L L^T, the quadratic form is ||L^T d||^2
    chol = model._chol  # type: ignore[attr-defined]
    diff = features[:, None, :] - model.class_means[None, :, :]
    proj = diff @ chol
    dist = np.einsum("nkm,nkm->nk", proj, proj)
    return -dist.min(axis=1)


def mahalanobis_score(feature_row, model: MahalanobisModel) -> float:
    return float(mahalanobis_scores(as_vector(feature_row, "feature")[None, :], model)[0])


def score_pack(
    features: FeaturePack,
    head: ClassifierHead | None,
    method: Method | str,
    react_cfg: RectifierConfig | None = None,
    *,
    odin: OdinConfig | None = None,
    mahalanobis: MahalanobisModel | None = None,
    react_mahalanobis: bool = False,
) -> ScoreVector:
    """Score every row of ``features``.

    Logit-based methods read the rectified logits (``react_cfg=None`` means no
    clipping). Mahalanobis works on features and clips them only when
    ``react_mahalanobis`` is set.
    """
    method = Method(method)
    cfg = react_cfg or RectifierConfig.disabled()
    if method is Method.MAHALANOBIS:
        if mahalanobis is None:
            raise ReactError("mahalanobis scoring needs a fitted MahalanobisModel")
        x = clip(features.features, cfg.threshold_c) if react_mahalanobis else features.features
        values = mahalanobis_scores(x, mahalanobis)
        applied = react_mahalanobis and cfg.enabled
    else:
        if head is None:
            raise ReactError(f"{method.value} scoring needs a classifier head")
        logits = rectified_logits(features, head, cfg)
        if method is Method.MSP:
            values = msp_scores(logits)
        elif method is Method.ENERGY:
            values = energy_scores(logits)
        else:
            if odin is None:
                raise ReactError("odin scoring needs an OdinConfig")
            values = msp_scores(logits, odin.temperature)
        applied = cfg.enabled
    if not np.all(np.isfinite(values)):
        raise ReactError("non-finite scores")
    return ScoreVector(values, method, applied)

