"""Threshold calibration and element-wise activation clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from react_ood.core import percentile
from react_ood.featureio import ClassifierHead, FeaturePack

DEFAULT_PERCENTILE = 90.0


@dataclass(frozen=True)
class RectifierConfig:
    """Clip level ``threshold_c`` and the ID percentile it came from.

    ``threshold_c == inf`` disables rectification.
    """

    percentile_p: float
    threshold_c: float

    def __post_init__(self) -> None:
        if not (0.0 < self.percentile_p <= 100.0):
            raise ValueError(f"percentile must lie in (0, 100], got {self.percentile_p}")
        if math.isnan(self.threshold_c) or self.threshold_c <= 0.0:
            raise ValueError(f"threshold must be positive, got {self.threshold_c}")

    @classmethod
    def disabled(cls) -> "RectifierConfig":
        return cls(100.0, math.inf)

    @property
    def enabled(self) -> bool:
        return math.isfinite(self.threshold_c)

    def to_text(self) -> str:
        return f"percentile={self.percentile_p!r}\nthreshold={self.threshold_c!r}\n"

    @classmethod
    def from_text(cls, text: str) -> "RectifierConfig":
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"malformed config line: {line!r}")
            fields[key.strip()] = float(value)
        try:
            return cls(fields["percentile"], fields["threshold"])
        except KeyError as exc:
            raise ValueError(f"config is missing {exc.args[0]!r}") from None


def calibrate(id_features: FeaturePack, p: float = DEFAULT_PERCENTILE) -> RectifierConfig:
    """Global clip threshold: nearest-rank p-th percentile of all ID activations."""
    c = percentile(id_features.features, p)
    if c <= 0.0:
        # all-nonpositive activations below the percentile: nothing above it to clip
        raise ValueError(
            f"calibrated threshold {c} is not positive; the {p}th percentile of the ID "
            "activations must be > 0"
        )
    return RectifierConfig(float(p), c)


def clip(values: np.ndarray, c: float) -> np.ndarray:
    if math.isinf(c):
        return values.copy()
    return np.minimum(values, c)


def react(features: FeaturePack, cfg: RectifierConfig) -> FeaturePack:
    return features.with_features(clip(features.features, cfg.threshold_c))


def rectified_logits(features: FeaturePack, head: ClassifierHead, cfg: RectifierConfig) -> np.ndarray:
    return head.logits(clip(features.features, cfg.threshold_c))
