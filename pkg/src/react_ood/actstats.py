"""Per-unit activation statistics and ID/OOD signature comparison."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.stats import skew

from react_ood.core import ReactError, ShapeError
from react_ood.featureio import FeaturePack


@dataclass(frozen=True)
class UnitStats:
    """Column means/stds of an activation matrix.

    ``skewness`` is the adjusted Fisher-Pearson coefficient of the per-unit
    means. It is undefined for constant means or fewer than three units, in
    which case it is reported as 0 and ``skewness_defined`` is False.
    """

    means: np.ndarray
    stds: np.ndarray
    skewness: float
    skewness_defined: bool
    n_samples: int

    @property
    def n_units(self) -> int:
        return self.means.shape[0]

    @property
    def spread_of_means(self) -> float:
        """Cross-unit standard deviation of the per-unit means."""
        return float(self.means.std(ddof=1)) if self.n_units > 1 else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("unit,mean,std\n")
        for i, (mean, std) in enumerate(zip(self.means, self.stds)):
            buf.write(f"{i},{float(mean)!r},{float(std)!r}\n")
        return buf.getvalue()


def unit_stats(features: FeaturePack | np.ndarray) -> UnitStats:
    x = features.features if isinstance(features, FeaturePack) else np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ReactError(f"unit_stats needs at least 2 rows, got shape {x.shape}")
    means = x.mean(axis=0)
    stds = x.std(axis=0, ddof=1)
    g1 = float("nan")
    if means.size >= 3 and np.ptp(means) > 1e-12 * max(1.0, float(np.abs(means).max())):
        g1 = float(skew(means, bias=False))
    defined = bool(np.isfinite(g1))
    return UnitStats(means, stds, g1 if defined else 0.0, defined, x.shape[0])


@dataclass(frozen=True)
class SignatureReport:
    spread_ratio: float
    id_skewness: float
    ood_skewness: float

    @property
    def skew_delta(self) -> float:
        return self.ood_skewness - self.id_skewness

    def to_text(self) -> str:
        return (
            f"spread_ratio={self.spread_ratio!r}\n"
            f"id_skewness={self.id_skewness!r}\n"
            f"ood_skewness={self.ood_skewness!r}\n"
        )


def compare_signatures(id_stats: UnitStats, ood_stats: UnitStats) -> SignatureReport:
    """Ratio of OOD to ID cross-unit spread of means, plus both skewness values."""
    if id_stats.n_units != ood_stats.n_units:
        raise ShapeError(
            f"unit count mismatch: {id_stats.n_units} vs {ood_stats.n_units}",
            id_stats.means.shape,
            ood_stats.means.shape,
        )
    id_spread = id_stats.spread_of_means
    ood_spread = ood_stats.spread_of_means
    if id_spread == 0.0:
        ratio = 1.0 if ood_spread == 0.0 else float("inf")
    else:
        ratio = ood_spread / id_spread
    return SignatureReport(ratio, id_stats.skewness, ood_stats.skewness)


def means_csv(id_stats: UnitStats, ood_stats: UnitStats) -> str:
    lines = ["unit,id_mean,ood_mean"]
    for i, (a, b) in enumerate(zip(id_stats.means, ood_stats.means)):
        lines.append(f"{i},{float(a)!r},{float(b)!r}")
    return "\n".join(lines) + "\n"
