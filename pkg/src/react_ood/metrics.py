"""Detection metrics over ID / OOD score vectors, ID treated as positive.

Conventions:

* A sample is declared ID when ``score >= threshold``; ties at the threshold
  count as detections for both populations.
* FPR95 picks the threshold from the ID order statistics (no interpolation).
* AUROC is the Mann-Whitney statistic with ties counted as 1/2.
* AUPR integrates precision over recall with the trapezoid rule across every
  distinct score threshold, starting from (recall 0, precision of the top
  threshold) and ending at (recall 1, n_id / (n_id + n_ood)).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from react_ood.core import ReactError


@dataclass(frozen=True)
class EvalReport:
    fpr95: float
    auroc: float
    aupr: float
    lambda_threshold: float
    n_id: int
    n_ood: int

    def to_text(self) -> str:
        """Flat ``key=value`` lines; direction hints for the headline metrics."""
        lines = [
            f"fpr95={self.fpr95!r}",
            f"auroc={self.auroc!r}",
            f"aupr={self.aupr!r}",
            f"lambda={self.lambda_threshold!r}",
            f"n_id={self.n_id}",
            f"n_ood={self.n_ood}",
            "# fpr95: lower is better; auroc, aupr: higher is better",
        ]
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return asdict(self)


def _scores(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ReactError(f"{name} scores are empty")
    if not np.all(np.isfinite(arr)):
        raise ReactError(f"{name} scores contain non-finite values")
    return arr


def fpr_at_tpr(id_scores, ood_scores, tpr_target: float = 0.95) -> tuple[float, float]:
    """FPR on OOD at the largest ID-score threshold keeping TPR >= ``tpr_target``.

    Returns ``(fpr, threshold)``.
    """
    ids = np.sort(_scores(id_scores, "ID"))
    ood = _scores(ood_scores, "OOD")
    if not (0.0 < tpr_target <= 1.0):
        raise ValueError(f"tpr_target must lie in (0, 1], got {tpr_target}")
    n = ids.size
    # number of ID samples that must be kept; snap to avoid 0.95*n landing a hair above an integer
    keep = math.ceil(round(tpr_target * n, 9))
    lam = float(ids[n - keep])
    fpr = float(np.count_nonzero(ood >= lam)) / ood.size
    return fpr, lam


def auroc(id_scores, ood_scores) -> float:
    ids = _scores(id_scores, "ID")
    ood = _scores(ood_scores, "OOD")
    ranks = rankdata(np.concatenate([ids, ood]), method="average")
    n_id, n_ood = ids.size, ood.size
    u = ranks[:n_id].sum() - n_id * (n_id + 1) / 2.0
    return float(u / (n_id * n_ood))


def pr_curve(id_scores, ood_scores) -> tuple[np.ndarray, np.ndarray]:
    """(recall, precision) at each distinct threshold, highest threshold first."""
    ids = _scores(id_scores, "ID")
    ood = _scores(ood_scores, "OOD")
    scores = np.concatenate([ids, ood])
    is_id = np.concatenate([np.ones(ids.size), np.zeros(ood.size)])
    order = np.argsort(-scores, kind="mergesort")
    scores, is_id = scores[order], is_id[order]
    tp = np.cumsum(is_id)
    fp = np.cumsum(1.0 - is_id)
    # keep the last index of each tied run: threshold admits the whole run
    last = np.r_[np.flatnonzero(np.diff(scores) != 0), scores.size - 1]
    tp, fp = tp[last], fp[last]
    return tp / ids.size, tp / (tp + fp)


def aupr(id_scores, ood_scores) -> float:
    recall, precision = pr_curve(id_scores, ood_scores)
    recall = np.r_[0.0, recall]
    precision = np.r_[precision[0], precision]
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))


def evaluate(id_scores, ood_scores, tpr_target: float = 0.95) -> EvalReport:
    fpr, lam = fpr_at_tpr(id_scores, ood_scores, tpr_target)
    ids = _scores(id_scores, "ID")
    ood = _scores(ood_scores, "OOD")
    return EvalReport(
        fpr95=fpr,
        auroc=auroc(ids, ood),
        aupr=aupr(ids, ood),
        lambda_threshold=lam,
        n_id=ids.size,
        n_ood=ood.size,
    )
