"""Seeded synthetic ID blobs and OOD inputs for desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from react_ood.core import make_rng
from react_ood.featureio import FeaturePack


@dataclass(frozen=True)
class BlobSpec:
    """Gaussian clusters, one per class.

    ``means`` defaults to K random centres drawn from ``N(0, mean_scale^2 I)``
    with the BlobSpec's own seed, so train/test/OOD generators built from the same
    spec share class centres. The defaults keep ID inputs at a smaller scale
    than unit Gaussian noise.
    """

    n_classes: int = 5
    dim: int = 20
    samples_per_class: int = 500
    std: float = 0.5
    mean_scale: float = 0.5
    seed: int = 0
    means: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.n_classes < 2 or self.dim < 2:
            raise ValueError("need at least 2 classes and 2 dimensions")
        if not self.std > 0:
            raise ValueError("std must be positive")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.means is not None:
            means = np.asarray(self.means, dtype=np.float64)
            if means.shape != (self.n_classes, self.dim):
                raise ValueError(f"means must be {self.n_classes}x{self.dim}, got {means.shape}")
            object.__setattr__(self, "means", means)

    def class_means(self) -> np.ndarray:
        if self.means is not None:
            return self.means
        return make_rng(self.seed).normal(0.0, self.mean_scale, size=(self.n_classes, self.dim))


def _blobs(spec: BlobSpec, rng: np.random.Generator, scale: float, shift: np.ndarray):
    means = spec.class_means() + shift
    n = spec.samples_per_class
    labels = np.repeat(np.arange(spec.n_classes), n)
    x = means[labels] + rng.normal(0.0, spec.std * scale, size=(labels.size, spec.dim))
    return x, labels


def gen_id_blobs(spec: BlobSpec, seed: int | None = None, tag: str = "id") -> FeaturePack:
    """Labelled ID samples. ``seed`` picks the noise draw (default: ``spec.seed + 1``)."""
    rng = make_rng(spec.seed + 1 if seed is None else seed)
    x, labels = _blobs(spec, rng, 1.0, np.zeros(spec.dim))
    return FeaturePack(x, labels, tag, spec.n_classes)


def gen_ood_gaussian_noise(dim: int, n: int, seed: int, tag: str = "gaussian_noise") -> FeaturePack:
    return FeaturePack(make_rng(seed).standard_normal((n, dim)), tag=tag)


def gen_ood_shifted(
    spec: BlobSpec, scale: float, offset: float, seed: int, tag: str = "shifted"
) -> FeaturePack:
    """Blobs with std inflated by ``scale`` and centres moved ``offset`` along a random unit direction."""
    rng = make_rng(seed)
    direction = rng.standard_normal(spec.dim)
    direction /= np.linalg.norm(direction)
    x, _ = _blobs(spec, rng, scale, offset * direction)
    return FeaturePack(x, tag=tag)
