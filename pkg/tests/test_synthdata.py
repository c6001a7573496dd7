import numpy as np
import pytest

from react_ood.synthdata import BlobSpec, gen_id_blobs, gen_ood_gaussian_noise, gen_ood_shifted


def test_sample_count_and_labels():
    spec = BlobSpec(n_classes=4, dim=3, samples_per_class=25)
    pack = gen_id_blobs(spec)
    assert pack.features.shape == (100, 3)
    np.testing.assert_array_equal(np.bincount(pack.labels), [25] * 4)
    assert pack.n_classes == 4


def test_class_means_recovered():
    spec = BlobSpec(n_classes=3, dim=5, samples_per_class=2000, std=0.7, mean_scale=2.0, seed=3)
    pack = gen_id_blobs(spec)
    tol = 4 * spec.std / np.sqrt(spec.samples_per_class)
    for k, mean in enumerate(spec.class_means()):
        assert np.all(np.abs(pack.features[pack.labels == k].mean(0) - mean) < tol)


def test_explicit_means():
    means = np.array([[0.0, 0.0], [5.0, 5.0]])
    spec = BlobSpec(n_classes=2, dim=2, means=means)
    np.testing.assert_array_equal(spec.class_means(), means)
    with pytest.raises(ValueError):
        BlobSpec(n_classes=3, dim=2, means=means)


def test_seed_reproducible_and_distinct():
    spec = BlobSpec(seed=5)
    assert gen_id_blobs(spec, seed=1) == gen_id_blobs(spec, seed=1)
    assert not np.array_equal(gen_id_blobs(spec, seed=1).features, gen_id_blobs(spec, seed=2).features)
    assert gen_ood_gaussian_noise(4, 10, 7) == gen_ood_gaussian_noise(4, 10, 7)
    assert gen_ood_shifted(spec, 3.0, 4.0, 9) == gen_ood_shifted(spec, 3.0, 4.0, 9)


def test_gaussian_noise_moments():
    pack = gen_ood_gaussian_noise(10, 20000, seed=0)
    assert pack.features.shape == (20000, 10)
    n = pack.features.size
    assert abs(pack.features.mean()) < 4 / np.sqrt(n)
    assert abs(pack.features.var() - 1) < 4 * np.sqrt(2 / n)
    assert pack.labels is None


def test_shifted_identity_matches_id():
    spec = BlobSpec(n_classes=2, dim=4, samples_per_class=5000, std=0.5, seed=1)
    ood = gen_ood_shifted(spec, 1.0, 0.0, seed=2).features
    ind = gen_id_blobs(spec, seed=3)
    n = ood.shape[0]
    tol = 4 * np.sqrt(ind.features.var(0) / n)
    assert np.all(np.abs(ood.mean(0) - ind.features.mean(0)) < tol * np.sqrt(2))


def test_shifted_variance_and_offset():
    spec = BlobSpec(n_classes=2, dim=6, samples_per_class=5000, std=0.5, seed=1)
    ood = gen_ood_shifted(spec, 3.0, 4.0, seed=2)
    means = spec.class_means()
    idx = np.repeat(np.arange(2), 5000)
    resid = ood.features - means[idx]
    shift = resid.mean(0)
    assert np.linalg.norm(shift) == pytest.approx(4.0, abs=0.05)
    ratio = (resid - shift).var(0) / spec.std**2
    np.testing.assert_allclose(ratio, 9.0, rtol=0.06)


def test_invalid_spec():
    with pytest.raises(ValueError):
        BlobSpec(n_classes=1)
    with pytest.raises(ValueError):
        BlobSpec(std=0.0)
