"""Dataset generation, noise injection, OOD sets, and CSV round trips."""

import numpy as np
import pytest

from noisylab import data
from noisylab.errors import ConfigError


class TestGenerate:
    def test_well_separated_blobs_linearly_classifiable(self):
        spec = data.SyntheticSpec(n_samples=400, n_classes=3, input_dim=5,
                                  separation=10.0, seed=1)
        ds = data.generate(spec)
        # one-vs-all least squares on [X, 1]
        X = np.hstack([ds.features, np.ones((len(ds.ids), 1))])
        Y = np.zeros((len(ds.ids), 3))
        Y[np.arange(len(ds.ids)), ds.true_labels] = 1.0
        W, *_ = np.linalg.lstsq(X, Y, rcond=None)
        pred = (X @ W).argmax(axis=1)
        assert (pred == ds.true_labels).all()

    def test_one_sample_per_class(self):
        spec = data.SyntheticSpec(n_samples=4, n_classes=4, seed=3)
        ds = data.generate(spec)
        assert sorted(ds.true_labels) == [0, 1, 2, 3]

    def test_balanced_within_one(self):
        spec = data.SyntheticSpec(n_samples=103, n_classes=4, seed=5)
        counts = np.bincount(data.generate(spec).true_labels, minlength=4)
        assert counts.max() - counts.min() <= 1

    def test_same_seed_bit_identical(self):
        spec = data.SyntheticSpec(seed=7)
        a, b = data.generate(spec), data.generate(spec)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.true_labels, b.true_labels)

    @pytest.mark.parametrize("generator,k", [("gaussian-blobs", 4),
                                             ("two-moons-kd", 2),
                                             ("ring-classes", 3)])
    def test_all_generators_produce_finite_features(self, generator, k):
        spec = data.SyntheticSpec(generator=generator, n_samples=120, n_classes=k,
                                  input_dim=6, seed=2)
        ds = data.generate(spec)
        assert np.isfinite(ds.features).all()
        assert ds.features.shape == (120, 6)

    def test_moons_requires_two_classes(self):
        with pytest.raises(ConfigError):
            data.SyntheticSpec(generator="two-moons-kd", n_classes=3)

    def test_invalid_spec_fields(self):
        with pytest.raises(ConfigError):
            data.SyntheticSpec(generator="spirals")
        with pytest.raises(ConfigError):
            data.SyntheticSpec(n_samples=2, n_classes=4)


class TestInjectNoise:
    def _ds(self, n=10_000, k=10, seed=0):
        return data.generate(data.SyntheticSpec(n_samples=n, n_classes=k,
                                                input_dim=5, seed=seed))

    def test_zero_rate_keeps_labels(self):
        ds = self._ds(200, 4)
        noisy = data.inject_noise(ds, data.NoiseSpec(rate=0.0, seed=1))
        assert np.array_equal(noisy.noisy_labels, ds.true_labels)

    def test_symmetric_rate_concentrates(self):
        ds = self._ds()
        noisy = data.inject_noise(ds, data.NoiseSpec(mode="symmetric", rate=0.4, seed=2))
        flip_frac = (noisy.noisy_labels != noisy.true_labels).mean()
        assert abs(flip_frac - 0.4) <= 0.015  # 3 sigma binomial bound

    def test_symmetric_never_flips_to_true_label(self):
        ds = self._ds(5000, 5)
        noisy = data.inject_noise(ds, data.NoiseSpec(mode="symmetric", rate=0.9, seed=3))
        flipped = noisy.noisy_labels != noisy.true_labels
        assert flipped.any()
        # every flip leaves the class; (checked by construction on all samples)
        assert (noisy.noisy_labels[flipped] != noisy.true_labels[flipped]).all()

    def test_asymmetric_flips_follow_circular_map(self):
        ds = self._ds(8000, 4)
        noisy = data.inject_noise(ds, data.NoiseSpec(mode="asymmetric", rate=0.3, seed=4))
        # exhaustive pair tally
        for i in range(8000):
            t, y = noisy.true_labels[i], noisy.noisy_labels[i]
            assert y == t or y == (t + 1) % 4

    def test_true_labels_preserved(self):
        ds = self._ds(300, 3)
        noisy = data.inject_noise(ds, data.NoiseSpec(rate=0.5, seed=5))
        assert np.array_equal(noisy.true_labels, ds.true_labels)

    def test_invalid_rate(self):
        with pytest.raises(ConfigError):
            data.NoiseSpec(rate=1.0)


class TestTrainViewFirewall:
    def test_view_has_no_true_labels(self):
        ds = data.generate(data.SyntheticSpec(n_samples=20, seed=0))
        view = ds.train_view()
        assert not hasattr(view, "true_labels")
        assert set(view.__dataclass_fields__) == {"ids", "features", "noisy_labels"}

    def test_view_is_a_copy(self):
        ds = data.generate(data.SyntheticSpec(n_samples=20, seed=0))
        view = ds.train_view()
        view.features[0, 0] = 1e9
        assert ds.features[0, 0] != 1e9


class TestGenerateOod:
    def _ds(self):
        return data.generate(data.SyntheticSpec(n_samples=400, n_classes=4,
                                                input_dim=6, seed=9))

    def test_far_box_entirely_outside_id_range(self):
        ds = self._ds()
        ood = data.generate_ood(data.OodSpec(regime="far", n_samples=500, seed=1), ds)
        lo, hi = ds.features.min(axis=0), ds.features.max(axis=0)
        inside = ((ood >= lo) & (ood <= hi)).all(axis=1)
        assert inside.sum() == 0
        assert (ood > hi).all()

    def test_near_centers_at_prescribed_distance(self):
        ds = self._ds()
        spec = data.OodSpec(regime="near", n_samples=4, seed=2, near_spread=0.0)
        ood = data.generate_ood(spec, ds)
        centroids = np.stack([ds.features[ds.true_labels == c].mean(axis=0)
                              for c in range(4)])
        radius = data._class_radius(ds)
        for center in ood:
            d = np.sqrt(((center - centroids) ** 2).sum(axis=1)).min()
            assert abs(d - 1.5 * radius) <= 1e-9

    def test_seeded_regeneration_bit_identical(self):
        ds = self._ds()
        spec = data.OodSpec(regime="near", n_samples=100, seed=3)
        assert np.array_equal(data.generate_ood(spec, ds), data.generate_ood(spec, ds))

    def test_invalid_regime(self):
        with pytest.raises(ConfigError):
            data.OodSpec(regime="medium")


class TestCsvRoundTrip:
    def test_dataset_lossless(self, tmp_path):
        ds = data.inject_noise(
            data.generate(data.SyntheticSpec(n_samples=50, seed=11)),
            data.NoiseSpec(rate=0.4, seed=12))
        path = tmp_path / "train.csv"
        data.write_dataset_csv(ds, path)
        back = data.read_dataset_csv(path)
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.true_labels, ds.true_labels)
        assert np.array_equal(back.noisy_labels, ds.noisy_labels)
        assert np.array_equal(back.ids, ds.ids)

    def test_header_layout(self, tmp_path):
        ds = data.generate(data.SyntheticSpec(n_samples=4, input_dim=3, seed=0))
        path = tmp_path / "t.csv"
        data.write_dataset_csv(ds, path)
        header = path.read_text().splitlines()[0]
        assert header == "id,true_label,noisy_label,f0,f1,f2"

    def test_features_lossless(self, tmp_path):
        rng = np.random.default_rng(13)
        feats = rng.normal(size=(30, 5)) * 10.0 ** rng.integers(-8, 8, size=(30, 5))
        path = tmp_path / "ood.csv"
        data.write_features_csv(feats, path)
        assert np.array_equal(data.read_features_csv(path), feats)
