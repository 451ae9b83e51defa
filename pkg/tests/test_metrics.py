"""Pooled-covariance Mahalanobis metric tests."""

import numpy as np
import pytest

from proker.errors import InvalidConfig, SingularCovariance
from proker.featurestore import FeatureSet
from proker.kernels import KernelSpec, kernel_matrix
from proker.metrics import (
    PrecisionEstimate,
    estimate_precision,
    mahalanobis_sq,
    pooled_within_class_cov,
)

from conftest import balanced_support


class TestPooledCovariance:
    def test_single_class_divisor(self):
        # four 2-D points in one class: divisor is rows - 1 = 3
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
        fs = FeatureSet(pts, labels=[0, 0, 0, 0], num_classes=1)
        cov = pooled_within_class_cov(fs)
        centered = pts - pts.mean(axis=0)
        np.testing.assert_allclose(cov, centered.T @ centered / 3.0, atol=1e-15)
        # the example is symmetric: variance 4/3 on both axes, no covariance
        np.testing.assert_allclose(cov, np.diag([4.0 / 3.0, 4.0 / 3.0]), atol=1e-15)

    def test_two_classes_pool_and_divisor(self):
        # class means are removed separately; divisor is rows - groups = 4
        a = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        b = np.array([[10.0, 10.0], [12.0, 10.0], [10.0, 14.0]])
        fs = FeatureSet(np.vstack([a, b]), labels=[0, 0, 0, 1, 1, 1],
                        num_classes=2)
        ca = a - a.mean(axis=0)
        cb = b - b.mean(axis=0)
        expected = (ca.T @ ca + cb.T @ cb) / 4.0
        np.testing.assert_allclose(pooled_within_class_cov(fs), expected, atol=1e-12)

    def test_between_class_spread_is_ignored(self):
        # classes far apart but identical within-class shape: pooled
        # covariance must not see the separation at all
        base = np.array([[0.0, 0.0], [1.0, 1.0], [-1.0, 1.0]])
        near = FeatureSet(np.vstack([base, base + 0.5]),
                          labels=[0] * 3 + [1] * 3, num_classes=2)
        far = FeatureSet(np.vstack([base, base + 1000.0]),
                         labels=[0] * 3 + [1] * 3, num_classes=2)
        np.testing.assert_allclose(pooled_within_class_cov(near),
                                   pooled_within_class_cov(far), atol=1e-9)

    def test_unlabeled_rows_form_one_group(self, rng):
        data = rng.standard_normal((10, 3))
        plain = FeatureSet(data)
        labeled = FeatureSet(data, labels=[0] * 10, num_classes=1)
        np.testing.assert_allclose(pooled_within_class_cov(plain),
                                   pooled_within_class_cov(labeled), atol=1e-15)

    def test_too_few_rows_rejected(self):
        fs = FeatureSet(np.eye(2), labels=[0, 1], num_classes=2)
        with pytest.raises(InvalidConfig):
            pooled_within_class_cov(fs)

    def test_absent_classes_do_not_count_as_groups(self):
        # only class 0 appears; divisor must be rows - 1, not rows - 3
        fs = FeatureSet(np.array([[0.0], [1.0], [2.0]]), labels=[0, 0, 0],
                        num_classes=3)
        cov = pooled_within_class_cov(fs)
        assert cov[0, 0] == pytest.approx(1.0)


class TestEstimatePrecision:
    def test_matches_direct_inverse(self, rng):
        fs = balanced_support(rng, num_classes=3, shots=20, dim=4)
        eps = 0.3
        est = estimate_precision(fs, shrinkage=eps)
        cov = pooled_within_class_cov(fs)
        target = (np.trace(cov) / 4) * np.eye(4)
        shrunk = (1 - eps) * cov + eps * target
        np.testing.assert_allclose(est.precision, np.linalg.inv(shrunk),
                                   rtol=1e-10, atol=1e-12)

    def test_full_shrinkage_is_scaled_identity(self, rng):
        fs = balanced_support(rng, num_classes=2, shots=5, dim=6)
        est = estimate_precision(fs, shrinkage=1.0)
        cov = pooled_within_class_cov(fs)
        scale = 6 / np.trace(cov)
        np.testing.assert_allclose(est.precision, scale * np.eye(6),
                                   rtol=1e-12, atol=1e-12)

    def test_zero_shrinkage_with_enough_rows(self, rng):
        fs = balanced_support(rng, num_classes=2, shots=30, dim=4)
        est = estimate_precision(fs, shrinkage=0.0)
        cov = pooled_within_class_cov(fs)
        np.testing.assert_allclose(est.precision @ cov, np.eye(4),
                                   atol=1e-8)

    def test_zero_shrinkage_underdetermined_raises(self, rng):
        # 2 classes x 3 shots leaves 4 degrees of freedom < dim 8
        fs = balanced_support(rng, num_classes=2, shots=3, dim=8)
        with pytest.raises(SingularCovariance):
            estimate_precision(fs, shrinkage=0.0)

    def test_result_is_symmetric_spd(self, rng):
        fs = balanced_support(rng, num_classes=4, shots=4, dim=10)
        est = estimate_precision(fs, shrinkage=0.2)
        p = est.precision
        assert np.abs(p - p.T).max() == 0.0
        np.linalg.cholesky(p)  # must not raise

    def test_provenance_recorded(self, rng):
        fs = balanced_support(rng, num_classes=2, shots=4, dim=3)
        est = estimate_precision(fs, shrinkage=0.25)
        assert est.shrinkage == 0.25
        assert est.source_rows == 8
        assert est.dim == 3

    def test_shrinkage_out_of_range(self, rng):
        fs = balanced_support(rng, num_classes=2, shots=4, dim=3)
        for eps in (-0.1, 1.1):
            with pytest.raises(InvalidConfig):
                estimate_precision(fs, shrinkage=eps)

    def test_single_row_rejected(self):
        fs = FeatureSet(np.ones((1, 3)))
        with pytest.raises(InvalidConfig):
            estimate_precision(fs)


class TestMahalanobisSq:
    def test_identity_is_squared_euclidean(self, rng):
        x, y = rng.standard_normal((2, 7))
        got = mahalanobis_sq(np.eye(7), x, y)
        assert got == pytest.approx(float(np.sum((x - y) ** 2)), rel=1e-14)

    def test_quadratic_form(self, rng):
        m = rng.standard_normal((4, 4))
        p = m @ m.T + 4 * np.eye(4)
        x, y = rng.standard_normal((2, 4))
        d = x - y
        assert mahalanobis_sq(p, x, y) == pytest.approx(float(d @ p @ d),
                                                        rel=1e-13)

    def test_accepts_estimate_object(self, rng):
        fs = balanced_support(rng, num_classes=2, shots=6, dim=3)
        est = estimate_precision(fs, shrinkage=0.5)
        x, y = rng.standard_normal((2, 3))
        assert mahalanobis_sq(est, x, y) == pytest.approx(
            mahalanobis_sq(est.precision, x, y))

    def test_shape_errors(self):
        with pytest.raises(InvalidConfig):
            mahalanobis_sq(np.eye(3), np.ones(3), np.ones(4))
        with pytest.raises(InvalidConfig):
            mahalanobis_sq(np.eye(2), np.ones(3), np.ones(3))


class TestKernelIntegration:
    def test_estimated_precision_drives_the_kernel(self, rng):
        fs = balanced_support(rng, num_classes=3, shots=10, dim=5)
        est = estimate_precision(fs, shrinkage=0.3)
        spec = KernelSpec("rbf", beta=1.0, precision=est.precision)
        g = kernel_matrix(spec, fs.data, fs.data)
        assert np.isfinite(g).all()
        np.testing.assert_allclose(np.diag(g), 1.0, atol=1e-12)
        # whitened geometry must match the explicit quadratic form
        x, y = fs.data[0], fs.data[-1]
        expected = np.exp(-0.5 * mahalanobis_sq(est, x, y))
        assert g[0, -1] == pytest.approx(expected, rel=1e-10)

    def test_precision_estimate_validates_shape(self):
        with pytest.raises(InvalidConfig):
            PrecisionEstimate(np.ones((2, 3)), shrinkage=0.1, source_rows=5)
