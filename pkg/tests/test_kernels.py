"""Kernel zoo tests: closed-form values, blocked algebra, bandwidth, JSON form."""

import math

import numpy as np
import pytest

from proker.errors import DimMismatch, InvalidConfig
from proker.kernels import (
    FAMILIES,
    GramMatrix,
    KernelSpec,
    OutputKernel,
    gram,
    kernel_eval,
    kernel_matrix,
    kernel_row,
    kernel_spec_from_dict,
    kernel_spec_from_json,
    kernel_spec_to_dict,
    kernel_spec_to_json,
    median_heuristic_beta,
    resolve_beta,
)

from conftest import random_featureset, unit_rows


def all_specs(beta=2.0):
    return [
        KernelSpec("rbf", beta=beta),
        KernelSpec("linear"),
        KernelSpec("polynomial", degree=2),
        KernelSpec("polynomial", degree=3),
        KernelSpec("epanechnikov"),
    ]


class TestPinnedValues:
    """Hand-checked kernel values on simple vectors."""

    def test_rbf_orthogonal_unit_vectors(self):
        e1, e2 = np.eye(2)
        got = kernel_eval(KernelSpec("rbf", beta=2.0), e1, e2)
        assert got == pytest.approx(math.exp(-2.0), abs=1e-15)
        assert got == pytest.approx(0.1353352832366127, abs=1e-12)

    def test_rbf_identical_points(self):
        x = np.array([0.3, -1.2, 4.0])
        assert kernel_eval(KernelSpec("rbf", beta=7.0), x, x) == 1.0

    def test_linear_is_dot_product(self):
        x = np.array([1.0, 0.0])
        y = np.array([0.5, 0.5])
        assert kernel_eval(KernelSpec("linear"), x, y) == 0.5

    def test_polynomial_squares_the_dot(self):
        x = np.array([1.0, 0.0])
        y = np.array([0.5, 0.5])
        assert kernel_eval(KernelSpec("polynomial", degree=2), x, y) == 0.25
        assert kernel_eval(KernelSpec("polynomial", degree=3), x, y) == 0.125

    def test_polynomial_degree_one_is_linear(self, rng):
        x, y = rng.standard_normal((2, 6))
        a = kernel_eval(KernelSpec("polynomial", degree=1), x, y)
        b = kernel_eval(KernelSpec("linear"), x, y)
        assert a == pytest.approx(b, abs=1e-15)

    def test_epanechnikov_support_edge(self):
        # squared distance 2 sits outside the unit ball: weight is exactly 0
        e1, e2 = np.eye(2)
        assert kernel_eval(KernelSpec("epanechnikov"), e1, e2) == 0.0

    def test_epanechnikov_inside_support(self):
        x = np.array([0.0, 0.0])
        y = np.array([math.sqrt(0.5), 0.0])
        got = kernel_eval(KernelSpec("epanechnikov"), x, y)
        assert got == pytest.approx(0.75 * 0.5, abs=1e-15)

    def test_epanechnikov_peak(self):
        x = np.zeros(3)
        assert kernel_eval(KernelSpec("epanechnikov"), x, x) == 0.75


class TestBlockedAlgebra:
    """The matrix code path must agree with the scalar one."""

    @pytest.mark.parametrize("spec", all_specs(), ids=lambda s: f"{s.family}{s.degree if s.family == 'polynomial' else ''}")
    def test_matrix_matches_scalar(self, spec, rng):
        a = rng.standard_normal((9, 5))
        b = rng.standard_normal((7, 5))
        block = kernel_matrix(spec, a, b)
        assert block.shape == (9, 7)
        for i in range(9):
            for j in range(7):
                assert block[i, j] == pytest.approx(
                    kernel_eval(spec, a[i], b[j]), abs=1e-12)

    def test_gram_is_symmetric(self, rng):
        fs = random_featureset(rng, 15, 6)
        for spec in all_specs():
            g = gram(spec, fs, fs).values
            assert np.abs(g - g.T).max() <= 1e-10

    @pytest.mark.parametrize("family", ["rbf", "linear", "polynomial"])
    def test_gram_is_psd(self, family, rng):
        spec = KernelSpec(family, beta=1.5) if family == "rbf" else KernelSpec(family)
        for _ in range(20):
            pts = rng.standard_normal((12, 4))
            g = kernel_matrix(spec, pts, pts)
            assert np.linalg.eigvalsh(0.5 * (g + g.T)).min() >= -1e-8

    def test_kernel_row_equals_matrix_row(self, rng):
        fs = random_featureset(rng, 10, 4)
        x = rng.standard_normal(4)
        for spec in all_specs():
            row = kernel_row(spec, x, fs)
            full = kernel_matrix(spec, x[None, :], fs.data)[0]
            np.testing.assert_array_equal(row, full)

    def test_squared_distances_clamped_nonnegative(self, rng):
        # near-duplicate points tickle the expanded-product rounding error
        base = rng.standard_normal((1, 8)) * 100
        pts = np.repeat(base, 50, axis=0) + 1e-9 * rng.standard_normal((50, 8))
        g = kernel_matrix(KernelSpec("rbf", beta=1.0), pts, pts)
        assert g.max() <= 1.0

    def test_unit_norm_dot_product_identity(self, rng):
        # on unit vectors exp(-b/2 * ||x-y||^2) == exp(-b (1 - x.y))
        beta = 3.0
        a = unit_rows(rng.standard_normal((8, 5)))
        b = unit_rows(rng.standard_normal((6, 5)))
        g = kernel_matrix(KernelSpec("rbf", beta=beta), a, b)
        expected = np.exp(-beta * (1.0 - a @ b.T))
        np.testing.assert_allclose(g, expected, atol=1e-12)

    def test_huge_bandwidth_underflows_to_exact_zero(self, rng):
        pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.25]])
        g = kernel_matrix(KernelSpec("rbf", beta=1e6), pts, pts)
        off = g[~np.eye(3, dtype=bool)]
        assert np.all(off == 0.0)
        assert np.all(np.diag(g) == 1.0)

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimMismatch):
            kernel_matrix(KernelSpec("linear"), np.ones((2, 3)), np.ones((2, 4)))
        with pytest.raises(DimMismatch):
            kernel_eval(KernelSpec("linear"), np.ones(3), np.ones(4))

    def test_unresolved_beta_is_an_error(self, rng):
        spec = KernelSpec("rbf")
        with pytest.raises(InvalidConfig):
            kernel_matrix(spec, np.ones((2, 2)), np.ones((2, 2)))
        with pytest.raises(InvalidConfig):
            kernel_eval(spec, np.ones(2), np.ones(2))


class TestMahalanobis:
    def _spd(self, rng, d):
        m = rng.standard_normal((d, d))
        return m @ m.T + d * np.eye(d)

    def test_matches_quadratic_form_loop(self, rng):
        d = 5
        prec = self._spd(rng, d)
        spec = KernelSpec("rbf", beta=0.7, precision=prec)
        a = rng.standard_normal((6, d))
        b = rng.standard_normal((4, d))
        got = kernel_matrix(spec, a, b)
        for i in range(6):
            for j in range(4):
                diff = a[i] - b[j]
                expected = math.exp(-0.5 * 0.7 * float(diff @ prec @ diff))
                assert got[i, j] == pytest.approx(expected, rel=1e-12)

    def test_identity_precision_bitwise_equals_euclidean(self, rng):
        a = rng.standard_normal((10, 6))
        b = rng.standard_normal((8, 6))
        plain = kernel_matrix(KernelSpec("rbf", beta=2.0), a, b)
        withp = kernel_matrix(KernelSpec("rbf", beta=2.0, precision=np.eye(6)), a, b)
        np.testing.assert_array_equal(plain, withp)

    def test_scalar_path_agrees(self, rng):
        prec = self._spd(rng, 4)
        spec = KernelSpec("rbf", beta=1.1, precision=prec)
        x, y = rng.standard_normal((2, 4))
        diff = x - y
        expected = math.exp(-0.5 * 1.1 * float(diff @ prec @ diff))
        assert kernel_eval(spec, x, y) == pytest.approx(expected, rel=1e-12)

    def test_precision_dim_checked_at_eval(self, rng):
        spec = KernelSpec("rbf", beta=1.0, precision=np.eye(3))
        with pytest.raises(DimMismatch):
            kernel_matrix(spec, np.ones((2, 4)), np.ones((2, 4)))
        with pytest.raises(DimMismatch):
            kernel_eval(spec, np.ones(4), np.ones(4))


class TestKernelSpecValidation:
    def test_unknown_family(self):
        with pytest.raises(InvalidConfig):
            KernelSpec("gaussian")

    def test_family_is_case_insensitive(self):
        assert KernelSpec("RBF", beta=1.0).family == "rbf"

    def test_bad_beta(self):
        for beta in (0.0, -1.0, float("nan"), float("inf")):
            with pytest.raises(InvalidConfig):
                KernelSpec("rbf", beta=beta)

    def test_bad_degree(self):
        with pytest.raises(InvalidConfig):
            KernelSpec("polynomial", degree=0)

    def test_precision_only_for_rbf(self):
        with pytest.raises(InvalidConfig):
            KernelSpec("linear", precision=np.eye(2))

    def test_precision_must_be_symmetric_pd(self):
        with pytest.raises(InvalidConfig):
            KernelSpec("rbf", beta=1.0, precision=np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(InvalidConfig):
            KernelSpec("rbf", beta=1.0, precision=np.array([[1.0, 0.0], [0.0, -2.0]]))
        with pytest.raises(InvalidConfig):
            KernelSpec("rbf", beta=1.0, precision=np.ones((2, 3)))

    def test_metric_property(self):
        assert KernelSpec("rbf", beta=1.0).metric == "euclidean"
        assert KernelSpec("rbf", beta=1.0, precision=np.eye(2)).metric == "mahalanobis"

    def test_families_tuple(self):
        assert FAMILIES == ("rbf", "linear", "polynomial", "epanechnikov")


class TestMedianHeuristic:
    def test_hand_computed_value(self):
        # collinear points at 0, 1, 3, 7: squared gaps 1,9,49,4,36,16,
        # sorted 1,4,9,16,36,49 -> median 12.5 -> bandwidth 1/12.5
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [7.0, 0.0]])
        assert median_heuristic_beta(pts) == pytest.approx(0.08, abs=1e-15)

    def test_duplicates_are_ignored(self):
        pts = np.array([[0.0], [0.0], [0.0], [2.0]])
        # only nonzero squared distances (4, 4, 4) count
        assert median_heuristic_beta(pts) == pytest.approx(0.25)

    def test_all_coincident_is_an_error(self):
        with pytest.raises(InvalidConfig):
            median_heuristic_beta(np.ones((5, 3)))

    def test_single_row_is_an_error(self):
        with pytest.raises(InvalidConfig):
            median_heuristic_beta(np.ones((1, 3)))

    def test_accepts_featureset(self, rng):
        fs = random_featureset(rng, 10, 4)
        assert median_heuristic_beta(fs) == pytest.approx(
            median_heuristic_beta(fs.data))

    def test_scale_invariance_relation(self, rng):
        # scaling the data by c scales the bandwidth by 1/c^2
        pts = rng.standard_normal((20, 5))
        b1 = median_heuristic_beta(pts)
        b2 = median_heuristic_beta(3.0 * pts)
        assert b2 == pytest.approx(b1 / 9.0, rel=1e-12)

    def test_resolve_beta_fills_only_unset_rbf(self, rng):
        pts = rng.standard_normal((10, 3))
        spec = resolve_beta(KernelSpec("rbf"), pts)
        assert spec.beta == pytest.approx(median_heuristic_beta(pts))
        fixed = KernelSpec("rbf", beta=5.0)
        assert resolve_beta(fixed, pts) is fixed
        lin = KernelSpec("linear")
        assert resolve_beta(lin, pts) is lin


class TestJsonForm:
    def test_round_trip_euclidean(self):
        spec = KernelSpec("polynomial", degree=3)
        out = kernel_spec_from_json(kernel_spec_to_json(spec))
        assert out.family == "polynomial" and out.degree == 3
        assert out.precision is None

    def test_round_trip_rbf_beta(self):
        spec = KernelSpec("rbf", beta=0.125)
        out = kernel_spec_from_json(kernel_spec_to_json(spec))
        assert out.beta == 0.125

    def test_round_trip_precision(self, rng):
        m = rng.standard_normal((3, 3))
        prec = m @ m.T + 3 * np.eye(3)
        spec = KernelSpec("rbf", beta=1.0, precision=prec)
        out = kernel_spec_from_json(kernel_spec_to_json(spec))
        np.testing.assert_allclose(out.precision, prec, atol=1e-12)
        assert out.metric == "mahalanobis"

    def test_unresolved_beta_round_trips_as_absent(self):
        out = kernel_spec_from_json(kernel_spec_to_json(KernelSpec("rbf")))
        assert out.beta is None

    def test_unknown_field_rejected(self):
        with pytest.raises(InvalidConfig):
            kernel_spec_from_dict({"family": "rbf", "bandwidth": 2.0})

    def test_metric_consistency_enforced(self):
        with pytest.raises(InvalidConfig):
            kernel_spec_from_dict({"family": "rbf", "metric": "mahalanobis"})
        with pytest.raises(InvalidConfig):
            kernel_spec_from_dict({"family": "rbf", "metric": "euclidean",
                                   "precision": [[1.0]]})
        with pytest.raises(InvalidConfig):
            kernel_spec_from_dict({"family": "rbf", "metric": "cosine"})

    def test_not_json_rejected(self):
        with pytest.raises(InvalidConfig):
            kernel_spec_from_json("{family: rbf}")

    def test_dict_defaults(self):
        spec = kernel_spec_from_dict({})
        assert spec.family == "rbf" and spec.beta is None


class TestOutputKernel:
    def test_identity_factory(self):
        b = OutputKernel.identity(4)
        assert b.is_identity
        np.testing.assert_array_equal(b.matrix_b, np.eye(4))

    def test_general_psd_accepted(self, rng):
        m = rng.standard_normal((3, 3))
        ok = OutputKernel(m @ m.T)
        assert not ok.is_identity

    def test_asymmetric_rejected(self):
        with pytest.raises(InvalidConfig):
            OutputKernel(np.array([[1.0, 0.2], [0.0, 1.0]]))

    def test_indefinite_rejected(self):
        with pytest.raises(InvalidConfig):
            OutputKernel(np.diag([1.0, -0.5]))

    def test_non_square_rejected(self):
        with pytest.raises(InvalidConfig):
            OutputKernel(np.ones((2, 3)))


class TestGramMatrix:
    def test_shape_and_readonly(self, rng):
        g = GramMatrix(rng.standard_normal((3, 4)))
        assert g.shape == (3, 4)
        assert not g.values.flags["WRITEABLE"]

    def test_one_dim_rejected(self):
        with pytest.raises(DimMismatch):
            GramMatrix(np.ones(3))
