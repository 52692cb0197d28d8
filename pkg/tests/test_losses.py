"""Alignment losses: hand values, invariances, decompositions, gradients."""

import numpy as np
import pytest

from fedstruct.errors import ContractError, DegenerateInputError
from fedstruct.losses import (
    AlignmentKind,
    check_gradient,
    loss_contrastive,
    loss_cosine,
    loss_gcsa,
    loss_mse,
    loss_rcsa,
    pairwise_loss,
    procrustes_decompose,
)
from fedstruct.tensor import random_orthogonal


def _pair(seed, n, d):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.standard_normal((n, d))


class TestAlignmentKind:
    def test_parse_names(self):
        for name in ("mse", "cosine", "gcsa", "rcsa", "contrastive"):
            assert AlignmentKind.parse(name).name == name

    def test_parse_rejects_unknown(self):
        with pytest.raises(ContractError):
            AlignmentKind.parse("l2")

    def test_temperature_positive(self):
        with pytest.raises(ContractError):
            AlignmentKind.parse("contrastive", temperature=0.0)

    def test_structural_flag(self):
        assert AlignmentKind.parse("gcsa").is_structural
        assert AlignmentKind.parse("rcsa").is_structural
        assert not AlignmentKind.parse("mse").is_structural


class TestMse:
    def test_identical_inputs_zero(self):
        a, _ = _pair(0, 4, 3)
        res = loss_mse(a, a)
        assert res.value == 0.0
        np.testing.assert_allclose(res.grad, 0.0, atol=0)

    def test_hand_value(self):
        assert loss_mse([[1.0, 0.0]], [[0.0, 1.0]]).value == pytest.approx(2.0, abs=0)

    def test_grad_closed_form(self):
        a, b = _pair(1, 5, 3)
        np.testing.assert_allclose(loss_mse(a, b).grad, 2.0 * (a - b) / 5, atol=1e-15)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractError):
            loss_mse(np.ones((2, 3)), np.ones((3, 3)))

    def test_gradient_check(self):
        a, b = _pair(2, 3, 4)
        report = check_gradient("mse", a, b, tolerance=1e-6)
        assert report.passed, report


class TestCosine:
    def test_identical_inputs_zero(self):
        a, _ = _pair(3, 4, 3)
        assert loss_cosine(a, a).value == pytest.approx(0.0, abs=1e-15)

    def test_antipodal_row_gives_two(self):
        assert loss_cosine([[1.0, 2.0]], [[-1.0, -2.0]]).value == pytest.approx(2.0, abs=1e-12)

    def test_hand_value(self):
        expected = 1.0 - 1.0 / np.sqrt(2.0)
        assert loss_cosine([[1.0, 0.0]], [[1.0, 1.0]]).value == pytest.approx(expected, abs=1e-12)

    def test_zero_row_rejected(self):
        with pytest.raises(DegenerateInputError):
            loss_cosine([[0.0, 0.0]], [[1.0, 1.0]])

    def test_gradient_check(self):
        a, b = _pair(4, 4, 3)
        report = check_gradient("cosine", a, b, tolerance=1e-4)
        assert report.passed, report


class TestGcsa:
    def test_identical_inputs_zero(self):
        p, _ = _pair(5, 5, 4)
        assert loss_gcsa(p, p).value == pytest.approx(0.0, abs=1e-12)

    def test_similarity_invariance(self):
        # q = alpha * p R + 1 b^T with alpha = 2.5 leaves the value at zero
        p, _ = _pair(6, 6, 4)
        r = random_orthogonal(4, seed=60)
        b = np.random.default_rng(61).standard_normal(4)
        q = 2.5 * p @ r + b
        assert loss_gcsa(p, q).value <= 1e-10

    def test_value_nonnegative(self):
        p, q = _pair(7, 5, 3)
        assert loss_gcsa(p, q).value >= 0.0

    def test_identical_rows_rejected(self):
        p = np.ones((4, 3))
        q, _ = _pair(8, 4, 3)
        with pytest.raises(DegenerateInputError):
            loss_gcsa(p, q)

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ContractError):
            loss_gcsa(np.ones((3, 2)) + np.eye(3, 2), np.eye(4, 2))

    def test_gradient_check(self):
        p, q = _pair(9, 5, 8)
        report = check_gradient("gcsa", p, q, tolerance=1e-4)
        assert report.passed, report


class TestRcsa:
    def test_identical_inputs_zero(self):
        p, _ = _pair(10, 5, 4)
        assert loss_rcsa(p, p).value == pytest.approx(0.0, abs=1e-12)

    def test_rotation_invariance(self):
        p, _ = _pair(11, 6, 4)
        r = random_orthogonal(4, seed=110)
        assert loss_rcsa(p, p @ r).value <= 1e-10

    def test_translation_sensitivity(self):
        p, _ = _pair(12, 6, 4)
        b = np.random.default_rng(120).standard_normal(4)
        assert loss_rcsa(p, p + b).value > 1e-6

    def test_identical_normalized_rows_rejected(self):
        # rows are positive multiples of one direction: RDM vector is zero
        base = np.array([[1.0, 2.0, 2.0]])
        p = np.vstack([base, 2.0 * base, 3.0 * base])
        q, _ = _pair(13, 3, 3)
        with pytest.raises(DegenerateInputError):
            loss_rcsa(p, q)

    def test_gradient_check(self):
        p, q = _pair(14, 5, 8)
        report = check_gradient("rcsa", p, q, tolerance=1e-4)
        assert report.passed, report


class TestContrastive:
    def test_single_class_cancels(self):
        rng = np.random.default_rng(15)
        z = rng.standard_normal((4, 3))
        protos = rng.standard_normal((1, 3))
        parts = loss_contrastive(z, protos, [0, 0, 0, 0], temperature=0.5)
        assert parts.total.value == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(parts.total.grad, 0.0, atol=1e-12)

    def test_decomposition_identity(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            z = rng.standard_normal((6, 4))
            protos = rng.standard_normal((3, 4))
            labels = rng.integers(0, 3, size=6)
            parts = loss_contrastive(z, protos, labels, temperature=0.5)
            total = parts.alignment.value + parts.uniformity.value
            assert parts.total.value == pytest.approx(total, abs=1e-9)

    def test_large_temperature_limit(self):
        # total -> log C + O(1/tau)
        rng = np.random.default_rng(16)
        z = rng.standard_normal((5, 4))
        protos = rng.standard_normal((4, 4))
        labels = rng.integers(0, 4, size=5)
        parts = loss_contrastive(z, protos, labels, temperature=1e6)
        assert parts.total.value == pytest.approx(np.log(4.0), abs=1e-4)

    def test_label_out_of_range_rejected(self):
        rng = np.random.default_rng(17)
        with pytest.raises(ContractError):
            loss_contrastive(rng.standard_normal((2, 3)), rng.standard_normal((2, 3)), [0, 2], 0.5)

    def test_gradient_check(self):
        rng = np.random.default_rng(18)
        z = rng.standard_normal((5, 4))
        protos = rng.standard_normal((3, 4))
        labels = rng.integers(0, 3, size=5)
        report = check_gradient(
            AlignmentKind.parse("contrastive", temperature=0.7), z, protos, labels,
            tolerance=1e-4,
        )
        assert report.passed, report


class TestProcrustes:
    def test_identical_inputs(self):
        p, _ = _pair(19, 5, 3)
        dec = procrustes_decompose(p, p)
        assert dec.l_coord == pytest.approx(0.0, abs=1e-12)
        assert dec.l_shape == pytest.approx(0.0, abs=1e-12)
        assert dec.l_rigid == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(dec.rotation, np.eye(3), atol=1e-9)

    def test_rotated_input_is_pure_rigid(self):
        p, _ = _pair(20, 6, 4)
        r0 = random_orthogonal(4, seed=200)
        dec = procrustes_decompose(p @ r0, p)
        assert dec.l_shape <= 1e-9
        assert dec.l_rigid == pytest.approx(dec.l_coord, abs=1e-9)

    def test_additivity_and_rigid_sign(self):
        for seed in range(10):
            z, p = _pair(21 + seed, 5, 3)
            dec = procrustes_decompose(z, p)
            assert dec.l_coord == pytest.approx(dec.l_shape + dec.l_rigid, abs=1e-9)
            assert dec.l_rigid >= -1e-12

    def test_zero_row_rejected(self):
        p, _ = _pair(31, 3, 3)
        z = p.copy()
        z[1] = 0.0
        with pytest.raises(DegenerateInputError):
            procrustes_decompose(z, p)


class TestPairwiseDispatcher:
    def test_dispatches_by_name(self):
        a, b = _pair(32, 4, 3)
        assert pairwise_loss("gcsa", a, b).value == loss_gcsa(a, b).value
        assert pairwise_loss("mse", a, b).value == loss_mse(a, b).value

    def test_rejects_contrastive(self):
        a, b = _pair(33, 4, 3)
        with pytest.raises(ContractError):
            pairwise_loss("contrastive", a, b)
