import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from invfm import (
    AffineVelocityField,
    AtomicMeasure1D,
    DimensionMismatch,
    DiscretePlan1D,
    GaussianDistribution,
    GaussianPlan,
    PSDViolation,
    SingularCovariance,
    ValidationError,
    symmetric_part,
    validate_gaussian_plan,
)
from invfm._io import dumps
from invfm.core import MarginalMismatch, measure_discrepancy, plan_from_dict

square = st.integers(1, 5).flatmap(
    lambda d: arrays(np.float64, (d, d), elements=st.floats(-1e3, 1e3, allow_nan=False))
)


def test_perfectly_correlated_plan_is_valid():
    report = validate_gaussian_plan(GaussianPlan([0.0], [0.0], [[1.0]], [[1.0]], [[1.0]]))
    assert report.valid
    assert abs(report["joint_psd"].value) < 1e-14


def test_psd_violation_matches_eigenvalue_oracle():
    # eigenvalues of [[1, s], [s, 1]] are 1 +- s
    report = validate_gaussian_plan(GaussianPlan([0.0], [0.0], [[1.0]], [[1.0]], [[1.5]]))
    assert not report.valid
    assert report["joint_psd"].value == pytest.approx(-0.5, abs=1e-14)
    with pytest.raises(PSDViolation):
        report.raise_if_invalid()


def test_independent_coupling_is_valid():
    assert validate_gaussian_plan(GaussianPlan(np.zeros(2), np.zeros(2), np.eye(2), np.eye(2), np.zeros((2, 2)))).valid


def test_singular_marginal_block_rejected():
    plan = GaussianPlan([0, 0], [0, 0], np.diag([1.0, 0.0]), np.eye(2), np.zeros((2, 2)))
    report = validate_gaussian_plan(plan)
    assert not report["sigma0_positive_definite"].passed
    with pytest.raises(SingularCovariance):
        report.raise_if_invalid()


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        GaussianPlan(np.zeros(2), np.zeros(3), np.eye(2), np.eye(2), np.zeros((2, 2)))
    with pytest.raises(DimensionMismatch):
        GaussianPlan(np.zeros(2), np.zeros(2), np.eye(2), np.eye(2), np.zeros((2, 3)))


@pytest.mark.parametrize(
    "S, expected",
    [
        ([[0, 1], [-1, 0]], [[0, 0], [0, 0]]),
        ([[2, 3], [3, 5]], [[2, 3], [3, 5]]),
        ([[1, 2], [0, 1]], [[1, 1], [1, 1]]),
    ],
)
def test_symmetric_part_examples(S, expected):
    assert symmetric_part(S).tolist() == expected


@given(square)
def test_symmetric_part_properties(S):
    P = symmetric_part(S)
    assert np.array_equal(P, P.T)
    assert np.array_equal(symmetric_part(P), P)
    assert np.array_equal(symmetric_part(S.T), P)


@settings(max_examples=50)
@given(square, st.floats(-10, 10))
def test_symmetric_part_is_linear(S, c):
    R = np.arange(S.size, dtype=float).reshape(S.shape)
    np.testing.assert_allclose(symmetric_part(c * S + R), c * symmetric_part(S) + symmetric_part(R), rtol=1e-12, atol=1e-9)


def test_gaussian_distribution_invariants():
    with pytest.raises(ValidationError):
        GaussianDistribution([0, 0], [[1, 0.1], [0, 1]])
    with pytest.raises(PSDViolation):
        GaussianDistribution([0, 0], [[1, 2], [2, 1]])
    p = GaussianDistribution([1.0], [[2.0]])
    assert p.dim == 1
    assert not p.cov.flags.writeable


def test_atomic_measure_merges_and_sorts():
    m = AtomicMeasure1D([1.0, 0.0, 1.0 + 1e-10, 2.0], [0.25, 0.25, 0.25, 0.25])
    assert m.atoms.tolist()[0] == 0.0
    assert len(m) == 3
    np.testing.assert_allclose(m.masses, [0.25, 0.5, 0.25])
    assert np.all(np.diff(m.atoms) > 1e-9)


def test_atomic_measure_rejects_bad_mass():
    with pytest.raises(ValidationError):
        AtomicMeasure1D([0, 1], [0.5, 0.6])
    with pytest.raises(ValidationError):
        AtomicMeasure1D([0, 1], [1.5, -0.5])


def test_discrete_plan_marginals():
    plan = DiscretePlan1D([0, 1], [0, 2], [[0.1, 0.2], [0.3, 0.4]])
    np.testing.assert_allclose(plan.source_masses, [0.3, 0.7])
    np.testing.assert_allclose(plan.target_masses, [0.4, 0.6])
    plan.check_marginals([0.3, 0.7], [0.4, 0.6])
    with pytest.raises(MarginalMismatch):
        plan.check_marginals([0.5, 0.5], [0.4, 0.6])


def test_discrete_plan_invariants():
    with pytest.raises(ValidationError):
        DiscretePlan1D([1, 0], [0], [[0.5], [0.5]])
    with pytest.raises(ValidationError):
        DiscretePlan1D([0, 1], [0], [[1.5], [-0.5]])
    with pytest.raises(DimensionMismatch):
        DiscretePlan1D([0, 1], [0], [[1.0]])


def test_measure_discrepancy():
    p = AtomicMeasure1D([0, 1], [0.5, 0.5])
    q = AtomicMeasure1D([0, 1, 2], [0.5, 0.25, 0.25])
    assert measure_discrepancy(p, p) == 0.0
    assert measure_discrepancy(p, q) == pytest.approx(0.25)


def test_affine_field_evaluates_rows():
    v = AffineVelocityField([[1, 2], [3, 4]], [1, 1], t=0.3)
    np.testing.assert_array_equal(v(np.array([1.0, 0.0])), [2.0, 4.0])
    np.testing.assert_array_equal(v(np.array([[1.0, 0.0], [0.0, 1.0]])), [[2.0, 4.0], [3.0, 5.0]])


def test_json_round_trip():
    rng = np.random.default_rng(0)
    S = rng.standard_normal((2, 2))
    plan = GaussianPlan(rng.standard_normal(2), rng.standard_normal(2), np.eye(2), np.eye(2), 0.1 * S)
    import json

    back = plan_from_dict(json.loads(dumps(plan.to_dict())))
    for k in ("mu0", "mu1", "sigma0", "sigma1", "cross"):
        assert np.array_equal(getattr(back, k), getattr(plan, k))
    d = DiscretePlan1D([0, 1], [0.1], [[0.3], [0.7]])
    assert np.array_equal(plan_from_dict(d.to_dict()).weights, d.weights)
    v = AffineVelocityField([[0.1]], [1 / 3], 0.25)
    assert AffineVelocityField.from_dict(json.loads(dumps(v.to_dict()))).b[0] == 1 / 3


def test_dumps_uses_17_significant_digits():
    assert dumps(0.1).strip() == "0.10000000000000001"
    assert dumps({"a": [1 / 3]}).count("3333333333333333") == 1
