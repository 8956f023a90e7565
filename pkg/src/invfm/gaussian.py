"""Closed-form flow matching for Gaussian couplings.

For ``(X0, X1) ~ N((mu0, mu1), [[Sigma0, S], [S.T, Sigma1]])`` the
interpolant ``Xt = (1 - t) X0 + t X1`` is Gaussian with

    mu_t    = (1 - t) mu0 + t mu1
    Sigma_t = (1 - t)^2 Sigma0 + t^2 Sigma1 + t (1 - t) (S + S.T)

so the marginal curve only sees the symmetric part of ``S``. The initial
velocity ``v0(x) = mu1 + S.T Sigma0^{-1} (x - mu0) - x`` sees all of ``S``,
which is what makes :func:`recover_plan_from_v0` possible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    PD_TOL,
    AffineVelocityField,
    GaussianDistribution,
    GaussianPlan,
    InconsistentField,
    NotApplicableInOneDimension,
    SingularCovariance,
    SingularMarginal,
    ValidationError,
    DimensionMismatch,
    min_eigenvalue,
    symmetric_part,
    validate_gaussian_plan,
)

CONSISTENCY_TOL = 1e-8


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return t


def _require_valid(plan: GaussianPlan) -> None:
    plan.report.raise_if_invalid()


def _marginal_moments(plan: GaussianPlan, t: float) -> tuple[np.ndarray, np.ndarray]:
    s = 1.0 - t
    mean = s * plan.mu0 + t * plan.mu1
    cov = s * s * plan.sigma0 + t * t * plan.sigma1 + (t * s) * (plan.cross + plan.cross.T)
    return mean, cov


def marginal_at(plan: GaussianPlan, t: float) -> GaussianDistribution:
    """Law of ``(1 - t) X0 + t X1`` under a Gaussian plan.

    Examples
    --------
    >>> plan = GaussianPlan([0, 0], [2, 0], np.eye(2), np.eye(2), np.zeros((2, 2)))
    >>> p = marginal_at(plan, 0.5)
    >>> p.mean.tolist(), p.cov.tolist()
    ([1.0, 0.0], [[0.5, 0.0], [0.0, 0.5]])
    """
    t = _check_time(t)
    _require_valid(plan)
    return GaussianDistribution(*_marginal_moments(plan, t))


@dataclass(frozen=True, eq=False)
class MarginalCurveGaussian:
    """Marginal curve of a plan sampled on a sorted grid of times."""

    plan: GaussianPlan
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        if times.size and (times[0] < 0 or times[-1] > 1 or np.any(np.diff(times) < 0)):
            raise ValidationError("times must be sorted and lie in [0, 1]")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def means(self) -> np.ndarray:
        return np.array([marginal_at(self.plan, t).mean for t in self.times])

    @property
    def covs(self) -> np.ndarray:
        return np.array([marginal_at(self.plan, t).cov for t in self.times])

    def max_deviation(self, other: MarginalCurveGaussian) -> tuple[float, float]:
        """Largest absolute mean and covariance differences on the shared grid."""
        if not np.array_equal(self.times, other.times):
            raise ValueError("curves are sampled on different grids")
        dm = float(np.max(np.abs(self.means - other.means))) if self.times.size else 0.0
        dc = float(np.max(np.abs(self.covs - other.covs))) if self.times.size else 0.0
        return dm, dc


def marginal_curve(plan: GaussianPlan, times) -> MarginalCurveGaussian:
    return MarginalCurveGaussian(plan, times)


def _check_sigma0(sigma0: np.ndarray) -> None:
    lam = min_eigenvalue(sigma0)
    if lam < PD_TOL:
        raise SingularCovariance(f"sigma0 is not strictly positive definite (min eigenvalue {lam:.3e})")


def velocity_at_zero(plan: GaussianPlan, x0) -> np.ndarray:
    """Evaluate ``E[X1 - X0 | X0 = x0]`` for one point or a batch of rows."""
    _check_sigma0(plan.sigma0)
    x0 = np.asarray(x0, dtype=float)
    gain = np.linalg.solve(plan.sigma0, plan.cross).T  # S.T Sigma0^{-1}
    return plan.mu1 + (x0 - plan.mu0) @ gain.T - x0


def velocity_field(plan: GaussianPlan, t: float, pinv: bool = False) -> AffineVelocityField:
    """Affine form of ``E[X1 - X0 | Xt = x]`` at time ``t``.

    With ``C_t = Cov(Xt, X1 - X0) = (1 - t)(S - Sigma0) + t (Sigma1 - S.T)``
    the conditional mean is ``A_t x + b_t`` where ``A_t = C_t.T Sigma_t^{-1}``
    and ``b_t = (mu1 - mu0) - A_t mu_t``.

    Parameters
    ----------
    plan : GaussianPlan
    t : float
        Time in ``[0, 1]``.
    pinv : bool
        Use the Moore-Penrose pseudo-inverse of ``Sigma_t`` instead of
        raising when it is singular. This covers degenerate interior
        marginals, which lie outside the setting of the uniqueness results.

    Raises
    ------
    SingularMarginal
        If the smallest eigenvalue of ``Sigma_t`` is below ``1e-12`` and
        ``pinv`` is false.
    """
    t = _check_time(t)
    _require_valid(plan)
    mean, cov = _marginal_moments(plan, t)
    s = 1.0 - t
    C = s * (plan.cross - plan.sigma0) + t * (plan.sigma1 - plan.cross.T)
    lam = min_eigenvalue(cov)
    if lam < PD_TOL:
        if not pinv:
            raise SingularMarginal(f"Sigma_t at t={t} is singular (min eigenvalue {lam:.3e})")
        A = C.T @ np.linalg.pinv(symmetric_part(cov), hermitian=True)
    else:
        A = np.linalg.solve(cov, C).T
    b = (plan.mu1 - plan.mu0) - A @ mean
    return AffineVelocityField(A, b, t)


def gaussian_flow(plan: GaussianPlan, pinv: bool = False):
    """Return ``t -> velocity_field(plan, t)`` for use with the integrator."""

    def field(t: float) -> AffineVelocityField:
        return velocity_field(plan, t, pinv=pinv)

    return field


def recover_plan_from_v0(mu0, sigma0, mu1, sigma1, v0: AffineVelocityField) -> GaussianPlan:
    """Rebuild the Gaussian plan whose initial velocity field is ``v0``.

    Matching ``v0(x) = A x + b`` against ``mu1 + S.T Sigma0^{-1}(x - mu0) - x``
    term by term gives ``S = Sigma0 (A + I).T`` and requires
    ``b = mu1 - (A + I) mu0``.

    Raises
    ------
    InconsistentField
        If the constant term disagrees with the endpoints by more than
        ``1e-8``.
    PSDViolation
        If the implied joint covariance is not positive semidefinite.
    """
    mu0 = np.atleast_1d(np.asarray(mu0, dtype=float))
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    D = mu0.shape[0]
    if v0.dim != D:
        raise DimensionMismatch(f"velocity field has dimension {v0.dim}, endpoints have {D}")
    _check_sigma0(sigma0)
    gain = v0.A + np.eye(D)
    expected_b = mu1 - gain @ mu0
    gap = float(np.max(np.abs(v0.b - expected_b)))
    if gap > CONSISTENCY_TOL:
        raise InconsistentField(
            f"constant term off by {gap:.3e}: not an initial flow-matching velocity for these endpoints"
        )
    plan = GaussianPlan(mu0, mu1, sigma0, sigma1, sigma0 @ gain.T)
    _require_valid(plan)
    return plan


def counterexample_pair(sigma0, sigma1, sym_part, antisym_part, mu0=None, mu1=None) -> tuple[GaussianPlan, GaussianPlan]:
    """Two distinct Gaussian plans with identical marginal curves.

    The plans use cross-covariances ``sym_part + antisym_part`` and
    ``sym_part - antisym_part``. Both have the same ``S + S.T`` and hence the
    same ``Sigma_t`` for every ``t``, yet ``S != S'``. Means default to zero.

    Raises
    ------
    NotApplicableInOneDimension
        For ``D = 1``, where every 1x1 matrix is symmetric.
    PSDViolation
        If either joint covariance fails the PSD check; the message names the
        plan and its smallest eigenvalue.
    """
    sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    D = sigma0.shape[0]
    if D == 1:
        raise NotApplicableInOneDimension(
            "no nonzero antisymmetric 1x1 matrix exists; in one dimension S + S.T = 2S fixes S"
        )
    K = np.asarray(antisym_part, dtype=float)
    M = np.asarray(sym_part, dtype=float)
    if K.shape != (D, D) or M.shape != (D, D):
        raise DimensionMismatch(f"sym_part {M.shape} and antisym_part {K.shape} must both be {(D, D)}")
    if np.max(np.abs(K + K.T)) > 0:
        raise ValidationError("antisym_part must be exactly antisymmetric")
    if not np.any(K):
        raise ValidationError("antisym_part must be nonzero")
    if np.max(np.abs(M - M.T)) > 0:
        raise ValidationError("sym_part must be exactly symmetric")
    mu0 = np.zeros(D) if mu0 is None else mu0
    mu1 = np.zeros(D) if mu1 is None else mu1
    plans = []
    for label, S in (("first", M + K), ("second", M - K)):
        plan = GaussianPlan(mu0, mu1, sigma0, sigma1, S)
        validate_gaussian_plan(plan).raise_if_invalid(f"{label} plan")
        plans.append(plan)
    return plans[0], plans[1]
