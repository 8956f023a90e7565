"""Shared value types, tolerances and validation.

Every type here is an immutable value object: array fields are copied on
construction and flagged read-only. Matrices serialize as row-major nested
lists under the field names used by the dataclasses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

SYM_TOL = 1e-10
PSD_TOL = 1e-10
PD_TOL = 1e-12
MASS_TOL = 1e-12
ATOM_TOL = 1e-9


class InverseFMError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(InverseFMError, ValueError):
    """Input data violates a structural or numerical invariant."""


class DimensionMismatch(ValidationError):
    pass


class PSDViolation(ValidationError):
    pass


class SingularCovariance(ValidationError):
    pass


class InconsistentField(ValidationError):
    pass


class NotApplicableInOneDimension(ValidationError):
    pass


class MarginalMismatch(ValidationError):
    pass


class NumericalError(InverseFMError, ArithmeticError):
    """A computation broke down (singular system, overflow, underflow)."""


class SingularMarginal(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class EmptyNeighborhood(NumericalError):
    pass


class IllPosed(InverseFMError):
    """The snapshot data does not pin down a unique plan."""

    def __init__(self, message: str, rank_gap: int = 0):
        super().__init__(message)
        self.rank_gap = rank_gap


class Infeasible(InverseFMError):
    pass


def _frozen(a, ndim: int | None = None, name: str = "array") -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _square(a, name: str) -> np.ndarray:
    arr = _frozen(np.atleast_2d(np.asarray(a, dtype=float)), 2, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {arr.shape}")
    return arr


def _vector(a, name: str) -> np.ndarray:
    return _frozen(np.atleast_1d(np.asarray(a, dtype=float)), 1, name)


def symmetric_part(S) -> np.ndarray:
    """Return ``(S + S.T) / 2``.

    The result is exactly symmetric: entry ``(i, j)`` and ``(j, i)`` are the
    same floating-point sum.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {S.shape}")
    return 0.5 * (S + S.T)


def asymmetry(M) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.max(np.abs(M - M.T))) if M.size else 0.0


def min_eigenvalue(M) -> float:
    """Smallest eigenvalue of the symmetric part of ``M``."""
    return float(np.linalg.eigvalsh(symmetric_part(M))[0])


# ---------------------------------------------------------------------------
# Gaussian family


@dataclass(frozen=True, eq=False)
class GaussianDistribution:
    """Multivariate normal law ``N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _vector(self.mean, "mean")
        cov = _square(self.cov, "cov")
        if cov.shape[0] != mean.shape[0]:
            raise DimensionMismatch(f"mean has length {mean.shape[0]} but cov is {cov.shape}")
        if asymmetry(cov) > SYM_TOL:
            raise ValidationError(f"cov is not symmetric (max asymmetry {asymmetry(cov):.3e})")
        lam = min_eigenvalue(cov)
        if lam < -PSD_TOL:
            raise PSDViolation(f"cov is not positive semidefinite (min eigenvalue {lam:.3e})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def to_dict(self) -> dict[str, Any]:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> GaussianDistribution:
        return cls(mean=d["mean"], cov=d["cov"])


@dataclass(frozen=True, eq=False)
class GaussianPlan:
    """Gaussian coupling of ``N(mu0, sigma0)`` and ``N(mu1, sigma1)``.

    ``cross`` is the cross-covariance ``S = Cov(X0, X1)``; it need not be
    symmetric. Construction only checks shapes. Use
    :func:`validate_gaussian_plan` to check that the joint law exists.
    """

    mu0: np.ndarray
    mu1: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray
    cross: np.ndarray

    def __post_init__(self):
        mu0 = _vector(self.mu0, "mu0")
        mu1 = _vector(self.mu1, "mu1")
        sigma0 = _square(self.sigma0, "sigma0")
        sigma1 = _square(self.sigma1, "sigma1")
        cross = _square(self.cross, "cross")
        D = mu0.shape[0]
        shapes = {"mu1": mu1.shape, "sigma0": sigma0.shape, "sigma1": sigma1.shape, "cross": cross.shape}
        expected = {"mu1": (D,), "sigma0": (D, D), "sigma1": (D, D), "cross": (D, D)}
        bad = [k for k in shapes if shapes[k] != expected[k]]
        if bad:
            detail = ", ".join(f"{k}{shapes[k]}" for k in bad)
            raise DimensionMismatch(f"blocks inconsistent with D={D}: {detail}")
        for k, v in (("mu0", mu0), ("mu1", mu1), ("sigma0", sigma0), ("sigma1", sigma1), ("cross", cross)):
            object.__setattr__(self, k, v)

    @property
    def dim(self) -> int:
        return self.mu0.shape[0]

    @property
    def joint_mean(self) -> np.ndarray:
        return np.concatenate([self.mu0, self.mu1])

    @property
    def joint_cov(self) -> np.ndarray:
        return np.block([[self.sigma0, self.cross], [self.cross.T, self.sigma1]])

    @cached_property
    def report(self) -> ValidationReport:
        return validate_gaussian_plan(self)

    def source(self) -> GaussianDistribution:
        return GaussianDistribution(self.mu0, self.sigma0)

    def target(self) -> GaussianDistribution:
        return GaussianDistribution(self.mu1, self.sigma1)

    def with_cross(self, cross) -> GaussianPlan:
        return GaussianPlan(self.mu0, self.mu1, self.sigma0, self.sigma1, cross)

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k).tolist() for k in ("mu0", "mu1", "sigma0", "sigma1", "cross")}

    @classmethod
    def from_dict(cls, d: dict) -> GaussianPlan:
        return cls(**{k: d[k] for k in ("mu0", "mu1", "sigma0", "sigma1", "cross")})


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...] = field(default_factory=tuple)

    @property
    def valid(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def raise_if_invalid(self, label: str = "plan") -> None:
        bad = self.failures()
        if not bad:
            return
        msg = f"{label} invalid: " + "; ".join(f"{c.name} ({c.detail})" for c in bad)
        names = {c.name for c in bad}
        if "joint_psd" in names:
            raise PSDViolation(msg)
        if names & {"sigma0_positive_definite", "sigma1_positive_definite"}:
            raise SingularCovariance(msg)
        raise ValidationError(msg)

    def to_dict(self) -> dict[str, Any]:
        return {
            "valid": self.valid,
            "checks": [
                {"name": c.name, "passed": c.passed, "value": c.value, "threshold": c.threshold, "detail": c.detail}
                for c in self.checks
            ],
        }


def validate_gaussian_plan(plan: GaussianPlan) -> ValidationReport:
    """Check every invariant of a Gaussian plan and report the margins.

    The plan is accepted iff ``sigma0`` and ``sigma1`` are symmetric and
    strictly positive definite and the joint block covariance
    ``[[sigma0, S], [S.T, sigma1]]`` is positive semidefinite.

    Examples
    --------
    >>> plan = GaussianPlan([0.0], [0.0], [[1.0]], [[1.0]], [[1.5]])
    >>> report = validate_gaussian_plan(plan)
    >>> report.valid, round(report["joint_psd"].value, 12)
    (False, -0.5)
    """
    checks = []
    for name in ("sigma0", "sigma1"):
        M = getattr(plan, name)
        asym = asymmetry(M)
        checks.append(Check(f"{name}_symmetric", asym <= SYM_TOL, asym, SYM_TOL, f"max asymmetry {asym:.3e}"))
        lam = min_eigenvalue(M)
        checks.append(
            Check(f"{name}_positive_definite", lam >= PD_TOL, lam, PD_TOL, f"min eigenvalue {lam:.6g}")
        )
    lam = float(np.linalg.eigvalsh(symmetric_part(plan.joint_cov))[0])
    checks.append(Check("joint_psd", lam >= -PSD_TOL, lam, -PSD_TOL, f"min eigenvalue {lam:.6g}"))
    return ValidationReport(tuple(checks))


@dataclass(frozen=True, eq=False)
class AffineVelocityField:
    """The affine map ``x -> A x + b`` attached to time ``t``."""

    A: np.ndarray
    b: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        A = _square(self.A, "A")
        b = _vector(self.b, "b")
        if b.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"A is {A.shape} but b has length {b.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "t", float(self.t))

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def __call__(self, x) -> np.ndarray:
        """Evaluate at one point of shape ``(D,)`` or a batch ``(N, D)``."""
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + self.b

    def to_dict(self) -> dict[str, Any]:
        return {"t": self.t, "A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> AffineVelocityField:
        return cls(A=d["A"], b=d["b"], t=d.get("t", 0.0))


# ---------------------------------------------------------------------------
# One-dimensional atomic family


def merge_atoms(atoms, masses, tol: float = ATOM_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Sort atoms and merge runs whose consecutive gaps are ``<= tol``.

    A merged atom sits at the mass-weighted mean of its members (plain mean
    when the run carries no mass). Returns ``(atoms, masses)``.
    """
    atoms = np.asarray(atoms, dtype=float).ravel()
    masses = np.asarray(masses, dtype=float).ravel()
    if atoms.shape != masses.shape:
        raise DimensionMismatch(f"{atoms.size} atoms but {masses.size} masses")
    if atoms.size == 0:
        return atoms, masses
    order = np.argsort(atoms, kind="stable")
    a, m = atoms[order], masses[order]
    labels = cluster_labels(a, tol)
    k = labels[-1] + 1
    tot = np.bincount(labels, weights=m, minlength=k)
    cnt = np.bincount(labels, minlength=k)
    wsum = np.bincount(labels, weights=a * m, minlength=k)
    plain = np.bincount(labels, weights=a, minlength=k) / cnt
    with np.errstate(invalid="ignore", divide="ignore"):
        loc = np.where(tot > 0, wsum / np.where(tot > 0, tot, 1.0), plain)
    # runs of identical values keep that value bit-exact
    starts = np.searchsorted(labels, np.arange(k))
    lo, hi = np.minimum.reduceat(a, starts), np.maximum.reduceat(a, starts)
    loc = np.where(lo == hi, lo, np.clip(loc, lo, hi))
    return loc, tot


def cluster_labels(sorted_atoms: np.ndarray, tol: float = ATOM_TOL) -> np.ndarray:
    """Label consecutive sorted values into runs separated by gaps ``> tol``."""
    if sorted_atoms.size == 0:
        return np.zeros(0, dtype=int)
    breaks = np.diff(sorted_atoms) > tol
    return np.concatenate([[0], np.cumsum(breaks)]).astype(int)


@dataclass(frozen=True, eq=False)
class AtomicMeasure1D:
    """Finitely supported probability measure on the real line.

    Atoms closer than ``ATOM_TOL`` are merged at construction and zero-mass
    atoms are dropped, so ``atoms`` is strictly increasing with gaps larger
    than the collision tolerance.
    """

    atoms: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float).ravel()
        if np.any(masses < 0):
            raise ValidationError("masses must be nonnegative")
        if not np.all(np.isfinite(masses)) or not np.all(np.isfinite(np.asarray(self.atoms, dtype=float))):
            raise ValidationError("atoms and masses must be finite")
        a, m = merge_atoms(self.atoms, masses)
        keep = m > 0
        a, m = a[keep], m[keep]
        total = float(m.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise ValidationError(f"masses sum to {total!r}, expected 1")
        object.__setattr__(self, "atoms", _frozen(a))
        object.__setattr__(self, "masses", _frozen(m))

    def __len__(self) -> int:
        return self.atoms.shape[0]

    def to_dict(self) -> dict[str, Any]:
        return {"atoms": self.atoms.tolist(), "masses": self.masses.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> AtomicMeasure1D:
        return cls(atoms=d["atoms"], masses=d["masses"])


def measure_discrepancy(p: AtomicMeasure1D, q: AtomicMeasure1D, tol: float = ATOM_TOL) -> float:
    """Largest atomwise mass difference between two atomic measures.

    Atoms of ``p`` and ``q`` within ``tol`` of each other are paired; an
    atom without partner contributes its whole mass.
    """
    atoms = np.concatenate([p.atoms, q.atoms])
    signed = np.concatenate([p.masses, -q.masses])
    _, diff = merge_atoms(atoms, signed, tol)
    return float(np.max(np.abs(diff))) if diff.size else 0.0


@dataclass(frozen=True, eq=False)
class DiscretePlan1D:
    """Coupling of two atomic measures on the real line.

    ``weights[i, j]`` is the mass carried from ``x_atoms[i]`` to
    ``y_atoms[j]``.
    """

    x_atoms: np.ndarray
    y_atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = _vector(self.x_atoms, "x_atoms")
        y = _vector(self.y_atoms, "y_atoms")
        w = _frozen(np.atleast_2d(np.asarray(self.weights, dtype=float)), 2, "weights")
        if w.shape != (x.size, y.size):
            raise DimensionMismatch(f"weights has shape {w.shape}, expected {(x.size, y.size)}")
        for name, v in (("x_atoms", x), ("y_atoms", y)):
            if v.size > 1 and np.min(np.diff(v)) <= ATOM_TOL:
                raise ValidationError(f"{name} must be strictly increasing with gaps > {ATOM_TOL}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be finite and nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise ValidationError(f"weights sum to {total!r}, expected 1")
        object.__setattr__(self, "x_atoms", x)
        object.__setattr__(self, "y_atoms", y)
        object.__setattr__(self, "weights", w)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    @property
    def source_masses(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def target_masses(self) -> np.ndarray:
        return self.weights.sum(axis=0)

    def check_marginals(self, source_masses, target_masses, tol: float = MASS_TOL) -> None:
        """Raise :class:`MarginalMismatch` unless row/column sums match."""
        dr = np.max(np.abs(self.source_masses - np.asarray(source_masses, dtype=float)))
        dc = np.max(np.abs(self.target_masses - np.asarray(target_masses, dtype=float)))
        if dr > tol or dc > tol:
            raise MarginalMismatch(f"marginal sums off by {max(dr, dc):.3e} (row {dr:.3e}, column {dc:.3e})")

    def source(self) -> AtomicMeasure1D:
        return AtomicMeasure1D(self.x_atoms, self.source_masses)

    def target(self) -> AtomicMeasure1D:
        return AtomicMeasure1D(self.y_atoms, self.target_masses)

    def to_dict(self) -> dict[str, Any]:
        return {"x_atoms": self.x_atoms.tolist(), "y_atoms": self.y_atoms.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> DiscretePlan1D:
        return cls(x_atoms=d["x_atoms"], y_atoms=d["y_atoms"], weights=d["weights"])


def plan_from_dict(d: dict) -> GaussianPlan | DiscretePlan1D:
    """Build whichever plan type the keys of ``d`` describe."""
    if "cross" in d:
        return GaussianPlan.from_dict(d)
    if "weights" in d:
        return DiscretePlan1D.from_dict(d)
    raise ValidationError("plan must carry either Gaussian fields (mu0, ..., cross) or x_atoms/y_atoms/weights")
