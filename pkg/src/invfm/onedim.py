"""Discrete couplings on the real line: snapshots, characteristic functions,
and recovery of the coupling from its interpolated marginals.

A snapshot at time ``t`` puts mass ``w[i, j]`` at ``(1 - t) x[i] + t y[j]``.
Pairs landing within ``ATOM_TOL`` of each other are indistinguishable in
the snapshot and share one linear data equation. Stacking these equations
over several times together with the row/column sum constraints gives a
finite linear system in ``w``; :func:`uniqueness_certificate` measures
whether it pins ``w`` down and :func:`invert_from_snapshots` solves it
under nonnegativity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import nnls

from .core import (
    ATOM_TOL,
    AtomicMeasure1D,
    DiscretePlan1D,
    IllPosed,
    Infeasible,
    MarginalMismatch,
    ValidationError,
    cluster_labels,
    measure_discrepancy,
)

CERTIFICATE_TOL = 1e-10
ENDPOINT_TOL = 1e-10
INFEASIBLE_TOL = 1e-6
_EQUALITY_WEIGHT = 1e3


# ---------------------------------------------------------------------------
# Snapshots


@dataclass(frozen=True)
class SnapshotSet:
    """Observed marginals ``p_t`` at distinct sorted times."""

    times: tuple[float, ...]
    measures: tuple[AtomicMeasure1D, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        measures = tuple(self.measures)
        if len(times) != len(measures):
            raise ValidationError(f"{len(times)} times but {len(measures)} measures")
        if any(not 0.0 <= t <= 1.0 for t in times):
            raise ValidationError("snapshot times must lie in [0, 1]")
        order = sorted(range(len(times)), key=times.__getitem__)
        times = tuple(times[k] for k in order)
        measures = tuple(measures[k] for k in order)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("snapshot times must be distinct")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "measures", measures)

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        return iter(zip(self.times, self.measures))

    @classmethod
    def from_plan(cls, plan: DiscretePlan1D, times: Iterable[float]) -> SnapshotSet:
        times = list(times)
        return cls(tuple(times), tuple(forward_snapshot(plan, t) for t in times))

    def to_dict(self) -> dict[str, Any]:
        return {"snapshots": [{"t": t, **m.to_dict()} for t, m in self]}

    @classmethod
    def from_dict(cls, d: dict) -> SnapshotSet:
        items = d["snapshots"]
        return cls(
            tuple(s["t"] for s in items),
            tuple(AtomicMeasure1D(s["atoms"], s["masses"]) for s in items),
        )


def interpolate_supports(x, y, t: float) -> np.ndarray:
    """Locations ``(1 - t) x[i] + t y[j]`` as an ``(n, m)`` array."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (1.0 - t) * x[:, None] + t * y[None, :]


def forward_snapshot(plan: DiscretePlan1D, t: float) -> AtomicMeasure1D:
    """Law of ``(1 - t) X0 + t X1`` under a discrete plan.

    >>> plan = DiscretePlan1D([0, 1], [0, 1], [[0, 0.5], [0.5, 0]])
    >>> snap = forward_snapshot(plan, 0.5)
    >>> snap.atoms.tolist(), snap.masses.tolist()
    ([0.5], [1.0])
    """
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    locs = interpolate_supports(plan.x_atoms, plan.y_atoms, t)
    return AtomicMeasure1D(locs.ravel(), plan.weights.ravel())


# ---------------------------------------------------------------------------
# Characteristic functions


def char_fn(plan: DiscretePlan1D, xi0: float, xi1: float) -> complex:
    """``E exp(i (xi0 X0 + xi1 X1))`` under the plan."""
    phase = xi0 * plan.x_atoms[:, None] + xi1 * plan.y_atoms[None, :]
    return complex(np.sum(plan.weights * np.exp(1j * phase)))


def marginal_cf(snapshot: AtomicMeasure1D, xi: float) -> complex:
    return complex(np.sum(snapshot.masses * np.exp(1j * xi * snapshot.atoms)))


@dataclass(frozen=True)
class CFQuery:
    """A frequency pair in the nonnegative quadrant.

    Use :meth:`from_ray` for the ``(t, xi_t)`` parameterisation, which
    corresponds to ``(xi0, xi1) = ((1 - t) xi_t, t xi_t)``.
    """

    xi0: float
    xi1: float

    def __post_init__(self):
        if self.xi0 < 0 or self.xi1 < 0:
            raise ValidationError("frequencies must be nonnegative")

    @classmethod
    def from_ray(cls, t: float, xi_t: float) -> CFQuery:
        return cls((1.0 - t) * xi_t, t * xi_t)

    def __call__(self, plan: DiscretePlan1D) -> complex:
        return char_fn(plan, self.xi0, self.xi1)


def ray_identity_residual(plan: DiscretePlan1D, t: float, xi_t: float) -> float:
    """``|E exp(i xi_t X_t) - phi((1 - t) xi_t, t xi_t)|``.

    The left side is computed from the merged snapshot, the right side from
    the joint weights, so agreement checks that the snapshot carries the
    plan's characteristic function along the ray.
    """
    lhs = marginal_cf(forward_snapshot(plan, t), xi_t)
    rhs = char_fn(plan, (1.0 - t) * xi_t, t * xi_t)
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# Linear design


def _marginal_constraints(n: int, m: int) -> np.ndarray:
    rows = np.kron(np.eye(n), np.ones((1, m)))
    cols = np.kron(np.ones((1, n)), np.eye(m))
    return np.vstack([rows, cols])


def _time_design(x: np.ndarray, y: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Cluster indicator rows and cluster locations for one snapshot time.

    Row ``k`` of the returned matrix has a one at each flattened pair index
    ``i * m + j`` whose location falls in cluster ``k``.
    """
    locs = interpolate_supports(x, y, t).ravel()
    order = np.argsort(locs, kind="stable")
    labels = np.empty_like(order)
    labels[order] = cluster_labels(locs[order], ATOM_TOL)
    k = int(labels.max()) + 1 if labels.size else 0
    M = np.zeros((k, locs.size))
    M[labels, np.arange(locs.size)] = 1.0
    return M, locs


def snapshot_design(x_atoms, y_atoms, times: Sequence[float]) -> np.ndarray:
    """Stack the cluster indicator rows of every time into one matrix."""
    x = np.asarray(x_atoms, dtype=float)
    y = np.asarray(y_atoms, dtype=float)
    blocks = [_time_design(x, y, t)[0] for t in times]
    if not blocks:
        return np.zeros((0, x.size * y.size))
    return np.vstack(blocks)


@dataclass(frozen=True)
class Certificate:
    """Identifiability report for a support pair and a set of times."""

    free_dim: int
    rank: int
    smallest_singular_value: float | None
    tol: float = CERTIFICATE_TOL
    times: tuple[float, ...] = field(default_factory=tuple)

    @property
    def rank_gap(self) -> int:
        return self.free_dim - self.rank

    @property
    def positive(self) -> bool:
        return self.free_dim == 0 or (
            self.smallest_singular_value is not None and self.smallest_singular_value > self.tol
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "positive": self.positive,
            "free_dim": self.free_dim,
            "rank": self.rank,
            "rank_gap": self.rank_gap,
            "smallest_singular_value": self.smallest_singular_value,
            "tol": self.tol,
            "times": list(self.times),
        }


def uniqueness_certificate(x_atoms, y_atoms, times: Sequence[float]) -> Certificate:
    """Check that snapshots at ``times`` determine a plan on these supports.

    The snapshot operator is restricted to the directions that keep row and
    column sums fixed (the null space of the marginal constraints). The
    certificate is positive iff its smallest singular value exceeds
    ``1e-10``, or if that null space is trivial.
    """
    x = np.asarray(x_atoms, dtype=float)
    y = np.asarray(y_atoms, dtype=float)
    times = tuple(float(t) for t in times)
    n, m = x.size, y.size
    N = null_space(_marginal_constraints(n, m))
    free_dim = N.shape[1]
    if free_dim == 0:
        return Certificate(0, 0, None, times=times)
    M = snapshot_design(x, y, times)
    if M.shape[0] == 0:
        return Certificate(free_dim, 0, 0.0, times=times)
    sv = np.linalg.svd(M @ N, compute_uv=False)
    sv = np.concatenate([sv, np.zeros(max(0, free_dim - sv.size))])
    rank = int(np.sum(sv > CERTIFICATE_TOL))
    return Certificate(free_dim, rank, float(sv[free_dim - 1]), times=times)


def default_snapshot_times(x_atoms, y_atoms, max_times: int = 32) -> tuple[float, ...]:
    """Smallest uniform interior grid ``k / (K + 1)`` that passes the certificate.

    The starting ``K`` is ``max(2, ceil(f / q))`` where ``f = (n - 1)(m - 1)``
    is the number of free parameters and ``q`` the fewest informative
    equations a single grid time contributes (distinct locations minus the
    ``n + m - 1`` marginal constraints). ``K`` grows until certified.

    Raises
    ------
    IllPosed
        If no grid with up to ``max_times`` points is certified.
    """
    x = np.asarray(x_atoms, dtype=float)
    y = np.asarray(y_atoms, dtype=float)
    n, m = x.size, y.size
    free = (n - 1) * (m - 1)
    if free == 0:
        return (1 / 3, 2 / 3)
    K = 2
    while K <= max_times:
        grid = tuple(k / (K + 1) for k in range(1, K + 1))
        q = min(_time_design(x, y, t)[0].shape[0] for t in grid) - (n + m - 1)
        K_needed = max(2, math.ceil(free / q)) if q > 0 else K + 1
        if K_needed > K:
            K = K_needed
            continue
        cert = uniqueness_certificate(x, y, grid)
        if cert.positive:
            return grid
        K += 1
    raise IllPosed(f"no uniform grid with at most {max_times} times certifies these supports")


# ---------------------------------------------------------------------------
# Inversion


@dataclass(frozen=True)
class InversionResult:
    plan: DiscretePlan1D
    certificate: Certificate
    residual: float
    snapshot_errors: tuple[float, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "plan": self.plan.to_dict(),
            "certificate": self.certificate.to_dict(),
            "residual": self.residual,
            "snapshot_errors": list(self.snapshot_errors),
        }


def _observed_masses(locs: np.ndarray, M: np.ndarray, snap: AtomicMeasure1D, t: float) -> np.ndarray:
    """Assign each observed atom to the design cluster it belongs to."""
    d = np.zeros(M.shape[0])
    if M.shape[0] == 0:
        return d
    owner = np.argmax(M, axis=0)  # cluster of each pair
    order = np.argsort(locs)
    sl = locs[order]
    for a, mass in zip(snap.atoms, snap.masses):
        k = np.searchsorted(sl, a)
        cand = [c for c in (k - 1, k) if 0 <= c < sl.size]
        best = min(cand, key=lambda c: abs(sl[c] - a))
        if abs(sl[best] - a) > ATOM_TOL:
            raise Infeasible(f"snapshot at t={t} has an atom at {a!r} that no pair of support points reaches")
        d[owner[order[best]]] += mass
    return d


def _polish(E: np.ndarray, c: np.ndarray, M: np.ndarray, d: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Solve the equality-constrained least squares problem on the support of ``w``.

    Returns ``w`` unchanged when the restricted solution leaves the
    nonnegative orthant.
    """
    P = w > 0
    if not np.any(P):
        return w
    Ep, Mp = E[:, P], M[:, P]
    z0 = np.linalg.lstsq(Ep, c, rcond=None)[0]
    N = null_space(Ep)
    z = z0
    if N.shape[1] and Mp.shape[0]:
        y = np.linalg.lstsq(Mp @ N, d - Mp @ z0, rcond=None)[0]
        z = z0 + N @ y
    if np.min(z) < -1e-12:
        return w
    out = np.zeros_like(w)
    out[P] = np.clip(z, 0.0, None)
    return out


def invert_from_snapshots(x_atoms, y_atoms, source_masses, target_masses, snapshots: SnapshotSet) -> DiscretePlan1D:
    """Recover a discrete plan from its marginal snapshots.

    Thin wrapper around :func:`invert_with_diagnostics` that returns only the
    plan.

    >>> truth = DiscretePlan1D([0, 1], [0, 1], [[0.3, 0.2], [0.2, 0.3]])
    >>> snaps = SnapshotSet.from_plan(truth, [0.5])
    >>> plan = invert_from_snapshots([0, 1], [0, 1], [0.5, 0.5], [0.5, 0.5], snaps)
    >>> np.round(plan.weights, 12).tolist()
    [[0.3, 0.2], [0.2, 0.3]]
    """
    return invert_with_diagnostics(x_atoms, y_atoms, source_masses, target_masses, snapshots).plan


def invert_with_diagnostics(
    x_atoms,
    y_atoms,
    source_masses,
    target_masses,
    snapshots: SnapshotSet,
) -> InversionResult:
    """Recover a discrete plan and report certificate and residuals.

    Unknowns are the weights ``w[i, j] >= 0``. Row and column sums are
    enforced as equality constraints; every snapshot contributes one
    equation per cluster of colliding pairs (observed mass, or zero where
    the snapshot has no atom). The system is solved by nonnegative least
    squares with heavily weighted equalities, then re-solved exactly on the
    resulting support.

    Zero-mass source or target atoms are stripped before solving and
    reinstated as zero rows/columns in the result.

    Raises
    ------
    MarginalMismatch
        A snapshot at ``t = 0`` or ``t = 1`` disagrees with the declared
        marginal by more than ``1e-10``.
    IllPosed
        The snapshots do not determine the plan (negative certificate);
        ``rank_gap`` carries the missing rank.
    Infeasible
        No nonnegative plan reproduces the snapshots to within ``1e-6``.
    """
    x = np.asarray(x_atoms, dtype=float)
    y = np.asarray(y_atoms, dtype=float)
    a = np.asarray(source_masses, dtype=float)
    b = np.asarray(target_masses, dtype=float)
    if a.shape != x.shape or b.shape != y.shape:
        raise ValidationError("marginal masses must match the supports in length")
    if np.any(a < 0) or np.any(b < 0):
        raise ValidationError("marginal masses must be nonnegative")
    src, tgt = AtomicMeasure1D(x, a), AtomicMeasure1D(y, b)
    for t, snap in snapshots:
        for end, ref in ((0.0, src), (1.0, tgt)):
            if t == end:
                gap = measure_discrepancy(snap, ref)
                if gap > ENDPOINT_TOL:
                    raise MarginalMismatch(f"snapshot at t={t:g} differs from the declared marginal by {gap:.3e}")

    rows, cols = np.nonzero(a > 0)[0], np.nonzero(b > 0)[0]
    xs, ys, As, Bs = x[rows], y[cols], a[rows], b[cols]
    n, m = xs.size, ys.size

    cert = uniqueness_certificate(xs, ys, snapshots.times)
    if not cert.positive:
        raise IllPosed(
            f"snapshot times {list(snapshots.times)} leave {cert.rank_gap} of {cert.free_dim} "
            f"free directions undetermined (smallest singular value {cert.smallest_singular_value:.3e})",
            rank_gap=cert.rank_gap,
        )

    E = _marginal_constraints(n, m)
    c = np.concatenate([As, Bs])
    blocks, data = [], []
    for t, snap in snapshots:
        Mt, locs = _time_design(xs, ys, t)
        blocks.append(Mt)
        data.append(_observed_masses(locs, Mt, snap, t))
    M = np.vstack(blocks) if blocks else np.zeros((0, n * m))
    d = np.concatenate(data) if data else np.zeros(0)

    lhs = np.vstack([_EQUALITY_WEIGHT * E, M])
    rhs = np.concatenate([_EQUALITY_WEIGHT * c, d])
    w, _ = nnls(lhs, rhs, maxiter=50 * n * m + 100)
    w = _polish(E, c, M, d, w)

    residual = float(max(np.max(np.abs(E @ w - c)), np.max(np.abs(M @ w - d)) if d.size else 0.0))
    if residual > INFEASIBLE_TOL:
        raise Infeasible(f"best nonnegative fit leaves residual {residual:.3e} > {INFEASIBLE_TOL:g}")

    full = np.zeros((x.size, y.size))
    full[np.ix_(rows, cols)] = w.reshape(n, m)
    full /= full.sum()
    plan = DiscretePlan1D(x, y, full)
    errors = tuple(measure_discrepancy(forward_snapshot(plan, t), snap) for t, snap in snapshots)
    return InversionResult(plan, cert, residual, errors)
