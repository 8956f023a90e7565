"""Sampling couplings, moving particles along a velocity field, and the
sample-based (Nadaraya-Watson) velocity estimate.

Randomness is organised in fixed-size chunks of particles. Chunk ``k`` draws
from its own stream spawned from ``SeedSequence(seed)``, so results depend
only on the seed and never on how many worker threads process the chunks.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from ._io import write_csv
from .core import (
    AffineVelocityField,
    DiscretePlan1D,
    EmptyNeighborhood,
    GaussianPlan,
    NonFinite,
    SingularMarginal,
    ValidationError,
    symmetric_part,
)
from .gaussian import gaussian_flow, marginal_at

CHUNK = 8192
N_SE = 4.0
_MIN_WEIGHT = 1e-300

Field = Callable[[float], Callable[[np.ndarray], np.ndarray]]


def _map_chunks(fn, n_chunks: int, workers: int) -> list:
    if workers <= 1 or n_chunks <= 1:
        return [fn(k) for k in range(n_chunks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_chunks)))


def _chunk_bounds(n: int) -> list[tuple[int, int]]:
    return [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(symmetric_part(M))
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_plan(plan: GaussianPlan | DiscretePlan1D, n: int, seed: int = 0, workers: int = 1):
    """Draw ``n`` i.i.d. pairs ``(X0, X1)`` from a plan.

    Returns
    -------
    x0, x1 : ndarray
        Shape ``(n, D)`` for a Gaussian plan, ``(n,)`` for a discrete one.

    Notes
    -----
    Gaussian pairs are drawn as ``X0 = mu0 + L0 z0`` followed by the
    conditional law ``X1 | X0``, which stays well defined when the joint
    covariance is singular (deterministic couplings).
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    bounds = _chunk_bounds(n)
    streams = np.random.SeedSequence(seed).spawn(len(bounds))

    if isinstance(plan, GaussianPlan):
        plan.report.raise_if_invalid()
        D = plan.dim
        L0 = np.linalg.cholesky(plan.sigma0)
        gain = np.linalg.solve(plan.sigma0, plan.cross).T
        R = _psd_sqrt(plan.sigma1 - gain @ plan.cross)

        def draw(k):
            lo, hi = bounds[k]
            rng = np.random.default_rng(streams[k])
            z = rng.standard_normal((hi - lo, 2 * D))
            dx0 = z[:, :D] @ L0.T
            x0 = plan.mu0 + dx0
            x1 = plan.mu1 + dx0 @ gain.T + z[:, D:] @ R.T
            return x0, x1

    elif isinstance(plan, DiscretePlan1D):
        p = plan.weights.ravel()
        m = plan.shape[1]

        def draw(k):
            lo, hi = bounds[k]
            rng = np.random.default_rng(streams[k])
            idx = rng.choice(p.size, size=hi - lo, p=p)
            return plan.x_atoms[idx // m], plan.y_atoms[idx % m]

    else:
        raise TypeError(f"unsupported plan type {type(plan).__name__}")

    parts = _map_chunks(draw, len(bounds), workers)
    return np.concatenate([a for a, _ in parts]), np.concatenate([b for _, b in parts])


# ---------------------------------------------------------------------------
# Particle transport


def _extrapolated(prev, mid):
    """Linear extrapolation of a field to the end of a step from ``t - h`` and ``t - h/2``."""
    if isinstance(prev, AffineVelocityField) and isinstance(mid, AffineVelocityField):
        return AffineVelocityField(2 * mid.A - prev.A, 2 * mid.b - prev.b, 2 * mid.t - prev.t)
    return lambda x: 2 * mid(x) - prev(x)


def _stage_fields(field: Field, steps: int) -> list:
    """Evaluate the field at every RK4 stage time ``k h / 2``, ``k = 0..2 steps``."""
    h = 1.0 / steps
    out = []
    for k in range(2 * steps + 1):
        t = min(0.5 * k * h, 1.0)
        try:
            out.append(field(t))
        except SingularMarginal:
            if k != 2 * steps:
                raise
            out.append(_extrapolated(out[-2], out[-1]))
    return out


def transport_cloud(field: Field, x0, steps: int, times: Sequence[float], workers: int = 1) -> np.ndarray:
    """Integrate ``dx/dt = v_t(x)`` with classic RK4 and record the cloud.

    Parameters
    ----------
    field : callable
        ``field(t)`` returns a callable ``x -> v_t(x)`` acting on a batch of
        rows, e.g. :func:`invfm.gaussian.gaussian_flow`.
    x0 : ndarray, shape (n, D) or (n,)
        Particle positions at ``t = 0``.
    steps : int
        Number of uniform steps of size ``h = 1 / steps`` covering ``[0, 1]``.
    times : sequence of float
        Recording times; each must be a multiple of ``h``.

    Returns
    -------
    ndarray, shape (len(times), n, D) or (len(times), n)
    """
    steps = int(steps)
    if steps < 1:
        raise ValueError("steps must be at least 1")
    x0 = np.asarray(x0, dtype=float)
    flat = x0.ndim == 1
    X = x0[:, None] if flat else x0
    idx = []
    for t in times:
        k = round(float(t) * steps)
        if not 0 <= k <= steps or abs(k - float(t) * steps) > 1e-9:
            raise ValueError(f"recording time {t} is not on the step grid h = 1/{steps}")
        idx.append(k)
    record_at = {k: j for j, k in enumerate(idx)}
    fields = _stage_fields(field, steps) if idx and max(idx) > 0 else []
    h = 1.0 / steps
    last = max(idx) if idx else 0
    bounds = _chunk_bounds(X.shape[0])

    def run(c):
        with np.errstate(over="ignore", invalid="ignore"):
            return _run(c)

    def _run(c):
        lo, hi = bounds[c]
        x = X[lo:hi].copy()
        out = np.empty((len(idx), hi - lo, X.shape[1]))
        for j, k in enumerate(idx):
            if k == 0:
                out[j] = x
        for s in range(last):
            f0, fm, f1 = fields[2 * s], fields[2 * s + 1], fields[2 * s + 2]
            k1 = f0(x)
            k2 = fm(x + 0.5 * h * k1)
            k3 = fm(x + 0.5 * h * k2)
            k4 = f1(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise NonFinite(f"particle state became non-finite at t={(s + 1) * h:g}")
            if s + 1 in record_at:
                for j, k in enumerate(idx):
                    if k == s + 1:
                        out[j] = x
        return out

    parts = _map_chunks(run, len(bounds), workers)
    res = np.concatenate(parts, axis=1) if parts else np.empty((len(idx), 0, X.shape[1]))
    return res[..., 0] if flat else res


def integrate_particles(field: Field, x0, steps: int, workers: int = 1) -> np.ndarray:
    """Move particles from ``t = 0`` to ``t = 1`` along ``field`` with RK4."""
    return transport_cloud(field, x0, steps, [1.0], workers=workers)[0]


def write_particle_csv(path: Path | str, times: Sequence[float], clouds: np.ndarray) -> None:
    """Write clouds as rows ``t, particle_id, x_1..x_D``."""
    clouds = np.asarray(clouds, dtype=float)
    if clouds.ndim == 2:
        clouds = clouds[..., None]
    D = clouds.shape[2]
    header = ["t", "particle_id"] + [f"x_{i + 1}" for i in range(D)]
    rows = (
        [float(t), pid, *map(float, clouds[j, pid])]
        for j, t in enumerate(times)
        for pid in range(clouds.shape[1])
    )
    write_csv(path, header, rows)


@dataclass(frozen=True)
class MomentCheck:
    t: float
    mean_error: float
    cov_error: float
    mean_tol: float
    cov_tol: float
    max_mean_z: float
    max_cov_z: float
    passed: bool


@dataclass(frozen=True)
class MomentReport:
    n: int
    steps: int
    seed: int
    n_se: float
    checks: tuple[MomentCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "n": self.n,
            "steps": self.steps,
            "seed": self.seed,
            "n_se": self.n_se,
            "checks": [dict(vars(c)) for c in self.checks],
        }


def _z_scores(emp_mean, emp_cov, mean, cov, n):
    se_mean = np.sqrt(np.diag(cov) / n)
    d = np.diag(cov)
    se_cov = np.sqrt((np.outer(d, d) + cov**2) / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        zm = np.where(se_mean > 0, np.abs(emp_mean - mean) / se_mean, np.where(np.abs(emp_mean - mean) > 1e-12, np.inf, 0.0))
        zc = np.where(se_cov > 0, np.abs(emp_cov - cov) / se_cov, np.where(np.abs(emp_cov - cov) > 1e-12, np.inf, 0.0))
    return zm, zc, se_mean, se_cov


def marginal_moment_check(
    plan: GaussianPlan,
    field: Field | None = None,
    t_grid: Sequence[float] = (0.25, 0.5, 0.75, 1.0),
    n: int = 100_000,
    steps: int = 100,
    seed: int = 0,
    n_se: float = N_SE,
    workers: int = 1,
) -> MomentReport:
    """Transport samples of ``p0`` and compare their moments with ``p_t``.

    Each recorded cloud's empirical mean and covariance is compared entrywise
    with the closed-form ``(mu_t, Sigma_t)``. An entry passes when it lies
    within ``n_se`` Monte Carlo standard errors, using the Gaussian
    ``Var(mean_i) = S_ii / n`` and ``Var(cov_ij) = (S_ii S_jj + S_ij^2) / n``.
    ``field`` defaults to the plan's own velocity field.
    """
    field = gaussian_flow(plan) if field is None else field
    x0, _ = sample_plan(plan, n, seed=seed, workers=workers)
    clouds = transport_cloud(field, x0, steps, t_grid, workers=workers)
    checks = []
    for t, cloud in zip(t_grid, clouds):
        target = marginal_at(plan, t)
        emp_mean = cloud.mean(axis=0)
        emp_cov = np.cov(cloud, rowvar=False, bias=True).reshape(plan.dim, plan.dim)
        zm, zc, se_m, se_c = _z_scores(emp_mean, emp_cov, target.mean, target.cov, n)
        checks.append(
            MomentCheck(
                t=float(t),
                mean_error=float(np.linalg.norm(emp_mean - target.mean)),
                cov_error=float(np.linalg.norm(emp_cov - target.cov)),
                mean_tol=float(n_se * np.linalg.norm(se_m)),
                cov_tol=float(n_se * np.linalg.norm(se_c)),
                max_mean_z=float(np.max(zm)),
                max_cov_z=float(np.max(zc)),
                passed=bool(np.all(zm <= n_se) and np.all(zc <= n_se)),
            )
        )
    return MomentReport(int(n), int(steps), int(seed), float(n_se), tuple(checks))


# ---------------------------------------------------------------------------
# Regression estimate of the velocity


def silverman_bandwidth(points) -> float:
    """Rule-of-thumb bandwidth ``sigma * (4 / ((D + 2) n))^(1 / (D + 4))``.

    ``sigma`` is the average per-coordinate standard deviation; in one
    dimension this is Silverman's ``1.06 sigma n^(-1/5)``.
    """
    pts = np.asarray(points, dtype=float)
    pts = pts[:, None] if pts.ndim == 1 else pts
    n, D = pts.shape
    sigma = float(np.mean(pts.std(axis=0, ddof=1))) if n > 1 else 1.0
    return sigma * (4.0 / ((D + 2) * n)) ** (1.0 / (D + 4))


def estimate_velocity(x0, x1, t: float, query_points, bandwidth: float | None = None) -> np.ndarray:
    """Nadaraya-Watson estimate of ``E[X1 - X0 | Xt = x]`` from sample pairs.

    Parameters
    ----------
    x0, x1 : ndarray, shape (n, D) or (n,)
        Paired samples from the plan.
    t : float
        Interpolation time.
    query_points : ndarray, shape (q, D) or (q,)
    bandwidth : float, optional
        Width of the isotropic Gaussian kernel. Defaults to
        :func:`silverman_bandwidth` of the interpolated points.

    Raises
    ------
    EmptyNeighborhood
        When the total kernel weight at a query point is below ``1e-300``.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    flat = x0.ndim == 1
    if flat:
        x0, x1 = x0[:, None], x1[:, None]
    q = np.asarray(query_points, dtype=float)
    q = q.reshape(-1, x0.shape[1]) if flat or q.ndim == 1 else q
    if x0.shape != x1.shape:
        raise ValidationError("x0 and x1 must have the same shape")
    if x0.shape[0] < 1:
        raise ValidationError("need at least one sample pair")
    xt = (1.0 - t) * x0 + t * x1
    dx = x1 - x0
    h = silverman_bandwidth(xt) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValidationError("bandwidth must be positive")
    out = np.empty((q.shape[0], dx.shape[1]))
    sq = np.einsum("ij,ij->i", xt, xt)
    step = max(1, 2_000_000 // max(1, xt.shape[0]))
    for lo in range(0, q.shape[0], step):
        qq = q[lo : lo + step]
        d2 = sq[None, :] - 2.0 * qq @ xt.T + np.einsum("ij,ij->i", qq, qq)[:, None]
        logw = -0.5 * np.clip(d2, 0.0, None) / (h * h)
        lse = logsumexp(logw, axis=1)
        if np.any(lse < np.log(_MIN_WEIGHT)):
            bad = int(np.argmin(lse)) + lo
            raise EmptyNeighborhood(f"kernel weight underflows at query point {q[bad].tolist()}")
        w = np.exp(logw - lse[:, None])
        out[lo : lo + step] = w @ dx
    return out[:, 0] if flat else out
