"""Exit criteria. Each test logs one PASS/FAIL line, repeated in the
terminal summary under "acceptance criteria"."""
import filecmp
import json
import time

import numpy as np

from helpers import random_discrete_plan, random_gaussian_plan
from invfm import (
    GaussianPlan,
    SnapshotSet,
    counterexample_pair,
    default_snapshot_times,
    estimate_velocity,
    forward_snapshot,
    invert_from_snapshots,
    marginal_at,
    marginal_moment_check,
    ray_identity_residual,
    recover_plan_from_v0,
    sample_plan,
    uniqueness_certificate,
    velocity_at_zero,
    velocity_field,
)
from invfm.cli import main
from invfm.core import AffineVelocityField, measure_discrepancy


def _v0_from_evaluations(plan):
    """Read the affine initial field off point evaluations of velocity_at_zero."""
    D = plan.dim
    b0 = velocity_at_zero(plan, np.zeros(D))
    A = velocity_at_zero(plan, np.eye(D)) - b0
    return AffineVelocityField(A.T, b0, 0.0)


def test_1_gaussian_inverse_from_initial_velocity(acceptance_log):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        plan = random_gaussian_plan(rng, int(rng.integers(1, 9)))
        rec = recover_plan_from_v0(plan.mu0, plan.sigma0, plan.mu1, plan.sigma1, _v0_from_evaluations(plan))
        worst = max(worst, float(np.max(np.abs(rec.cross - plan.cross))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 5
    acceptance_log(1, ok, f"200 plans, max |S_rec - S| = {worst:.2e} (tol 1e-10), {elapsed:.2f}s (< 5s)")
    assert ok


def test_2_discrete_inverse_from_snapshots(acceptance_log):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst_w, worst_snap = 0.0, 0.0
    for _ in range(100):
        n, m = (int(v) for v in rng.integers(1, 6, 2))
        truth = random_discrete_plan(rng, n, m, sparsity=float(rng.choice([0.0, 0.25])))
        times = default_snapshot_times(truth.x_atoms, truth.y_atoms)
        assert uniqueness_certificate(truth.x_atoms, truth.y_atoms, times).positive
        snaps = SnapshotSet.from_plan(truth, times)
        plan = invert_from_snapshots(truth.x_atoms, truth.y_atoms, truth.source_masses, truth.target_masses, snaps)
        worst_w = max(worst_w, float(np.max(np.abs(plan.weights - truth.weights))))
        for t, s in snaps:
            worst_snap = max(worst_snap, measure_discrepancy(forward_snapshot(plan, t), s))
    elapsed = time.perf_counter() - start
    ok = worst_w <= 1e-7 and worst_snap <= 1e-8 and elapsed < 30
    acceptance_log(
        2, ok, f"100 plans, max weight error {worst_w:.2e} (tol 1e-7), snapshot error {worst_snap:.2e} (tol 1e-8), {elapsed:.2f}s (< 30s)"
    )
    assert ok


def test_3_non_uniqueness_of_marginal_curve(acceptance_log):
    K = np.array([[0.0, 0.5], [-0.5, 0.0]])
    first, second = counterexample_pair(np.eye(2), np.eye(2), np.zeros((2, 2)), K)
    valid = first.report.valid and second.report.valid
    diff = first.cross - second.cross
    # independent norm oracle: S - S' = 2K has two entries of magnitude 1
    oracle = sum(float(v) ** 2 for v in (2 * K).ravel()) ** 0.5
    assert abs(oracle - np.sqrt(2.0)) < 1e-15
    fro = float(np.linalg.norm(diff, "fro"))
    dm = dc = 0.0
    for t in np.linspace(0, 1, 101):
        p, q = marginal_at(first, t), marginal_at(second, t)
        dm = max(dm, float(np.max(np.abs(p.mean - q.mean))))
        dc = max(dc, float(np.max(np.abs(p.cov - q.cov))))
    ok = valid and abs(fro - oracle) <= 1e-15 and dm <= 1e-12 and dc <= 1e-12
    acceptance_log(
        3,
        ok,
        f"valid={valid}, ||S - S'||_F = {fro:.15f} (norm oracle {oracle:.15f}; spectral norm {np.linalg.norm(diff, 2):.1f}), "
        f"max mean dev {dm:.1e}, max cov dev {dc:.1e} (tol 1e-12)",
    )
    assert ok


def test_4_transport_reproduces_marginal_curve(acceptance_log):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst_z, failures = 0.0, 0
    for k in range(20):
        plan = random_gaussian_plan(rng, int(rng.integers(1, 5)))
        report = marginal_moment_check(plan, t_grid=(0.25, 0.5, 0.75, 1.0), n=100_000, steps=100, seed=k)
        worst_z = max([worst_z] + [max(c.max_mean_z, c.max_cov_z) for c in report.checks])
        failures += not report.passed
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 60
    acceptance_log(4, ok, f"20 plans, {failures} failing, largest z-score {worst_z:.2f} (tol 4 SE), {elapsed:.2f}s (< 60s)")
    assert ok


def test_5_characteristic_function_ray_identity(acceptance_log):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        plan = random_discrete_plan(rng, *(int(v) for v in rng.integers(1, 6, 2)), sparsity=0.2)
        worst = max(worst, ray_identity_residual(plan, float(rng.uniform()), float(rng.uniform(0, 20))))
    ok = worst <= 1e-12
    acceptance_log(5, ok, f"1000 triples, max residual {worst:.2e} (tol 1e-12)")
    assert ok


def test_6_regression_estimate_of_velocity(acceptance_log):
    plan = GaussianPlan([0.0], [3.0], [[1.0]], [[1.0]], [[0.5]])
    t = 0.3
    p = marginal_at(plan, t)
    sd = float(np.sqrt(p.cov[0, 0]))
    q = np.linspace(p.mean[0] - 2 * sd, p.mean[0] + 2 * sd, 41)[:, None]
    x0, x1 = sample_plan(plan, 100_000, seed=0)
    err = float(np.max(np.abs(estimate_velocity(x0, x1, t, q, bandwidth=0.1) - velocity_field(plan, t)(q))))
    ok = err <= 0.05
    acceptance_log(6, ok, f"sup error on mu_t +- 2 sd = {err:.4f} (tol 0.05)")
    assert ok


def _inputs(tmp_path):
    plan = random_gaussian_plan(np.random.default_rng(7), 2)
    truth = random_discrete_plan(np.random.default_rng(7), 3, 3)
    snaps = SnapshotSet.from_plan(truth, [0.25, 0.5, 0.75])
    files = {
        "gauss.json": {"plan": plan.to_dict(), "times": [0.0, 0.5, 1.0]},
        "discrete.json": {"plan": truth.to_dict(), "times": [0.0, 0.3, 1.0]},
        "inv_gauss.json": {
            "mu0": plan.mu0.tolist(),
            "sigma0": plan.sigma0.tolist(),
            "mu1": plan.mu1.tolist(),
            "sigma1": plan.sigma1.tolist(),
            "v0": velocity_field(plan, 0.0).to_dict(),
        },
        "inv_1d.json": {
            "x_atoms": truth.x_atoms.tolist(),
            "y_atoms": truth.y_atoms.tolist(),
            "source_masses": truth.source_masses.tolist(),
            "target_masses": truth.target_masses.tolist(),
            **snaps.to_dict(),
        },
    }
    for name, obj in files.items():
        (tmp_path / name).write_text(json.dumps(obj))
    return [
        ["forward", "--input", tmp_path / "gauss.json"],
        ["forward", "--input", tmp_path / "discrete.json"],
        ["invert-gaussian", "--input", tmp_path / "inv_gauss.json"],
        ["invert-1d", "--input", tmp_path / "inv_1d.json"],
        ["counterexample"],
        ["transport-check", "--input", tmp_path / "gauss.json", "--times", "0.5,1", "--export-particles", "5", "--seed", "3"],
    ]


def test_7_cli_determinism(tmp_path, acceptance_log):
    commands = _inputs(tmp_path)
    identical = []
    for k, cmd in enumerate(commands):
        outs = [tmp_path / f"run{k}_{r}" for r in range(2)]
        codes = [main([str(c) for c in cmd] + ["--out", str(o)]) for o in outs]
        names = sorted(p.name for p in outs[0].iterdir())
        same = (
            codes == [0, 0]
            and names == sorted(p.name for p in outs[1].iterdir())
            and all(filecmp.cmp(outs[0] / n, outs[1] / n, shallow=False) for n in names)
        )
        identical.append(same)
    ok = all(identical)
    acceptance_log(7, ok, f"{sum(identical)}/{len(commands)} commands byte-identical on rerun")
    assert ok
