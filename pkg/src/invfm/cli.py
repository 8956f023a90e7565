"""Command-line entry point.

Subcommands map one-to-one onto the library's checks::

    invfm forward            marginals of a Gaussian or discrete plan on a time grid
    invfm invert-gaussian    recover a Gaussian plan from its initial velocity field
    invfm invert-1d          recover a discrete 1D plan from marginal snapshots
    invfm counterexample     two Gaussian plans with identical marginal curves
    invfm transport-check    transport particles and compare moments with p_t

Exit codes: 0 success, 2 validation, 3 Gaussian inverse failure,
4 ill-posed or infeasible 1D inverse, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gaussian, onedim, transport
from ._io import dumps, read_json, write_csv, write_json
from .core import (
    AffineVelocityField,
    DiscretePlan1D,
    GaussianPlan,
    IllPosed,
    InconsistentField,
    Infeasible,
    InverseFMError,
    NumericalError,
    PSDViolation,
    ValidationError,
    plan_from_dict,
    symmetric_part,
    validate_gaussian_plan,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_GAUSSIAN_INVERSE = 3
EXIT_ILL_POSED = 4
EXIT_NUMERICAL = 5


class CommandError(Exception):
    def __init__(self, code: int, payload: dict):
        super().__init__(payload.get("message", ""))
        self.code = code
        self.payload = payload


def _error(code: int, exc: Exception, **extra) -> CommandError:
    return CommandError(code, {"error": type(exc).__name__, "message": str(exc), **extra})


@dataclass
class RunConfig:
    command: str
    inputs: list[Path] = field(default_factory=list)
    out: Path = Path(".")
    seed: int = 0
    tol: float | None = None
    times: list[float] | None = None
    particles: int = 100_000
    steps: int = 100
    dim: int = 2
    export_particles: int = 0

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> RunConfig:
        return cls(
            command=ns.command,
            inputs=[Path(ns.input)] if getattr(ns, "input", None) else [],
            out=Path(ns.out),
            seed=ns.seed,
            tol=ns.tol,
            times=ns.times,
            particles=ns.particles,
            steps=ns.steps,
            dim=getattr(ns, "dim", 2),
            export_particles=getattr(ns, "export_particles", 0),
        )


def _load_input(config: RunConfig) -> dict:
    if not config.inputs:
        raise CommandError(EXIT_VALIDATION, {"error": "MissingInput", "message": "--input is required"})
    path = config.inputs[0]
    try:
        data = read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise _error(EXIT_VALIDATION, exc, path=str(path)) from exc
    if not isinstance(data, dict):
        raise CommandError(EXIT_VALIDATION, {"error": "ValidationError", "message": "input must be a JSON object"})
    return data


def _parse_plan(d: dict) -> GaussianPlan | DiscretePlan1D:
    try:
        plan = plan_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise _error(EXIT_VALIDATION, exc) from exc
    if isinstance(plan, GaussianPlan):
        report = validate_gaussian_plan(plan)
        if not report.valid:
            raise CommandError(
                EXIT_VALIDATION,
                {"error": "ValidationError", "message": "Gaussian plan failed validation", "report": report.to_dict()},
            )
    return plan


def _times(config: RunConfig, data: dict, default) -> list[float]:
    times = config.times if config.times is not None else data.get("times", default)
    times = [float(t) for t in times]
    if any(not 0.0 <= t <= 1.0 for t in times):
        raise CommandError(EXIT_VALIDATION, {"error": "ValidationError", "message": "times must lie in [0, 1]"})
    return times


# ---------------------------------------------------------------------------
# Commands. Each returns a mapping of file name -> writer, applied only once
# the whole command has succeeded so failures leave no partial output.


def cmd_forward(config: RunConfig) -> dict:
    data = _load_input(config)
    plan = _parse_plan(data.get("plan", data))
    times = _times(config, data, [0.0, 0.25, 0.5, 0.75, 1.0])
    if isinstance(plan, GaussianPlan):
        D = plan.dim
        header = ["t"] + [f"mu_{i + 1}" for i in range(D)] + [f"sigma_{i + 1}_{j + 1}" for i in range(D) for j in range(D)]
        rows, summary_rows = [], []
        for t in times:
            p = gaussian.marginal_at(plan, t)
            rows.append([t, *p.mean.tolist(), *p.cov.ravel().tolist()])
            summary_rows.append({"t": t, "mean": p.mean, "cov": p.cov})
        summary = {"family": "gaussian", "dim": D, "times": times, "marginals": summary_rows}
    else:
        header = ["t", "atom", "mass"]
        rows, summary_rows = [], []
        for t in times:
            snap = onedim.forward_snapshot(plan, t)
            rows.extend([t, float(a), float(m)] for a, m in zip(snap.atoms, snap.masses))
            summary_rows.append({"t": t, "n_atoms": len(snap)})
        summary = {"family": "discrete1d", "times": times, "snapshots": summary_rows}
    return {
        "marginals.csv": lambda p: write_csv(p, header, rows),
        "summary.json": lambda p: write_json(p, summary),
    }


def cmd_invert_gaussian(config: RunConfig) -> dict:
    data = _load_input(config)
    try:
        v0 = AffineVelocityField.from_dict(data["v0"])
        endpoints = [np.asarray(data[k], dtype=float) for k in ("mu0", "sigma0", "mu1", "sigma1")]
    except (KeyError, TypeError, ValueError) as exc:
        raise _error(EXIT_VALIDATION, exc) from exc
    try:
        plan = gaussian.recover_plan_from_v0(*endpoints, v0)
    except (InconsistentField, PSDViolation) as exc:
        raise _error(EXIT_GAUSSIAN_INVERSE, exc) from exc
    # round trip: the recovered plan must reproduce v0
    roundtrip = gaussian.velocity_field(plan, 0.0)
    dA = float(np.max(np.abs(roundtrip.A - v0.A)))
    db = float(np.max(np.abs(roundtrip.b - v0.b)))
    tol = 1e-10 if config.tol is None else config.tol
    report = {
        "max_abs_A_residual": dA,
        "max_abs_b_residual": db,
        "tol": tol,
        "passed": max(dA, db) <= tol,
        "validation": plan.report.to_dict(),
    }
    return {
        "recovered_plan.json": lambda p: write_json(p, plan.to_dict()),
        "roundtrip.json": lambda p: write_json(p, report),
    }


def cmd_invert_1d(config: RunConfig) -> dict:
    data = _load_input(config)
    try:
        x, y = data["x_atoms"], data["y_atoms"]
        a, b = data["source_masses"], data["target_masses"]
        snaps = onedim.SnapshotSet.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise _error(EXIT_VALIDATION, exc) from exc
    try:
        res = onedim.invert_with_diagnostics(x, y, a, b, snaps)
    except IllPosed as exc:
        cert = onedim.uniqueness_certificate(x, y, snaps.times)
        raise _error(EXIT_ILL_POSED, exc, rank_gap=exc.rank_gap, certificate=cert.to_dict()) from exc
    except Infeasible as exc:
        raise _error(EXIT_ILL_POSED, exc) from exc
    rows = [[t, err] for t, err in zip(snaps.times, res.snapshot_errors)]
    return {
        "recovered_plan.json": lambda p: write_json(p, res.plan.to_dict()),
        "certificate.json": lambda p: write_json(p, res.certificate.to_dict() | {"residual": res.residual}),
        "residuals.csv": lambda p: write_csv(p, ["t", "max_atom_mass_error"], rows),
    }


def _default_counterexample(D: int) -> dict:
    K = np.zeros((D, D))
    if D >= 2:
        K[0, 1], K[1, 0] = 0.5, -0.5
    return {"sigma0": np.eye(D), "sigma1": np.eye(D), "sym_part": np.zeros((D, D)), "antisym_part": K}


def cmd_counterexample(config: RunConfig) -> dict:
    data = _load_input(config) if config.inputs else _default_counterexample(config.dim)
    try:
        args = [np.atleast_2d(np.asarray(data[k], dtype=float)) for k in ("sigma0", "sigma1", "sym_part", "antisym_part")]
    except (KeyError, TypeError, ValueError) as exc:
        raise _error(EXIT_VALIDATION, exc) from exc
    first, second = gaussian.counterexample_pair(*args, mu0=data.get("mu0"), mu1=data.get("mu1"))
    times = _times(config, {}, np.linspace(0.0, 1.0, 101).tolist())
    tol = 1e-12 if config.tol is None else config.tol
    rows, worst = [], [0.0, 0.0]
    for t in times:
        p, q = gaussian.marginal_at(first, t), gaussian.marginal_at(second, t)
        dm = float(np.max(np.abs(p.mean - q.mean)))
        dc = float(np.max(np.abs(p.cov - q.cov)))
        worst = [max(worst[0], dm), max(worst[1], dc)]
        rows.append([t, dm, dc])
    v_first = gaussian.velocity_field(first, 0.0)
    v_second = gaussian.velocity_field(second, 0.0)
    summary = {
        "plans": [first.to_dict(), second.to_dict()],
        "cross_difference_frobenius": float(np.linalg.norm(first.cross - second.cross)),
        "symmetric_part_difference": float(np.max(np.abs(symmetric_part(first.cross) - symmetric_part(second.cross)))),
        "max_mean_deviation": worst[0],
        "max_cov_deviation": worst[1],
        "tol": tol,
        "marginals_agree": max(worst) <= tol,
        "v0_linear_part_difference": float(np.max(np.abs(v_first.A - v_second.A))),
    }
    return {
        "pair.json": lambda p: write_json(p, summary),
        "agreement.csv": lambda p: write_csv(p, ["t", "max_mean_deviation", "max_cov_deviation"], rows),
    }


def cmd_transport_check(config: RunConfig) -> dict:
    data = _load_input(config)
    plan = _parse_plan(data.get("plan", data))
    if not isinstance(plan, GaussianPlan):
        raise CommandError(EXIT_VALIDATION, {"error": "ValidationError", "message": "transport-check needs a Gaussian plan"})
    times = _times(config, data, [0.25, 0.5, 0.75, 1.0])
    n_se = transport.N_SE if config.tol is None else config.tol
    report = transport.marginal_moment_check(
        plan, t_grid=times, n=config.particles, steps=config.steps, seed=config.seed, n_se=n_se
    )
    files = {"transport_report.json": lambda p: write_json(p, report.to_dict())}
    k = min(config.export_particles, config.particles)
    if k > 0:
        x0, _ = transport.sample_plan(plan, config.particles, seed=config.seed)
        grid = sorted({0.0, *times})
        clouds = transport.transport_cloud(gaussian.gaussian_flow(plan), x0[:k], config.steps, grid)
        files["particles.csv"] = lambda p: transport.write_particle_csv(p, grid, clouds)
    return files


COMMANDS = {
    "forward": cmd_forward,
    "invert-gaussian": cmd_invert_gaussian,
    "invert-1d": cmd_invert_1d,
    "counterexample": cmd_counterexample,
    "transport-check": cmd_transport_check,
}


def _time_list(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="invfm", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input", help="input JSON file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", type=float, default=None, help="override the command's pass tolerance")
        p.add_argument("--times", type=_time_list, default=None, help="comma-separated times in [0, 1]")
        p.add_argument("--particles", type=int, default=100_000)
        p.add_argument("--steps", type=int, default=100)
        if name == "counterexample":
            p.add_argument("--dim", type=int, default=2, help="dimension of the default example")
        if name == "transport-check":
            p.add_argument("--export-particles", type=int, default=0, help="write trajectories of the first N particles")
    return parser


def run(config: RunConfig) -> int:
    try:
        writers = COMMANDS[config.command](config)
    except CommandError as exc:
        sys.stderr.write(dumps(exc.payload))
        return exc.code
    except (IllPosed, Infeasible) as exc:
        sys.stderr.write(dumps({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_ILL_POSED
    except NumericalError as exc:
        sys.stderr.write(dumps({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_NUMERICAL
    except (ValidationError, InverseFMError, ValueError) as exc:
        sys.stderr.write(dumps({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_VALIDATION
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        sys.stderr.write(dumps({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_NUMERICAL
    config.out.mkdir(parents=True, exist_ok=True)
    for name, write in writers.items():
        write(config.out / name)
    sys.stdout.write(dumps({"command": config.command, "outputs": sorted(writers)}))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    return run(RunConfig.from_args(ns))


if __name__ == "__main__":
    raise SystemExit(main())
