"""Batch front end: ``eulertop {simulate,verify,derive,sweep} --config run.toml``.

Exit codes: 0 on success, 1 on a usage or configuration error, 2 when a
run terminates on a guard or a verification verdict fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, RunConfig, dump_config, load_config
from .diagnose import drift_report, field_identity_suite, sample_points
from .field import DeformationSpec, VectorField, synthesize
from .integrate import Trajectory, integrate, integrate_reparametrized

__all__ = [
    "main", "cmd_simulate", "cmd_verify", "cmd_derive", "cmd_sweep",
    "run_trajectory", "trajectory_csv", "field_deviation", "SweepRow",
    "EXIT_OK", "EXIT_CONFIG", "EXIT_GUARDED",
]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_GUARDED = 2


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def atomic_write(path: Path, text: str) -> None:
    """Write to a temporary sibling, then rename over `path`."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trajectory_csv(traj: Trajectory, spec: DeformationSpec) -> str:
    """CSV text with header ``t,s,x1..xn,I1..I{n-1}``."""
    n = traj.dimension
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "s"] + [f"x{i}" for i in range(1, n + 1)] + [f"I{k}" for k in range(1, n)])
    inv = traj.invariants
    if inv is None:
        inv = np.array([spec.invariants(x) for x in traj.x])
    for t, s, x, I in zip(traj.t, traj.s, traj.x, inv):
        w.writerow([_fmt(t), _fmt(s)] + [_fmt(v) for v in x] + [_fmt(v) for v in I])
    return buf.getvalue()


def run_trajectory(cfg: RunConfig, spec: DeformationSpec, v: VectorField) -> Trajectory:
    if cfg.initial_state is None:
        raise ConfigError("[system] initial_state is required for this command", None, cfg.source)
    icfg = cfg.integrator_config()
    try:
        if cfg.reparametrization is not None:
            return integrate_reparametrized(v, cfg.reparametrization, cfg.initial_state, icfg, spec)
        return integrate(v, cfg.initial_state, icfg, spec)
    except ValueError as err:
        raise ConfigError(f"cannot start integration: {err}", None, cfg.source) from None


def _trajectory_report(cfg: RunConfig, spec: DeformationSpec, traj: Trajectory) -> dict:
    rep = drift_report(traj, spec, cfg.drift_tol)
    return {
        "system": cfg.builtin or "inline",
        "dimension": spec.dimension,
        "parameters": dict(spec.bindings),
        "initial_state": [float(v) for v in traj.x[0]],
        "reparametrization": cfg.reparametrization,
        "reason": traj.reason,
        "message": traj.message,
        "completed": traj.completed,
        "samples": len(traj),
        "rejected_steps": traj.rejected,
        "t_final": float(traj.t[-1]),
        "s_final": float(traj.s[-1]),
        "invariants": rep.to_dict(),
    }


def _write_run(out: Path, cfg: RunConfig, spec: DeformationSpec, traj: Trajectory) -> dict:
    report = _trajectory_report(cfg, spec, traj)
    atomic_write(out / cfg.trajectory_file, trajectory_csv(traj, spec))
    atomic_write(out / cfg.report_file, json.dumps(report, indent=2) + "\n")
    return report


def cmd_simulate(cfg: RunConfig, stdout=None) -> int:
    spec = cfg.spec()
    v = synthesize(spec)
    traj = run_trajectory(cfg, spec, v)
    out = Path(cfg.out_dir)
    report = _write_run(out, cfg, spec, traj)
    atomic_write(out / "effective_config.toml", dump_config(cfg))
    drift = report["invariants"]["max_drift"]
    print(f"{report['reason']}: {len(traj)} samples, t = {_fmt(traj.t[-1])}", file=stdout)
    print("max drift: " + ", ".join(f"I{k}={d:.3e}" for k, d in enumerate(drift, start=1)), file=stdout)
    if not traj.completed:
        print(f"terminated: {traj.message}", file=stdout)
        return EXIT_GUARDED
    return EXIT_OK


def field_deviation(v: VectorField, w: VectorField, points: Sequence[Sequence[float]]) -> float:
    """Largest ``|V(x) - W(x)|_inf / |W(x)|_inf`` over the points that evaluate."""
    worst = 0.0
    for x in points:
        try:
            a, b = v(x), w(x)
        except ArithmeticError:
            continue
        scale = float(np.max(np.abs(b)))
        diff = float(np.max(np.abs(a - b)))
        worst = max(worst, diff / scale if scale > 0 else diff)
    return worst


def _samples(cfg: RunConfig, spec: DeformationSpec, guards=None) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    return sample_points(spec.dimension, cfg.samples, rng, cfg.box,
                         spec.guards if guards is None else guards, cfg.sample_guard)


def cmd_verify(cfg: RunConfig, stdout=None) -> int:
    """Identity suite on the synthesized field, checks of any closed form,
    and a drift check when an initial state is configured."""
    spec = cfg.spec()
    v = synthesize(spec)
    closed = cfg.closed_form()
    guards = tuple(sorted(set(spec.guards) | set(closed.guards if closed else ())))
    pts = _samples(cfg, spec, guards)
    rep = field_identity_suite(v, spec, pts, cfg.orthogonality_tol, cfg.divergence_tol,
                               scaled_divergence=cfg.scaled_divergence)
    sections = {"synthesized": rep.to_dict()}
    lines = [f"synthesized field ({spec.name or 'inline'}, n = {spec.dimension})", rep.to_text()]
    passed = rep.passed
    if closed is not None:
        crep = field_identity_suite(closed, spec, pts, cfg.orthogonality_tol, cfg.divergence_tol,
                                    scaled_divergence=cfg.scaled_divergence)
        dev = field_deviation(v, closed, pts)
        ok = dev <= cfg.closed_form_tol
        sections["closed_form"] = crep.to_dict()
        sections["closed_form_deviation"] = {"max_relative": dev, "tol": cfg.closed_form_tol,
                                             "passed": ok}
        lines += ["", f"closed form ({closed.provenance})", crep.to_text(),
                  f"{'PASS' if ok else 'FAIL'}  closed-form deviation {dev:.3e} (tol {cfg.closed_form_tol:.1e})"]
        passed = passed and crep.passed and ok
    if cfg.initial_state is not None:
        traj = run_trajectory(cfg, spec, v)
        drep = drift_report(traj, spec, cfg.drift_tol)
        # rank loss along one orbit (an equilibrium, say) is a property of the
        # point, not a defect; independence is judged on the samples above
        drep.verdicts.pop("independence")
        drep.verdicts["completed"] = traj.completed
        sections["drift"] = {**drep.to_dict(), "reason": traj.reason}
        lines += ["", f"drift from {list(cfg.initial_state)} ({traj.reason})", drep.to_text()]
        passed = passed and drep.passed
    sections["passed"] = passed
    lines += ["", "VERIFY PASS" if passed else "VERIFY FAIL"]
    atomic_write(Path(cfg.out_dir) / "verify_report.json", json.dumps(sections, indent=2) + "\n")
    print("\n".join(lines), file=stdout)
    return EXIT_OK if passed else EXIT_GUARDED


def cmd_derive(cfg: RunConfig, stdout=None) -> int:
    spec = cfg.spec()
    v = synthesize(spec)
    if not v.symbolic:
        raise ConfigError(f"dimension {spec.dimension} is evaluated numerically; no text form",
                          None, cfg.source)
    for line in v.text():
        print(line, file=stdout)
    closed = cfg.closed_form()
    if closed is not None:
        guards = tuple(sorted(set(spec.guards) | set(closed.guards)))
        dev = field_deviation(v, closed, _samples(cfg, spec, guards))
        print(f"# max sampled relative deviation from the closed form "
              f"({cfg.samples} points): {dev:.3e}", file=stdout)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepRow:
    value: float
    reason: str
    drift: list[float]
    deviation: float
    flagged: bool
    message: str = ""


def _sweep_times(cfg: RunConfig) -> tuple[float, ...]:
    if cfg.output_times:
        return cfg.output_times
    t0, t1 = cfg.integrator.t_span
    return tuple(np.linspace(t0, t1, 11))


def _sweep_one(args) -> tuple[SweepRow, str | None, str | None]:
    cfg, parameter, value, ref = args
    cfg = replace(cfg, output_times=_sweep_times(cfg))
    spec = cfg.spec(**{parameter: value})
    try:
        traj = run_trajectory(cfg, spec, synthesize(spec))
    except ConfigError as err:
        n = spec.dimension - 1
        return SweepRow(value, "not-started", [math.nan] * n, math.nan, True, str(err)), None, None
    rep = drift_report(traj, spec, cfg.drift_tol)
    times = np.array(cfg.output_times)
    flagged = not traj.completed or ref is None
    deviation = math.nan
    if not flagged:
        got = traj.x[np.isin(traj.t, times)]
        deviation = float(np.max(np.abs(got - ref)))
    row = SweepRow(value, traj.reason, [float(d) for d in rep.max_drift], deviation, flagged,
                   traj.message)
    report = _trajectory_report(cfg, spec, traj)
    report["deviation_from_undeformed"] = None if math.isnan(deviation) else deviation
    return row, trajectory_csv(traj, spec), json.dumps(report, indent=2) + "\n"


def _reference(cfg: RunConfig) -> np.ndarray | None:
    """Undeformed trajectory at the sweep times."""
    cfg = replace(cfg, output_times=_sweep_times(cfg))
    zero = DeformationSpec.zero(cfg.dimension)
    traj = run_trajectory(cfg, zero, synthesize(zero))
    if not traj.completed:
        return None
    return traj.x[np.isin(traj.t, np.array(cfg.output_times))]


def is_monotone(rows: Sequence[SweepRow]) -> bool:
    """Deviation never increases as |value| decreases (unflagged rows)."""
    good = sorted((r for r in rows if not r.flagged), key=lambda r: -abs(r.value))
    return all(b.deviation <= a.deviation for a, b in zip(good, good[1:]))


def run_sweep(cfg: RunConfig, parameter: str, values: Sequence[float],
              workers: int = 1) -> list[SweepRow]:
    """Run one trajectory per value and write per-value outputs plus a summary."""
    if not values:
        raise ConfigError("sweep needs at least one value", None, cfg.source)
    if cfg.initial_state is None:
        raise ConfigError("[system] initial_state is required for a sweep", None, cfg.source)
    cfg.spec(**{parameter: values[0]})
    ref = _reference(cfg)
    jobs = [(cfg, parameter, float(val), ref) for val in values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    out = Path(cfg.out_dir)
    for (row, csv_text, report), val in zip(results, values):
        sub = out / f"{parameter}={_fmt(val)}"
        if csv_text is not None:
            atomic_write(sub / cfg.trajectory_file, csv_text)
            atomic_write(sub / cfg.report_file, report)
    rows = [r for r, _, _ in results]
    n = cfg.dimension
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([parameter, "reason"] + [f"drift_I{k}" for k in range(1, n)] + ["deviation", "flagged"])
    for r in rows:
        w.writerow([_fmt(r.value), r.reason] + [_fmt(d) for d in r.drift]
                   + [_fmt(r.deviation), int(r.flagged)])
    atomic_write(out / "sweep_summary.csv", buf.getvalue())
    atomic_write(out / "effective_config.toml", dump_config(cfg))
    return rows


def cmd_sweep(cfg: RunConfig, parameter: str | None = None, values: Sequence[float] | None = None,
              workers: int | None = None, stdout=None) -> int:
    parameter = parameter or cfg.sweep_parameter or "g"
    values = cfg.sweep_values if values is None else tuple(values)
    cfg = replace(cfg, sweep_parameter=parameter, sweep_values=tuple(values))
    rows = run_sweep(cfg, parameter, values, workers or cfg.workers)
    for r in rows:
        flag = "  FLAGGED " + r.reason if r.flagged else ""
        print(f"{parameter}={_fmt(r.value)}  max drift {max(r.drift):.3e}  "
              f"deviation {r.deviation:.3e}{flag}", file=stdout)
    mono = is_monotone(rows)
    print(f"deviation monotone as |{parameter}| -> 0: {'yes' if mono else 'NO'}", file=stdout)
    if any(r.flagged for r in rows) or not mono:
        return EXIT_GUARDED
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _values(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eulertop",
                                description="Deformed Euler tops that keep their first integrals.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("simulate", "integrate one trajectory"),
                        ("verify", "run the identity and conservation checks"),
                        ("derive", "print the synthesized vector field"),
                        ("sweep", "scan a parameter and compare with the undeformed top")]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--seed", type=int, help="seed for sampled checks (overrides config)")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--workers", type=int, help="parallel sweep workers")
        if name == "sweep":
            sp.add_argument("--parameter", help="parameter to scan (default from config, else g)")
            sp.add_argument("--values", type=_values, help="comma-separated values")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2; we reserve 2
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be positive")
            cfg.workers = args.workers
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "derive":
            return cmd_derive(cfg)
        return cmd_sweep(cfg, args.parameter, args.values, cfg.workers)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
