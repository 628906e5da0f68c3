"""Command-line entry point: ``oscillopf <command> --case PATH --dyn PATH [flags]``.

Exit codes: 0 success (and exact relaxation), 2 solved but inexact,
1 failure. Failure messages name the pipeline stage that failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import ambient
from .dynamics import (frequency_response_rows, laplacian_from_angles, OperatingPoint,
                       select_band, spectrum, stability_metric)
from .pipeline import (DEFAULT_CASE, DEFAULT_DYN, InstanceResult, StageError, Task,
                       check_front, default_jobs, improvement_pct, load_model, mu_grid,
                       run_tasks, solve_instance, band_energy_sdp)
from .recovery import EXACTNESS_THRESHOLD
from .solver import DEFAULT_TOL

CSV_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1

EXIT_OK, EXIT_FAIL, EXIT_INEXACT = 0, 1, 2


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _digest(path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return ""


@dataclass
class RunManifest:
    command: str
    case_path: str
    dynamics_path: str
    config: dict
    case_sha256: str = ""
    dynamics_sha256: str = ""
    tool_version: str = field(default_factory=tool_version)
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    schema_version: int = MANIFEST_SCHEMA_VERSION
    summary: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunManifest":
        skip = {"func", "command", "case", "dyn", "out"}
        config = {k: v for k, v in vars(args).items() if k not in skip}
        return cls(args.command, str(args.case), str(args.dyn), config,
                   _digest(args.case), _digest(args.dyn))

    def to_dict(self) -> dict:
        return asdict(self)


# --- formatting helpers ---------------------------------------------------------

def fmt(v) -> str:
    """Stable text for CSV cells: 10 significant digits, lowercase nan."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else f"{float(v):.10g}"
    return str(v)


def write_csv(header: list[str], rows: list[list], out: str | None,
              manifest: RunManifest) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(c) for c in row])
    manifest.summary["csv_schema_version"] = CSV_SCHEMA_VERSION
    text = json.dumps(manifest.to_dict(), indent=1, sort_keys=True, default=_json_default)
    if out:
        Path(out).write_text(buf.getvalue())
        Path(str(out) + ".manifest.json").write_text(text + "\n")
    else:
        sys.stdout.write(buf.getvalue())
        sys.stderr.write(text + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o)}")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def parse_mu_grid(text: str) -> list[float]:
    """Either a point count (``21``) or an explicit comma list of mu values."""
    if "," not in text:
        try:
            return mu_grid(int(text))
        except ValueError:
            pass
    vals = sorted(set(_floats(text)))
    if len(vals) < 2:
        raise ValueError("a trade-off grid needs at least two points")
    if vals[0] < 0 or vals[-1] > 1:
        raise ValueError("mu values must lie in [0, 1]")
    return vals


def parse_modes(text: str) -> list[int]:
    """1-based mode list such as ``2-11`` or ``2,3,5``; mode 1 is rejected."""
    modes: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(t) for t in part.split("-", 1))
            modes.extend(range(lo, hi + 1))
        else:
            modes.append(int(part))
    if any(m < 2 for m in modes):
        raise ValueError("mode 1 is the uniform shift and has no frequency response; "
                         "modes are numbered from 2")
    return sorted(set(modes))


def parse_omega_grid(text: str) -> list[float]:
    """``start:stop:count`` (inclusive linspace) or a comma list; empty is allowed."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        a, b, n = text.split(":")
        return [float(w) for w in np.linspace(float(a), float(b), int(n))]
    return _floats(text)


# --- commands -------------------------------------------------------------------

def _band_args(args):
    if args.omega_range is not None:
        return None, tuple(args.omega_range)
    return args.k, None


def _summary(res: InstanceResult) -> str:
    lines = [f"status          {res.status}"]
    if res.ok:
        lines += [
            f"mu              {res.mu:g}",
            f"K               {res.k}",
            f"load scale      {res.load_scale:g}",
            f"cost f_c        {res.cost:.6f}",
            f"f_y (SDP)       {res.f_y:.6f}",
            f"f_y (lifted E)  {res.f_y_lifted:.6f}",
            f"f_y (angles)    {res.f_y_recovered:.6f}",
            f"rank ratio V    {res.rank_ratio_V:.3e}",
            f"rank ratio E    {res.rank_ratio_E:.3e}",
            f"max PF residual {res.report.max_pf_residual:.3e} pu",
            f"violations      {len(res.report.limit_violations)}",
            f"exact           {'yes' if res.exact else 'NO (relaxation gap)'}",
        ]
    else:
        lines.append(f"failed stage    {res.stage}: {res.message}")
    return "\n".join(lines)


def cmd_opf(args) -> int:
    k, omega_range = _band_args(args)
    model = load_model(args.case, args.dyn, args.load_scale)
    res = solve_instance(model, args.mu, k, omega_range, args.tol, args.threshold,
                         args.backend)
    manifest = RunManifest.from_args(args)
    print(_summary(res), file=sys.stderr)
    doc = {"manifest": manifest.to_dict(), "status": res.status, "stage": res.stage,
           "message": res.message, "mu": res.mu, "k": res.k, "load_scale": res.load_scale,
           "cost": res.cost, "f_y": res.f_y, "f_y_lifted": res.f_y_lifted,
           "schema_version": CSV_SCHEMA_VERSION}
    if res.report is not None:
        doc["report"] = res.report.to_dict()
    text = json.dumps(doc, indent=1, sort_keys=True, default=_json_default)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if not res.ok:
        print(f"error: [{res.stage}] solver status {res.status}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK if res.exact else EXIT_INEXACT


def _tasks(args, loads, mus) -> list[Task]:
    k, omega_range = _band_args(args)
    return [Task(str(args.case), str(args.dyn), ls, mu, k, omega_range, args.tol,
                 args.threshold, args.backend) for ls in loads for mu in mus]


def _exit_for(results: list[InstanceResult]) -> int:
    if any(not r.ok for r in results):
        return EXIT_FAIL
    return EXIT_OK if all(r.exact for r in results) else EXIT_INEXACT


def _jobs(args) -> int:
    """OSCILLOPF_JOBS, when set, takes precedence over --jobs."""
    return default_jobs() if os.environ.get("OSCILLOPF_JOBS") else args.jobs


def cmd_pareto(args) -> int:
    mus = parse_mu_grid(args.mu_grid)
    results = run_tasks(_tasks(args, [args.load_scale], mus), _jobs(args))
    results.sort(key=lambda r: r.mu)
    header = ["mu", "status", "cost", "f_y", "rank_ratio", "rank_ratio_E", "exact",
              "f_y_recovered", "cost_monotone", "f_y_monotone"]
    rows = []
    prev = None
    tol_c = 1e-6 * max([1.0] + [abs(r.cost) for r in results if r.ok])
    tol_f = 1e-6 * max([1.0] + [abs(r.f_y) for r in results if r.ok])
    for r in results:
        c_ok = f_ok = True
        if r.ok and prev is not None:
            c_ok = r.cost >= prev.cost - tol_c
            f_ok = r.f_y <= prev.f_y + tol_f
        rows.append([r.mu, r.status if r.ok else f"{r.status}:{r.stage}", r.cost, r.f_y,
                     r.rank_ratio_V, r.rank_ratio_E, r.exact, r.f_y_recovered, c_ok, f_ok])
        if r.ok:
            prev = r
        else:
            print(f"warning: mu={r.mu:g} failed at stage {r.stage}: {r.message}",
                  file=sys.stderr)
    front = check_front(results)
    manifest = RunManifest.from_args(args)
    manifest.summary.update(asdict(front))
    ok = [r for r in results if r.ok]
    if len(ok) >= 2 and ok[0].mu == 0.0 and ok[-1].mu == 1.0:
        manifest.summary["f_y_improvement_pct"] = improvement_pct(ok[0].f_y, ok[-1].f_y)
        manifest.summary["cost_increase_pct"] = 100 * (ok[-1].cost - ok[0].cost) / ok[0].cost
    write_csv(header, rows, args.out, manifest)
    return _exit_for(results)


def cmd_sweep_load(args) -> int:
    factors = _floats(args.factors)
    if not factors or any(f <= 0 for f in factors):
        raise StageError("parse", "load factors must all be positive")
    factors = sorted(set(factors))
    results = run_tasks(_tasks(args, factors, [0.0, 1.0]), _jobs(args))
    by_key = {(r.load_scale, r.mu): r for r in results}
    header = ["factor", "f_y_mu0", "f_y_mu1", "improvement_pct", "cost_mu0", "cost_mu1",
              "rank_ratio_mu0", "rank_ratio_mu1", "status_mu0", "status_mu1"]
    rows = []
    for f in factors:
        r0, r1 = by_key[(f, 0.0)], by_key[(f, 1.0)]
        imp = improvement_pct(r0.f_y, r1.f_y) if (r0.ok and r1.ok) else float("nan")
        rows.append([f, r0.f_y, r1.f_y, imp, r0.cost, r1.cost, r0.rank_ratio_V,
                     r1.rank_ratio_V, r0.status, r1.status])
        for r in (r0, r1):
            if not r.ok:
                print(f"warning: factor={f:g} mu={r.mu:g} failed at stage {r.stage}: "
                      f"{r.message}", file=sys.stderr)
    write_csv(header, rows, args.out, RunManifest.from_args(args))
    return _exit_for(results)


def _operating_laplacian(args, model):
    """Laplacian at a supplied report's internal voltages, or at a fresh solve."""
    if args.from_report:
        doc = json.loads(Path(args.from_report).read_text())
        rep = doc.get("report", doc)
        e = np.array([complex(a, b) for a, b in rep["recovered_e"]])
        if len(e) != model.kron.size:
            raise StageError("parse", "report does not match the case's synchronous buses")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return laplacian_from_angles(OperatingPoint.from_complex(e), model.kron), None
    k, omega_range = _band_args(args)
    res = solve_instance(model, args.mu, k, omega_range, args.tol, args.threshold,
                         args.backend)
    if not res.ok:
        raise StageError(res.stage or "solve", f"solver status {res.status}")
    return res.laplacian, res


def cmd_freqresp(args) -> int:
    modes = parse_modes(args.modes)
    omegas = parse_omega_grid(args.omega_grid)
    model = load_model(args.case, args.dyn, args.load_scale)
    L, _ = _operating_laplacian(args, model)
    spec = spectrum(L, model.inertia)
    if modes and modes[-1] > spec.size:
        raise StageError("parse", f"mode {modes[-1]} exceeds the {spec.size} available")
    rows = frequency_response_rows(spec, model.dyn.gamma, [m - 1 for m in modes], omegas)
    rows = [[i + 1, lam, w, h] for i, lam, w, h in rows]
    write_csv(["mode_index", "lambda", "omega", "H2"], rows, args.out,
              RunManifest.from_args(args))
    return EXIT_OK


def sim_config(args) -> ambient.SimConfig:
    base = {}
    if args.sim_config:
        base = json.loads(Path(args.sim_config).read_text())
    for key in ("dt", "horizon", "burn_in", "n_trials", "seed"):
        val = getattr(args, key)
        if val is not None:
            base[key] = val
    return ambient.SimConfig(**base)


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    target: float
    detail: str = ""
    z_score: float | None = None


def cmd_validate(args) -> int:
    try:
        cfg = sim_config(args)
    except (ValueError, TypeError) as exc:
        raise StageError("parse", f"invalid simulation config: {exc}") from exc
    model = load_model(args.case, args.dyn, args.load_scale)
    L, res = _operating_laplacian(args, model)
    M = model.inertia
    gamma = model.dyn.gamma
    spec = spectrum(L, M)
    k, omega_range = _band_args(args)
    band = select_band(spec, k=k, omega_range=omega_range)
    f_y = stability_metric(spec, gamma, band)
    checks: list[Check] = []

    sdp_val = band_energy_sdp(L, M, len(band), gamma, args.tol, args.backend)
    rel = abs(sdp_val - f_y) / f_y
    checks.append(Check("lemma1_vs_eigensum", rel <= 1e-6, sdp_val, f_y,
                        f"relative error {rel:.2e} (limit 1e-6)"))

    for i in band:
        lam = float(spec.eigvals[i])
        target = 1.0 / (2 * lam * gamma)
        try:
            est = ambient.simulate_eigensystem(lam, gamma, cfg)
        except ambient.DiscretizationError as exc:
            checks.append(Check(f"mode_{i + 1}_variance", False, float("nan"), target,
                                str(exc)))
            continue
        z = est.z_score(target)
        checks.append(Check(f"mode_{i + 1}_variance", abs(z) <= 3.0, est.mean, target,
                            f"stderr {est.stderr:.3e}", z))

    try:
        sw = ambient.simulate_swing(M, gamma * M, L, band, cfg,
                                    trajectory_path=args.trajectory)
        rel = abs(sw.band_energy.mean - f_y) / f_y
        checks.append(Check("band_energy_swing", rel <= 0.05, sw.band_energy.mean, f_y,
                            f"relative error {rel:.2%} (limit 5%), stderr "
                            f"{sw.band_energy.stderr:.3e}", sw.band_energy.z_score(f_y)))
    except ambient.DiscretizationError as exc:
        checks.append(Check("band_energy_swing", False, float("nan"), f_y, str(exc)))

    for c in checks:
        z = f" z={c.z_score:+.2f}" if c.z_score is not None else ""
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.6g} vs "
              f"{c.target:.6g}{z} {c.detail}", file=sys.stderr)
    manifest = RunManifest.from_args(args)
    doc = {"manifest": manifest.to_dict(), "sim_config": asdict(cfg),
           "band": [i + 1 for i in band], "f_y": f_y,
           "checks": [asdict(c) for c in checks], "schema_version": CSV_SCHEMA_VERSION}
    text = json.dumps(doc, indent=1, sort_keys=True, default=_json_default)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


# --- argument parsing -------------------------------------------------------------

def _common(p: argparse.ArgumentParser, solve_flags: bool = True) -> None:
    p.add_argument("--case", default=str(DEFAULT_CASE), help="MATPOWER case file")
    p.add_argument("--dyn", default=str(DEFAULT_DYN), help="dynamics sidecar file")
    p.add_argument("--out", help="output file (default: stdout)")
    if not solve_flags:
        return
    band = p.add_mutually_exclusive_group()
    band.add_argument("--k", type=int, default=3, help="number of slow modes in the band")
    band.add_argument("--omega-range", type=float, nargs=2, metavar=("LO", "HI"),
                      help="band by modal frequency in rad/s instead of a count")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="solver tolerance")
    p.add_argument("--threshold", type=float, default=EXACTNESS_THRESHOLD,
                   help="rank-1 ratio below which the relaxation counts as exact")
    p.add_argument("--backend", default="clarabel", choices=["clarabel", "cvxopt"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oscillopf",
                                 description="Oscillation-aware optimal power flow.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("opf", help="solve one instance and report exactness")
    _common(p)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--load-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_opf)

    p = sub.add_parser("pareto", help="cost versus band energy over a mu grid")
    _common(p)
    p.add_argument("--load-scale", type=float, default=1.0)
    p.add_argument("--mu-grid", default="21", help="point count or comma list")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("sweep-load", help="mu = 0 against mu = 1 over load factors")
    _common(p)
    p.add_argument("--factors", default="0.5,0.6,0.7,0.8,0.9,1.0,1.1")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep_load)

    for name, func, hlp in (("freqresp", cmd_freqresp, "modal frequency responses"),
                            ("validate", cmd_validate, "Monte-Carlo check of the metric")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        p.add_argument("--mu", type=float, default=0.0)
        p.add_argument("--load-scale", type=float, default=1.0)
        p.add_argument("--from-report", help="opf JSON report to take the operating point from")
        p.set_defaults(func=func)
        if name == "freqresp":
            p.add_argument("--modes", default="2-11", help="1-based modes, e.g. 2-11")
            p.add_argument("--omega-grid", default="0:20:401",
                           help="start:stop:count or comma list (rad/s)")
        else:
            p.add_argument("--sim-config", help="JSON file with SimConfig fields")
            p.add_argument("--dt", type=float)
            p.add_argument("--horizon", type=float)
            p.add_argument("--burn-in", type=float)
            p.add_argument("--n-trials", type=int)
            p.add_argument("--seed", type=int)
            p.add_argument("--trajectory", help="CSV path for a decimated trajectory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, OSError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
