"""End-to-end solve of one (load scale, mu) instance and sweeps over them."""

from __future__ import annotations

import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .casefile import (DATA_DIR, CaseFormatError, DynamicParams, RawCase, load_case,
                       load_dynamics_file, scale_loads)
from .conic import standard_form
from .dynamics import (AdmissibilityWarning, OperatingPoint, laplacian_from_angles,
                       laplacian_from_lifted, metric_from_laplacian, select_band, spectrum)
from .network import (AdmittanceModel, KronModel, NetworkError, QuadraticForms, build_ybus,
                      kron_reduce, quadratic_forms)
from .recovery import (EXACTNESS_THRESHOLD, ExactnessReport, extract_voltages, rank1_ratio,
                       reference, verify_dispatch)
from .sdp import (BuildError, TradeoffConfig, build_opf_sdp, generation_cost, lemma1_program,
                  lifted_internal, stability_term, voltage_matrix)
from .solver import DEFAULT_TOL, solve

DEFAULT_CASE = DATA_DIR / "case39.m"
DEFAULT_DYN = DATA_DIR / "case39_dyn.txt"


class StageError(RuntimeError):
    """Failure tagged with the pipeline stage that raised it."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@dataclass(frozen=True)
class Model:
    case: RawCase
    dyn: DynamicParams
    adm: AdmittanceModel
    kron: KronModel
    forms: QuadraticForms
    load_scale: float = 1.0
    case_path: str = ""
    dyn_path: str = ""

    @property
    def inertia(self) -> np.ndarray:
        return self.dyn.vectors(self.kron.sync_buses)[0]


def load_model(case_path=DEFAULT_CASE, dyn_path=DEFAULT_DYN, load_scale: float = 1.0) -> Model:
    try:
        case = load_case(case_path)
    except (OSError, CaseFormatError) as exc:
        raise StageError("parse", str(exc)) from exc
    if load_scale != 1.0:
        case = scale_loads(case, load_scale)
    try:
        dyn = load_dynamics_file(dyn_path, case)
    except (OSError, CaseFormatError) as exc:
        raise StageError("parse", str(exc)) from exc
    try:
        adm = build_ybus(case)
        kron = kron_reduce(adm, dyn)
        forms = quadratic_forms(adm, case)
    except (NetworkError, np.linalg.LinAlgError) as exc:
        raise StageError("network", str(exc)) from exc
    return Model(case, dyn, adm, kron, forms, load_scale, str(case_path), str(dyn_path))


def reference_band_size(model: Model, omega_range: tuple[float, float]) -> int:
    """Number of nonzero modes inside ``omega_range`` at the flat profile e = 1."""
    S = model.kron.size
    flat = OperatingPoint(np.ones(S), np.zeros(S))
    spec = spectrum(laplacian_from_angles(flat, model.kron), model.inertia)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        band = select_band(spec, omega_range=omega_range)
    if not band:
        raise StageError("build", f"no modes in band {omega_range} rad/s")
    return len(band)


@dataclass
class InstanceResult:
    mu: float
    k: int
    load_scale: float
    status: str
    stage: str = ""
    message: str = ""
    cost: float = np.nan
    f_y: float = np.nan
    f_y_lifted: float = np.nan
    f_y_recovered: float = np.nan
    rank_ratio_V: float = np.nan
    rank_ratio_E: float = np.nan
    exact: bool = False
    iterations: int = 0
    solve_time: float = 0.0
    gap: float = np.nan
    report: ExactnessReport | None = None
    laplacian: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def band_energy_sdp(L: np.ndarray, M: np.ndarray, k: int, gamma: float,
                    tol: float = DEFAULT_TOL, backend: str = "clarabel") -> float:
    """Band energy of a given Laplacian computed by the epigraph program."""
    r = 1.0 / np.sqrt(M)
    prog = lemma1_program(r[:, None] * L * r[None, :], M, k, gamma)
    sol = solve(standard_form(prog), tol=tol, backend=backend)
    if not sol.optimal:
        raise StageError("solve", f"band-energy program ended with status {sol.status}")
    return stability_term(prog, sol.primal)


def solve_instance(model: Model, mu: float, k: int | None = 3,
                   omega_range: tuple[float, float] | None = None,
                   tol: float = DEFAULT_TOL, threshold: float = EXACTNESS_THRESHOLD,
                   backend: str = "clarabel") -> InstanceResult:
    """Build, solve and verify one instance.

    Solver failures come back as a result with ``status`` set; build errors
    raise :class:`StageError`.
    """
    try:
        cfg = TradeoffConfig(mu=mu, k=k, omega_range=omega_range)
        band = reference_band_size(model, omega_range) if omega_range else k
        prog = build_opf_sdp(model.case, model.kron, model.forms, model.dyn, cfg,
                             band_size=band)
        sf = standard_form(prog)
    except ValueError as exc:  # BuildError included
        raise StageError("build", str(exc)) from exc

    res = InstanceResult(mu=mu, k=band, load_scale=model.load_scale, status="")
    sol = solve(sf, tol=tol, backend=backend)
    res.status, res.iterations, res.solve_time, res.gap = (
        sol.status, sol.iterations, sol.solve_time, sol.gap)
    if not sol.optimal:
        res.stage, res.message = "solve", sol.raw_status
        return res

    x = sol.primal
    M = model.inertia
    gamma = prog.meta["gamma"]
    res.cost = generation_cost(prog, model.case, x)
    V = voltage_matrix(prog, x)
    E = lifted_internal(prog, x)
    L = laplacian_from_lifted(E, model.kron)
    res.laplacian = L
    res.f_y_lifted = metric_from_laplacian(L, M, gamma, band)
    res.f_y = (stability_term(prog, x) if mu > 0
               else band_energy_sdp(L, M, band, gamma, tol, backend))

    case = model.case
    try:
        res.rank_ratio_V = rank1_ratio(V)
        res.rank_ratio_E = rank1_ratio(E)
        ref = case.bus_index()[case.ref_bus]
        v = extract_voltages(V, ref, threshold, allow_inexact=True)
        sync = model.kron.sync_buses
        e = model.kron.internal_from_external(v[model.adm.indices(sync)])
        e = reference(e, sync.index(case.ref_bus) if case.ref_bus in sync else 0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AdmissibilityWarning)
            res.report = verify_dispatch(
                v, e, case, model.adm, model.kron, model.dyn, band,
                dispatch=(prog.value(x, "p_g"), prog.value(x, "q_g")),
                rank_ratio_V=res.rank_ratio_V, rank_ratio_E=res.rank_ratio_E,
                threshold=threshold)
    except ValueError as exc:
        raise StageError("recover", str(exc)) from exc
    res.f_y_recovered = res.report.f_y_recovered
    res.exact = res.report.exact
    return res


# --- sweeps -----------------------------------------------------------------

def default_jobs() -> int:
    raw = os.environ.get("OSCILLOPF_JOBS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


@dataclass(frozen=True)
class Task:
    case_path: str
    dyn_path: str
    load_scale: float
    mu: float
    k: int | None
    omega_range: tuple[float, float] | None
    tol: float
    threshold: float
    backend: str


def run_task(task: Task) -> InstanceResult:
    t0 = time.perf_counter()
    try:
        model = load_model(task.case_path, task.dyn_path, task.load_scale)
        res = solve_instance(model, task.mu, task.k, task.omega_range, task.tol,
                             task.threshold, task.backend)
    except StageError as exc:
        res = InstanceResult(task.mu, task.k or 0, task.load_scale, "failed",
                             stage=exc.stage, message=str(exc))
    res.solve_time = time.perf_counter() - t0 if res.solve_time == 0 else res.solve_time
    return res


def run_tasks(tasks: list[Task], jobs: int = 1) -> list[InstanceResult]:
    """Results in task order, whatever the completion order of the workers."""
    if jobs <= 1 or len(tasks) <= 1:
        return [run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_task, tasks))


def mu_grid(n: int) -> list[float]:
    if n < 2:
        raise ValueError("a trade-off grid needs at least two points")
    return [float(m) for m in np.round(np.linspace(0.0, 1.0, n), 12)]


@dataclass(frozen=True)
class FrontCheck:
    cost_monotone: bool
    f_y_monotone: bool
    knee: bool
    knee_mu: float | None


def check_front(results: list[InstanceResult], rel_tol: float = 1e-6) -> FrontCheck:
    """Monotonicity in mu and presence of a knee.

    The knee test asks that at least half of the total reduction in band
    energy is reached for at most a quarter of the total cost increase.
    """
    pts = sorted((r for r in results if r.ok), key=lambda r: r.mu)
    if len(pts) < 2:
        return FrontCheck(False, False, False, None)
    cost = np.array([r.cost for r in pts])
    fy = np.array([r.f_y for r in pts])
    c_tol = rel_tol * max(1.0, np.abs(cost).max())
    f_tol = rel_tol * max(1.0, np.abs(fy).max())
    cost_ok = bool(np.all(np.diff(cost) >= -c_tol))
    f_ok = bool(np.all(np.diff(fy) <= f_tol))
    dc = cost[-1] - cost[0]
    df = fy[0] - fy[-1]
    knee, knee_mu = False, None
    if dc > 0 and df > 0:
        for r, c, f in zip(pts, cost, fy):
            if fy[0] - f >= 0.5 * df:
                knee = bool(c - cost[0] <= 0.25 * dc)
                knee_mu = r.mu
                break
    return FrontCheck(cost_ok, f_ok, knee, knee_mu)


def improvement_pct(f0: float, f1: float) -> float:
    return 100.0 * (f0 - f1) / f0 if f0 else float("nan")


def resolve_path(p) -> str:
    return str(Path(p).resolve())
