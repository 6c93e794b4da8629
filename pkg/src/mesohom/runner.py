"""Scenario orchestration: mesh, solve, homogenize, write outputs, compare.

A run directory holds:

* ``config.txt``: the resolved configuration
* ``mesh.txt``: the mesh, plus the transport network for flow scenarios
* ``bins_<variant>.csv``: one bin map per requested variant
* ``sections_<variant>.csv``: cantilever section forces (static)
* ``timeseries.csv``: tip displacement and identity residuals (transient)
* ``manifest.json``: hashes, version, wall-clock and the file list
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from . import __version__
from . import homogenize as H
from . import mechanics as ME
from . import poisson as PO
from .config import ScenarioConfig
from .cosserat_fit import beam_oracle
from .dynamics import GeneralizedAlpha, TimeIntegratorParams, effective_external_actions
from .errors import ContractError, MesohomError
from .fields import QuadraticPatch, linear_potential
from .linsys import build_transformation, finalize
from .mesh import Domain2, Mesh, TransportNetwork, build_transport_network, generate_mesh, write_mesh

log = logging.getLogger("mesohom")

FLOW_COLUMNS = ["variant", "bin_ix", "bin_iy", "xmac[m]", "ymac[m]", "V[m2]", "n_nodes[-]", "ax[1/m]", "ay[1/m]"]
MECH_COLUMNS = [
    "variant", "bin_ix", "bin_iy", "xmac[m]", "ymac[m]", "V[m2]",
    "sxx[Pa]", "sxy[Pa]", "syx[Pa]", "syy[Pa]", "mu1[N/m]", "mu2[N/m]",
]  # fmt: skip
SECTION_COLUMNS = ["col", "xmac[m]", "N[N]", "V[N]", "M[Nm]", "N_ref[N]", "V_ref[N]", "M_ref[Nm]"]
SERIES_COLUMNS = ["step", "t[s]", "u_tip[m]", "u_static[m]", "decomp_residual[-]", "internal_residual[-]"]


class RunError(MesohomError):
    """A module error with the scenario it happened in."""


@dataclass
class RunResult:
    run_dir: Path
    manifest: dict
    metrics: dict = field(default_factory=dict)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Mesh cache: mechanics runs that differ only in material reuse one mesh
# ---------------------------------------------------------------------------

_MESH_CACHE: dict[tuple, Mesh] = {}


def build_mesh(cfg: ScenarioConfig) -> tuple[Domain2, Mesh]:
    dom = Domain2(cfg.width_m, cfg.height_m)
    key = (cfg.width_m, cfg.height_m, cfg.d_min_m, cfg.d_max_m, cfg.fuller_q, cfg.fill, cfg.seed, cfg.max_attempts)
    mesh = _MESH_CACHE.get(key)
    if mesh is None:
        mesh = generate_mesh(dom, cfg.d_min_m, cfg.d_max_m, cfg.fuller_q, cfg.fill, seed=cfg.seed, max_attempts=cfg.max_attempts)
        if len(_MESH_CACHE) >= 2:
            _MESH_CACHE.pop(next(iter(_MESH_CACHE)))
        _MESH_CACHE[key] = mesh
    return dom, mesh


# ---------------------------------------------------------------------------
# Flow scenarios
# ---------------------------------------------------------------------------


@dataclass
class FlowRun:
    domain: Domain2
    mesh: Mesh
    net: TransportNetwork
    sol: PO.PoissonSolution
    bins: list  # (region, members mask, {variant: MacroFlux})


def flow_problem(cfg: ScenarioConfig, dom: Domain2, net: TransportNetwork):
    """``(source, dirichlet)`` for the flow scenarios."""
    if cfg.scenario == "patch-linear":
        return None, lambda x, y: linear_potential(x, y)
    if cfg.scenario == "patch-quadratic":
        qp = QuadraticPatch(dom.lo, dom.hi, cfg.lambda_flow)
        return qp.source, lambda x, y: qp.potential(x, y)
    gx, gy = cfg.grad_x, cfg.grad_y
    return (cfg.source if cfg.source else None), lambda x, y: gx * x + gy * y


def solve_flow(cfg: ScenarioConfig) -> FlowRun:
    dom, mesh = build_mesh(cfg)
    net = build_transport_network(mesh, cfg.network)
    source, dirichlet = flow_problem(cfg, dom, net)
    sol = PO.solve_steady(net, PO.MaterialFlow(cfg.lambda_flow), source, dirichlet)
    bins = []
    for reg in H.bin_partition(dom, cfg.bins_nx, cfg.bins_ny):
        mask = H.flow_bin_members(net, reg, sol.dirichlet)
        if not mask.any():
            log.warning("bin (%d, %d) holds no free transport node; skipped", reg.ix, reg.iy)
            continue
        smp, cond, V = H.flow_region_samples(net, sol.sources.Q, sol.states.j, mask)
        bins.append((reg, mask, V, H.evaluate_flux(smp, cond, V, reg.x_mac)))
    return FlowRun(dom, mesh, net, sol, bins)


def _flow_outputs(cfg: ScenarioConfig, fr: FlowRun, out: Path) -> dict:
    for var in cfg.variants:
        rows = [
            (var, r.ix, r.iy, r.x_mac[0], r.x_mac[1], V, int(mask.sum()), res[var].a[0], res[var].a[1])
            for r, mask, V, res in fr.bins
        ]
        write_csv(out / f"bins_{var}.csv", FLOW_COLUMNS, rows)
    metrics: dict = {"n_particles": fr.mesh.n_particles, "n_nodes": fr.net.n_nodes}
    a_ex = np.array([res["exact"].a for _, _, _, res in fr.bins])
    a_nd = np.array([res["nodal"].a for _, _, _, res in fr.bins])
    x = fr.net.nodes
    if cfg.scenario == "patch-linear":
        p_ref = linear_potential(x[:, 0], x[:, 1])
        metrics["p_max_rel_error"] = float(np.max(np.abs(fr.sol.p - p_ref)) / np.max(np.abs(p_ref)))
        metrics["exact_flux_max_rel_error"] = float(np.max(np.abs(a_ex + 4.0)) / 4.0)
        metrics["nodal_a1_rms_deviation"] = float(np.sqrt(np.mean((a_nd[:, 0] + 4.0) ** 2)))
    elif cfg.scenario == "patch-quadratic":
        qp = QuadraticPatch(fr.domain.lo, fr.domain.hi, cfg.lambda_flow)
        ref = np.array([qp.flux_box_average(r.lo, r.hi) for r, _, _, _ in fr.bins])
        rows = [
            ("analytic", r.ix, r.iy, r.x_mac[0], r.x_mac[1], r.V, int(mask.sum()), a[0], a[1])
            for (r, mask, _, _), a in zip(fr.bins, ref)
        ]
        write_csv(out / "analytic_bins.csv", FLOW_COLUMNS, rows)
        metrics["exact_flux_rel_rms"] = float(np.sqrt(np.sum((a_ex - ref) ** 2) / np.sum(ref**2)))
        metrics["min_nodes_per_bin"] = int(min(mask.sum() for _, mask, _, _ in fr.bins))
    return metrics


# ---------------------------------------------------------------------------
# Mechanics scenarios
# ---------------------------------------------------------------------------


def material_of(cfg: ScenarioConfig) -> ME.MaterialMech:
    return ME.MaterialMech(cfg.E0_pa, cfg.alpha, cfg.beta, cfg.rho_kgm3)


def mech_bins(mesh, actions: H.MechActions, states, regions, variants=("exact", "nodal", "internal")):
    out = []
    for reg in regions:
        smp, el, members = H.mech_region_samples(mesh, actions, states.traction, states.m, reg)
        if members.size == 0 and el.A.size == 0:
            log.warning("region (%d, %d) is empty; skipped", reg.ix, reg.iy)
            continue
        out.append((reg, H.evaluate_mech(smp, el, reg.V, reg.x_mac)))
    return out


def _mech_rows(bins, var):
    for reg, res in bins:
        s, mu = res[var].sigma, res[var].mu
        yield (var, reg.ix, reg.iy, reg.x_mac[0], reg.x_mac[1], reg.V, s[0, 0], s[0, 1], s[1, 0], s[1, 1], mu[0], mu[1])


def section_forces(bins, depth: float, var: str = "exact"):
    """``(x_mac, N, V, M)`` per full-depth column: ``sigma11 D, sigma12 D, mu1 D``."""
    rows = []
    for reg, res in bins:
        s, mu = res[var].sigma, res[var].mu
        rows.append((reg.x_mac[0], s[0, 0] * depth, s[0, 1] * depth, mu[0] * depth))
    return np.array(rows)


def solve_cantilever(cfg: ScenarioConfig):
    dom, mesh = build_mesh(cfg)
    setup = ME.cantilever_setup(mesh, cfg.load_P_n)
    mat = material_of(cfg)
    sol = ME.solve_static(mesh, mat, setup.constraints, setup.loads, setup.n_extra)
    return dom, mesh, mat, setup, sol


def _static_outputs(cfg, dom, mesh, setup, sol, out: Path) -> dict:
    acts = H.MechActions(sol.actions.x, sol.actions.F, sol.actions.Z, setup.action_points(mesh))
    bins = mech_bins(mesh, acts, sol.states, H.bin_partition(dom, cfg.bins_nx, cfg.bins_ny))
    for var in cfg.variants:
        write_csv(out / f"bins_{var}.csv", MECH_COLUMNS, _mech_rows(bins, var))
    cols = mech_bins(mesh, acts, sol.states, H.column_partition(dom, cfg.bins_nx))
    P, S, D = cfg.load_P_n, dom.width, dom.height
    metrics: dict = {"n_particles": mesh.n_particles, "tip_displacement_m": float(sol.u[setup.master_dof])}
    for var in cfg.variants:
        sec = section_forces(cols, D, var)
        N_ref, V_ref, M_ref = beam_oracle(P, S, D, np.clip(sec[:, 0] - dom.lo[0], 0.0, S))
        rows = [(k, *sec[k], N_ref[k], V_ref[k], M_ref[k]) for k in range(len(sec))]
        write_csv(out / f"sections_{var}.csv", SECTION_COLUMNS, rows)
        metrics[f"{var}_max_N_over_P"] = float(np.max(np.abs(sec[:, 1] - N_ref)) / P)
        metrics[f"{var}_max_V_over_P_error"] = float(np.max(np.abs(sec[:, 2] - V_ref)) / P)
        metrics[f"{var}_max_M_over_PS_error"] = float(np.max(np.abs(sec[:, 3] - M_ref)) / (P * S))
    return metrics


def first_period(K, M, constraints) -> float:
    """Fundamental period of the constrained system from a shift-invert eigensolve."""
    tr = build_transformation(constraints)
    T = tr.T
    Kr = (T.T @ K @ T).tocsc()
    Mr = (T.T @ M @ T).tocsc()
    w2 = spla.eigsh(Kr, k=1, M=Mr, sigma=0.0, which="LM", return_eigenvectors=False)
    return 2.0 * math.pi / math.sqrt(float(w2[0]))


def _rel(a, b) -> float:
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.finfo(float).tiny))


def identity_residuals(mesh, actions: H.MechActions, states, regions, domain: Domain2) -> tuple[float, float]:
    """Worst decomposition residual (exact vs nodal + gap) over ``regions`` and
    the full-domain internal-vs-nodal residual."""
    decomp = 0.0
    for reg in regions:
        smp, el, _ = H.mech_region_samples(mesh, actions, states.traction, states.m, reg)
        loc = smp.shifted(-reg.x_mac)
        s_ex = H.stress_external_exact(loc, reg.V)
        s_nd, gap = H.stress_external_nodal(loc, reg.V)
        m_ex = H.couple_external_exact(loc, reg.V, np.zeros(2), s_ex)
        m_nd, mgap = H.couple_external_nodal(loc, reg.V, np.zeros(2), s_ex)
        decomp = max(decomp, _rel(s_nd + gap, s_ex), _rel(m_nd + mgap, m_ex))
    full = H.full_region(domain)
    nodal = H.MechActions(actions.x, actions.F, actions.Z)
    smp, el = H.mech_full_samples(mesh, nodal, states.traction, states.m)
    res = H.evaluate_mech(smp, el, full.V, full.x_mac)
    internal = max(
        _rel(res["internal"].sigma, res["nodal"].sigma),
        _rel(res["internal"].mu, res["nodal"].mu) if np.linalg.norm(res["nodal"].mu) > 0 else 0.0,
    )
    return decomp, internal


def _transient_outputs(cfg, dom, mesh, mat, setup, sol, out: Path) -> dict:
    K = sol.K
    Mm = ME.mass_matrix(ME.assemble_inertia(mesh, mat), setup.n_extra)
    T1 = first_period(K, Mm, setup.constraints)
    dt = cfg.dt_s if cfg.dt_s > 0 else T1 / 40.0
    t_end = cfg.t_end_s if cfg.t_end_s > 0 else cfg.periods * T1
    params = TimeIntegratorParams(cfg.rho_inf, dt, t_end)
    loads = setup.loads
    integ = GeneralizedAlpha(K, Mm, params, lambda t: loads, setup.constraints)
    pts = setup.action_points(mesh)
    check_regions = H.column_partition(dom, cfg.bins_nx)
    picks = sorted({0, len(check_regions) // 2, len(check_regions) - 1})
    check_regions = [check_regions[k] for k in picks]
    u_static = float(sol.u[setup.master_dof])
    rows = []
    last = {}

    def record(step, state, lev):
        acts = effective_external_actions(mesh.centers, K, Mm, lev, mesh.n_particles)
        states = ME.facet_states(mesh, mat, lev.u)
        mact = H.MechActions(acts.x, acts.F, acts.Z, pts)
        dres, ires = identity_residuals(mesh, mact, states, check_regions, dom)
        rows.append((step, state.t, state.u[setup.master_dof], u_static, dres, ires))
        last["acts"], last["states"] = mact, states

    state = integ.initial_state()
    for n in range(1, params.n_steps + 1):
        state, lev = integ.step(state)
        if n % cfg.output_every == 0 or n == params.n_steps:
            record(n, state, lev)
    write_csv(out / "timeseries.csv", SERIES_COLUMNS, rows)
    if last:
        bins = mech_bins(mesh, last["acts"], last["states"], H.bin_partition(dom, cfg.bins_nx, cfg.bins_ny))
        for var in cfg.variants:
            write_csv(out / f"bins_{var}.csv", MECH_COLUMNS, _mech_rows(bins, var))
    arr = np.array([r[1:] for r in rows], dtype=float)
    t = arr[:, 0]
    late = t >= t[-1] - 0.5 * (t[-1] - 0.0)
    return {
        "n_particles": mesh.n_particles,
        "period_T1_s": T1,
        "dt_s": dt,
        "n_steps": params.n_steps,
        "tip_static_m": u_static,
        "tip_late_mean_over_static": float(np.mean(arr[late, 1]) / u_static),
        "max_decomp_residual": float(arr[:, 3].max()),
        "max_internal_residual": float(arr[:, 4].max()),
    }


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def run(cfg: ScenarioConfig, output_dir=None) -> RunResult:
    """Run one scenario and write its outputs. Module errors are re-raised
    as :class:`RunError` naming the scenario."""
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    (out / "config.txt").write_text(cfg.to_text())
    log.info("scenario %s, seed %d -> %s", cfg.scenario, cfg.seed, out)
    try:
        if cfg.scenario in ("patch-linear", "patch-quadratic", "custom"):
            fr = solve_flow(cfg)
            mesh_hash = write_mesh(out / "mesh.txt", fr.mesh, fr.net)
            metrics = _flow_outputs(cfg, fr, out)
        else:
            dom, mesh, mat, setup, sol = solve_cantilever(cfg)
            mesh_hash = write_mesh(out / "mesh.txt", mesh)
            if cfg.scenario == "cantilever-static":
                metrics = _static_outputs(cfg, dom, mesh, setup, sol, out)
            else:
                metrics = _transient_outputs(cfg, dom, mesh, mat, setup, sol, out)
    except MesohomError as exc:
        raise RunError(f"scenario {cfg.scenario}: {exc}") from exc
    wall = time.perf_counter() - t0
    files = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {
        "scenario": cfg.scenario,
        "config_hash": cfg.digest(),
        "mesh_hash": mesh_hash,
        "version": __version__,
        "wall_clock_s": wall,
        "files": {name: _sha256(out / name) for name in files},
        "metrics": metrics,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("done in %.1f s", wall)
    return RunResult(out, manifest, metrics)


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

KEY_COLUMNS = ("bin_ix", "bin_iy", "col", "step")


@dataclass
class ColumnReport:
    name: str
    max_error: float
    rms_error: float
    tolerance: float
    passed: bool


@dataclass
class CompareReport:
    target: Path
    reference: Path
    columns: list[ColumnReport]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.columns)

    @property
    def failing(self) -> list[str]:
        return [c.name for c in self.columns if not c.passed]

    def lines(self) -> list[str]:
        out = [f"compare {self.target} against {self.reference}"]
        for c in self.columns:
            tag = "PASS" if c.passed else "FAIL"
            out.append(f"{tag} {c.name}: max {c.max_error:.3e} rms {c.rms_error:.3e} (tol {c.tolerance:.1e})")
        out.append("PASS" if self.passed else "FAIL: " + ", ".join(self.failing))
        return out


def _numeric(vals: list[str]):
    try:
        return np.array([float(v) for v in vals])
    except ValueError:
        return None


def compare(run_dir, reference_csv, tolerances: dict | None = None, target: str | None = None) -> CompareReport:
    """Column-by-column comparison of a run output against a reference CSV.

    ``tolerances`` maps column names to relative tolerances, scaled by the
    column's largest reference magnitude (absolute when that is zero). The
    ``"default"`` entry, 1e-9 unless given, covers the other columns. Rows
    pair up by the key columns both files share, else by position. The
    target defaults to the run file named like the reference, then to
    ``bins_exact.csv``.
    """
    run_dir = Path(run_dir)
    reference_csv = Path(reference_csv)
    tol = {"default": 1e-9, **(tolerances or {})}
    if target is not None:
        tpath = run_dir / target
    elif (run_dir / reference_csv.name).exists() and (run_dir / reference_csv.name).resolve() != reference_csv.resolve():
        tpath = run_dir / reference_csv.name
    else:
        tpath = run_dir / "bins_exact.csv"
    if not tpath.exists():
        raise ContractError(f"no comparable output {tpath.name} in {run_dir}")
    rcols, rrows = read_csv(reference_csv)
    tcols, trows = read_csv(tpath)
    missing = [c for c in rcols if c not in tcols and c != "variant"]
    if missing:
        raise ContractError(f"schema mismatch: reference columns {missing} absent from {tpath.name}")
    keys = [k for k in KEY_COLUMNS if k in rcols and k in tcols]
    tindex = {tuple(r[tcols.index(k)] for k in keys): r for r in trows} if keys else None
    if tindex is None and len(trows) != len(rrows):
        raise ContractError(f"row count differs: {len(trows)} vs {len(rrows)}")
    paired = []
    for k, rr in enumerate(rrows):
        if tindex is None:
            paired.append((rr, trows[k]))
            continue
        key = tuple(rr[rcols.index(c)] for c in keys)
        if key not in tindex:
            raise ContractError(f"schema mismatch: reference row {dict(zip(keys, key))} has no counterpart")
        paired.append((rr, tindex[key]))
    reports = []
    for c in rcols:
        if c in keys or c == "variant":
            continue
        ref = _numeric([rr[rcols.index(c)] for rr, _ in paired])
        got = _numeric([tr[tcols.index(c)] for _, tr in paired])
        if ref is None or got is None:
            raise ContractError(f"column {c} is not numeric")
        err = np.abs(got - ref)
        t = float(tol.get(c, tol["default"]))
        scale = float(np.max(np.abs(ref))) if ref.size else 0.0
        limit = t * scale if scale > 0 else t
        mx = float(err.max()) if err.size else 0.0
        rms = float(np.sqrt(np.mean(err**2))) if err.size else 0.0
        reports.append(ColumnReport(c, mx, rms, t, bool(mx <= limit)))
    return CompareReport(tpath, reference_csv, reports)
