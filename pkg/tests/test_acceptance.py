"""The fourteen acceptance criteria at desk scale.

Each test carries ``acceptance(number, title)``; the terminal summary lists
one PASS/FAIL line per criterion with the measured numbers.
"""

import math

import numpy as np
import pytest

from mesohom import cosserat_fit as C
from mesohom import dynamics as D
from mesohom import homogenize as H
from mesohom import mechanics as ME
from mesohom import mesh as M
from mesohom.config import make_config
from mesohom.linsys import finalize
from mesohom.runner import run, solve_cantilever, solve_flow

PATCH = {"scenario": "patch-linear"}
CANTILEVER = {"scenario": "cantilever-static", "seed": 2}
TOL = 1e-9


def acceptance(number, title):
    return pytest.mark.acceptance(number, title)


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture(scope="module")
def patch_flow():
    return solve_flow(make_config({**PATCH, "seed": 0}))


@pytest.fixture(scope="module")
def cantilever():
    return solve_cantilever(make_config(CANTILEVER))


# ---------------------------------------------------------------------------


@acceptance(1, "linear patch: exact pressures and variant-exact flux (-4, -4)")
def test_linear_patch(tmp_path, record_property):
    worst_p = worst_a = worst_t = 0.0
    for seed in range(4):
        res = run(make_config({**PATCH, "seed": seed}), tmp_path / str(seed))
        worst_p = max(worst_p, res.metrics["p_max_rel_error"])
        worst_a = max(worst_a, res.metrics["exact_flux_max_rel_error"])
        worst_t = max(worst_t, res.manifest["wall_clock_s"])
    record_property("detail", f"p {worst_p:.1e}, a {worst_a:.1e}, {worst_t:.1f} s, seeds 0-3")
    assert worst_p <= TOL and worst_a <= TOL and worst_t <= 30.0


@acceptance(2, "variant II on single control volumes gives zero flux")
def test_single_control_volume_limit(patch_flow, record_property):
    net, sol = patch_flow.net, patch_flow.sol
    interior = np.setdiff1d(np.arange(net.n_nodes), sol.dirichlet)
    worst = 0.0
    for k in interior:
        mask = np.zeros(net.n_nodes, dtype=bool)
        mask[k] = True
        smp, cond, V = H.flow_region_samples(net, sol.sources.Q, sol.states.j, mask)
        a = H.evaluate_flux(smp, cond, V, net.nodes[k])["nodal"].a
        worst = max(worst, float(np.linalg.norm(a)))
    record_property("detail", f"max |a| {worst:.1e} over {interior.size} volumes")
    assert worst <= 1e-12 * 4 * math.sqrt(2)


@acceptance(3, "variant II deviation grows with bin count")
def test_bin_size_trend(record_property):
    rms = []
    for n in (5, 10, 20):
        fr = solve_flow(make_config({**PATCH, "seed": 0, "bins_nx": n, "bins_ny": n}))
        a1 = np.array([res["nodal"].a[0] for _, _, _, res in fr.bins])
        rms.append(float(np.sqrt(np.mean((a1 + 4.0) ** 2))))
    record_property("detail", "RMS " + " < ".join(f"{v:.3f}" for v in rms))
    assert rms[0] < rms[1] < rms[2]


@acceptance(4, "quadratic source: variant-exact bins follow the analytic averages")
def test_quadratic_source(tmp_path, record_property):
    cfg = make_config({"scenario": "patch-quadratic", "seed": 0, "bins_nx": 4, "bins_ny": 4})
    fr = solve_flow(cfg)
    from mesohom.fields import QuadraticPatch

    qp = QuadraticPatch(fr.domain.lo, fr.domain.hi, cfg.lambda_flow)
    got, ref = [], []
    for reg, mask, _, res in fr.bins:
        if mask.sum() >= 200:
            got.append(res["exact"].a)
            ref.append(qp.flux_box_average(reg.lo, reg.hi))
    got, ref = np.array(got), np.array(ref)
    rel = float(np.sqrt(np.sum((got - ref) ** 2) / np.sum(ref**2)))
    record_property("detail", f"rel RMS {rel:.3f} over {len(got)} bins")
    assert len(got) > 0 and rel <= 0.10


@acceptance(5, "decomposition identities on 1000 random sample sets, 2D and 3D")
def test_decomposition_identities(record_property):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(1000):
        dim = 2 if k % 2 == 0 else 3
        n = int(rng.integers(1, 40))
        x = rng.uniform(-2, 2, (n, dim))
        anchor = x - rng.uniform(-0.1, 0.1, (n, dim))
        F = rng.normal(size=(n, dim))
        Z = rng.normal(size=n) if dim == 2 else rng.normal(size=(n, 3))
        s = H.ActionSamples(x, F, Z, anchor)
        V = float(rng.uniform(0.1, 5))
        xm = rng.normal(size=dim)
        ex = H.stress_external_exact(s, V)
        nd, gap = H.stress_external_nodal(s, V)
        m_ex = H.couple_external_exact(s, V, xm, ex)
        m_nd, m_gap = H.couple_external_nodal(s, V, xm, ex)
        fl = H.FluxSamples(x, rng.normal(size=n), anchor)
        a_nd, a_gap = H.flux_external_nodal(fl, V)
        worst = max(worst, _rel(nd + gap, ex), _rel(m_nd + m_gap, m_ex), _rel(a_nd + a_gap, H.flux_external_exact(fl, V)))
    record_property("detail", f"worst {worst:.1e}")
    assert worst <= 1e-12


@acceptance(6, "internal forms equal external-nodal forms on full domains")
def test_internal_equals_nodal(cantilever, patch_flow, record_property):
    dom, mesh, _, _, sol = cantilever
    acts = H.MechActions(sol.actions.x, sol.actions.F, sol.actions.Z)
    reg = H.full_region(dom)
    smp, el, _ = H.mech_region_samples(mesh, acts, sol.states.traction, sol.states.m, reg)
    res = H.evaluate_mech(smp, el, reg.V, reg.x_mac)
    r_sig = _rel(res["internal"].sigma, res["nodal"].sigma)
    # the couple stress is compared against the stress-weighted scale of the region
    mu_scale = np.linalg.norm(res["nodal"].mu) + np.linalg.norm(res["nodal"].sigma) * 0.5 * dom.width
    r_mu = float(np.linalg.norm(res["internal"].mu - res["nodal"].mu) / mu_scale)
    net, fsol = patch_flow.net, patch_flow.sol
    everything = np.ones(net.n_nodes, dtype=bool)
    fsmp, cond, V = H.flow_region_samples(net, fsol.sources.Q, fsol.states.j, everything)
    flux = H.evaluate_flux(fsmp, cond, V, 0.5 * (patch_flow.domain.lo + patch_flow.domain.hi))
    r_a = _rel(flux["internal"].a, flux["nodal"].a)
    record_property("detail", f"sigma {r_sig:.1e}, mu {r_mu:.1e}, a {r_a:.1e}")
    assert max(r_sig, r_mu, r_a) <= TOL


@pytest.mark.slow
@acceptance(7, "cantilever statics match beam theory for beta 0, 1e3, 1e5")
def test_cantilever_statics(tmp_path, record_property):
    parts, ok = [], True
    for beta in (0.0, 1e3, 1e5):
        res = run(make_config({**CANTILEVER, "beta": beta, "variants": "exact"}), tmp_path / f"b{beta:g}")
        m = res.metrics
        errs = (m["exact_max_N_over_P"], m["exact_max_V_over_P_error"], m["exact_max_M_over_PS_error"])
        ok &= max(errs) <= 1e-6 and m["n_particles"] >= 20_000
        parts.append(f"beta {beta:g}: N {errs[0]:.0e} V {errs[1]:.0e} M {errs[2]:.0e}")
    record_property("detail", f"{m['n_particles']} particles; " + ", ".join(parts))
    assert ok


@acceptance(8, "integrated couple equals single-point couple with unit bending (1000 facets)")
def test_integrated_couple_identity(record_property):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        th = rng.uniform(0, 2 * np.pi)
        n = np.array([np.cos(th), np.sin(th)])
        t = np.array([-n[1], n[0]])
        l = rng.uniform(1e-3, 2.0)
        ci = rng.uniform(0.1, 0.9) * l * n + rng.uniform(-0.5, 0.5) * l * t
        cj = ci - l * n
        A = rng.uniform(1e-3, 1.0) * l
        qi, qj = rng.normal(size=3), rng.normal(size=3)
        mat = ME.MaterialMech(rng.uniform(1e9, 5e10), rng.uniform(0, 1), 1.0)
        z = ME.integrated_couple_at_I(A, l, n, ci, cj, qi, qj, mat)
        tN, tM, m = ME.facet_forces(*ME.facet_kinematics(l, n, ci, cj, qi, qj), mat, A)
        tr = tN * n + tM * t
        single = A * (m + ME.cross2(ci, tr))
        scale = abs(A * m) + A * np.linalg.norm(ci) * np.linalg.norm(tr)
        worst = max(worst, abs(z - single) / scale)
    record_property("detail", f"worst {worst:.1e}")
    assert worst <= 1e-12


@acceptance(9, "stiffness is symmetric with exactly three rigid modes")
def test_stiffness_structure(record_property):
    mesh = M.generate_mesh(M.Domain2(0.1, 0.1), 0.004, 0.01, 0.5, 0.5, seed=9)
    K = finalize(ME.assemble_stiffness(mesh, ME.MaterialMech(40e9, 0.3, 0.0)))
    kmax = np.abs(K.data).max()
    asym = float(np.abs((K - K.T).data).max(initial=0.0) / kmax)
    R = ME.rigid_modes(mesh.centers)
    rigid = float(np.abs(K @ R).max() / (kmax * np.abs(R).max()))
    w = np.linalg.eigvalsh(K.toarray())
    n_zero = int(np.sum(np.abs(w) <= 1e-10 * np.abs(w).max()))
    record_property("detail", f"asym {asym:.1e}, rigid {rigid:.1e}, null dim {n_zero}")
    assert asym <= 1e-12 and rigid <= 1e-10 and n_zero == 3


@acceptance(10, "Cosserat fit reproduces the published parameters")
def test_cosserat_fit(record_property):
    p = C.fit_cosserat(C.rve_tensor("0"))
    ref = C.reference_parameters()[0.0]
    errs = {k: abs(getattr(p, k) / getattr(ref, k) - 1) for k in ("lam", "mu", "mu_c", "ell")}
    q = C.CosseratParams(8.1e9, 11.9e9, 5.7e9, 0.23)
    back = C.fit_cosserat(C.build_cosserat_tensor(q))
    rt = max(abs(getattr(back, k) / getattr(q, k) - 1) for k in ("lam", "mu", "mu_c", "ell"))
    record_property("detail", ", ".join(f"{k} {100 * v:.1f}%" for k, v in errs.items()) + f", roundtrip {rt:.0e}")
    assert max(errs.values()) <= 0.05 and rt <= 1e-10


@acceptance(11, "generalized-alpha: second order, limit spectral radius 0.8")
def test_generalized_alpha(record_property):
    errs = [abs(D.oscillator_displacement(dt, 2.0, 0.8) - math.cos(2.0)) for dt in (0.1, 0.05, 0.025)]
    rate = min(math.log2(errs[k] / errs[k + 1]) for k in range(2))
    r = D.spectral_radius(1.0, 1e4, 0.8)
    record_property("detail", f"rate {rate:.2f}, radius {r:.4f}")
    assert rate >= 1.9 and abs(r - 0.8) <= 0.02 * 0.8


@pytest.mark.slow
@acceptance(12, "transient cantilever: identities at every step, settles on static")
def test_transient(tmp_path, record_property):
    res = run(make_config({"scenario": "cantilever-transient", "seed": 2}), tmp_path)
    m = res.metrics
    record_property(
        "detail",
        f"{m['n_steps']} steps, decomposition {m['max_decomp_residual']:.1e}, "
        f"internal {m['max_internal_residual']:.1e}, late mean/static {m['tip_late_mean_over_static']:.4f}",
    )
    assert m["max_decomp_residual"] <= 1e-8
    assert m["max_internal_residual"] <= 1e-8
    assert abs(m["tip_late_mean_over_static"] - 1.0) <= 0.03


@acceptance(13, "virtual-work probe: three densities agree for 100 random modes")
def test_virtual_work_probe(cantilever, record_property):
    dom, mesh, _, _, sol = cantilever
    acts = H.MechActions(sol.actions.x, sol.actions.F, sol.actions.Z)
    B = ME.strain_operator(mesh.fl, mesh.fn, mesh.arm_i, mesh.arm_j)
    st_ = sol.states
    rng = np.random.default_rng(13)
    x_mac = 0.5 * (dom.lo + dom.hi)
    V = dom.width * dom.height
    worst = worst_density = 0.0
    for _ in range(100):
        r = H.virtual_work_probe(
            mesh, acts, B, st_.t_N, st_.t_M, st_.m, V, x_mac, rng.normal(size=(2, 2)), rng.normal(size=2)
        )
        worst = max(worst, r.work_spread())
        worst_density = max(worst_density, r.spread())
    record_property("detail", f"spread {worst:.1e} of virtual work, {worst_density:.1e} of largest density")
    assert worst <= 1e-10


@acceptance(14, "mesh invariants on 20 random seeds")
def test_mesh_invariants(record_property):
    tiling = ortho = closure = 0.0
    for seed in range(100, 120):
        mesh = M.generate_mesh(M.Domain2(0.2, 0.2), 0.002, 0.005, 0.5, 0.5, seed=seed)
        tiling = max(tiling, M.tiling_error(mesh))
        ortho = max(ortho, float(np.max(M.facet_orthogonality(mesh))))
        for kind in ("particle", "dual"):
            _, rel = M.closure_residuals(M.build_transport_network(mesh, kind))
            closure = max(closure, float(rel.max()))
    record_property("detail", f"tiling {tiling:.1e}, orthogonality {ortho:.1e}, closure {closure:.1e}")
    assert tiling <= 1e-9 and ortho <= 1e-12 and closure <= 1e-12
