"""Macroscopic stress, couple stress and flux over finite regions.

Three routes are provided for every quantity:

* ``exact``: external actions at their true points of application,
* ``nodal``: the same actions moved to their anchor nodes, with the
  difference returned separately as the gap term,
* ``internal``: sums over element (or conduit) internal actions.

Sample-level operators work in 2D and 3D. In 2D the couple stress is a
2-vector (the out-of-plane column of the 3D tensor) and the permutation
symbol contracts as ``E:(a x b) = a1 b2 - a2 b1``.

Regions are cut from a solved mesh in two ways. Mechanical regions cut the
node-connecting segments of the lattice elements at the region boundary.
Transport regions are unions of whole control volumes cut along conduit
faces. See :func:`mech_region_samples` and :func:`flow_region_samples`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError
from .mesh import Domain2, Mesh, TransportNetwork

VARIANTS = ("exact", "nodal", "internal")


class EmptyRegionWarning(UserWarning):
    pass


def levi_civita() -> np.ndarray:
    e = np.zeros((3, 3, 3))
    e[0, 1, 2] = e[1, 2, 0] = e[2, 0, 1] = 1.0
    e[0, 2, 1] = e[2, 1, 0] = e[1, 0, 2] = -1.0
    return e


_EPS3 = levi_civita()


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x.reshape(0, x.shape[-1] if x.ndim == 2 else 2)
    return x.reshape(1, -1) if x.ndim == 1 else x


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


# ---------------------------------------------------------------------------
# Sample containers
# ---------------------------------------------------------------------------


@dataclass
class ActionSamples:
    """Forces ``F`` and couples ``Z`` applied at points ``x``.

    ``Z`` is a scalar per sample in 2D and a 3-vector in 3D. ``anchor`` holds
    the governing node each action belongs to; ``r = x - anchor``.
    """

    x: np.ndarray
    F: np.ndarray
    Z: np.ndarray
    anchor: np.ndarray | None = None

    def __post_init__(self):
        self.x = _as_points(self.x)
        d = self.x.shape[1]
        if d not in (2, 3):
            raise ContractError("samples must be 2D or 3D")
        self.F = np.asarray(self.F, dtype=float).reshape(-1, d)
        self.Z = np.asarray(self.Z, dtype=float).reshape(-1) if d == 2 else np.asarray(self.Z, dtype=float).reshape(-1, 3)
        if self.anchor is not None:
            self.anchor = np.asarray(self.anchor, dtype=float).reshape(-1, d)
        n = self.x.shape[0]
        if self.F.shape[0] != n or self.Z.shape[0] != n or (self.anchor is not None and self.anchor.shape[0] != n):
            raise ContractError("sample arrays have inconsistent lengths")

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def r(self) -> np.ndarray:
        if self.anchor is None:
            raise ContractError("samples carry no anchors")
        return self.x - self.anchor

    def concat(self, other: "ActionSamples") -> "ActionSamples":
        if (self.anchor is None) != (other.anchor is None):
            raise ContractError("cannot mix anchored and unanchored samples")
        anc = None if self.anchor is None else np.concatenate([self.anchor, other.anchor])
        return ActionSamples(
            np.concatenate([self.x, other.x]), np.concatenate([self.F, other.F]), np.concatenate([self.Z, other.Z]), anc
        )

    def shifted(self, c) -> "ActionSamples":
        c = np.asarray(c, dtype=float)
        return ActionSamples(self.x + c, self.F, self.Z, None if self.anchor is None else self.anchor + c)


@dataclass
class FluxSamples:
    """Sources ``Q`` (positive inward) applied at points ``x``."""

    x: np.ndarray
    Q: np.ndarray
    anchor: np.ndarray | None = None

    def __post_init__(self):
        self.x = _as_points(self.x)
        self.Q = np.asarray(self.Q, dtype=float).reshape(-1)
        if self.anchor is not None:
            self.anchor = np.asarray(self.anchor, dtype=float).reshape(self.x.shape)
        if self.Q.shape[0] != self.x.shape[0]:
            raise ContractError("sample arrays have inconsistent lengths")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def r(self) -> np.ndarray:
        if self.anchor is None:
            raise ContractError("samples carry no anchors")
        return self.x - self.anchor

    def shifted(self, c) -> "FluxSamples":
        c = np.asarray(c, dtype=float)
        return FluxSamples(self.x + c, self.Q, None if self.anchor is None else self.anchor + c)


@dataclass
class ElementSamples:
    """Lattice elements: ``A``, ``l``, ``e_N``, traction ``t``, couple traction ``m``, centroid ``x_c``.

    ``weight`` scales each element's contribution (1 for elements wholly in
    the region).
    """

    A: np.ndarray
    l: np.ndarray
    eN: np.ndarray
    t: np.ndarray
    m: np.ndarray
    xc: np.ndarray
    weight: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float).reshape(-1)
        n = self.A.shape[0]
        self.l = np.asarray(self.l, dtype=float).reshape(n)
        self.eN = np.asarray(self.eN, dtype=float).reshape(n, -1)
        d = self.eN.shape[1] if n else 2
        self.t = np.asarray(self.t, dtype=float).reshape(n, d)
        self.m = np.asarray(self.m, dtype=float).reshape(n) if d == 2 else np.asarray(self.m, dtype=float).reshape(n, 3)
        self.xc = np.asarray(self.xc, dtype=float).reshape(n, d)
        self.weight = np.ones(n) if self.weight is None else np.asarray(self.weight, dtype=float).reshape(n)

    @property
    def dim(self) -> int:
        return self.eN.shape[1] if self.eN.size else 2


@dataclass
class ConduitSamples:
    S: np.ndarray
    h: np.ndarray
    e: np.ndarray
    j: np.ndarray
    weight: np.ndarray | None = None

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=float).reshape(-1)
        n = self.S.shape[0]
        self.h = np.asarray(self.h, dtype=float).reshape(n)
        self.e = np.asarray(self.e, dtype=float).reshape(n, -1) if n else np.zeros((0, 2))
        self.j = np.asarray(self.j, dtype=float).reshape(n)
        self.weight = np.ones(n) if self.weight is None else np.asarray(self.weight, dtype=float).reshape(n)


def _check_volume(V):
    if not V > 0.0:
        raise ContractError(f"region volume must be positive, got {V}")


def _empty(n, dim, what):
    if n == 0:
        warnings.warn(f"{what}: empty sample set, returning zeros", EmptyRegionWarning, stacklevel=3)
        return True
    return False


# ---------------------------------------------------------------------------
# Stress
# ---------------------------------------------------------------------------


def stress_external_exact(s: ActionSamples, V: float) -> np.ndarray:
    """``(1/V) sum x (x) F``."""
    _check_volume(V)
    if _empty(s.n, s.dim, "stress_external_exact"):
        return np.zeros((s.dim, s.dim))
    return s.x.T @ s.F / V


def stress_external_nodal(s: ActionSamples, V: float):
    """``(sigma_nodal, gap)`` with the actions moved to their anchors."""
    _check_volume(V)
    r = s.r
    if _empty(s.n, s.dim, "stress_external_nodal"):
        z = np.zeros((s.dim, s.dim))
        return z, z.copy()
    return s.anchor.T @ s.F / V, r.T @ s.F / V


def stress_internal(el: ElementSamples, V: float) -> np.ndarray:
    """Love-Weber sum ``(1/V) sum A l e_N (x) t``."""
    _check_volume(V)
    w = el.weight * el.A * el.l
    return (w[:, None] * el.eN).T @ el.t / V


# ---------------------------------------------------------------------------
# Couple stress
# ---------------------------------------------------------------------------


def recentring_term(sigma, x_mac) -> np.ndarray:
    """Contribution of the macroscopic point: ``E_jk sigma_ij x_k`` in 2D,
    ``-E_jkl x_k sigma_il`` in 3D."""
    sigma = np.asarray(sigma, dtype=float)
    x = np.asarray(x_mac, dtype=float)
    if sigma.shape == (2, 2):
        return sigma[:, 0] * x[1] - sigma[:, 1] * x[0]
    if sigma.shape == (3, 3):
        return -np.einsum("jkl,k,il->ij", _EPS3, x, sigma)
    raise ContractError(f"sigma must be 2x2 or 3x3, got {sigma.shape}")


def _moment_about_origin(x, F, Z):
    """Per-sample ``Z + E:(x (x) F)``: scalar in 2D, vector in 3D."""
    if x.shape[1] == 2:
        return Z + _cross2(x, F)
    return Z + np.cross(x, F)


def _couple_sum(points, moments):
    if points.shape[1] == 2:
        return points.T @ moments
    return points.T @ moments


def couple_external_exact(s: ActionSamples, V: float, x_mac, sigma_mac) -> np.ndarray:
    _check_volume(V)
    rec = recentring_term(sigma_mac, x_mac)
    if s.dim != rec.shape[0] or (s.dim == 3) != (rec.ndim == 2):
        raise ContractError("sample dimension does not match sigma_mac")
    if _empty(s.n, s.dim, "couple_external_exact"):
        return rec
    return rec + _couple_sum(s.x, _moment_about_origin(s.x, s.F, s.Z)) / V


def couple_external_nodal(s: ActionSamples, V: float, x_mac, sigma_mac):
    """``(mu_nodal, gap)``; the recentring term is carried by the nodal part."""
    _check_volume(V)
    rec = recentring_term(sigma_mac, x_mac)
    r = s.r
    xI = s.anchor
    if _empty(s.n, s.dim, "couple_external_nodal"):
        return rec, np.zeros_like(rec)
    nodal = rec + _couple_sum(xI, _moment_about_origin(xI, s.F, s.Z)) / V
    if s.dim == 2:
        # x_i [Z + E:(x x F)] with x = x_I + r, minus the x_I-only part.
        inner = s.Z + _cross2(xI, s.F)
        gap = r.T @ inner + xI.T @ _cross2(r, s.F) + r.T @ _cross2(r, s.F)
        return nodal, gap / V
    inner = s.Z + np.cross(xI, s.F)
    gap = r.T @ inner + xI.T @ np.cross(r, s.F) + r.T @ np.cross(r, s.F)
    return nodal, gap / V


def couple_internal(el: ElementSamples, V: float, x_mac, sigma_mac) -> np.ndarray:
    """``rec + (1/V) sum A l e_N (x) [m + E:(x_c (x) t)]``."""
    _check_volume(V)
    rec = recentring_term(sigma_mac, x_mac)
    w = el.weight * el.A * el.l
    mom = _moment_about_origin(el.xc, el.t, el.m)
    return rec + (w[:, None] * el.eN).T @ mom / V


# ---------------------------------------------------------------------------
# Flux
# ---------------------------------------------------------------------------


def flux_external_exact(s: FluxSamples, V: float) -> np.ndarray:
    """``-(1/V) sum x Q``."""
    _check_volume(V)
    if _empty(s.n, s.x.shape[1], "flux_external_exact"):
        return np.zeros(s.x.shape[1])
    return -(s.x.T @ s.Q) / V


def flux_external_nodal(s: FluxSamples, V: float):
    _check_volume(V)
    r = s.r
    if _empty(s.n, s.x.shape[1], "flux_external_nodal"):
        z = np.zeros(s.x.shape[1])
        return z, z.copy()
    return -(s.anchor.T @ s.Q) / V, -(r.T @ s.Q) / V


def flux_internal(c: ConduitSamples, V: float) -> np.ndarray:
    """``(1/V) sum S h e j``."""
    _check_volume(V)
    w = c.weight * c.S * c.h * c.j
    return c.e.T @ w / V


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------


@dataclass
class Region:
    ix: int
    iy: int
    lo: np.ndarray
    hi: np.ndarray
    V: float
    x_mac: np.ndarray
    closed_hi: tuple[bool, bool] = (False, False)
    members: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    empty: bool = False

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        ok = np.all(pts >= self.lo, axis=1)
        for a in (0, 1):
            ok &= pts[:, a] <= self.hi[a] if self.closed_hi[a] else pts[:, a] < self.hi[a]
        return ok


def bin_partition(domain: Domain2, nx: int, ny: int) -> list[Region]:
    """Rectangular bins tiling the domain; ``V`` is the bin area, ``x_mac`` its centre."""
    if nx < 1 or ny < 1:
        raise ContractError("bin counts must be at least 1")
    lo = domain.lo
    dx = domain.width / nx
    dy = domain.height / ny
    out = []
    for iy in range(ny):
        for ix in range(nx):
            a = lo + (ix * dx, iy * dy)
            b = lo + ((ix + 1) * dx, (iy + 1) * dy)
            if ix == nx - 1:
                b[0] = lo[0] + domain.width
            if iy == ny - 1:
                b[1] = lo[1] + domain.height
            out.append(
                Region(ix, iy, a, b, float((b[0] - a[0]) * (b[1] - a[1])), 0.5 * (a + b), (ix == nx - 1, iy == ny - 1))
            )
    return out


def column_partition(domain: Domain2, n_cols: int) -> list[Region]:
    return bin_partition(domain, n_cols, 1)


def full_region(domain: Domain2, x_mac=None) -> Region:
    reg = bin_partition(domain, 1, 1)[0]
    if x_mac is not None:
        reg.x_mac = np.asarray(x_mac, dtype=float)
    return reg


# ---------------------------------------------------------------------------
# Mechanical region cut
# ---------------------------------------------------------------------------


def _segment_intervals(p, q, lo, hi):
    """Vectorised Liang-Barsky: parameter interval of each segment inside the closed box."""
    d = q - p
    t0 = np.zeros(p.shape[0])
    t1 = np.ones(p.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        for a in (0, 1):
            da = d[:, a]
            ta = (lo[a] - p[:, a]) / da
            tb = (hi[a] - p[:, a]) / da
            tmin = np.where(da != 0.0, np.minimum(ta, tb), -np.inf)
            tmax = np.where(da != 0.0, np.maximum(ta, tb), np.inf)
            outside = (da == 0.0) & ((p[:, a] < lo[a]) | (p[:, a] > hi[a]))
            tmin = np.where(outside, np.inf, tmin)
            t0 = np.maximum(t0, tmin)
            t1 = np.minimum(t1, tmax)
    return t0, t1


@dataclass
class MechActions:
    """Per-particle external actions with optional relocated application points."""

    x: np.ndarray
    F: np.ndarray
    Z: np.ndarray
    points: np.ndarray | None = None


def relocate_actions(x, F, Z, points):
    """Statically equivalent couple when a nodal action is moved to ``points``."""
    return Z + _cross2(x - points, F)


def mech_region_samples(
    mesh: Mesh,
    actions: MechActions,
    traction: np.ndarray,
    m: np.ndarray,
    region: Region,
) -> tuple[ActionSamples, ElementSamples, np.ndarray]:
    """External samples, weighted element samples and member particles of a region.

    Elements crossing the region boundary transmit ``A t`` at the point where
    the segment ``x_I -> x_J`` crosses it, together with the couple
    ``A [m + E:((x_c - x_f) (x) t)]``. Elements passing through the region
    give an entry/exit pair.
    """
    X = mesh.centers
    inside = region.contains(X)
    members = np.flatnonzero(inside)
    xi, xj = X[mesh.fi], X[mesh.fj]
    t0, t1 = _segment_intervals(xi, xj, region.lo, region.hi)
    in_i = inside[mesh.fi]
    in_j = inside[mesh.fj]
    At = mesh.fA[:, None] * traction
    Am = mesh.fA * m
    d = xj - xi

    w = np.zeros(mesh.n_facets)
    both = in_i & in_j
    w[both] = 1.0
    xs, Fs, Zs, anc = [], [], [], []

    def emit(mask, s, sign, anchor):
        if not np.any(mask):
            return
        xf = xi[mask] + s[mask, None] * d[mask]
        F = sign * At[mask]
        Z = sign * (Am[mask] + _cross2(mesh.fxc[mask] - xf, At[mask]))
        xs.append(xf)
        Fs.append(F)
        Zs.append(Z)
        anc.append(anchor[mask])

    leave = in_i & ~in_j
    w[leave] = np.clip(t1[leave], 0.0, 1.0)
    emit(leave, t1, 1.0, xi)
    enter = ~in_i & in_j
    w[enter] = np.clip(1.0 - t0[enter], 0.0, 1.0)
    emit(enter, t0, -1.0, xj)
    through = ~in_i & ~in_j & (t1 > t0)
    w[through] = t1[through] - t0[through]
    emit(through, t0, -1.0, xi)
    emit(through, t1, 1.0, xi)

    px = actions.x[members] if actions.points is None else actions.points[members]
    Fm = actions.F[members]
    Zm = actions.Z[members]
    if actions.points is not None:
        Zm = relocate_actions(actions.x[members], Fm, Zm, px)
    xs.append(px)
    Fs.append(Fm)
    Zs.append(Zm)
    anc.append(actions.x[members])

    samples = ActionSamples(np.concatenate(xs), np.concatenate(Fs), np.concatenate(Zs), np.concatenate(anc))
    sel = w > 0.0
    elements = ElementSamples(mesh.fA[sel], mesh.fl[sel], mesh.fn[sel], traction[sel], m[sel], mesh.fxc[sel], w[sel])
    return samples, elements, members


def mech_full_samples(mesh: Mesh, actions: MechActions, traction, m) -> tuple[ActionSamples, ElementSamples]:
    """Whole-mesh samples with every action at its node."""
    samples = ActionSamples(actions.x, actions.F, actions.Z, actions.x)
    elements = ElementSamples(mesh.fA, mesh.fl, mesh.fn, traction, m, mesh.fxc)
    return samples, elements


@dataclass
class MacroMech:
    sigma: np.ndarray
    mu: np.ndarray


@dataclass
class MacroFlux:
    a: np.ndarray


def evaluate_mech(
    samples: ActionSamples, elements: ElementSamples, V: float, x_mac, local_frame: bool = True
) -> dict[str, MacroMech]:
    """All three variants; each couple stress uses its own variant's stress for recentring.

    With ``local_frame`` the sums run in coordinates centred on ``x_mac``.
    For a balanced sample set that is an identity, and it avoids cancellation
    between large absolute coordinates.
    """
    if local_frame:
        c = np.asarray(x_mac, dtype=float)
        samples = samples.shifted(-c)
        elements = replace(elements, xc=elements.xc - c)
        x_mac = np.zeros_like(c)
    s_ex = stress_external_exact(samples, V)
    s_nd, _ = stress_external_nodal(samples, V)
    s_in = stress_internal(elements, V)
    return {
        "exact": MacroMech(s_ex, couple_external_exact(samples, V, x_mac, s_ex)),
        "nodal": MacroMech(s_nd, couple_external_nodal(samples, V, x_mac, s_nd)[0]),
        "internal": MacroMech(s_in, couple_internal(elements, V, x_mac, s_in)),
    }


# ---------------------------------------------------------------------------
# Transport region cut
# ---------------------------------------------------------------------------


def flow_region_samples(
    net: TransportNetwork,
    p_sources: np.ndarray,
    j: np.ndarray,
    members_mask: np.ndarray,
) -> tuple[FluxSamples, ConduitSamples, float]:
    """Samples for a union of whole control volumes.

    ``p_sources`` is the nodal source ``Q_P`` (``K p``). Each conduit leaving
    the member set contributes ``Q = -S j_out`` at its face centroid, anchored
    at the member node. Returns ``(samples, internal conduits, V)`` where V is
    the total member control volume.
    """
    members = np.flatnonzero(members_mask)
    V = float(np.sum(net.volumes[members]))
    in_p = members_mask[net.cp]
    in_q = members_mask[net.cq]
    out_p = in_p & ~in_q
    out_q = ~in_p & in_q
    xs = [net.nodes[members], net.face_centroid[out_p], net.face_centroid[out_q]]
    Qs = [p_sources[members], -net.S[out_p] * j[out_p], net.S[out_q] * j[out_q]]
    anc = [net.nodes[members], net.nodes[net.cp[out_p]], net.nodes[net.cq[out_q]]]
    samples = FluxSamples(np.concatenate(xs), np.concatenate(Qs), np.concatenate(anc))
    both = in_p & in_q
    cond = ConduitSamples(net.S[both], net.h[both], net.e[both], j[both])
    return samples, cond, V


def flow_bin_members(net: TransportNetwork, region: Region, exclude: np.ndarray | None = None) -> np.ndarray:
    mask = region.contains(net.nodes)
    if exclude is not None and exclude.size:
        mask[exclude] = False
    return mask


def evaluate_flux(samples: FluxSamples, conduits: ConduitSamples, V: float, x_mac=None) -> dict[str, MacroFlux]:
    """Flux variants; pass ``x_mac`` to sum in a frame centred there."""
    if x_mac is not None:
        samples = samples.shifted(-np.asarray(x_mac, dtype=float))
    return {
        "exact": MacroFlux(flux_external_exact(samples, V)),
        "nodal": MacroFlux(flux_external_nodal(samples, V)[0]),
        "internal": MacroFlux(flux_internal(conduits, V)),
    }


# ---------------------------------------------------------------------------
# Virtual-work probe
# ---------------------------------------------------------------------------


def probe_field(x, alpha, beta):
    """Virtual kinematics ``du = alpha^T x + (x.beta) E^T x``, ``dtheta = x.beta``."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    alpha = np.asarray(alpha, dtype=float).reshape(2, 2)
    beta = np.asarray(beta, dtype=float).reshape(2)
    xb = x @ beta
    du = x @ alpha
    # (E^T x)_l = E_kl x_k = (-x2, x1)
    du = du + xb[:, None] * np.column_stack([-x[:, 1], x[:, 0]])
    return du, xb


@dataclass
class ProbeResult:
    dw_int_micro: float
    dw_ext_micro: float
    dw_int_macro: float
    # sum of absolute per-node virtual work over V; zero when not tracked
    work_magnitude: float = 0.0

    def spread(self) -> float:
        """Disagreement relative to the largest of the three densities."""
        v = np.array([self.dw_int_micro, self.dw_ext_micro, self.dw_int_macro])
        scale = max(np.max(np.abs(v)), np.finfo(float).tiny)
        return float((v.max() - v.min()) / scale)

    def work_spread(self) -> float:
        """Disagreement relative to the uncancelled virtual work.

        Stays meaningful when the densities nearly cancel to zero.
        """
        v = np.array([self.dw_int_micro, self.dw_ext_micro, self.dw_int_macro])
        scale = max(self.work_magnitude, np.max(np.abs(v)), np.finfo(float).tiny)
        return float((v.max() - v.min()) / scale)


def _require_balanced(F, Z, x, tol):
    Fsum = F.sum(axis=0)
    Msum = float(np.sum(Z + _cross2(x, F)))
    scale_f = max(np.abs(F).sum(), np.finfo(float).tiny)
    scale_m = max(np.abs(Z).sum() + np.abs(_cross2(x, F)).sum(), np.finfo(float).tiny)
    if np.linalg.norm(Fsum) > tol * scale_f or abs(Msum) > tol * scale_m:
        raise ContractError(f"region is not balanced: force residual {Fsum}, moment residual {Msum:.3e}")


def virtual_work_probe(
    mesh: Mesh,
    actions: MechActions,
    strain_op: np.ndarray,
    traction_N: np.ndarray,
    traction_M: np.ndarray,
    m: np.ndarray,
    V: float,
    x_mac,
    alpha,
    beta,
    tol: float = 1e-8,
) -> ProbeResult:
    """Three virtual-work densities of a balanced full-mesh solution.

    ``strain_op`` is the facet strain operator ``B`` (nf, 3, 6) so the micro
    strains of the probe come from the same discrete kinematics as the solve.
    """
    _check_volume(V)
    _require_balanced(actions.F, actions.Z, actions.x, tol)
    du, dth = probe_field(actions.x, alpha, beta)
    q = np.column_stack([du, dth])
    qe = np.concatenate([q[mesh.fi], q[mesh.fj]], axis=1)
    ds = np.einsum("fij,fj->fi", strain_op, qe)
    w = mesh.fA * mesh.fl
    dw_int = float(np.sum(w * (traction_N * ds[:, 0] + traction_M * ds[:, 1] + m * ds[:, 2]))) / V
    node_work = np.sum(actions.F * du, axis=1) + actions.Z * dth
    dw_ext = float(np.sum(node_work)) / V
    samples = ActionSamples(actions.x, actions.F, actions.Z, actions.x)
    sig, _ = stress_external_nodal(samples, V)
    mu, _ = couple_external_nodal(samples, V, x_mac, sig)
    alpha = np.asarray(alpha, dtype=float).reshape(2, 2)
    beta = np.asarray(beta, dtype=float).reshape(2)
    xm = np.asarray(x_mac, dtype=float)
    # alpha_il sigma_il + E_kl xmac_k beta_i sigma_il + beta_i mu_i
    Ex = np.array([-xm[1], xm[0]])
    macro = float(np.sum(alpha * sig) + beta @ sig @ Ex + beta @ mu)
    return ProbeResult(dw_int, dw_ext, macro, float(np.abs(node_work).sum()) / V)


def virtual_work_probe_flow(net: TransportNetwork, Q: np.ndarray, j: np.ndarray, V: float, pi, tol: float = 1e-8) -> ProbeResult:
    """Transport twin with virtual pressure ``dp = x.pi``."""
    _check_volume(V)
    if abs(Q.sum()) > tol * max(np.abs(Q).sum(), np.finfo(float).tiny):
        raise ContractError(f"network sources are not balanced: residual {Q.sum():.3e}")
    pi = np.asarray(pi, dtype=float).reshape(2)
    dp = net.nodes @ pi
    dg = (dp[net.cq] - dp[net.cp]) / net.h
    dw_int = float(np.sum(net.S * net.h * j * dg)) / V
    dw_ext = -float(np.sum(Q * dp)) / V
    a, _ = flux_external_nodal(FluxSamples(net.nodes, Q, net.nodes), V)
    return ProbeResult(dw_int, dw_ext, float(a @ pi), float(np.abs(Q * dp).sum()) / V)
