"""Discrete 2D Cosserat lattice: facet kinematics, elastic law, assembly, statics.

Each particle carries three dofs ``(u1, u2, theta)`` stored at ``3*I + k``.
Facet strains are measured at the facet centroid::

    eps_a = [u_J - u_I - E.(theta_J c_J - theta_I c_I)] . e_a / l
    kappa = (theta_J - theta_I) / l

with the 2D permutation ``E_12 = +1`` so that ``E.c = (c2, -c1)`` and
``E:(a x b) = a1 b2 - a2 b1``. Extra dofs (e.g. a load master node) may be
appended after the particle dofs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _geometry as geo
from .errors import ContractError, ParameterError
from .linsys import ConstraintSet, TripletMatrix, eliminate_constraints, finalize, solve
from .mesh import Mesh

DOFS_PER_NODE = 3


def cross2(a, b):
    """``E:(a x b) = a1 b2 - a2 b1`` row-wise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def perm_dot(c):
    """``E.c = (c2, -c1)`` row-wise."""
    c = np.asarray(c, dtype=float)
    return np.stack([c[..., 1], -c[..., 0]], axis=-1)


@dataclass(frozen=True)
class MaterialMech:
    E0: float
    alpha: float = 0.3
    beta: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        if not self.E0 > 0.0:
            raise ParameterError(f"E0 must be positive, got {self.E0}")
        if self.alpha < 0.0 or self.beta < 0.0 or self.rho < 0.0:
            raise ParameterError("alpha, beta and rho must be non-negative")


@dataclass
class FacetStates:
    eps_N: np.ndarray
    eps_M: np.ndarray
    kappa: np.ndarray
    t_N: np.ndarray
    t_M: np.ndarray
    m: np.ndarray
    traction: np.ndarray  # t_N e_N + t_M e_M, shape (nf, 2)


@dataclass
class NodalActions:
    """External actions per particle, including reactions and tie forces."""

    x: np.ndarray
    F: np.ndarray
    Z: np.ndarray

    def resultant(self) -> tuple[np.ndarray, float]:
        return self.F.sum(axis=0), float(np.sum(self.Z + cross2(self.x, self.F)))


@dataclass
class InertiaData:
    mass: np.ndarray
    J: np.ndarray
    coupling: np.ndarray  # M_u_theta, shape (n, 2)

    def block(self, k: int) -> np.ndarray:
        m, (s1, s2), j = self.mass[k], self.coupling[k], self.J[k]
        return np.array([[m, 0.0, s1], [0.0, m, s2], [s1, s2, j]])


@dataclass
class StaticSolution:
    u: np.ndarray  # full dof vector including extra dofs
    dofs: np.ndarray  # (n, 3) particle view
    actions: NodalActions
    states: FacetStates
    reactions: np.ndarray
    K: sp.csr_matrix
    f: np.ndarray


# ---------------------------------------------------------------------------
# Facet level
# ---------------------------------------------------------------------------


def _frames(normal):
    n = np.asarray(normal, dtype=float).reshape(-1, 2)
    t = np.column_stack([-n[:, 1], n[:, 0]])
    return n, t


def strain_operator(length, normal, arm_i, arm_j) -> np.ndarray:
    """``B`` with ``(eps_N, eps_M, kappa) = B @ [u_I, theta_I, u_J, theta_J]``; shape (nf, 3, 6)."""
    l = np.asarray(length, dtype=float).reshape(-1)
    n, t = _frames(normal)
    ci = np.asarray(arm_i, dtype=float).reshape(-1, 2)
    cj = np.asarray(arm_j, dtype=float).reshape(-1, 2)
    Eci = perm_dot(ci)
    Ecj = perm_dot(cj)
    nf = l.shape[0]
    B = np.zeros((nf, 3, 6))
    for row, e in ((0, n), (1, t)):
        B[:, row, 0:2] = -e
        B[:, row, 2] = np.sum(Eci * e, axis=1)
        B[:, row, 3:5] = e
        B[:, row, 5] = -np.sum(Ecj * e, axis=1)
        B[:, row, :] /= l[:, None]
    B[:, 2, 2] = -1.0 / l
    B[:, 2, 5] = 1.0 / l
    return B


def facet_kinematics(length, normal, arm_i, arm_j, dofs_i, dofs_j):
    """``(eps_N, eps_M, kappa)`` for one or many facets; dofs are ``(u1, u2, theta)``."""
    B = strain_operator(length, normal, arm_i, arm_j)
    q = np.concatenate([np.asarray(dofs_i, dtype=float).reshape(-1, 3), np.asarray(dofs_j, dtype=float).reshape(-1, 3)], axis=1)
    s = np.einsum("fij,fj->fi", B, q)
    if s.shape[0] == 1 and np.ndim(length) == 0:
        return float(s[0, 0]), float(s[0, 1]), float(s[0, 2])
    return s[:, 0], s[:, 1], s[:, 2]


def constitutive_diag(material: MaterialMech, area) -> np.ndarray:
    A = np.asarray(area, dtype=float).reshape(-1)
    D = np.empty((A.shape[0], 3))
    D[:, 0] = material.E0
    D[:, 1] = material.alpha * material.E0
    D[:, 2] = material.beta * material.E0 * A * A / 12.0
    return D


def facet_forces(eps_N, eps_M, kappa, material: MaterialMech, area):
    """``t_N = E0 eps_N``, ``t_M = alpha E0 eps_M``, ``m = beta E0 A^2/12 kappa``."""
    tN = material.E0 * np.asarray(eps_N, dtype=float)
    tM = material.alpha * material.E0 * np.asarray(eps_M, dtype=float)
    A = np.asarray(area, dtype=float)
    m = material.beta * material.E0 * A * A / 12.0 * np.asarray(kappa, dtype=float)
    if np.ndim(tN) == 0:
        return float(tN), float(tM), float(m)
    return tN, tM, m


def integrated_couple_at_I(area, length, normal, arm_i, arm_j, dofs_i, dofs_j, material: MaterialMech):
    """Moment about ``x_I`` of the tractions integrated along the facet.

    The strain varies linearly along the facet coordinate ``y`` because the
    rotation terms use the arm ``c + y e_M``. Integrating the polynomial
    exactly gives the couple without any bending parameter.
    """
    A = np.asarray(area, dtype=float).reshape(-1)
    l = np.asarray(length, dtype=float).reshape(-1)
    n, t = _frames(normal)
    ci = np.asarray(arm_i, dtype=float).reshape(-1, 2)
    qi = np.asarray(dofs_i, dtype=float).reshape(-1, 3)
    qj = np.asarray(dofs_j, dtype=float).reshape(-1, 3)
    eN0, eM0, _ = facet_kinematics(l, n, ci, np.asarray(arm_j, dtype=float).reshape(-1, 2), qi, qj)
    eN0 = np.atleast_1d(eN0)
    eM0 = np.atleast_1d(eM0)
    dtheta = qj[:, 2] - qi[:, 2]
    # d eps_a / dy = -(dtheta / l) (E.e_M) . e_a
    Ee = perm_dot(t)
    total = np.zeros(A.shape[0])
    for e, eps0, stiff in ((n, eN0, material.E0), (t, eM0, material.alpha * material.E0)):
        slope = -dtheta / l * np.sum(Ee * e, axis=1)
        a0 = stiff * eps0
        b0 = stiff * slope
        p = cross2(ci, e)
        q = cross2(t, e)
        total += A * a0 * p + b0 * q * A**3 / 12.0
    return total if total.shape[0] > 1 or np.ndim(area) > 0 else float(total[0])


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def facet_dofs(mesh: Mesh) -> np.ndarray:
    i3 = DOFS_PER_NODE * mesh.fi
    j3 = DOFS_PER_NODE * mesh.fj
    return np.column_stack([i3, i3 + 1, i3 + 2, j3, j3 + 1, j3 + 2])


def element_stiffness(mesh: Mesh, material: MaterialMech) -> np.ndarray:
    B = strain_operator(mesh.fl, mesh.fn, mesh.arm_i, mesh.arm_j)
    D = constitutive_diag(material, mesh.fA)
    w = (mesh.fA * mesh.fl)[:, None, None]
    return w * np.einsum("fki,fk,fkj->fij", B, D, B)


def assemble_stiffness(mesh: Mesh, material: MaterialMech, n_extra: int = 0) -> TripletMatrix:
    n = DOFS_PER_NODE * mesh.n_particles + n_extra
    tm = TripletMatrix(n, n)
    if mesh.n_facets:
        tm.add_blocks(facet_dofs(mesh), element_stiffness(mesh, material))
    return tm


def assemble_inertia(mesh: Mesh, material: MaterialMech) -> InertiaData:
    """Rigid-body inertia of each power cell about its particle centre."""
    rho = material.rho
    first = (mesh.cell_centroid - mesh.centers) * mesh.cell_area[:, None]
    coupling = rho * np.column_stack([-first[:, 1], first[:, 0]])
    return InertiaData(mass=rho * mesh.cell_area, J=rho * mesh.cell_polar, coupling=coupling)


def cell_inertia(polygon, node, rho: float = 1.0) -> np.ndarray:
    """3x3 inertia block of a polygon about ``node`` (used as an oracle helper)."""
    local = [(x - node[0], y - node[1]) for x, y in polygon]
    a, sx, sy, jo = geo.polygon_moments(local)
    return rho * np.array([[a, 0.0, -sy], [0.0, a, sx], [-sy, sx, jo]])


def mass_matrix(inertia: InertiaData, n_extra: int = 0) -> sp.csr_matrix:
    n = inertia.mass.shape[0]
    tm = TripletMatrix(DOFS_PER_NODE * n + n_extra)
    base = DOFS_PER_NODE * np.arange(n)
    dofs = np.column_stack([base, base + 1, base + 2])
    blocks = np.zeros((n, 3, 3))
    blocks[:, 0, 0] = blocks[:, 1, 1] = inertia.mass
    blocks[:, 0, 2] = blocks[:, 2, 0] = inertia.coupling[:, 0]
    blocks[:, 1, 2] = blocks[:, 2, 1] = inertia.coupling[:, 1]
    blocks[:, 2, 2] = inertia.J
    tm.add_blocks(dofs, blocks)
    return finalize(tm)


def rigid_modes(centers: np.ndarray, n_extra: int = 0) -> np.ndarray:
    """Columns: x translation, y translation, rotation ``u = (-y, x), theta = 1``."""
    n = centers.shape[0]
    V = np.zeros((DOFS_PER_NODE * n + n_extra, 3))
    V[0 : 3 * n : 3, 0] = 1.0
    V[1 : 3 * n : 3, 1] = 1.0
    V[0 : 3 * n : 3, 2] = -centers[:, 1]
    V[1 : 3 * n : 3, 2] = centers[:, 0]
    V[2 : 3 * n : 3, 2] = 1.0
    return V


# ---------------------------------------------------------------------------
# States and actions
# ---------------------------------------------------------------------------


def facet_states(mesh: Mesh, material: MaterialMech, u: np.ndarray) -> FacetStates:
    q = np.asarray(u, dtype=float)[: DOFS_PER_NODE * mesh.n_particles].reshape(-1, 3)
    B = strain_operator(mesh.fl, mesh.fn, mesh.arm_i, mesh.arm_j)
    qe = np.concatenate([q[mesh.fi], q[mesh.fj]], axis=1)
    s = np.einsum("fij,fj->fi", B, qe)
    tN, tM, m = facet_forces(s[:, 0], s[:, 1], s[:, 2], material, mesh.fA)
    tN, tM, m = np.atleast_1d(tN), np.atleast_1d(tM), np.atleast_1d(m)
    traction = tN[:, None] * mesh.fn + tM[:, None] * mesh.ft
    return FacetStates(s[:, 0], s[:, 1], s[:, 2], tN, tM, m, traction)


def internal_resultants(mesh: Mesh, states: FacetStates):
    """Per-particle sums ``sum A t`` and ``sum A [m + E:(c x t)]`` with the J side sign-flipped."""
    n = mesh.n_particles
    At = mesh.fA[:, None] * states.traction
    Fi = np.zeros((n, 2))
    np.add.at(Fi, mesh.fi, At)
    np.add.at(Fi, mesh.fj, -At)
    Zi = np.zeros(n)
    np.add.at(Zi, mesh.fi, mesh.fA * states.m + cross2(mesh.arm_i, At))
    np.add.at(Zi, mesh.fj, -(mesh.fA * states.m + cross2(mesh.arm_j, At)))
    return Fi, Zi


def nodal_actions(mesh: Mesh, K, u: np.ndarray) -> NodalActions:
    """External actions per particle from ``K u`` (applied loads plus reactions)."""
    r = (K @ u)[: DOFS_PER_NODE * mesh.n_particles].reshape(-1, 3)
    return NodalActions(x=mesh.centers.copy(), F=r[:, :2].copy(), Z=r[:, 2].copy())


def solve_static(
    mesh: Mesh,
    material: MaterialMech,
    constraints: ConstraintSet,
    loads: np.ndarray,
    n_extra: int = 0,
    K=None,
) -> StaticSolution:
    n = DOFS_PER_NODE * mesh.n_particles + n_extra
    f = np.asarray(loads, dtype=float)
    if f.shape != (n,):
        raise ContractError(f"load vector must have {n} entries, got {f.shape}")
    if K is None:
        K = finalize(assemble_stiffness(mesh, material, n_extra))
    red = eliminate_constraints(K, f, constraints)
    uh = solve(red.K, red.f, symmetric=True)
    u = red.recover(uh)
    r = K @ u - f
    return StaticSolution(
        u=u,
        dofs=u[: DOFS_PER_NODE * mesh.n_particles].reshape(-1, 3).copy(),
        actions=nodal_actions(mesh, K, u),
        states=facet_states(mesh, material, u),
        reactions=r,
        K=K,
        f=f,
    )


# ---------------------------------------------------------------------------
# Cantilever set-up
# ---------------------------------------------------------------------------


@dataclass
class CantileverSetup:
    constraints: ConstraintSet
    loads: np.ndarray
    n_extra: int
    master_dof: int
    fixed: np.ndarray
    tip: np.ndarray
    fixed_points: np.ndarray  # boundary-facet centroids on x = x0
    tip_points: np.ndarray  # boundary-facet centroids on x = x0 + S

    def action_points(self, mesh: Mesh) -> np.ndarray:
        """Particle centres, with clamped and loaded particles moved to their edge facets."""
        pts = mesh.centers.copy()
        pts[self.fixed] = self.fixed_points
        pts[self.tip] = self.tip_points
        return pts


def side_facet_points(mesh: Mesh, nodes, side: int) -> np.ndarray:
    out = np.empty((len(nodes), 2))
    for k, node in enumerate(nodes):
        sel = np.flatnonzero((mesh.bnode == node) & (mesh.bside == side))
        if sel.size == 0:
            raise ContractError(f"particle {node} has no facet on side {side}")
        out[k] = mesh.bxc[sel[np.argmax(mesh.bA[sel])]]
    return out


def cantilever_setup(mesh: Mesh, P: float) -> CantileverSetup:
    """Clamp particles touching the left edge and load the right edge through a master dof.

    Each right-edge particle's vertical displacement is taken at its boundary
    facet centroid ``x_f`` (rigid-particle kinematics ``u2 + theta (x_f1 - x_I1)``)
    and tied to the master, which carries the downward load ``P``. All tie
    points then lie on the loaded edge, so the tie does not restrain the
    rotation of the end section.
    """
    n = mesh.n_particles
    fixed = mesh.boundary_particles(geo.SIDE_LEFT)
    tip = mesh.boundary_particles(geo.SIDE_RIGHT)
    if fixed.size == 0 or tip.size == 0:
        raise ContractError("cantilever needs particles on both the left and right edges")
    if np.intersect1d(fixed, tip).size:
        raise ContractError("a particle touches both the clamped and loaded edges")
    fixed_pts = side_facet_points(mesh, fixed, geo.SIDE_LEFT)
    tip_pts = side_facet_points(mesh, tip, geo.SIDE_RIGHT)
    master = DOFS_PER_NODE * n
    cons = ConstraintSet(master + 1)
    for k in fixed:
        cons.add_dirichlet_many([3 * k, 3 * k + 1, 3 * k + 2], 0.0)
    for k, xf in zip(tip, tip_pts):
        arm = xf[0] - mesh.centers[k, 0]
        cons.add_tie(3 * k + 1, [master, 3 * k + 2], [1.0, -arm])
    f = np.zeros(master + 1)
    f[master] = -P
    return CantileverSetup(cons, f, 1, master, fixed, tip, fixed_pts, tip_pts)
