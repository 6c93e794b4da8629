"""Particle assemblies, power tessellation and transport networks.

The pipeline is ``sample_fuller -> place_particles -> power_tessellate ->
build_transport_network``. Power cells are built by clipping the domain
rectangle with the radical half-planes of each particle's neighbours in the
regular (weighted Delaunay) triangulation, which is read off the lower convex
hull of the lifted points ``(x, y, x^2 + y^2 - r^2)``.

All geometry is computed in coordinates local to the particle centre and
only shifted back when stored, which keeps short facets accurate.
"""

from __future__ import annotations

import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from . import _geometry as geo
from .errors import ContractError, GeometryError, ParameterError, SaturationError

log = logging.getLogger(__name__)

EPS_GEOM = 1e-12


@dataclass(frozen=True)
class Domain2:
    width: float
    height: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.width > 0.0 and self.height > 0.0):
            raise ParameterError(f"domain must have positive size, got {self.width} x {self.height}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.origin, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.array([self.origin[0] + self.width, self.origin[1] + self.height])

    @property
    def size(self) -> float:
        return max(self.width, self.height)


# ---------------------------------------------------------------------------
# Grading and packing
# ---------------------------------------------------------------------------


def fuller_cdf(d, d_min: float, d_max: float, exponent_q: float = 0.5):
    """Passing fraction of the Fuller curve ``(d/d_max)^q`` truncated to ``[d_min, d_max]``."""
    d = np.clip(np.asarray(d, dtype=float), d_min, d_max)
    if d_min == d_max:
        return np.where(d >= d_max, 1.0, 0.0)
    lo = (d_min / d_max) ** exponent_q
    return ((d / d_max) ** exponent_q - lo) / (1.0 - lo)


def fuller_inverse_cdf(u, d_min: float, d_max: float, exponent_q: float = 0.5):
    u = np.asarray(u, dtype=float)
    lo = (d_min / d_max) ** exponent_q
    return d_max * (u * (1.0 - lo) + lo) ** (1.0 / exponent_q)


def _check_grading(d_min, d_max, exponent_q, target_fill):
    if not (0.0 < d_min <= d_max):
        raise ParameterError(f"need 0 < d_min <= d_max, got d_min={d_min}, d_max={d_max}")
    if not exponent_q > 0.0:
        raise ParameterError(f"Fuller exponent must be positive, got {exponent_q}")
    if not (0.0 < target_fill < 1.0):
        raise ParameterError(f"target_fill must lie in (0, 1), got {target_fill}")


def sample_fuller(
    d_min: float,
    d_max: float,
    exponent_q: float = 0.5,
    target_fill: float = 0.5,
    seed: int = 0,
    domain_area: float = 1.0,
) -> np.ndarray:
    """Draw diameters from the truncated Fuller curve until the circles cover
    ``target_fill * domain_area``. The returned array is in draw order."""
    _check_grading(d_min, d_max, exponent_q, target_fill)
    if not domain_area > 0.0:
        raise ParameterError(f"domain_area must be positive, got {domain_area}")
    rng = np.random.default_rng(seed)
    target = target_fill * domain_area
    out = []
    covered = 0.0
    mean_area = 0.25 * math.pi * float(np.mean(fuller_inverse_cdf(np.linspace(0, 1, 65), d_min, d_max, exponent_q) ** 2))
    while covered < target:
        chunk = max(16, int(1.1 * (target - covered) / mean_area) + 1)
        d = fuller_inverse_cdf(rng.random(chunk), d_min, d_max, exponent_q)
        if d_min == d_max:
            d[:] = d_max
        areas = 0.25 * math.pi * d * d
        csum = covered + np.cumsum(areas)
        stop = int(np.searchsorted(csum, target))
        if stop < chunk:
            out.append(d[: stop + 1])
            covered = float(csum[stop])
            break
        out.append(d)
        covered = float(csum[-1])
    return np.concatenate(out)


def place_particles(
    domain: Domain2,
    diameters,
    seed: int = 0,
    max_attempts: int = 20000,
) -> np.ndarray:
    """Random sequential addition of non-overlapping circles, largest first.

    Returns the ``(n, 2)`` array of centres. Raises :class:`SaturationError`
    when a particle cannot be placed within ``max_attempts`` trials.
    """
    d = np.asarray(diameters, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise ContractError("diameters must be a non-empty 1-D sequence")
    if np.any(np.diff(d) > 0.0):
        raise ContractError("diameters must be sorted in descending order")
    if d[0] >= min(domain.width, domain.height):
        raise ParameterError("largest particle does not fit in the domain")
    rng = np.random.default_rng(seed)
    radii = 0.5 * d
    cs = 2.0 * radii[0]
    x0, y0 = domain.origin
    grid: dict[tuple[int, int], list[int]] = {}
    px: list[float] = []
    py: list[float] = []
    pr: list[float] = []
    placed_area = 0.0
    for k, r in enumerate(radii):
        lo_x, hi_x = x0 + r, x0 + domain.width - r
        lo_y, hi_y = y0 + r, y0 + domain.height - r
        ok = False
        batch = 64
        tried = 0
        while tried < max_attempts and not ok:
            nb = min(batch, max_attempts - tried)
            cand = rng.random((nb, 2))
            tried += nb
            for u, v in cand:
                cx = lo_x + u * (hi_x - lo_x)
                cy = lo_y + v * (hi_y - lo_y)
                gx = int((cx - x0) // cs)
                gy = int((cy - y0) // cs)
                hit = False
                for ix in (gx - 1, gx, gx + 1):
                    for iy in (gy - 1, gy, gy + 1):
                        for j in grid.get((ix, iy), ()):
                            dx = cx - px[j]
                            dy = cy - py[j]
                            rr = r + pr[j]
                            if dx * dx + dy * dy < rr * rr:
                                hit = True
                                break
                        if hit:
                            break
                    if hit:
                        break
                if not hit:
                    grid.setdefault((gx, gy), []).append(k)
                    px.append(cx)
                    py.append(cy)
                    pr.append(r)
                    placed_area += math.pi * r * r
                    ok = True
                    break
            batch = min(4 * batch, 4096)
        if not ok:
            raise SaturationError(
                f"could not place particle {k} of diameter {2 * r:.6g} after {max_attempts} attempts",
                achieved_fill=placed_area / domain.area,
                placed=k,
            )
    return np.column_stack([px, py])


# ---------------------------------------------------------------------------
# Mesh containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Particle:
    center: np.ndarray
    radius: float
    cell: np.ndarray
    cell_area: float
    cell_centroid: np.ndarray


@dataclass(frozen=True)
class MechFacet:
    node_i: int
    node_j: int
    area_A: float
    length_l: float
    normal_eN: np.ndarray
    tangent_eM: np.ndarray
    centroid_xc: np.ndarray
    arm_cI: np.ndarray
    arm_cJ: np.ndarray


@dataclass(frozen=True)
class Conduit:
    node_p: int
    node_q: int
    area_S: float
    length_h: float
    normal_e: np.ndarray
    face_centroid: np.ndarray


@dataclass
class Mesh:
    """Power-tessellated assembly. Facet data is stored as parallel arrays."""

    domain: Domain2
    centers: np.ndarray
    radii: np.ndarray
    cells: list
    cell_area: np.ndarray
    cell_centroid: np.ndarray
    cell_polar: np.ndarray
    fi: np.ndarray
    fj: np.ndarray
    fA: np.ndarray
    fl: np.ndarray
    fn: np.ndarray
    fxc: np.ndarray
    fp0: np.ndarray
    fp1: np.ndarray
    bnode: np.ndarray
    bside: np.ndarray
    bA: np.ndarray
    bxc: np.ndarray
    # Facet endpoints relative to the facet midpoint (exact for short facets).
    fv0: np.ndarray | None = None
    fv1: np.ndarray | None = None
    dropped_facets: int = 0
    # Vertex keys of facet endpoints, used to build the dual network.
    _fkeys: list | None = field(default=None, repr=False)
    _bkeys: list | None = field(default=None, repr=False)

    @property
    def n_particles(self) -> int:
        return self.centers.shape[0]

    @property
    def n_facets(self) -> int:
        return self.fi.shape[0]

    @property
    def ft(self) -> np.ndarray:
        return np.column_stack([-self.fn[:, 1], self.fn[:, 0]])

    @property
    def arm_i(self) -> np.ndarray:
        return self.fxc - self.centers[self.fi]

    @property
    def arm_j(self) -> np.ndarray:
        return self.fxc - self.centers[self.fj]

    @property
    def bnormal(self) -> np.ndarray:
        return np.array([geo.SIDE_NORMALS[int(s)] for s in self.bside]).reshape(-1, 2)

    def particle(self, k: int) -> Particle:
        return Particle(
            center=self.centers[k].copy(),
            radius=float(self.radii[k]),
            cell=self.cells[k],
            cell_area=float(self.cell_area[k]),
            cell_centroid=self.cell_centroid[k].copy(),
        )

    def facet(self, k: int) -> MechFacet:
        n = self.fn[k]
        return MechFacet(
            node_i=int(self.fi[k]),
            node_j=int(self.fj[k]),
            area_A=float(self.fA[k]),
            length_l=float(self.fl[k]),
            normal_eN=n.copy(),
            tangent_eM=np.array([-n[1], n[0]]),
            centroid_xc=self.fxc[k].copy(),
            arm_cI=self.fxc[k] - self.centers[self.fi[k]],
            arm_cJ=self.fxc[k] - self.centers[self.fj[k]],
        )

    def boundary_particles(self, side: int | None = None) -> np.ndarray:
        """Particles whose cell has an edge on the domain boundary (optionally one side)."""
        mask = np.ones(self.bnode.shape[0], dtype=bool) if side is None else self.bside == side
        return np.unique(self.bnode[mask])


@dataclass
class TransportNetwork:
    kind: str
    nodes: np.ndarray
    volumes: np.ndarray
    cp: np.ndarray
    cq: np.ndarray
    S: np.ndarray
    h: np.ndarray
    e: np.ndarray
    face_centroid: np.ndarray
    boundary_nodes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_conduits(self) -> int:
        return self.cp.shape[0]

    def conduit(self, k: int) -> Conduit:
        return Conduit(
            node_p=int(self.cp[k]),
            node_q=int(self.cq[k]),
            area_S=float(self.S[k]),
            length_h=float(self.h[k]),
            normal_e=self.e[k].copy(),
            face_centroid=self.face_centroid[k].copy(),
        )

    def face_direction(self) -> np.ndarray:
        return np.column_stack([-self.e[:, 1], self.e[:, 0]])


# ---------------------------------------------------------------------------
# Tessellation
# ---------------------------------------------------------------------------


def regular_triangulation(centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Triangles of the regular triangulation as an ``(m, 3)`` index array (CCW).

    Returns an empty array when the lifted hull is degenerate (fewer than four
    points or all collinear).
    """
    n = centers.shape[0]
    if n < 4:
        return np.zeros((0, 3), dtype=int)
    c = centers - centers.mean(axis=0)
    scale = float(np.max(np.abs(c))) or 1.0
    c = c / scale
    z = np.sum(c * c, axis=1) - (radii / scale) ** 2
    try:
        hull = ConvexHull(np.column_stack([c, z]))
    except QhullError:
        return np.zeros((0, 3), dtype=int)
    lower = hull.equations[:, 2] < -1e-12
    tri = hull.simplices[lower]
    if tri.size:
        a, b, cc = c[tri[:, 0]], c[tri[:, 1]], c[tri[:, 2]]
        cross = (b[:, 0] - a[:, 0]) * (cc[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (cc[:, 0] - a[:, 0])
        flip = cross < 0.0
        tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def _neighbour_lists(centers, radii):
    n = centers.shape[0]
    tri = regular_triangulation(centers, radii)
    if tri.shape[0] == 0:
        return [[j for j in range(n) if j != i] for i in range(n)]
    used = np.unique(tri)
    if used.size != n:
        missing = sorted(set(range(n)) - set(used.tolist()))
        raise GeometryError(f"particles {missing[:5]} have empty power cells; circles overlap")
    edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges.tolist():
        nbrs[a].append(b)
        nbrs[b].append(a)
    return nbrs


# Facets shorter than this fraction of d_min get exactly computed endpoints.
SHORT_FACET = 1e-1


def _line_exact(centers, radii, lo, hi, i: int, k: int):
    """``(a, b, c)`` with ``a x + b y = c`` in coordinates relative to particle ``i``:
    the radical line with particle ``k``, or a domain wall for ``k < 0``."""
    cx, cy = Fraction(centers[i, 0]), Fraction(centers[i, 1])
    if k == geo.SIDE_BOTTOM:
        return Fraction(0), Fraction(1), Fraction(lo[1]) - cy
    if k == geo.SIDE_TOP:
        return Fraction(0), Fraction(1), Fraction(hi[1]) - cy
    if k == geo.SIDE_LEFT:
        return Fraction(1), Fraction(0), Fraction(lo[0]) - cx
    if k == geo.SIDE_RIGHT:
        return Fraction(1), Fraction(0), Fraction(hi[0]) - cx
    dx = Fraction(centers[k, 0]) - cx
    dy = Fraction(centers[k, 1]) - cy
    return 2 * dx, 2 * dy, dx * dx + dy * dy + Fraction(radii[i]) ** 2 - Fraction(radii[k]) ** 2


def _exact_facet_offsets(centers, radii, lo, hi, i, j, o0, o1):
    """Endpoints of facet ``i-j`` relative to its midpoint, from exact rational
    intersections with the lines of ``o0`` and ``o1``. Keeps the measured facet
    direction free of rounding in the particle-size frame."""
    a, b, c = _line_exact(centers, radii, lo, hi, i, j)
    pts = []
    for o in (o0, o1):
        a2, b2, c2 = _line_exact(centers, radii, lo, hi, i, o)
        det = a * b2 - b * a2
        if det == 0:
            raise GeometryError(f"facet {i}-{j} endpoint lines are parallel")
        pts.append(((c * b2 - b * c2) / det, (a * c2 - c * a2) / det))
    mx = (pts[0][0] + pts[1][0]) / 2
    my = (pts[0][1] + pts[1][1]) / 2
    return tuple((float(x - mx), float(y - my)) for x, y in pts)


def power_tessellate(centers, radii, domain: Domain2, eps_geom: float = EPS_GEOM) -> Mesh:
    """Power cells clipped to ``domain`` plus their facets.

    Facets shorter than ``eps_geom * d_min`` are dropped and counted in
    ``Mesh.dropped_facets``.
    """
    centers = np.ascontiguousarray(centers, dtype=float).reshape(-1, 2)
    radii = np.ascontiguousarray(radii, dtype=float).reshape(-1)
    n = centers.shape[0]
    if n == 0 or radii.shape[0] != n:
        raise ContractError("centers and radii must be non-empty and of equal length")
    if np.any(radii <= 0.0):
        raise ContractError("all radii must be positive")
    lo, hi = domain.lo, domain.hi
    if np.any(centers - radii[:, None] < lo - 1e-12 * domain.size) or np.any(
        centers + radii[:, None] > hi + 1e-12 * domain.size
    ):
        raise ContractError("particles must lie inside the domain")
    nbrs = _neighbour_lists(centers, radii)
    cut_len = eps_geom * 2.0 * float(radii.min())

    cells_local = []
    for i in range(n):
        xi, yi = centers[i]
        ri2 = radii[i] ** 2
        verts, labels = geo.box_polygon(lo[0] - xi, lo[1] - yi, hi[0] - xi, hi[1] - yi)
        for j in nbrs[i]:
            dx = centers[j, 0] - xi
            dy = centers[j, 1] - yi
            l = math.hypot(dx, dy)
            if l == 0.0:
                raise GeometryError(f"particles {i} and {j} share a centre")
            s = (l * l + ri2 - radii[j] ** 2) / (2.0 * l)
            verts, labels = geo.clip_halfplane(verts, labels, dx / l, dy / l, s, j)
            if not verts:
                raise GeometryError(f"power cell of particle {i} is empty")
        cells_local.append((verts, labels))

    # Cell integrals about the governing node.
    cell_area = np.empty(n)
    cell_centroid = np.empty((n, 2))
    cell_polar = np.empty(n)
    cells = []
    for i, (verts, _) in enumerate(cells_local):
        a, sx, sy, jo = geo.polygon_moments(verts)
        cell_area[i] = a
        cell_centroid[i] = centers[i] + (sx / a, sy / a)
        cell_polar[i] = jo
        cells.append(np.asarray(verts) + centers[i])

    # Facets: take each pair from the lower-index cell when it has the edge.
    found: dict[tuple[int, int], tuple] = {}
    bf = []
    for i, (verts, labels) in enumerate(cells_local):
        m = len(verts)
        for k in range(m):
            lab = labels[k]
            v0 = verts[k]
            v1 = verts[(k + 1) % m]
            key0 = frozenset((i, labels[k - 1], lab))
            key1 = frozenset((i, lab, labels[(k + 1) % m]))
            if lab < 0:
                bf.append((i, lab, v0, v1, key0, key1))
                continue
            pair = (min(i, lab), max(i, lab))
            if pair in found and found[pair][0] == pair[0]:
                continue
            found[pair] = (i, lab, v0, v1, key0, key1)

    rows = []
    dropped = 0
    for pair in sorted(found):
        i, j, v0, v1, key0, key1 = found[pair]
        if i != pair[0]:
            # Seen only from the higher-index side: flip orientation.
            i, j = j, i
            ox, oy = centers[j] - centers[i]
            v0, v1 = (v1[0] + ox, v1[1] + oy), (v0[0] + ox, v0[1] + oy)
            key0, key1 = key1, key0
        dx, dy = centers[j] - centers[i]
        l = math.hypot(dx, dy)
        nx, ny = dx / l, dy / l
        s = (l * l + radii[i] ** 2 - radii[j] ** 2) / (2.0 * l)
        mx, my = -ny, nx
        t0 = mx * v0[0] + my * v0[1]
        t1 = mx * v1[0] + my * v1[1]
        A = t1 - t0
        if A < cut_len:
            dropped += 1
            log.debug("dropped degenerate facet %d-%d, length %.3g", i, j, A)
            continue
        tm = 0.5 * (t0 + t1)
        if A < SHORT_FACET * 2.0 * float(radii.min()):
            o0 = next(iter(key0 - {i, j}))
            o1 = next(iter(key1 - {i, j}))
            w0, w1 = _exact_facet_offsets(centers, radii, lo, hi, i, j, o0, o1)
        else:
            mxv, myv = 0.5 * (v0[0] + v1[0]), 0.5 * (v0[1] + v1[1])
            w0, w1 = (v0[0] - mxv, v0[1] - myv), (v1[0] - mxv, v1[1] - myv)
        rows.append(
            (
                i,
                j,
                A,
                l,
                nx,
                ny,
                centers[i, 0] + s * nx + tm * mx,
                centers[i, 1] + s * ny + tm * my,
                centers[i, 0] + s * nx + t0 * mx,
                centers[i, 1] + s * ny + t0 * my,
                centers[i, 0] + s * nx + t1 * mx,
                centers[i, 1] + s * ny + t1 * my,
                w0[0],
                w0[1],
                w1[0],
                w1[1],
                key0,
                key1,
            )
        )
    if dropped:
        log.info("power_tessellate: dropped %d degenerate facets", dropped)

    if rows:
        num = np.array([r[:16] for r in rows], dtype=float)
    else:
        num = np.zeros((0, 16))
    fkeys = [(r[16], r[17]) for r in rows]

    bnode, bside, bA, bxc, bkeys = [], [], [], [], []
    for i, lab, v0, v1, key0, key1 in bf:
        A = math.hypot(v1[0] - v0[0], v1[1] - v0[1])
        if A < cut_len:
            continue
        bnode.append(i)
        bside.append(lab)
        bA.append(A)
        bxc.append((centers[i, 0] + 0.5 * (v0[0] + v1[0]), centers[i, 1] + 0.5 * (v0[1] + v1[1])))
        bkeys.append((key0, key1, (v0[0] + centers[i, 0], v0[1] + centers[i, 1]), (v1[0] + centers[i, 0], v1[1] + centers[i, 1])))

    return Mesh(
        domain=domain,
        centers=centers,
        radii=radii,
        cells=cells,
        cell_area=cell_area,
        cell_centroid=cell_centroid,
        cell_polar=cell_polar,
        fi=num[:, 0].astype(int),
        fj=num[:, 1].astype(int),
        fA=num[:, 2].copy(),
        fl=num[:, 3].copy(),
        fn=num[:, 4:6].copy(),
        fxc=num[:, 6:8].copy(),
        fp0=num[:, 8:10].copy(),
        fp1=num[:, 10:12].copy(),
        fv0=num[:, 12:14].copy(),
        fv1=num[:, 14:16].copy(),
        bnode=np.array(bnode, dtype=int),
        bside=np.array(bside, dtype=int),
        bA=np.array(bA, dtype=float),
        bxc=np.array(bxc, dtype=float).reshape(-1, 2),
        dropped_facets=dropped,
        _fkeys=fkeys,
        _bkeys=bkeys,
    )


def generate_mesh(
    domain: Domain2,
    d_min: float,
    d_max: float,
    exponent_q: float = 0.5,
    target_fill: float = 0.5,
    seed: int = 0,
    max_attempts: int = 20000,
) -> Mesh:
    """Convenience wrapper: sample, pack and tessellate under one seed."""
    d = sample_fuller(d_min, d_max, exponent_q, target_fill, seed, domain.area)
    d = np.sort(d)[::-1]
    centers = place_particles(domain, d, seed=seed + 1, max_attempts=max_attempts)
    return power_tessellate(centers, 0.5 * d, domain)


# ---------------------------------------------------------------------------
# Transport networks
# ---------------------------------------------------------------------------


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def _signed_tri(a, b, c) -> float:
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def build_transport_network(mesh: Mesh, kind: str = "particle") -> TransportNetwork:
    """Transport network on the particle centres or on the dual power vertices."""
    if kind == "particle":
        bn = mesh.boundary_particles()
        return TransportNetwork(
            kind="particle",
            nodes=mesh.centers.copy(),
            volumes=mesh.cell_area.copy(),
            cp=mesh.fi.copy(),
            cq=mesh.fj.copy(),
            S=mesh.fA.copy(),
            h=mesh.fl.copy(),
            e=mesh.fn.copy(),
            face_centroid=mesh.fxc.copy(),
            boundary_nodes=bn,
        )
    if kind != "dual":
        raise ParameterError(f"unknown network kind {kind!r}")
    if mesh._fkeys is None:
        raise ContractError("dual network needs a freshly tessellated mesh (vertex keys missing)")
    return _build_dual(mesh)


def _build_dual(mesh: Mesh) -> TransportNetwork:
    nf = mesh.n_facets
    if nf == 0:
        raise GeometryError("mesh has no facets; dual network is empty")
    # Endpoint records: facet endpoints first, then boundary-edge endpoints.
    keys = []
    pos = []
    for k in range(nf):
        k0, k1 = mesh._fkeys[k]
        keys.extend([k0, k1])
        pos.append(mesh.fp0[k])
        pos.append(mesh.fp1[k])
    nfe = len(keys)
    for k0, k1, p0, p1 in mesh._bkeys:
        keys.extend([k0, k1])
        pos.append(p0)
        pos.append(p1)
    pos = np.asarray(pos, dtype=float)
    uf = _UnionFind(len(keys))
    first: dict = {}
    for idx, key in enumerate(keys):
        if key in first:
            uf.union(first[key], idx)
        else:
            first[key] = idx
    tol = 1e-9 * 2.0 * float(mesh.radii.min())
    for a, b in cKDTree(pos).query_pairs(tol):
        uf.union(int(a), int(b))
    # Facets whose two endpoints merged are degenerate for the dual network.
    roots = [uf.find(i) for i in range(len(keys))]
    node_of_root: dict[int, int] = {}
    for idx in range(nfe):
        r = roots[idx]
        if r not in node_of_root:
            node_of_root[r] = len(node_of_root)
    n_nodes = len(node_of_root)
    acc = np.zeros((n_nodes, 2))
    cnt = np.zeros(n_nodes)
    on_boundary = np.zeros(n_nodes, dtype=bool)
    for idx in range(nfe):
        p = node_of_root[roots[idx]]
        acc[p] += pos[idx]
        cnt[p] += 1
        if any(lab < 0 for lab in keys[idx]):
            on_boundary[p] = True
    nodes = acc / cnt[:, None]

    centers = mesh.centers
    volumes = np.zeros(n_nodes)
    cp, cq, S, h, e, fc = [], [], [], [], [], []
    for k in range(nf):
        p = node_of_root[roots[2 * k]]
        q = node_of_root[roots[2 * k + 1]]
        i, j = mesh.fi[k], mesh.fj[k]
        xi, xj = centers[i], centers[j]
        # Kite (p0, x_J, p1, x_I) split along the diagonal I-J.
        volumes[p] += _signed_tri(mesh.fp0[k], xj, xi)
        volumes[q] += _signed_tri(mesh.fp1[k], xi, xj)
        if p == q:
            continue
        d = nodes[q] - nodes[p]
        cp.append(p)
        cq.append(q)
        S.append(mesh.fl[k])
        h.append(math.hypot(d[0], d[1]))
        e.append((-mesh.fn[k, 1], mesh.fn[k, 0]))
        fc.append(0.5 * (xi + xj))

    # Boundary-edge fans: split at the edge midpoint between its endpoint owners.
    is_node = {r: node_of_root[r] for r in node_of_root}
    by_cell: dict[int, list] = {}
    for b, (k0, k1, p0, p1) in enumerate(mesh._bkeys):
        by_cell.setdefault(int(mesh.bnode[b]), []).append((roots[nfe + 2 * b], roots[nfe + 2 * b + 1], p0, p1))
    for cell, edges in by_cell.items():
        xk = centers[cell]
        # Walk the chain so corner vertices inherit the owner of the previous node.
        owners = {}
        for r0, r1, _, _ in edges:
            if r0 in is_node:
                owners[r0] = is_node[r0]
            if r1 in is_node:
                owners[r1] = is_node[r1]
        ordered = _order_chain(edges)
        for r0, r1, p0, p1 in ordered:
            o0 = owners.get(r0)
            o1 = owners.get(r1)
            if o0 is None and o1 is None:
                raise GeometryError(f"boundary edge of cell {cell} has no network node nearby")
            if o0 is None:
                o0 = o1
            if o1 is None:
                o1 = o0
            owners.setdefault(r0, o0)
            owners.setdefault(r1, o1)
            m = (0.5 * (p0[0] + p1[0]), 0.5 * (p0[1] + p1[1]))
            volumes[o0] += _signed_tri(xk, p0, m)
            volumes[o1] += _signed_tri(xk, m, p1)

    return TransportNetwork(
        kind="dual",
        nodes=nodes,
        volumes=volumes,
        cp=np.array(cp, dtype=int),
        cq=np.array(cq, dtype=int),
        S=np.array(S, dtype=float),
        h=np.array(h, dtype=float),
        e=np.array(e, dtype=float).reshape(-1, 2),
        face_centroid=np.array(fc, dtype=float).reshape(-1, 2),
        boundary_nodes=np.flatnonzero(on_boundary),
    )


def _order_chain(edges):
    """Order a cell's boundary edges head-to-tail (they form one or more chains)."""
    starts = {r0: (r0, r1, p0, p1) for r0, r1, p0, p1 in edges}
    ends = {r1 for _, r1, _, _ in edges}
    heads = [r0 for r0 in starts if r0 not in ends] or [edges[0][0]]
    out = []
    seen = set()
    for h0 in heads:
        r = h0
        while r in starts and r not in seen:
            seen.add(r)
            out.append(starts[r])
            r = starts[r][1]
    for ed in edges:
        if ed[0] not in seen:
            out.append(ed)
    return out


# ---------------------------------------------------------------------------
# Invariant checks
# ---------------------------------------------------------------------------


def tiling_error(mesh: Mesh) -> float:
    return abs(float(np.sum(mesh.cell_area)) - mesh.domain.area) / mesh.domain.area


def facet_orthogonality(mesh: Mesh) -> np.ndarray:
    """``|unit facet direction . e_N|`` from the facet endpoint offsets about the midpoint."""
    if mesh.fv0 is not None:
        d = mesh.fv1 - mesh.fv0
    else:
        d = mesh.fp1 - mesh.fp0
    nrm = np.hypot(d[:, 0], d[:, 1])
    return np.abs(np.sum(d * mesh.fn, axis=1)) / nrm


def closure_residuals(net: TransportNetwork) -> tuple[np.ndarray, np.ndarray]:
    """``(node ids, ||sum S e_out|| / sum S)`` for every interior control volume."""
    n = net.n_nodes
    acc = np.zeros((n, 2))
    tot = np.zeros(n)
    se = net.S[:, None] * net.e
    np.add.at(acc, net.cp, se)
    np.add.at(acc, net.cq, -se)
    np.add.at(tot, net.cp, net.S)
    np.add.at(tot, net.cq, net.S)
    interior = np.ones(n, dtype=bool)
    interior[net.boundary_nodes] = False
    interior &= tot > 0.0
    ids = np.flatnonzero(interior)
    return ids, np.hypot(acc[ids, 0], acc[ids, 1]) / tot[ids]


# ---------------------------------------------------------------------------
# Mesh file
# ---------------------------------------------------------------------------

_MAGIC = "MESOHOM-MESH 1"


def _g(x) -> str:
    return format(float(x), ".17g")


def mesh_to_text(mesh: Mesh, network: TransportNetwork | None = None) -> str:
    buf = io.StringIO()
    w = buf.write
    dom = mesh.domain
    nb = mesh.bnode.shape[0]
    w(_MAGIC + "\n")
    w(f"DOMAIN {_g(dom.origin[0])} {_g(dom.origin[1])} {_g(dom.width)} {_g(dom.height)}\n")
    w(f"COUNTS {mesh.n_particles} {len(mesh.cells)} {mesh.n_facets} {nb}\n")
    w(f"NODES {mesh.n_particles}\n")
    for k in range(mesh.n_particles):
        w(f"{k} {_g(mesh.centers[k, 0])} {_g(mesh.centers[k, 1])} {_g(mesh.radii[k])}\n")
    w(f"CELLS {len(mesh.cells)}\n")
    for k, poly in enumerate(mesh.cells):
        coords = " ".join(f"{_g(x)} {_g(y)}" for x, y in poly)
        w(f"{k} {poly.shape[0]} {coords}\n")
    w(f"FACETS {mesh.n_facets}\n")
    for k in range(mesh.n_facets):
        w(
            f"{mesh.fi[k]} {mesh.fj[k]} {_g(mesh.fA[k])} {_g(mesh.fl[k])} "
            f"{_g(mesh.fn[k, 0])} {_g(mesh.fn[k, 1])} {_g(mesh.fxc[k, 0])} {_g(mesh.fxc[k, 1])}\n"
        )
    w(f"BOUNDARY {nb}\n")
    for k in range(nb):
        w(f"{mesh.bnode[k]} {mesh.bside[k]} {_g(mesh.bA[k])} {_g(mesh.bxc[k, 0])} {_g(mesh.bxc[k, 1])}\n")
    if network is not None:
        w(f"NETWORK {network.kind} {network.n_nodes} {network.n_conduits}\n")
        bset = np.zeros(network.n_nodes, dtype=int)
        bset[network.boundary_nodes] = 1
        for k in range(network.n_nodes):
            w(f"{k} {_g(network.nodes[k, 0])} {_g(network.nodes[k, 1])} {_g(network.volumes[k])} {bset[k]}\n")
        for k in range(network.n_conduits):
            w(
                f"{network.cp[k]} {network.cq[k]} {_g(network.S[k])} {_g(network.h[k])} "
                f"{_g(network.e[k, 0])} {_g(network.e[k, 1])} "
                f"{_g(network.face_centroid[k, 0])} {_g(network.face_centroid[k, 1])}\n"
            )
    w("END\n")
    return buf.getvalue()


def write_mesh(path, mesh: Mesh, network: TransportNetwork | None = None) -> str:
    """Write the mesh file and return its SHA-256 hex digest."""
    text = mesh_to_text(mesh, network)
    Path(path).write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def read_mesh(path) -> tuple[Mesh, TransportNetwork | None]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise GeometryError(f"{path}: not a mesh file")
    it = iter(lines[1:])

    def header(name):
        parts = next(it).split()
        if parts[0] != name:
            raise GeometryError(f"{path}: expected section {name}, got {parts[0]}")
        return parts[1:]

    x0, y0, wdt, hgt = map(float, header("DOMAIN"))
    domain = Domain2(wdt, hgt, (x0, y0))
    header("COUNTS")
    n = int(header("NODES")[0])
    nodes = np.array([list(map(float, next(it).split()[1:])) for _ in range(n)]).reshape(-1, 3)
    centers, radii = nodes[:, :2].copy(), nodes[:, 2].copy()
    nc = int(header("CELLS")[0])
    cells = []
    for _ in range(nc):
        parts = next(it).split()
        m = int(parts[1])
        cells.append(np.array(list(map(float, parts[2 : 2 + 2 * m]))).reshape(m, 2))
    nfac = int(header("FACETS")[0])
    fac = np.array([list(map(float, next(it).split())) for _ in range(nfac)]).reshape(-1, 8)
    nb = int(header("BOUNDARY")[0])
    bnd = np.array([list(map(float, next(it).split())) for _ in range(nb)]).reshape(-1, 5)

    cell_area = np.empty(nc)
    cell_centroid = np.empty((nc, 2))
    cell_polar = np.empty(nc)
    for k, poly in enumerate(cells):
        a, sx, sy, jo = geo.polygon_moments([tuple(p - centers[k]) for p in poly])
        cell_area[k] = a
        cell_centroid[k] = centers[k] + (sx / a, sy / a)
        cell_polar[k] = jo
    fn = fac[:, 4:6].copy()
    fxc = fac[:, 6:8].copy()
    ft = np.column_stack([-fn[:, 1], fn[:, 0]])
    half = 0.5 * fac[:, 2:3]
    mesh = Mesh(
        domain=domain,
        centers=centers,
        radii=radii,
        cells=cells,
        cell_area=cell_area,
        cell_centroid=cell_centroid,
        cell_polar=cell_polar,
        fi=fac[:, 0].astype(int),
        fj=fac[:, 1].astype(int),
        fA=fac[:, 2].copy(),
        fl=fac[:, 3].copy(),
        fn=fn,
        fxc=fxc,
        fp0=fxc - half * ft,
        fp1=fxc + half * ft,
        bnode=bnd[:, 0].astype(int),
        bside=bnd[:, 1].astype(int),
        bA=bnd[:, 2].copy(),
        bxc=bnd[:, 3:5].copy(),
    )
    parts = next(it).split()
    net = None
    if parts[0] == "NETWORK":
        kind, nn, ncd = parts[1], int(parts[2]), int(parts[3])
        nd = np.array([list(map(float, next(it).split())) for _ in range(nn)]).reshape(-1, 5)
        cd = np.array([list(map(float, next(it).split())) for _ in range(ncd)]).reshape(-1, 8)
        net = TransportNetwork(
            kind=kind,
            nodes=nd[:, 1:3].copy(),
            volumes=nd[:, 3].copy(),
            cp=cd[:, 0].astype(int),
            cq=cd[:, 1].astype(int),
            S=cd[:, 2].copy(),
            h=cd[:, 3].copy(),
            e=cd[:, 4:6].copy(),
            face_centroid=cd[:, 6:8].copy(),
            boundary_nodes=np.flatnonzero(nd[:, 4] > 0),
        )
    return mesh, net
