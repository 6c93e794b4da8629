"""Small polygon kernels used by the tessellation and the inertia assembly.

Polygons are plain Python lists of ``(x, y)`` tuples in counter-clockwise
order. The clipping routine carries one integer label per edge so that the
caller can tell which neighbour (or which side of the box) produced it.
"""

from __future__ import annotations

import math

import numpy as np

# Edge labels for the four sides of the domain rectangle.
SIDE_BOTTOM = -1
SIDE_RIGHT = -2
SIDE_TOP = -3
SIDE_LEFT = -4
SIDES = (SIDE_BOTTOM, SIDE_RIGHT, SIDE_TOP, SIDE_LEFT)
SIDE_NORMALS = {
    SIDE_BOTTOM: (0.0, -1.0),
    SIDE_RIGHT: (1.0, 0.0),
    SIDE_TOP: (0.0, 1.0),
    SIDE_LEFT: (-1.0, 0.0),
}


def box_polygon(x0: float, y0: float, x1: float, y1: float):
    """Rectangle vertex loop with side labels; edge k runs from vertex k to k+1."""
    verts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    labels = [SIDE_BOTTOM, SIDE_RIGHT, SIDE_TOP, SIDE_LEFT]
    return verts, labels


def clip_halfplane(verts, labels, nx: float, ny: float, s: float, label: int):
    """Keep the part of a convex polygon where ``nx*x + ny*y <= s``.

    The new edge created along the clipping line receives ``label``.
    Returns the clipped ``(verts, labels)``; both are empty when nothing is
    left.
    """
    n = len(verts)
    if n == 0:
        return verts, labels
    dist = [nx * x + ny * y - s for (x, y) in verts]
    if max(dist) <= 0.0:
        return verts, labels
    if min(dist) > 0.0:
        return [], []

    out_v = []
    out_l = []
    for k in range(n):
        k1 = (k + 1) % n
        dk, dk1 = dist[k], dist[k1]
        inside_k = dk <= 0.0
        inside_k1 = dk1 <= 0.0
        if inside_k:
            out_v.append(verts[k])
            if inside_k1:
                out_l.append(labels[k])
            else:
                # Leaving: the edge is cut, then the clip line starts.
                t = dk / (dk - dk1)
                xk, yk = verts[k]
                xk1, yk1 = verts[k1]
                out_l.append(labels[k])
                out_v.append((xk + t * (xk1 - xk), yk + t * (yk1 - yk)))
                out_l.append(label)
        elif inside_k1:
            # Entering: the new vertex starts the remainder of edge k.
            t = dk / (dk - dk1)
            xk, yk = verts[k]
            xk1, yk1 = verts[k1]
            out_v.append((xk + t * (xk1 - xk), yk + t * (yk1 - yk)))
            out_l.append(labels[k])
    return _drop_short_edges(out_v, out_l)


def _drop_short_edges(verts, labels, tol: float = 0.0):
    """Remove zero-length edges left behind when a cut passes through a vertex."""
    if len(verts) < 3:
        return [], []
    changed = True
    while changed and len(verts) >= 3:
        changed = False
        n = len(verts)
        for k in range(n):
            k1 = (k + 1) % n
            dx = verts[k1][0] - verts[k][0]
            dy = verts[k1][1] - verts[k][1]
            if dx * dx + dy * dy <= tol * tol:
                # Edge k collapses; vertex k1 goes, edge k1 now starts at k.
                del verts[k1]
                del labels[k]
                if k1 == 0:
                    # Vertex 0 removed: rotate so labels keep their pairing.
                    labels.append(labels.pop(0))
                changed = True
                break
    if len(verts) < 3:
        return [], []
    return verts, labels


def polygon_area(verts) -> float:
    """Signed area (positive for counter-clockwise loops)."""
    a = 0.0
    n = len(verts)
    for k in range(n):
        x0, y0 = verts[k]
        x1, y1 = verts[(k + 1) % n]
        a += x0 * y1 - x1 * y0
    return 0.5 * a


def polygon_moments(verts):
    """Area, first moments and polar second moment about the coordinate origin.

    Returns ``(area, sx, sy, jo)`` with ``sx = int x dA``, ``sy = int y dA``
    and ``jo = int (x^2 + y^2) dA``. Exact for straight-edged polygons.
    """
    a = sx = sy = ixx = iyy = 0.0
    n = len(verts)
    for k in range(n):
        x0, y0 = verts[k]
        x1, y1 = verts[(k + 1) % n]
        cr = x0 * y1 - x1 * y0
        a += cr
        sx += (x0 + x1) * cr
        sy += (y0 + y1) * cr
        ixx += (y0 * y0 + y0 * y1 + y1 * y1) * cr
        iyy += (x0 * x0 + x0 * x1 + x1 * x1) * cr
    return 0.5 * a, sx / 6.0, sy / 6.0, (ixx + iyy) / 12.0


def segment_box_interval(p, q, lo, hi):
    """Parameter interval ``[t0, t1]`` of segment ``p + t (q - p)`` inside a box.

    Liang-Barsky clipping; returns ``None`` when the segment misses the box
    or only touches it in a single point.
    """
    t0, t1 = 0.0, 1.0
    d = (q[0] - p[0], q[1] - p[1])
    for axis in (0, 1):
        if d[axis] == 0.0:
            if p[axis] < lo[axis] or p[axis] >= hi[axis]:
                return None
            continue
        ta = (lo[axis] - p[axis]) / d[axis]
        tb = (hi[axis] - p[axis]) / d[axis]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 >= t1:
            return None
    return t0, t1


def perimeter_coordinate(x: float, y: float, x0: float, y0: float, w: float, h: float) -> float:
    """Counter-clockwise arclength position of a point on the box boundary."""
    dx, dy = x - x0, y - y0
    eps = 1e-12 * max(w, h)
    if abs(dy) <= eps:
        return dx
    if abs(dx - w) <= eps:
        return w + dy
    if abs(dy - h) <= eps:
        return w + h + (w - dx)
    return 2.0 * w + h + (h - dy)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / math.hypot(v[0], v[1])
