"""Delaunay triangulation with adaptively exact predicates.

Qhull builds the initial triangulation. It works in floating point, and the
micro-shift sample lattices are full of nearly cocircular quadruples, so every
interior edge is then re-checked with an exact in-circle predicate (a float
filter with a static error bound, falling back to integer arithmetic) and
illegal edges are flipped until the triangulation is exactly Delaunay for the
given float coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import GeometryError

_EPS = np.finfo(float).eps / 2  # unit roundoff
_CCW_BOUND = (3.0 + 16.0 * _EPS) * _EPS
_ICC_BOUND = (10.0 + 96.0 * _EPS) * _EPS


def _as_ints(values):
    ratios = [float(v).as_integer_ratio() for v in values]
    den = max(d for _, d in ratios)
    return [n * (den // d) for n, d in ratios]


def orient2d_exact(a, b, c) -> int:
    """Sign of the signed area of ``abc`` (+1 counter-clockwise), exactly."""
    ax, ay, bx, by, cx, cy = _as_ints((a[0], a[1], b[0], b[1], c[0], c[1]))
    det = (ax - cx) * (by - cy) - (ay - cy) * (bx - cx)
    return (det > 0) - (det < 0)


def incircle_exact(a, b, c, d) -> int:
    """+1 if ``d`` is strictly inside the circle through CCW ``abc``, exactly."""
    ax, ay, bx, by, cx, cy, dx, dy = _as_ints((a[0], a[1], b[0], b[1], c[0], c[1], d[0], d[1]))
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    det = (
        (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
        + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady)
    )
    return (det > 0) - (det < 0)


def orient2d(a, b, c) -> np.ndarray:
    """Vectorized orientation sign for point arrays of shape ``(n, 2)``."""
    a, b, c = (np.atleast_2d(np.asarray(p, dtype=float)) for p in (a, b, c))
    acx, acy = a[:, 0] - c[:, 0], a[:, 1] - c[:, 1]
    bcx, bcy = b[:, 0] - c[:, 0], b[:, 1] - c[:, 1]
    left = acx * bcy
    right = acy * bcx
    det = left - right
    bound = _CCW_BOUND * (np.abs(left) + np.abs(right))
    sign = np.sign(det).astype(int)
    for k in np.flatnonzero(~(np.abs(det) > bound)):
        sign[k] = orient2d_exact(a[k], b[k], c[k])
    return sign


def incircle(a, b, c, d) -> np.ndarray:
    """Vectorized in-circle sign for CCW triangles ``abc`` and query points ``d``."""
    a, b, c, d = (np.atleast_2d(np.asarray(p, dtype=float)) for p in (a, b, c, d))
    adx, ady = a[:, 0] - d[:, 0], a[:, 1] - d[:, 1]
    bdx, bdy = b[:, 0] - d[:, 0], b[:, 1] - d[:, 1]
    cdx, cdy = c[:, 0] - d[:, 0], c[:, 1] - d[:, 1]
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    bc = bdx * cdy - cdx * bdy
    ca = cdx * ady - adx * cdy
    ab = adx * bdy - bdx * ady
    det = alift * bc + blift * ca + clift * ab
    perm = (
        (np.abs(bdx * cdy) + np.abs(cdx * bdy)) * alift
        + (np.abs(cdx * ady) + np.abs(adx * cdy)) * blift
        + (np.abs(adx * bdy) + np.abs(bdx * ady)) * clift
    )
    sign = np.sign(det).astype(int)
    for k in np.flatnonzero(~(np.abs(det) > _ICC_BOUND * perm)):
        sign[k] = incircle_exact(a[k], b[k], c[k], d[k])
    return sign


@dataclass(eq=False)
class Triangulation:
    """Counter-clockwise triangles over ``points``.

    ``neighbors[t, i]`` is the triangle across the edge opposite vertex
    ``simplices[t, i]`` (``-1`` on the hull).
    """

    points: np.ndarray
    simplices: np.ndarray
    neighbors: np.ndarray
    flips: int = 0

    @property
    def n_triangles(self) -> int:
        return len(self.simplices)

    def edges(self) -> np.ndarray:
        e = np.concatenate([self.simplices[:, [1, 2]], self.simplices[:, [2, 0]], self.simplices[:, [0, 1]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def circumcircle_violations(self) -> np.ndarray:
        """Interior edges whose opposite vertex lies strictly inside the circumcircle."""
        t, i = np.nonzero(self.neighbors >= 0)
        n = self.neighbors[t, i]
        keep = t < n
        t, i, n = t[keep], i[keep], n[keep]
        d = _opposite_vertex(self.simplices, self.neighbors, t, n)
        s = self.simplices
        a = s[t, i]
        b = s[t, (i + 1) % 3]
        c = s[t, (i + 2) % 3]
        p = self.points
        bad = incircle(p[a], p[b], p[c], p[d]) > 0
        return np.stack([t[bad], i[bad]], axis=1)


def _opposite_vertex(simplices, neighbors, t, n):
    """Vertex of triangle ``n`` not shared with its neighbor ``t``."""
    j = np.argmax(neighbors[n] == t[:, None], axis=1)
    return simplices[n, j]


def delaunay_triangulate(points_um) -> Triangulation:
    """Exact Delaunay triangulation of 2D points.

    Raises ``GeometryError`` for fewer than three points or collinear input.
    """
    pts = np.ascontiguousarray(np.asarray(points_um, dtype=float).reshape(-1, 2))
    if len(pts) < 3:
        raise GeometryError("need at least 3 points to triangulate")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("points must be finite")
    try:
        qh = Delaunay(pts)
    except QhullError as exc:
        raise GeometryError(f"degenerate point set: {exc.args[0].splitlines()[0]}") from exc
    simplices = qh.simplices.astype(np.int64)
    neighbors = qh.neighbors.astype(np.int64)
    if len(simplices) == 0:
        raise GeometryError("all points are collinear")

    # enforce counter-clockwise order; swapping vertices 1 and 2 swaps their neighbors too
    o = orient2d(pts[simplices[:, 0]], pts[simplices[:, 1]], pts[simplices[:, 2]])
    if np.any(o == 0):
        raise GeometryError("triangulation contains a zero-area triangle")
    cw = o < 0
    simplices[cw] = simplices[cw][:, [0, 2, 1]]
    neighbors[cw] = neighbors[cw][:, [0, 2, 1]]

    tri = Triangulation(pts, simplices, neighbors)
    bad = tri.circumcircle_violations()
    if len(bad):
        tri.flips = _lawson_flip(pts, simplices, neighbors, bad)
    return tri


def _incircle_scalar(p, a, b, c, d) -> int:
    ax, ay = p[a]
    bx, by = p[b]
    cx, cy = p[c]
    dx, dy = p[d]
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    det = alift * (bdx * cdy - cdx * bdy) + blift * (cdx * ady - adx * cdy) + clift * (adx * bdy - bdx * ady)
    perm = (
        (abs(bdx * cdy) + abs(cdx * bdy)) * alift
        + (abs(cdx * ady) + abs(adx * cdy)) * blift
        + (abs(adx * bdy) + abs(bdx * ady)) * clift
    )
    if abs(det) > _ICC_BOUND * perm:
        return 1 if det > 0 else -1
    return incircle_exact(p[a], p[b], p[c], p[d])


def _lawson_flip(points, simplices, neighbors, seeds) -> int:
    """Flip illegal edges in place until every edge is locally Delaunay."""
    p = points.tolist()
    tri = simplices.tolist()
    nb = neighbors.tolist()
    stack = [tuple(s) for s in seeds.tolist()]
    flips = 0
    while stack:
        t, i = stack.pop()
        u = nb[t][i]
        if u < 0:
            continue
        a, b, c = tri[t][i], tri[t][(i + 1) % 3], tri[t][(i + 2) % 3]
        j = nb[u].index(t)
        d = tri[u][j]
        if _incircle_scalar(p, a, b, c, d) <= 0:
            continue
        n_ab = nb[t][(i + 2) % 3]
        n_ca = nb[t][(i + 1) % 3]
        n_bd = nb[u][(j + 1) % 3]
        n_dc = nb[u][(j + 2) % 3]
        tri[t] = [a, b, d]
        tri[u] = [a, d, c]
        nb[t] = [n_bd, u, n_ab]
        nb[u] = [n_dc, n_ca, t]
        if n_bd >= 0:
            nb[n_bd][nb[n_bd].index(u)] = t
        if n_ca >= 0:
            nb[n_ca][nb[n_ca].index(t)] = u
        flips += 1
        stack.extend(((t, 0), (t, 1), (t, 2), (u, 0), (u, 1), (u, 2)))
    simplices[:] = np.asarray(tri, dtype=np.int64)
    neighbors[:] = np.asarray(nb, dtype=np.int64)
    return flips
