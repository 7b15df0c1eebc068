"""Pool registered light fields and resample them onto a finer regular grid.

Interpolation is barycentric-linear over the Delaunay triangulation of the
pooled sample positions. The same ``GridInterpolator`` also performs the
hexagonal-to-square resampling during decoding.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import LensletGrid, LightField
from .delaunay import Triangulation, delaunay_triangulate
from .errors import ConfigurationError, DomainError

EXTRAPOLATION_MODES = ("nearest", "none")
MERGE_RADIUS_UM = 1e-9


@dataclass(frozen=True)
class RegularGrid:
    """Axis-aligned sample grid: ``x_j = origin_x + j * pitch_x`` (same for y)."""

    shape: tuple[int, int]
    pitch_um: tuple[float, float]
    origin_um: tuple[float, float] = (0.0, 0.0)

    def coords(self) -> np.ndarray:
        h, w = self.shape
        x = self.origin_um[0] + np.arange(w) * self.pitch_um[0]
        y = self.origin_um[1] + np.arange(h) * self.pitch_um[1]
        xx, yy = np.meshgrid(x, y)
        return np.stack([xx, yy], axis=-1)


@dataclass
class ScatteredSampleSet:
    """Sample positions (lattice-frame micrometers) and values for one perspective."""

    points_um: np.ndarray
    values: np.ndarray
    perspective: tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.points_um = np.asarray(self.points_um, dtype=float).reshape(-1, 2)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.points_um) != len(self.values):
            raise DomainError("points and values differ in length")
        groups = merge_groups(self.points_um)
        if groups is not None:
            self.points_um, self.values = _merge(self.points_um, self.values[None], groups)
            self.values = self.values[0]


def merge_groups(points: np.ndarray, radius: float = MERGE_RADIUS_UM) -> np.ndarray | None:
    """Group label per point, merging points closer than ``radius``; None if all distinct."""
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return None
    parent = np.arange(len(points))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(points))])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def _merge(points, values, labels):
    """Average positions and every row of ``values`` within each label group."""
    n = labels.max() + 1
    counts = np.bincount(labels, minlength=n).astype(float)
    pts = np.stack([np.bincount(labels, points[:, k], n) for k in range(2)], axis=1) / counts[:, None]
    vals = np.stack([np.bincount(labels, row, n) for row in values]) / counts
    return pts, vals


class GridInterpolator:
    """Precomputed barycentric weights from scattered points to a regular grid.

    Built once per point set and reused for every perspective: the
    triangulation is immutable and ``apply`` is a pure gather.
    """

    def __init__(self, points_um: np.ndarray, grid: RegularGrid, extrapolation: str = "nearest",
                 triangulation: Triangulation | None = None):
        if extrapolation not in EXTRAPOLATION_MODES:
            raise ConfigurationError(f"unknown extrapolation mode {extrapolation!r}")
        self.points = np.asarray(points_um, dtype=float).reshape(-1, 2)
        self.grid = grid
        self.extrapolation = extrapolation
        self.triangulation = triangulation or delaunay_triangulate(self.points)
        self._rasterize()

    def _rasterize(self, chunk: int = 200_000) -> None:
        h, w = self.grid.shape
        px, py = self.grid.pitch_um
        ox, oy = self.grid.origin_um
        gx = (self.points[:, 0] - ox) / px
        gy = (self.points[:, 1] - oy) / py
        simp = self.triangulation.simplices
        tol = 1e-9
        found_out, found_v, found_l = [], [], []
        for s in range(0, len(simp), chunk):
            tri = simp[s : s + chunk]
            x = gx[tri]
            y = gy[tri]
            j0 = np.maximum(np.ceil(x.min(1) - tol), 0).astype(np.int64)
            j1 = np.minimum(np.floor(x.max(1) + tol), w - 1).astype(np.int64)
            i0 = np.maximum(np.ceil(y.min(1) - tol), 0).astype(np.int64)
            i1 = np.minimum(np.floor(y.max(1) + tol), h - 1).astype(np.int64)
            nw = np.maximum(j1 - j0 + 1, 0)
            nh = np.maximum(i1 - i0 + 1, 0)
            counts = nw * nh
            total = int(counts.sum())
            if total == 0:
                continue
            t = np.repeat(np.arange(len(tri)), counts)
            k = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
            jj = j0[t] + k % nw[t]
            ii = i0[t] + k // nw[t]
            x0, y0 = x[t, 0], y[t, 0]
            e1x, e1y = x[t, 1] - x0, y[t, 1] - y0
            e2x, e2y = x[t, 2] - x0, y[t, 2] - y0
            det = e1x * e2y - e1y * e2x
            qx, qy = jj - x0, ii - y0
            l1 = (qx * e2y - qy * e2x) / det
            l2 = (e1x * qy - e1y * qx) / det
            inside = (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol)
            found_out.append((ii * w + jj)[inside])
            found_v.append(tri[t[inside]])
            found_l.append(np.stack([l1[inside], l2[inside]], axis=1))
        if found_out:
            out = np.concatenate(found_out)
            verts = np.concatenate(found_v)
            lam = np.concatenate(found_l)
            # first containing triangle wins, giving a deterministic choice on shared edges
            out, first = np.unique(out, return_index=True)
            self.out_index = out
            self.vertices = verts[first]
            self.lambdas = np.clip(lam[first], 0.0, 1.0)
        else:
            self.out_index = np.zeros(0, dtype=np.int64)
            self.vertices = np.zeros((0, 3), dtype=np.int64)
            self.lambdas = np.zeros((0, 2))
        valid = np.zeros(h * w, dtype=bool)
        valid[self.out_index] = True
        self.valid_mask = valid.reshape(h, w)
        self.outside_index = np.flatnonzero(~valid)
        if self.extrapolation == "nearest" and len(self.outside_index):
            q = self.grid.coords().reshape(-1, 2)[self.outside_index]
            _, self.nearest = cKDTree(self.points).query(q)
        else:
            self.nearest = None

    def apply(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Interpolate one value per point onto the grid, shape ``grid.shape``."""
        v = np.asarray(values, dtype=float).reshape(-1)
        if len(v) != len(self.points):
            raise DomainError("value count does not match the interpolator's points")
        out = np.full(self.grid.shape[0] * self.grid.shape[1], float(fill))
        v0 = v[self.vertices[:, 0]]
        v1 = v[self.vertices[:, 1]]
        v2 = v[self.vertices[:, 2]]
        # written relative to v0 so that constant data stays exactly constant
        out[self.out_index] = v0 + self.lambdas[:, 0] * (v1 - v0) + self.lambdas[:, 1] * (v2 - v0)
        if self.nearest is not None:
            out[self.outside_index] = v[self.nearest]
        return out.reshape(self.grid.shape)


_interp_cache: dict[str, GridInterpolator] = {}


def cached_interpolator(points_um: np.ndarray, grid: RegularGrid, extrapolation: str = "nearest") -> GridInterpolator:
    """``GridInterpolator`` memoized on the exact point coordinates and grid."""
    pts = np.ascontiguousarray(points_um, dtype=float).reshape(-1, 2)
    h = hashlib.sha1(pts.tobytes())
    h.update(repr((grid, extrapolation)).encode())
    key = h.hexdigest()
    interp = _interp_cache.get(key)
    if interp is None:
        interp = GridInterpolator(pts, grid, extrapolation)
        if len(_interp_cache) >= 8:
            _interp_cache.pop(next(iter(_interp_cache)))
        _interp_cache[key] = interp
    return interp


@dataclass(frozen=True)
class FusionConfig:
    enhancement: int = 4
    output_shape: tuple[int, int] | None = None
    output_pitch_um: tuple[float, float] | None = None
    output_origin_um: tuple[float, float] | None = None
    extrapolation: str = "nearest"

    def __post_init__(self):
        if self.enhancement < 1:
            raise ConfigurationError("enhancement must be >= 1")
        if self.extrapolation not in EXTRAPOLATION_MODES:
            raise ConfigurationError(f"unknown extrapolation mode {self.extrapolation!r}")

    def output_grid(self, reference: LightField) -> RegularGrid:
        e = self.enhancement
        h, w = reference.spatial_size
        return RegularGrid(
            shape=tuple(self.output_shape) if self.output_shape else (h * e, w * e),
            pitch_um=tuple(self.output_pitch_um) if self.output_pitch_um
            else (reference.pitch_x_um / e, reference.pitch_y_um / e),
            origin_um=tuple(self.output_origin_um) if self.output_origin_um else reference.origin_um,
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> FusionConfig:
        d = dict(d)
        for k in ("output_shape", "output_pitch_um", "output_origin_um"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


def _shift_um(shift, lf: LightField) -> np.ndarray:
    """Shift estimate (perspective pixels) or explicit ``(dx, dy)`` pair, in micrometers."""
    if hasattr(shift, "dx_px"):
        return np.array([shift.dx_px * lf.pitch_x_um, shift.dy_px * lf.pitch_y_um])
    return np.asarray(shift, dtype=float) * np.array([lf.pitch_x_um, lf.pitch_y_um])


def _sample_positions(lf: LightField, grid: LensletGrid | None) -> np.ndarray:
    if lf.lens_positions_um is not None:
        return lf.lens_positions_um.reshape(-1, 2)
    if grid is not None and lf.lens_data is not None:
        return grid.to_lattice_frame(grid.centers_um().reshape(-1, 2))
    return lf.pixel_positions().reshape(-1, 2)


def _sample_values(lf: LightField) -> np.ndarray:
    """Per-perspective sample values, shape ``(V, U, n)``."""
    src = lf.lens_data if lf.lens_data is not None else lf.data
    v, u = src.shape[:2]
    return src.reshape(v, u, -1)


def pooled_samples(lfs: Sequence[LightField], shifts: Sequence, grid: LensletGrid | None = None):
    """Positions ``(n, 2)`` and values ``(V, U, n)`` of all light fields' samples.

    A light field whose content is displaced by ``+d`` relative to the
    reference saw the scene at ``position - d``.
    """
    if len(lfs) != len(shifts):
        raise DomainError(f"{len(lfs)} light fields but {len(shifts)} shifts")
    if not lfs:
        raise DomainError("need at least one light field")
    ang = lfs[0].angular_size
    pts, vals = [], []
    for lf, s in zip(lfs, shifts):
        if lf.angular_size != ang:
            raise DomainError("light fields differ in angular size")
        pts.append(_sample_positions(lf, grid) - _shift_um(s, lf))
        vals.append(_sample_values(lf))
    return np.concatenate(pts), np.concatenate(vals, axis=2)


def gather_samples(lfs: Sequence[LightField], shifts: Sequence, grid: LensletGrid | None, perspective) -> ScatteredSampleSet:
    """Pool one perspective's samples from every light field into physical positions."""
    pts, vals = pooled_samples(lfs, shifts, grid)
    v, u = perspective
    return ScatteredSampleSet(pts, vals[v, u], perspective=(v, u))


def interpolate_to_grid(samples: ScatteredSampleSet, cfg: FusionConfig | None = None,
                        grid: RegularGrid | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Resample scattered samples onto ``grid``; returns ``(image, valid_mask)``."""
    cfg = cfg or FusionConfig()
    if grid is None:
        if cfg.output_shape is None or cfg.output_pitch_um is None:
            raise ConfigurationError("interpolate_to_grid needs an explicit output grid")
        grid = RegularGrid(tuple(cfg.output_shape), tuple(cfg.output_pitch_um),
                           tuple(cfg.output_origin_um or (0.0, 0.0)))
    interp = cached_interpolator(samples.points_um, grid, cfg.extrapolation)
    return interp.apply(samples.values), interp.valid_mask.copy()


def fuse(lfs: Sequence[LightField], shifts: Sequence, grid: LensletGrid | None = None,
         cfg: FusionConfig | None = None, threads: int = 1) -> LightField:
    """Merge registered light fields into one light field on a finer grid.

    ``shifts`` are per-light-field displacements in perspective pixels (a
    ``ShiftEstimate`` or ``(dx, dy)`` pairs), the reference having ``(0, 0)``.
    """
    cfg = cfg or FusionConfig()
    ref = lfs[0]
    out_grid = cfg.output_grid(ref)
    pts, vals = pooled_samples(lfs, shifts, grid)
    labels = merge_groups(pts)
    nv, nu = vals.shape[:2]
    if labels is not None:
        pts, flat = _merge(pts, vals.reshape(nv * nu, -1), labels)
        vals = flat.reshape(nv, nu, -1)
    interp = cached_interpolator(pts, out_grid, cfg.extrapolation)
    jobs = [(v, u) for v in range(nv) for u in range(nu)]
    data = np.empty((nv, nu) + out_grid.shape)

    def run(job):
        v, u = job
        data[v, u] = interp.apply(vals[v, u])

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(run, jobs))
    else:
        for job in jobs:
            run(job)
    return LightField(
        data,
        pitch_x_um=out_grid.pitch_um[0],
        pitch_y_um=out_grid.pitch_um[1],
        origin_um=out_grid.origin_um,
        valid_mask=interp.valid_mask.copy(),
        provenance=ref.provenance + [f"fuse(n={len(lfs)}, enhancement={cfg.enhancement})"],
    )
