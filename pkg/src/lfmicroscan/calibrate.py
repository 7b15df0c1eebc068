"""Micro-lens center calibration from a white image, and raw-to-light-field decoding."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage, optimize
from scipy.spatial import cKDTree

from ._sampling import bilinear
from .core import LensletGrid, LightField, RawCapture
from .errors import CalibrationError, ConfigurationError, DomainError, FitQualityError
from .fusion import RegularGrid, cached_interpolator


@dataclass
class CenterEstimate:
    position_px: tuple[float, float]
    peak_value: float
    lens_index: tuple[int, int] | None = None


def _refine_centroids(img, seeds, radius, threshold, iterations=4):
    """Thresholded intensity centroid in a disk that follows the estimate."""
    h, w = img.shape
    r = int(np.ceil(radius))
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    pos = seeds.astype(float).copy()
    for _ in range(iterations):
        base = np.round(pos).astype(np.int64)
        xs = base[:, 0, None, None] + dx[None]
        ys = base[:, 1, None, None] + dy[None]
        inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        vals = img[np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1)]
        d2 = (xs - pos[:, 0, None, None]) ** 2 + (ys - pos[:, 1, None, None]) ** 2
        wts = np.where(inside & (d2 <= radius**2), np.maximum(vals - threshold[:, None, None], 0.0), 0.0)
        tot = wts.sum(axis=(1, 2))
        ok = tot > 0
        new = pos.copy()
        new[ok, 0] = (wts * xs).sum(axis=(1, 2))[ok] / tot[ok]
        new[ok, 1] = (wts * ys).sum(axis=(1, 2))[ok] / tot[ok]
        pos = new
    return pos


def detect_centers(white: RawCapture | np.ndarray, expected_pitch_px: float,
                   min_peak: float = 0.2) -> list[CenterEstimate]:
    """Locate the brightest point behind each lens, refined to sub-pixel by centroid.

    Local maxima closer than half a pitch are merged (the brighter survives).
    Each maximum is refined by an intensity centroid over a disk of radius
    ``expected_pitch_px / 2`` with the background floor (a fixed fraction of
    the peak) removed.
    """
    img = np.asarray(white.image if isinstance(white, RawCapture) else white, dtype=float)
    if expected_pitch_px <= 2:
        raise ConfigurationError("expected pitch must exceed 2 pixels")
    size = max(3, int(round(0.5 * expected_pitch_px)) | 1)
    smooth = ndimage.uniform_filter(img, 3, mode="nearest")
    peak_level = float(np.percentile(smooth, 99.5))
    if peak_level <= 0 or float(np.ptp(img)) < 1e-6:
        raise CalibrationError("white image has no lenslet structure")
    local_max = (smooth == ndimage.maximum_filter(smooth, size=size, mode="nearest"))
    local_max &= smooth > min_peak * peak_level
    ys, xs = np.nonzero(local_max)
    if len(xs) < 4:
        raise CalibrationError(f"only {len(xs)} lenslet peaks detected")
    seeds = np.stack([xs, ys], axis=1).astype(float)
    strength = smooth[ys, xs]
    order = np.argsort(-strength, kind="stable")
    seeds, strength = seeds[order], strength[order]
    tree = cKDTree(seeds)
    keep = np.ones(len(seeds), dtype=bool)
    for i, j in sorted(tree.query_pairs(0.5 * expected_pitch_px)):
        if keep[i] and keep[j]:
            keep[j] = False
    seeds, strength = seeds[keep], strength[keep]
    if len(seeds) < 4:
        raise CalibrationError(f"only {len(seeds)} lenslet peaks detected")
    peaks = img[seeds[:, 1].astype(int), seeds[:, 0].astype(int)]
    pos = _refine_centroids(img, seeds, 0.5 * expected_pitch_px, 0.25 * peaks)
    order = np.lexsort((pos[:, 0], pos[:, 1]))
    return [CenterEstimate((float(pos[k, 0]), float(pos[k, 1])), float(peaks[k])) for k in order]


def _basis_from_neighbors(pts: np.ndarray, pitch_guess: float):
    """Row-direction vector and row-step vector of a hexagonal point set."""
    tree = cKDTree(pts)
    d, idx = tree.query(pts, k=7)
    vec = pts[idx[:, 1:]] - pts[:, None, :]
    dist = d[:, 1:]
    ok = (dist > 0.6 * pitch_guess) & (dist < 1.4 * pitch_guess)
    vec = vec[ok]
    ang = np.arctan2(vec[:, 1], vec[:, 0])
    along = vec[np.abs(ang) < np.pi / 6]
    if len(along) == 0:
        raise CalibrationError("no horizontal lens neighbors found")
    a = np.median(along, axis=0)
    down = vec[np.abs(ang - np.pi / 2) < np.pi / 3]
    if len(down) == 0:
        raise CalibrationError("lens centers span a single row")
    # hexagonal neighbors below sit at +-a/2 from the row step
    proj = down @ a / (a @ a)
    b = np.median(down - np.round(proj * 2)[:, None] / 2 * a, axis=0)
    return a, b


def fit_grid(centers, pixel_pitch_um: float, sensor_shape_px=None, expected_pitch_px: float | None = None) -> LensletGrid:
    """Least-squares hexagonal lattice through detected centers.

    Centers are associated to ``(row, col)`` indices, then pitch, row pitch,
    rotation and origin are fitted (odd rows offset by half a pitch). The
    returned grid carries the associated measured centers; lattice sites with
    no detection get their fitted nominal position.
    """
    if centers and isinstance(centers[0], CenterEstimate):
        pts = np.array([c.position_px for c in centers], dtype=float)
    else:
        pts = np.asarray(centers, dtype=float).reshape(-1, 2)
    if len(pts) < 4:
        raise CalibrationError("need at least 4 centers to fit a grid")
    if expected_pitch_px is None:
        d, _ = cKDTree(pts).query(pts, k=2)
        expected_pitch_px = float(np.median(d[:, 1]))
    a, b = _basis_from_neighbors(pts, expected_pitch_px)

    # provisional lattice coordinates relative to the top-left-most center
    start = int(np.argmin(pts @ b / (b @ b) * 1e6 + pts @ a / (a @ a)))
    rel = pts - pts[start]
    coef = np.linalg.solve(np.stack([a, b], axis=1), rel.T).T
    rows = np.round(coef[:, 1]).astype(np.int64)
    cols = np.round(coef[:, 0] - 0.5 * (rows % 2)).astype(np.int64)
    rows -= rows.min() - (rows.min() % 2)
    if rows.min() != 0:
        # keep odd-row parity: renumber from an even row
        rows -= rows.min()
        cols = np.round(coef[:, 0] - 0.5 * ((rows + (rows.min() % 2)) % 2)).astype(np.int64)
    cols -= cols.min()
    n_rows = int(rows.max()) + 1
    n_cols = int(cols.max()) + 1
    if n_rows < 2 or n_cols < 2:
        raise CalibrationError("centers span fewer than 2 rows or 2 columns")

    par = rows % 2

    def model(theta):
        ox, oy, p, q, rot = theta
        x = cols * p + par * (p / 2)
        y = rows * q
        c, s = np.cos(rot), np.sin(rot)
        return np.stack([ox + c * x - s * y, oy + s * x + c * y], axis=1)

    # linear solve for an unconstrained affine lattice gives the starting point
    design = np.stack([np.ones_like(cols), cols + 0.5 * par, rows], axis=1).astype(float)
    sol, *_ = np.linalg.lstsq(design, pts, rcond=None)
    o0, a0, b0 = sol[0], sol[1], sol[2]
    rot0 = float(np.arctan2(a0[1], a0[0]))
    theta0 = np.array([o0[0], o0[1], np.hypot(*a0), float(np.hypot(*b0)), rot0])
    res = optimize.least_squares(lambda t: (model(t) - pts).ravel(), theta0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    ox, oy, p, q, rot = res.x
    resid = model(res.x) - pts
    rms = float(np.sqrt((resid**2).sum(axis=1).mean()))
    if rms > p / 4:
        raise FitQualityError(f"lattice fit residual {rms:.3f} px exceeds a quarter pitch")
    if abs(rot) < 1e-14:
        rot = 0.0
    grid = LensletGrid(
        pitch_u_um=p * pixel_pitch_um,
        row_pitch_v_um=q * pixel_pitch_um,
        rotation_rad=float(rot),
        origin_um=(ox * pixel_pitch_um, oy * pixel_pitch_um),
        rows=n_rows,
        cols=n_cols,
        pixel_pitch_um=pixel_pitch_um,
        sensor_shape_px=tuple(sensor_shape_px) if sensor_shape_px is not None else (1, 1),
        fit_rms_px=rms,
    )
    full = grid.nominal_centers().reshape(-1, 2) / pixel_pitch_um
    full[rows * n_cols + cols] = pts
    return replace(grid, centers_px=full)


def angular_offsets(angular_size) -> tuple[np.ndarray, np.ndarray]:
    nv, nu = angular_size
    return np.arange(nv) - (nv - 1) / 2, np.arange(nu) - (nu - 1) / 2


def decode(raw: RawCapture | np.ndarray, grid: LensletGrid, angular_size=(7, 7),
           spatial_size=None, extrapolation: str = "nearest") -> LightField:
    """Raw sensor image to 4D light field.

    Each angular sample is read bilinearly at ``center + (du, dv)`` pixels.
    The resulting hexagonal lattice of each perspective is resampled onto a
    square grid (lens pitch by row pitch, aligned with the lens rows) through
    the Delaunay interpolator used for fusion.
    """
    img = np.asarray(raw.image if isinstance(raw, RawCapture) else raw, dtype=float)
    if tuple(img.shape) != tuple(grid.sensor_shape_px):
        raise DomainError(f"raw image {img.shape} does not match sensor {grid.sensor_shape_px}")
    oy, ox = angular_offsets(angular_size)
    radius = 0.5 * min(grid.pitch_u_um, grid.row_pitch_v_um / np.cos(np.pi / 6)) / grid.pixel_pitch_um
    if max(np.abs(ox).max(), np.abs(oy).max()) + 0.5 > radius:
        raise ConfigurationError(f"angular size {tuple(angular_size)} exceeds the lens radius")
    centers = grid.centers_in_px().reshape(-1, 2)
    nv, nu = len(oy), len(ox)
    lens = np.empty((nv, nu, grid.rows, grid.cols))
    for iv, dv in enumerate(oy):
        for iu, du in enumerate(ox):
            lens[iv, iu] = bilinear(img, centers[:, 0] + du, centers[:, 1] + dv).reshape(grid.rows, grid.cols)
    positions = grid.to_lattice_frame(grid.centers_um().reshape(-1, 2))
    shape = tuple(spatial_size) if spatial_size is not None else (grid.rows, grid.cols)
    square = RegularGrid(shape, (grid.pitch_u_um, grid.row_pitch_v_um), (0.0, 0.0))
    interp = cached_interpolator(positions, square, extrapolation)
    data = np.empty((nv, nu) + shape)
    for iv in range(nv):
        for iu in range(nu):
            data[iv, iu] = interp.apply(lens[iv, iu])
    idx = getattr(raw, "capture_index", 0)
    return LightField(
        data,
        pitch_x_um=grid.pitch_u_um,
        pitch_y_um=grid.row_pitch_v_um,
        origin_um=(0.0, 0.0),
        lens_data=lens,
        lens_positions_um=positions.reshape(grid.rows, grid.cols, 2),
        valid_mask=interp.valid_mask.copy(),
        provenance=[f"decode(capture={idx})"],
    )
