"""Synthetic micro-lens sensor: white images and micro-shifted raw captures.

Scenes live on the sensor plane in sensor micrometers. A capture taken with
the sensor displaced by ``+s`` records, behind each lens, the scene at
``lens_center - s``. Every pixel belongs to one lens; the pixels that the
decoder's bilinear stencils touch are always owned by the lens they serve, so
a noiseless flat scene decodes back to exact lens-center samples.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ._sampling import bilinear, rng_for
from .core import LensletGrid, RawCapture, ShiftSchedule
from .errors import ConfigurationError, DomainError

SCENE_KINDS = ("test_chart", "natural_image", "constant", "linear_ramp")


@dataclass(frozen=True)
class ChartMeta:
    """Frequency-vs-position annotation of a chirped horizontal-bar chart.

    Bars are horizontal, so the profile runs along y. The local frequency
    grows linearly from 0 at ``y_start_um`` to ``max_freq_cycles_per_mm`` at
    ``y_start_um + length_um``.
    """

    y_start_um: float
    length_um: float
    max_freq_cycles_per_mm: float
    x_range_um: tuple[float, float]
    band_edges_um: tuple[float, ...]
    band_freqs: tuple[float, ...]
    band_width_cycles_per_mm: float

    def local_frequency(self, y_um) -> np.ndarray:
        t = np.clip((np.asarray(y_um, dtype=float) - self.y_start_um) / self.length_um, 0.0, 1.0)
        return self.max_freq_cycles_per_mm * t

    def phase(self, y_um) -> np.ndarray:
        """Bar phase in radians; ``cos(phase)`` is the bar pattern."""
        d = np.clip(np.asarray(y_um, dtype=float) - self.y_start_um, 0.0, self.length_um)
        rate = self.max_freq_cycles_per_mm / 1000.0 / self.length_um
        return np.pi * rate * d**2

    def scaled(self, factor: float, about_um: tuple[float, float] = (0.0, 0.0)) -> ChartMeta:
        """Annotation of the same chart with its physical extent scaled by ``factor``."""
        ox, oy = about_um
        sy = lambda y: oy + (y - oy) * factor  # noqa: E731
        return ChartMeta(
            y_start_um=sy(self.y_start_um),
            length_um=self.length_um * factor,
            max_freq_cycles_per_mm=self.max_freq_cycles_per_mm / factor,
            x_range_um=tuple(ox + (x - ox) * factor for x in self.x_range_um),
            band_edges_um=tuple(sy(y) for y in self.band_edges_um),
            band_freqs=tuple(f / factor for f in self.band_freqs),
            band_width_cycles_per_mm=self.band_width_cycles_per_mm / factor,
        )

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["x_range_um"] = list(self.x_range_um)
        d["band_edges_um"] = list(self.band_edges_um)
        d["band_freqs"] = list(self.band_freqs)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ChartMeta:
        return cls(
            y_start_um=d["y_start_um"],
            length_um=d["length_um"],
            max_freq_cycles_per_mm=d["max_freq_cycles_per_mm"],
            x_range_um=tuple(d["x_range_um"]),
            band_edges_um=tuple(d["band_edges_um"]),
            band_freqs=tuple(d["band_freqs"]),
            band_width_cycles_per_mm=d["band_width_cycles_per_mm"],
        )


@dataclass(eq=False)
class SceneModel:
    """Ground-truth radiance on the sensor plane, stored as a raster.

    Every perspective sees the same raster, translated by ``disparity_um`` per
    angular step (0 for an in-focus fronto-parallel plane). Values between
    raster pixels are bilinear, so piecewise-linear scenes are represented
    exactly.
    """

    image: np.ndarray
    pixel_um: float
    origin_um: tuple[float, float] = (0.0, 0.0)
    kind: str = "natural_image"
    disparity_um: float = 0.0
    chart: ChartMeta | None = None
    _blurred: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=float)
        if self.image.ndim != 2 or min(self.image.shape) < 2:
            raise DomainError("scene raster must be 2D with at least 2x2 pixels")
        if self.pixel_um <= 0:
            raise DomainError("scene pixel size must be positive")
        if self.kind not in SCENE_KINDS:
            raise ConfigurationError(f"unknown scene kind {self.kind!r}")
        self.origin_um = tuple(float(v) for v in self.origin_um)

    @property
    def extent_um(self) -> tuple[float, float]:
        h, w = self.image.shape
        return ((w - 1) * self.pixel_um, (h - 1) * self.pixel_um)

    @property
    def bounds_um(self) -> tuple[float, float, float, float]:
        """``(xmin, ymin, xmax, ymax)`` covered by the raster."""
        w, h = self.extent_um
        return (self.origin_um[0], self.origin_um[1], self.origin_um[0] + w, self.origin_um[1] + h)

    def blurred(self, psf_sigma_um: float) -> np.ndarray:
        if psf_sigma_um <= 0:
            return self.image
        key = float(psf_sigma_um)
        if key not in self._blurred:
            base = self.image.flat[0]
            # blurring the offset image keeps constant scenes exactly constant
            self._blurred[key] = base + ndimage.gaussian_filter(
                self.image - base, psf_sigma_um / self.pixel_um, mode="reflect", truncate=4.0
            )
        return self._blurred[key]

    def sample(self, points_um, psf_sigma_um: float = 0.0, angular_offset=(0.0, 0.0)) -> np.ndarray:
        """Radiance at sensor positions ``points_um`` (``(..., 2)`` array)."""
        pts = np.asarray(points_um, dtype=float)
        if self.disparity_um:
            pts = pts + self.disparity_um * np.asarray(angular_offset, dtype=float)
        fx = (pts[..., 0] - self.origin_um[0]) / self.pixel_um
        fy = (pts[..., 1] - self.origin_um[1]) / self.pixel_um
        h, w = self.image.shape
        tol = 1e-9
        if fx.size and (fx.min() < -tol or fy.min() < -tol or fx.max() > w - 1 + tol or fy.max() > h - 1 + tol):
            raise DomainError("scene does not cover the requested sample positions")
        return bilinear(self.blurred(psf_sigma_um), fx, fy)


def _raster_axes(extent_um, pixel_um, origin_um):
    w_um, h_um = extent_um
    nx = int(round(w_um / pixel_um)) + 1
    ny = int(round(h_um / pixel_um)) + 1
    x = origin_um[0] + np.arange(nx) * pixel_um
    y = origin_um[1] + np.arange(ny) * pixel_um
    return x, y


def constant_scene(value: float, extent_um, origin_um=(0.0, 0.0), pixel_um: float = 4.0) -> SceneModel:
    x, y = _raster_axes(extent_um, pixel_um, origin_um)
    return SceneModel(np.full((len(y), len(x)), float(value)), pixel_um, origin_um, kind="constant")


def linear_ramp_scene(a: float, b: float, c: float, extent_um, origin_um=(0.0, 0.0), pixel_um: float = 4.0) -> SceneModel:
    """Scene ``f(x, y) = a x + b y + c`` with ``x, y`` in sensor micrometers."""
    x, y = _raster_axes(extent_um, pixel_um, origin_um)
    img = a * x[None, :] + b * y[:, None] + c
    return SceneModel(img, pixel_um, origin_um, kind="linear_ramp")


def _natural_raster(shape, pixel_um, seed, correlation_um, slope):
    rng = rng_for(seed, 10_000)
    ny, nx = shape
    fy = np.fft.fftfreq(ny, d=pixel_um)[:, None]
    fx = np.fft.rfftfreq(nx, d=pixel_um)[None, :]
    f = np.hypot(fx, fy)
    f0 = 1.0 / correlation_um
    amp = 1.0 / (f + f0) ** slope
    # roll off well before the raster Nyquist frequency
    amp *= np.exp(-((f / (0.35 / pixel_um)) ** 4))
    spec = amp * (rng.normal(size=f.shape) + 1j * rng.normal(size=f.shape))
    img = np.fft.irfft2(spec, s=shape)
    lo, hi = np.percentile(img, [1, 99])
    return np.clip(0.1 + 0.8 * (img - lo) / (hi - lo), 0.0, 1.0)


def make_natural_scene(
    extent_um,
    origin_um=(0.0, 0.0),
    pixel_um: float = 1.0,
    seed: int = 0,
    correlation_um: float = 25.0,
    slope: float = 1.0,
    disparity_um: float = 0.0,
) -> SceneModel:
    """Random texture with a power-law spectrum, values in ``[0, 1]``."""
    x, y = _raster_axes(extent_um, pixel_um, origin_um)
    img = _natural_raster((len(y), len(x)), pixel_um, seed, correlation_um, slope)
    return SceneModel(img, pixel_um, origin_um, kind="natural_image", disparity_um=disparity_um)


def make_test_chart(
    max_freq_cycles_per_mm: float,
    extent_um,
    origin_um=(0.0, 0.0),
    pixel_um: float = 0.5,
    n_bands: int = 48,
    bar_fraction: float = 0.5,
    margin_fraction: float = 0.08,
    texture_seed: int = 0,
) -> SceneModel:
    """Chirped horizontal-bar chart framed by texture.

    The bars occupy the central ``bar_fraction`` of the width; the strips on
    either side hold random texture so that the chart can also be registered.
    """
    nyquist = 1000.0 / (2.0 * pixel_um)
    if max_freq_cycles_per_mm >= nyquist:
        raise DomainError(
            f"{max_freq_cycles_per_mm} cycles/mm exceeds the rendering Nyquist limit {nyquist:.1f}"
        )
    if max_freq_cycles_per_mm <= 0:
        raise DomainError("maximum chart frequency must be positive")
    w_um, h_um = extent_um
    y0 = origin_um[1] + margin_fraction * h_um
    length = (1 - 2 * margin_fraction) * h_um
    x0 = origin_um[0] + 0.5 * (1 - bar_fraction) * w_um
    x1 = x0 + bar_fraction * w_um
    edges = y0 + np.linspace(0.0, length, n_bands + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    freqs = max_freq_cycles_per_mm * (centers - y0) / length
    band_h = length / n_bands
    # a band must hold at least one full cycle to carry a contrast reading
    keep = freqs * band_h / 1000.0 >= 1.0
    first = int(np.argmax(keep)) if keep.any() else n_bands
    meta = ChartMeta(
        y_start_um=float(y0),
        length_um=float(length),
        max_freq_cycles_per_mm=float(max_freq_cycles_per_mm),
        x_range_um=(float(x0), float(x1)),
        band_edges_um=tuple(float(e) for e in edges[first:]),
        band_freqs=tuple(float(f) for f in freqs[first:]),
        band_width_cycles_per_mm=float(max_freq_cycles_per_mm / n_bands),
    )
    x, y = _raster_axes(extent_um, pixel_um, origin_um)
    img = _natural_raster((len(y), len(x)), pixel_um, texture_seed, 25.0, 1.0)
    bars = 0.5 + 0.5 * np.cos(meta.phase(y))
    bars[y > y0 + length] = 0.5
    inside = (x >= x0) & (x <= x1)
    img[:, inside] = bars[:, None]
    return SceneModel(img, pixel_um, origin_um, kind="test_chart", chart=meta)


def scene_bounds_for(grid: LensletGrid, shifts_um: Sequence = ((0.0, 0.0),), margin_um: float = 20.0):
    """``(origin_um, extent_um)`` of a scene covering every lens under every shift."""
    centers = grid.centers_um().reshape(-1, 2)
    s = np.asarray(shifts_um, dtype=float).reshape(-1, 2)
    lo = centers.min(axis=0) - s.max(axis=0) - margin_um
    hi = centers.max(axis=0) - s.min(axis=0) + margin_um
    return (float(lo[0]), float(lo[1])), (float(hi[0] - lo[0]), float(hi[1] - lo[1]))


@dataclass(frozen=True)
class CaptureConfig:
    psf_sigma_um: float = 1.5
    noise_sigma: float = 0.005
    vignette_sigma_um: float = 2.0
    actuation_error_um: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("psf_sigma_um", "noise_sigma", "vignette_sigma_um", "actuation_error_um"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CaptureConfig:
        return cls(**d)


class _Layout:
    """Pixel-to-lens assignment of a sensor."""

    def __init__(self, grid: LensletGrid, angular_size: tuple[int, int]):
        h, w = grid.sensor_shape_px
        centers = grid.centers_in_px().reshape(-1, 2)
        tree = cKDTree(centers)
        yy, xx = np.mgrid[0:h, 0:w]
        pix = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(float)
        dist = np.empty(len(pix))
        owner = np.empty(len(pix), dtype=np.int64)
        step = 1 << 20
        for s in range(0, len(pix), step):
            dist[s : s + step], owner[s : s + step] = tree.query(pix[s : s + step])
        self.voronoi_dist_px = dist.reshape(h, w)
        owner = owner.reshape(h, w)

        # hand each lens the block of pixels its decode stencils read
        nv, nu = angular_size
        ox = np.arange(nu) - (nu - 1) / 2
        oy = np.arange(nv) - (nv - 1) / 2
        bx = np.floor(centers[:, 0] + ox[0]).astype(np.int64)
        by = np.floor(centers[:, 1] + oy[0]).astype(np.int64)
        ar_x = np.arange(nu + 1)
        ar_y = np.arange(nv + 1)
        cols = bx[:, None, None] + ar_x[None, None, :]
        rows = by[:, None, None] + ar_y[None, :, None]
        cols, rows = np.broadcast_arrays(cols, rows)
        ids = np.broadcast_to(np.arange(len(centers))[:, None, None], cols.shape)
        ok = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
        owner[rows[ok], cols[ok]] = ids[ok]
        self.owner = owner
        self.offset_px = np.stack([xx - centers[owner, 0], yy - centers[owner, 1]], axis=-1)


_layout_cache: list[tuple[LensletGrid, tuple[int, int], _Layout]] = []


def _layout(grid: LensletGrid, angular_size) -> _Layout:
    angular_size = tuple(int(v) for v in angular_size)
    for g, a, lay in _layout_cache:
        if g is grid and a == angular_size:
            return lay
    lay = _Layout(grid, angular_size)
    _layout_cache.append((grid, angular_size, lay))
    del _layout_cache[:-4]
    return lay


def render_white_image(grid: LensletGrid, cfg: CaptureConfig = CaptureConfig()) -> RawCapture:
    """Picture of a uniformly white scene: one vignetting blob per lens."""
    lay = _layout(grid, (1, 1))
    sigma_px = max(cfg.vignette_sigma_um, 1e-6) / grid.pixel_pitch_um
    img = np.exp(-0.5 * (lay.voronoi_dist_px / sigma_px) ** 2)
    rng = rng_for(cfg.rng_seed, 0)
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
    img = np.clip(img, 0.0, 1.0)
    return RawCapture(
        img,
        (0.0, 0.0),
        capture_index=0,
        actual_shift_um=(0.0, 0.0),
        metadata={"kind": "white", "config": cfg.to_dict(), "seed": cfg.rng_seed},
    )


def simulate_capture(
    scene: SceneModel,
    grid: LensletGrid,
    shift_um,
    cfg: CaptureConfig = CaptureConfig(),
    capture_index: int = 1,
    angular_size=(7, 7),
) -> RawCapture:
    """Raw frame with the sensor translated by ``shift_um`` (plus actuation error)."""
    rng = rng_for(cfg.rng_seed, capture_index)
    error = rng.normal(0.0, 1.0, 2) * cfg.actuation_error_um
    commanded = np.asarray(shift_um, dtype=float)
    actual = commanded + error
    lay = _layout(grid, angular_size)
    centers = grid.centers_um().reshape(-1, 2)
    if scene.disparity_um:
        pos = centers[lay.owner] - actual
        img = scene.sample(pos, cfg.psf_sigma_um, angular_offset=lay.offset_px)
    else:
        vals = scene.sample(centers - actual, cfg.psf_sigma_um)
        img = vals[lay.owner]
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
    img = np.clip(img, 0.0, 1.0)
    return RawCapture(
        img,
        tuple(commanded),
        capture_index=capture_index,
        actual_shift_um=tuple(actual),
        metadata={
            "kind": "capture",
            "config": cfg.to_dict(),
            "seed": cfg.rng_seed,
            "angular_size": list(angular_size),
        },
    )


def simulate_sequence(
    scene: SceneModel,
    grid: LensletGrid,
    schedule: ShiftSchedule,
    cfg: CaptureConfig = CaptureConfig(),
    angular_size=(7, 7),
) -> list[RawCapture]:
    """One capture per schedule entry; ``capture_index`` is the schedule label."""
    return [
        simulate_capture(scene, grid, shift, cfg, capture_index=label, angular_size=angular_size)
        for shift, label in zip(schedule.shifts_um, schedule.labels)
    ]

