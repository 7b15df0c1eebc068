"""Fidelity metrics and bar-chart resolution measurement."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DomainError
from .sensorsim import ChartMeta


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; ``inf`` for identical images."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"image sizes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Structural similarity (Gaussian-weighted), clipped to ``[0, 1]``."""
    from skimage.metrics import structural_similarity

    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"image sizes differ: {a.shape} vs {b.shape}")
    val = structural_similarity(a, b, data_range=data_range, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    return float(np.clip(val, 0.0, 1.0))


@dataclass
class ContrastCurve:
    frequencies: np.ndarray
    contrast: np.ndarray

    def __len__(self) -> int:
        return len(self.frequencies)

    def as_pairs(self) -> list[tuple[float, float]]:
        return [(float(f), float(c)) for f, c in zip(self.frequencies, self.contrast)]


def contrast_profile(image, meta: ChartMeta, pixel_pitch_um, origin_um=(0.0, 0.0),
                     column_margin: float = 0.1, min_samples: int = 4) -> ContrastCurve:
    """Michelson contrast per chart band.

    ``image[i, j]`` is taken to sit at ``origin_um + (j * pitch_x, i * pitch_y)``
    in chart coordinates. Within each band the bar region is averaged across
    its width and the profile is fitted with ``m + a cos(phi) + b sin(phi)``
    using the chart's known phase ``phi(y)``; the contrast is
    ``hypot(a, b) / m``, i.e. ``(max - min) / (max + min)`` of the fitted
    sinusoid. Fitting the known phase ignores aliased content at other
    frequencies, which a raw max/min reading would count as resolved bars.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise DomainError("chart image must be 2D")
    if np.ptp(img) <= 1e-12:
        raise DomainError("constant image carries no bars")
    if np.isscalar(pixel_pitch_um):
        px = py = float(pixel_pitch_um)
    else:
        px, py = (float(v) for v in pixel_pitch_um)
    h, w = img.shape
    x = origin_um[0] + np.arange(w) * px
    y = origin_um[1] + np.arange(h) * py
    x0, x1 = meta.x_range_um
    inset = column_margin * (x1 - x0)
    cols = (x >= x0 + inset) & (x <= x1 - inset)
    if not cols.any():
        raise DomainError("image does not overlap the chart's bar region")
    profile = img[:, cols].mean(axis=1)
    edges = np.asarray(meta.band_edges_um)
    freqs, contrast = [], []
    for k, f in enumerate(meta.band_freqs):
        sel = (y >= edges[k]) & (y < edges[k + 1])
        if sel.sum() < min_samples:
            continue
        phi = meta.phase(y[sel])
        design = np.stack([np.ones(sel.sum()), np.cos(phi), np.sin(phi)], axis=1)
        coef, *_ = np.linalg.lstsq(design, profile[sel], rcond=None)
        m = coef[0]
        amp = float(np.hypot(coef[1], coef[2]))
        freqs.append(f)
        contrast.append(float(np.clip(amp / m, 0.0, 1.0)) if m > 0 else 0.0)
    if not freqs:
        raise DomainError("no chart band overlaps the image")
    return ContrastCurve(np.asarray(freqs), np.asarray(contrast))


class CutoffWarning(UserWarning):
    pass


def frequency_cutoff(curve: ContrastCurve, threshold: float = 0.1) -> float:
    """Largest frequency with contrast at or above ``threshold``.

    Between the last passing band and the next band the crossing is located
    by linear interpolation. Returns 0 (with a ``CutoffWarning``) if no band
    passes.
    """
    f = np.asarray(curve.frequencies, dtype=float)
    c = np.asarray(curve.contrast, dtype=float)
    if len(f) == 0:
        raise DomainError("empty contrast curve")
    if np.any(np.diff(f) <= 0):
        raise DomainError("contrast curve frequencies must ascend")
    ok = np.flatnonzero(c >= threshold)
    if len(ok) == 0:
        warnings.warn("no band reaches the contrast threshold", CutoffWarning, stacklevel=2)
        return 0.0
    i = int(ok[-1])
    if i == len(f) - 1:
        return float(f[i])
    t = (c[i] - threshold) / (c[i] - c[i + 1])
    return float(f[i] + t * (f[i + 1] - f[i]))


@dataclass
class ResolutionReport:
    config_label: str
    psnr_db: float | None = None
    ssim: float | None = None
    cutoff_cycles_per_mm: float | None = None
    contrast_curve: list[tuple[float, float]] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": 1,
            "type": "ResolutionReport",
            "config_label": self.config_label,
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "cutoff_cycles_per_mm": self.cutoff_cycles_per_mm,
            "contrast_curve": [list(p) for p in self.contrast_curve],
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ResolutionReport:
        return cls(
            d["config_label"], d.get("psnr_db"), d.get("ssim"), d.get("cutoff_cycles_per_mm"),
            [tuple(p) for p in d.get("contrast_curve", [])], dict(d.get("extra", {})),
        )
