"""Sub-pixel translation between light fields by phase correlation.

``phase_correlate(a, b)`` returns ``d`` such that ``b(x) ~ a(x - d)``: a
positive ``dx`` means the content of ``b`` sits further right than in ``a``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import LightField
from .errors import DegenerateSignalError, DomainError, RegistrationError

MIN_SIZE = 16


@dataclass
class RegistrationConfig:
    upsample: int = 100
    window: str = "hann"
    lowpass: float | None = 0.15  # spectral Gaussian width as a fraction of Nyquist
    min_peak_ratio: float = 2.0

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RegistrationConfig:
        return cls(**d)


@dataclass
class CorrelationResult:
    dx_px: float
    dy_px: float
    peak_ratio: float


@dataclass
class ShiftEstimate:
    dx_px: float
    dy_px: float
    per_perspective: list[dict[str, Any]] = field(default_factory=list)
    dispersion: float = 0.0
    accepted: int = 0

    @property
    def shift(self) -> tuple[float, float]:
        return (self.dx_px, self.dy_px)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": 1,
            "type": "ShiftEstimate",
            "dx_px": self.dx_px,
            "dy_px": self.dy_px,
            "dispersion": self.dispersion,
            "accepted": self.accepted,
            "per_perspective": self.per_perspective,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ShiftEstimate:
        return cls(d["dx_px"], d["dy_px"], list(d.get("per_perspective", [])), d.get("dispersion", 0.0),
                   d.get("accepted", 0))


def _window(shape, kind: str) -> np.ndarray:
    h, w = shape
    if kind == "none":
        return np.ones(shape)
    if kind == "hann":
        return np.outer(np.hanning(h), np.hanning(w))
    if kind == "tukey":
        from scipy.signal.windows import tukey

        return np.outer(tukey(h, 0.5), tukey(w, 0.5))
    raise DomainError(f"unknown window {kind!r}")


def _upsampled_dft(spec: np.ndarray, region: int, factor: int, offset) -> np.ndarray:
    """Inverse DFT of ``spec`` on a ``region x region`` patch with spacing ``1/factor``.

    ``offset`` is the ``(row, col)`` position (in original pixels) of the patch's
    first sample. This is the matrix-product form of the zoomed inverse DFT.
    """
    h, w = spec.shape
    fr = np.fft.fftfreq(h)[:, None]
    fc = np.fft.fftfreq(w)[None, :]
    rows = offset[0] + np.arange(region) / factor
    cols = offset[1] + np.arange(region) / factor
    ker_r = np.exp(2j * np.pi * rows[:, None] * fr.T)  # (region, h)
    ker_c = np.exp(2j * np.pi * fc.T * cols[None, :])  # (w, region)
    return ker_r @ spec @ ker_c


def phase_correlate(a, b, upsample: int = 100, window: str = "hann", lowpass: float | None = 0.15,
                    return_quality: bool = False, refine_passes: int = 2):
    """Translation of ``b`` relative to ``a`` in pixels, ``(dx, dy)``.

    Both images are mean-subtracted and apodized; the normalized cross-power
    spectrum is optionally tapered by a Gaussian (which keeps the peak sharp
    while de-emphasising aliased high frequencies). The integer peak is
    refined on a ``1/upsample`` grid by a local inverse DFT. Apodization
    biases large shifts toward zero, so ``refine_passes`` times ``b`` is
    moved back by the current estimate and only the residual is measured.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"image sizes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < MIN_SIZE:
        raise DomainError(f"images must be 2D and at least {MIN_SIZE}x{MIN_SIZE}")
    if upsample < 1:
        raise DomainError("upsample factor must be >= 1")
    for img in (a, b):
        if not np.isfinite(img).all():
            raise DomainError("images must be finite")
        if np.ptp(img) <= 1e-12 * max(1.0, float(np.abs(img).max())):
            raise DegenerateSignalError("cannot register a constant image")
    win = _window(a.shape, window)
    dx, dy, ratio = _correlate_once(a, b, win, upsample, lowpass)
    for _ in range(refine_passes):
        if dx == 0.0 and dy == 0.0:
            break
        rx, ry, _ = _correlate_once(a, fourier_shift(b, -dx, -dy), win, upsample, lowpass)
        dx, dy = dx + rx, dy + ry
    if return_quality:
        return CorrelationResult(float(dx), float(dy), ratio)
    return (float(dx), float(dy))


def _correlate_once(a, b, win, upsample, lowpass):
    fa = np.fft.fft2((a - a.mean()) * win)
    fb = np.fft.fft2((b - b.mean()) * win)
    cross = np.conj(fa) * fb
    mag = np.abs(cross)
    eps = 1e-12 * mag.max()
    spec = cross / (mag + eps)
    if lowpass:
        fr = np.fft.fftfreq(a.shape[0])[:, None] / 0.5
        fc = np.fft.fftfreq(a.shape[1])[None, :] / 0.5
        spec = spec * np.exp(-0.5 * (fr**2 + fc**2) / lowpass**2)
    corr = np.fft.ifft2(spec).real
    h, w = corr.shape
    k = int(np.argmax(corr))
    pr, pc = divmod(k, w)
    peak = corr[pr, pc]
    # second peak: maximum outside a small neighborhood of the main one
    rr = np.minimum(np.abs(np.arange(h) - pr), h - np.abs(np.arange(h) - pr))[:, None]
    cc = np.minimum(np.abs(np.arange(w) - pc), w - np.abs(np.arange(w) - pc))[None, :]
    guard = max(2, int(np.ceil(2.0 / lowpass))) if lowpass else 2
    far = (rr > guard) | (cc > guard)
    second = corr[far].max() if far.any() else 0.0
    ratio = float(peak / second) if second > 0 else float("inf")
    dy = pr - h if pr > h // 2 else pr
    dx = pc - w if pc > w // 2 else pc
    dy, dx = float(dy), float(dx)
    if upsample > 1:
        # two-stage zoom: coarse 1/2 px then fine 1/upsample px
        for factor, half in ((2, 1.5), (upsample, 1.5 / 2)):
            region = int(np.ceil(2 * half * factor)) + 1
            start = (dy - (region // 2) / factor, dx - (region // 2) / factor)
            z = _upsampled_dft(spec, region, factor, start).real
            i, j = np.unravel_index(int(np.argmax(z)), z.shape)
            dy = start[0] + i / factor
            dx = start[1] + j / factor
    return dx, dy, ratio


def estimate_lf_shift(reference: LightField, moving: LightField, cfg: RegistrationConfig | None = None,
                      perspectives=None, threads: int = 1) -> ShiftEstimate:
    """Mean phase-correlation shift over corresponding perspectives.

    Perspectives whose correlation peak is less than ``min_peak_ratio`` times
    the strongest secondary peak are excluded. The mean is accumulated in
    sorted perspective order, so it does not depend on ``threads``.
    """
    cfg = cfg or RegistrationConfig()
    if reference.angular_size != moving.angular_size or reference.spatial_size != moving.spatial_size:
        raise DomainError("light fields differ in size")
    nv, nu = reference.angular_size
    jobs = sorted(perspectives) if perspectives is not None else [(v, u) for v in range(nv) for u in range(nu)]

    def run(job):
        v, u = job
        try:
            r = phase_correlate(reference.data[v, u], moving.data[v, u], cfg.upsample, cfg.window, cfg.lowpass,
                                return_quality=True)
        except DegenerateSignalError:
            return {"v": v, "u": u, "dx_px": None, "dy_px": None, "peak_ratio": 0.0, "accepted": False}
        ok = bool(r.peak_ratio >= cfg.min_peak_ratio)
        return {"v": v, "u": u, "dx_px": r.dx_px, "dy_px": r.dy_px, "peak_ratio": r.peak_ratio, "accepted": ok}

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    acc = [r for r in rows if r["accepted"]]
    if not acc:
        raise RegistrationError("every perspective failed the correlation peak-quality gate")
    dx = np.array([r["dx_px"] for r in acc])
    dy = np.array([r["dy_px"] for r in acc])
    mx, my = float(np.mean(dx)), float(np.mean(dy))
    disp = float(np.sqrt(np.mean((dx - mx) ** 2 + (dy - my) ** 2)))
    return ShiftEstimate(mx, my, rows, disp, len(acc))


def shift_to_um(est: ShiftEstimate, lf: LightField) -> tuple[float, float]:
    return (est.dx_px * lf.pitch_x_um, est.dy_px * lf.pitch_y_um)


def fourier_shift(image: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Circularly translate ``image`` by ``(dx, dy)`` pixels via the Fourier shift theorem."""
    img = np.asarray(image, dtype=float)
    fr = np.fft.fftfreq(img.shape[0])[:, None]
    fc = np.fft.fftfreq(img.shape[1])[None, :]
    return np.fft.ifft2(np.fft.fft2(img) * np.exp(-2j * np.pi * (fr * dy + fc * dx))).real
