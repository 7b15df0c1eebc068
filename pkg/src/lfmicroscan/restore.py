"""Deconvolution after fusion, and the multi-image MAP super-resolution baseline."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.signal import fftconvolve

from .errors import ConfigurationError, DomainError, StepSizeError

PSF_KINDS = ("gaussian", "disk", "custom")


@dataclass(frozen=True, eq=False)
class PsfModel:
    """Point spread function in output-image pixels.

    Gaussian kernels are truncated at 4 sigma; disks are anti-aliased by
    supersampling. Every kernel is normalized to unit sum.
    """

    kind: str = "gaussian"
    sigma_px: float = 1.0
    radius_px: float = 1.0
    kernel: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in PSF_KINDS:
            raise ConfigurationError(f"unknown psf kind {self.kind!r}")
        if self.kind == "custom":
            if self.kernel is None:
                raise ConfigurationError("custom psf needs a kernel")
            k = np.asarray(self.kernel, dtype=float)
            if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
                raise ConfigurationError("custom kernel must be 2D with odd sides")
            if (k < 0).any() or k.sum() <= 0:
                raise ConfigurationError("custom kernel must be non-negative with positive sum")
            object.__setattr__(self, "kernel", k / k.sum())
        elif self.kind == "gaussian" and self.sigma_px < 0:
            raise ConfigurationError("sigma_px must be >= 0")
        elif self.kind == "disk" and self.radius_px < 0:
            raise ConfigurationError("radius_px must be >= 0")

    @classmethod
    def delta(cls) -> PsfModel:
        return cls("custom", kernel=np.ones((1, 1)))

    def array(self) -> np.ndarray:
        if self.kind == "custom":
            return self.kernel
        if self.kind == "gaussian":
            if self.sigma_px == 0:
                return np.ones((1, 1))
            r = int(np.ceil(4 * self.sigma_px))
            t = np.arange(-r, r + 1)
            g = np.exp(-0.5 * (t / self.sigma_px) ** 2)
            k = np.outer(g, g)
            return k / k.sum()
        r = int(np.ceil(self.radius_px))
        if r == 0:
            return np.ones((1, 1))
        sub = 8
        t = (np.arange((2 * r + 1) * sub) + 0.5) / sub - (r + 0.5)
        inside = (t[:, None] ** 2 + t[None, :] ** 2) <= self.radius_px**2
        k = inside.reshape(2 * r + 1, sub, 2 * r + 1, sub).mean(axis=(1, 3))
        return k / k.sum()

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "sigma_px": self.sigma_px,
            "radius_px": self.radius_px,
            "kernel": None if self.kernel is None else np.asarray(self.kernel).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PsfModel:
        k = d.get("kernel")
        return cls(d.get("kind", "gaussian"), d.get("sigma_px", 1.0), d.get("radius_px", 1.0),
                   None if k is None else np.asarray(k, dtype=float))


class _ReflectConv:
    """Convolution with half-sample symmetric padding and its exact adjoint.

    For a point-symmetric kernel every input pixel's weights sum to one, so
    ``sum(forward(x)) == sum(x)`` up to rounding.
    """

    def __init__(self, shape, kernel: np.ndarray):
        self.shape = tuple(shape)
        self.kernel = np.asarray(kernel, dtype=float)
        ry, rx = self.kernel.shape[0] // 2, self.kernel.shape[1] // 2
        if ry >= self.shape[0] or rx >= self.shape[1]:
            raise DomainError("psf is larger than the image")
        self.pad = ((ry, ry), (rx, rx))
        h, w = self.shape
        my = np.pad(np.arange(h), (ry, ry), mode="symmetric")
        mx = np.pad(np.arange(w), (rx, rx), mode="symmetric")
        self.fold_index = (my[:, None] * w + mx[None, :]).ravel()
        self.flipped = self.kernel[::-1, ::-1]
        self.trivial = self.kernel.shape == (1, 1)

    # Both operators convolve ``x - c`` and add ``c`` back (``c`` = first pixel).
    # With a unit-sum kernel this is the same linear map, but constant images
    # pass through untouched instead of picking up FFT rounding.
    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.trivial:
            return x * self.kernel[0, 0]
        c = x.flat[0]
        return c + fftconvolve(np.pad(x - c, self.pad, mode="symmetric"), self.kernel, mode="valid")

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        if self.trivial:
            return y * self.kernel[0, 0]
        c = y.flat[0]
        full = fftconvolve(y - c, self.flipped, mode="full")
        return c + np.bincount(self.fold_index, full.ravel(), self.shape[0] * self.shape[1]).reshape(self.shape)


def blur(image, psf: PsfModel) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    return _ReflectConv(img.shape, psf.array()).forward(img)


def richardson_lucy(image, psf: PsfModel, iterations: int = 30, eps: float = 1e-12) -> np.ndarray:
    """Multiplicative Richardson-Lucy deconvolution starting from the image itself."""
    y = np.asarray(image, dtype=float)
    if y.ndim != 2:
        raise DomainError("image must be 2D")
    if (y < 0).any():
        raise DomainError("richardson_lucy needs a non-negative image")
    if iterations < 0:
        raise ConfigurationError("iterations must be >= 0")
    op = _ReflectConv(y.shape, psf.array())
    norm = op.adjoint(np.ones_like(y))
    x = y.copy()
    for _ in range(iterations):
        est = op.forward(x)
        ratio = np.where(est > eps, y / np.maximum(est, eps), 1.0)  # vanishing estimate: leave x alone
        x = x * op.adjoint(ratio) / norm
        np.maximum(x, 0.0, out=x)
    return x


def _otf(kernel: np.ndarray, shape) -> np.ndarray:
    """Transfer function of ``kernel`` centered at the origin of a ``shape`` grid."""
    pad = np.zeros(shape)
    kh, kw = kernel.shape
    pad[:kh, :kw] = kernel
    pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.rfft2(pad)


def wiener_deconvolve(image, psf: PsfModel, noise_to_signal: float = 1e-3) -> np.ndarray:
    """Frequency-domain Wiener filter ``conj(K) / (|K|^2 + nsr)`` on a reflect-padded image."""
    y = np.asarray(image, dtype=float)
    if y.ndim != 2:
        raise DomainError("image must be 2D")
    if noise_to_signal < 0:
        raise ConfigurationError("noise_to_signal must be >= 0")
    k = psf.array()
    if np.isinf(noise_to_signal):
        return np.zeros_like(y)
    ry, rx = max(k.shape[0], 8), max(k.shape[1], 8)
    padded = np.pad(y, ((ry, ry), (rx, rx)), mode="symmetric")
    K = _otf(k, padded.shape)
    den = np.abs(K) ** 2 + noise_to_signal
    H = np.where(den > 0, np.conj(K) / np.where(den > 0, den, 1.0), 0.0)
    out = np.fft.irfft2(np.fft.rfft2(padded) * H, s=padded.shape)
    return out[ry:-ry, rx:-rx]


@dataclass(frozen=True)
class SrConfig:
    prior_weight: float = 0.01
    iterations: int = 200
    step_size: float | None = None  # None: 1 / Lipschitz constant of the gradient
    upscale_factor: int = 4

    def __post_init__(self):
        if self.prior_weight < 0:
            raise ConfigurationError("prior_weight must be >= 0")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigurationError("step_size must be > 0")
        if self.upscale_factor < 1:
            raise ConfigurationError("upscale_factor must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SrConfig:
        return cls(**d)


def _sampling_matrix(hr_shape, points_yx) -> sparse.csr_matrix:
    """Bilinear interpolation of a ``hr_shape`` image at fractional ``(row, col)`` points (clamped)."""
    h, w = hr_shape
    r = np.clip(points_yx[:, 0], 0.0, h - 1.0)
    c = np.clip(points_yx[:, 1], 0.0, w - 1.0)
    r0 = np.minimum(np.floor(r).astype(np.int64), max(h - 2, 0))
    c0 = np.minimum(np.floor(c).astype(np.int64), max(w - 2, 0))
    tr, tc = r - r0, c - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    n = len(r)
    rows = np.repeat(np.arange(n), 4)
    cols = np.stack([r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1], axis=1).ravel()
    vals = np.stack([(1 - tr) * (1 - tc), (1 - tr) * tc, tr * (1 - tc), tr * tc], axis=1).ravel()
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, h * w))


def _gradient_operator(shape) -> sparse.csr_matrix:
    """Forward differences along x and y with zero flux across the border."""
    h, w = shape

    def diff(n):
        d = sparse.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format="lil")
        d[n - 1, n - 1] = 0.0
        return d.tocsr()

    dx = sparse.kron(sparse.identity(h), diff(w))
    dy = sparse.kron(diff(h), sparse.identity(w))
    return sparse.vstack([dx, dy]).tocsr()


class SrProblem:
    """Quadratic MAP objective ``sum_k ||A_k x - y_k||^2 + lam ||grad x||^2``.

    ``y_k(p) = x_ref(p - d_k)`` for shifts ``d_k = (dx, dy)`` in input pixels;
    ``A_k`` samples the high-resolution estimate bilinearly at the shifted
    input-pixel positions.
    """

    def __init__(self, images: Sequence[np.ndarray], shifts: Sequence, factor: int, prior_weight: float):
        ims = [np.asarray(im, dtype=float) for im in images]
        if not ims:
            raise DomainError("need at least one input image")
        shape = ims[0].shape
        if any(im.shape != shape for im in ims):
            raise DomainError("input images differ in size")
        if len(shifts) != len(ims):
            raise DomainError("one shift per image is required")
        self.lr_shape = shape
        self.factor = int(factor)
        self.hr_shape = (shape[0] * self.factor, shape[1] * self.factor)
        self.lam = float(prior_weight)
        ii, jj = np.mgrid[0 : shape[0], 0 : shape[1]]
        blocks = []
        for dx, dy in shifts:
            pts = np.stack([(ii - dy).ravel(), (jj - dx).ravel()], axis=1) * self.factor
            blocks.append(_sampling_matrix(self.hr_shape, pts.astype(float)))
        self.A = sparse.vstack(blocks).tocsr()
        self.y = np.concatenate([im.ravel() for im in ims])
        self.D = _gradient_operator(self.hr_shape)

    def cost(self, x: np.ndarray) -> float:
        x = x.ravel()
        r = self.A @ x - self.y
        g = self.D @ x
        return float(r @ r + self.lam * (g @ g))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = x.ravel()
        return 2.0 * (self.A.T @ (self.A @ x - self.y)) + 2.0 * self.lam * (self.D.T @ (self.D @ x))

    def hessian_vec(self, v: np.ndarray) -> np.ndarray:
        v = v.ravel()
        return 2.0 * (self.A.T @ (self.A @ v)) + 2.0 * self.lam * (self.D.T @ (self.D @ v))

    def lipschitz(self, iterations: int = 50, seed: int = 0) -> float:
        """Upper estimate of the largest eigenvalue of the objective's Hessian."""
        v = np.random.default_rng(seed).normal(size=self.hr_shape[0] * self.hr_shape[1])
        lam = 0.0
        for _ in range(iterations):
            v /= np.linalg.norm(v)
            hv = self.hessian_vec(v)
            lam = float(v @ hv)
            v = hv
        return lam * 1.05


def cubic_upsample(image, factor: int, shift=(0.0, 0.0)) -> np.ndarray:
    """Cubic-spline interpolation onto a grid ``factor`` times finer (sample ``I`` at ``I / factor``)."""
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    r = np.arange(h * factor) / factor - shift[1]
    c = np.arange(w * factor) / factor - shift[0]
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return ndimage.map_coordinates(img, [rr, cc], order=3, mode="nearest")


@dataclass
class SrResult:
    image: np.ndarray
    costs: list[float]
    step_size: float


def bayesian_sr(perspectives: Sequence[np.ndarray], shifts: Sequence, cfg: SrConfig | None = None,
                return_trace: bool = False):
    """Gaussian-prior MAP super-resolution by fixed-step gradient descent.

    Starts from a cubic upsampling of the first image. Stops with
    ``StepSizeError`` if the cost rises five iterations in a row.
    """
    cfg = cfg or SrConfig()
    prob = SrProblem(perspectives, shifts, cfg.upscale_factor, cfg.prior_weight)
    step = cfg.step_size if cfg.step_size is not None else 1.0 / max(prob.lipschitz(), 1e-12)
    x = cubic_upsample(perspectives[0], cfg.upscale_factor, shifts[0]).ravel()
    if cfg.upscale_factor == 1:
        x = np.asarray(perspectives[0], dtype=float).ravel().copy()
    costs = [prob.cost(x)]
    rises = 0
    for _ in range(cfg.iterations):
        x = x - step * prob.gradient(x)
        c = prob.cost(x)
        rises = rises + 1 if c > costs[-1] else 0
        costs.append(c)
        if rises >= 5:
            raise StepSizeError(f"cost increased 5 iterations in a row with step {step:g}")
    img = x.reshape(prob.hr_shape)
    if return_trace:
        return SrResult(img, costs, step)
    return img
