import numpy as np


def bilinear(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``image`` at fractional pixel coordinates, clamping at the border.

    Uses nested lerps ``a + t (b - a)`` so that constant images come back
    bit-exact and linear data is reproduced to rounding error.
    """
    h, w = image.shape
    x = np.clip(np.asarray(x, dtype=float), 0.0, w - 1.0)
    y = np.clip(np.asarray(y, dtype=float), 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = x - x0
    ty = y - y0
    a = image[y0, x0]
    b = image[y0, x1]
    c = image[y1, x0]
    d = image[y1, x1]
    top = a + tx * (b - a)
    bottom = c + tx * (d - c)
    return top + ty * (bottom - top)


def rng_for(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream)`` regardless of call order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))
