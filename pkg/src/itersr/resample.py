"""Separable image resampling built from explicit 1-D kernel matrices.

Each resize direction is realized by two row-stochastic matrices (one per
spatial axis) whose taps follow the classical cubic-convolution kernel with
a = -0.5 (the convention of the reference resize routines used by the
super-resolution benchmarks) or the triangle kernel for bilinear.  On
downscale the kernel support widens by the scale factor (antialias).
Out-of-range taps are folded back by mirror reflection without repeating
the edge sample.  Keeping the matrices explicit gives exact adjoints and a
direct route to dense-matrix oracles.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, InvalidSpecError


def cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Cubic convolution kernel, support [-2, 2]."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def linear_kernel(t: np.ndarray) -> np.ndarray:
    """Triangle kernel, support [-1, 1]."""
    return np.maximum(0.0, 1.0 - np.abs(np.asarray(t, dtype=np.float64)))


_KERNELS = {
    "cubic": (cubic_kernel, 4.0),
    "linear": (linear_kernel, 2.0),
}


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Mirror out-of-range indices without repeating the edge sample."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def kernel_taps(n_in: int, n_out: int, kernel: str, antialias: bool
                ) -> tuple[np.ndarray, np.ndarray]:
    """Raw tap positions and normalized weights, one row per output sample.

    Positions may fall outside [0, n_in); boundary folding is applied by
    :func:`resample_matrix`.  Rows sum to one.
    """
    if n_in < 1 or n_out < 1:
        raise DataError(f"resample sizes must be positive, got {n_in} -> {n_out}")
    try:
        func, support = _KERNELS[kernel]
    except KeyError:
        raise InvalidSpecError(f"unknown kernel {kernel!r}") from None
    scale = n_out / n_in
    if antialias and scale < 1.0:
        width = support / scale
        kscale = scale
    else:
        width = support
        kscale = 1.0
    u = np.arange(n_out, dtype=np.float64)
    x = (u + 0.5) / scale - 0.5
    left = np.floor(x - width / 2.0).astype(np.int64)
    ntaps = int(np.ceil(width)) + 2
    positions = left[:, None] + np.arange(ntaps)[None, :]
    weights = func((x[:, None] - positions) * kscale) * kscale
    weights /= weights.sum(axis=1, keepdims=True)
    return positions, weights


def resample_matrix(n_in: int, n_out: int, kernel: str, antialias: bool) -> np.ndarray:
    """Dense (n_out, n_in) resampling matrix with reflect boundary handling."""
    positions, weights = kernel_taps(n_in, n_out, kernel, antialias)
    folded = reflect_index(positions, n_in)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.repeat(np.arange(n_out), positions.shape[1])
    np.add.at(m, (rows, folded.ravel()), weights.ravel())
    return m


def apply_separable(x: np.ndarray, mh: np.ndarray, mw: np.ndarray) -> np.ndarray:
    """Apply per-axis matrices to the spatial axes of an (n, c, h, w) array."""
    if x.shape[2] != mh.shape[1] or x.shape[3] != mw.shape[1]:
        raise DataError(
            f"apply_separable: image {x.shape[2]}x{x.shape[3]} does not match "
            f"matrices {mh.shape} / {mw.shape}")
    dt = x.dtype
    t = np.tensordot(x, mh.astype(dt, copy=False), axes=([2], [1]))  # (n, c, w, h_out)
    t = np.tensordot(t, mw.astype(dt, copy=False), axes=([2], [1]))  # (n, c, h_out, w_out)
    return np.ascontiguousarray(t)


def dense_matrix(mh: np.ndarray, mw: np.ndarray) -> np.ndarray:
    """Full (h_out*w_out, h_in*w_in) matrix acting on row-major flattened images."""
    return np.kron(mh, mw)


def resize(x: np.ndarray, n_out_h: int, n_out_w: int, kernel: str,
           antialias: bool = True) -> np.ndarray:
    """Resize the spatial axes of an (n, c, h, w) array."""
    mh = resample_matrix(x.shape[2], n_out_h, kernel, antialias)
    mw = resample_matrix(x.shape[3], n_out_w, kernel, antialias)
    return apply_separable(x, mh, mw)


def bicubic_resize(x: np.ndarray, scale: float) -> np.ndarray:
    """Cubic resize by a scale factor (antialiased when shrinking).

    Matches the benchmark convention: ``scale > 1`` enlarges, integer
    ``1/scale`` shrinks exactly when dimensions divide.
    """
    h, w = x.shape[2], x.shape[3]
    n_out_h = int(round(h * scale))
    n_out_w = int(round(w * scale))
    return resize(x, n_out_h, n_out_w, "cubic", antialias=True)
