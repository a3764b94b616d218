"""Linear observation model: downsampling H, upsampling H^T, noise.

H is the antialiased cubic downsampler; the default upsampler is the
bilinear kernel used by the solver's initialization and data-consistency
updates, while ``ht_mode="adjoint"`` applies the exact transpose of H
(required by the majorizer tests, where H^T must be a true adjoint).
Both directions run through the autodiff tensor type so solver gradients
flow through the operators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import resample
from .errors import DataError, InvalidSpecError
from .tensor import Tensor, _make_node

HT_MODES = ("bilinear", "adjoint")


@dataclass
class DegradationModel:
    """Scale-s observation operator pair plus the noise level of Eq-style y = Hx + n."""

    scale: int
    sigma: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.scale < 1:
            raise InvalidSpecError(f"scale must be >= 1, got {self.scale}")
        if self.sigma < 0:
            raise InvalidSpecError(f"sigma must be >= 0, got {self.sigma}")

    # 1-D operator matrices, cached per input length.

    def down_matrix(self, n_in: int) -> np.ndarray:
        key = ("down", n_in)
        if key not in self._cache:
            if n_in % self.scale != 0:
                raise DataError(f"size {n_in} not divisible by scale {self.scale}")
            self._cache[key] = resample.resample_matrix(
                n_in, n_in // self.scale, "cubic", antialias=True)
        return self._cache[key]

    def up_matrix(self, n_in: int) -> np.ndarray:
        key = ("up", n_in)
        if key not in self._cache:
            self._cache[key] = resample.resample_matrix(
                n_in, n_in * self.scale, "linear", antialias=False)
        return self._cache[key]


def _separable_op(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    y = resample.apply_separable(x.data, mh, mw)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(resample.apply_separable(g, mh.T, mw.T))

    return _make_node(y, (x,), backward)


def apply_h(x: Tensor, model: DegradationModel) -> Tensor:
    """Antialiased cubic downsample by the model scale."""
    _, _, h, w = x.data.shape
    if h % model.scale or w % model.scale:
        raise DataError(
            f"apply_h: spatial dims {h}x{w} not divisible by scale {model.scale}")
    return _separable_op(x, model.down_matrix(h), model.down_matrix(w))


def apply_ht(y: Tensor, model: DegradationModel, mode: str = "bilinear") -> Tensor:
    """Upsample by the model scale: bilinear kernel or the exact adjoint of H."""
    if mode not in HT_MODES:
        raise InvalidSpecError(f"apply_ht mode must be one of {HT_MODES}, got {mode!r}")
    _, _, h, w = y.data.shape
    if mode == "bilinear":
        return _separable_op(y, model.up_matrix(h), model.up_matrix(w))
    return _separable_op(y, model.down_matrix(h * model.scale).T,
                         model.down_matrix(w * model.scale).T)


def add_noise(x: Tensor, sigma: float, rng: np.random.Generator) -> Tensor:
    """x plus i.i.d. zero-mean Gaussian noise (no gradient path; data prep only)."""
    if sigma < 0:
        raise InvalidSpecError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return Tensor(x.data.copy())
    return Tensor(x.data + rng.normal(0.0, sigma, size=x.data.shape).astype(x.data.dtype))


def estimate_sigma(y: Tensor) -> float:
    """Robust noise estimate: MAD of the finest diagonal Haar subband / 0.6745.

    Channels are pooled; invariant to constant intensity shifts.
    """
    n, c, h, w = y.data.shape
    if n != 1:
        raise DataError(f"estimate_sigma expects a single image, got batch of {n}")
    if h < 2 or w < 2:
        raise DataError(f"estimate_sigma needs at least 2x2 pixels, got {h}x{w}")
    a = y.data[0, :, :h - h % 2, :w - w % 2].astype(np.float64)
    hh = 0.5 * (a[:, 0::2, 0::2] - a[:, 0::2, 1::2] - a[:, 1::2, 0::2] + a[:, 1::2, 1::2])
    return float(np.median(np.abs(hh)) / 0.6745)


def spectral_norm_trace(model: DegradationModel, iters: int, size: tuple[int, int] = (32, 32),
                        ht_mode: str = "bilinear", seed: int = 0) -> np.ndarray:
    """Per-iteration power-iteration estimates of ||H^T H||_2 on a given grid.

    With the exact adjoint, H^T H is symmetric PSD and the Rayleigh-quotient
    sequence is monotone non-decreasing.  With the bilinear upsampler the
    composite is not symmetric, so the estimate targets its largest singular
    value via the normal-equation operator (using exact matrix transposes).
    """
    if iters < 1:
        raise InvalidSpecError(f"iters must be >= 1, got {iters}")
    h, w = size
    mh_d, mw_d = model.down_matrix(h), model.down_matrix(w)
    if ht_mode == "adjoint":
        mh_u, mw_u = mh_d.T, mw_d.T
    elif ht_mode == "bilinear":
        mh_u, mw_u = model.up_matrix(h // model.scale), model.up_matrix(w // model.scale)
    else:
        raise InvalidSpecError(f"ht_mode must be one of {HT_MODES}, got {ht_mode!r}")

    def op(v: np.ndarray) -> np.ndarray:
        return resample.apply_separable(resample.apply_separable(v, mh_d, mw_d), mh_u, mw_u)

    def op_t(v: np.ndarray) -> np.ndarray:
        return resample.apply_separable(resample.apply_separable(v, mh_u.T, mw_u.T),
                                        mh_d.T, mw_d.T)

    rng = np.random.default_rng(seed)
    v = rng.standard_normal((1, 1, h, w))
    v /= np.linalg.norm(v)
    estimates = np.empty(iters)
    symmetric = ht_mode == "adjoint"
    for k in range(iters):
        if symmetric:
            tv = op(v)
            estimates[k] = float(np.vdot(v, tv))  # Rayleigh quotient, ||v|| = 1
        else:
            tv = op_t(op(v))
            estimates[k] = float(np.sqrt(max(np.vdot(v, tv), 0.0)))
        nrm = np.linalg.norm(tv)
        if nrm == 0:
            break
        v = tv / nrm
    return estimates


def spectral_norm_hth(model: DegradationModel, iters: int = 200,
                      size: tuple[int, int] = (32, 32), ht_mode: str = "bilinear",
                      seed: int = 0) -> float:
    """Power-iteration estimate of ||H^T H||_2 (see :func:`spectral_norm_trace`).

    The default pairs H with the bilinear upsampler (the solver's operators,
    composite norm close to one); ``ht_mode="adjoint"`` measures the exact
    H^T H needed by the majorizer validity bound.
    """
    return float(spectral_norm_trace(model, iters, size, ht_mode, seed)[-1])


def dump_kernel_taps(model: DegradationModel, path) -> None:
    """Write the canonical interior stencils to a text file.

    One row per tap: relative source position and weight with 17 significant
    digits, for cross-implementation comparison of both operator kernels.
    """
    sections = []
    # Interior stencil: for integer scales every output sample shares one
    # phase, so the first row away from the boundary is representative.
    n_probe = max(16 * model.scale, 4 * model.scale * model.scale)
    for name, kernel, antialias, n_in, n_out in (
            ("down", "cubic", True, n_probe, n_probe // model.scale),
            ("up", "linear", False, n_probe // model.scale, n_probe)):
        positions, weights = resample.kernel_taps(n_in, n_out, kernel, antialias)
        row = n_out // 2
        lines = [f"# {name} kernel={kernel} scale={model.scale} antialias={int(antialias)} "
                 f"taps={positions.shape[1]}"]
        center = positions[row, 0]
        for p, wgt in zip(positions[row], weights[row]):
            lines.append(f"{p - center:d} {wgt:.17g}")
        sections.append("\n".join(lines))
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(sections) + "\n")
