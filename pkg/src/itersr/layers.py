"""Forward and backward passes for every layer the denoising network uses.

Convolutions are computed as windowed tensor contractions (BLAS matmuls
under the hood).  Reflection padding mirrors without repeating the edge
pixel, and its backward pass folds pad-region gradients back onto their
source rows/columns, so every layer is an exact linear/piecewise-linear
map with an exact adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidSpecError, ShapeError
from .tensor import Tensor, _make_node


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int = 1
    padding_mode: str = "reflect"  # "reflect" | "zero"
    transposed: bool = False

    def __post_init__(self):
        kh, kw = self.kernel
        if self.stride < 1:
            raise InvalidSpecError(f"stride must be >= 1, got {self.stride}")
        if self.padding_mode not in ("reflect", "zero"):
            raise InvalidSpecError(f"unknown padding mode {self.padding_mode!r}")
        if self.padding_mode == "reflect" and (kh % 2 == 0 or kw % 2 == 0):
            raise InvalidSpecError(f"reflect padding needs odd kernel, got {self.kernel}")
        if self.transposed and self.stride != 1:
            raise InvalidSpecError("transposed convolution supports stride 1 only")


# -- padding -------------------------------------------------------------------


def _pad(x: np.ndarray, ph: int, pw: int, mode: str) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    if mode == "reflect":
        if ph > x.shape[2] - 1 or pw > x.shape[3] - 1:
            raise ShapeError(
                f"input {x.shape[2]}x{x.shape[3]} too small for reflect pad ({ph}, {pw})")
        return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode="reflect")
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode="constant")


def _fold_axis(g: np.ndarray, p: int, n_src: int, axis: int) -> np.ndarray:
    """Adjoint of reflect padding along one spatial axis."""
    sl = [slice(None)] * 4
    sl[axis] = slice(p, p + n_src)
    out = np.ascontiguousarray(g[tuple(sl)])
    for i in range(p):
        top = [slice(None)] * 4
        top[axis] = i
        dst = [slice(None)] * 4
        dst[axis] = p - i
        out[tuple(dst)] += g[tuple(top)]
        bot = [slice(None)] * 4
        bot[axis] = p + n_src + i
        dst2 = [slice(None)] * 4
        dst2[axis] = n_src - 2 - i
        out[tuple(dst2)] += g[tuple(bot)]
    return out


def _unpad_adjoint(g: np.ndarray, ph: int, pw: int, h: int, w: int, mode: str) -> np.ndarray:
    if ph == 0 and pw == 0:
        return g
    if mode == "reflect":
        g = _fold_axis(g, ph, h, axis=2)
        g = _fold_axis(g, pw, w, axis=3)
        return g
    return g[:, :, ph:ph + h, pw:pw + w]


# -- valid-mode convolution cores ----------------------------------------------


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    if stride > 1:
        win = win[:, :, ::stride, ::stride]
    return win


def _conv_core(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    # xp (n, cin, H, W), w (cout, cin, kh, kw) -> (n, cout, h', w')
    win = _windows(xp, w.shape[2], w.shape[3], stride)
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def _conv_core_input_grad(g: np.ndarray, w: np.ndarray, stride: int,
                          spatial: tuple[int, int]) -> np.ndarray:
    # g (n, cout, h', w') -> (n, cin, H, W); exact adjoint of _conv_core in x.
    n, _, ho, wo = g.shape
    cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    H, W = spatial
    gx = np.zeros((n, cin, H, W), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(g, w[:, :, i, j], axes=([1], [0]))  # (n, h', w', cin)
            gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                contrib.transpose(0, 3, 1, 2)
    return gx


def _conv_core_weight_grad(xp: np.ndarray, g: np.ndarray, stride: int,
                           kshape: tuple[int, int]) -> np.ndarray:
    win = _windows(xp, kshape[0], kshape[1], stride)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (cout, cin, kh, kw)


def _check_bias(bias: Tensor, channels: int, op: str) -> None:
    if bias.data.shape != (1, channels, 1, 1):
        raise ShapeError(f"{op}: bias shape {bias.data.shape} != (1, {channels}, 1, 1)")


# -- public layers ---------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """2-D correlation with padding chosen to preserve spatial size at stride 1."""
    cout, cin, kh, kw = weight.data.shape
    if spec.transposed:
        raise InvalidSpecError("conv2d called with a transposed spec")
    if (cout, cin) != (spec.out_channels, spec.in_channels) or (kh, kw) != spec.kernel:
        raise ShapeError(
            f"conv2d: weight shape {weight.data.shape} does not match spec "
            f"(out={spec.out_channels}, in={spec.in_channels}, kernel={spec.kernel})")
    if x.data.shape[1] != cin:
        raise ShapeError(f"conv2d: input has {x.data.shape[1]} channels, weight expects {cin}")
    _check_bias(bias, cout, "conv2d")

    n, _, h, w = x.data.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = _pad(x.data, ph, pw, spec.padding_mode)
    y = _conv_core(xp, weight.data, spec.stride)
    y += bias.data

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            gx = _conv_core_input_grad(g, weight.data, spec.stride, xp.shape[2:])
            x.accumulate_grad(_unpad_adjoint(gx, ph, pw, h, w, spec.padding_mode))
        if weight.requires_grad:
            weight.accumulate_grad(_conv_core_weight_grad(xp, g, spec.stride, (kh, kw)))
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1))

    return _make_node(y, (x, weight, bias), backward)


def transposed_conv2d(x: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Adjoint of conv2d with the same kernel array; weight layout (in, out, kh, kw)."""
    cin_t, cout_t, kh, kw = weight.data.shape
    if (cin_t, cout_t) != (spec.in_channels, spec.out_channels) or (kh, kw) != spec.kernel:
        raise ShapeError(
            f"transposed_conv2d: weight shape {weight.data.shape} does not match spec "
            f"(in={spec.in_channels}, out={spec.out_channels}, kernel={spec.kernel})")
    if spec.stride != 1:
        raise InvalidSpecError("transposed_conv2d operates at stride 1")
    if x.data.shape[1] != cin_t:
        raise ShapeError(
            f"transposed_conv2d: input has {x.data.shape[1]} channels, weight expects {cin_t}")
    _check_bias(bias, cout_t, "transposed_conv2d")

    n, _, h, w = x.data.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    # Forward = fold( adjoint-core( x ) ): exactly conv2d's input-gradient path.
    core = _conv_core_input_grad(x.data, weight.data, 1, (h + 2 * ph, w + 2 * pw))
    y = _unpad_adjoint(core, ph, pw, h, w, spec.padding_mode)
    y += bias.data

    def backward(g: np.ndarray) -> None:
        gp = _pad(g, ph, pw, spec.padding_mode)
        if x.requires_grad:
            x.accumulate_grad(_conv_core(gp, weight.data, 1))
        if weight.requires_grad:
            weight.accumulate_grad(_conv_core_weight_grad(gp, x.data, 1, (kh, kw)))
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)).reshape(1, cout_t, 1, 1))

    return _make_node(y, (x, weight, bias), backward)


def prelu(x: Tensor, slopes: Tensor) -> Tensor:
    """Per-channel parametric ReLU; the subgradient at 0 follows the positive branch."""
    c = x.data.shape[1]
    if slopes.data.shape != (1, c, 1, 1):
        raise ShapeError(f"prelu: slopes shape {slopes.data.shape} != (1, {c}, 1, 1)")
    pos = x.data >= 0
    y = np.where(pos, x.data, slopes.data * x.data)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.where(pos, g, slopes.data * g))
        if slopes.requires_grad:
            contrib = np.where(pos, 0.0, g * x.data).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            slopes.accumulate_grad(contrib.astype(slopes.data.dtype))

    return _make_node(y, (x, slopes), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    na, ca, ha, wa = a.data.shape
    nb, cb, hb, wb = b.data.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeError(
            f"concat_channels: batch/spatial mismatch {a.data.shape} vs {b.data.shape}")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g[:, :ca])
        if b.requires_grad:
            b.accumulate_grad(g[:, ca:])

    return _make_node(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    c = x.data.shape[1]
    if not (0 <= start < stop <= c):
        raise ShapeError(f"slice_channels: [{start}, {stop}) out of range for {c} channels")

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, start:stop] = g
            x.accumulate_grad(gx)

    return _make_node(x.data[:, start:stop].copy(), (x,), backward)


def clip_intensity(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only strictly inside the range."""
    if lo >= hi:
        raise InvalidSpecError(f"clip_intensity: empty range [{lo}, {hi}]")
    inside = (x.data > lo) & (x.data < hi)
    y = np.clip(x.data, lo, hi)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.where(inside, g, 0.0))

    return _make_node(y, (x,), backward)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Half the summed absolute deviation over the mini-batch, as a scalar node.

    Use ``.item()`` for the numeric value; sign(0) is taken as 0 in backward.
    """
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"l1_loss: shapes {pred.data.shape} and {target.data.shape} differ")
    diff = pred.data - target.data
    val = 0.5 * np.sum(np.abs(diff), dtype=np.float64)

    def backward(g: np.ndarray) -> None:
        s = float(g.reshape(()))
        if pred.requires_grad:
            pred.accumulate_grad((0.5 * s) * np.sign(diff))
        if target.requires_grad:
            target.accumulate_grad((-0.5 * s) * np.sign(diff))

    return _make_node(np.full((1, 1, 1, 1), val, dtype=pred.data.dtype), (pred, target), backward)
