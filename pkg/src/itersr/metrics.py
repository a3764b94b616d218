"""Evaluation protocol: Y-channel PSNR/SSIM with border shaving, self-ensemble.

PSNR of identical images is reported as the +inf sentinel and excluded
from aggregate means (with a warning flag in the report).  SSIM follows
the reference implementation: 11x11 Gaussian window, sigma 1.5, valid-mode
filtering, C1 = (0.01*peak)^2, C2 = (0.03*peak)^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import imaging
from .errors import DataError, ShapeError
from .tensor import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _plane(a) -> np.ndarray:
    """Accept an Image, a 4-d tensor-like, or a 2-d array; return (h, w) float64."""
    if isinstance(a, imaging.Image):
        arr = a.array()
        if arr.shape[0] != 1:
            raise DataError("metrics operate on single-channel (Y) images")
        return arr[0].astype(np.float64)
    arr = np.asarray(getattr(a, "data", a), dtype=np.float64)
    if arr.ndim == 4:
        if arr.shape[0] != 1 or arr.shape[1] != 1:
            raise DataError(f"metrics expect one single-channel image, got {arr.shape}")
        return arr[0, 0]
    if arr.ndim == 2:
        return arr
    raise ShapeError(f"metrics input must be 2-d or (1,1,h,w), got shape {arr.shape}")


def psnr(a, b, peak: float = 255.0) -> float:
    """10 log10(peak^2 / MSE); +inf for identical inputs."""
    pa, pb = _plane(a), _plane(b)
    if pa.shape != pb.shape:
        raise ShapeError(f"psnr: shapes {pa.shape} and {pb.shape} differ")
    mse = float(np.mean((pa - pb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with an outer-product window."""
    rows = sliding_window_view(img, win.size, axis=0) @ win      # (h', w)
    return sliding_window_view(rows, win.size, axis=1) @ win     # (h', w')


def ssim(a, b, peak: float = 255.0) -> float:
    """Mean local structural similarity over valid window positions."""
    pa, pb = _plane(a), _plane(b)
    if pa.shape != pb.shape:
        raise ShapeError(f"ssim: shapes {pa.shape} and {pb.shape} differ")
    if min(pa.shape) < SSIM_WINDOW:
        raise DataError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, "
                        f"got {pa.shape}")
    win = _gaussian_window()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a = _filter_valid(pa, win)
    mu_b = _filter_valid(pb, win)
    var_a = _filter_valid(pa * pa, win) - mu_a * mu_a
    var_b = _filter_valid(pb * pb, win) - mu_b * mu_b
    cov = _filter_valid(pa * pb, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def shave(arr: np.ndarray, border: int) -> np.ndarray:
    if border == 0:
        return arr
    if 2 * border >= min(arr.shape[-2:]):
        raise DataError(f"cannot shave {border} pixels from shape {arr.shape}")
    return arr[..., border:-border, border:-border]


def luma_plane(image: imaging.Image) -> np.ndarray:
    return imaging.extract_luma(image).array()[0]


def evaluate_pair(sr: imaging.Image, gt: imaging.Image, scale: int,
                  border: int | None = None) -> tuple[float, float]:
    """Protocol metrics for one image: Y channel, scale-pixel border shave."""
    if sr.size != gt.size:
        raise ShapeError(f"evaluate_pair: sizes {sr.size} and {gt.size} differ")
    border = scale if border is None else border
    ya = shave(luma_plane(sr), border)
    yb = shave(luma_plane(gt), border)
    return psnr(ya, yb), ssim(ya, yb)


@dataclass
class EvalReport:
    scale: int
    border_crop: int
    y_channel: bool = True
    names: list[str] = field(default_factory=list)
    psnr_values: list[float] = field(default_factory=list)
    ssim_values: list[float] = field(default_factory=list)

    def add(self, name: str, psnr_value: float, ssim_value: float) -> None:
        if not -1.0 <= ssim_value <= 1.0:
            raise DataError(f"ssim {ssim_value} outside [-1, 1] for {name}")
        if psnr_value < 0:
            raise DataError(f"negative psnr {psnr_value} for {name}")
        self.names.append(name)
        self.psnr_values.append(psnr_value)
        self.ssim_values.append(ssim_value)

    @property
    def has_infinite_psnr(self) -> bool:
        return any(math.isinf(v) for v in self.psnr_values)

    def mean_psnr(self) -> float:
        finite = [v for v in self.psnr_values if math.isfinite(v)]
        if not finite:
            return math.inf if self.psnr_values else 0.0
        return float(np.mean(finite))

    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values)) if self.ssim_values else 0.0

    def records(self) -> list[dict]:
        rows = [{"name": n, "psnr": p, "ssim": s}
                for n, p, s in zip(self.names, self.psnr_values, self.ssim_values)]
        rows.append({"name": "__mean__", "psnr": self.mean_psnr(),
                     "ssim": self.mean_ssim(), "scale": self.scale,
                     "border_crop": self.border_crop, "y_channel": self.y_channel,
                     "excluded_infinite": self.has_infinite_psnr})
        return rows

    def table(self) -> str:
        lines = [f"{'image':<28} {'psnr_db':>10} {'ssim':>8}"]
        for n, p, s in zip(self.names, self.psnr_values, self.ssim_values):
            ptxt = "inf" if math.isinf(p) else f"{p:.4f}"
            lines.append(f"{n:<28} {ptxt:>10} {s:>8.4f}")
        lines.append(f"{'mean':<28} {self.mean_psnr():>10.4f} {self.mean_ssim():>8.4f}")
        lines.append(f"protocol: scale={self.scale} border_crop={self.border_crop} "
                     f"y_channel={self.y_channel}")
        if self.has_infinite_psnr:
            lines.append("warning: infinite PSNR entries excluded from the mean")
        return "\n".join(lines)


def self_ensemble(model_fn, y: imaging.Image) -> imaging.Image:
    """Average the model over the 8 flip/rotation variants of the input.

    Each transformed input is super-resolved, the transform is inverted on
    the output, and the aligned results are averaged.
    """
    acc = None
    for idx in range(8):
        variant = imaging.Image(Tensor(imaging.apply_dihedral(y.pixels.data, idx)),
                                y.range_tag, y.colorspace)
        out = model_fn(variant)
        aligned = imaging.invert_dihedral(out.pixels.data, idx)
        acc = aligned if acc is None else acc + aligned
    return imaging.Image(Tensor(acc / 8.0), y.range_tag, y.colorspace)
