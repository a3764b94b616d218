"""Image I/O, color handling, patch sampling, and augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from . import degradation as deg
from .errors import DataError, ImageFormatError, StateError
from .tensor import Tensor

# BT.601 studio-swing RGB -> YCbCr for byte-range inputs: Y in [16, 235].
_YCBCR = np.array([
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
]) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])
_YCBCR_INV = np.linalg.inv(_YCBCR)

# Training patch sizes per scale factor: HR side (LR side is HR/scale).
HR_PATCH_SIZES = {2: 120, 3: 150, 4: 160}


@dataclass
class Image:
    """Single image: (1, c, h, w) tensor plus range and colorspace tags."""

    pixels: Tensor
    range_tag: str = "byte"       # "byte" [0,255] | "unit" [0,1]
    colorspace: str = "rgb"       # "rgb" | "ycbcr" | "luma"

    def __post_init__(self):
        n, c, _, _ = self.pixels.data.shape
        if n != 1:
            raise DataError(f"Image holds one image, got batch of {n}")
        if self.range_tag not in ("byte", "unit"):
            raise DataError(f"unknown range tag {self.range_tag!r}")
        if self.colorspace not in ("rgb", "ycbcr", "luma"):
            raise DataError(f"unknown colorspace {self.colorspace!r}")
        if self.colorspace in ("rgb", "ycbcr") and c != 3:
            raise DataError(f"{self.colorspace} image must have 3 channels, got {c}")
        if self.colorspace == "luma" and c != 1:
            raise DataError(f"luma image must have 1 channel, got {c}")

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.data.shape[2], self.pixels.data.shape[3]

    def array(self) -> np.ndarray:
        return self.pixels.data[0]


@dataclass
class PatchPair:
    lr: Image
    hr: Image
    scale: int

    def __post_init__(self):
        lh, lw = self.lr.size
        hh, hw = self.hr.size
        if (hh, hw) != (lh * self.scale, lw * self.scale):
            raise DataError(
                f"patch pair mismatch: hr {hh}x{hw} is not {self.scale}x lr {lh}x{lw}")


def load_png(path) -> Image:
    """Load an 8-bit RGB or grayscale PNG as a byte-range image."""
    try:
        with PILImage.open(path) as im:
            if im.format != "PNG":
                raise ImageFormatError(f"{path}: not a PNG file (format={im.format})")
            if im.mode not in ("RGB", "L"):
                raise ImageFormatError(
                    f"{path}: unsupported PNG mode {im.mode!r}; need 8-bit RGB or L")
            arr = np.asarray(im, dtype=np.float64)
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"{path}: cannot read image ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[None, None]
        return Image(Tensor(arr), "byte", "luma")
    arr = arr.transpose(2, 0, 1)[None]
    return Image(Tensor(arr), "byte", "rgb")


def save_png(image: Image, path) -> None:
    """Write a byte-range RGB or luma image as an 8-bit PNG."""
    if image.range_tag != "byte":
        raise StateError("save_png expects a byte-range image")
    arr = np.clip(np.rint(image.array()), 0, 255).astype(np.uint8)
    if image.colorspace == "rgb":
        PILImage.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")
    elif image.colorspace == "luma":
        PILImage.fromarray(arr[0], mode="L").save(path, format="PNG")
    else:
        raise StateError(f"save_png cannot encode colorspace {image.colorspace!r}")


def _range_scale(image: Image) -> float:
    return 255.0 if image.range_tag == "byte" else 1.0


def rgb_to_ycbcr(image: Image) -> Image:
    """BT.601 studio-swing transform; output keeps the input's range tag."""
    if image.colorspace != "rgb":
        raise StateError(f"rgb_to_ycbcr needs rgb input, got {image.colorspace}")
    k = _range_scale(image) / 255.0
    rgb = image.array() / k
    ycc = np.tensordot(_YCBCR, rgb, axes=([1], [0])) + _YCBCR_OFFSET[:, None, None]
    ycc = np.clip(ycc, 0.0, 255.0) * k
    return Image(Tensor(ycc[None]), image.range_tag, "ycbcr")


def ycbcr_to_rgb(image: Image) -> Image:
    if image.colorspace != "ycbcr":
        raise StateError(f"ycbcr_to_rgb needs ycbcr input, got {image.colorspace}")
    k = _range_scale(image) / 255.0
    ycc = image.array() / k - _YCBCR_OFFSET[:, None, None]
    rgb = np.tensordot(_YCBCR_INV, ycc, axes=([1], [0]))
    rgb = np.clip(rgb, 0.0, 255.0) * k
    return Image(Tensor(rgb[None]), image.range_tag, "rgb")


def extract_luma(image: Image) -> Image:
    """The Y channel of the BT.601 transform (identity for luma input)."""
    if image.colorspace == "luma":
        return Image(Tensor(image.array()[None].copy()), image.range_tag, "luma")
    if image.colorspace == "ycbcr":
        return Image(Tensor(image.array()[:1][None].copy()), image.range_tag, "luma")
    y = rgb_to_ycbcr(image).array()[:1]
    return Image(Tensor(y[None].copy()), image.range_tag, "luma")


def sample_patch_pair(hr_image: Image, scale: int, model: deg.DegradationModel,
                      rng: np.random.Generator, hr_patch: int | None = None) -> PatchPair:
    """Crop an aligned HR patch and derive its LR side through the degradation model.

    ``hr_patch`` defaults to the training patch size for the scale; patch
    origins are uniform over positions aligned to multiples of the scale.
    """
    if hr_patch is None:
        try:
            hr_patch = HR_PATCH_SIZES[scale]
        except KeyError:
            raise DataError(f"no default patch size for scale {scale}") from None
    if hr_patch % scale:
        raise DataError(f"patch size {hr_patch} not divisible by scale {scale}")
    h, w = hr_image.size
    if h < hr_patch or w < hr_patch:
        raise DataError(
            f"image {h}x{w} smaller than the {hr_patch}x{hr_patch} patch for scale {scale}")
    top = int(rng.integers(0, (h - hr_patch) // scale + 1)) * scale
    left = int(rng.integers(0, (w - hr_patch) // scale + 1)) * scale
    crop = hr_image.pixels.data[:, :, top:top + hr_patch, left:left + hr_patch].copy()
    hr = Image(Tensor(crop), hr_image.range_tag, hr_image.colorspace)
    lr_t = deg.apply_h(hr.pixels, model)
    if model.sigma > 0:
        lr_t = deg.add_noise(lr_t, model.sigma, rng)
    lr = Image(lr_t, hr_image.range_tag, hr_image.colorspace)
    return PatchPair(lr, hr, scale)


# The 8 dihedral transforms: optional horizontal flip followed by k
# quarter-turns, indexed 0..7 as (k, flip) = (idx % 4, idx // 4).


def apply_dihedral(arr: np.ndarray, idx: int) -> np.ndarray:
    if not 0 <= idx < 8:
        raise DataError(f"dihedral index must be in [0, 8), got {idx}")
    k, flip = idx % 4, idx // 4
    out = np.flip(arr, axis=3) if flip else arr
    return np.ascontiguousarray(np.rot90(out, k, axes=(2, 3)))


def invert_dihedral(arr: np.ndarray, idx: int) -> np.ndarray:
    k, flip = idx % 4, idx // 4
    out = np.rot90(arr, -k, axes=(2, 3))
    if flip:
        out = np.flip(out, axis=3)
    return np.ascontiguousarray(out)


def _transform_image(image: Image, idx: int) -> Image:
    return Image(Tensor(apply_dihedral(image.pixels.data, idx)),
                 image.range_tag, image.colorspace)


def augment(pair: PatchPair, rng: np.random.Generator) -> PatchPair:
    """Apply one of the 8 flip/rotation transforms identically to LR and HR."""
    idx = int(rng.integers(0, 8))
    return PatchPair(_transform_image(pair.lr, idx), _transform_image(pair.hr, idx),
                     pair.scale)


def mixup(pair_i: PatchPair, pair_j: PatchPair, lam: float) -> PatchPair:
    """Convex blend of two pairs with the same geometry: lam*i + (1-lam)*j."""
    if not 0.0 <= lam <= 1.0:
        raise DataError(f"mixup lambda must be in [0, 1], got {lam}")
    if pair_i.hr.pixels.data.shape != pair_j.hr.pixels.data.shape or \
            pair_i.lr.pixels.data.shape != pair_j.lr.pixels.data.shape:
        raise DataError("mixup pairs must have identical shapes")

    def blend(a: Image, b: Image) -> Image:
        return Image(Tensor(lam * a.pixels.data + (1.0 - lam) * b.pixels.data),
                     a.range_tag, a.colorspace)

    return PatchPair(blend(pair_i.lr, pair_j.lr), blend(pair_i.hr, pair_j.hr), pair_i.scale)
