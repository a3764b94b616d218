"""The learned proximal step: a residual-estimating encoder/resnet/decoder block.

One block is shared by every solver iteration.  The resnet estimates the
noise realization of its input; the decoded residual is projected onto an
l2 ball whose radius couples the per-image noise estimate with a trainable
log-domain scalar, then subtracted from the block input, and the result is
clipped to the valid intensity range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError, ShapeError
from .layers import ConvSpec, clip_intensity, concat_channels, conv2d, prelu, transposed_conv2d
from .tensor import ParamStore, Tensor, _make_node

INTENSITY_RANGE = (0.0, 255.0)
PRELU_INIT = 0.25
ALPHA_MAX = 2.0  # initial projection radius multiplier, annealed by training
ALPHA_MIN = 1.0


@dataclass(frozen=True)
class ErdConfig:
    in_channels: int = 3
    features: int = 64
    num_resblocks: int = 5
    encoder_kernel: int = 5
    res_kernel: int = 3
    feedback: bool = False

    def __post_init__(self):
        if min(self.in_channels, self.features, self.num_resblocks) < 1:
            raise InvalidSpecError(f"degenerate ERD config: {self}")


@dataclass
class ProjectionParams:
    """Trainable log-radius scalar plus the per-image noise level, fixed per pass."""

    alpha: Tensor                      # (1, 1, 1, 1), log-domain
    sigma: np.ndarray                  # per-image noise estimates, shape (n,)

    def __post_init__(self):
        if not np.all(np.isfinite(self.alpha.data)):
            raise InvalidSpecError("projection alpha must be finite")
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))
        if np.any(self.sigma < 0):
            raise InvalidSpecError("projection sigma must be >= 0")


class ErdWeights:
    """All trainable parameters of one ERD block, addressable by path."""

    def __init__(self, config: ErdConfig, params: ParamStore):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def count(self) -> int:
        return self.params.count()

    def count_by_group(self) -> dict[str, int]:
        groups: dict[str, int] = {}
        for name, t in self.params.items():
            group = name.split(".", 1)[0]
            groups[group] = groups.get(group, 0) + t.data.size
        return groups


def init_weights(rng: np.random.Generator, config: ErdConfig,
                 dtype=np.float64) -> ErdWeights:
    """He-normal conv weights, zero biases, 0.25 PReLU slopes, log-scale alpha."""
    store = ParamStore()
    c, f = config.in_channels, config.features

    def he_conv(name: str, cout: int, cin: int, k: int) -> None:
        std = math.sqrt(2.0 / (cin * k * k))
        w = rng.normal(0.0, std, size=(cout, cin, k, k)).astype(dtype)
        store.add(f"{name}.weight", Tensor(w, requires_grad=True))
        store.add(f"{name}.bias", Tensor.zeros((1, cout, 1, 1), dtype, requires_grad=True))

    he_conv("encoder", f, c, config.encoder_kernel)
    for i in range(config.num_resblocks):
        store.add(f"res.{i}.act1.slopes",
                  Tensor(np.full((1, f, 1, 1), PRELU_INIT, dtype), requires_grad=True))
        he_conv(f"res.{i}.conv1", f, f, config.res_kernel)
        store.add(f"res.{i}.act2.slopes",
                  Tensor(np.full((1, f, 1, 1), PRELU_INIT, dtype), requires_grad=True))
        he_conv(f"res.{i}.conv2", f, f, config.res_kernel)
    if config.feedback:
        store.add("fuse.act.slopes",
                  Tensor(np.full((1, 2 * f, 1, 1), PRELU_INIT, dtype), requires_grad=True))
        he_conv("fuse.conv", f, 2 * f, 1)
    # Decoder weight uses the transposed layout (in, out, kh, kw).
    std = math.sqrt(2.0 / (f * config.encoder_kernel ** 2))
    dec = rng.normal(0.0, std, size=(f, c, config.encoder_kernel,
                                     config.encoder_kernel)).astype(dtype)
    store.add("decoder.weight", Tensor(dec, requires_grad=True))
    store.add("decoder.bias", Tensor.zeros((1, c, 1, 1), dtype, requires_grad=True))
    store.add("proj.alpha",
              Tensor.scalar(math.log(ALPHA_MAX), dtype, requires_grad=True))
    return ErdWeights(config, store)


def project_residual(r: Tensor, proj: ProjectionParams) -> Tensor:
    """Per-image l2-ball projection: r * min(1, rho / ||r||) with
    rho = exp(alpha) * sigma * sqrt(N - 1), N the per-image element count."""
    n = r.data.shape[0]
    npix = r.data.shape[1] * r.data.shape[2] * r.data.shape[3]
    if proj.sigma.size == 1:
        sigma = np.full(n, float(proj.sigma[0]))
    elif proj.sigma.size == n:
        sigma = proj.sigma.astype(np.float64)
    else:
        raise ShapeError(f"sigma has {proj.sigma.size} entries for batch of {n}")

    alpha_val = float(proj.alpha.data.reshape(()))
    rho = math.exp(alpha_val) * sigma * math.sqrt(max(npix - 1, 1))  # (n,)
    norms = np.sqrt(np.sum(r.data.astype(np.float64) ** 2, axis=(1, 2, 3)))  # (n,)
    scaled = norms > rho  # outside the ball
    factors = np.where(scaled, np.divide(rho, norms, out=np.ones_like(norms),
                                         where=norms > 0), 1.0)
    y = r.data * factors[:, None, None, None].astype(r.data.dtype)

    def backward(g: np.ndarray) -> None:
        gf = g.astype(np.float64)
        rd = r.data.astype(np.float64)
        dot = np.sum(gf * rd, axis=(1, 2, 3))  # <g_i, r_i> per image
        if r.requires_grad:
            # Scaled branch: rho/||r|| * (I - rr^T/||r||^2) g; identity inside.
            gr = gf * factors[:, None, None, None]
            corr = np.where(scaled, factors * dot / np.maximum(norms ** 2, 1e-300), 0.0)
            gr -= corr[:, None, None, None] * rd
            r.accumulate_grad(gr.astype(r.data.dtype))
        if proj.alpha.requires_grad:
            # d out / d alpha = rho * r / ||r|| on the scaled branch, 0 inside.
            contrib = np.where(scaled,
                               dot * np.divide(rho, norms, out=np.zeros_like(norms),
                                               where=norms > 0), 0.0)
            proj.alpha.accumulate_grad(
                np.sum(contrib).reshape(1, 1, 1, 1).astype(proj.alpha.data.dtype))

    return _make_node(y, (r, proj.alpha), backward)


def _resnet_pass(x: Tensor, weights: ErdWeights, spec: ConvSpec) -> Tensor:
    out = x
    for i in range(weights.config.num_resblocks):
        h = prelu(out, weights[f"res.{i}.act1.slopes"])
        h = conv2d(h, weights[f"res.{i}.conv1.weight"], weights[f"res.{i}.conv1.bias"], spec)
        h = prelu(h, weights[f"res.{i}.act2.slopes"])
        h = conv2d(h, weights[f"res.{i}.conv2.weight"], weights[f"res.{i}.conv2.bias"], spec)
        out = out + h
    return out


def erd_forward(z: Tensor, weights: ErdWeights, proj: ProjectionParams,
                fb_steps: int = 1) -> Tensor:
    """One proximal step: clip(z - project(decoded residual estimate)).

    With ``fb_steps > 1`` the resnet output is concatenated with the encoder
    features, fused by the 1x1 pre-activation conv, and re-fed, running the
    resnet ``fb_steps`` times in total; the feedback tensor starts at zero.
    """
    cfg = weights.config
    if z.data.shape[1] != cfg.in_channels:
        raise ShapeError(
            f"erd_forward: input has {z.data.shape[1]} channels, "
            f"weights expect {cfg.in_channels}")
    if fb_steps < 1:
        raise InvalidSpecError(f"fb_steps must be >= 1, got {fb_steps}")
    if fb_steps > 1 and not cfg.feedback:
        raise InvalidSpecError("fb_steps > 1 requires weights built with feedback=True")

    enc_spec = ConvSpec(cfg.in_channels, cfg.features, (cfg.encoder_kernel,) * 2)
    res_spec = ConvSpec(cfg.features, cfg.features, (cfg.res_kernel,) * 2)
    enc = conv2d(z, weights["encoder.weight"], weights["encoder.bias"], enc_spec)

    if cfg.feedback:
        fuse_spec = ConvSpec(2 * cfg.features, cfg.features, (1, 1))
        fb = Tensor(np.zeros_like(enc.data))
        for _ in range(fb_steps):
            fused = prelu(concat_channels(fb, enc), weights["fuse.act.slopes"])
            fused = conv2d(fused, weights["fuse.conv.weight"], weights["fuse.conv.bias"],
                           fuse_spec)
            fb = _resnet_pass(fused, weights, res_spec)
        features = fb
    else:
        features = _resnet_pass(enc, weights, res_spec)

    dec_spec = ConvSpec(cfg.features, cfg.in_channels, (cfg.encoder_kernel,) * 2,
                        transposed=True)
    residual = transposed_conv2d(features, weights["decoder.weight"],
                                 weights["decoder.bias"], dec_spec)
    residual = project_residual(residual, proj)
    return clip_intensity(z - residual, *INTENSITY_RANGE)
