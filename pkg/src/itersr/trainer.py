"""Truncated-backprop training loop, Adam optimizer, and checkpointing.

The unrolled solver is trained in segments of ``tbptt_k`` steps: solver
state entering a segment is detached (no gradient crosses the boundary),
the batch l1 loss against ground truth is taken at the segment end, and
one optimizer update is applied per segment.  All trainable tensors (ERD
block plus extrapolation weights) live in a single parameter store, which
is what the optimizer and the checkpoint format operate on.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import imaging, solver
from .degradation import DegradationModel, estimate_sigma
from .erd import ErdConfig, ErdWeights, ProjectionParams, init_weights
from .errors import CheckpointFormatError, ConfigError, NumericError, StateError
from .layers import l1_loss
from .tensor import ParamStore, Tensor, backward

CHECKPOINT_MAGIC = b"ISRR"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    scale: int = 2
    batch_size: int = 4
    epochs: int = 300
    lr: float = 1e-3
    lr_constant_epochs: int = 100    # initial rate holds this many epochs
    lr_halve_every: int = 50         # then halves every this many epochs
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    K: int = 20
    fb_steps: int = 1
    tbptt_k: int = 5
    seed: int = 0
    patch_hr: int | None = None      # None: the per-scale training patch size
    augment: bool = True
    mixup_prob: float = 0.0          # opt-in; the blend weight is Beta(a, a)
    mixup_alpha: float = 1.2
    sigma: float = 0.0               # degradation noise when generating LR
    ht_mode: str = "bilinear"
    dtype: str = "float32"
    features: int = 64
    num_resblocks: int = 5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1 for training, got {self.K}")
        if not 1 <= self.tbptt_k <= self.K:
            raise ConfigError(
                f"tbptt_k must be in [1, K={self.K}], got {self.tbptt_k}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        if not 0.0 <= self.mixup_prob <= 1.0:
            raise ConfigError(f"mixup_prob must be in [0, 1], got {self.mixup_prob}")

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def erd_config(self) -> ErdConfig:
        return ErdConfig(in_channels=3, features=self.features,
                         num_resblocks=self.num_resblocks,
                         feedback=self.fb_steps > 1)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Step schedule: flat, then halved every ``lr_halve_every`` epochs (1-based)."""
    if epoch <= config.lr_constant_epochs:
        return config.lr
    halvings = math.ceil((epoch - config.lr_constant_epochs) / config.lr_halve_every)
    return config.lr * 0.5 ** halvings


class Adam:
    """Standard Adam with bias correction; no weight decay.

    Step counts are per parameter so that parameters participating only in
    some truncation segments (extrapolation weights of later steps) keep an
    exact bias correction.  With ``allow_missing`` a parameter without a
    gradient is skipped (TBPTT partial participation); otherwise it is a
    consistency error.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.updates = 0
        self.t: dict[str, int] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamStore, lr: float, allow_missing: bool = False) -> None:
        self.updates += 1
        for name, p in params.items():
            if p.grad is None:
                if allow_missing:
                    continue
                raise StateError(f"adam: parameter {name!r} has no gradient")
            g = p.grad
            t = self.t.get(name, 0) + 1
            self.t[name] = t
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            c1 = 1.0 - self.beta1 ** t
            c2 = 1.0 - self.beta2 ** t
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainState:
    config: TrainConfig
    model: DegradationModel
    erd: ErdWeights
    solver_weights: solver.SolverWeights
    params: ParamStore
    adam: Adam
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    loss_history: list[float] = field(default_factory=list)


def init_train_state(config: TrainConfig) -> TrainState:
    rng = np.random.default_rng(config.seed)
    dt = config.np_dtype()
    erd_w = init_weights(rng, config.erd_config(), dtype=dt)
    sw = solver.init_extrapolation_weights(config.K, dtype=dt)
    params = erd_w.params
    for i, w in enumerate(sw.w):
        params.add(f"solver.w.{i:02d}", w)
    model = DegradationModel(scale=config.scale, sigma=config.sigma)
    return TrainState(config=config, model=model, erd=erd_w, solver_weights=sw,
                      params=params, adam=Adam(config.beta1, config.beta2, config.eps),
                      rng=rng)


def _projection(state: TrainState, lr_batch: np.ndarray) -> ProjectionParams:
    sigmas = np.array([estimate_sigma(Tensor(lr_batch[i:i + 1]))
                       for i in range(lr_batch.shape[0])])
    return ProjectionParams(alpha=state.erd["proj.alpha"], sigma=sigmas)


def train_batch(state: TrainState, lr_batch: np.ndarray, hr_batch: np.ndarray,
                batch_index: int = 0) -> list[float]:
    """Run one TBPTT pass over a batch; one Adam update per truncation segment.

    Returns the segment losses (l1 against ground truth at each boundary).
    """
    cfg = state.config
    dt = cfg.np_dtype()
    y = Tensor(lr_batch.astype(dt, copy=False))
    gt = Tensor(hr_batch.astype(dt, copy=False))
    proj = _projection(state, lr_batch)
    lr_value = learning_rate(cfg, state.epoch + 1)

    sstate = solver.initialize(y, state.model, cfg.ht_mode)
    losses: list[float] = []
    k = 0
    while k < cfg.K:
        seg = min(cfg.tbptt_k, cfg.K - k)
        sstate = solver.SolverState(sstate.x_prev.detach(), sstate.x_curr.detach(),
                                    sstate.z.detach(), sstate.k)
        for _ in range(seg):
            sstate = solver.step(sstate, y, state.model, state.erd,
                                 state.solver_weights, proj, cfg.fb_steps, cfg.ht_mode)
        loss = l1_loss(sstate.x_curr, gt)
        value = loss.item()
        if not math.isfinite(value):
            norm = math.sqrt(sum(float(np.sum(p.data.astype(np.float64) ** 2))
                                 for _, p in state.params.items()))
            raise NumericError(
                f"non-finite loss at optimizer step {state.step}, batch {batch_index}, "
                f"segment ending at k={k + seg}; parameter norm {norm:.6g}")
        state.params.zero_grad()
        backward(loss)
        state.adam.step(state.params, lr_value, allow_missing=True)
        state.step += 1
        losses.append(value)
        state.loss_history.append(value)
        k += seg
    return losses


def _stack_pairs(pairs: list[imaging.PatchPair]) -> tuple[np.ndarray, np.ndarray]:
    lr = np.concatenate([p.lr.pixels.data for p in pairs], axis=0)
    hr = np.concatenate([p.hr.pixels.data for p in pairs], axis=0)
    return lr, hr


def train_epoch(state: TrainState, dataset: list[imaging.Image],
                log_fn=None) -> list[float]:
    """One pass over the dataset: each image contributes one random patch."""
    if not dataset:
        raise ConfigError("train_epoch: empty dataset")
    cfg = state.config
    state.epoch += 1
    order = state.rng.permutation(len(dataset))
    epoch_losses: list[float] = []
    for start in range(0, len(order), cfg.batch_size):
        chunk = order[start:start + cfg.batch_size]
        pairs = []
        for idx in chunk:
            pair = imaging.sample_patch_pair(dataset[int(idx)], cfg.scale, state.model,
                                             state.rng, hr_patch=cfg.patch_hr)
            if cfg.augment:
                pair = imaging.augment(pair, state.rng)
            pairs.append(pair)
        if cfg.mixup_prob > 0 and len(pairs) > 1 and \
                state.rng.random() < cfg.mixup_prob:
            lam = float(state.rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))
            rolled = pairs[1:] + pairs[:1]
            pairs = [imaging.mixup(a, b, lam) for a, b in zip(pairs, rolled)]
        lr_b, hr_b = _stack_pairs(pairs)
        seg_losses = train_batch(state, lr_b, hr_b, batch_index=start // cfg.batch_size)
        epoch_losses.extend(seg_losses)
        if log_fn is not None:
            log_fn({"step": state.step, "epoch": state.epoch,
                    "lr": learning_rate(cfg, state.epoch),
                    "loss": seg_losses[-1], "wall_time": time.time()})
    return epoch_losses


# -- checkpoint format -------------------------------------------------------------
#
# magic "ISRR" | version u16 LE | u32 header length | header JSON (sorted keys)
# | u32 entry count | entries.  Entry: u16 name length | name UTF-8 | u8 ndim(4)
# | 4 x u32 dims | u64 payload bytes | float32 LE values.  Entries hold the
# parameter table first, then Adam first/second moments, each lexicographic.


def _write_entry(f, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    f.write(struct.pack("<H", len(nb)))
    f.write(nb)
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack("<4I", *arr.shape))
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    f.write(struct.pack("<Q", len(payload)))
    f.write(payload)


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated checkpoint (wanted {n} bytes, got {len(buf)})")
    return buf


def _read_entry(f) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<H", _read_exact(f, 2))
    name = _read_exact(f, nlen).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(f, 1))
    if ndim != 4:
        raise CheckpointFormatError(f"entry {name!r}: expected 4-d shape, got {ndim}")
    shape = struct.unpack("<4I", _read_exact(f, 16))
    (nbytes,) = struct.unpack("<Q", _read_exact(f, 8))
    expected = 4 * int(np.prod(shape))
    if nbytes != expected:
        raise CheckpointFormatError(
            f"entry {name!r}: payload {nbytes} bytes, shape implies {expected}")
    arr = np.frombuffer(_read_exact(f, nbytes), dtype="<f4").reshape(shape)
    return name, arr.copy()


def save_checkpoint(state: TrainState, path) -> None:
    header = {
        "config": asdict(state.config),
        "epoch": state.epoch,
        "step": state.step,
        "adam_t": state.adam.t,
        "rng_state": state.rng.bit_generator.state,
        "param_count": state.params.count(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    names = state.params.names()
    entries = [(n, state.params[n].data) for n in names]
    zeros = {n: np.zeros_like(state.params[n].data) for n in names}
    entries += [(f"adam.m.{n}", state.adam.m.get(n, zeros[n])) for n in names]
    entries += [(f"adam.v.{n}", state.adam.v.get(n, zeros[n])) for n in names]
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            _write_entry(f, name, arr)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}; not a checkpoint file")
        (version,) = struct.unpack("<H", _read_exact(f, 2))
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4))
        try:
            return json.loads(_read_exact(f, hlen).decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise CheckpointFormatError(f"corrupt checkpoint header: {exc}") from exc


def load_checkpoint(path) -> TrainState:
    header = read_checkpoint_header(path)
    cfg_dict = dict(header["config"])
    config = TrainConfig(**cfg_dict)
    state = init_train_state(config)

    with open(path, "rb") as f:
        _read_exact(f, 4 + 2)
        (hlen,) = struct.unpack("<I", _read_exact(f, 4))
        _read_exact(f, hlen)
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        loaded: dict[str, np.ndarray] = {}
        for _ in range(count):
            name, arr = _read_entry(f)
            loaded[name] = arr

    dt = config.np_dtype()
    for name in state.params.names():
        if name not in loaded:
            raise CheckpointFormatError(f"checkpoint missing parameter {name!r}")
        p = state.params[name]
        if loaded[name].shape != p.data.shape:
            raise CheckpointFormatError(
                f"parameter {name!r}: checkpoint shape {loaded[name].shape} != "
                f"model shape {p.data.shape}")
        p.data = loaded[name].astype(dt)
        state.adam.m[name] = loaded[f"adam.m.{name}"].astype(dt)
        state.adam.v[name] = loaded[f"adam.v.{name}"].astype(dt)
    state.adam.t = int(header["adam_t"])
    state.epoch = int(header["epoch"])
    state.step = int(header["step"])
    rng_state = header["rng_state"]
    state.rng.bit_generator.state = rng_state
    return state
