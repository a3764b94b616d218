"""Command-line surface: degrade, train, sr, eval.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  ``ITERSR_LOG`` selects verbosity (debug, info, warning, error).
A plain KEY=VALUE config file can seed the train command; explicit flags
override file keys, unknown keys are rejected, and the effective
configuration is echoed to the log verbatim.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import imaging, metrics, resample, solver, trainer
from .degradation import DegradationModel, add_noise, apply_h, estimate_sigma
from .erd import ProjectionParams
from .errors import (CheckpointFormatError, ConfigError, DataError, ImageFormatError,
                     ItersrError, NumericError)
from .tensor import Tensor, no_grad

log = logging.getLogger("itersr")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# Keys accepted in a config file, mapped onto TrainConfig/train-command fields.
CONFIG_KEYS = {
    "scale": int, "k": int, "fb_steps": int, "tbptt_k": int, "lr": float,
    "batch_size": int, "epochs": int, "seed": int, "sigma": float,
    "patch_hr": int, "mixup_prob": float, "features": int, "num_resblocks": int,
    "hr_dir": str, "checkpoint": str, "ensemble": int, "log_file": str,
}


def _setup_logging() -> None:
    level = os.environ.get("ITERSR_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def read_config_file(path) -> dict:
    """Parse KEY=VALUE lines; '#' starts a comment; unknown keys are errors."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected KEY=VALUE, got {raw.rstrip()!r}")
            key, _, value = line.partition("=")
            key = key.strip().lower()
            value = value.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = CONFIG_KEYS[key](value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def _echo_config(cfg: dict) -> None:
    for key in sorted(cfg):
        log.info("config %s=%s", key, cfg[key])


def _atomic_save_png(image: imaging.Image, path: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp.png")
    os.close(fd)
    try:
        imaging.save_png(image, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _list_pngs(directory: Path) -> list[Path]:
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise DataError(f"no PNG files in {directory}")
    return files


def _modcrop(image: imaging.Image, scale: int) -> imaging.Image:
    h, w = image.size
    h2, w2 = h - h % scale, w - w % scale
    if (h2, w2) == (h, w):
        return image
    return imaging.Image(Tensor(image.pixels.data[:, :, :h2, :w2].copy()),
                         image.range_tag, image.colorspace)


def cmd_degrade(args) -> int:
    hr_dir, out_dir = Path(args.hr_dir), Path(args.out_dir)
    if not hr_dir.is_dir():
        log.error("HR directory %s does not exist", hr_dir)
        return EXIT_DATA
    out_dir.mkdir(parents=True, exist_ok=True)
    model = DegradationModel(scale=args.scale, sigma=args.sigma)
    rng = np.random.default_rng(args.seed)
    manifest: list[tuple[str, str]] = []
    failures: list[str] = []
    for path in _list_pngs(hr_dir):
        try:
            hr = _modcrop(imaging.load_png(path), args.scale)
            lr_t = apply_h(hr.pixels, model)
            if args.sigma > 0:
                lr_t = add_noise(lr_t, args.sigma, rng)
            lr = imaging.Image(lr_t, hr.range_tag, hr.colorspace)
            out_path = out_dir / path.name
            _atomic_save_png(lr, out_path)
            manifest.append((str(path), str(out_path)))
        except ItersrError as exc:
            failures.append(f"{path}: {exc}")
    manifest_path = out_dir / "manifest.txt"
    with open(manifest_path, "w", encoding="utf-8") as f:
        for hr_path, lr_path in manifest:
            f.write(f"{hr_path}\t{lr_path}\n")
    log.info("degraded %d image(s) at scale %d into %s", len(manifest), args.scale, out_dir)
    if failures:
        for msg in failures:
            log.error("failed: %s", msg)
        return EXIT_DATA
    return EXIT_OK


def cmd_train(args) -> int:
    file_cfg = read_config_file(args.config) if args.config else {}
    merged = dict(file_cfg)
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    if "hr_dir" not in merged:
        raise ConfigError("train needs an HR image directory (--hr-dir or config hr_dir)")
    if "checkpoint" not in merged:
        raise ConfigError("train needs a checkpoint path (--checkpoint or config checkpoint)")
    _echo_config(merged)

    cfg_fields = dict(
        scale=merged.get("scale", 2),
        batch_size=merged.get("batch_size", 4),
        epochs=merged.get("epochs", 300),
        lr=merged.get("lr", 1e-3),
        K=merged.get("k", solver.SOLVER_DEFAULTS.get(merged.get("scale", 2), (20, 1))[0]),
        fb_steps=merged.get("fb_steps",
                            solver.SOLVER_DEFAULTS.get(merged.get("scale", 2), (20, 1))[1]),
        seed=merged.get("seed", 0),
        sigma=merged.get("sigma", 0.0),
        mixup_prob=merged.get("mixup_prob", 0.0),
        features=merged.get("features", 64),
        num_resblocks=merged.get("num_resblocks", 5),
    )
    cfg_fields["tbptt_k"] = merged.get("tbptt_k", min(5, cfg_fields["K"]))
    if "patch_hr" in merged:
        cfg_fields["patch_hr"] = merged["patch_hr"]
    config = trainer.TrainConfig(**cfg_fields)

    dataset = [imaging.load_png(p) for p in _list_pngs(Path(merged["hr_dir"]))]
    state = trainer.init_train_state(config)
    ckpt_path = Path(merged["checkpoint"])
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)

    log_fh = open(merged["log_file"], "a", encoding="utf-8") if "log_file" in merged else None

    def log_record(rec: dict) -> None:
        log.debug("train %s", rec)
        if log_fh is not None:
            log_fh.write(json.dumps(rec, sort_keys=True) + "\n")

    try:
        if config.epochs == 0:
            trainer.save_checkpoint(state, ckpt_path)
            log.info("epochs=0: wrote initialization checkpoint %s", ckpt_path)
            return EXIT_OK
        for _ in range(config.epochs):
            losses = trainer.train_epoch(state, dataset, log_fn=log_record)
            trainer.save_checkpoint(state, ckpt_path)
            log.info("epoch %d/%d: mean l1 %.4f (lr %.2e), checkpoint %s",
                     state.epoch, config.epochs, float(np.mean(losses)),
                     trainer.learning_rate(config, state.epoch), ckpt_path)
    finally:
        if log_fh is not None:
            log_fh.close()
    return EXIT_OK


def _super_resolve(state: trainer.TrainState, lr_image: imaging.Image) -> imaging.Image:
    cfg = state.config
    scfg = solver.SolverConfig(K=cfg.K, fb_steps=cfg.fb_steps, scale=cfg.scale,
                               ht_mode=cfg.ht_mode)
    sigma = estimate_sigma(lr_image.pixels)
    proj = ProjectionParams(alpha=state.erd["proj.alpha"], sigma=np.array([sigma]))
    with no_grad():
        y = Tensor(lr_image.pixels.data.astype(cfg.np_dtype()))
        out = solver.run(y, state.model, state.erd, state.solver_weights, scfg, proj)
    return imaging.Image(Tensor(out.data.astype(np.float64)),
                         lr_image.range_tag, lr_image.colorspace)


def cmd_sr(args) -> int:
    state = trainer.load_checkpoint(args.checkpoint)
    lr_image = imaging.load_png(args.input)
    if args.ensemble:
        result = metrics.self_ensemble(lambda img: _super_resolve(state, img), lr_image)
    else:
        result = _super_resolve(state, lr_image)
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_save_png(result, out_path)
    log.info("super-resolved %s -> %s (%dx%d)", args.input, out_path,
             result.size[0], result.size[1])
    return EXIT_OK


def cmd_eval(args) -> int:
    sr_dir, gt_dir = Path(args.sr_dir), Path(args.gt_dir)
    report = metrics.EvalReport(scale=args.scale, border_crop=args.scale)
    for sr_path in _list_pngs(sr_dir):
        gt_path = gt_dir / sr_path.name
        if not gt_path.exists():
            raise DataError(f"no ground-truth file for {sr_path.name} in {gt_dir}")
        sr_img = imaging.load_png(sr_path)
        gt_img = _modcrop(imaging.load_png(gt_path), args.scale)
        p, s = metrics.evaluate_pair(sr_img, gt_img, args.scale)
        report.add(sr_path.name, p, s)
    print(report.table())
    if args.records:
        with open(args.records, "w", encoding="utf-8") as f:
            for row in report.records():
                f.write(json.dumps(row, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_bicubic(args) -> int:
    """Reference cubic upsampling of an LR image (baseline for comparisons)."""
    lr_image = imaging.load_png(args.input)
    up = resample.bicubic_resize(lr_image.pixels.data, args.scale)
    out = imaging.Image(Tensor(np.clip(up, 0, 255)), lr_image.range_tag,
                        lr_image.colorspace)
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_save_png(out, out_path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="itersr",
                                     description="Iterative residual super-resolution")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="generate LR images from an HR directory")
    p.add_argument("hr_dir")
    p.add_argument("out_dir")
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train a model on an HR directory")
    p.add_argument("--config", help="KEY=VALUE config file; flags override")
    p.add_argument("--hr-dir", dest="hr_dir")
    p.add_argument("--checkpoint", dest="checkpoint")
    p.add_argument("--scale", type=int, dest="scale")
    p.add_argument("--k", type=int, dest="k")
    p.add_argument("--fb-steps", type=int, dest="fb_steps")
    p.add_argument("--tbptt-k", type=int, dest="tbptt_k")
    p.add_argument("--lr", type=float, dest="lr")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int, dest="epochs")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--sigma", type=float, dest="sigma")
    p.add_argument("--patch-hr", type=int, dest="patch_hr")
    p.add_argument("--mixup-prob", type=float, dest="mixup_prob")
    p.add_argument("--features", type=int, dest="features")
    p.add_argument("--num-resblocks", type=int, dest="num_resblocks")
    p.add_argument("--log-file", dest="log_file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve one LR PNG with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ensemble", action="store_true",
                   help="average the 8 flip/rotation variants")
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("eval", help="evaluate SR images against ground truth")
    p.add_argument("sr_dir")
    p.add_argument("gt_dir")
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--records", help="write line-delimited JSON records here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bicubic", help="cubic upsample (baseline helper)")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--scale", type=int, default=2)
    p.set_defaults(func=cmd_bicubic)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataError, ImageFormatError, CheckpointFormatError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
