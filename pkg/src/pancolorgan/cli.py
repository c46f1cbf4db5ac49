"""Command line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
Training settings resolve as defaults < ``--config`` file < explicit flags.
``PANCOLORGAN_CKPT_DIR`` is searched for ``--ckpt`` paths that do not exist
relative to the working directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics, tensorio
from .dataset import PatchSource, load_manifest, load_raster, prepare_scenes, read_array
from .errors import ValidationError
from .inference import infer_full, infer_reduced, write_png_preview
from .pipeline import AugmentSpec
from .raster import NormalizationSpec, ValueRange, normalize
from .trainer import TrainConfig, load_generator, select_checkpoint, train_loop

log = logging.getLogger("pancolorgan")

CKPT_ENV = "PANCOLORGAN_CKPT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pancolorgan", description="Colorization-based pansharpening toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", help="tile paired MS/PAN scenes into a dataset")
    s.add_argument("--ms-dir", required=True)
    s.add_argument("--pan-dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stride", type=int, default=256, help="tile stride in MS pixels")
    s.add_argument("--bit-depth", type=int, default=12)
    s.add_argument("--norm-mode", choices=["fixed_bit_depth", "per_scene_minmax"],
                   default="fixed_bit_depth")
    s.add_argument("--split", choices=["train", "test"], default="train")

    s = sub.add_parser("train", help="train a generator/discriminator pair")
    s.add_argument("--manifest", required=True)
    s.add_argument("--mode", choices=["pancolorgan", "pancolorgan_rd", "pansrgan"])
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="JSON train config or a previous run.json")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--adversarial", choices=["ragan", "vanilla"])
    s.add_argument("--base-channels", type=int)
    s.add_argument("--disc-widths", help="comma separated, five values")
    s.add_argument("--max-steps", type=int)
    s.add_argument("--eval-count", type=int)
    s.add_argument("--resume", help="checkpoint directory to continue from")

    s = sub.add_parser("infer", help="pansharpen the patches of a manifest")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--resolution", choices=["reduced", "full"], default="reduced")
    s.add_argument("--guidance", choices=["gms", "pan"], default="pan")
    s.add_argument("--out", required=True)
    s.add_argument("--preview", action="store_true", help="also write 8-bit PNG previews")

    s = sub.add_parser("evaluate", help="score predictions against a manifest")
    s.add_argument("--pred-dir", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--mode", choices=["reference", "no-reference"], default="reference")
    s.add_argument("--out", required=True, help="report.json path; a .csv is written beside it")
    s.add_argument("--window", type=int, default=32)

    s = sub.add_parser("sharpness-report", help="reduced PAN vs grayscale MS sharpness table")
    s.add_argument("--ms", required=True)
    s.add_argument("--pan", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bit-depth", type=int, help="inputs are raw DN of this bit depth")
    return p


def _write_run(out_dir, record) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(json.dumps(record, indent=1))


def resolve_train_config(args) -> TrainConfig:
    d = TrainConfig().to_dict()
    d.pop("augment")
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        d.update(loaded.get("train_config", loaded))
    flags = {"mode": args.mode, "seed": args.seed, "epochs": args.epochs,
             "batch_size": args.batch_size, "lr": args.lr, "max_steps": args.max_steps,
             "eval_count": args.eval_count}
    d.update({k: v for k, v in flags.items() if v is not None})
    if args.alpha is not None:
        d["loss"] = {**d["loss"], "alpha": args.alpha}
    if args.adversarial is not None:
        d["loss"] = {**d["loss"], "adversarial": args.adversarial}
    if args.base_channels is not None:
        d["generator"] = {**d["generator"], "base_channels": args.base_channels}
    if args.disc_widths is not None:
        d["discriminator"] = {**d["discriminator"],
                              "widths": [int(x) for x in args.disc_widths.split(",")]}
    if args.mode is not None or args.seed is not None:
        # augmentation follows the overridden mode and seed
        d.pop("augment", None)
    return TrainConfig.from_dict(d)


def cmd_prepare(args) -> int:
    path = prepare_scenes(args.ms_dir, args.pan_dir, args.out, args.stride, args.bit_depth,
                          args.norm_mode, args.split)
    n = len(load_manifest(path, check_files=False))
    _write_run(args.out, {"command": "prepare", **vars(args), "patches": n})
    print(f"wrote {n} patches, manifest {path}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    manifest = load_manifest(args.manifest)
    _write_run(args.out, {"command": "train", "manifest": str(args.manifest),
                          "train_config": cfg.to_dict()})
    state = train_loop(cfg, manifest, args.out, resume_from=args.resume)
    last = state.history[-1] if state.history else {}
    print(f"finished epoch {state.epoch}, step {state.step}: {json.dumps(last)}")
    if state.evals:
        print(f"best checkpoint: ckpt_{select_checkpoint(state.evals):04d}")
    return 0


def _resolve_ckpt(path) -> Path:
    p = Path(path)
    if not p.exists() and os.environ.get(CKPT_ENV):
        p = Path(os.environ[CKPT_ENV]) / path
    if not p.exists():
        raise ValidationError(f"checkpoint {path} not found")
    return p


def cmd_infer(args) -> int:
    model = load_generator(_resolve_ckpt(args.ckpt))
    manifest = load_manifest(args.manifest)
    need_pan = args.resolution == "full" or args.guidance == "pan"
    source = PatchSource(manifest, load_pan=need_pan, cache=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, entry in enumerate(manifest.entries):
        bundle = source.bundle(i, AugmentSpec())
        if args.resolution == "reduced":
            pred = infer_reduced(model, bundle, args.guidance)
        else:
            pred = infer_full(model, bundle.y_pan, bundle.y_ms)
        tensorio.save_tensor(out / f"{entry.patch_id}.tensor", pred.data.astype(np.float32))
        if args.preview:
            write_png_preview(pred, out / f"{entry.patch_id}.png")
    _write_run(out, {"command": "infer", **vars(args), "patches": len(manifest)})
    print(f"wrote {len(manifest)} {args.resolution}-resolution outputs to {out}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    pred_dir = Path(args.pred_dir)

    def pred_of(entry):
        path = pred_dir / f"{entry.patch_id}.tensor"
        if not path.is_file():
            raise ValidationError(f"missing prediction {path}")
        return read_array(path)

    if args.mode == "reference":
        pairs = ((e.patch_id, pred_of(e), read_array(manifest.path(e, "y_ms")))
                 for e in manifest.entries)
        report = metrics.evaluate_reference(pairs, window=args.window)
    else:
        if not manifest.has_role("y_pan"):
            raise ValidationError("no-reference evaluation needs y_pan in the manifest")
        triples = ((e.patch_id, pred_of(e), read_array(manifest.path(e, "y_ms")),
                    read_array(manifest.path(e, "y_pan"))) for e in manifest.entries)
        report = metrics.evaluate_no_reference(triples, window=args.window)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(out)
    report.write_csv(out.with_suffix(".csv"))
    _write_run(out.parent, {"command": "evaluate", **vars(args)})
    print(json.dumps(report.to_dict()["aggregate"]))
    return 0


def cmd_sharpness(args) -> int:
    if args.bit_depth:
        spec = NormalizationSpec(args.bit_depth)
        ms = normalize(load_raster(args.ms, ValueRange.RAW_DN), spec)
        pan = normalize(load_raster(args.pan, ValueRange.RAW_DN), spec)
    else:
        ms, pan = load_raster(args.ms), load_raster(args.pan)
    rows = metrics.sharpness_report(pan, ms)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_sharpness_csv(rows, out)
    _write_run(out.parent, {"command": "sharpness-report", **vars(args)})
    for r in rows:
        print(f"{r['row']:<40} PSNR {r['psnr']:.3f}  sCC {r['scc']:.3f}  SSIM {r['ssim']:.3f}")
    return 0


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "infer": cmd_infer,
            "evaluate": cmd_evaluate, "sharpness-report": cmd_sharpness}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.exception("runtime failure")
        print(f"failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
