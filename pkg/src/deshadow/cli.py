"""Command-line entry point.

Subcommands: make-synthetic (emit a deterministic paired dataset),
train, infer, and eval. Exit codes are stable for scripting: 0 success,
2 validation failure, 3 runtime fault. Output directories are never
overwritten unless --force is passed.
"""

import argparse
import os
import sys
import time

import torch

from .config import Config
from .data import generate_synthetic_dataset, load_paired_dir, load_png, save_png
from .evaluate import evaluate_dir, write_report_tsv
from .pipeline import derive_seed, load_eval_models, remove_shadow
from .trainer import Trainer, load_checkpoint, read_metrics
from .validation import ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _refuse_existing(path, force, kind="directory"):
    if force:
        return
    if kind == "directory":
        if os.path.isdir(path) and os.listdir(path):
            raise ValidationError(f"output directory {path} is not empty (use --force)")
    elif os.path.exists(path):
        raise ValidationError(f"output file {path} exists (use --force)")


def _build_config(config_path, overrides):
    cfg = Config.from_file(config_path) if config_path else Config()
    return cfg.with_overrides(overrides or [])


def cmd_make_synthetic(args):
    _refuse_existing(args.out, args.force)
    os.makedirs(args.out, exist_ok=True)
    rows = generate_synthetic_dataset(
        args.out, args.count, args.size, args.seed, test_count=args.test_count
    )
    print(f"wrote {len(rows)} pairs under {args.out}")
    return EXIT_OK


def cmd_train(args):
    cfg = _build_config(args.config, args.set)
    if not args.resume:
        _refuse_existing(args.out, args.force)
    ckpt_dir = os.path.join(args.out, "checkpoints")
    log_dir = os.path.join(args.out, "logs")
    os.makedirs(ckpt_dir, exist_ok=True)
    os.makedirs(log_dir, exist_ok=True)

    index = load_paired_dir(args.data, "train")
    for name, reason in index.rejects:
        print(f"reject: {name} ({reason})", file=sys.stderr)
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume, index.samples, config=cfg)
    else:
        trainer = Trainer(cfg, index.samples)
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    trainer.run(metrics_path=os.path.join(log_dir, "metrics.tsv"), checkpoint_dir=ckpt_dir)
    final = trainer.save_checkpoint(os.path.join(ckpt_dir, "final.pt"))
    print(f"trained to step {trainer.step}; checkpoint: {final}")
    return EXIT_OK


def run_infer(checkpoint, input_dir, out_dir, steps=None, seed=0, force=False):
    """Restore every PNG under input_dir with EMA weights.

    Writes images/<name>.png plus reports/infer_manifest.tsv with
    per-image wall time; unreadable inputs are skipped and recorded.
    """
    _refuse_existing(out_dir, force)
    blob = load_checkpoint(checkpoint)
    restorer, denoiser, sched, cfg = load_eval_models(blob)
    image_dir = os.path.join(out_dir, "images")
    report_dir = os.path.join(out_dir, "reports")
    os.makedirs(image_dir, exist_ok=True)
    os.makedirs(report_dir, exist_ok=True)

    if not os.path.isdir(input_dir):
        raise ValidationError(f"not a directory: {input_dir}")
    names = sorted(n for n in os.listdir(input_dir) if n.endswith(".png"))
    rows, rejects = [], []
    for name in names:
        t0 = time.perf_counter()
        try:
            image = load_png(os.path.join(input_dir, name))
        except (OSError, ValidationError) as exc:
            rejects.append((name, str(exc)))
            continue
        gen = torch.Generator().manual_seed(derive_seed(seed, name))
        fused = remove_shadow(image, restorer, denoiser, sched, cfg, gen, steps=steps)
        save_png(fused, os.path.join(image_dir, name))
        rows.append((os.path.splitext(name)[0], (time.perf_counter() - t0) * 1000.0))

    manifest = os.path.join(report_dir, "infer_manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as fh:
        for name, reason in rejects:
            fh.write(f"# reject: {name} ({reason})\n")
        fh.write("id\twall_ms\n")
        for sample_id, ms in rows:
            fh.write(f"{sample_id}\t{ms:.1f}\n")
    return manifest


def cmd_infer(args):
    manifest = run_infer(
        args.checkpoint, args.input, args.out, steps=args.steps, seed=args.seed, force=args.force
    )
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_eval(args):
    _refuse_existing(args.out, args.force, kind="file")
    report = evaluate_dir(args.pred, args.gt, resolution=args.resolution)
    for name, reason in report.rejects:
        print(f"orphan: {name} ({reason})", file=sys.stderr)
    write_report_tsv(report, args.out)
    print(f"mean psnr: {report.mean_psnr:.4f} dB, mean ssim: {report.mean_ssim:.6f}")
    return EXIT_OK


SMOKE_PAIRS = 16
SMOKE_TEST_PAIRS = 4
SMOKE_SIZE = 64
SMOKE_STEPS = 50
SMOKE_WINDOW = 10


def run_pipeline_smoke(workdir, config=None, seed=0):
    """Tiny end-to-end check: synth data, short training, inference, eval.

    Returns 0 when every stage ran, all artifacts exist, and the
    window-10 smoothed total loss decreased from start to finish.
    Failures print the stage name and return a nonzero code.
    """
    cfg = (config or Config()).with_overrides(
        [
            f"train.max_steps={SMOKE_STEPS}",
            f"data.image_size={SMOKE_SIZE}",
            f"train.seed={seed}",
            "diffusion.sample_steps=10",
        ]
    )
    stage = "setup"
    try:
        data_dir = os.path.join(workdir, "data")
        run_dir = os.path.join(workdir, "run")
        infer_dir = os.path.join(workdir, "infer")
        report_path = os.path.join(workdir, "report.tsv")

        stage = "make-synthetic"
        os.makedirs(data_dir, exist_ok=True)
        generate_synthetic_dataset(
            data_dir, SMOKE_PAIRS, SMOKE_SIZE, seed, test_count=SMOKE_TEST_PAIRS
        )

        stage = "train"
        index = load_paired_dir(data_dir, "train")
        trainer = Trainer(cfg, index.samples)
        ckpt_dir = os.path.join(run_dir, "checkpoints")
        log_dir = os.path.join(run_dir, "logs")
        os.makedirs(ckpt_dir, exist_ok=True)
        os.makedirs(log_dir, exist_ok=True)
        metrics_path = os.path.join(log_dir, "metrics.tsv")
        trainer.run(metrics_path=metrics_path)
        checkpoint = trainer.save_checkpoint(os.path.join(ckpt_dir, "final.pt"))

        stage = "infer"
        run_infer(checkpoint, os.path.join(data_dir, "test", "shadow"), infer_dir, seed=seed)

        stage = "eval"
        report = evaluate_dir(
            os.path.join(infer_dir, "images"), os.path.join(data_dir, "test", "shadow_free")
        )
        write_report_tsv(report, report_path)

        stage = "verify"
        for path in (checkpoint, metrics_path, report_path):
            if not os.path.exists(path):
                raise RuntimeError(f"missing artifact: {path}")
        rows = read_metrics(metrics_path)
        if len(rows) != SMOKE_STEPS:
            raise RuntimeError(f"expected {SMOKE_STEPS} metric rows, got {len(rows)}")
        head = sum(r.loss_total for r in rows[:SMOKE_WINDOW]) / SMOKE_WINDOW
        tail = sum(r.loss_total for r in rows[-SMOKE_WINDOW:]) / SMOKE_WINDOW
        if not tail < head:
            raise RuntimeError(f"smoothed loss did not decrease: {head:.6f} -> {tail:.6f}")
    except ValidationError as exc:
        print(f"smoke stage failed: {stage}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - stage name is the contract
        print(f"smoke stage failed: {stage}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="deshadow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="emit a deterministic synthetic paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200, help="training pairs")
    p.add_argument("--test-count", type=int, default=0, help="held-out pairs")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("train", help="train both branches on a paired directory")
    p.add_argument("--data", required=True, help="dataset root with train/shadow[_free]")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="remove shadows from a directory of PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None, help="reverse-chain steps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM report over matched directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--resolution", type=int, default=256, help="0 keeps native size")
    p.add_argument("--out", required=True, help="TSV report path")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
