"""Command-line surface: train, enhance, decompose, evaluate, ablate, bench.

Exit codes: 0 ok, 2 config/input error, 3 checkpoint error, 4 numerical
failure. Commands validate their inputs before writing anything, and every
report path emits delimited output plus a rendered figure.
"""

import argparse
import csv
import platform
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .bundle import load_checkpoint
from .config import apply_overrides, build_run_config, read_raw_config
from .decomposition import from_batch, to_batch
from .errors import (
    CheckpointError,
    ConfigError,
    DecodeError,
    DependencyError,
    ImageWriteError,
    InvalidInputError,
    LowlightError,
    NotFoundError,
    NumericalError,
    PairingError,
)
from .evaluate import evaluate_dir, write_csv, write_markdown
from .features import make_extractor
from .imaging import IMAGE_SUFFIXES, discover_pairs, load_image, save_image
from .niqe import default_params, load_ns_params
from .refinement import enhance, recompose, run_pipeline
from .training import train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_NUMERICAL = 4

ABLATION_VARIANTS = (
    ("w/o OEC", {"use_oec": False}),
    ("w/o CG", {"use_cg": False}),
    ("w/o CE", {"use_ce": False}),
    ("Ours", {}),
)


def _list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFoundError(f"directory not found: {directory}")
    images = sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        raise InvalidInputError(f"no images in {directory}")
    return images


def _load_config(args):
    raw = read_raw_config(args.config) if getattr(args, "config", None) else {}
    overrides = []
    flag_map = {
        "dataset": "data.dataset",
        "output_dir": "data.output_dir",
        "reference_dir": "data.reference_dir",
        "learning_rate": "train.learning_rate",
        "max_iterations": "train.max_iterations",
        "batch_size": "train.batch_size",
        "image_size": "train.image_size",
        "seed": "train.seed",
        "precision": "train.precision",
        "checkpoint_every": "train.checkpoint_every",
        "device": "train.device",
        "extractor": "train.extractor",
    }
    for attr, target in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{target}={value}")
    overrides.extend(getattr(args, "set", None) or [])
    apply_overrides(raw, overrides)
    return build_run_config(raw)


def _niqe_params_from(args, cfg=None):
    choice = getattr(args, "niqe_params", None)
    if choice is None and cfg is not None and cfg.niqe_params is not None:
        choice = str(cfg.niqe_params)
    if choice == "none":
        return None
    if choice:
        return load_ns_params(choice)
    return default_params()


def cmd_train(args):
    cfg = _load_config(args)
    if cfg.dataset is None:
        raise ConfigError("no dataset configured (set [data] dataset or --dataset)")
    if cfg.output_dir is None:
        raise ConfigError("no output directory configured (set [data] output_dir or --output-dir)")
    sources = discover_pairs(cfg.dataset)
    run_dir = Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    from .config import write_effective_config

    write_effective_config(cfg, run_dir / "effective.conf")

    def progress(iteration, report):
        if iteration % max(1, cfg.train.checkpoint_every // 4) == 0 or iteration == 1:
            print(f"iter {iteration:>7d}  total {report.total:.5f}", flush=True)

    ckpt = train(
        cfg.train,
        sources,
        run_dir,
        manifest_overrides=cfg.manifest_overrides(),
        resume=args.resume,
        toggles=cfg.toggles,
        progress=progress,
    )
    from .figures import save_loss_curves

    save_loss_curves(run_dir / "log.csv", run_dir / "loss_curve.png")
    print(f"final checkpoint: {ckpt}")
    return EXIT_OK


def _enhance_dir(bundle, images, output_dir, toggles):
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    use_cg, use_ce, use_oec = toggles
    timings = []
    for path in images:
        img = load_image(path)
        t0 = time.perf_counter()
        result = enhance(bundle, img, use_cg=use_cg, use_ce=use_ce, use_oec=use_oec)
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        out_name = path.name if path.suffix.lower() == ".png" else path.stem + ".png"
        save_image(result.image, output_dir / out_name)
        timings.append((out_name, elapsed_ms))
    return timings


def cmd_enhance(args):
    bundle, _ = load_checkpoint(args.ckpt)
    images = _list_images(args.input_dir)
    toggles = (not args.no_cg, not args.no_ce, not args.no_oec)
    timings = _enhance_dir(bundle, images, args.output_dir, toggles)
    mean_ms = statistics.fmean(ms for _, ms in timings)
    with open(Path(args.output_dir) / "timing.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "milliseconds"])
        for name, ms in timings:
            writer.writerow([name, f"{ms:.3f}"])
        writer.writerow(["mean", f"{mean_ms:.3f}"])
    print(f"enhanced {len(timings)} images, mean {mean_ms:.1f} ms/image")
    return EXIT_OK


def cmd_decompose(args):
    bundle, _ = load_checkpoint(args.ckpt)
    img = load_image(args.image)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        arts = run_pipeline(bundle, to_batch(img))
        recon = recompose(arts.reflectance_f, arts.illumination_f, 1.0)
    stem = Path(args.image).stem
    outputs = {
        f"{stem}_i.png": from_batch(arts.projection),
        f"{stem}_r.png": from_batch(arts.reflectance_f),
        f"{stem}_l.png": np.repeat(from_batch(arts.illumination_f), 3, axis=0),
        f"{stem}_recon.png": from_batch(recon),
    }
    for name, array in outputs.items():
        save_image(np.clip(array, 0.0, 1.0), outdir / name)
        print(f"wrote {outdir / name}")
    return EXIT_OK


def cmd_evaluate(args):
    extractor = make_extractor(args.extractor) if args.reference_dir else None
    ns_params = _niqe_params_from(args)
    report = evaluate_dir(
        args.enhanced_dir,
        reference_dir=args.reference_dir,
        extractor=extractor,
        ns_params=ns_params,
    )
    output_dir = Path(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    write_csv(report, output_dir / "metrics.csv")
    write_markdown(report, output_dir / "metrics.md")
    from .figures import save_metric_bars

    save_metric_bars(report, output_dir / "metrics.png")
    print((output_dir / "metrics.md").read_text())
    return EXIT_OK


def _safe_variant_name(label):
    return label.replace("/", "").replace(" ", "_").lower()


def cmd_ablate(args):
    cfg = _load_config(args)
    if cfg.dataset is None:
        raise ConfigError("no dataset configured (set [data] dataset or --dataset)")
    output_dir = cfg.output_dir if args.output_dir is None else Path(args.output_dir)
    if output_dir is None:
        raise ConfigError("no output directory configured")
    images = _list_images(cfg.dataset)
    reference_dir = args.reference_dir or cfg.reference_dir
    extractor = make_extractor(cfg.train.extractor) if reference_dir else None
    ns_params = _niqe_params_from(args, cfg)

    if args.mode == "inference":
        if args.ckpt is None:
            raise ConfigError("inference-mode ablation needs --ckpt")
        base_bundle, _ = load_checkpoint(args.ckpt)
    else:
        sources = discover_pairs(cfg.dataset)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    table = []
    for label, toggle_off in ABLATION_VARIANTS:
        toggles = {
            "use_cg": cfg.use_cg,
            "use_ce": cfg.use_ce,
            "use_oec": cfg.use_oec,
            **toggle_off,
        }
        toggle_tuple = (toggles["use_cg"], toggles["use_ce"], toggles["use_oec"])
        variant_dir = output_dir / _safe_variant_name(label)
        final_loss = None
        if args.mode == "inference":
            bundle = base_bundle
        else:
            run_dir = output_dir / ("train_" + _safe_variant_name(label))
            ckpt = train(
                cfg.train,
                sources,
                run_dir,
                manifest_overrides=cfg.manifest_overrides(),
                toggles=toggle_tuple,
            )
            bundle, _ = load_checkpoint(ckpt)
            final_loss = _last_logged_total(run_dir / "log.csv")
        _enhance_dir(bundle, images, variant_dir, toggle_tuple)
        report = evaluate_dir(
            variant_dir,
            reference_dir=reference_dir,
            extractor=extractor,
            ns_params=ns_params,
        )
        means = report.means()
        row = {"variant": label, **means}
        if final_loss is not None:
            row["final_train_loss"] = final_loss
        table.append(row)

    fields = ["variant", "psnr", "ssim", "perc_dist", "niqe"]
    if any("final_train_loss" in row for row in table):
        fields.append("final_train_loss")
    with open(output_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in table:
            writer.writerow({k: row.get(k, "") for k in fields})
    md_lines = [
        "| Variant | PSNR↑ | SSIM↑ | LPIPS-like↓ | NIQE↓ |",
        "|---|---|---|---|---|",
    ]
    for row in table:
        cells = [
            f"{row[k]:.4f}" if row.get(k) is not None else "-"
            for k in ("psnr", "ssim", "perc_dist", "niqe")
        ]
        md_lines.append("| " + " | ".join([row["variant"], *cells]) + " |")
    (output_dir / "ablation.md").write_text("\n".join(md_lines) + "\n")
    from .figures import save_ablation_bars

    save_ablation_bars(table, output_dir / "ablation.png")
    print((output_dir / "ablation.md").read_text())
    return EXIT_OK


def _last_logged_total(log_csv):
    last = None
    with open(log_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            last = float(row["total"])
    return last


def hardware_description():
    bits = [platform.platform(), platform.machine()]
    if platform.processor():
        bits.append(platform.processor())
    bits.append(f"torch {torch.__version__} ({torch.get_num_threads()} threads)")
    return ", ".join(bits)


def cmd_bench(args):
    bundle, _ = load_checkpoint(args.ckpt)
    size = args.size
    rng = np.random.default_rng(0)
    img = rng.uniform(0.0, 0.5, size=(3, size, size)).astype(np.float32)
    for _ in range(args.warmup):
        enhance(bundle, img)
    times_ms = []
    for _ in range(args.iterations):
        t0 = time.perf_counter()
        enhance(bundle, img)
        times_ms.append((time.perf_counter() - t0) * 1000.0)
    stats = bench_stats(times_ms)
    hw = hardware_description()
    print(f"resolution: {size}x{size}")
    print(f"hardware: {hw}")
    for key in ("mean", "median", "p95", "std", "cv"):
        print(f"{key}: {stats[key]:.3f}" + (" ms" if key != "cv" else ""))
    if args.output_dir:
        outdir = Path(args.output_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "bench.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "milliseconds"])
            for idx, ms in enumerate(times_ms, 1):
                writer.writerow([idx, f"{ms:.4f}"])
        with open(outdir / "bench_summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["resolution", "iterations", "mean_ms", "median_ms", "p95_ms", "std_ms", "cv", "hardware"])
            writer.writerow(
                [f"{size}x{size}", args.iterations, f"{stats['mean']:.4f}",
                 f"{stats['median']:.4f}", f"{stats['p95']:.4f}",
                 f"{stats['std']:.4f}", f"{stats['cv']:.4f}", hw]
            )
        from .figures import save_latency_hist

        save_latency_hist(times_ms, outdir / "bench.png", title=f"{size}x{size} on {platform.machine()}")
    return EXIT_OK


def bench_stats(times_ms):
    mean = statistics.fmean(times_ms)
    std = statistics.pstdev(times_ms)
    return {
        "mean": mean,
        "median": statistics.median(times_ms),
        "p95": float(np.percentile(times_ms, 95)),
        "std": std,
        "cv": std / mean if mean > 0 else float("inf"),
    }


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lowlight",
        description="Unsupervised low-light traffic image enhancement toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train (or resume) a model")
    p_train.add_argument("--config", help="INI run config file")
    p_train.add_argument("--dataset", help="dataset directory (pairs or flat images)")
    p_train.add_argument("--output-dir", help="run directory for checkpoints and logs")
    p_train.add_argument("--resume", help="checkpoint directory to resume from")
    p_train.add_argument("--learning-rate", type=float)
    p_train.add_argument("--max-iterations", type=int)
    p_train.add_argument("--batch-size", type=int)
    p_train.add_argument("--image-size", type=int)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--precision", choices=("full", "reduced"))
    p_train.add_argument("--checkpoint-every", type=int)
    p_train.add_argument("--device")
    p_train.add_argument("--extractor", choices=("builtin", "vgg16", "none"))
    p_train.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                         help="generic config override (repeatable)")
    p_train.set_defaults(func=cmd_train)

    p_enh = sub.add_parser("enhance", help="enhance every image in a directory")
    p_enh.add_argument("--ckpt", required=True)
    p_enh.add_argument("--input-dir", required=True)
    p_enh.add_argument("--output-dir", required=True)
    p_enh.add_argument("--no-cg", action="store_true", help="bypass Channel-Guidance")
    p_enh.add_argument("--no-ce", action="store_true", help="bypass Color Enhancement")
    p_enh.add_argument("--no-oec", action="store_true", help="bypass Over-Exposure Correction")
    p_enh.set_defaults(func=cmd_enhance)

    p_dec = sub.add_parser("decompose", help="write projection/reflectance/illumination maps")
    p_dec.add_argument("--ckpt", required=True)
    p_dec.add_argument("--image", required=True)
    p_dec.add_argument("--outdir", required=True)
    p_dec.set_defaults(func=cmd_decompose)

    p_eval = sub.add_parser("evaluate", help="score an enhanced directory")
    p_eval.add_argument("--enhanced-dir", required=True)
    p_eval.add_argument("--reference-dir")
    p_eval.add_argument("--output-dir", required=True)
    p_eval.add_argument("--extractor", default="builtin", choices=("builtin", "vgg16"))
    p_eval.add_argument("--niqe-params", help="params file, or 'none' to skip NIQE")
    p_eval.set_defaults(func=cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="run the module-ablation table")
    p_abl.add_argument("--config")
    p_abl.add_argument("--dataset")
    p_abl.add_argument("--reference-dir")
    p_abl.add_argument("--output-dir")
    p_abl.add_argument("--mode", choices=("inference", "retrain"), default="inference")
    p_abl.add_argument("--ckpt", help="checkpoint for inference-mode ablation")
    p_abl.add_argument("--niqe-params")
    p_abl.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p_abl.set_defaults(func=cmd_ablate)

    p_bench = sub.add_parser("bench", help="measure per-image inference latency")
    p_bench.add_argument("--ckpt", required=True)
    p_bench.add_argument("--size", type=int, default=512)
    p_bench.add_argument("--iterations", type=int, default=100)
    p_bench.add_argument("--warmup", type=int, default=5)
    p_bench.add_argument("--output-dir")
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigError,
        InvalidInputError,
        NotFoundError,
        DecodeError,
        PairingError,
        DependencyError,
        ImageWriteError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LowlightError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
