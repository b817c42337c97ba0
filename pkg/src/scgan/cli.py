"""Command-line entry point: ``scgan <subcommand> [flags]``.

Errors are reported as one line ``error: <Kind>: <message>`` on stderr with
exit code 1; usage errors exit with code 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import yaml

from scgan import data, evaluation
from scgan.errors import ConfigError, ScganError
from scgan.training import PRESET_ALIASES, TrainConfig

logger = logging.getLogger("scgan")

STYLES = ("hand_painted", "watercolor", "anime")
_DEFAULT = TrainConfig()

# flag dest -> path in the training config
TRAIN_FLAGS = {
    "steps": ("total_steps",),
    "batch_size": ("batch_size",),
    "seed": ("seed",),
    "preset": ("ablation_preset",),
    "gan_mode": ("gan_mode",),
    "attentive_mode": ("attentive_mode",),
    "extractor_weights": ("extractor_weights",),
    "annotations": ("annotations",),
    "image_size": ("image_size",),
    "lr": ("learning_rate",),
    "pool_size": ("pool_size",),
    "checkpoint_interval": ("checkpoint_interval",),
    "alpha": ("weights", "alpha"),
    "beta": ("weights", "beta"),
    "gamma": ("weights", "gamma"),
}


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return doc


def resolve_run(args) -> tuple[TrainConfig, dict]:
    """Merge defaults, the config file and flags (flags win)."""
    doc = _load_config_file(args.config)
    train_doc = dict(doc.get("train", {}))
    for dest, keys in TRAIN_FLAGS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        node = train_doc
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = value
    config = TrainConfig.from_dict(train_doc)
    run = {
        "data_root": args.data_root or doc.get("data_root"),
        "out": args.out or doc.get("out"),
        "style": args.style or doc.get("style"),
    }
    if not run["data_root"]:
        raise ConfigError("no data root given (--data-root or data_root in --config)")
    if not run["out"]:
        raise ConfigError("no output directory given (--out or out in --config)")
    return config, run


def corpus_root(data_root, style) -> Path:
    root = Path(data_root)
    return root / style if style else root


def cmd_train(args) -> int:
    from scgan.plotting import plot_loss_curves
    from scgan.training import read_loss_log, train

    config, run = resolve_run(args)
    root = corpus_root(run["data_root"], run["style"])
    final = train(config, root, run["out"], resume_from=args.checkpoint, run_info=run)
    log = read_loss_log(Path(run["out"]) / "loss_log.jsonl")
    if log and not args.no_figures:
        plot_loss_curves(log, Path(run["out"]) / "loss_curves.png")
    print(json.dumps({"checkpoint": str(final), "steps": config.total_steps}))
    return 0


def cmd_preprocess(args) -> int:
    options = data.PreprocessOptions(min_size=args.min_size, crop_mode=args.crop_mode, dedup=not args.no_dedup,
                                     output_size=args.size, workers=args.workers)
    report = data.preprocess_corpus(args.raw, args.out, options)
    with open(Path(args.out) / "preprocess_report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "reason"])
        writer.writerows(report.rejected_files)
    print(json.dumps(report.as_dict(), sort_keys=True))
    return 0


def _inputs(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        return data.list_images(path)
    if not path.is_file():
        raise data.DataError(f"input not found: {path}")
    return [path]


def cmd_infer(args) -> int:
    from scgan.training import load_checkpoint, translate

    state = load_checkpoint(args.checkpoint)
    gen = state.g_ab if args.direction == "AB" else state.g_ba
    gen.eval()
    channels = gen.config.in_channels
    out_dir = Path(args.out)
    written = []
    for path in _inputs(args.input):
        image = data.load_image(path, None, channels)
        target = out_dir / f"{path.stem}{args.suffix}.png"
        data.save_image(translate(gen, image), target)
        written.append(str(target))
    print(json.dumps({"outputs": written}))
    return 0


def cmd_evaluate(args) -> int:
    from scgan.plotting import plot_gradient_histogram, plot_gradient_maps

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = _inputs(args.input)
    images = [data.load_image(p, None, None) for p in paths]
    if args.checkpoint:
        from scgan.training import load_checkpoint, translate

        gen = load_checkpoint(args.checkpoint).g_ab
        gen.eval()
        images = [translate(gen, img if img.shape[0] == gen.config.in_channels else img.expand(3, -1, -1))
                  for img in images]
    rows, maps, mags = [], [], []
    for path, img in zip(paths, images):
        gmap = evaluation.gradient_map(img)
        data.save_image(gmap, out_dir / "gradient_maps" / f"{path.stem}_grad.png")
        maps.append(gmap)
        mags.append(evaluation.display_gradient_magnitude(img, args.scale))
        rows.append((path.name, evaluation.average_gradient(img, args.scale)))
    mean = sum(v for _, v in rows) / len(rows) if rows else float("nan")
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "average_gradient"])
        writer.writerows((name, repr(v)) for name, v in rows)
        writer.writerow(["__mean__", repr(mean)])
    if rows and not args.no_figures:
        names = [p.stem for p in paths]
        plot_gradient_maps(images[:8], maps[:8], names[:8], out_dir / "gradient_maps.png")
        plot_gradient_histogram(mags, names, out_dir / "gradient_histogram.png")
    print(json.dumps({"images": len(rows), "mean_average_gradient": mean}))
    return 0


def cmd_aggregate_survey(args) -> int:
    path = args.input or evaluation.bundled_survey_path()
    table = evaluation.read_survey_table(path)
    averages = evaluation.aggregate_survey(table)
    for line in evaluation.format_averages(averages):
        print(line)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "survey_averages.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "average", "average_rounded"])
            for method, avg in averages.items():
                writer.writerow([method, repr(avg), str(evaluation.round_half_up(avg))])
        if not args.no_figures:
            from scgan.plotting import plot_survey

            plot_survey(table, averages, out_dir / "survey.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="scgan", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="filter, crop and deduplicate a raw image directory", formatter_class=fmt)
    p.add_argument("--raw", required=True, help="directory of raw images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--min-size", type=int, default=64, help="reject images whose shorter side is smaller")
    p.add_argument("--crop-mode", choices=("center", "none"), default="center", help="square center crop or none")
    p.add_argument("--size", type=int, default=None, help="resize kept images to SIZE x SIZE")
    p.add_argument("--no-dedup", action="store_true", help="keep pixel-identical duplicates")
    p.add_argument("--workers", type=int, default=1, help="decode threads")
    p.set_defaults(func=cmd_preprocess)

    d = _DEFAULT
    p = sub.add_parser("train", help="train both translators", formatter_class=fmt)
    p.add_argument("--config", help="YAML run config; flags override its keys")
    p.add_argument("--data-root", help="corpus root with trainA/ and trainB/")
    p.add_argument("--out", help="output directory")
    p.add_argument("--style", choices=STYLES, help="use the corpus at <data-root>/<style>")
    p.add_argument("--steps", type=int, help=f"total training steps (default {d.total_steps})")
    p.add_argument("--batch-size", type=int, help=f"images per domain per step (default {d.batch_size})")
    p.add_argument("--seed", type=int, help=f"random seed (default {d.seed})")
    p.add_argument("--preset", choices=sorted(PRESET_ALIASES), help="ablation preset (default full)")
    p.add_argument("--gan-mode", choices=("log", "lsgan"), help=f"adversarial loss (default {d.gan_mode})")
    p.add_argument("--attentive-mode", choices=("crop_reconstruction", "crop_then_generate"),
                   help=f"attentive cycle variant (default {d.attentive_mode})")
    p.add_argument("--image-size", type=int, help=f"working resolution (default {d.image_size})")
    p.add_argument("--lr", type=float, help=f"learning rate (default {d.learning_rate})")
    p.add_argument("--pool-size", type=int, help=f"replay pool capacity, 0 disables (default {d.pool_size})")
    p.add_argument("--checkpoint-interval", type=int, help=f"steps between checkpoints (default {d.checkpoint_interval})")
    p.add_argument("--alpha", type=float, help=f"cycle weight (default {d.weights.alpha})")
    p.add_argument("--beta", type=float, help=f"total variation weight (default {d.weights.beta})")
    p.add_argument("--gamma", type=float, help=f"perceptual weight (default {d.weights.gamma})")
    p.add_argument("--extractor-weights", help="VGG19 weights file (falls back to $SCGAN_EXTRACTOR_WEIGHTS)")
    p.add_argument("--annotations", help="region sidecar (default <corpus>/annotations_a.jsonl if present)")
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--no-figures", action="store_true", help="skip the loss-curve figure")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="translate images with a trained checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--direction", choices=("AB", "BA"), default="AB", help="AB: selfie to cartoon")
    p.add_argument("--suffix", default="_cartoon", help="appended to output file stems")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="average-gradient report and gradient maps", formatter_class=fmt)
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--checkpoint", help="translate inputs with this checkpoint before measuring")
    p.add_argument("--scale", type=float, default=255.0, help="display scale of the metric")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("aggregate-survey", help="average 5-point survey distributions", formatter_class=fmt)
    p.add_argument("--input", help="delimited survey table (default: bundled user-study table)")
    p.add_argument("--out", help="directory for survey_averages.csv and survey.png")
    p.add_argument("--no-figures", action="store_true", help="skip the survey figure")
    p.set_defaults(func=cmd_aggregate_survey)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScganError, OSError, ValueError) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
