"""Command-line entry point: ``east <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from east.config import SEED_ENV, RunConfig, config_from_text, load_config, parse_rho_grid
from east.errors import CheckpointError, ConfigError, EASTError
from east.evaluate import MetricsTable, count_flops, evaluate
from east.masking import MaskConfig, make_mask, rank_tubelets
from east.model import ModelConfig, load_checkpoint, save_checkpoint
from east.plot import accuracy_chart, mask_heatmap
from east.sampler import SamplingConfig, build_inference_clip
from east.train import Trainer
from east.video import generate_synthetic_dataset, read_dataset, write_dataset

EXIT_IO = 8
CONFIG_NAME = "config.cfg"

EXIT_CODES = """\
exit codes:
  0  success
  1  other EAST error
  2  bad command-line usage
  3  missing or invalid configuration key or value
  4  malformed dataset file
  5  unreadable checkpoint or checkpoint/config mismatch
  6  leakage guard tripped (a frame past the observation boundary was read)
  7  non-finite loss or logits
  8  unreadable or unwritable path
errors are printed to stderr as one line: east: error code=<n> kind=<name> msg=<json string>"""


def _config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), getattr(args, "set", None) or [])


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    videos = generate_synthetic_dataset(cfg.data)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(videos, out, num_classes=cfg.data.num_classes)
    cfg.write(out.with_name(out.name + ".cfg"))
    print(f"wrote {len(videos)} videos to {out}")
    return 0


def _check_geometry(videos, cfg, source: str, error=ConfigError) -> None:
    if not videos:
        raise ConfigError(f"{source} contains no videos")
    T_d, H, W, C = videos[0].frames.shape
    m = cfg.model
    if (H, W, C) != (m.H, m.W, m.C):
        raise error(f"{source} frames are {H}x{W}x{C} but the model expects "
                              f"{m.H}x{m.W}x{m.C}")
    top = max(v.label for v in videos)
    if top >= m.num_classes:
        raise error(f"{source} has label {top} but the model has {m.num_classes} classes")


def cmd_train(args) -> int:
    cfg = _config(args)
    videos = read_dataset(args.data)
    _check_geometry(videos, cfg, args.data)
    out = _out_dir(args.out)
    cfg.write(out / CONFIG_NAME)
    trainer = Trainer(cfg.model, cfg.train, cfg.sampling)
    trainer.fit(videos, out / "train_log.csv", log_every=args.log_every)
    save_checkpoint(out / "model.pt", trainer.model, {"config": cfg.to_text()}, trainer.step)
    print(f"trained {trainer.step} steps; checkpoint {out / 'model.pt'}")
    return 0


def _checkpoint_config(blob: dict, source: str) -> RunConfig:
    text = blob.get("run_config", {}).get("config")
    if text is None:
        cfg = RunConfig()
        cfg.model = ModelConfig(**blob["model_config"])
        return cfg
    try:
        return config_from_text(text)
    except ConfigError as exc:
        raise CheckpointError(f"{source}: stored config is invalid: {exc}") from None


def cmd_eval(args) -> int:
    model, blob = load_checkpoint(args.checkpoint)
    cfg = _checkpoint_config(blob, args.checkpoint)
    for item in args.set or []:
        key, _, value = item.partition("=")
        if key.strip().startswith("model."):
            raise CheckpointError(f"cannot override {key.strip()}: the checkpoint fixes the model")
        cfg.set(key.strip(), value)
    if asdict(cfg.model) != asdict(model.cfg):
        raise CheckpointError("checkpoint weights and stored config disagree on the model")
    if os.environ.get(SEED_ENV):
        try:
            cfg.train.seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    if args.rho_grid:
        try:
            cfg.eval.rho_grid = parse_rho_grid(args.rho_grid)
        except ValueError as exc:
            raise ConfigError(f"bad --rho-grid {args.rho_grid!r}: {exc}") from None
    if args.mask:
        cfg.eval.mask_kind = args.mask
    cfg.validate()
    videos = read_dataset(args.data)
    _check_geometry(videos, cfg, args.data, CheckpointError)
    table = evaluate(model, videos, cfg.eval.rho_grid, cfg.eval_mask_kind, cfg.train.k,
                     seed=cfg.train.seed, batch_size=cfg.eval.batch_size)
    out = _out_dir(args.out)
    cfg.write(out / CONFIG_NAME)
    table.write_csv(out / "metrics.csv")
    sys.stdout.write(table.to_csv())
    return 0


def cmd_mask_viz(args) -> int:
    cfg = _config(args)
    videos = read_dataset(args.data)
    if not 0 <= args.index < len(videos):
        raise ConfigError(f"--index {args.index} outside [0, {len(videos)})")
    k = cfg.train.k if args.k is None else args.k
    mask_cfg = MaskConfig(p=cfg.model.p, d=cfg.model.d, k=k)
    clip = build_inference_clip(videos[args.index].frames, args.rho, SamplingConfig(T=cfg.model.T))
    mask_cfg.validate(clip.shape)
    sel = make_mask("difference", clip, mask_cfg)
    svg = mask_heatmap(clip, sel.keep, rank_tubelets(clip, mask_cfg), mask_cfg.p, mask_cfg.d)
    out = Path(args.out)
    out.write_text(svg, encoding="utf-8")
    cfg.write(out.with_name(out.name + ".cfg"))
    print(f"retained {sel.n_retained} of {sel.keep.size} tubelets; wrote {out}")
    return 0


def cmd_flops(args) -> int:
    cfg = _config(args)
    k = cfg.train.k if args.k is None else args.k
    MaskConfig(p=cfg.model.p, d=cfg.model.d, k=k).validate()
    report = count_flops(cfg.model, k, include_oracle=args.oracle)
    full = count_flops(cfg.model, 0.0, include_oracle=args.oracle)
    sys.stdout.write(report.as_text())
    ratio = full.total_flops / report.total_flops if report.total_flops else float("inf")
    print(f"ratio_vs_unmasked={ratio:.6f}")
    return 0


def cmd_plot(args) -> int:
    labels = args.labels or [Path(m).stem if Path(m).stem != "metrics" else Path(m).parent.name
                             for m in args.metrics]
    if len(labels) != len(args.metrics):
        raise ConfigError("--labels must name every metrics file")
    curves = []
    for label, path in zip(labels, args.metrics):
        table = MetricsTable.read_csv(path)
        curves.append((label, [(r, a) for r, a, _ in table.rows]))
    Path(args.out).write_text(accuracy_chart(curves), encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="east", description="Early action prediction on synthetic two-phase videos.",
        epilog=EXIT_CODES, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, epilog=EXIT_CODES,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(fn=fn)
        return p

    def with_config(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key, e.g. train.steps=100 (repeatable)")

    p = add("gen-data", cmd_gen_data, "generate a synthetic dataset file")
    with_config(p)
    p.add_argument("--out", required=True, help="dataset file to write")

    p = add("train", cmd_train, "train a model; writes model.pt, train_log.csv, config.cfg")
    with_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--log-every", type=int, default=1)

    p = add("eval", cmd_eval, "evaluate a checkpoint; writes metrics.csv and config.cfg")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rho-grid", help="start:stop:step (inclusive) or a comma list")
    p.add_argument("--mask", choices=("difference", "random", "none"),
                   help="override the training mask kind")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override an eval.* or train.* key")
    p.add_argument("--out", required=True, help="output directory")

    p = add("mask-viz", cmd_mask_viz, "render the difference mask of one video as SVG")
    with_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--k", type=float)
    p.add_argument("--rho", type=float, default=1.0, help="observation ratio of the clip")
    p.add_argument("--out", required=True)

    p = add("flops", cmd_flops, "print the analytic FLOP report")
    with_config(p)
    p.add_argument("--k", type=float)
    p.add_argument("--oracle", action="store_true", help="include the training oracle pass")

    p = add("plot", cmd_plot, "draw per-ratio accuracy curves as SVG")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--out", required=True)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    msg = json.dumps(str(exc).splitlines()[0] if str(exc) else type(exc).__name__)
    print(f"east: error code={code} kind={type(exc).__name__} msg={msg}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except EASTError as exc:
        return _fail(exc.exit_code, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
