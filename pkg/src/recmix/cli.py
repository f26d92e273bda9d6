"""Command-line surface: train, eval, preview, gradcheck, sweep.

Configs are flat JSON matching TrainConfig fields; repeated --set key=value
overrides win over the file. Exit codes: 0 success, 1 config error, 2 data
error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_model, save_model
from .data import DataError, denormalize, write_ppm
from .gradcheck import format_report, run_suite
from .losses import one_hot
from .mix import MixState, recursive_mix_step
from .trainer import (ConfigError, TrainConfig, emit_cam, evaluate, load_datasets,
                      train, upscale_nearest)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_VERIFY = 3

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _parse_value(field_name: str, raw: str):
    kind = _FIELD_TYPES.get(field_name)
    if kind is None:
        raise ConfigError(field_name, "unknown config field")
    if kind in ("bool", bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(field_name, f"expected a boolean, got {raw!r}")
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw


def build_config(config_path: str | None, overrides: list[str]) -> TrainConfig:
    values = {}
    if config_path:
        with open(config_path) as f:
            values.update(json.load(f))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        values[key] = _parse_value(key, raw)
    return TrainConfig.from_dict(values)


def _write_run_artifacts(cfg: TrainConfig, model, metrics) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    metrics.write_csv(out / "metrics.csv")
    save_model(out / "model.rmck", model, deploy=cfg.deploy_checkpoint)
    return out


def cmd_train(args) -> int:
    cfg = build_config(args.config, args.set)
    model, metrics = train(cfg, log=print)
    out = _write_run_artifacts(cfg, model, metrics)
    print(f"run complete: best top1 {metrics.best_top1:.2f}%, artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = build_config(args.config, args.set)
    _, test_set = load_datasets(cfg)
    from .layers import build_tiny_cnn
    model = build_tiny_cnn(test_set.class_count, np.random.default_rng(cfg.seed),
                           input_size=test_set.images.shape[2])
    load_model(args.checkpoint, model)
    top1, top5 = evaluate(model, test_set)
    print(f"top1_err {top1:.2f}%  top5_err {top5:.2f}%")
    return EXIT_OK


def cmd_preview(args) -> int:
    cfg = build_config(args.config, args.set)
    train_set, _ = load_datasets(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    mix_cfg = cfg.mix_config()
    if mix_cfg.mode != "recursivemix":
        mix_cfg.mode = "recursivemix"
    state = MixState()
    n = len(train_set)
    batch = min(args.samples, n)
    for t in range(args.count + 1):
        idx = rng.integers(0, n, size=batch)
        images = train_set.images[idx]
        labels = one_hot(train_set.labels[idx], train_set.class_count)
        res = recursive_mix_step(state, images, labels, rng, mix_cfg,
                                 force_lambda=args.force_lambda)
        shown = denormalize(res.images, train_set.mean, train_set.std)
        for j in range(batch):
            write_ppm(out / f"iter_{t}_sample_{j}.ppm", shown[j])
    print(f"wrote {(args.count + 1) * batch} previews to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    dtype = np.float32 if args.single else np.float64
    results = run_suite(dtype=dtype, sabotage_relu=args.sabotage_relu)
    print(format_report(results))
    if all(r.passed for r in results):
        print("gradcheck: all checks passed")
        return EXIT_OK
    print("gradcheck: FAILURES above tolerance")
    return EXIT_VERIFY


def _sweep_values(expr: str) -> list[float]:
    # "0.1..0.9" sweeps inclusively in steps of 0.1; "0.1..0.9:0.2" sets the step
    step = 0.1
    if ":" in expr:
        expr, step_raw = expr.split(":", 1)
        step = float(step_raw)
    lo_raw, hi_raw = expr.split("..", 1)
    lo, hi = float(lo_raw), float(hi_raw)
    count = int(round((hi - lo) / step)) + 1
    return [round(lo + i * step, 10) for i in range(count)]


def _run_sweep_point(payload: tuple) -> tuple[str, float]:
    cfg_dict, key, value = payload
    cfg = TrainConfig.from_dict(cfg_dict)
    model, metrics = train(cfg)
    _write_run_artifacts(cfg, model, metrics)
    return f"{key}={value}", metrics.best_top1


def cmd_sweep(args) -> int:
    fixed, swept = [], None
    for item in args.set:
        key, raw = item.split("=", 1)
        if ".." in raw:
            if swept is not None:
                raise ConfigError(key, "only one swept field per invocation")
            swept = (key, _sweep_values(raw))
        else:
            fixed.append(item)
    if swept is None:
        raise ConfigError("--set", "sweep needs one key=lo..hi range")
    base = build_config(args.config, fixed)
    key, values = swept
    jobs = []
    for v in values:
        d = base.to_dict()
        d[key] = _parse_value(key, str(v))
        d["out_dir"] = str(Path(base.out_dir) / f"{key}_{v}")
        TrainConfig.from_dict(d)  # validate before launching
        jobs.append((d, key, v))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_run_sweep_point, jobs))
    else:
        outcomes = [_run_sweep_point(j) for j in jobs]
    for label, best in outcomes:
        print(f"{label}: best top1 {best:.2f}%")
    return EXIT_OK


def cmd_cam(args) -> int:
    cfg = build_config(args.config, args.set)
    _, test_set = load_datasets(cfg)
    from .layers import build_tiny_cnn
    model = build_tiny_cnn(test_set.class_count, np.random.default_rng(cfg.seed),
                           input_size=test_set.images.shape[2])
    if args.checkpoint:
        load_model(args.checkpoint, model)
    image = test_set.images[args.index]
    class_id = args.class_id if args.class_id is not None else int(test_set.labels[args.index])
    heat = upscale_nearest(emit_cam(model, image, class_id), image.shape[1])
    out = Path(cfg.out_dir)
    write_ppm(out / f"cam_{args.index}_class_{class_id}.ppm", np.stack([heat] * 3))
    print(f"wrote CAM for sample {args.index}, class {class_id}, to {out}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recmix")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (repeatable)")

    p = sub.add_parser("train", help="run one training experiment")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("preview", help="emit PPMs of mixed batches across iterations")
    common(p)
    p.add_argument("--count", type=int, default=4, help="number of mix iterations after the first")
    p.add_argument("--samples", type=int, default=4, help="samples emitted per iteration")
    p.add_argument("--force-lambda", type=float, default=None)
    p.set_defaults(fn=cmd_preview)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    p.add_argument("--single", action="store_true", help="run in float32 instead of float64")
    p.add_argument("--sabotage-relu", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train once per value of key=lo..hi[:step]")
    common(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("cam", help="emit a class activation map as PPM")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--class-id", type=int, default=None)
    p.set_defaults(fn=cmd_cam)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, CheckpointError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
