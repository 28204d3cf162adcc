"""Command-line entry point: upsample, gen-data, train, eval.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import dataprep, metrics, nn
from .cloudio import read_cloud, write_cloud
from .geometry import GeometryError
from .pipeline import ConfigError, PipelineConfig, StageError, load_config, load_estimator, upsample
from .surfaces import parse_surface

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _out(msg: str) -> None:
    print(msg, flush=True)


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        changes["threads"] = args.threads
    if getattr(args, "strict", None) is not None:
        changes["strict_mode"] = args.strict
    if getattr(args, "estimator", None):
        changes["estimator"] = args.estimator
    return cfg.replace(**changes) if changes else cfg


def _scaled_path(path: str, factor: float, many: bool) -> Path:
    if "{scale}" in path:
        return Path(path.replace("{scale}", f"{factor:g}"))
    p = Path(path)
    return p.with_name(f"{p.stem}_x{factor:g}{p.suffix}") if many else p


def cmd_upsample(args) -> int:
    cfg = _config(args)
    points = read_cloud(args.input)
    estimator = load_estimator(cfg.estimator, args.params or ())
    scales = args.scale or [4.0]
    t0 = time.perf_counter()
    res = upsample(points, estimator, scales, cfg, log=_out)
    many = len(scales) > 1
    for factor, pts in res.outputs.items():
        path = _scaled_path(args.output, factor, many)
        write_cloud(path, pts)
        _out(f"wrote {len(pts)} points (x{factor:g}) to {path}")
    _out(f"total: {time.perf_counter() - t0:.3f} s")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    if not args.source:
        raise UsageError("gen-data: at least one --source is required")
    rng = np.random.default_rng([cfg.seed, 2])
    sources = []
    for spec in args.source:
        sources += dataprep.expand_family(spec, cfg.family_count, rng)
    ts = dataprep.build_training_set(sources, cfg.data_config())
    dataprep.save_training_set(ts, args.output)
    _out(f"wrote {len(ts)} samples, {len(ts.clouds)} clouds to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ts = dataprep.load_training_set(args.input)
    spec = cfg.network_spec(args.task)
    if args.task == "direction":
        x, y = dataprep.direction_inputs(ts, cfg.k_direction), ts.gt_directions
    else:
        x, y = dataprep.distance_inputs(ts, cfg.k_distance), ts.gt_distances
    every = max(1, cfg.epochs // 10)

    def progress(epoch, loss):
        if epoch % every == 0 or epoch == cfg.epochs:
            _out(f"epoch {epoch:4d}  loss {loss:.6e}")

    res = nn.train(spec, x, y, cfg.train_config(), progress)
    nn.save_params(res.params, args.output, task=args.task, extra={"training_set": str(args.input), "epochs": cfg.epochs})
    curve = Path(args.output).with_suffix(".loss.csv")
    curve.write_text("epoch,loss\n" + "".join(f"{i + 1},{float(v)!r}\n" for i, v in enumerate(res.loss_curve)))
    _out(f"wrote {args.output} and {curve}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    pred = read_cloud(args.input)
    gt = read_cloud(args.gt)
    surface = parse_surface(args.surface) if args.surface else None
    report = metrics.evaluate(pred, gt, surface, cfg.eval_config())
    _out(report.table())
    if args.output:
        Path(args.output).write_text(report.to_text())
        _out(f"wrote {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pcupsample", description="Arbitrary-scale point cloud upsampling by implicit surface projection.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="master random seed")

    up = sub.add_parser("upsample", help="upsample a point cloud")
    common(up)
    up.add_argument("--input", required=True)
    up.add_argument("--output", required=True, help="output path; '{scale}' is replaced by each factor")
    up.add_argument("--scale", type=float, action="append", help="upsampling factor r (repeatable)")
    up.add_argument("--estimator", help="analytic:<shape spec> or learned:<dir.json>,<dist.json>")
    up.add_argument("--params", action="append", help="network params file (give one per task)")
    up.add_argument("--threads", type=int)
    up.add_argument("--strict", action=argparse.BooleanOptionalAction, default=None)
    up.set_defaults(func=cmd_upsample)

    gd = sub.add_parser("gen-data", help="generate a training set")
    common(gd)
    gd.add_argument("--source", action="append", help="surface spec; 'a~b' draws a parameter from [a, b]")
    gd.add_argument("--output", required=True)
    gd.set_defaults(func=cmd_gen_data)

    tr = sub.add_parser("train", help="train a direction or distance network")
    common(tr)
    tr.add_argument("--task", choices=("direction", "distance"), required=True)
    tr.add_argument("--input", required=True, help="training-set file")
    tr.add_argument("--output", required=True, help="params file to write")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a predicted cloud")
    common(ev)
    ev.add_argument("--input", required=True, help="predicted cloud")
    ev.add_argument("--gt", required=True, help="ground-truth cloud")
    ev.add_argument("--surface", help="reference surface spec for point-to-surface and NUC")
    ev.add_argument("--output", help="write the report here")
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (nn.TrainingError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except StageError as exc:
        code = EXIT_NUMERIC if isinstance(exc.cause, (ArithmeticError, nn.TrainingError)) or "non-finite" in str(exc.cause) else EXIT_DATA
        print(f"{args.command}: {exc}", file=sys.stderr)
        return code
    except (FileNotFoundError, GeometryError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
