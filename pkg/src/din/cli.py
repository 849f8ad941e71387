"""Command line front end: training runs, evaluation, model inspection.

Every run resolves a layout, trains, optionally quantizes, evaluates, and
writes ``model.din`` plus a JSON-lines metrics report into the output
directory.  Exit codes: 0 ok, 2 configuration error, 3 infeasible layout,
4 I/O or format error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

from . import network
from .grids import quantize8
from .images import psnr, read_ppm, write_ppm
from .network import (ConfigError, DInNetwork, FormatError,
                      InfeasibleLayoutError)
from .optim import StepDecay, TrainConfig
from .tasks import ggx as ggx_task
from .tasks import image as image_task
from .tasks import sampler as sampler_task
from .tasks import sdf as sdf_task

_CONFIG_KEYS = {
    "task", "input", "out", "seed", "compression", "budget_bytes", "rho",
    "quantize", "steps", "lr", "epochs", "batch_size", "shape", "sigma",
    "near_count", "footprint_aware", "decay_factor", "decay_every",
}


class _CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load_run_config(args):
    """Merge a JSON config file with CLI overrides; unknown keys rejected."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise _CliError(f"cannot read config: {exc}", 4)
        except json.JSONDecodeError as exc:
            raise _CliError(f"bad config JSON: {exc}", 2)
        unknown = set(cfg) - _CONFIG_KEYS
        if unknown:
            raise _CliError(
                f"unknown config keys: {', '.join(sorted(unknown))}", 2)
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _train_config(cfg, default=None):
    tc = default or TrainConfig()
    if cfg.get("lr"):
        tc.learning_rate = float(cfg["lr"])
    if cfg.get("steps"):
        tc.steps = int(cfg["steps"])
    if cfg.get("epochs"):
        tc.epochs = int(cfg["epochs"])
    if cfg.get("batch_size"):
        tc.batch_size = int(cfg["batch_size"])
    if cfg.get("seed") is not None:
        tc.seed = int(cfg["seed"])
    if cfg.get("decay_factor") or cfg.get("decay_every"):
        tc.scheduler = StepDecay(
            factor=float(cfg.get("decay_factor", 0.5)),
            every=int(cfg.get("decay_every", 1000)))
    return tc


def _checksum(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()


def _report(out_dir, record):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.jsonl")
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def _quantize_net(net):
    arrays = [quantize8(a) for a in net.primaries]
    cascaded = quantize8(net.cascaded)
    return DInNetwork(arrays, cascaded, net.wiring)


def _finish_run(cfg, task, layout, net, metrics, started, out_dir):
    if cfg.get("quantize", "none") == "u8":
        net = _quantize_net(net)
        metrics["quantized"] = True
    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "model.din")
    network.save(net, model_path)
    record = {
        "task": task,
        "layout": layout.as_dict() if layout is not None else None,
        "metrics": metrics,
        "wall_seconds": round(time.time() - started, 3),
        "seed": int(cfg.get("seed", 0)),
        "model_checksum": _checksum(model_path),
    }
    _report(out_dir, record)
    print(json.dumps(record, sort_keys=True))
    return 0


def _require(cfg, key, code=2):
    if cfg.get(key) is None:
        raise _CliError(f"missing required option --{key.replace('_','-')}",
                        code)
    return cfg[key]


def _read_image(path):
    try:
        return read_ppm(path)
    except OSError as exc:
        raise _CliError(f"cannot read image: {exc}", 4)
    except ValueError as exc:
        raise _CliError(str(exc), 4)


def cmd_train_image(args):
    cfg = _load_run_config(args)
    img = _read_image(_require(cfg, "input"))
    started = time.time()
    task_cfg = image_task.ImageTaskConfig(
        compression=float(cfg.get("compression", 6.0)),
        rho=float(cfg.get("rho", 0.0)),
        train=_train_config(cfg, image_task.default_image_train_config()))
    layout = image_task.solve_layout(img, task_cfg)
    net = image_task.train_image(img, task_cfg, layout=layout)
    value, _ = image_task.eval_image(net, img)
    metrics = {"psnr_db": value}
    return _finish_run(cfg, "image", layout, net, metrics, started,
                       _require(cfg, "out"))


def cmd_eval_image(args):
    cfg = _load_run_config(args)
    net = _load_model(args.model)
    img = _read_image(_require(cfg, "input"))
    value, decoded = image_task.eval_image(net, img)
    out = cfg.get("out")
    if out:
        os.makedirs(out, exist_ok=True)
        write_ppm(decoded, os.path.join(out, "decoded.ppm"))
    print(json.dumps({"task": "image", "metrics": {"psnr_db": value}},
                     sort_keys=True))
    return 0


def cmd_train_sampler(args):
    cfg = _load_run_config(args)
    img = _read_image(_require(cfg, "input"))
    started = time.time()
    task_cfg = sampler_task.SamplerTaskConfig(
        compression=float(cfg.get("compression", 6.0)),
        rho=float(cfg.get("rho", 4.0)),
        footprint_aware=bool(cfg.get("footprint_aware", True)),
        train=_train_config(
            cfg, sampler_task.default_sampler_train_config()))
    layout = network.solve_layout_sampler(img.width, img.channels,
                                          task_cfg.compression,
                                          task_cfg.rho)
    net = sampler_task.train_sampler(img, task_cfg, layout=layout)
    rows = sampler_task.eval_sampler(
        net, img, footprint_aware=task_cfg.footprint_aware)
    out_dir = _require(cfg, "out")
    os.makedirs(out_dir, exist_ok=True)
    sampler_task.write_footprint_csv(
        rows, os.path.join(out_dir, "footprint_psnr.csv"))
    metrics = {f"psnr_db_f{f:g}": v for f, v in rows}
    return _finish_run(cfg, "sampler", layout, net, metrics, started,
                       out_dir)


def cmd_eval_sampler(args):
    cfg = _load_run_config(args)
    net = _load_model(args.model)
    img = _read_image(_require(cfg, "input"))
    rows = sampler_task.eval_sampler(net, img)
    out = cfg.get("out")
    if out:
        os.makedirs(out, exist_ok=True)
        sampler_task.write_footprint_csv(
            rows, os.path.join(out, "footprint_psnr.csv"))
    metrics = {f"psnr_db_f{f:g}": v for f, v in rows}
    print(json.dumps({"task": "sampler", "metrics": metrics},
                     sort_keys=True))
    return 0


def cmd_train_ggx(args):
    cfg = _load_run_config(args)
    started = time.time()
    task_cfg = ggx_task.GgxTaskConfig(
        train=_train_config(cfg, ggx_task.default_ggx_train_config()))
    net = ggx_task.train_ggx(task_cfg)
    value = ggx_task.eval_ggx(net)
    out_dir = _require(cfg, "out")
    os.makedirs(out_dir, exist_ok=True)
    ggx_task.write_eval_grid_csv(net, os.path.join(out_dir,
                                                   "ggx_grid.csv"))
    metrics = {"psnr_db": value}
    return _finish_run(cfg, "ggx", None, net, metrics, started, out_dir)


def _shape_from_config(cfg):
    name = cfg.get("shape", "sphere")
    cls = sdf_task.SHAPES.get(name)
    if cls is None:
        raise _CliError(f"unknown shape {name!r}", 2)
    return cls()


def cmd_train_sdf(args):
    cfg = _load_run_config(args)
    started = time.time()
    task_cfg = sdf_task.SdfTaskConfig(
        budget_bytes=int(cfg.get("budget_bytes",
                                 sdf_task.SdfTaskConfig.budget_bytes)),
        rho=float(cfg.get("rho", 2.0)),
        sigma=float(cfg.get("sigma", 0.01)),
        near_count=int(cfg.get("near_count", 2_000_000)),
        train=_train_config(cfg, sdf_task.default_sdf_train_config()))
    shape = _shape_from_config(cfg)
    net = sdf_task.train_sdf(shape, task_cfg)
    pts = sdf_task.sample_test_points(shape, sigma=task_cfg.sigma)
    iou, mae = sdf_task.eval_sdf(net, shape, pts)
    layout = network.solve_layout_sdf(task_cfg.budget_bytes, task_cfg.rho)
    out_dir = _require(cfg, "out")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "sdf_eval.csv"), "w") as fh:
        fh.write("metric,value\n")
        fh.write(f"iou,{'' if iou is None else f'{iou:.6g}'}\n")
        fh.write(f"tsdf_mae,{mae:.6g}\n")
    metrics = {"iou": iou, "tsdf_mae": mae}
    return _finish_run(cfg, "sdf", layout, net, metrics, started, out_dir)


def cmd_eval_sdf(args):
    cfg = _load_run_config(args)
    net = _load_model(args.model)
    shape = _shape_from_config(cfg)
    pts = sdf_task.sample_test_points(shape,
                                      sigma=float(cfg.get("sigma", 0.01)))
    iou, mae = sdf_task.eval_sdf(net, shape, pts)
    print(json.dumps({"task": "sdf",
                      "metrics": {"iou": iou, "tsdf_mae": mae}},
                     sort_keys=True))
    return 0


def _load_model(path):
    try:
        return network.load(path)
    except OSError as exc:
        raise _CliError(f"cannot read model: {exc}", 4)
    except FormatError as exc:
        raise _CliError(str(exc), 4)


def cmd_info(args):
    net = _load_model(args.model)
    arrays = []
    for a in net.arrays():
        arrays.append({
            "dims": a.dims,
            "resolution": list(a.shape),
            "channels": a.channels,
            "nonlinearity": a.nonlinearity,
            "quantized": a.quantized,
        })
    print(json.dumps({"magic": network.MAGIC.decode(),
                      "version": network.FORMAT_VERSION,
                      "arrays": arrays,
                      "wiring": [list(w) for w in net.wiring]},
                     sort_keys=True, indent=2))
    return 0


def cmd_export_grid(args):
    net = _load_model(args.model)
    try:
        sdf_task.export_sign_grid(net, args.resolution, args.out)
    except OSError as exc:
        raise _CliError(f"cannot write grid: {exc}", 4)
    return 0


def _add_common(sub):
    sub.add_argument("--config", help="JSON run config; flags override")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--compression", type=float)
    sub.add_argument("--budget-bytes", dest="budget_bytes", type=int)
    sub.add_argument("--rho", type=float)
    sub.add_argument("--quantize", choices=("none", "u8"))
    sub.add_argument("--steps", type=int)
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--out")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="din", description="Differentiable indirection toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("train-image", help="train an image codec")
    _add_common(s)
    s.add_argument("--input")
    s.set_defaults(fn=cmd_train_image)

    s = subs.add_parser("eval-image", help="evaluate a model on an image")
    _add_common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--input", "--reference", dest="input")
    s.set_defaults(fn=cmd_eval_image)

    s = subs.add_parser("train-sampler", help="train a texture sampler")
    _add_common(s)
    s.add_argument("--input")
    s.add_argument("--footprint-ignorant", dest="footprint_aware",
                   action="store_false", default=None)
    s.set_defaults(fn=cmd_train_sampler)

    s = subs.add_parser("eval-sampler", help="evaluate a sampler model")
    _add_common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--input")
    s.set_defaults(fn=cmd_eval_sampler)

    s = subs.add_parser("train-ggx", help="train the GGX benchmark net")
    _add_common(s)
    s.set_defaults(fn=cmd_train_ggx)

    s = subs.add_parser("train-sdf", help="train a TSDF representation")
    _add_common(s)
    s.add_argument("--shape", choices=sorted(sdf_task.SHAPES))
    s.add_argument("--sigma", type=float)
    s.add_argument("--near-count", dest="near_count", type=int)
    s.set_defaults(fn=cmd_train_sdf)

    s = subs.add_parser("eval-sdf", help="evaluate a TSDF model")
    _add_common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--shape", choices=sorted(sdf_task.SHAPES))
    s.add_argument("--sigma", type=float)
    s.set_defaults(fn=cmd_eval_sdf)

    s = subs.add_parser("info", help="print model file header fields")
    s.add_argument("model")
    s.set_defaults(fn=cmd_info)

    s = subs.add_parser("export-grid", help="dump a dense sign grid")
    s.add_argument("--model", required=True)
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_export_grid)
    return parser


def main(argv=None):
    threads = os.environ.get("DIN_THREADS")
    if threads:
        # numpy here is effectively single-threaded per op; the cap is
        # honored by limiting any library pools via the env convention.
        os.environ.setdefault("OMP_NUM_THREADS", threads)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _CliError as exc:
        _diag({"error": str(exc), "code": exc.code})
        return exc.code
    except ConfigError as exc:
        _diag({"error": str(exc), "code": 2})
        return 2
    except InfeasibleLayoutError as exc:
        _diag({"error": str(exc), "code": 3})
        return 3
    except (FormatError, OSError) as exc:
        _diag({"error": str(exc), "code": 4})
        return 4
    except ValueError as exc:
        _diag({"error": str(exc), "code": 2})
        return 2


def _diag(obj):
    print(json.dumps(obj, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
