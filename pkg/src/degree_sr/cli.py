"""Command line interface: ``degree-sr {prepare,train,super-resolve,eval,visualize-bands}``.

Option values resolve as built-in defaults < config file < command-line flags.
The config file is JSON, either flat or with one object per subcommand; its
path comes from ``--config`` or the ``DEGREE_SR_CONFIG`` environment variable.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_ENV = "DEGREE_SR_CONFIG"

log = logging.getLogger("degree_sr")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _on_off(v: str) -> bool:
    v = v.lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {v!r}")


# (flag, type, default, help, extra argparse kwargs)
OPTIONS = {
    "prepare": [
        ("--hr-dir", str, None, "directory of HR training images", {}),
        ("--scale", int, 3, "upscaling factor", {}),
        ("--patch", int, 33, "patch side in pixels", {}),
        ("--stride", int, 14, "window stride in pixels", {}),
        ("--augment", _on_off, True, "16-way flip/rotation augmentation (on/off)", {}),
        ("--out", str, "patchset.bin", "output patch set file", {}),
    ],
    "train": [
        ("--patchset", str, None, "patch set file from 'prepare'", {}),
        ("--scale", int, None, "upscaling factor (default: from the patch set)", {}),
        ("--layers", int, 10, "network depth: 10 (4 units) or 20 (9 units)", {"choices": [10, 20]}),
        ("--recurrences", int, None, "number of recurrent units (overrides --layers)", {}),
        ("--channels", int, 64, "feature channels", {}),
        ("--epochs", int, 270, "maximum epochs", {}),
        ("--seed", int, 0, "random seed", {}),
        ("--out-dir", str, "runs/degree", "checkpoint and metrics directory", {}),
        ("--batch-size", int, 64, "mini-batch size", {}),
        ("--lr", float, 1e-4, "initial learning rate", {}),
        ("--lr-drop-epoch", int, 76, "epoch after which the learning rate drops", {}),
        ("--lr-after", float, 1e-5, "learning rate after the drop", {}),
        ("--momentum", float, 0.9, "SGD momentum", {}),
        ("--lam", float, 1.0, "edge loss weight", {}),
        ("--weight-decay", float, 0.0, "L2 weight decay", {}),
        ("--clip-norm", float, None, "global gradient norm clip", {}),
        ("--max-iterations", int, None, "stop after this many iterations", {}),
        ("--log-interval", int, 50, "iterations per metrics row", {}),
        ("--val-dir", str, None, "HR validation images (e.g. Set5)", {}),
        ("--val-interval", int, 5, "epochs between validation runs", {}),
        ("--resume", str, None, "checkpoint to resume from", {}),
    ],
    "super-resolve": [
        ("--checkpoint", str, None, "trained checkpoint", {}),
        ("--input", str, None, "low-resolution input image", {}),
        ("--scale", int, None, "upscaling factor (default: from the checkpoint)", {}),
        ("--output", str, None, "output image path", {}),
    ],
    "eval": [
        ("--checkpoint", str, None, "trained checkpoint", {}),
        ("--baseline", str, None, "evaluate a baseline instead of a checkpoint", {"choices": ["bicubic"]}),
        ("--dataset-dir", str, None, "directory of HR test images", {}),
        ("--scale", int, 3, "upscaling factor", {}),
        ("--report", str, "report.csv", "CSV report path (a .txt table is written alongside)", {}),
    ],
    "visualize-bands": [
        ("--checkpoint", str, None, "trained checkpoint", {}),
        ("--input", str, None, "input image", {}),
        ("--out-dir", str, "bands", "output directory", {}),
        ("--scale", int, None, "upscaling factor (default: from the checkpoint)", {}),
        ("--degrade", _on_off, False, "treat --input as HR and degrade it first (on/off)", {}),
    ],
}

REQUIRED = {
    "prepare": ["hr_dir"],
    "train": ["patchset"],
    "super-resolve": ["checkpoint", "input", "output"],
    "eval": ["dataset_dir"],
    "visualize-bands": ["checkpoint", "input"],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="degree-sr", description="Edge-guided recurrent residual super-resolution.")
    p.add_argument("--version", action="version", version=f"degree-sr {__version__} ({BACKEND} kernels)")
    p.add_argument("--config", default=None, help=f"JSON config file (default: ${CONFIG_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, opts in OPTIONS.items():
        sp = sub.add_parser(name)
        for flag, typ, default, help_, extra in opts:
            shown = "" if default is None else f" (default: {default})"
            sp.add_argument(flag, type=typ, default=argparse.SUPPRESS, help=help_ + shown, **extra)
    return p


def _load_config_file(path, command: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    section = data.get(command, {}) if any(k in OPTIONS for k in data) else data
    return {k.replace("-", "_"): v for k, v in section.items()}


def resolve(argv=None) -> tuple[str, dict]:
    ns = build_parser().parse_args(argv)
    if ns.command is None:
        raise UsageError("a subcommand is required")
    opts = OPTIONS[ns.command]
    resolved = {_dest(flag): default for flag, _, default, _, _ in opts}
    cfg_path = ns.config or os.environ.get(CONFIG_ENV)
    if cfg_path:
        from_file = _load_config_file(cfg_path, ns.command)
        unknown = set(from_file) - set(resolved)
        if unknown:
            raise UsageError(f"unknown options in config file: {sorted(unknown)}")
        resolved.update(from_file)
    given = {k: v for k, v in vars(ns).items() if k in resolved}
    resolved.update(given)
    missing = [k for k in REQUIRED[ns.command] if resolved.get(k) is None]
    if missing:
        raise UsageError("missing required options: " + ", ".join("--" + m.replace("_", "-") for m in missing))
    resolved["verbose"] = ns.verbose
    return ns.command, resolved


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _images(directory) -> list:
    from .imaging import list_images

    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    files = list_images(d)
    if not files:
        raise DataError(f"no images found in {d}")
    return files


def cmd_prepare(o: dict) -> int:
    from .imaging import build_patchset, read_image, save_patchset

    files = _images(o["hr_dir"])
    ps = build_patchset((read_image(f) for f in files), o["scale"], o["patch"], o["stride"], o["augment"])
    try:
        save_patchset(ps, o["out"])
    except OSError as e:
        raise DataError(f"cannot write {o['out']}: {e}") from None
    print(f"images: {len(files)}")
    print(f"patches: {len(ps)}")
    print(f"wrote {o['out']}")
    return EXIT_OK


def cmd_train(o: dict) -> int:
    from .imaging import load_patchset, read_image
    from .metrics import evaluate_sr
    from .network import DegreeConfig, DegreeNetwork, predict_image
    from .trainer import TrainConfig, load_checkpoint, train

    ps = load_patchset(o["patchset"], mmap=True)
    scale = o["scale"] or ps.scale
    if scale != ps.scale:
        raise UsageError(f"--scale {scale} does not match patch set scale {ps.scale}")
    out = Path(o["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    tcfg = TrainConfig(
        batch_size=o["batch_size"],
        lr_initial=o["lr"],
        lr_drop_epoch=o["lr_drop_epoch"],
        lr_after=o["lr_after"],
        max_epochs=o["epochs"],
        momentum=o["momentum"],
        lam=o["lam"],
        seed=o["seed"],
        val_interval=o["val_interval"],
        log_interval=o["log_interval"],
        checkpoint_dir=str(out),
        weight_decay=o["weight_decay"],
        clip_norm=o["clip_norm"],
        max_iterations=o["max_iterations"],
    )
    state = None
    if o["resume"]:
        net, state = load_checkpoint(o["resume"])
        print(f"resuming from {o['resume']} at epoch {state.epoch}, iteration {state.iteration}")
    else:
        kw = dict(scale=scale, channels=o["channels"], lam=o["lam"], seed=o["seed"])
        if o["recurrences"]:
            ncfg = DegreeConfig(recurrences=o["recurrences"], **kw)
        else:
            ncfg = DegreeConfig.from_layers(o["layers"], **kw)
        net = DegreeNetwork.build(ncfg)
    validate = None
    if o["val_dir"]:
        val_images = [(f.stem, read_image(f)) for f in _images(o["val_dir"])]
        validate = lambda n: evaluate_sr(lambda lr: predict_image(n, lr, scale), val_images, scale).mean_psnr  # noqa: E731
    res = train(net, ps, tcfg, state=state, validate=validate, metrics_path=out / "metrics.csv")
    print(f"epochs: {res.state.epoch}  iterations: {res.state.iteration}")
    if res.checkpoints:
        print(f"final checkpoint: {res.checkpoints[-1]}")
    return EXIT_OK


def _load_net(path):
    from .trainer import load_checkpoint

    if not Path(path).is_file():
        raise DataError(f"checkpoint not found: {path}")
    net, _ = load_checkpoint(path)
    return net


def _read(path):
    from .imaging import read_image

    if not Path(path).is_file():
        raise DataError(f"image not found: {path}")
    return read_image(path)


def cmd_super_resolve(o: dict) -> int:
    from .imaging import ImageBuffer, bicubic_resize, rgb_to_ycbcr, write_image
    from .network import predict_image

    net = _load_net(o["checkpoint"])
    scale = o["scale"] or net.config.scale
    img = _read(o["input"])
    if img.colorspace == "rgb":
        ycc = rgb_to_ycbcr(img.data)
        y = predict_image(net, ycc[..., 0], scale)
        chroma = bicubic_resize(ycc[..., 1:], scale)
        out = ImageBuffer(np.concatenate([y[..., None], chroma], axis=2), "ycbcr")
    else:
        out = predict_image(net, img, scale)
    write_image(o["output"], out)
    print(f"wrote {o['output']} ({out.width}x{out.height})")
    return EXIT_OK


def cmd_eval(o: dict) -> int:
    from .metrics import bicubic_predictor, evaluate_sr
    from .network import predict_image

    if bool(o["checkpoint"]) == bool(o["baseline"]):
        raise UsageError("give exactly one of --checkpoint or --baseline")
    scale = o["scale"]
    if o["baseline"]:
        predict, method = bicubic_predictor(scale), "Bicubic"
    else:
        net = _load_net(o["checkpoint"])
        predict, method = (lambda lr: predict_image(net, lr, scale)), f"DEGREE-{net.config.recurrences}u"
    files = _images(o["dataset_dir"])
    report = evaluate_sr(predict, files, scale)
    report.to_csv(o["report"])
    table = report.to_table(method, Path(o["dataset_dir"]).name)
    Path(o["report"]).with_suffix(".txt").write_text(table + "\n")
    print(table)
    print(f"mean PSNR {report.mean_psnr:.2f} dB  mean SSIM {report.mean_ssim:.4f}")
    return EXIT_OK


def cmd_visualize_bands(o: dict) -> int:
    from .imaging import degrade, luminance, write_image
    from .network import extract_subband_states, subband_labels

    net = _load_net(o["checkpoint"])
    scale = o["scale"] or net.config.scale
    y = luminance(_read(o["input"]), quantize=True)
    if o["degrade"]:
        y, _ = degrade(y, scale)
    bands = extract_subband_states(net, y, scale)
    out = Path(o["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    for label, band in zip(subband_labels(net.config.recurrences), bands):
        path = out / f"band_{label}.png"
        write_image(path, band)
        print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "super-resolve": cmd_super_resolve,
    "eval": cmd_eval,
    "visualize-bands": cmd_visualize_bands,
}


def main(argv=None) -> int:
    from .tensor import NonFiniteError
    from .trainer import CheckpointError

    try:
        command, opts = resolve(argv)
    except UsageError as e:
        print(f"degree-sr: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"degree-sr: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if opts.pop("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    print(f"degree-sr {command} ({BACKEND} kernels)")
    print(json.dumps(opts, indent=2, sort_keys=True))
    try:
        return COMMANDS[command](opts)
    except UsageError as e:
        print(f"degree-sr: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as e:
        print(f"degree-sr: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, OSError, ValueError) as e:
        print(f"degree-sr: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
