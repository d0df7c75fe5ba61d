"""Command-line entry point: ``adsrnet <command> ...``.

Commands: ``degrade``, ``train``, ``eval``, ``infer``, ``params`` and
``gradcheck``.  Tables go to standard output, diagnostics to standard error.
Exit status is 0 on success, 1 on a failed run or check and 2 on bad usage.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, parse_overrides
from .data import DatasetIndex, ImageReadError, degrade, read_png, write_png
from .gradcheck import format_report, gradcheck_suite
from .metrics import EvalProtocol, bicubic_upscaler, evaluate
from .model import Network, build_variant, count_parameters, estimate_flops
from .tensor import no_grad
from .train import TrainingDiverged, images_to_tensor, tensor_to_image, train

__all__ = ["main", "upscale_image"]

logger = logging.getLogger("adsrnet")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _threads(n: Optional[int]):
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _resolve(args, extra: Sequence[str]) -> RunConfig:
    return RunConfig.resolve(getattr(args, "config", None), parse_overrides(extra))


def _echo_config(config: RunConfig) -> None:
    for line in config.canonical_text().splitlines():
        print(f"# {line}")


def upscale_image(network: Network, lr: np.ndarray) -> np.ndarray:
    """Run ``network`` on one ``(H, W, 3)`` uint8 image and return uint8 SR."""
    with no_grad():
        return tensor_to_image(network(images_to_tensor([lr]), tau=1.0))


# ---------------------------------------------------------------- commands


def cmd_degrade(args, extra) -> int:
    if extra:
        raise UsageError(f"degrade takes no config overrides: {' '.join(extra)}")
    written = degrade(args.hr, args.scale, args.out)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_train(args, extra) -> int:
    config = _resolve(args, extra)
    _echo_config(config)
    split = config.split_dir("train")
    index = DatasetIndex.from_dir(split, config["model.scale"])
    if len(index) == 0:
        raise FileNotFoundError(f"no HR/LR pairs found under {split}")
    dataset = index.load_all()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.canonical_text())
    start = time.perf_counter()
    result = train(config.model_config(), config.train_config(), dataset, out, args.resume)
    elapsed = time.perf_counter() - start
    print("step\tloss\tlr\ttau")
    if result.records:
        step, loss, lr, tau = result.records[-1]
        print(f"{step}\t{loss:.6g}\t{lr:.6g}\t{tau:.6g}")
    print(f"# checkpoint\t{result.checkpoint}")
    print(f"# seconds\t{elapsed:.1f}")
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    config = _resolve(args, extra)
    protocol = config.eval_protocol()
    if args.channel is not None or args.crop is not None:
        protocol = EvalProtocol(
            channel=args.channel or protocol.channel,
            border_crop=protocol.border_crop if args.crop is None else args.crop,
            peak=protocol.peak,
        )
    scale = args.scale
    modes = [m for m in (args.baseline, args.identity or None, args.checkpoint) if m]
    if len(modes) != 1:
        raise UsageError("eval needs exactly one of --checkpoint, --baseline bicubic or --identity")

    if args.identity:
        upscaler = None
    elif args.baseline:
        upscaler = bicubic_upscaler
    else:
        ckpt = load_checkpoint(args.checkpoint)
        if ckpt.config.scale != scale:
            raise ValueError(f"checkpoint was trained for scale {ckpt.config.scale}, but --scale is {scale}")
        network = Network(ckpt.config, ckpt.parameter_set())

        def upscaler(lr, s):
            return upscale_image(network, lr)

    index = DatasetIndex.from_dir(args.data, scale)
    result = evaluate(index, upscaler, scale, protocol)
    table = result.to_tsv()
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table)
    if not result.rows:
        logger.error("no image pairs could be evaluated in %s", args.data)
        return EXIT_FAILED
    return EXIT_OK


def cmd_infer(args, extra) -> int:
    if extra:
        raise UsageError(f"infer takes no config overrides: {' '.join(extra)}")
    ckpt = load_checkpoint(args.checkpoint)
    network = Network(ckpt.config, ckpt.parameter_set())
    lr = read_png(args.input)
    sr = upscale_image(network, lr)
    write_png(args.output, sr)
    print(f"{args.output}\t{sr.shape[1]}x{sr.shape[0]}")
    return EXIT_OK


def cmd_params(args, extra) -> int:
    config = _resolve(args, extra)
    _echo_config(config)
    model = config.model_config()
    analytic = count_parameters(model)
    live = build_variant(model, config["seed"]).params.num_elements()
    h, w = args.size
    flops = estimate_flops(model, h, w)
    print("quantity\tvalue")
    print(f"analytic_parameters\t{analytic}")
    print(f"live_parameters\t{live}")
    print(f"flops_{h}x{w}\t{flops}")
    print(f"gflops_{h}x{w}\t{flops / 1e9:.2f}")
    if analytic != live:
        logger.error("analytic count %d differs from live count %d", analytic, live)
        return EXIT_FAILED
    return EXIT_OK


def cmd_gradcheck(args, extra) -> int:
    config = _resolve(args, extra)
    _echo_config(config)
    start = time.perf_counter()
    results = gradcheck_suite(config.model_config(), config["seed"], args.samples, include_32bit=not args.skip_32bit)
    sys.stdout.write(format_report(results))
    print(f"# seconds\t{time.perf_counter() - start:.1f}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error("gradient check failed for: %s", ", ".join(failed))
        return EXIT_FAILED
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adsrnet", allow_abbrev=False, description="Super-resolution toolkit: train, evaluate and audit ADSRNet models.")
    parser.add_argument("--threads", type=int, default=None, help="BLAS threads (1 guarantees bit-identical reruns)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("degrade", allow_abbrev=False, help="write bicubic LR copies of a directory of HR PNGs")
    p.add_argument("--hr", required=True, help="directory of HR PNG files")
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory for LR PNGs")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", allow_abbrev=False, help="train a model; extra --key value pairs override the config")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="directory for checkpoint.adsr, train.log and config.txt")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", allow_abbrev=False, help="PSNR/SSIM table for a checkpoint or a built-in baseline")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=["bicubic"])
    p.add_argument("--identity", action="store_true", help="self-test: score HR against itself")
    p.add_argument("--data", required=True, help="split directory containing HR/ and LR_x{s}/")
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--config", help="key=value config file (eval.* keys)")
    p.add_argument("--channel", choices=["y", "rgb"])
    p.add_argument("--crop", type=int, help="border crop in pixels (default: the scale)")
    p.add_argument("--out", help="also write the table to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", allow_abbrev=False, help="super-resolve one PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("params", allow_abbrev=False, help="analytic and live parameter counts plus a FLOP estimate")
    p.add_argument("--config")
    p.add_argument("--size", type=int, nargs=2, default=(1024, 1024), metavar=("H", "W"), help="output size for the FLOP estimate")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", allow_abbrev=False, help="64-bit finite-difference check of every operation")
    p.add_argument("--config")
    p.add_argument("--samples", type=int, default=20, help="coordinates probed per network parameter")
    p.add_argument("--skip-32bit", action="store_true", help="omit the 32-bit whole-network check")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        with _threads(args.threads):
            return args.func(args, extra)
    except (UsageError, ConfigError) as exc:
        print(f"adsrnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, CheckpointError, ImageReadError, TrainingDiverged) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"adsrnet {args.command}: error: {message}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
