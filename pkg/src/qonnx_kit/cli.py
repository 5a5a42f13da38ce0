"""Command-line entry point: ``qonnx-kit <subcommand> model.onnx [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from qonnx_kit import serde
from qonnx_kit.errors import EXIT_INTERNAL, EXIT_OK, EXIT_VALIDATION, QonnxError
from qonnx_kit.executor import execute, random_inputs
from qonnx_kit.ir import Model, TensorValue, errors_only, validate_model
from qonnx_kit.lowering import LoweringConfig, lower_to_qcdq, raise_from_qcdq
from qonnx_kit.metrics import format_table, model_stats, to_json_lines
from qonnx_kit.passes import cleanup, to_channels_last

log = logging.getLogger("qonnx_kit")

LOG_ENV = "QONNX_KIT_LOG"
_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as validation failures, not exit 2."""

    def error(self, message: str):
        raise QonnxError(message, code="E_ARG")


def _configure_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get(LOG_ENV, "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load(args) -> Model:
    model = serde.load_model(args.model)
    log.info("loaded %s: %d node(s)", args.model, len(model.graph.nodes))
    return model


def _load_inputs(model: Model, args) -> dict:
    names = [vi.name for vi in model.graph.runtime_inputs]
    if args.input:
        if len(args.input) != len(names):
            raise QonnxError(f"model has {len(names)} input(s) {names}, got {len(args.input)} --input file(s)",
                             code="E_ARG")
        return {name: serde.load_tensor(path)[1] for name, path in zip(names, args.input)}
    if args.seed is not None:
        return random_inputs(model, args.seed)
    raise QonnxError("exec needs --input files (one per graph input, in order) or --seed", code="E_ARG")


def _cmd_validate(args) -> int:
    diags = validate_model(_load(args))
    for d in diags:
        print(d)
    errors = errors_only(diags)
    if not diags:
        print("OK")
    return EXIT_VALIDATION if errors else EXIT_OK


def _cmd_exec(args) -> int:
    model = _load(args)
    outputs = execute(model, _load_inputs(model, args))
    out_dir = Path(args.output_dir or ".")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise QonnxError(f"cannot create {out_dir}: {e.strerror}", code="E_IO") from e
    for name, value in outputs.items():
        path = out_dir / f"{_safe(name)}.pb"
        serde.save_tensor(value, path, name)
        print(f"{name}: {value.elem_type.value} {list(value.shape)} -> {path}")
    return EXIT_OK


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name) or "output"


def _check_equivalent(before: Model, after: Model, seed: int, layout_changed: bool) -> None:
    """Compare executor outputs of two models on one seeded random input."""
    inputs = random_inputs(before, seed)
    ref = execute(before, inputs)
    if layout_changed:
        by_name = {vi.name: vi for vi in after.graph.inputs}
        inputs = {k: _match_layout(v, by_name[k].shape) for k, v in inputs.items()}
    got = execute(after, inputs)
    for name, value in ref.items():
        other = got[name].data
        if layout_changed and other.shape != value.data.shape and other.ndim == 4:
            other = np.transpose(other, (0, 3, 1, 2))
        if not np.array_equal(value.data, other):
            raise QonnxError(f"equivalence check failed on output {name!r}", code="E_INVALID")
    print(f"equivalence check passed (seed {seed})")


def _match_layout(value: TensorValue, shape) -> TensorValue:
    if shape is not None and value.data.ndim == 4 and tuple(value.shape) != tuple(shape):
        return TensorValue(np.transpose(value.data, (0, 2, 3, 1)).copy())
    return value


def _transform(fn: Callable[[Model, argparse.Namespace], tuple]) -> Callable[[argparse.Namespace], int]:
    def run(args) -> int:
        if not args.out:
            raise QonnxError("--out is required", code="E_ARG")
        model = _load(args)
        result, report = fn(model, args)
        print(report)
        if args.seed is not None:
            _check_equivalent(model, result, args.seed, getattr(args, "change_io_layout", False))
        serde.save_model(result, args.out)
        return EXIT_OK

    return run


def _cmd_stats(args) -> int:
    stats = model_stats(_load(args))
    print(to_json_lines(stats) if args.format == "machine" else format_table(stats))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qonnx-kit", description="Inspect, run and transform QONNX models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, handler, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("model", help="path to an .onnx model")
        p.set_defaults(handler=handler)
        return p

    add("validate", _cmd_validate, "check structural and QONNX attribute validity")
    p = add("exec", _cmd_exec, "run the reference executor")
    p.add_argument("--input", action="append", help="TensorProto file, repeat once per graph input in order")
    p.add_argument("--output-dir", help="directory for one TensorProto file per graph output")
    p.add_argument("--seed", type=int, help="use seeded random inputs instead of --input")

    transforms = {
        "clean": (lambda m, a: cleanup(m), "shape inference, constant folding and simplification"),
        "channels-last": (lambda m, a: to_channels_last(m, a.change_io_layout),
                          "convert 2D-convolutional parts to NHWC"),
        "lower-qcdq": (lambda m, a: lower_to_qcdq(m, LoweringConfig(a.target_opset, a.allow_bipolar)),
                       "lower Quant nodes to QuantizeLinear/Clip/DequantizeLinear"),
        "raise-qonnx": (lambda m, a: raise_from_qcdq(m), "fold QCDQ chains back into Quant nodes"),
    }
    for name, (fn, help_) in transforms.items():
        p = add(name, _transform(fn), help_)
        p.add_argument("--out", help="path of the transformed model")
        p.add_argument("--seed", type=int,
                       help="verify executor equivalence on a random input drawn with this seed")
        if name == "channels-last":
            p.add_argument("--change-io-layout", action="store_true",
                           help="declare 4D graph inputs/outputs as NHWC instead of adding boundary Transposes")
        if name == "lower-qcdq":
            p.add_argument("--allow-bipolar", action="store_true", help="emulate BipolarQuant with Sign and Clip")
            p.add_argument("--target-opset", type=int, default=13)

    p = add("stats", _cmd_stats, "MACs, BOPs and weight statistics")
    p.add_argument("--format", choices=("human", "machine"), default="human")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except QonnxError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001 - last-resort mapping to the internal-error code
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
