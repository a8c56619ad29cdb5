"""Command-line entry point.

Every subcommand accepts ``--config FILE`` (``key=value`` lines, ``#``
comments), ``--seed`` and ``--out DIR``. Config keys are field names of
:class:`~qmpfc.ocp.OcpConfig`, :class:`~qmpfc.dataset.CorridorConfig`,
:class:`~qmpfc.mlp.TrainConfig` or :class:`~qmpfc.sim.SimConfig`; tuples
are written comma-separated. Failures exit with status 1 and print one
line ``error: <kind>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import struct
import sys
from pathlib import Path

from .controllers import DEFAULT_GAINS, PGains, make_controller
from .dataset import (generate_dataset, read_dataset_binary,
                      read_dataset_csv, write_dataset_binary, write_dataset_csv,
                      write_stats_csv)
from .mlp import load_model, save_model
from .ocp import MpfcController, OcpConfig
from .pipeline import (DESK_CORRIDOR, DESK_TRAINING, GAIN_GRID, evaluate,
                       quantize_trained, train_model)
from .quant import FILE_MAGIC, load_quantized, save_quantized
from .sim import (SimConfig, bench_controllers, compute_metrics, export_path,
                  export_trace, near_path_states, run_closed_loop, tune_gains)

log = logging.getLogger("qmpfc")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error: usage: {' '.join(message.split())}\n")


# -- config files -----------------------------------------------------------

def read_config(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = val
    return values


def _convert(text: str, default):
    if isinstance(default, bool):
        if text.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"not a boolean: {text!r}")
        return text.lower() in ("true", "1")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(float(x) for x in text.split(","))
    raise ValueError(f"unsupported setting type {type(default).__name__}")


def apply_config(obj, values: dict, used: set):
    """Copy of dataclass ``obj`` with the matching keys of ``values`` set."""
    changes = {}
    for f in dataclasses.fields(obj):
        if f.name in values:
            try:
                changes[f.name] = _convert(values[f.name], getattr(obj, f.name))
            except ValueError as exc:
                raise CliError(f"config key {f.name}: {exc}") from None
            used.add(f.name)
    return dataclasses.replace(obj, **changes) if changes else obj


class Settings:
    def __init__(self, args):
        values = read_config(args.config) if args.config else {}
        used = set()
        self.ocp = apply_config(OcpConfig(), values, used)
        self.corridor = apply_config(DESK_CORRIDOR, values, used)
        self.training = apply_config(DESK_TRAINING, values, used)
        self.sim = apply_config(SimConfig(v_ref=self.ocp.v_ref), values, used)
        unknown = sorted(set(values) - used)
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}")
        if args.seed is not None:
            self.training = dataclasses.replace(self.training, seed=args.seed)
        self.seed = args.seed if args.seed is not None else 0
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)


# -- loaders ----------------------------------------------------------------

def load_dataset(path):
    path = Path(path)
    if path.suffix == ".csv":
        return read_dataset_csv(path)
    return read_dataset_binary(path)


def is_quantized(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(8) == FILE_MAGIC


def load_any_model(path):
    """``(float_params, qnet)``; exactly one of them is not None."""
    if is_quantized(path):
        return None, load_quantized(path)
    return load_model(path), None


def _need(value, what):
    if value is None:
        raise CliError(f"{what} is required")
    return value


# -- subcommands ------------------------------------------------------------

def cmd_dataset(args, st: Settings):
    ts = generate_dataset(st.ocp, st.corridor)
    write_dataset_binary(ts, st.out / "dataset.bin")
    if args.csv:
        write_dataset_csv(ts, st.out / "dataset.csv")
    print(f"samples={len(ts)} failed={ts.n_failed} out={st.out / 'dataset.bin'}")


def cmd_train(args, st: Settings):
    ts = load_dataset(args.dataset)
    params = train_model(ts, st.training)
    save_model(params, st.out / "model.txt")
    write_stats_csv(params.stats, st.out / "stats.csv")
    print(f"model={st.out / 'model.txt'}")


def cmd_quantize(args, st: Settings):
    params = load_model(args.model)
    qnet = quantize_trained(params, load_dataset(args.dataset))
    save_quantized(qnet, st.out / "model.qnet")
    blob, _ = qnet.int8_parameter_blob()
    print(f"model={st.out / 'model.qnet'} parameters={len(blob)}")


def _controller(kind, model_path, gains, st):
    kind = kind.replace("_", "-")
    if kind == "mpfc":
        return MpfcController(st.ocp)
    params, qnet = load_any_model(_need(model_path, f"--model for {kind}"))
    if kind == "dnn" and params is None:
        raise CliError("dnn needs a float model file")
    if kind in ("qdnn", "qdnn-p") and qnet is None:
        raise CliError(f"{kind} needs a quantized model file")
    return make_controller(kind, config=st.ocp, model=params, qmodel=qnet,
                           gains=gains)


def cmd_simulate(args, st: Settings):
    sim = dataclasses.replace(st.sim, laps=args.laps)
    ctl = _controller(args.controller, args.model, args.gains, st)
    trace = run_closed_loop(ctl, sim, st.ocp.path)
    if len(trace):
        export_trace(trace, st.out / f"trace_{args.controller}.csv")
        print(compute_metrics(trace).row(args.controller))
    if trace.failed:
        raise RuntimeError(f"simulation failed: {trace.reason}")


def cmd_bench(args, st: Settings):
    states = near_path_states(args.n, st.seed, st.corridor, st.ocp.path)
    ctls = {"mpfc": MpfcController(st.ocp)}
    if args.model:
        params, _ = load_any_model(args.model)
        _need(params, "a float model for --model")
        ctls["dnn"] = make_controller("dnn", config=st.ocp, model=params)
    if args.qmodel:
        _, qnet = load_any_model(args.qmodel)
        _need(qnet, "a quantized model for --qmodel")
        ctls["qdnn"] = make_controller("qdnn", config=st.ocp, qmodel=qnet)
        ctls["qdnn-p"] = make_controller("qdnn-p", config=st.ocp, qmodel=qnet,
                                         gains=args.gains)
    for name, m in bench_controllers(ctls, states).items():
        print(m.row(name))


def cmd_evaluate(args, st: Settings):
    params = load_model(args.model)
    _, qnet = load_any_model(args.qmodel)
    _need(qnet, "a quantized model for --qmodel")
    gains = args.gains
    if args.tune:
        gains, _ = tune_gains(qnet, GAIN_GRID, st.sim, st.ocp)
    traces, metrics = evaluate(params, qnet, gains, st.sim, st.ocp)
    for kind, tr in traces.items():
        if len(tr):
            export_trace(tr, st.out / f"trace_{kind}.csv")
        print(metrics[kind].row(kind))
    print(f"gains {gains.p_t:g},{gains.p_n:g}")


def cmd_path(args, st: Settings):
    target = st.out / "path.csv"
    export_path(target, args.n, st.ocp.path)
    print(f"path={target}")


def _gains(text):
    try:
        return PGains.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected P_t,P_n: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--seed", type=int, help="seed for training and sampling")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="qmpfc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="training data")
    ds_sub = ds.add_subparsers(dest="action", required=True)
    gen = ds_sub.add_parser("generate", parents=[common],
                            help="label corridor states with the MPFC")
    gen.add_argument("--csv", action="store_true", help="also write CSV")
    gen.set_defaults(func=cmd_dataset)

    tr = sub.add_parser("train", parents=[common], help="fit the network")
    tr.add_argument("--dataset", required=True)
    tr.set_defaults(func=cmd_train)

    q = sub.add_parser("quantize", parents=[common], help="int8 post-training quantization")
    q.add_argument("--model", required=True)
    q.add_argument("--dataset", required=True, help="calibration data")
    q.set_defaults(func=cmd_quantize)

    sim = sub.add_parser("simulate", parents=[common], help="closed-loop laps")
    sim.add_argument("--controller", required=True,
                     choices=("mpfc", "dnn", "qdnn", "qdnn-p"))
    sim.add_argument("--laps", type=int, default=1)
    sim.add_argument("--model")
    sim.add_argument("--gains", type=_gains, default=DEFAULT_GAINS)
    sim.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", parents=[common], help="per-step timing")
    b.add_argument("--model", help="float model")
    b.add_argument("--qmodel", help="quantized model")
    b.add_argument("--n", type=int, default=10000)
    b.add_argument("--gains", type=_gains, default=DEFAULT_GAINS)
    b.set_defaults(func=cmd_bench)

    ev = sub.add_parser("evaluate", parents=[common], help="one lap per controller")
    ev.add_argument("--model", required=True)
    ev.add_argument("--qmodel", required=True)
    ev.add_argument("--gains", type=_gains, default=DEFAULT_GAINS)
    ev.add_argument("--tune", action="store_true", help="grid-search the gains first")
    ev.set_defaults(func=cmd_evaluate)

    pth = sub.add_parser("path", help="reference path")
    pth_sub = pth.add_subparsers(dest="action", required=True)
    ex = pth_sub.add_parser("export", parents=[common], help="write path samples")
    ex.add_argument("--n", type=int, default=1000)
    ex.set_defaults(func=cmd_path)
    return p


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, Settings(args))
    except CliError as exc:
        print(f"error: usage: {_one_line(exc)}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, KeyError, StopIteration,
            struct.error) as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
