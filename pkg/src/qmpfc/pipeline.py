"""Desk-scale end-to-end run: dataset, training, quantization, gain tuning
and one evaluation lap per controller."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .controllers import (DEFAULT_GAINS, DnnController, PGains, QdnnController,
                          QdnnPController)
from .dataset import (CorridorConfig, TrainingSet, compute_stats, generate_dataset,
                      write_dataset_binary, write_stats_csv)
from .mlp import DEFAULT_WIDTHS, MlpParams, TrainConfig, save_model, train
from .ocp import MpfcController, OcpConfig
from .quant import QuantizedMlp, quantize_model, save_quantized
from .sim import (GAIN_GRID, Metrics, SimConfig, compute_metrics, export_trace,
                  run_closed_loop, tune_gains)

log = logging.getLogger(__name__)

DESK_CORRIDOR = CorridorConfig(n_theta=200, n_width=5, n_length=5, n_height=5)
# a larger step annealed to 1 % and clipped weights; at 25k samples this fits
# in a few minutes and keeps the per-tensor weight ranges narrow
DESK_TRAINING = TrainConfig(learning_rate=2e-3, batch_size=256, epochs=1500,
                            weight_clip=0.75, lr_floor=0.01)
CONTROLLERS = ("mpfc", "dnn", "qdnn", "qdnn-p")


@dataclass(frozen=True)
class PipelineConfig:
    ocp: OcpConfig = OcpConfig()
    corridor: CorridorConfig = DESK_CORRIDOR
    training: TrainConfig = DESK_TRAINING
    sim: SimConfig = SimConfig()
    tune: bool = True
    gain_grid: tuple = GAIN_GRID


@dataclass
class PipelineResult:
    dataset: TrainingSet
    params: MlpParams
    qnet: QuantizedMlp
    gains: PGains
    gain_table: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def train_model(ts: TrainingSet, cfg: TrainConfig = DESK_TRAINING,
                widths=DEFAULT_WIDTHS) -> MlpParams:
    """Fit the network on standardized data; stats are attached."""
    stats = compute_stats(ts)
    params, hist = train(stats.normalize_states(ts.states),
                         stats.normalize_inputs(ts.inputs), widths, cfg)
    log.info("best validation mse %.3e at epoch %d",
             hist.val_mse[hist.best_epoch], hist.best_epoch)
    params.stats = stats
    return params


def quantize_trained(params: MlpParams, ts: TrainingSet) -> QuantizedMlp:
    """Post-training quantization calibrated on the training states."""
    return quantize_model(params, params.stats.normalize_states(ts.states))


def evaluate(params: MlpParams, qnet: QuantizedMlp, gains: PGains,
             sim: SimConfig = SimConfig(), ocp: OcpConfig = OcpConfig(),
             kinds=CONTROLLERS, wall=None) -> tuple[dict, dict]:
    """One lap per controller; returns ``(traces, metrics)``.

    Lap wall-clock times are stored in ``wall`` (keyed by kind) if given.
    """
    build = {
        "mpfc": lambda: MpfcController(ocp),
        "dnn": lambda: DnnController(params, ocp),
        "qdnn": lambda: QdnnController(qnet, ocp),
        "qdnn-p": lambda: QdnnPController(qnet, gains, ocp),
    }
    traces, metrics = {}, {}
    for kind in kinds:
        t0 = time.perf_counter()
        tr = run_closed_loop(build[kind](), sim, ocp.path)
        if wall is not None:
            wall[kind] = time.perf_counter() - t0
        traces[kind] = tr
        metrics[kind] = compute_metrics(tr) if len(tr) else Metrics(np.inf, np.inf)
        if tr.failed:
            metrics[kind].max_error = np.inf
            log.warning("%s lap failed: %s", kind, tr.reason)
    return traces, metrics


def run_pipeline(cfg: PipelineConfig = PipelineConfig(), out_dir=None,
                 dataset: TrainingSet | None = None) -> PipelineResult:
    """Run every stage, optionally writing artifacts to ``out_dir``."""
    timings = {}
    t0 = time.perf_counter()
    ts = dataset if dataset is not None else generate_dataset(cfg.ocp, cfg.corridor)
    timings["dataset"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    params = train_model(ts, cfg.training)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    qnet = quantize_trained(params, ts)
    timings["quantize"] = time.perf_counter() - t0

    gains, table = DEFAULT_GAINS, {}
    if cfg.tune:
        t0 = time.perf_counter()
        gains, table = tune_gains(qnet, cfg.gain_grid, cfg.sim, cfg.ocp)
        timings["tune"] = time.perf_counter() - t0

    laps = {}
    traces, metrics = evaluate(params, qnet, gains, cfg.sim, cfg.ocp, wall=laps)
    timings["evaluate"] = sum(laps.values())
    timings.update({f"lap_{kind}": t for kind, t in laps.items()})

    res = PipelineResult(ts, params, qnet, gains, table, traces, metrics, timings)
    if out_dir is not None:
        write_artifacts(res, out_dir)
    return res


def write_artifacts(res: PipelineResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset_binary(res.dataset, out / "dataset.bin")
    write_stats_csv(res.params.stats, out / "stats.csv")
    save_model(res.params, out / "model.txt")
    save_quantized(res.qnet, out / "model.qnet")
    for kind, tr in res.traces.items():
        if len(tr):
            export_trace(tr, out / f"trace_{kind}.csv")
    lines = [m.row(kind) for kind, m in res.metrics.items()]
    lines.append(f"gains p_t={res.gains.p_t:g} p_n={res.gains.p_n:g}")
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")


def with_seed(cfg: PipelineConfig, seed: int) -> PipelineConfig:
    return replace(cfg, training=replace(cfg.training, seed=seed))


__all__ = ["PipelineConfig", "PipelineResult", "DESK_CORRIDOR", "DESK_TRAINING",
           "GAIN_GRID", "CONTROLLERS", "train_model", "quantize_trained",
           "evaluate", "run_pipeline", "write_artifacts", "with_seed"]
