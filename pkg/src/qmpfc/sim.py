"""Closed-loop simulation, error metrics, timing benchmarks and CSV export."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .controllers import PGains, QdnnPController
from .dataset import CorridorConfig
from .path import DEFAULT_PATH, EllipsePath

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "pathparam", "pos-x", "pos-y", "phi", "linvel",
                 "angvel", "pathvel", "err")
PATH_COLUMNS = ("pathparam", "pos-x", "pos-y")
# magnitudes tried with both signs for each gain; the upper decade is needed
# because the int8 input grid hides path errors of a few centimetres from
# the network, which leaves the fine correction to the compensator
GAIN_GRID = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    laps: int = 1
    theta0: float = 0.0
    # initial offsets from p(theta0): tangential (m), normal (m), heading (rad)
    offset: tuple = (0.0, 0.0, 0.0)
    v_ref: float = 0.13
    max_error: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.laps < 1:
            raise ValueError("laps must be >= 1")
        if not self.v_ref > 0:
            raise ValueError("v_ref must be positive")

    @property
    def step_budget(self) -> int:
        return int(math.ceil(2 * self.laps * (2 * math.pi / self.v_ref) / self.dt))


@dataclass
class SimTrace:
    t: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    err: np.ndarray
    step_time: np.ndarray = None
    failed: bool = False
    reason: str = ""

    def __len__(self):
        return len(self.t)


@dataclass
class Metrics:
    mean_error: float
    max_error: float
    time_mean: float = float("nan")
    time_std: float = float("nan")
    time_worst: float = float("nan")
    n: int = 0

    def row(self, name):
        return (f"{name:8s} mean_err={self.mean_error:.3e} max_err={self.max_error:.3e} "
                f"t_mean={self.time_mean:.2e}s t_std={self.time_std:.2e}s "
                f"t_worst={self.time_worst:.2e}s n={self.n}")


def initial_state(cfg: SimConfig, path: EllipsePath = DEFAULT_PATH) -> np.ndarray:
    pt = path(cfg.theta0)
    dt_, dn, dh = cfg.offset
    c, s = math.cos(pt.heading), math.sin(pt.heading)
    return np.array([pt.x + dt_ * c - dn * s, pt.y + dt_ * s + dn * c,
                     pt.heading + dh, cfg.theta0])


def run_closed_loop(controller, cfg: SimConfig = SimConfig(),
                    path: EllipsePath = DEFAULT_PATH) -> SimTrace:
    """Drive the RK4 plant with ``controller.step`` until theta has advanced
    by ``laps`` turns, the step budget runs out, or the error exceeds
    ``cfg.max_error``. Only ``step`` is timed."""
    a, b = path.axes
    controller.reset()
    n_max = cfg.step_budget
    states = np.empty((n_max, 4))
    inputs = np.empty((n_max, 3))
    err = np.empty(n_max)
    timing = np.empty(n_max)
    theta_end = cfg.theta0 + 2 * math.pi * cfg.laps
    z = initial_state(cfg, path)
    zn = np.empty(4)
    failed, reason = False, ""
    k = 0
    clock = time.perf_counter
    while k < n_max and z[3] < theta_end:
        e = math.hypot(z[0] - a * math.cos(z[3]), z[1] - b * math.sin(z[3]))
        if e > cfg.max_error:
            failed, reason = True, f"diverged: error {e:.3g} m at step {k}"
            log.info(reason)
            break
        t0 = clock()
        try:
            w = controller.step(z)
        except Exception as exc:  # noqa: BLE001 - recorded in the trace
            failed, reason = True, f"controller failed at step {k}: {exc}"
            log.info(reason)
            break
        timing[k] = clock() - t0
        if not np.all(np.isfinite(w)):
            failed, reason = True, f"non-finite command at step {k}"
            break
        states[k] = z
        inputs[k] = w
        err[k] = e
        K.rk4_step(z, np.asarray(w, dtype=float), cfg.dt, zn)
        z = zn.copy()
        k += 1
    if not failed and z[3] < theta_end:
        failed, reason = True, "step budget exhausted"
    return SimTrace(np.arange(k) * cfg.dt, states[:k].copy(), inputs[:k].copy(),
                    err[:k].copy(), timing[:k].copy(), failed, reason)


def compute_metrics(trace: SimTrace) -> Metrics:
    if len(trace) == 0:
        raise ValueError("empty trace")
    m = Metrics(float(np.mean(trace.err)), float(np.max(trace.err)), n=len(trace))
    if trace.step_time is not None and len(trace.step_time):
        st = trace.step_time
        m.time_mean, m.time_std, m.time_worst = (float(st.mean()), float(st.std()),
                                                 float(st.max()))
    return m


def near_path_states(n, seed=0, corridor: CorridorConfig = CorridorConfig(),
                     path: EllipsePath = DEFAULT_PATH) -> np.ndarray:
    """States drawn uniformly from the corridor cuboid at uniform theta."""
    rng = np.random.default_rng(seed)
    th = rng.uniform(0, 2 * np.pi, n)
    half = np.array([corridor.half_length, corridor.half_width, corridor.half_height])
    off = rng.uniform(-1, 1, (n, 3)) * half
    pos = path.position(th)
    head = path.heading(th)
    c, s = np.cos(head), np.sin(head)
    return np.column_stack([pos[:, 0] + off[:, 0] * c - off[:, 1] * s,
                            pos[:, 1] + off[:, 0] * s + off[:, 1] * c,
                            head + off[:, 2], th])


def bench_controllers(controllers: dict, states) -> dict:
    """Wall-clock time of ``step`` per controller over the given states.

    Controllers are reset before every call (outside the timed region), so
    the MPFC always solves from its reference guess.
    """
    results = {}
    clock = time.perf_counter
    for name, ctl in controllers.items():
        ctl.reset()
        ctl.step(states[0])  # JIT and cache warm-up
        times = np.empty(len(states))
        for i, z in enumerate(states):
            ctl.reset()
            t0 = clock()
            ctl.step(z)
            times[i] = clock() - t0
        results[name] = Metrics(float("nan"), float("nan"), float(times.mean()),
                                float(times.std()), float(times.max()), len(times))
    return results


def tune_gains(qnet, values=GAIN_GRID, cfg: SimConfig = SimConfig(),
               config=None):
    """Grid search over signed gain pairs minimizing the lap's max error.

    Returns ``(best_gains, table)`` where ``table`` maps gains to max error
    (``inf`` for failed laps).
    """
    from .ocp import OcpConfig
    config = config if config is not None else OcpConfig()
    grid = sorted({s * v for v in values for s in (-1, 1)})
    table = {}
    for p_t, p_n in itertools.product(grid, grid):
        gains = PGains(p_t, p_n)
        tr = run_closed_loop(QdnnPController(qnet, gains, config), cfg, config.path)
        table[gains] = math.inf if tr.failed else float(tr.err.max())
    best = min(table, key=table.get)
    log.info("best gains %s: max error %.3e", best, table[best])
    return best, table


# -- CSV ----------------------------------------------------------------------

def export_trace(trace: SimTrace, path):
    rows = np.column_stack([trace.t, trace.states[:, 3], trace.states[:, 0],
                            trace.states[:, 1], trace.states[:, 2], trace.inputs,
                            trace.err])
    try:
        np.savetxt(path, rows, delimiter=",", fmt="%.17g",
                   header=",".join(TRACE_COLUMNS), comments="")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_trace(path) -> SimTrace:
    path = Path(path)
    with path.open() as fh:
        header = next(csv.reader(fh))
    if tuple(header) != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    M = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    states = M[:, [2, 3, 4, 1]]
    return SimTrace(M[:, 0], states, M[:, 5:8], M[:, 8])


def export_path(path_file, n=1000, path: EllipsePath = DEFAULT_PATH):
    th = 2 * np.pi * np.arange(n + 1) / n
    pos = path.position(th)
    try:
        np.savetxt(path_file, np.column_stack([th, pos]), delimiter=",",
                   fmt="%.17g", header=",".join(PATH_COLUMNS), comments="")
    except OSError as exc:
        raise OSError(f"cannot write path samples to {path_file}: {exc}") from exc
