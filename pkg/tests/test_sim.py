import math

import numpy as np
import pytest

from qmpfc.path import DEFAULT_PATH, reference_inputs
from qmpfc.sim import (PATH_COLUMNS, TRACE_COLUMNS, SimConfig, SimTrace,
                       bench_controllers, compute_metrics, export_path, export_trace,
                       initial_state, near_path_states, read_trace, run_closed_loop)


class FeedForward:
    """Emits the flatness inputs at the midpoint of the coming step."""

    def __init__(self, v, dt=0.01):
        self.v, self.dt = v, dt

    def reset(self):
        return self

    def step(self, z):
        return np.array([*reference_inputs(z[3] + 0.5 * self.dt * self.v, self.v), self.v])


class Broken(FeedForward):
    def step(self, z):
        if z[3] > 0.5:
            raise RuntimeError("boom")
        return super().step(z)


def test_step_budget():
    cfg = SimConfig(v_ref=0.15)
    assert round(2 * math.pi / (0.15 * 0.01)) == 4189
    assert cfg.step_budget == math.ceil(2 * 4188.79)


def test_feed_forward_lap_stays_on_path():
    cfg = SimConfig(v_ref=0.15)
    tr = run_closed_loop(FeedForward(0.15), cfg)
    assert not tr.failed
    assert abs(len(tr) - 4189) <= 1
    assert tr.err.max() <= 1e-4
    assert np.all(np.diff(tr.states[:, 3]) >= 0)
    assert np.allclose(np.diff(tr.t), 0.01)


def test_lap_extremes_trace_the_ellipse():
    tr = run_closed_loop(FeedForward(0.13), SimConfig(v_ref=0.13))
    x, y = tr.states[:, 0], tr.states[:, 1]
    assert x.min() == pytest.approx(-0.1, abs=1e-3) and x.max() == pytest.approx(0.1, abs=1e-3)
    assert y.min() == pytest.approx(-2.0, abs=1e-3) and y.max() == pytest.approx(2.0, abs=1e-3)


def test_controller_exception_truncates_trace():
    tr = run_closed_loop(Broken(0.13))
    assert tr.failed and "boom" in tr.reason
    assert 0 < len(tr) < 1000


def test_divergence_guard():
    class Runaway(FeedForward):
        def step(self, z):
            return np.array([0.26, 0.0, 0.0])
    tr = run_closed_loop(Runaway(0.1), SimConfig(max_error=0.05))
    assert tr.failed and tr.reason.startswith("diverged")
    assert tr.err.max() <= 0.05


def test_budget_exhaustion_is_a_failure():
    class Stuck(FeedForward):
        def step(self, z):
            return np.zeros(3)
    tr = run_closed_loop(Stuck(0.1), SimConfig(v_ref=0.5))
    assert tr.failed and "budget" in tr.reason
    assert len(tr) == SimConfig(v_ref=0.5).step_budget


def test_initial_state_offsets():
    z = initial_state(SimConfig(offset=(0.0, 0.01, 0.1)))
    pt = DEFAULT_PATH(0.0)
    err = DEFAULT_PATH.error_components(z[:2], 0.0)
    assert err.tangential == pytest.approx(0, abs=1e-15)
    assert err.normal == pytest.approx(0.01)
    assert z[2] == pytest.approx(pt.heading + 0.1)


def test_metrics_of_constant_error():
    n = 50
    tr = SimTrace(np.arange(n) * 0.01, np.zeros((n, 4)), np.zeros((n, 3)),
                  np.full(n, 0.003), np.full(n, 1e-5))
    m = compute_metrics(tr)
    assert m.mean_error == pytest.approx(0.003) and m.max_error == 0.003
    assert m.time_std == pytest.approx(0, abs=1e-18) and m.n == n
    with pytest.raises(ValueError):
        compute_metrics(SimTrace(*(np.empty((0,) + s) for s in ((), (4,), (3,), ()))))


def test_trace_csv_golden_header_and_roundtrip(tmp_path):
    tr = run_closed_loop(FeedForward(0.13), SimConfig(v_ref=0.13))
    export_trace(tr, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,pathparam,pos-x,pos-y,phi,linvel,angvel,pathvel,err"
    assert ",".join(TRACE_COLUMNS) == lines[0]
    back = read_trace(tmp_path / "t.csv")
    for a, b in ((back.t, tr.t), (back.states, tr.states), (back.inputs, tr.inputs),
                 (back.err, tr.err)):
        assert np.array_equal(a, b)


def test_read_trace_rejects_other_files(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_trace(tmp_path / "x.csv")


def test_export_errors_name_the_path(tmp_path):
    tr = run_closed_loop(Broken(0.13))
    with pytest.raises(OSError, match="nope"):
        export_trace(tr, tmp_path / "nope" / "t.csv")


def test_path_export(tmp_path):
    export_path(tmp_path / "p.csv", n=400)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == ",".join(PATH_COLUMNS) == "pathparam,pos-x,pos-y"
    M = np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1)
    assert M.shape == (401, 3)
    assert np.allclose(M[:, 1] ** 2 / 0.01 + M[:, 2] ** 2 / 4, 1)
    assert np.allclose(M[0, 1:], M[-1, 1:])


def test_near_path_states_are_in_the_corridor():
    Z = near_path_states(2000, seed=3)
    assert Z.shape == (2000, 4)
    assert np.array_equal(Z, near_path_states(2000, seed=3))
    for z in Z[:200]:
        e = DEFAULT_PATH.error_components(z[:2], z[3])
        assert abs(e.tangential) <= 0.1 + 1e-12 and abs(e.normal) <= 0.01 + 1e-12
        assert abs(z[2] - DEFAULT_PATH.heading(z[3])) <= math.pi / 3


def test_bench_reports_one_sample_per_state():
    res = bench_controllers({"ff": FeedForward(0.13)}, near_path_states(300))
    m = res["ff"]
    assert m.n == 300
    assert 0 < m.time_mean <= m.time_worst
    assert math.isnan(m.mean_error)


def test_simulation_is_deterministic():
    a = run_closed_loop(FeedForward(0.13), SimConfig(offset=(0.01, 0.005, 0.05)))
    b = run_closed_loop(FeedForward(0.13), SimConfig(offset=(0.01, 0.005, 0.05)))
    assert a.states.tobytes() == b.states.tobytes()
    assert a.inputs.tobytes() == b.inputs.tobytes()


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(laps=0)
