import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmpfc import _kernels as K
from qmpfc.ocp import (MpfcController, OcpConfig, label_states, reference_sequence,
                       rollout_cost, rollout_gradient, solve, stage_cost)
from qmpfc.path import eval_path, reference_inputs

CFG = OcpConfig()
Q = np.array([2e5, 2e5, 1e5, 0.0])
R = np.array([1e1, 5e3, 1e5])


def naive_stage_cost(z, w, v_ref=CFG.v_ref, q=Q, r=R):
    """Quadratic form written out from the definition; the input reference
    is the feed-forward for the applied path speed ``w[2]``."""
    pt = eval_path(z[3])
    dphi = z[2] - pt.heading
    dphi -= 2 * math.pi * round(dphi / (2 * math.pi))
    e = np.array([z[0] - pt.x, z[1] - pt.y, dphi, z[3]])
    s_r, om_r = reference_inputs(z[3], w[2])
    d = np.array([w[0] - s_r, w[1] - om_r, w[2] - v_ref])
    return float(e @ np.diag(q) @ e + d @ np.diag(r) @ d)


def on_path(theta):
    pt = eval_path(theta)
    return np.array([pt.x, pt.y, pt.heading, theta])


def random_instance(rng, n):
    z0 = on_path(rng.uniform(0, 2 * np.pi)) + rng.normal(0, [0.02, 0.02, 0.2, 0])
    u = rng.uniform(CFG.input_lo, CFG.input_hi, size=(n, 3))
    return z0, u


states = st.tuples(st.floats(-0.3, 0.3), st.floats(-2.5, 2.5), st.floats(-10, 10),
                   st.floats(-7, 7))
inputs = st.tuples(st.floats(-0.26, 0.26), st.floats(-0.455, 0.455), st.floats(0, 0.15))


def test_stage_cost_zero_on_path():
    for th in (0.0, 0.4, 2.0, 4.4):
        s, om = reference_inputs(th, CFG.v_ref)
        assert stage_cost(on_path(th), [s, om, CFG.v_ref]) == pytest.approx(0, abs=1e-18)


def test_stage_cost_unit_position_offset():
    z = on_path(0.0) + [1.0, 0, 0, 0]
    s, om = reference_inputs(0.0, CFG.v_ref)
    assert stage_cost(z, [s, om, CFG.v_ref]) == pytest.approx(2e5, rel=1e-12)


@given(states, inputs)
def test_stage_cost_matches_naive_oracle(z, w):
    z = np.array(z)
    assert stage_cost(z, w) == pytest.approx(naive_stage_cost(z, w), rel=1e-9, abs=1e-9)


def test_heading_residual_is_wrapped():
    z = on_path(1.0)
    w = [*reference_inputs(1.0, CFG.v_ref), CFG.v_ref]
    for k in (-2, -1, 1, 3):
        assert stage_cost(z + [0, 0, 2 * math.pi * k, 0], w) == pytest.approx(0, abs=1e-9)


def test_rollout_cost_single_step_is_left_riemann_term(rng):
    cfg = replace(CFG, horizon=1)
    z0, u = random_instance(rng, 1)
    assert rollout_cost(z0, u, cfg) == pytest.approx(cfg.dt * stage_cost(z0, u[0]), rel=1e-14)


def test_rollout_cost_matches_naive_sum(rng):
    cfg = replace(CFG, horizon=7)
    z0, u = random_instance(rng, 7)
    J, zs = rollout_cost(z0, u, cfg, return_states=True)
    assert zs.shape == (8, 4)
    naive = cfg.dt * sum(naive_stage_cost(zs[k], u[k]) for k in range(7))
    assert J == pytest.approx(naive, rel=1e-9)


@pytest.mark.parametrize("theta", [0.0, math.pi])
def test_reference_rollout_cost_is_tiny(theta):
    cfg = replace(CFG, v_ref=0.1)
    z0 = on_path(theta)
    assert rollout_cost(z0, reference_sequence(z0, cfg), cfg) <= 1e-8


def test_cost_linear_in_weights(rng):
    z0, u = random_instance(rng, CFG.horizon)
    assert rollout_cost(z0, u, CFG.scaled(2.0)) == pytest.approx(2 * rollout_cost(z0, u), rel=1e-12)


def test_zero_weights_give_zero_gradient(rng):
    z0, u = random_instance(rng, 5)
    grad = np.empty_like(u)
    J = K.rollout_gradient(z0, u, 0.01, 0.1, 2.0, np.zeros(4), np.zeros(3), 0.13,
                           np.full(4, -np.inf), np.full(4, np.inf), 0.0, grad)
    assert J == 0.0
    assert np.all(grad == 0.0)


def central_difference(z0, u, cfg, h=1e-6):
    g = np.empty_like(u)
    for idx in np.ndindex(*u.shape):
        up, dn = u.copy(), u.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (rollout_cost(z0, up, cfg) - rollout_cost(z0, dn, cfg)) / (2 * h)
    return g


@pytest.mark.parametrize("n", [1, 5, 20])
def test_adjoint_gradient_matches_finite_differences(n, rng):
    cfg = replace(CFG, horizon=n)
    for _ in range(7):
        z0, u = random_instance(rng, n)
        g = rollout_gradient(z0, u, cfg)
        fd = central_difference(z0, u, cfg)
        rel = np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12)
        assert rel <= 1e-4


def test_adjoint_gradient_with_state_penalty(rng):
    cfg = replace(CFG, horizon=6, state_lo=(-0.05, -15, -np.inf, -np.inf),
                  state_hi=(0.05, 15, np.inf, np.inf), state_penalty=1e6)
    z0, u = random_instance(rng, 6)
    u[:, 0] = 0.26
    fd = central_difference(z0, u, cfg)
    g = rollout_gradient(z0, u, cfg)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) <= 1e-4


def test_last_input_only_affects_last_stage(rng):
    cfg = replace(CFG, horizon=5)
    z0, u = random_instance(rng, 5)
    g = rollout_gradient(z0, u, cfg)
    zs = rollout_cost(z0, u, cfg, return_states=True)[1]
    h = 1e-6
    for i in range(3):
        up, dn = u[4].copy(), u[4].copy()
        up[i] += h
        dn[i] -= h
        fd = cfg.dt * (stage_cost(zs[4], up) - stage_cost(zs[4], dn)) / (2 * h)
        assert g[4, i] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_solver_finds_zero_sequence_for_trivial_problem():
    cfg = replace(CFG, horizon=10, v_ref=0.0, q=(0, 0, 0, 0), r=(1, 1, 1),
                  grad_tol=1e-12)
    z0 = on_path(0.3)
    res = solve(z0, warm=np.tile([0.2, -0.3, 0.1], (10, 1)), cfg=cfg)
    assert res.success
    assert np.max(np.abs(res.inputs)) <= 1e-6


@pytest.mark.parametrize("theta", [0.0, math.pi / 4])
def test_solve_from_on_path_state_with_feasible_references(theta):
    cfg = replace(CFG, v_ref=0.1)
    z0 = on_path(theta)
    res = solve(z0, warm=np.tile([0.0, 0.0, 0.05], (cfg.horizon, 1)), cfg=cfg)
    assert res.cost <= 1e-6
    assert rollout_cost(z0, res.inputs, cfg) == pytest.approx(res.cost, rel=1e-12)
    s, om = reference_inputs(theta, 0.1)
    assert np.allclose(res.inputs[0], [s, om, 0.1], atol=1e-3)


def test_solve_hits_speed_bound_when_reference_is_infeasible():
    cfg = replace(CFG, v_ref=0.15)
    res = solve(on_path(0.0), cfg=cfg)
    assert res.inputs[0, 0] == pytest.approx(0.26, abs=1e-9)
    assert res.inputs[0, 2] < 0.15


def test_solver_never_increases_cost(rng):
    for _ in range(5):
        z0, u = random_instance(rng, CFG.horizon)
        res = solve(z0, warm=u)
        assert res.cost <= res.initial_cost
        assert np.all(res.inputs >= np.array(CFG.input_lo) - 1e-15)
        assert np.all(res.inputs <= np.array(CFG.input_hi) + 1e-15)


def test_labels_are_deterministic_and_in_box(rng):
    Z = np.array([on_path(t) + rng.normal(0, [0.01, 0.01, 0.3, 0]) for t in
                  rng.uniform(0, 6, 6)])
    W1, s1 = label_states(Z)
    W2, s2 = label_states(Z)
    assert np.array_equal(W1, W2) and np.array_equal(s1, s2)
    assert np.all(s1 != 3)
    assert np.all((W1 >= CFG.input_lo) & (W1 <= CFG.input_hi))
    assert np.array_equal(MpfcController().predict(Z), W1)


def test_controller_step_deterministic_and_warm_started():
    z = on_path(0.5)
    a = MpfcController().reset()
    b = MpfcController().reset()
    assert np.array_equal(a.step(z), b.step(z))
    ctl = MpfcController().reset()
    ctl.step(z)
    cold = ctl.iterations_[0]
    for _ in range(10):
        ctl.step(z)
    assert np.mean(ctl.iterations_[1:]) <= cold


def test_config_validation():
    with pytest.raises(ValueError):
        OcpConfig(horizon=0)
    with pytest.raises(ValueError):
        OcpConfig(r=(0, 1, 1))
    with pytest.raises(ValueError):
        OcpConfig(input_lo=(0.3, -0.455, 0), input_hi=(0.26, 0.455, 0.15))
    with pytest.raises(ValueError):
        rollout_cost(on_path(0), np.zeros((3, 3)))
