"""Unicycle model augmented with the path-parameter integrator.

State ``z = (q_x, q_y, phi, theta)``, input ``w = (s, omega, v)``.
"""

from __future__ import annotations

import numpy as np

from ._validation import check_input, check_state
from .path import DEFAULT_PATH, EllipsePath


def dynamics(z, w):
    z = check_state(z)
    w = check_input(w)
    s, omega, v = w
    return np.array([s * np.cos(z[2]), s * np.sin(z[2]), omega, v])


def rk4_step(z, w, dt):
    """One classical RK4 step with ``w`` held over ``[0, dt]``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    z = check_state(z)
    w = check_input(w)
    k1 = dynamics(z, w)
    k2 = dynamics(z + 0.5 * dt * k1, w)
    k3 = dynamics(z + 0.5 * dt * k2, w)
    k4 = dynamics(z + dt * k3, w)
    return z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate_open_loop(z0, inputs, dt):
    """Roll out ``inputs`` from ``z0``; returns ``len(inputs) + 1`` states."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] == 0:
        raise ValueError("need at least one input")
    states = np.empty((inputs.shape[0] + 1, 4))
    states[0] = check_state(z0)
    for k, w in enumerate(inputs):
        states[k + 1] = rk4_step(states[k], w, dt)
    return states


def reference_rollout(z0, v, dt, steps, path: EllipsePath = DEFAULT_PATH):
    """RK4 rollout of the feed-forward law ``w = (s_r(theta), omega_r(theta), v)``.

    The inputs are re-evaluated at every RK4 stage from the stage's path
    parameter, so the rollout is fourth-order accurate in ``dt``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    if steps < 1:
        raise ValueError("need at least one step")

    def f(z):
        s, omega = path.reference_inputs(z[3], v)
        return np.array([s * np.cos(z[2]), s * np.sin(z[2]), omega, v])

    states = np.empty((steps + 1, 4))
    z = states[0] = check_state(z0)
    for k in range(steps):
        k1 = f(z)
        k2 = f(z + 0.5 * dt * k1)
        k3 = f(z + 0.5 * dt * k2)
        k4 = f(z + dt * k3)
        z = states[k + 1] = z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return states
