"""Model predictive path-following control by direct single shooting.

The optimal control problem over ``N`` steps of length ``dt`` is

    min_w  dt * sum_k l(z_k, w_k)    s.t.  z_{k+1} = rk4(z_k, w_k, dt),
                                           w_lo <= w_k <= w_hi

with ``l`` the quadratic path-following stage cost. It is solved by a
spectral projected-gradient method; gradients come from the adjoint of the
RK4 rollout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels as K
from ._validation import check_input, check_matrix, check_state
from .path import DEFAULT_PATH, EllipsePath

log = logging.getLogger(__name__)

STATUS = {0: "converged", 1: "max_iters", 2: "stalled", 3: "non_finite"}


@dataclass(frozen=True)
class OcpConfig:
    horizon: int = 60
    dt: float = 0.01
    q: tuple = (2e5, 2e5, 1e5, 0.0)
    r: tuple = (1e1, 5e3, 1e5)
    input_lo: tuple = (-0.26, -0.455, 0.0)
    input_hi: tuple = (0.26, 0.455, 0.15)
    # largest constant path speed whose feed-forward respects |s| <= 0.26 at
    # the path vertices (s_r = 2 v there)
    v_ref: float = 0.13
    state_lo: tuple = (-5.0, -15.0, -np.inf, -np.inf)
    state_hi: tuple = (5.0, 15.0, np.inf, np.inf)
    state_penalty: float = 0.0
    max_iters: int = 400
    warm_iters: int = 60
    grad_tol: float = 1e-6
    armijo_c: float = 1e-4
    armijo_beta: float = 0.5
    max_backtracks: int = 40
    path: EllipsePath = field(default=DEFAULT_PATH)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if len(self.q) != 4 or len(self.r) != 3:
            raise ValueError("q needs 4 weights and r needs 3")
        if min(self.q) < 0:
            raise ValueError("state weights must be non-negative")
        if min(self.r) <= 0:
            raise ValueError("input weights must be positive")
        lo, hi = np.asarray(self.input_lo), np.asarray(self.input_hi)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(lo > hi):
            raise ValueError("input bounds must satisfy lo <= hi componentwise")
        if lo[2] < 0:
            raise ValueError("path speed lower bound must be >= 0")
        if self.state_penalty < 0:
            raise ValueError("state_penalty must be >= 0")

    # numba wants contiguous float arrays; build them once per config
    @property
    def arrays(self):
        try:
            return self.__dict__["_arrays"]
        except KeyError:
            pass
        n = self.horizon
        q = np.asarray(self.q, dtype=float)
        r = np.asarray(self.r, dtype=float)
        b = max(self.path.axes)
        # rough Gauss-Newton curvature per input channel (mid-horizon)
        horizon_gain = self.dt * self.dt * n / 2
        scale = 1.0 / (2 * self.dt * np.array([
            r[0] + max(q[0], q[1]) * horizon_gain,
            r[1] + q[2] * horizon_gain,
            r[2] + max(q[0], q[1]) * b * b * horizon_gain,
        ]))
        arrays = dict(
            q=q, r=r, lo=np.asarray(self.input_lo, dtype=float),
            hi=np.asarray(self.input_hi, dtype=float),
            zlo=np.asarray(self.state_lo, dtype=float),
            zhi=np.asarray(self.state_hi, dtype=float), scale=scale,
        )
        object.__setattr__(self, "_arrays", arrays)
        return arrays

    def scaled(self, factor: float) -> "OcpConfig":
        """Copy with every cost weight multiplied by ``factor``."""
        return replace(self, q=tuple(factor * x for x in self.q),
                       r=tuple(factor * x for x in self.r))


@dataclass
class SolveResult:
    inputs: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    pg_norm: float
    status: str

    @property
    def success(self) -> bool:
        return self.status != "non_finite"


def _seq(seq, cfg):
    u = np.ascontiguousarray(np.asarray(seq, dtype=float).reshape(-1, 3))
    if u.shape[0] != cfg.horizon:
        raise ValueError(
            f"input sequence has {u.shape[0]} steps, horizon is {cfg.horizon}")
    return u


def stage_cost(z, w, cfg: OcpConfig = OcpConfig()) -> float:
    z, w = check_state(z), check_input(w)
    A = cfg.arrays
    return K.stage_cost(z, w, *cfg.path.axes, A["q"], A["r"], cfg.v_ref)


def _args(cfg):
    A = cfg.arrays
    return (cfg.dt, *cfg.path.axes, A["q"], A["r"], cfg.v_ref, A["zlo"],
            A["zhi"], cfg.state_penalty)


def rollout_cost(z0, seq, cfg: OcpConfig = OcpConfig(), return_states=False):
    z0 = check_state(z0)
    u = _seq(seq, cfg)
    J = K.rollout_cost(z0, u, *_args(cfg))
    if return_states:
        zs = np.empty((u.shape[0] + 1, 4))
        K.rollout_states(z0, u, cfg.dt, zs)
        return J, zs
    return J


def rollout_gradient(z0, seq, cfg: OcpConfig = OcpConfig()) -> np.ndarray:
    """Gradient of ``rollout_cost`` with respect to every input entry."""
    z0 = check_state(z0)
    u = _seq(seq, cfg)
    grad = np.empty_like(u)
    K.rollout_gradient(z0, u, *_args(cfg), grad)
    return grad


def reference_sequence(z0, cfg: OcpConfig = OcpConfig()) -> np.ndarray:
    """Feed-forward inputs at the step midpoints ``theta0 + (k + 1/2) dt v_ref``,
    clipped to the box."""
    A = cfg.arrays
    u = np.empty((cfg.horizon, 3))
    K.reference_guess(check_state(z0), cfg.horizon, cfg.dt, *cfg.path.axes,
                      cfg.v_ref, A["lo"], A["hi"], u)
    return u


def solve(z0, warm=None, cfg: OcpConfig = OcpConfig(), max_iters=None) -> SolveResult:
    """Solve the OCP from ``z0``; ``warm`` defaults to the reference guess.

    The returned cost never exceeds the cost of the (projected) initial
    guess. A non-finite initial cost yields ``status='non_finite'`` and the
    projected guess itself.
    """
    z0 = check_state(z0)
    u0 = reference_sequence(z0, cfg) if warm is None else _seq(warm, cfg).copy()
    return _solve(z0, u0, cfg, cfg.max_iters if max_iters is None else max_iters)


def _solve(z0, u0, cfg, max_iters):
    A = cfg.arrays
    out = np.empty_like(u0)
    info = np.empty(5)
    K.solve_pg(z0, u0, cfg.dt, *cfg.path.axes, A["q"], A["r"], cfg.v_ref,
               A["lo"], A["hi"], A["zlo"], A["zhi"], cfg.state_penalty,
               A["scale"], max_iters, cfg.grad_tol, cfg.armijo_c,
               cfg.armijo_beta, cfg.max_backtracks, out, info)
    return SolveResult(out, info[1], info[0], int(info[2]), info[3],
                       STATUS[int(info[4])])


def label_states(Z, cfg: OcpConfig = OcpConfig()):
    """First optimal input for each row of ``Z`` (independent cold starts).

    Returns ``(labels, status)`` with the integer solver status per row.
    """
    Z = np.ascontiguousarray(check_matrix(Z, 4, "Z"))
    A = cfg.arrays
    labels = np.empty((Z.shape[0], 3))
    status = np.empty(Z.shape[0], dtype=np.int64)
    K.label_batch(Z, cfg.horizon, cfg.dt, *cfg.path.axes, A["q"], A["r"],
                  cfg.v_ref, A["lo"], A["hi"], A["zlo"], A["zhi"],
                  cfg.state_penalty, A["scale"], cfg.max_iters, cfg.grad_tol,
                  cfg.armijo_c, cfg.armijo_beta, cfg.max_backtracks, labels,
                  status)
    return labels, status


class MpfcController(BaseEstimator):
    """Receding-horizon MPFC feedback ``w = M(z)``.

    ``step`` keeps the previous solution as warm start (shifted by one step,
    last entry repeated); ``predict`` evaluates the memoryless cold-start
    map row by row, which is what the dataset labels are made of.

    Parameters
    ----------
    config : OcpConfig, default=None
        Problem and solver settings; ``None`` means the default problem.
    """

    def __init__(self, config=None):
        self.config = config

    @property
    def cfg(self) -> OcpConfig:
        return self.config if self.config is not None else OcpConfig()

    def fit(self, X=None, y=None):
        self.reset()
        return self

    def reset(self):
        self.warm_ = None
        self.iterations_ = []
        self.last_result_ = None
        return self

    def predict(self, X):
        labels, _ = label_states(X, self.cfg)
        return labels

    def step(self, z) -> np.ndarray:
        if not hasattr(self, "warm_"):
            self.reset()
        cfg = self.cfg
        z = check_state(z)
        if self.warm_ is None:
            u0, iters = reference_sequence(z, cfg), cfg.max_iters
        else:
            u0, iters = self.warm_, cfg.warm_iters
        res = _solve(z, u0, cfg, iters)
        self.last_result_ = res
        self.iterations_.append(res.iterations)
        if not res.success:
            log.warning("MPFC solve failed (%s); falling back to warm start",
                        res.status)
            self.warm_ = np.vstack([u0[1:], u0[-1:]])
            return u0[0].copy()
        u = res.inputs
        self.warm_ = np.vstack([u[1:], u[-1:]])
        return u[0].copy()
