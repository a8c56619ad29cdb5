"""Runtime controllers sharing one interface: ``step(z) -> w`` and ``reset()``.

* :class:`~qmpfc.ocp.MpfcController` solves the OCP online (warm-started).
* :class:`DnnController` evaluates the float network.
* :class:`QdnnController` runs the int8 kernel.
* :class:`QdnnPController` adds the proportional path-error compensator
  ``w_P = (P_t e_t, P_n e_n, 0)`` to the QDNN command.

Network-based commands are clamped to the input box after summation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _kernels as K
from ._validation import check_state
from .mlp import MlpParams, forward
from .ocp import MpfcController, OcpConfig
from .path import DEFAULT_PATH, EllipsePath
from .quant import QuantizedMlp, _qforward, quantized_forward

__all__ = ["PGains", "DEFAULT_GAINS", "MpfcController", "DnnController",
           "QdnnController", "QdnnPController", "dnn_step", "qdnn_step",
           "p_compensation", "qdnn_p_step", "make_controller"]


@dataclass(frozen=True)
class PGains:
    """``p_t``: (m/s)/m on the tangential error, ``p_n``: (rad/s)/m on the
    normal error."""

    p_t: float = 0.0
    p_n: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.p_t) and math.isfinite(self.p_n)):
            raise ValueError("gains must be finite")

    @classmethod
    def parse(cls, text: str) -> "PGains":
        p_t, p_n = (float(x) for x in text.split(","))
        return cls(p_t, p_n)


# winner of the grid search in ``qmpfc.sim.tune_gains`` on the desk-scale
# model (see README); the sign convention slows down when ahead (e_t > 0)
# and steers right when left of the path (e_n > 0)
DEFAULT_GAINS = PGains(-100.0, -100.0)

_BOX = OcpConfig()


def _box(cfg):
    A = cfg.arrays
    return A["lo"], A["hi"]


def dnn_step(z, params: MlpParams, cfg: OcpConfig = _BOX) -> np.ndarray:
    """Normalize, run the float network, denormalize and clamp."""
    z = check_state(z)
    stats = params.stats
    w = stats.denormalize_inputs(forward(params, stats.normalize_states(z)))
    return np.clip(w, *_box(cfg))


def qdnn_step(z, qnet: QuantizedMlp, cfg: OcpConfig = _BOX) -> np.ndarray:
    """Normalize, quantize, integer forward, dequantize, denormalize, clamp."""
    z = check_state(z)
    stats = qnet.stats
    w_bar = quantized_forward(qnet, stats.normalize_states(z))
    return np.clip(stats.denormalize_inputs(w_bar), *_box(cfg))


def p_compensation(z, gains: PGains, path: EllipsePath = DEFAULT_PATH) -> np.ndarray:
    z = check_state(z)
    e = path.error_components(z[:2], z[3])
    return np.array([gains.p_t * e.tangential, gains.p_n * e.normal, 0.0])


def qdnn_p_step(z, qnet: QuantizedMlp, gains: PGains, cfg: OcpConfig = _BOX,
                path: EllipsePath = DEFAULT_PATH) -> np.ndarray:
    z = check_state(z)
    stats = qnet.stats
    w = stats.denormalize_inputs(
        quantized_forward(qnet, stats.normalize_states(z)))
    return np.clip(w + p_compensation(z, gains, path), *_box(cfg))


@njit(cache=True)
def _fused_step(z, mu, sigma, widths, w, bias, wzp, azp, mult, in_scale,
                in_zp, out_scale, p_t, p_n, a, b, lo, hi, out):
    x = np.empty(4)
    for i in range(4):
        x[i] = (z[i] - mu[i]) / sigma[i]
    wb = np.empty(3)
    _qforward(x, widths, w, bias, wzp, azp, mult, in_scale, in_zp, out_scale, wb)
    for i in range(3):
        out[i] = wb[i] * sigma[4 + i] + mu[4 + i]
    if p_t != 0.0 or p_n != 0.0:
        th = z[3]
        h = K.ellipse_heading(a, b, th)
        ex = z[0] - a * math.cos(th)
        ey = z[1] - b * math.sin(th)
        c = math.cos(h)
        s = math.sin(h)
        out[0] += p_t * (ex * c + ey * s)
        out[1] += p_n * (-ex * s + ey * c)
    for i in range(3):
        out[i] = min(max(out[i], lo[i]), hi[i])


class DnnController:
    def __init__(self, params: MlpParams, config: OcpConfig = _BOX):
        if params.stats is None:
            raise ValueError("model carries no normalization statistics")
        self.params = params
        self.config = config

    def reset(self):
        return self

    def step(self, z):
        return dnn_step(z, self.params, self.config)


class QdnnPController:
    """QDNN command plus proportional compensation, evaluated in one
    compiled call."""

    def __init__(self, qnet: QuantizedMlp, gains: PGains = DEFAULT_GAINS,
                 config: OcpConfig = _BOX):
        self.qnet = qnet
        self.gains = gains
        self.config = config
        lo, hi = _box(config)
        self._args = (qnet.stats.mu, qnet.stats.sigma, *qnet.packed(),
                      float(gains.p_t), float(gains.p_n), *config.path.axes,
                      lo, hi)
        if max(self._args[2]) > 64:
            raise ValueError("kernel supports layer widths up to 64")

    def reset(self):
        return self

    def step(self, z):
        z = np.asarray(z, dtype=float)
        out = np.empty(3)
        _fused_step(z, *self._args, out)
        return out


class QdnnController(QdnnPController):
    def __init__(self, qnet: QuantizedMlp, config: OcpConfig = _BOX):
        super().__init__(qnet, PGains(0.0, 0.0), config)


def make_controller(kind: str, *, config: OcpConfig = _BOX, model=None,
                    qmodel=None, gains: PGains = DEFAULT_GAINS):
    kind = kind.lower().replace("_", "-")
    if kind == "mpfc":
        return MpfcController(config).reset()
    if kind == "dnn":
        return DnnController(model, config)
    if kind == "qdnn":
        return QdnnController(qmodel, config)
    if kind in ("qdnn-p", "qdnn+p"):
        return QdnnPController(qmodel, gains, config)
    raise ValueError(f"unknown controller kind {kind!r}")
