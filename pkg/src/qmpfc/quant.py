"""Post-training 8-bit quantization and an integer-only inference kernel.

Uniform asymmetric, per-tensor quantization::

    q = clamp(round(x / scale) + zero_point, -128, 127)
    x ~ (q - zero_point) * scale

Rounding is half away from zero everywhere. A layer accumulates
``(q_w - zp_w) * (q_x - zp_x)`` in integers, adds an int32 bias stored at
scale ``s_x * s_w``, and requantizes with the real multiplier
``s_x * s_w / s_out``. ReLU is the clamp at the output zero point.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .dataset import NormStats
from .mlp import MlpParams, forward, hidden_activations

QMIN, QMAX = -128, 127
SCALE_FLOOR = 1e-12
FILE_MAGIC = b"MPFCQN1\x00"


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not QMIN <= self.zero_point <= QMAX:
            raise ValueError(f"zero point {self.zero_point} outside int8")

    @classmethod
    def from_range(cls, lo, hi):
        """Parameters covering ``[min(lo, 0), max(hi, 0)]`` so that 0 is
        exactly representable."""
        lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
        scale = max((hi - lo) / (QMAX - QMIN), SCALE_FLOOR)
        zp = int(np.clip(round_half_away(QMIN - lo / scale), QMIN, QMAX))
        return cls(scale, zp)


def quantize(x, qp: QuantParams):
    q = round_half_away(np.asarray(x, dtype=float) / qp.scale) + qp.zero_point
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def dequantize(q, qp: QuantParams):
    return (np.asarray(q, dtype=np.int64) - qp.zero_point) * qp.scale


def quantize_value(x, qp: QuantParams) -> int:
    if not math.isfinite(x):
        raise ValueError("cannot quantize a non-finite value")
    return int(quantize(x, qp))


def dequantize_value(q, qp: QuantParams) -> float:
    return float(dequantize(q, qp))


@dataclass
class QuantLayer:
    weights: np.ndarray       # int8, (n_out, n_in)
    bias: np.ndarray          # int32, scale = s_in * s_w, zero point 0
    weight_qp: QuantParams
    act_qp: QuantParams       # quantization of this layer's output

    @property
    def width(self):
        return self.weights.shape[0]


@dataclass
class QuantizedMlp:
    input_qp: QuantParams
    layers: list
    stats: NormStats

    @property
    def output_qp(self) -> QuantParams:
        return self.layers[-1].act_qp

    @property
    def widths(self) -> tuple:
        return (self.layers[0].weights.shape[1],
                *(l.width for l in self.layers))

    def multipliers(self) -> np.ndarray:
        s_in = [self.input_qp.scale] + [l.act_qp.scale for l in self.layers[:-1]]
        return np.array([si * l.weight_qp.scale / l.act_qp.scale
                         for si, l in zip(s_in, self.layers)])

    def packed(self):
        """Flat arrays consumed by the compiled kernel (cached)."""
        cache = self.__dict__.get("_packed")
        if cache is None:
            cache = (
                np.array(self.widths, dtype=np.int64),
                np.concatenate([l.weights.ravel() for l in self.layers]).astype(np.int32),
                np.concatenate([l.bias for l in self.layers]).astype(np.int64),
                np.array([l.weight_qp.zero_point for l in self.layers], dtype=np.int32),
                np.array([l.act_qp.zero_point for l in self.layers], dtype=np.int32),
                self.multipliers(),
                self.input_qp.scale, self.input_qp.zero_point,
                self.output_qp.scale,
            )
            self.__dict__["_packed"] = cache
        return cache

    def int8_parameter_blob(self):
        """One byte per network parameter.

        Weights are stored as they are; biases are requantized to int8 with
        one asymmetric scale per layer. Returns ``(blob, bias_qparams)``.
        The kernel itself keeps int32 biases; see :func:`from_int8_blob`.
        """
        chunks, bias_qps = [], []
        s_in = [self.input_qp.scale] + [l.act_qp.scale for l in self.layers[:-1]]
        for si, l in zip(s_in, self.layers):
            b_real = l.bias * (si * l.weight_qp.scale)
            bqp = QuantParams.from_range(b_real.min(), b_real.max())
            chunks.append(l.weights.astype(np.int8).tobytes())
            chunks.append(quantize(b_real, bqp).tobytes())
            bias_qps.append(bqp)
        return b"".join(chunks), bias_qps


def _bias_int32(b_real, s_bias):
    q = round_half_away(np.asarray(b_real) / s_bias)
    if np.any(np.abs(q) > 2**31 - 1):
        raise OverflowError("bias does not fit in int32")
    return q.astype(np.int32)


def from_int8_blob(template: QuantizedMlp, blob: bytes, bias_qps) -> QuantizedMlp:
    """Rebuild a kernel-ready network from an int8 parameter blob, taking
    scales and zero points from ``template``."""
    layers, pos = [], 0
    s_in = template.input_qp.scale
    for l, bqp in zip(template.layers, bias_qps):
        n, m = l.weights.shape
        W = np.frombuffer(blob, np.int8, n * m, pos).reshape(n, m).copy()
        pos += n * m
        b_real = dequantize(np.frombuffer(blob, np.int8, n, pos), bqp)
        pos += n
        bias = _bias_int32(b_real, s_in * l.weight_qp.scale)
        layers.append(QuantLayer(W, bias, l.weight_qp, l.act_qp))
        s_in = l.act_qp.scale
    if pos != len(blob):
        raise ValueError("blob length does not match the architecture")
    return QuantizedMlp(template.input_qp, layers, template.stats)


def quantize_model(params: MlpParams, calibration) -> QuantizedMlp:
    """Per-tensor min/max post-training quantization.

    ``calibration`` holds normalized network inputs; activation ranges are
    the extremes observed while running the float network over it.
    """
    X = np.atleast_2d(np.asarray(calibration, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("calibration set is empty")
    input_qp = QuantParams.from_range(X.min(), X.max())
    acts = hidden_activations(params, X) + [forward(params, X)]
    layers = []
    s_in = input_qp.scale
    for W, b, A in zip(params.weights, params.biases, acts):
        wqp = QuantParams.from_range(W.min(), W.max())
        aqp = QuantParams.from_range(A.min(), A.max())
        layers.append(QuantLayer(quantize(W, wqp), _bias_int32(b, s_in * wqp.scale),
                                 wqp, aqp))
        s_in = aqp.scale
    return QuantizedMlp(input_qp, layers, params.stats)


# -- integer kernel -----------------------------------------------------------

@njit(cache=True)
def _round_away(x):
    if x >= 0.0:
        return math.floor(x + 0.5)
    return -math.floor(-x + 0.5)


@njit(cache=True)
def _qforward(x, widths, w, bias, wzp, azp, mult, in_scale, in_zp, out_scale, out):
    buf = np.empty(64, dtype=np.int32)
    nxt = np.empty(64, dtype=np.int32)
    n0 = widths[0]
    for i in range(n0):
        q = _round_away(x[i] / in_scale) + in_zp
        buf[i] = min(max(int(q), -128), 127)
    zp_in = in_zp
    w_off = 0
    b_off = 0
    n_layers = widths.shape[0] - 1
    for k in range(n_layers):
        m = widths[k]
        n = widths[k + 1]
        last = k == n_layers - 1
        for j in range(n):
            acc = np.int64(bias[b_off + j])
            row = w_off + j * m
            for i in range(m):
                acc += np.int64(w[row + i] - wzp[k]) * np.int64(buf[i] - zp_in)
            y = _round_away(acc * mult[k]) + azp[k]
            y = min(max(int(y), -128), 127)
            if not last and y < azp[k]:
                y = azp[k]
            nxt[j] = y
        for j in range(n):
            buf[j] = nxt[j]
        w_off += n * m
        b_off += n
        zp_in = azp[k]
    for j in range(widths[n_layers]):
        out[j] = (buf[j] - zp_in) * out_scale


def quantized_forward(qnet: QuantizedMlp, z_norm) -> np.ndarray:
    """Integer-arithmetic inference for one or many normalized states."""
    Z = np.asarray(z_norm, dtype=float)
    single = Z.ndim == 1
    Z = np.atleast_2d(Z)
    packed = qnet.packed()
    if max(packed[0]) > 64:
        raise ValueError("kernel supports layer widths up to 64")
    out = np.empty((Z.shape[0], packed[0][-1]))
    for i in range(Z.shape[0]):
        _qforward(np.ascontiguousarray(Z[i]), *packed, out[i])
    return out[0] if single else out


def fake_quant_forward(qnet: QuantizedMlp, z_norm) -> np.ndarray:
    """Float re-enactment of :func:`quantized_forward` (bit-exactness oracle).

    Uses float64 matrix products over integer-valued arrays, which are exact
    at these magnitudes, and rounds at the same points as the kernel.
    """
    Z = np.atleast_2d(np.asarray(z_norm, dtype=float))
    q = np.clip(round_half_away(Z / qnet.input_qp.scale) + qnet.input_qp.zero_point,
                QMIN, QMAX)
    zp = qnet.input_qp.zero_point
    mults = qnet.multipliers()
    for k, layer in enumerate(qnet.layers):
        Wf = layer.weights.astype(float) - layer.weight_qp.zero_point
        acc = (q - zp) @ Wf.T + layer.bias.astype(float)
        y = np.clip(round_half_away(acc * mults[k]) + layer.act_qp.zero_point,
                    QMIN, QMAX)
        if k < len(qnet.layers) - 1:
            y = np.maximum(y, layer.act_qp.zero_point)
        q, zp = y, layer.act_qp.zero_point
    out = (q - zp) * qnet.output_qp.scale
    return out[0] if np.ndim(z_norm) == 1 else out


# -- file format ------------------------------------------------------------

def save_quantized(qnet: QuantizedMlp, path):
    """Little-endian layout::

        magic    8 bytes  b"MPFCQN1\\0"
        L+1      <u4      number of widths, then L+1 x <u4 widths
        norm     7 x <f8 means, 7 x <f8 deviations
        input    <f8 scale, <i4 zero point
        output   <f8 scale, <i4 zero point
        per layer (n_out x n_in):
                 <f8 weight scale, <i4 weight zero point,
                 <f8 activation scale, <i4 activation zero point,
                 n_out*n_in int8 weights (row-major), n_out <i4 biases
    """
    widths = qnet.widths
    parts = [FILE_MAGIC, struct.pack("<I", len(widths)),
             struct.pack(f"<{len(widths)}I", *widths),
             np.asarray(qnet.stats.mu, "<f8").tobytes(),
             np.asarray(qnet.stats.sigma, "<f8").tobytes(),
             struct.pack("<di", qnet.input_qp.scale, qnet.input_qp.zero_point),
             struct.pack("<di", qnet.output_qp.scale, qnet.output_qp.zero_point)]
    for l in qnet.layers:
        parts.append(struct.pack("<didi", l.weight_qp.scale, l.weight_qp.zero_point,
                                 l.act_qp.scale, l.act_qp.zero_point))
        parts.append(np.ascontiguousarray(l.weights, np.int8).tobytes())
        parts.append(np.asarray(l.bias, "<i4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_quantized(path) -> QuantizedMlp:
    raw = Path(path).read_bytes()
    if raw[:8] != FILE_MAGIC:
        raise ValueError(f"{path}: not an MPFCQN1 file")
    pos = 8
    (nw,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    widths = struct.unpack_from(f"<{nw}I", raw, pos)
    pos += 4 * nw
    mu = np.frombuffer(raw, "<f8", 7, pos).astype(float)
    sigma = np.frombuffer(raw, "<f8", 7, pos + 56).astype(float)
    pos += 112
    in_s, in_z = struct.unpack_from("<di", raw, pos)
    pos += 12
    out_s, out_z = struct.unpack_from("<di", raw, pos)
    pos += 12
    layers = []
    for m, n in zip(widths[:-1], widths[1:]):
        ws, wz, as_, az = struct.unpack_from("<didi", raw, pos)
        pos += 24
        W = np.frombuffer(raw, np.int8, n * m, pos).reshape(n, m).copy()
        pos += n * m
        b = np.frombuffer(raw, "<i4", n, pos).astype(np.int32)
        pos += 4 * n
        layers.append(QuantLayer(W, b, QuantParams(ws, wz), QuantParams(as_, az)))
    if pos != len(raw):
        raise ValueError(f"{path}: trailing or missing bytes")
    qnet = QuantizedMlp(QuantParams(in_s, in_z), layers, NormStats(mu, sigma))
    if qnet.output_qp != QuantParams(out_s, out_z):
        raise ValueError(f"{path}: output parameters disagree with last layer")
    return qnet
