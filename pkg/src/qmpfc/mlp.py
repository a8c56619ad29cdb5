"""Fully connected ReLU network approximating the MPFC feedback.

Hidden layers use ReLU, the output layer is affine. Inputs and outputs are
the normalized state and input vectors; the normalization statistics are
stored with the parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .dataset import COLUMNS, NormStats, compute_stats

log = logging.getLogger(__name__)

HIDDEN_WIDTHS = (48, 16, 24, 16, 16, 40, 24, 16, 24)
DEFAULT_WIDTHS = (4, *HIDDEN_WIDTHS, 3)
FILE_HEADER = "mpfc-mlp v1"


class TrainingError(RuntimeError):
    pass


def param_count(widths) -> int:
    """Number of weights and biases of a network with the given widths."""
    widths = list(widths)
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError("need at least an input and an output layer")
    return sum(n * (1 + m) for m, n in zip(widths[:-1], widths[1:]))


@dataclass
class MlpParams:
    weights: list
    biases: list
    stats: NormStats | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {k}: bias/weight shapes disagree")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input width mismatch")

    @property
    def widths(self) -> tuple:
        return (self.weights[0].shape[1], *(W.shape[0] for W in self.weights))

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights],
                         [b.copy() for b in self.biases], self.stats)


def init_params(widths, rng) -> MlpParams:
    """He-uniform weights, zero biases."""
    weights, biases = [], []
    for m, n in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / m)
        weights.append(rng.uniform(-limit, limit, size=(n, m)))
        biases.append(np.zeros(n))
    return MlpParams(weights, biases)


def forward(params: MlpParams, z_norm) -> np.ndarray:
    """Network output for one normalized state or a batch of them."""
    h = np.asarray(z_norm, dtype=float)
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W.T + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


def hidden_activations(params: MlpParams, z_norm) -> list:
    h = np.asarray(z_norm, dtype=float)
    acts = []
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.maximum(h @ W.T + b, 0.0)
        acts.append(h)
    return acts


def mse(params: MlpParams, X, Y) -> float:
    """Mean over samples and output components of the squared residual."""
    X = np.atleast_2d(X)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    return float(np.mean((forward(params, X) - Y) ** 2))


def loss_and_grad(params: MlpParams, X, Y):
    """MSE and its gradient by backpropagation (lists aligned with params)."""
    acts = [X]
    pre = []
    h = X
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ W.T + b
        pre.append(a)
        h = np.maximum(a, 0.0) if k < last else a
        acts.append(h)
    resid = h - Y
    loss = float(np.mean(resid**2))
    delta = 2.0 * resid / resid.size
    gW = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in range(last, -1, -1):
        gW[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ params.weights[k]) * (pre[k - 1] > 0)
    return loss, gW, gb


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 4.5e-4
    batch_size: int = 1024
    epochs: int = 30
    seed: int = 0
    validation_fraction: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # decoupled (AdamW-style) decay and a hard bound on weight magnitudes;
    # both keep per-tensor int8 ranges tight
    weight_decay: float = 0.0
    weight_clip: float = 0.0
    # cosine annealing of the step size down to ``lr_floor * learning_rate``
    # over all epochs; 1 keeps it constant
    lr_floor: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be >= 1")
        if not 0 < self.lr_floor <= 1:
            raise ValueError("lr_floor must lie in (0, 1]")


@dataclass
class TrainHistory:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1


def train(X, Y, widths=DEFAULT_WIDTHS, cfg: TrainConfig = TrainConfig()):
    """Mini-batch Adam on the MSE; returns ``(params, history)``.

    ``X``/``Y`` are normalized states and inputs. The parameters with the
    lowest validation MSE are returned. Everything is drawn from one
    generator seeded with ``cfg.seed``, so equal seeds give equal results.
    """
    X = check_matrix(X, widths[0], "X")
    Y = check_matrix(Y, widths[-1], "Y")
    if len(X) != len(Y) or len(X) == 0:
        raise ValueError("X and Y must be non-empty and equally long")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(X))
    n_val = max(1, int(round(cfg.validation_fraction * len(X)))) if len(X) > 1 else 0
    val, tr = perm[:n_val], perm[n_val:]
    if n_val == 0:
        val = tr
    Xtr, Ytr, Xval, Yval = X[tr], Y[tr], X[val], Y[val]

    params = init_params(widths, rng)
    tensors = params.weights + params.biases
    m = [np.zeros_like(t) for t in tensors]
    v = [np.zeros_like(t) for t in tensors]
    step = 0
    best, best_val = params.copy(), np.inf
    hist = TrainHistory()
    b1, b2 = cfg.beta1, cfg.beta2
    for epoch in range(cfg.epochs):
        frac = epoch / max(cfg.epochs - 1, 1)
        lr = cfg.learning_rate * (cfg.lr_floor + (1 - cfg.lr_floor)
                                  * 0.5 * (1 + np.cos(np.pi * frac)))
        order = rng.permutation(len(Xtr))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, gW, gb = loss_and_grad(params, Xtr[idx], Ytr[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, step {step}")
            total += loss * len(idx)
            step += 1
            lr_t = lr * np.sqrt(1 - b2**step) / (1 - b1**step)
            for t, g, mt, vt in zip(tensors, gW + gb, m, v):
                mt *= b1
                mt += (1 - b1) * g
                vt *= b2
                vt += (1 - b2) * g * g
                t -= lr_t * mt / (np.sqrt(vt) + cfg.eps)
            if cfg.weight_decay:
                for W in params.weights:
                    W *= 1 - lr * cfg.weight_decay
            if cfg.weight_clip:
                for W in params.weights:
                    np.clip(W, -cfg.weight_clip, cfg.weight_clip, out=W)
        val_mse = mse(params, Xval, Yval)
        hist.train_mse.append(total / len(Xtr))
        hist.val_mse.append(val_mse)
        if val_mse < best_val:
            best_val, best, hist.best_epoch = val_mse, params.copy(), epoch
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            log.info("epoch %d: train %.3e val %.3e", epoch,
                     hist.train_mse[-1], val_mse)
    return best, hist


class MlpRegressor(RegressorMixin, BaseEstimator):
    """Raw states in, raw inputs out; standardization is fitted internally.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
    learning_rate, batch_size, epochs, validation_fraction, random_state,
    weight_decay, weight_clip, lr_floor
        Forwarded to :class:`TrainConfig`.
    """

    def __init__(self, hidden_layer_sizes=HIDDEN_WIDTHS, learning_rate=4.5e-4,
                 batch_size=1024, epochs=30, validation_fraction=0.05,
                 random_state=0, weight_decay=0.0, weight_clip=0.0, lr_floor=1.0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.weight_decay = weight_decay
        self.weight_clip = weight_clip
        self.lr_floor = lr_floor

    def fit(self, X, y):
        X = check_matrix(X, 4)
        y = check_matrix(y, 3, "y")
        stats = compute_stats(np.hstack([X, y]))
        cfg = TrainConfig(self.learning_rate, self.batch_size, self.epochs,
                          self.random_state, self.validation_fraction,
                          weight_decay=self.weight_decay, weight_clip=self.weight_clip,
                          lr_floor=self.lr_floor)
        widths = (4, *self.hidden_layer_sizes, 3)
        params, self.history_ = train(stats.normalize_states(X),
                                      stats.normalize_inputs(y), widths, cfg)
        params.stats = stats
        self.params_ = params
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_matrix(X, 4)
        stats = self.params_.stats
        return stats.denormalize_inputs(
            forward(self.params_, stats.normalize_states(X)))

    @classmethod
    def from_params(cls, params: MlpParams):
        est = cls(hidden_layer_sizes=params.widths[1:-1])
        est.params_ = params
        return est


def _fmt(values):
    return " ".join(f"{x:.17g}" for x in np.ravel(values))


def save_model(params: MlpParams, path):
    """Text format: header, widths, 7 ``norm`` lines, then per layer a
    ``bias`` line and a row-major ``weights`` line."""
    if params.stats is None:
        raise ValueError("model has no normalization statistics")
    lines = [FILE_HEADER, "widths " + " ".join(map(str, params.widths))]
    for name, m, s in zip(COLUMNS, params.stats.mu, params.stats.sigma):
        lines.append(f"norm {name} {m:.17g} {s:.17g}")
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"layer {k + 1}")
        lines.append("bias " + _fmt(b))
        lines.append("weights " + _fmt(W))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> MlpParams:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != FILE_HEADER:
        raise ValueError(f"{path}: not an {FILE_HEADER!r} file")
    it = iter(lines[1:])
    key, *rest = next(it).split()
    if key != "widths":
        raise ValueError(f"{path}: expected widths line")
    widths = [int(x) for x in rest]
    mu, sigma = [], []
    for name in COLUMNS:
        key, got, m, s = next(it).split()
        if key != "norm" or got != name:
            raise ValueError(f"{path}: expected norm line for {name}")
        mu.append(float(m))
        sigma.append(float(s))
    weights, biases = [], []
    for m, n in zip(widths[:-1], widths[1:]):
        next(it)
        key, *vals = next(it).split()
        biases.append(np.array(vals, dtype=float))
        key2, *vals = next(it).split()
        if key != "bias" or key2 != "weights":
            raise ValueError(f"{path}: malformed layer block")
        weights.append(np.array(vals, dtype=float).reshape(n, m))
    return MlpParams(weights, biases, NormStats(mu, sigma))
