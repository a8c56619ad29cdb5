"""Training data from a cuboid corridor around the path.

Every record is a 7-vector ``(qx, qy, phi, theta, s, omega, v)``: an
extended state near the path and the first MPFC input computed for it.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .ocp import OcpConfig, label_states

log = logging.getLogger(__name__)

COLUMNS = ("qx", "qy", "phi", "theta", "s", "omega", "v")
BINARY_MAGIC = b"MPFCDS1\x00"
SIGMA_FLOOR = 1e-9


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class CorridorConfig:
    """Grid of ``n_length x n_width x n_height`` offsets around each of
    ``n_theta`` equidistant path points in ``[0, 2 pi)``.

    Length is measured along the tangent, width along the normal and
    height is an offset of the heading angle.
    """

    n_theta: int = 4000
    half_width: float = 0.01
    half_length: float = 0.1
    half_height: float = math.pi / 3
    n_width: int = 5
    n_length: int = 5
    n_height: int = 40

    def __post_init__(self):
        if min(self.n_theta, self.n_width, self.n_length, self.n_height) < 1:
            raise ValueError("all grid counts must be >= 1")
        if min(self.half_width, self.half_length, self.half_height) < 0:
            raise ValueError("corridor half-dimensions must be >= 0")

    @property
    def n_corridor(self) -> int:
        return self.n_width * self.n_length * self.n_height

    @property
    def thetas(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_theta) / self.n_theta


def _axis(half, n):
    return np.zeros(1) if n == 1 else np.linspace(-half, half, n)


def corridor_offsets(cfg: CorridorConfig) -> np.ndarray:
    """``(N_c, 3)`` offsets ``(p_t, p_n, p_o)``, symmetric about zero."""
    t, n, o = np.meshgrid(_axis(cfg.half_length, cfg.n_length),
                          _axis(cfg.half_width, cfg.n_width),
                          _axis(cfg.half_height, cfg.n_height), indexing="ij")
    return np.stack([t.ravel(), n.ravel(), o.ravel()], axis=1)


def corridor_points(theta_i, cfg: CorridorConfig, path=None) -> np.ndarray:
    """Poses ``(qx, qy, phi)`` of the corridor around ``p(theta_i)``."""
    path = path if path is not None else OcpConfig().path
    pt = path(theta_i)
    off = corridor_offsets(cfg)
    c, s = math.cos(pt.heading), math.sin(pt.heading)
    poses = np.empty((off.shape[0], 3))
    poses[:, 0] = pt.x + off[:, 0] * c - off[:, 1] * s
    poses[:, 1] = pt.y + off[:, 0] * s + off[:, 1] * c
    poses[:, 2] = pt.heading + off[:, 2]
    return poses


def corridor_states(cfg: CorridorConfig, path=None) -> np.ndarray:
    """All ``N_p * N_c`` extended states, ordered by theta then offset."""
    blocks = []
    for th in cfg.thetas:
        poses = corridor_points(th, cfg, path)
        blocks.append(np.column_stack([poses, np.full(len(poses), th)]))
    return np.concatenate(blocks)


@dataclass
class TrainingSet:
    states: np.ndarray
    inputs: np.ndarray
    n_failed: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 4)
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, 3)
        if len(self.states) != len(self.inputs):
            raise ValueError("states and inputs differ in length")

    def __len__(self):
        return len(self.states)

    @property
    def matrix(self) -> np.ndarray:
        """Records as rows, ``(N_T, 7)``."""
        return np.hstack([self.states, self.inputs])

    @classmethod
    def from_matrix(cls, M, n_failed=0):
        M = check_matrix(M, 7, "dataset")
        return cls(M[:, :4].copy(), M[:, 4:].copy(), n_failed)


def generate_dataset(ocp_cfg: OcpConfig = OcpConfig(),
                     corridor_cfg: CorridorConfig = CorridorConfig(),
                     chunk: int = 5000,
                     max_failure_rate: float = 0.01) -> TrainingSet:
    """Label every corridor state with the first MPFC input (cold start).

    Samples whose solve produced a non-finite cost are dropped; more than
    ``max_failure_rate`` of them raises :class:`DatasetError`.
    """
    Z = corridor_states(corridor_cfg, ocp_cfg.path)
    W = np.empty((len(Z), 3))
    status = np.empty(len(Z), dtype=np.int64)
    for start in range(0, len(Z), chunk):
        stop = min(start + chunk, len(Z))
        W[start:stop], status[start:stop] = label_states(Z[start:stop], ocp_cfg)
        log.info("labeled %d/%d states", stop, len(Z))
    failed = status == 3
    n_failed = int(failed.sum())
    if n_failed:
        log.warning("%d solver failures dropped", n_failed)
    if n_failed > max_failure_rate * len(Z):
        raise DatasetError(
            f"{n_failed} of {len(Z)} labels failed (> {max_failure_rate:.0%})")
    return TrainingSet(Z[~failed], W[~failed], n_failed)


# -- normalization ----------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if mu.shape != (7,) or sigma.shape != (7,):
            raise ValueError("NormStats needs 7 means and 7 deviations")
        if np.any(sigma <= 0):
            raise ValueError("standard deviations must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    def normalize_states(self, Z):
        return normalize(Z, self, 0)

    def denormalize_inputs(self, W_bar):
        return denormalize(W_bar, self, 4)

    def normalize_inputs(self, W):
        return normalize(W, self, 4)


def compute_stats(ts) -> NormStats:
    """Row-wise mean and population standard deviation of the data matrix.

    Deviations below ``1e-9`` are replaced by 1 so constant rows stay finite.
    """
    M = ts.matrix if isinstance(ts, TrainingSet) else np.asarray(ts, float)
    if M.ndim != 2 or M.shape[0] < 1:
        raise ValueError("cannot compute statistics of an empty dataset")
    mu = M.mean(axis=0)
    sigma = M.std(axis=0)
    sigma = np.where(sigma < SIGMA_FLOOR, 1.0, sigma)
    return NormStats(mu, sigma)


def normalize(x, stats: NormStats, offset: int = 0):
    """``(x - mu) / sigma`` using rows ``offset .. offset + x.shape[-1]``."""
    x = np.asarray(x, dtype=float)
    sl = slice(offset, offset + x.shape[-1])
    return (x - stats.mu[sl]) / stats.sigma[sl]


def denormalize(x_bar, stats: NormStats, offset: int = 0):
    x_bar = np.asarray(x_bar, dtype=float)
    sl = slice(offset, offset + x_bar.shape[-1])
    return x_bar * stats.sigma[sl] + stats.mu[sl]


class CorridorScaler(TransformerMixin, BaseEstimator):
    """Standardizes 7-column records; the fitted ``stats_`` travel with
    the trained network."""

    def fit(self, X, y=None):
        self.stats_ = compute_stats(check_matrix(X, 7))
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return normalize(check_matrix(X, 7), self.stats_)

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        return denormalize(check_matrix(X, 7), self.stats_)


# -- files ------------------------------------------------------------------

def write_dataset_csv(ts: TrainingSet, path):
    path = Path(path)
    np.savetxt(path, ts.matrix, delimiter=",", fmt="%.17g",
               header=",".join(COLUMNS), comments="")


def read_dataset_csv(path) -> TrainingSet:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
    if header != ",".join(COLUMNS):
        raise DatasetError(f"{path}: unexpected header {header!r}")
    M = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TrainingSet.from_matrix(M)


def write_dataset_binary(ts: TrainingSet, path):
    """Packed layout: 8-byte magic ``MPFCDS1\\0``, ``<u8`` row count,
    ``<u8`` column count (7), then row-major ``<f8`` values."""
    M = np.ascontiguousarray(ts.matrix, dtype="<f8")
    with Path(path).open("wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<QQ", *M.shape))
        fh.write(M.tobytes())


def read_dataset_binary(path) -> TrainingSet:
    raw = Path(path).read_bytes()
    if raw[:8] != BINARY_MAGIC:
        raise DatasetError(f"{path}: not an MPFCDS1 file")
    rows, cols = struct.unpack_from("<QQ", raw, 8)
    if cols != 7 or len(raw) != 24 + 8 * rows * cols:
        raise DatasetError(f"{path}: truncated or malformed payload")
    M = np.frombuffer(raw, dtype="<f8", offset=24).reshape(rows, cols)
    return TrainingSet.from_matrix(M.astype(float))


def write_stats_csv(stats: NormStats, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "mu", "sigma"])
        for name, m, s in zip(COLUMNS, stats.mu, stats.sigma):
            w.writerow([name, repr(float(m)), repr(float(s))])


def read_stats_csv(path) -> NormStats:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if [r["name"] for r in rows] != list(COLUMNS):
        raise DatasetError(f"{path}: expected rows {COLUMNS}")
    return NormStats([float(r["mu"]) for r in rows],
                     [float(r["sigma"]) for r in rows])
