"""Reference path: an ellipse parametrized by the path parameter theta."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels as K


class PathPoint(NamedTuple):
    x: float
    y: float
    heading: float
    theta: float


class PathError(NamedTuple):
    tangential: float
    normal: float


def _check_theta(theta):
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"path parameter must be finite, got {theta!r}")
    return theta


@dataclass(frozen=True)
class EllipsePath:
    """``p(theta) = (a cos theta, b sin theta)`` traversed counter-clockwise.

    The heading is the unwrapped tangent angle, continuous in theta and
    growing by exactly 2 pi per lap, with ``heading(0) = pi/2``.
    """

    semi_axis_x: float = 0.1
    semi_axis_y: float = 2.0

    def __post_init__(self):
        if not (self.semi_axis_x > 0 and self.semi_axis_y > 0):
            raise ValueError("ellipse semi-axes must be strictly positive")

    @property
    def axes(self) -> tuple[float, float]:
        return self.semi_axis_x, self.semi_axis_y

    def __call__(self, theta) -> PathPoint:
        theta = _check_theta(theta)
        a, b = self.axes
        return PathPoint(a * math.cos(theta), b * math.sin(theta),
                         K.ellipse_heading(a, b, theta), theta)

    def heading(self, theta):
        """Vectorized unwrapped heading."""
        a, b = self.axes
        theta = np.asarray(theta, dtype=float)
        st, ct = np.sin(theta), np.cos(theta)
        rel = np.arctan2((a - b) * st * ct, a * st**2 + b * ct**2)
        return theta + 0.5 * np.pi + rel

    def position(self, theta):
        a, b = self.axes
        theta = np.asarray(theta, dtype=float)
        return np.stack([a * np.cos(theta), b * np.sin(theta)], axis=-1)

    def derivatives(self, theta) -> tuple[float, float, float, float]:
        """``(p_x', p_y', p_x'', p_y'')`` with respect to theta."""
        theta = _check_theta(theta)
        a, b = self.axes
        st, ct = math.sin(theta), math.cos(theta)
        return -a * st, b * ct, -a * ct, -b * st

    def reference_inputs(self, theta, v) -> tuple[float, float]:
        """Flatness feed-forward ``(s_r, omega_r)`` for path speed ``v``."""
        theta = _check_theta(theta)
        v = float(v)
        if not v >= 0:
            raise ValueError(f"path speed must be non-negative, got {v!r}")
        a, b = self.axes
        return (v * K.ellipse_speed(a, b, theta),
                v * K.ellipse_curvature_rate(a, b, theta))

    def error_components(self, q, theta) -> PathError:
        theta = _check_theta(theta)
        pt = self(theta)
        t, n = path_frame(pt.heading)
        ex = float(q[0]) - pt.x
        ey = float(q[1]) - pt.y
        return PathError(ex * t[0] + ey * t[1], ex * n[0] + ey * n[1])


DEFAULT_PATH = EllipsePath()


def eval_path(theta, path: EllipsePath = DEFAULT_PATH) -> PathPoint:
    return path(theta)


def path_derivatives(theta, path: EllipsePath = DEFAULT_PATH):
    return path.derivatives(theta)


def reference_inputs(theta, v, path: EllipsePath = DEFAULT_PATH):
    return path.reference_inputs(theta, v)


def path_frame(heading: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit tangent and left normal for a heading angle."""
    c, s = math.cos(heading), math.sin(heading)
    return np.array([c, s]), np.array([-s, c])


def error_components(q, theta, path: EllipsePath = DEFAULT_PATH) -> PathError:
    return path.error_components(q, theta)


def cartesian_error(q, theta, path: EllipsePath = DEFAULT_PATH) -> float:
    pt = path(theta)
    return math.hypot(float(q[0]) - pt.x, float(q[1]) - pt.y)
