"""Unicycle motion model and pose measurement models with analytic Jacobians.

A pose is a length-3 array ``(x, y, phi)`` with ``phi`` in radians, wrapped to
``(-pi, pi]``.  Relative measurements are expressed in the observer's body
frame.  Jacobians of relative measurements follow the sign convention of the
stacked measurement row ``[..., -Ht_a, ..., +Ht_b, ...]``, i.e. ``Ht_a`` is the
*negative* derivative with respect to the observer pose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .numerics import InvalidValueError, ensure_pd, wrap_angle

DEG = math.pi / 180.0


class UnicyclePose(NamedTuple):
    x: float
    y: float
    phi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi], dtype=float)


def _finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise InvalidValueError(f"non-finite input {v!r}")


def unicycle_step(pose, v: float, omega: float, dt: float) -> np.ndarray:
    """Advance a pose one Euler step of the unicycle kinematics."""
    x, y, phi = (float(p) for p in pose)
    _finite(x, y, phi, v, omega, dt)
    if dt <= 0.0:
        raise InvalidValueError(f"dt must be positive, got {dt}")
    return np.array([
        x + v * math.cos(phi) * dt,
        y + v * math.sin(phi) * dt,
        wrap_angle(phi + omega * dt),
    ])


def motion_jacobians(pose, v_measured: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """State Jacobian ``F`` (3x3) and noise-input matrix ``G`` (3x2).

    ``G`` maps the odometry noise ``(eta_v, eta_omega)`` into the state.
    """
    phi = float(pose[2])
    _finite(phi, v_measured, dt)
    c, s = math.cos(phi), math.sin(phi)
    F = np.array([
        [1.0, 0.0, -v_measured * s * dt],
        [0.0, 1.0, v_measured * c * dt],
        [0.0, 0.0, 1.0],
    ])
    G = np.array([
        [c * dt, 0.0],
        [s * dt, 0.0],
        [0.0, dt],
    ])
    return F, G


def relative_pose_h(observer, target) -> np.ndarray:
    """Pose of ``target`` expressed in the body frame of ``observer``."""
    xo, yo, po = (float(p) for p in observer)
    xt, yt, pt = (float(p) for p in target)
    c, s = math.cos(po), math.sin(po)
    dx, dy = xt - xo, yt - yo
    return np.array([c * dx + s * dy, -s * dx + c * dy, wrap_angle(pt - po)])


def relative_pose_jacobians(observer, target) -> tuple[np.ndarray, np.ndarray]:
    """``(Ht_a, Ht_b)`` with ``Ht_a = -dh/d(observer)`` and ``Ht_b = dh/d(target)``."""
    xo, yo, po = (float(p) for p in observer)
    xt, yt = float(target[0]), float(target[1])
    c, s = math.cos(po), math.sin(po)
    dx, dy = xt - xo, yt - yo
    h1 = c * dx + s * dy
    h2 = -s * dx + c * dy
    # dh/d(observer) = [[-c, -s, h2], [s, -c, -h1], [0, 0, -1]]
    Ht_a = np.array([
        [c, s, -h2],
        [-s, c, h1],
        [0.0, 0.0, 1.0],
    ])
    Ht_b = np.array([
        [c, s, 0.0],
        [-s, c, 0.0],
        [0.0, 0.0, 1.0],
    ])
    return Ht_a, Ht_b


ABSOLUTE_POSITION_JACOBIAN = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def absolute_position_h(pose) -> np.ndarray:
    return np.array([float(pose[0]), float(pose[1])])


def absolute_position_jacobian(pose=None) -> np.ndarray:
    return ABSOLUTE_POSITION_JACOBIAN.copy()


@dataclass(frozen=True)
class OdometryNoise:
    """Odometry noise: speed std is ``sigma_v_frac * |V|``, turn-rate std ``sigma_omega`` (rad/s)."""

    sigma_v_frac: float
    sigma_omega: float


def sample_noisy_odometry(rng: np.random.Generator, v_true: float, omega_true: float,
                          params: OdometryNoise) -> tuple[float, float]:
    eta = rng.standard_normal(2)
    v_meas = v_true + params.sigma_v_frac * abs(v_true) * eta[0]
    omega_meas = omega_true + params.sigma_omega * eta[1]
    return float(v_meas), float(omega_meas)


def odometry_noise_cov(params: OdometryNoise, v_measured: float) -> np.ndarray:
    """Per-step control-space noise covariance, built from the *measured* speed."""
    sv = params.sigma_v_frac * abs(v_measured)
    return np.diag([sv * sv, params.sigma_omega ** 2])


@dataclass
class UnicycleAgent:
    """Motion model of one agent: ``x(k+1) = f(x, u) + g(x) eta``.

    The control ``u`` is the measured ``(v, omega)`` pair.
    """

    uid: int
    noise: OdometryNoise
    dt: float
    state_dim: int = field(default=3, init=False)
    input_dim: int = field(default=2, init=False)
    noise_dim: int = field(default=2, init=False)

    def __post_init__(self):
        if self.uid < 1:
            raise ValueError(f"agent uid must be >= 1, got {self.uid}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def f(self, x, u) -> np.ndarray:
        return unicycle_step(x, u[0], u[1], self.dt)

    def jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        return motion_jacobians(x, u[0], self.dt)

    def Q(self, u) -> np.ndarray:
        return odometry_noise_cov(self.noise, u[0])

    def propagate(self, x, P, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Propagate a pose estimate. Returns ``(x_minus, P_minus, F)``."""
        F, G = self.jacobians(x, u)
        Gq = G @ self.Q(u) @ G.T
        P_minus = F @ P @ F.T + Gq
        return self.f(x, u), 0.5 * (P_minus + P_minus.T), F


@dataclass(frozen=True, eq=False)
class RelativePoseModel:
    """Relative pose measurement ``z_ab = h(x_a, x_b) + nu_a`` with covariance ``R``."""

    R: np.ndarray
    kind: str = "relative"
    dim: int = 3

    def __post_init__(self):
        ensure_pd(self.R)

    def h(self, xa, xb) -> np.ndarray:
        return relative_pose_h(xa, xb)

    def jacobians(self, xa, xb) -> tuple[np.ndarray, np.ndarray]:
        return relative_pose_jacobians(xa, xb)

    def residual(self, z, xa, xb) -> np.ndarray:
        r = np.asarray(z, dtype=float) - self.h(xa, xb)
        r[2] = wrap_angle(r[2])
        return r


@dataclass(frozen=True, eq=False)
class AbsolutePositionModel:
    """Absolute position fix ``z_aa = (x, y) + nu_bar_a``; ``Ht_b`` is zero."""

    R: np.ndarray
    kind: str = "absolute"
    dim: int = 2

    def __post_init__(self):
        ensure_pd(self.R)

    def h(self, xa, xb=None) -> np.ndarray:
        return absolute_position_h(xa)

    def jacobians(self, xa, xb=None) -> tuple[np.ndarray, np.ndarray]:
        return -ABSOLUTE_POSITION_JACOBIAN, np.zeros((2, 3))

    def residual(self, z, xa, xb=None) -> np.ndarray:
        return np.asarray(z, dtype=float) - self.h(xa)


def linearize_measurement(z, xa, xb, absolute: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual and ``(Ht_a, Ht_b)`` for a relative (or absolute) measurement.

    The heading component of a relative-pose residual is wrapped.
    """
    z = np.asarray(z, dtype=float)
    if absolute:
        return z - absolute_position_h(xa), -ABSOLUTE_POSITION_JACOBIAN, np.zeros((2, 3))
    r = z - relative_pose_h(xa, xb)
    r[2] = wrap_angle(r[2])
    Ht_a, Ht_b = relative_pose_jacobians(xa, xb)
    return r, Ht_a, Ht_b


def pose_noise_cov(sx: float, sy: float, sphi: float | None = None) -> np.ndarray:
    """Diagonal measurement covariance from standard deviations."""
    stds = [sx, sy] if sphi is None else [sx, sy, sphi]
    return np.diag(np.square(stds))
