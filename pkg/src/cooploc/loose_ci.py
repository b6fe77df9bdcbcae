"""Loosely coupled baseline: per-agent EKF plus Covariance Intersection.

Each agent dead-reckons its own pose.  When agent ``a`` measures agent ``b``
it composes its own estimate with the relative pose, relays the resulting
pose and covariance to ``b``, and ``b`` fuses it with Covariance Intersection.
Only the landmark changes; the observer gains nothing from its measurement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import wire
from .models import UnicycleAgent
from .numerics import ensure_pd, spd_inverse, symmetrize, wrap_angle

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class CiAgent:
    uid: int
    x: np.ndarray
    P: np.ndarray

    def propagate(self, control, model: UnicycleAgent) -> "CiAgent":
        x, P, _ = model.propagate(self.x, self.P, control)
        return CiAgent(self.uid, x, P)


@dataclass
class CiRelay:
    """Pose estimate of ``landmark`` computed and sent by ``observer``."""

    observer: int
    landmark: int
    step: int
    x: np.ndarray
    P: np.ndarray

    def encode(self) -> bytes:
        return wire.encode(self.observer, self.landmark, self.step, [self.x, self.P])

    @classmethod
    def decode(cls, buf: bytes) -> "CiRelay":
        obs, lm, step, arr = wire.decode(buf)
        return cls(obs, lm, step, arr[0].ravel(), arr[1])


def compose(pose, rel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SE(2) composition ``pose (+) rel`` with Jacobians wrt both arguments."""
    x, y, phi = (float(p) for p in pose)
    dx, dy, dphi = (float(p) for p in rel)
    c, s = math.cos(phi), math.sin(phi)
    out = np.array([x + c * dx - s * dy, y + s * dx + c * dy, wrap_angle(phi + dphi)])
    J1 = np.array([
        [1.0, 0.0, -s * dx - c * dy],
        [0.0, 1.0, c * dx - s * dy],
        [0.0, 0.0, 1.0],
    ])
    J2 = np.array([
        [c, -s, 0.0],
        [s, c, 0.0],
        [0.0, 0.0, 1.0],
    ])
    return out, J1, J2


def relay_estimate(observer: CiAgent, z_relpose, R) -> tuple[np.ndarray, np.ndarray]:
    """Landmark pose and first-order covariance from the observer's view."""
    z = np.asarray(z_relpose, dtype=float)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(observer.x))):
        raise ValueError("non-finite relay inputs")
    x_l, J1, J2 = compose(observer.x, z)
    P_l = J1 @ observer.P @ J1.T + J2 @ np.asarray(R, dtype=float) @ J2.T
    return x_l, symmetrize(P_l)


def ci_covariance(I1: np.ndarray, I2: np.ndarray, omega: float) -> np.ndarray:
    return np.linalg.inv(omega * I1 + (1.0 - omega) * I2)


def _trace_objective(I1: np.ndarray, I2: np.ndarray):
    """``omega -> trace(inv(omega I1 + (1 - omega) I2))`` without per-call inversion.

    With ``W^T I1 W = diag(d)`` and ``W^T I2 W = I`` the trace is
    ``sum_k |w_k|^2 / (omega d_k + 1 - omega)``.
    """
    d, W = scipy.linalg.eigh(I1, I2)
    norms = [float(v) for v in np.sum(W * W, axis=0)]
    d = [float(v) for v in d]

    def trace(omega: float) -> float:
        return sum(n / (omega * dk + 1.0 - omega) for n, dk in zip(norms, d))

    return trace


def golden_section(fun, lo: float = 0.0, hi: float = 1.0, tol: float = 1e-8) -> float:
    """Minimize a unimodal scalar function on ``[lo, hi]``."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fun(d)
    best = min((fc, c), (fd, d), (fun(lo), lo), (fun(hi), hi))
    return best[1]


def ci_fuse(x1, P1, x2, P2, heading_index: int | None = 2, tol: float = 1e-9):
    """Covariance Intersection with the weight minimizing ``trace(P)``.

    Returns ``(x, P, omega)``.  ``omega`` weights the first estimate.  When
    ``heading_index`` is set, that component of ``x2`` is re-expressed as a
    wrapped offset from ``x1`` before fusing.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float).copy()
    ensure_pd(P1)
    ensure_pd(P2)
    I1, I2 = spd_inverse(P1), spd_inverse(P2)
    if heading_index is not None:
        x2[heading_index] = x1[heading_index] + wrap_angle(x2[heading_index] - x1[heading_index])
    omega = golden_section(_trace_objective(I1, I2), tol=tol)
    P = symmetrize(ci_covariance(I1, I2, omega))
    x = P @ (omega * I1 @ x1 + (1.0 - omega) * I2 @ x2)
    if heading_index is not None:
        x[heading_index] = wrap_angle(x[heading_index])
    return x, P, omega


def landmark_fuse(landmark: CiAgent, relay: CiRelay) -> CiAgent:
    x, P, _ = ci_fuse(landmark.x, landmark.P, relay.x, relay.P)
    return CiAgent(landmark.uid, x, P)


def absolute_update(agent: CiAgent, z_abs, R_abs) -> CiAgent:
    """Standard EKF position fix on the agent's own estimate."""
    H = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    r = np.asarray(z_abs, dtype=float) - agent.x[:2]
    S = symmetrize(H @ agent.P @ H.T + R_abs)
    K = agent.P @ H.T @ spd_inverse(S)
    x = agent.x + K @ r
    x[2] = wrap_angle(x[2])
    return CiAgent(agent.uid, x, symmetrize(agent.P - K @ S @ K.T))
