"""Matrix and angle helpers shared by every filter in the package.

Covariances are plain ``numpy`` arrays; the functions here enforce the
contracts the filter algebra relies on (symmetry, positive definiteness,
wrapped headings).

The innovation covariance is whitened with the symmetric principal inverse
square root ``S^{-1/2}``.  A Cholesky factor ``S = L L^T`` would also work if
``L^{-T}`` were used inside the gain factors and ``L^{-1}`` on the residual;
only the symmetric root is implemented.
"""
from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi

#: Largest accepted condition number for matrices that get inverted.
MAX_CONDITION = 1e12


class NumericsError(Exception):
    """Base class for numerical contract violations."""


class DimensionError(NumericsError, ValueError):
    pass


class SingularityError(NumericsError, np.linalg.LinAlgError):
    pass


class InvalidValueError(NumericsError, ValueError):
    pass


def _square(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    return m


def symmetrize(m) -> np.ndarray:
    """Return ``(m + m.T) / 2``."""
    m = _square(m)
    return 0.5 * (m + m.T)


def ensure_pd(s, max_condition: float = MAX_CONDITION) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decompose a symmetric matrix and check it is well-conditioned PD.

    Returns ``(eigenvalues, eigenvectors)`` of ``s``. Raises
    :class:`SingularityError` naming the smallest eigenvalue when ``s`` is not
    positive definite or its condition number exceeds ``max_condition``.
    """
    s = _square(s)
    w, v = np.linalg.eigh(s)
    lo, hi = w[0], w[-1]
    if not (hi > 0.0) or lo <= hi / max_condition:
        raise SingularityError(
            f"matrix is not safely positive definite: smallest eigenvalue {lo:.6g}, "
            f"largest {hi:.6g}"
        )
    return w, v


def sym_inv_sqrt(s) -> np.ndarray:
    """Symmetric principal inverse square root ``M`` with ``M @ M = inv(s)``."""
    w, v = ensure_pd(s)
    m = (v / np.sqrt(w)) @ v.T
    return 0.5 * (m + m.T)


def spd_inverse(s) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix, with the conditioning guard."""
    w, v = ensure_pd(s)
    m = (v / w) @ v.T
    return 0.5 * (m + m.T)


def wrap_angle(a: float) -> float:
    """Wrap an angle in radians to ``(-pi, pi]``."""
    a = float(a)
    if math.isnan(a) or math.isinf(a):
        raise InvalidValueError(f"cannot wrap non-finite angle {a!r}")
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def wrap_angles(a) -> np.ndarray:
    """Element-wise :func:`wrap_angle` for arrays."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidValueError("cannot wrap non-finite angles")
    r = np.remainder(a + math.pi, TWO_PI) - math.pi
    # remainder maps the +pi boundary to -pi; the convention here is +pi
    r[r <= -math.pi] += TWO_PI
    return r


def psd_repair(m, floor: float = 0.0) -> np.ndarray:
    """Clamp the eigenvalues of a symmetric matrix from below at ``floor``."""
    m = _square(m)
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if np.all(w >= floor):
        return m.copy()
    w = np.maximum(w, floor)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)
