"""Centralized EKF cooperative localization over the stacked team state.

The team belief holds the full joint covariance, so every relative
measurement update reaches any agent whose estimate is correlated with the
observer or the landmark.  :func:`naive_update` discards those correlations
and reproduces the over-confident filter that treats each pair as independent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .models import UnicycleAgent, linearize_measurement
from .numerics import ensure_pd, symmetrize, wrap_angle


class ConfigurationError(ValueError):
    pass


class UnknownAgentError(KeyError):
    pass


@dataclass
class RelativeMeasurement:
    """``observer`` measures ``target``; ``observer == target`` flags an absolute fix."""

    observer: int
    target: int
    z: np.ndarray
    R: np.ndarray
    step: int = 0

    @property
    def absolute(self) -> bool:
        return self.observer == self.target

    @property
    def order_key(self) -> tuple[int, int]:
        return (self.observer, self.target)


def canonical_order(measurements: Iterable[RelativeMeasurement]) -> list[RelativeMeasurement]:
    """Sequential-update order: ascending ``(observer, target)``."""
    return sorted(measurements, key=lambda m: m.order_key)


@dataclass
class TeamBelief:
    uids: list[int]
    x: np.ndarray
    P: np.ndarray
    k: int = 0
    dims: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.dims:
            self.dims = [3] * len(self.uids)
        self._offsets = {}
        o = 0
        for uid, n in zip(self.uids, self.dims):
            self._offsets[uid] = (o, o + n)
            o += n

    @classmethod
    def from_agents(cls, x0: Mapping[int, np.ndarray], P0: Mapping[int, np.ndarray]) -> "TeamBelief":
        """Block-diagonal initial belief (zero cross-covariances)."""
        uids = sorted(x0)
        dims = [len(x0[u]) for u in uids]
        x = np.concatenate([np.asarray(x0[u], dtype=float) for u in uids])
        from scipy.linalg import block_diag

        P = block_diag(*[np.asarray(P0[u], dtype=float) for u in uids])
        return cls(uids=uids, x=x, P=P, k=0, dims=dims)

    def copy(self) -> "TeamBelief":
        return TeamBelief(list(self.uids), self.x.copy(), self.P.copy(), self.k, list(self.dims))

    def sl(self, uid: int) -> slice:
        try:
            a, b = self._offsets[uid]
        except KeyError:
            raise UnknownAgentError(uid) from None
        return slice(a, b)

    def state(self, uid: int) -> np.ndarray:
        return self.x[self.sl(uid)]

    def block(self, i: int, j: int | None = None) -> np.ndarray:
        j = i if j is None else j
        return self.P[self.sl(i), self.sl(j)]

    def wrap_headings(self) -> None:
        for uid in self.uids:
            s = self.sl(uid)
            self.x[s.start + 2] = wrap_angle(self.x[s.start + 2])


@dataclass
class UpdateDiagnostics:
    residual: np.ndarray
    S: np.ndarray
    gains: dict[int, np.ndarray]
    trace_before: float
    trace_after: float


def propagate(belief: TeamBelief, controls: Mapping[int, Sequence[float]],
              models: Mapping[int, UnicycleAgent]) -> TeamBelief:
    """One propagation step of every agent; cross blocks become ``F_i P_ij F_j^T``."""
    missing = [u for u in belief.uids if u not in controls]
    if missing:
        raise ConfigurationError(f"no control for agents {missing}")
    d = belief.x.size
    F = np.zeros((d, d))
    GQG = np.zeros((d, d))
    x = belief.x.copy()
    for uid in belief.uids:
        s = belief.sl(uid)
        m = models[uid]
        u = controls[uid]
        Fi, Gi = m.jacobians(belief.x[s], u)
        F[s, s] = Fi
        GQG[s, s] = Gi @ m.Q(u) @ Gi.T
        x[s] = m.f(belief.x[s], u)
    P = symmetrize(F @ belief.P @ F.T + GQG)
    return TeamBelief(list(belief.uids), x, P, belief.k + 1, list(belief.dims))


def _measurement_matrix(belief: TeamBelief, meas: RelativeMeasurement):
    a, b = meas.observer, meas.target
    r, Ht_a, Ht_b = linearize_measurement(meas.z, belief.state(a), belief.state(b), meas.absolute)
    H = np.zeros((r.size, belief.x.size))
    H[:, belief.sl(a)] = -Ht_a
    if not meas.absolute:
        H[:, belief.sl(b)] = Ht_b
    return r, H


def update(belief: TeamBelief, meas: RelativeMeasurement,
           models: Mapping[int, UnicycleAgent] | None = None) -> tuple[TeamBelief, UpdateDiagnostics]:
    """EKF update of the whole team with one relative (or absolute) measurement."""
    belief.sl(meas.observer)
    belief.sl(meas.target)
    r, H = _measurement_matrix(belief, meas)
    PHt = belief.P @ H.T
    S = symmetrize(H @ PHt + meas.R)
    ensure_pd(S)
    K = np.linalg.solve(S, PHt.T).T
    x = belief.x + K @ r
    P = symmetrize(belief.P - K @ S @ K.T)
    out = TeamBelief(list(belief.uids), x, P, belief.k, list(belief.dims))
    out.wrap_headings()
    gains = {u: K[belief.sl(u)] for u in belief.uids}
    diag = UpdateDiagnostics(r, S, gains, float(np.trace(belief.P)), float(np.trace(P)))
    return out, diag


def sequential_update(belief: TeamBelief, measurements: Iterable[RelativeMeasurement],
                      models: Mapping[int, UnicycleAgent] | None = None,
                      diagnostics: list | None = None) -> TeamBelief:
    """Apply :func:`update` for each measurement in canonical order."""
    for meas in canonical_order(measurements):
        belief, diag = update(belief, meas, models)
        if diagnostics is not None:
            diagnostics.append(diag)
    return belief


def _drop_cross_covariances(belief: TeamBelief) -> TeamBelief:
    out = belief.copy()
    P = np.zeros_like(out.P)
    for uid in out.uids:
        s = out.sl(uid)
        P[s, s] = out.P[s, s]
    out.P = P
    return out


def naive_update(belief: TeamBelief, meas: RelativeMeasurement,
                 models: Mapping[int, UnicycleAgent] | None = None) -> TeamBelief:
    """Update that ignores past correlations: only the two participants change."""
    updated, _ = update(_drop_cross_covariances(belief), meas, models)
    return _drop_cross_covariances(updated)


def diagnostic_rows(belief: TeamBelief, truth: Mapping[int, np.ndarray]) -> list[dict]:
    """CSV-ready rows: ``k``, agent, estimation error, 3-sigma bounds, ``trace(P)``."""
    rows = []
    tr = float(np.trace(belief.P))
    for uid in belief.uids:
        e = np.asarray(truth[uid], dtype=float) - belief.state(uid)
        e[2] = wrap_angle(e[2])
        sig3 = 3.0 * np.sqrt(np.maximum(np.diag(belief.block(uid)), 0.0))
        rows.append({
            "k": belief.k, "agent": uid,
            "err_x": e[0], "err_y": e[1], "err_phi": e[2],
            "sigma3_x": sig3[0], "sigma3_y": sig3[1], "sigma3_phi": sig3[2],
            "trace_P": tr,
        })
    return rows
