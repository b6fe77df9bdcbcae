"""Interim Master decentralized cooperative localization.

Every agent keeps its own pose estimate ``x``, covariance ``P``, a local
transition product ``Phi`` and a registry of ``Pi`` blocks, such that the
team cross-covariance is implicitly ``P_ij = Phi_i @ Pi_ij @ Phi_j.T``.
Propagation therefore needs no communication.  When agent ``a`` measures
agent ``b``, ``b`` sends a landmark message to ``a``; ``a`` (the interim
master) computes the whitened gain factors ``Gamma`` and floods an update
message that lets every agent reproduce the centralized EKF update of its own
block.

Two registry layouts are supported:

``FULL``
    every agent stores ``Pi_jl`` for all pairs ``j < l``; the update message
    has a size independent of the team size.
``OWN_ROW``
    agent ``i`` stores only ``Pi_ij``; the landmark message carries
    ``b``'s row and the update message carries every ``Gamma_j``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import wire
from .models import UnicycleAgent, linearize_measurement
from .numerics import MAX_CONDITION, sym_inv_sqrt, symmetrize, wrap_angle


class ProtocolError(RuntimeError):
    """A message does not match the receiver's step or role."""


class ConditioningError(np.linalg.LinAlgError):
    pass


class Variant(str, enum.Enum):
    FULL = "full"
    OWN_ROW = "ownrow"


@dataclass
class DclAgentState:
    uid: int
    team: list[int]
    x: np.ndarray
    P: np.ndarray
    phi: np.ndarray
    registry: dict
    variant: Variant = Variant.FULL
    k: int = 0

    def pi(self, j: int, l: int) -> np.ndarray:
        """``Pi_jl`` as seen by this agent (stored blocks are transposed on read)."""
        if self.variant is Variant.FULL:
            if j < l:
                return self.registry[(j, l)]
            return self.registry[(l, j)].T
        if j == self.uid:
            return self.registry[l]
        if l == self.uid:
            return self.registry[j].T
        raise KeyError(f"agent {self.uid} does not store Pi_{j}{l}")

    @property
    def n(self) -> int:
        return self.x.size


def registry_keys(uid: int, team: list[int], variant: Variant) -> list:
    team = sorted(team)
    if variant is Variant.FULL:
        return [(j, l) for idx, j in enumerate(team) for l in team[idx + 1:]]
    return [j for j in team if j != uid]


def dcl_init(uid: int, team: list[int], x0, P0, variant: Variant | str = Variant.FULL,
             dims: dict[int, int] | None = None) -> DclAgentState:
    """Initial local state: ``Phi = I`` and every ``Pi`` block zero."""
    variant = Variant(variant)
    team = sorted(team)
    dims = dims or {j: 3 for j in team}
    x0 = np.asarray(x0, dtype=float).copy()
    if variant is Variant.FULL:
        registry = {(j, l): np.zeros((dims[j], dims[l])) for j, l in registry_keys(uid, team, variant)}
    else:
        registry = {j: np.zeros((dims[uid], dims[j])) for j in registry_keys(uid, team, variant)}
    return DclAgentState(uid, team, x0, np.asarray(P0, dtype=float).copy(),
                         np.eye(x0.size), registry, variant, 0)


def dcl_propagate(agent: DclAgentState, control, model: UnicycleAgent,
                  max_condition: float = MAX_CONDITION) -> DclAgentState:
    x, P, F = model.propagate(agent.x, agent.P, control)
    if np.linalg.cond(F) > max_condition:
        raise ConditioningError(f"agent {agent.uid}: motion Jacobian is near-singular at step {agent.k}")
    return replace(agent, x=x, P=P, phi=F @ agent.phi, k=agent.k + 1)


def no_measurement_tick(agent: DclAgentState) -> DclAgentState:
    """Step with no exteroceptive measurement anywhere in the team."""
    return replace(agent)


# -- messages ----------------------------------------------------------------


@dataclass
class Announcement:
    master: int
    landmark_count: int
    step: int

    def encode(self) -> bytes:
        return wire.encode(self.master, self.landmark_count, self.step, [])

    @classmethod
    def decode(cls, buf: bytes) -> "Announcement":
        sender, count, step, _ = wire.decode(buf)
        return cls(sender, count, step)


@dataclass
class LandmarkMessage:
    sender: int
    master: int
    step: int
    x: np.ndarray
    phi: np.ndarray
    P: np.ndarray
    pi_row: dict[int, np.ndarray] | None = None

    def encode(self) -> bytes:
        arrays = [self.x, self.phi, self.P]
        if self.pi_row is not None:
            uids = sorted(self.pi_row)
            arrays.append(np.array(uids, dtype=float).reshape(1, -1))
            arrays.extend(self.pi_row[j] for j in uids)
        return wire.encode(self.sender, self.master, self.step, arrays)

    @classmethod
    def decode(cls, buf: bytes) -> "LandmarkMessage":
        sender, master, step, arrays = wire.decode(buf)
        x, phi, P = arrays[0].ravel(), arrays[1], arrays[2]
        pi_row = None
        if len(arrays) > 3:
            uids = [int(u) for u in arrays[3].ravel()]
            pi_row = dict(zip(uids, arrays[4:]))
        return cls(sender, master, step, x, phi, P, pi_row)

    def to_json(self) -> str:
        d = {"type": "landmark", "sender": self.sender, "master": self.master, "step": self.step,
             "x": self.x.tolist(), "phi": self.phi.tolist(), "P": self.P.tolist()}
        if self.pi_row is not None:
            d["pi_row"] = {str(j): m.tolist() for j, m in sorted(self.pi_row.items())}
        return json.dumps(d)


@dataclass
class UpdateMessage:
    """Full-registry update message; its size does not depend on the team size.

    ``t_b = Phi_b^T Ht_b^T S^{-1/2}`` and ``t_a = Phi_a^T Ht_a^T S^{-1/2}``.
    """

    master: int
    landmark: int
    step: int
    rbar: np.ndarray
    gamma_a: np.ndarray
    gamma_b: np.ndarray
    t_b: np.ndarray
    t_a: np.ndarray

    def encode(self) -> bytes:
        return wire.encode(self.master, self.landmark, self.step,
                           [self.rbar, self.gamma_a, self.gamma_b, self.t_b, self.t_a])

    @classmethod
    def decode(cls, buf: bytes) -> "UpdateMessage":
        a, b, step, arr = wire.decode(buf)
        return cls(a, b, step, arr[0].ravel(), arr[1], arr[2], arr[3], arr[4])

    def to_json(self) -> str:
        return json.dumps({
            "type": "update", "variant": "full", "master": self.master,
            "landmark": self.landmark, "step": self.step, "rbar": self.rbar.tolist(),
            "gamma_a": self.gamma_a.tolist(), "gamma_b": self.gamma_b.tolist(),
            "t_b": self.t_b.tolist(), "t_a": self.t_a.tolist(),
        })


@dataclass
class OwnRowUpdateMessage:
    """Own-row update message: the whitened residual and every agent's ``Gamma``."""

    master: int
    landmark: int
    step: int
    rbar: np.ndarray
    gammas: dict[int, np.ndarray]

    def encode(self) -> bytes:
        uids = sorted(self.gammas)
        arrays = [self.rbar, np.array(uids, dtype=float).reshape(1, -1)]
        arrays.extend(self.gammas[j] for j in uids)
        return wire.encode(self.master, self.landmark, self.step, arrays)

    @classmethod
    def decode(cls, buf: bytes) -> "OwnRowUpdateMessage":
        a, b, step, arr = wire.decode(buf)
        uids = [int(u) for u in arr[1].ravel()]
        return cls(a, b, step, arr[0].ravel(), dict(zip(uids, arr[2:])))

    def to_json(self) -> str:
        return json.dumps({
            "type": "update", "variant": "ownrow", "master": self.master,
            "landmark": self.landmark, "step": self.step, "rbar": self.rbar.tolist(),
            "gammas": {str(j): g.tolist() for j, g in sorted(self.gammas.items())},
        })


def decode_update(buf: bytes, variant: Variant | str):
    if Variant(variant) is Variant.FULL:
        return UpdateMessage.decode(buf)
    return OwnRowUpdateMessage.decode(buf)


@dataclass
class MasterLocals:
    residual: np.ndarray
    S: np.ndarray
    S_inv_sqrt: np.ndarray
    Ht_a: np.ndarray
    Ht_b: np.ndarray
    gammas: dict[int, np.ndarray] = field(default_factory=dict)

    def gain(self, uid: int, phi: np.ndarray) -> np.ndarray:
        """Kalman gain block ``K_i = Phi_i Gamma_i S^{-1/2}``."""
        return phi @ self.gammas[uid] @ self.S_inv_sqrt


# -- update stage ------------------------------------------------------------


def make_landmark_message(agent_b: DclAgentState, master: int) -> LandmarkMessage:
    pi_row = None
    if agent_b.variant is Variant.OWN_ROW:
        pi_row = {j: agent_b.registry[j] for j in agent_b.team if j not in (master, agent_b.uid)}
    return LandmarkMessage(agent_b.uid, master, agent_b.k, agent_b.x.copy(),
                           agent_b.phi.copy(), agent_b.P.copy(), pi_row)


def _finish(agent_a: DclAgentState, b: int, r, S, Ht_a, Ht_b, t_a, t_b, Sm,
            gamma_a, gamma_b, pi_b_row=None):
    a = agent_a.uid
    rbar = Sm @ r
    locals_ = MasterLocals(r, S, Sm, Ht_a, Ht_b, {a: gamma_a, b: gamma_b})
    if agent_a.variant is Variant.FULL:
        msg = UpdateMessage(a, b, agent_a.k, rbar, gamma_a, gamma_b, t_b, t_a)
        return msg, locals_
    gammas = {a: gamma_a, b: gamma_b}
    for j in agent_a.team:
        if j in gammas:
            continue
        g = -agent_a.registry[j].T @ t_a
        if pi_b_row is not None:
            g = pi_b_row[j].T @ t_b + g
        gammas[j] = g
    locals_.gammas = gammas
    return OwnRowUpdateMessage(a, b, agent_a.k, rbar, gammas), locals_


def master_compute(agent_a: DclAgentState, lm: LandmarkMessage, z, R) -> tuple:
    """Interim-master computations after receiving ``b``'s landmark message.

    Returns ``(update_message, MasterLocals)``.
    """
    a, b = agent_a.uid, lm.sender
    if lm.step != agent_a.k:
        raise ProtocolError(f"stale landmark message from {b}: step {lm.step}, master at {agent_a.k}")
    if lm.master != a:
        raise ProtocolError(f"landmark message addressed to {lm.master}, received by {a}")
    if b == a:
        raise ProtocolError("use absolute_update_master for absolute measurements")
    r, Ht_a, Ht_b = linearize_measurement(z, agent_a.x, lm.x, absolute=False)
    pi_ab = agent_a.pi(a, b)
    phi_a, phi_b = agent_a.phi, lm.phi
    P_ab = phi_a @ pi_ab @ phi_b.T
    cross = Ht_a @ P_ab @ Ht_b.T
    S = symmetrize(R + Ht_a @ agent_a.P @ Ht_a.T + Ht_b @ lm.P @ Ht_b.T - cross - cross.T)
    Sm = sym_inv_sqrt(S)
    t_a = phi_a.T @ Ht_a.T @ Sm
    t_b = phi_b.T @ Ht_b.T @ Sm
    gamma_a = pi_ab @ t_b - np.linalg.solve(phi_a, agent_a.P @ Ht_a.T) @ Sm
    gamma_b = np.linalg.solve(phi_b, lm.P @ Ht_b.T) @ Sm - pi_ab.T @ t_a
    return _finish(agent_a, b, r, S, Ht_a, Ht_b, t_a, t_b, Sm, gamma_a, gamma_b, lm.pi_row)


def absolute_update_master(agent_a: DclAgentState, z_abs, R_abs) -> tuple:
    """Update message for an absolute position fix; needs no landmark message."""
    a = agent_a.uid
    r, Ht_a, Ht_b = linearize_measurement(z_abs, agent_a.x, None, absolute=True)
    S = symmetrize(R_abs + Ht_a @ agent_a.P @ Ht_a.T)
    Sm = sym_inv_sqrt(S)
    t_a = agent_a.phi.T @ Ht_a.T @ Sm
    t_b = np.zeros_like(t_a)
    gamma_a = -np.linalg.solve(agent_a.phi, agent_a.P @ Ht_a.T) @ Sm
    return _finish(agent_a, a, r, S, Ht_a, Ht_b, t_a, t_b, Sm, gamma_a, gamma_a)


def apply_update(agent: DclAgentState, um) -> DclAgentState:
    """Reproduce the centralized update of this agent's block and its registry."""
    if um.step != agent.k:
        raise ProtocolError(f"agent {agent.uid} at step {agent.k} got update for step {um.step}")
    a, b = um.master, um.landmark
    i = agent.uid
    if agent.variant is Variant.FULL:
        if not isinstance(um, UpdateMessage):
            raise ProtocolError("full-registry agent received an own-row update message")
        gam = {a: um.gamma_a, b: um.gamma_b}
        for j in agent.team:
            if j not in gam:
                # registry values from before this update
                gam[j] = agent.pi(j, b) @ um.t_b - agent.pi(j, a) @ um.t_a
        registry = {(j, l): pi - gam[j] @ gam[l].T for (j, l), pi in agent.registry.items()}
    else:
        if not isinstance(um, OwnRowUpdateMessage):
            raise ProtocolError("own-row agent received a full-registry update message")
        gam = um.gammas
        gi = gam[i]
        registry = {j: pi - gi @ gam[j].T for j, pi in agent.registry.items()}
    phig = agent.phi @ gam[i]
    x = agent.x + phig @ um.rbar
    x[2] = wrap_angle(x[2])
    P = symmetrize(agent.P - phig @ phig.T)
    return replace(agent, x=x, P=P, registry=registry)


# -- maintenance -------------------------------------------------------------


def refactorize(agent: DclAgentState, phis: dict[int, np.ndarray]) -> DclAgentState:
    """Fold every agent's ``Phi`` into the registry and reset ``Phi`` to identity.

    ``phis`` must hold the current ``Phi`` of every team member.  All agents
    must refactorize at the same no-measurement step.
    """
    if agent.variant is Variant.FULL:
        registry = {(j, l): phis[j] @ pi @ phis[l].T for (j, l), pi in agent.registry.items()}
    else:
        pi_i = phis[agent.uid]
        registry = {j: pi_i @ pi @ phis[j].T for j, pi in agent.registry.items()}
    return replace(agent, phi=np.eye(agent.n), registry=registry)


def retire_agent(agent: DclAgentState, uid: int) -> DclAgentState:
    """Drop a permanently departed team member from the local registry."""
    if uid == agent.uid:
        raise ValueError("an agent cannot retire itself")
    team = [j for j in agent.team if j != uid]
    if agent.variant is Variant.FULL:
        registry = {key: pi for key, pi in agent.registry.items() if uid not in key}
    else:
        registry = {j: pi for j, pi in agent.registry.items() if j != uid}
    return replace(agent, team=team, registry=registry)


def cross_covariance(agent_i: DclAgentState, phi_j: np.ndarray, j: int, registry_owner: DclAgentState | None = None) -> np.ndarray:
    """Reconstruct ``P_ij = Phi_i Pi_ij Phi_j^T`` from agent ``i``'s registry."""
    owner = registry_owner or agent_i
    return agent_i.phi @ owner.pi(agent_i.uid, j) @ phi_j.T


def registry_size(agent: DclAgentState) -> int:
    return len(agent.registry)
