"""Declarative scenario description, file format and built-in presets.

Scenario files are YAML with a ``schema: 1`` header.  Every physical
quantity is a string carrying its unit, e.g. ``"0.05 m"``, ``"1 deg"``,
``"0.5 deg/s"``.  Files are always written in SI units (m, rad, s) with
``repr`` floats, so ``dump(parse(dump(spec)))`` is byte-identical.

The presets reproduce the robot, noise and measurement-schedule parameters
of the three-robot study.  Control profiles and initial conditions were never
published; the values here are a documented reconstruction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
import numpy as np
import yaml

from .models import DEG, OdometryNoise, UnicycleAgent, unicycle_step
from .netsim import CommGraph, check_im_dcl_feasible, fig2_graph, reachable_set

SCHEMA = 1

FILTERS = ("central", "imdcl", "imdcl-ownrow", "naive", "ci", "dr")
DCL_FILTERS = ("imdcl", "imdcl-ownrow")


class ScenarioError(ValueError):
    pass


# -- units -------------------------------------------------------------------

_UNITS = {
    "length": {"m": 1.0, "cm": 0.01, "mm": 0.001},
    "angle": {"rad": 1.0, "deg": DEG},
    "time": {"s": 1.0},
    "speed": {"m/s": 1.0},
    "rate": {"rad/s": 1.0, "deg/s": DEG},
    "fraction": {"frac": 1.0},
}
_SI = {"length": "m", "angle": "rad", "time": "s", "speed": "m/s", "rate": "rad/s", "fraction": "frac"}


def parse_quantity(text, dimension: str) -> float:
    """``"1.5 deg"`` -> radians, checking the unit belongs to ``dimension``."""
    if not isinstance(text, str):
        raise ScenarioError(f"quantity {text!r} must carry an explicit {dimension} unit")
    parts = text.split()
    if len(parts) != 2:
        raise ScenarioError(f"cannot parse quantity {text!r}; expected '<value> <unit>'")
    value, unit = parts
    table = _UNITS[dimension]
    if unit not in table:
        raise ScenarioError(f"unit {unit!r} in {text!r} is not a unit of {dimension} ({', '.join(table)})")
    return float(value) * table[unit]


def format_quantity(value: float, dimension: str) -> str:
    return f"{float(value)!r} {_SI[dimension]}"


# -- spec types --------------------------------------------------------------


@dataclass(frozen=True)
class AgentSpec:
    uid: int
    initial_pose: tuple[float, float, float]
    initial_std: tuple[float, float, float]
    sigma_v_frac: float
    sigma_omega: float

    @property
    def P0(self) -> np.ndarray:
        return np.diag(np.square(self.initial_std))

    def odometry_noise(self) -> OdometryNoise:
        return OdometryNoise(self.sigma_v_frac, self.sigma_omega)


@dataclass(frozen=True)
class ControlSegment:
    """From ``t_start`` on: ``v`` and ``omega + amp * sin(2 pi t / period + phase)``."""

    t_start: float
    v: float
    omega: float = 0.0
    omega_amp: float = 0.0
    omega_period: float = 0.0
    omega_phase: float = 0.0

    def at(self, t: float) -> tuple[float, float]:
        w = self.omega
        if self.omega_amp and self.omega_period > 0:
            w += self.omega_amp * math.sin(2.0 * math.pi * t / self.omega_period + self.omega_phase)
        return self.v, w


@dataclass(frozen=True)
class ScheduleEntry:
    """``observer`` measures ``target`` at every step with ``t_start < t <= t_end``.

    A sample recorded at ``t_start`` therefore shows the state just before the
    interval begins, and one at ``t_end`` includes its last update.
    """

    t_start: float
    t_end: float
    observer: int
    target: int
    kind: str
    noise_std: tuple[float, ...]

    @property
    def R(self) -> np.ndarray:
        return np.diag(np.square(self.noise_std))


@dataclass(frozen=True)
class CommSpec:
    mode: str = "complete"  # complete | edges | range
    edges: tuple[tuple[int, int], ...] = ()
    comm_range: float | None = None

    @property
    def static(self) -> bool:
        return self.mode != "range"


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    dt: float
    duration: float
    agents: tuple[AgentSpec, ...]
    controls: dict
    schedule: tuple[ScheduleEntry, ...]
    comm: CommSpec = CommSpec()
    seed: int = 0
    runs: int = 1
    filters: tuple[str, ...] = ("central", "imdcl")
    note: str = ""

    @property
    def uids(self) -> list[int]:
        return [a.uid for a in self.agents]

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def agent(self, uid: int) -> AgentSpec:
        for a in self.agents:
            if a.uid == uid:
                return a
        raise KeyError(uid)

    def motion_models(self) -> dict[int, UnicycleAgent]:
        return {a.uid: UnicycleAgent(a.uid, a.odometry_noise(), self.dt) for a in self.agents}

    def control(self, uid: int, t: float) -> tuple[float, float]:
        seg = None
        for s in self.controls[uid]:
            if s.t_start <= t + 1e-9:
                seg = s
        if seg is None:
            seg = self.controls[uid][0]
        return seg.at(t)

    def step_index(self, t: float) -> int:
        return int(round(t / self.dt))

    def firing_steps(self, e: ScheduleEntry) -> range:
        return range(max(self.step_index(e.t_start) + 1, 1), min(self.step_index(e.t_end), self.n_steps) + 1)

    def measurements_at(self, step: int) -> list[ScheduleEntry]:
        """Entries firing at ``step`` in canonical ``(observer, target)`` order."""
        out = [e for e in self.schedule if step in self.firing_steps(e)]
        return sorted(out, key=lambda e: (e.observer, e.target))

    def comm_graph(self, positions=None) -> CommGraph:
        if self.comm.mode == "complete":
            return CommGraph.complete(self.uids)
        if self.comm.mode == "edges":
            return CommGraph(self.uids, self.comm.edges)
        if positions is None:
            raise ScenarioError("range-based communication needs agent positions")
        return CommGraph.geometric(positions, self.comm.comm_range)

    def with_filters(self, filters) -> "ScenarioSpec":
        return replace(self, filters=tuple(filters))


def truth_trajectory(spec: ScenarioSpec) -> np.ndarray:
    """Noise-free true poses, shape ``(n_steps + 1, N, 3)``; agents in ``spec.uids`` order."""
    K = spec.n_steps
    out = np.empty((K + 1, len(spec.agents), 3))
    for n, a in enumerate(spec.agents):
        out[0, n] = a.initial_pose
    for k in range(K):
        t = k * spec.dt
        for n, a in enumerate(spec.agents):
            v, w = spec.control(a.uid, t)
            out[k + 1, n] = unicycle_step(out[k, n], v, w, spec.dt)
    return out


# -- presets -----------------------------------------------------------------

_P0_STD = (0.1, 0.1, 1.0 * DEG)
_SIGMA_OMEGA = {1: 1.0 * DEG, 2: 1.0 * DEG, 3: 0.5 * DEG}
# relative-pose noise of each observer; third component is a heading (deg)
_REL_STD = {1: (0.05, 0.05, 1.0 * DEG), 2: (0.05, 0.05, 2.0 * DEG), 3: (0.07, 0.07, 1.5 * DEG)}
_ABS_STD = (0.1, 0.1)
_SPEED = 0.25
_OMEGA_AMP = 2.0 * DEG
_OMEGA_PERIOD = 100.0
_RECONSTRUCTION = ("Control profiles, initial poses and initial covariances are a reconstruction: "
                   "v = 0.25 m/s, omega = 2 deg/s * sin(2 pi t / 100 s + phase), agents 5 m apart, "
                   "P0 = diag(0.1 m, 0.1 m, 1 deg)^2.")


def _three_robots():
    poses = {1: (0.0, 0.0, 0.0), 2: (5.0, 0.0, math.pi / 2), 3: (2.5, 5.0 * math.sqrt(3) / 2, math.pi)}
    agents = tuple(AgentSpec(u, poses[u], _P0_STD, 0.1, _SIGMA_OMEGA[u]) for u in (1, 2, 3))
    controls = {u: (ControlSegment(0.0, _SPEED, 0.0, _OMEGA_AMP, _OMEGA_PERIOD, 2.0 * math.pi * (u - 1) / 3),)
                for u in (1, 2, 3)}
    return agents, controls


def _rel(t0, t1, a, b):
    return ScheduleEntry(float(t0), float(t1), a, b, "relative", _REL_STD[a])


def preset_paper3() -> ScenarioSpec:
    agents, controls = _three_robots()
    schedule = (
        _rel(10, 90, 1, 2),
        _rel(90, 110, 3, 1),
        # concurrent block; its timing is not given numerically
        _rel(120, 170, 1, 3),
        _rel(120, 170, 3, 2),
        _rel(120, 170, 2, 1),
        ScheduleEntry(190.0, 240.0, 1, 1, "absolute", _ABS_STD),
    )
    return ScenarioSpec("paper3", 0.1, 300.0, agents, controls, schedule, CommSpec("complete"),
                        seed=1, runs=50, filters=("central", "imdcl", "imdcl-ownrow", "naive", "dr"),
                        note=_RECONSTRUCTION + " The 1->3, 3->2, 2->1 block timing (120 s to 170 s) is also reconstructed.")


def preset_fig7(duration: float = 300.0) -> ScenarioSpec:
    agents, controls = _three_robots()
    entries = []
    t, target = 10.0, 1
    while t < duration:
        entries.append(_rel(t, min(t + 50.0, duration), 3, target))
        t += 50.0
        target = 2 if target == 1 else 1
    return ScenarioSpec("fig7", 0.1, duration, agents, controls, tuple(entries), CommSpec("complete"),
                        seed=1, runs=50, filters=("imdcl", "ci", "dr"), note=_RECONSTRUCTION)


def preset_fig2() -> ScenarioSpec:
    g = fig2_graph()
    agents = tuple(AgentSpec(u, (5.0 * (u - 1), 0.0, 0.0), _P0_STD, 0.1, 1.0 * DEG) for u in range(1, 7))
    controls = {u: (ControlSegment(0.0, _SPEED, 0.0, _OMEGA_AMP, _OMEGA_PERIOD, u * 1.0),) for u in range(1, 7)}
    schedule = (
        ScheduleEntry(10.0, 100.0, 1, 2, "relative", _REL_STD[1]),
        ScheduleEntry(10.0, 100.0, 6, 3, "relative", _REL_STD[1]),
    )
    return ScenarioSpec("fig2", 0.1, 100.0, agents, controls, schedule, CommSpec("edges", tuple(g.edges)),
                        seed=1, runs=1, filters=("central", "imdcl", "imdcl-ownrow"),
                        note="Six-agent multi-hop graph reconstructed from the caption's reachability claims. "
                             + _RECONSTRUCTION)


PRESETS = {"paper3": preset_paper3, "fig7": preset_fig7, "fig2": preset_fig2}


def load_preset(name: str) -> ScenarioSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ScenarioError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# -- validation --------------------------------------------------------------


def validate(spec: ScenarioSpec) -> list[str]:
    """All violated invariants, as human-readable strings (empty when valid)."""
    v: list[str] = []
    if not spec.dt > 0:
        v.append(f"dt must be positive (got {spec.dt})")
    if not spec.duration > 0:
        v.append(f"duration must be positive (got {spec.duration})")
    elif spec.dt > 0 and abs(spec.duration / spec.dt - round(spec.duration / spec.dt)) > 1e-6:
        v.append("duration must be a whole number of steps")
    uids = spec.uids
    if len(set(uids)) != len(uids):
        v.append(f"duplicate agent uids {uids}")
    if not uids:
        v.append("scenario has no agents")
    for a in spec.agents:
        if not 1 <= a.uid <= 0xFFFF:
            v.append(f"agent uid {a.uid} outside 1..65535")
        if len(a.initial_pose) != 3 or len(a.initial_std) != 3:
            v.append(f"agent {a.uid}: initial pose and std must have 3 components")
        if not all(s > 0 for s in a.initial_std):
            v.append(f"agent {a.uid}: initial std must be positive")
        if not a.sigma_v_frac > 0 or not a.sigma_omega > 0:
            v.append(f"agent {a.uid}: odometry noise std must be positive")
        if not spec.controls.get(a.uid):
            v.append(f"agent {a.uid}: no control profile")
        else:
            starts = [s.t_start for s in spec.controls[a.uid]]
            if starts != sorted(starts) or starts[0] > 0:
                v.append(f"agent {a.uid}: control segments must be sorted and start at t <= 0")
    for n, e in enumerate(spec.schedule):
        tag = f"schedule[{n}] ({e.observer}->{e.target})"
        if not (0 <= e.t_start < e.t_end <= spec.duration + 1e-9):
            v.append(f"{tag}: interval [{e.t_start}, {e.t_end}) not within [0, {spec.duration}]")
        if e.observer not in uids or e.target not in uids:
            v.append(f"{tag}: unknown agent")
        if e.kind == "relative":
            if e.observer == e.target:
                v.append(f"{tag}: relative measurement with observer == target")
            if len(e.noise_std) != 3:
                v.append(f"{tag}: relative pose noise needs 3 components")
        elif e.kind == "absolute":
            if e.observer != e.target:
                v.append(f"{tag}: absolute measurement must have observer == target")
            if len(e.noise_std) != 2:
                v.append(f"{tag}: absolute position noise needs 2 components")
        else:
            v.append(f"{tag}: unknown kind {e.kind!r}")
        if not all(s > 0 for s in e.noise_std):
            v.append(f"{tag}: noise std must be positive")
    for f in spec.filters:
        if f not in FILTERS:
            v.append(f"unknown filter {f!r}")
    if spec.comm.mode not in ("complete", "edges", "range"):
        v.append(f"unknown communication mode {spec.comm.mode!r}")
    elif spec.comm.mode == "edges":
        for i, j in spec.comm.edges:
            if i not in uids or j not in uids:
                v.append(f"edge ({i}, {j}) references an unknown agent")
    elif spec.comm.mode == "range" and not (spec.comm.comm_range and spec.comm.comm_range > 0):
        v.append("range-based communication needs a positive comm_range")
    if v:
        return v
    if any(f in DCL_FILTERS for f in spec.filters):
        v.extend(_connectivity_violations(spec, _dcl_check))
    if "ci" in spec.filters:
        v.extend(_connectivity_violations(spec, _ci_check))
    return v


def _dcl_check(g, e: ScheduleEntry, t: float) -> str | None:
    feas = check_im_dcl_feasible(g, e.observer, e.target)
    if feas:
        return None
    msg = f"connectivity: interim master {e.observer} (measuring {e.target} at t={t:g} s) cannot reach agents {feas.missing}"
    if feas.landmark_cut_off:
        msg += f"; landmark {e.target} cannot reach the master"
    return msg


def _ci_check(g, e: ScheduleEntry, t: float) -> str | None:
    if e.kind == "absolute" or e.target in reachable_set(g, e.observer):
        return None
    return f"connectivity: CI relay from observer {e.observer} cannot reach landmark {e.target} at t={t:g} s"


def _connectivity_violations(spec: ScenarioSpec, check) -> list[str]:
    """Apply ``check`` to every schedule entry; range graphs are checked at each firing step."""
    out = []
    if spec.comm.static:
        g = spec.comm_graph()
        for e in spec.schedule:
            msg = check(g, e, e.t_start)
            if msg:
                out.append(msg)
        return out
    truth = truth_trajectory(spec)
    uids = spec.uids
    for e in spec.schedule:
        for step in spec.firing_steps(e):
            pos = {u: truth[step, n, :2] for n, u in enumerate(uids)}
            msg = check(spec.comm_graph(pos), e, step * spec.dt)
            if msg:
                out.append(msg)
                break
    return out


# -- file format -------------------------------------------------------------


def to_dict(spec: ScenarioSpec) -> dict:
    q = format_quantity
    d = {
        "schema": SCHEMA,
        "name": spec.name,
        "dt": q(spec.dt, "time"),
        "duration": q(spec.duration, "time"),
        "seed": int(spec.seed),
        "runs": int(spec.runs),
        "filters": list(spec.filters),
        "agents": [{
            "uid": a.uid,
            "initial_pose": [q(a.initial_pose[0], "length"), q(a.initial_pose[1], "length"),
                             q(a.initial_pose[2], "angle")],
            "initial_std": [q(a.initial_std[0], "length"), q(a.initial_std[1], "length"),
                            q(a.initial_std[2], "angle")],
            "sigma_v_frac": q(a.sigma_v_frac, "fraction"),
            "sigma_omega": q(a.sigma_omega, "rate"),
            "controls": [{
                "t_start": q(s.t_start, "time"),
                "v": q(s.v, "speed"),
                "omega": q(s.omega, "rate"),
                "omega_amp": q(s.omega_amp, "rate"),
                "omega_period": q(s.omega_period, "time"),
                "omega_phase": q(s.omega_phase, "angle"),
            } for s in spec.controls[a.uid]],
        } for a in spec.agents],
        "schedule": [{
            "t_start": q(e.t_start, "time"),
            "t_end": q(e.t_end, "time"),
            "observer": e.observer,
            "target": e.target,
            "kind": e.kind,
            "noise_std": [q(s, "angle" if i == 2 else "length") for i, s in enumerate(e.noise_std)],
        } for e in spec.schedule],
        "comm": _comm_to_dict(spec.comm),
        "note": spec.note,
    }
    return d


def _comm_to_dict(c: CommSpec) -> dict:
    if c.mode == "edges":
        return {"mode": "edges", "edges": [[int(i), int(j)] for i, j in c.edges]}
    if c.mode == "range":
        return {"mode": "range", "comm_range": format_quantity(c.comm_range, "length")}
    return {"mode": c.mode}


def from_dict(d: dict) -> ScenarioSpec:
    if d.get("schema") != SCHEMA:
        raise ScenarioError(f"unsupported or missing schema version {d.get('schema')!r} (expected {SCHEMA})")
    pq = parse_quantity
    try:
        agents, controls = [], {}
        for a in d["agents"]:
            uid = int(a["uid"])
            pose, std = a["initial_pose"], a["initial_std"]
            agents.append(AgentSpec(
                uid,
                (pq(pose[0], "length"), pq(pose[1], "length"), pq(pose[2], "angle")),
                (pq(std[0], "length"), pq(std[1], "length"), pq(std[2], "angle")),
                pq(a["sigma_v_frac"], "fraction"),
                pq(a["sigma_omega"], "rate"),
            ))
            controls[uid] = tuple(ControlSegment(
                pq(s["t_start"], "time"), pq(s["v"], "speed"),
                pq(s.get("omega", "0 rad/s"), "rate"),
                pq(s.get("omega_amp", "0 rad/s"), "rate"),
                pq(s.get("omega_period", "0 s"), "time"),
                pq(s.get("omega_phase", "0 rad"), "angle"),
            ) for s in a["controls"])
        schedule = []
        for e in d.get("schedule") or []:
            stds = e["noise_std"]
            schedule.append(ScheduleEntry(
                pq(e["t_start"], "time"), pq(e["t_end"], "time"), int(e["observer"]), int(e["target"]),
                str(e["kind"]),
                tuple(pq(s, "angle" if i == 2 else "length") for i, s in enumerate(stds)),
            ))
        c = d.get("comm") or {"mode": "complete"}
        mode = c.get("mode", "complete")
        if mode == "edges":
            comm = CommSpec("edges", tuple((int(i), int(j)) for i, j in c["edges"]))
        elif mode == "range":
            comm = CommSpec("range", comm_range=pq(c["comm_range"], "length"))
        else:
            comm = CommSpec(mode)
        return ScenarioSpec(
            name=str(d.get("name", "custom")),
            dt=pq(d["dt"], "time"),
            duration=pq(d["duration"], "time"),
            agents=tuple(agents),
            controls=controls,
            schedule=tuple(schedule),
            comm=comm,
            seed=int(d.get("seed", 0)),
            runs=int(d.get("runs", 1)),
            filters=tuple(d.get("filters", ("central", "imdcl"))),
            note=str(d.get("note", "")),
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise ScenarioError(f"malformed scenario: {exc!r}") from exc


def dumps(spec: ScenarioSpec) -> str:
    return yaml.safe_dump(to_dict(spec), sort_keys=False, default_flow_style=False, width=100)


def loads(text: str) -> ScenarioSpec:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must contain a mapping")
    return from_dict(data)


def load(path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def resolve(name_or_path: str) -> ScenarioSpec:
    """A preset name or a path to a scenario file."""
    if name_or_path in PRESETS:
        return load_preset(name_or_path)
    import os

    if os.path.exists(name_or_path):
        return load(name_or_path)
    raise ScenarioError(f"{name_or_path!r} is neither a preset ({', '.join(sorted(PRESETS))}) nor a file")
