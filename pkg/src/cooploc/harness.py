"""Simulation engine and Monte Carlo evaluation.

One run draws a single set of noise samples (initial estimate errors,
odometry, exteroceptive measurements) and feeds exactly the same inputs to
every selected filter.  Decentralized filters exchange real encoded messages
through :mod:`cooploc.netsim`, so byte counts are those of the wire format.

Filter names: ``central``, ``naive``, ``imdcl`` (full registry),
``imdcl-ownrow``, ``ci`` (Covariance Intersection baseline) and ``dr``
(dead reckoning).
"""
from __future__ import annotations

import csv
import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import centralized as cen
from . import interim_master as im
from . import loose_ci as lci
from .models import relative_pose_h, absolute_position_h
from .netsim import Envelope, EnvelopeKind, flood
from .numerics import spd_inverse, wrap_angle, wrap_angles
from .scenario import DCL_FILTERS, FILTERS, ScenarioSpec, truth_trajectory, validate

MASK64 = (1 << 64) - 1
REFACTOR_CONDITION = 1e10


class SimulationError(RuntimeError):
    """A filter failed; carries the filter name and step."""

    def __init__(self, filter_name: str, step: int, cause: Exception):
        super().__init__(f"filter {filter_name!r} failed at step {step}: {cause}")
        self.filter_name = filter_name
        self.step = step
        self.cause = cause


# -- seeds and noise -----------------------------------------------------------


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, run: int) -> int:
    """Seed of Monte Carlo run ``run``: ``splitmix64(splitmix64(base) ^ run)``."""
    return splitmix64(splitmix64(int(base_seed) & MASK64) ^ int(run))


@dataclass
class NoiseDraws:
    """All random inputs of one run, drawn before any filter runs."""

    x0_error: np.ndarray          # (N, 3)
    odometry: np.ndarray          # (K, N, 2) measured (v, omega)
    meas_noise: list              # per schedule entry: (n_fire, dim)


def draw_noise(spec: ScenarioSpec, truth_controls: np.ndarray, seed: int) -> NoiseDraws:
    rng = np.random.default_rng(seed)
    N, K = len(spec.agents), spec.n_steps
    std0 = np.array([a.initial_std for a in spec.agents])
    x0_error = rng.standard_normal((N, 3)) * std0
    eta = rng.standard_normal((K, N, 2))
    frac = np.array([a.sigma_v_frac for a in spec.agents])
    sw = np.array([a.sigma_omega for a in spec.agents])
    odo = np.empty_like(eta)
    odo[..., 0] = truth_controls[..., 0] + frac * np.abs(truth_controls[..., 0]) * eta[..., 0]
    odo[..., 1] = truth_controls[..., 1] + sw * eta[..., 1]
    meas = []
    for e in spec.schedule:
        n = len(spec.firing_steps(e))
        meas.append(rng.standard_normal((n, len(e.noise_std))) * np.asarray(e.noise_std))
    return NoiseDraws(x0_error, odo, meas)


def true_controls(spec: ScenarioSpec) -> np.ndarray:
    K = spec.n_steps
    out = np.empty((K, len(spec.agents), 2))
    for k in range(K):
        for n, u in enumerate(spec.uids):
            out[k, n] = spec.control(u, k * spec.dt)
    return out


def measurements_for_step(spec: ScenarioSpec, truth: np.ndarray, draws: NoiseDraws,
                          step: int) -> list[cen.RelativeMeasurement]:
    """Noisy measurements taken at ``step`` (time ``step * dt``), canonical order."""
    idx = {u: n for n, u in enumerate(spec.uids)}
    out = []
    for e_idx, e in enumerate(spec.schedule):
        fire = spec.firing_steps(e)
        if step not in fire:
            continue
        noise = draws.meas_noise[e_idx][step - fire.start]
        if e.kind == "absolute":
            z = absolute_position_h(truth[step, idx[e.observer]]) + noise
        else:
            z = relative_pose_h(truth[step, idx[e.observer]], truth[step, idx[e.target]]) + noise
            z[2] = wrap_angle(z[2])
        out.append(cen.RelativeMeasurement(e.observer, e.target, z, e.R, step))
    return cen.canonical_order(out)


# -- filter drivers ----------------------------------------------------------


class _Driver:
    name = ""

    def __init__(self, spec: ScenarioSpec, x0: dict, P0: dict):
        self.spec = spec
        self.uids = spec.uids
        self.models = spec.motion_models()
        self.bytes = {u: 0 for u in self.uids}
        self._hash = hashlib.sha256()
        self.update_traces: list[tuple[int, float, float]] = []

    def consume(self, *arrays) -> None:
        for a in arrays:
            self._hash.update(np.ascontiguousarray(a, dtype=float).tobytes())

    @property
    def checksum(self) -> str:
        return self._hash.hexdigest()

    def reset_bytes(self) -> None:
        self.bytes = {u: 0 for u in self.uids}

    def _tally(self, report) -> None:
        for u, b in report.bytes_sent.items():
            self.bytes[u] += b

    def step(self, k: int, controls: dict, meas: list, graph) -> None:
        self.consume(*(controls[u] for u in self.uids))
        for m in meas:
            self.consume(m.z)
        self.propagate(controls)
        for m in meas:
            self.update(k, m, graph)
        if not meas:
            self.idle(k, graph)

    def propagate(self, controls: dict) -> None:
        raise NotImplementedError

    def update(self, k: int, m, graph) -> None:
        raise NotImplementedError

    def idle(self, k: int, graph) -> None:
        pass

    def estimate(self, uid: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def joint(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Stacked estimate and joint covariance, or ``None`` if cross terms are not kept."""
        return None


class CentralDriver(_Driver):
    name = "central"

    def __init__(self, spec, x0, P0, naive: bool = False):
        super().__init__(spec, x0, P0)
        self.naive = naive
        self.name = "naive" if naive else "central"
        self.belief = cen.TeamBelief.from_agents(x0, P0)

    def propagate(self, controls):
        self.belief = cen.propagate(self.belief, controls, self.models)

    def update(self, k, m, graph):
        before = float(np.trace(self.belief.P))
        if self.naive:
            self.belief = cen.naive_update(self.belief, m)
        else:
            self.belief, _ = cen.update(self.belief, m)
        self.update_traces.append((k, before, float(np.trace(self.belief.P))))

    def estimate(self, uid):
        return self.belief.state(uid), self.belief.block(uid)

    def joint(self):
        return self.belief.x.copy(), self.belief.P.copy()


class DclDriver(_Driver):
    """Interim-master D-CL with every message encoded and flooded."""

    def __init__(self, spec, x0, P0, variant: im.Variant, refactor_condition: float = REFACTOR_CONDITION):
        super().__init__(spec, x0, P0)
        self.variant = im.Variant(variant)
        self.name = "imdcl" if self.variant is im.Variant.FULL else "imdcl-ownrow"
        self.refactor_condition = refactor_condition
        self.refactor_steps: list[int] = []
        self.agents = {u: im.dcl_init(u, self.uids, x0[u], P0[u], self.variant) for u in self.uids}

    def propagate(self, controls):
        self.agents = {u: im.dcl_propagate(a, controls[u], self.models[u]) for u, a in self.agents.items()}

    def _flood(self, graph, origin, kind, payload, k, targets):
        report = flood(graph, origin, Envelope(kind, payload, origin, k))
        report.require(targets)
        self._tally(report)
        return report

    def update(self, k, m, graph):
        a, b = m.observer, m.target
        ann = im.Announcement(a, 1, k).encode()
        self._flood(graph, a, EnvelopeKind.ANNOUNCEMENT, ann, k, self.uids)
        if m.absolute:
            um, _ = im.absolute_update_master(self.agents[a], m.z, m.R)
        else:
            payload = im.make_landmark_message(self.agents[b], a).encode()
            self._flood(graph, b, EnvelopeKind.LANDMARK, payload, k, [a])
            um, _ = im.master_compute(self.agents[a], im.LandmarkMessage.decode(payload), m.z, m.R)
        payload = um.encode()
        self._flood(graph, a, EnvelopeKind.UPDATE, payload, k, self.uids)
        received = im.decode_update(payload, self.variant)
        self.agents = {u: im.apply_update(ag, received) for u, ag in self.agents.items()}

    def idle(self, k, graph):
        worst = max(np.linalg.cond(ag.phi) for ag in self.agents.values())
        if worst <= self.refactor_condition:
            return
        phis = {}
        for u, ag in self.agents.items():
            payload = im.wire.encode(u, 0, k, [ag.phi])
            self._flood(graph, u, EnvelopeKind.REFACTOR, payload, k, self.uids)
            phis[u] = im.wire.decode(payload)[3][0]
        self.agents = {u: im.refactorize(ag, phis) for u, ag in self.agents.items()}
        self.refactor_steps.append(k)

    def estimate(self, uid):
        ag = self.agents[uid]
        return ag.x, ag.P

    def joint(self):
        uids = self.uids
        x = np.concatenate([self.agents[u].x for u in uids])
        blocks = [[None] * len(uids) for _ in uids]
        for i, u in enumerate(uids):
            for j, v in enumerate(uids):
                if u == v:
                    blocks[i][j] = self.agents[u].P
                elif i < j:
                    blocks[i][j] = im.cross_covariance(self.agents[u], self.agents[v].phi, v)
                    blocks[j][i] = blocks[i][j].T
        return x, np.block(blocks)


class CiDriver(_Driver):
    name = "ci"

    def __init__(self, spec, x0, P0):
        super().__init__(spec, x0, P0)
        self.agents = {u: lci.CiAgent(u, np.array(x0[u], dtype=float), np.array(P0[u], dtype=float))
                       for u in self.uids}

    def propagate(self, controls):
        self.agents = {u: a.propagate(controls[u], self.models[u]) for u, a in self.agents.items()}

    def update(self, k, m, graph):
        a, b = m.observer, m.target
        if m.absolute:
            self.agents[a] = lci.absolute_update(self.agents[a], m.z, m.R)
            return
        x_l, P_l = lci.relay_estimate(self.agents[a], m.z, m.R)
        payload = lci.CiRelay(a, b, k, x_l, P_l).encode()
        report = flood(graph, a, Envelope(EnvelopeKind.CI_RELAY, payload, a, k))
        report.require([b])
        self._tally(report)
        self.agents[b] = lci.landmark_fuse(self.agents[b], lci.CiRelay.decode(payload))

    def estimate(self, uid):
        ag = self.agents[uid]
        return ag.x, ag.P


class DeadReckoningDriver(_Driver):
    name = "dr"

    def __init__(self, spec, x0, P0):
        super().__init__(spec, x0, P0)
        self.x = {u: np.array(x0[u], dtype=float) for u in self.uids}
        self.P = {u: np.array(P0[u], dtype=float) for u in self.uids}

    def propagate(self, controls):
        for u in self.uids:
            self.x[u], self.P[u], _ = self.models[u].propagate(self.x[u], self.P[u], controls[u])

    def update(self, k, m, graph):
        pass

    def estimate(self, uid):
        return self.x[uid], self.P[uid]


def make_driver(name: str, spec: ScenarioSpec, x0: dict, P0: dict, **kw) -> _Driver:
    if name == "central":
        return CentralDriver(spec, x0, P0)
    if name == "naive":
        return CentralDriver(spec, x0, P0, naive=True)
    if name == "imdcl":
        return DclDriver(spec, x0, P0, im.Variant.FULL, **kw)
    if name == "imdcl-ownrow":
        return DclDriver(spec, x0, P0, im.Variant.OWN_ROW, **kw)
    if name == "ci":
        return CiDriver(spec, x0, P0)
    if name == "dr":
        return DeadReckoningDriver(spec, x0, P0)
    raise ValueError(f"unknown filter {name!r}; choose from {FILTERS}")


# -- run record ----------------------------------------------------------------


def nees(truth, estimate, P, heading_index: int | None = 2) -> float:
    """``e^T P^-1 e`` with ``e = truth - estimate`` and the heading wrapped."""
    e = np.asarray(truth, dtype=float) - np.asarray(estimate, dtype=float)
    if heading_index is not None:
        e = e.copy()
        for h in range(heading_index, e.size, 3):
            e[h] = wrap_angle(e[h])
    return float(e @ spd_inverse(P) @ e)


@dataclass
class RunRecord:
    """Time series of one run; index 0 is the initial estimate, step ``k`` is time ``k * dt``."""

    scenario: str
    seed: int
    dt: float
    uids: list
    filters: list
    truth: np.ndarray                                      # (K+1, N, 3)
    estimates: dict = field(default_factory=dict)          # filter -> (K+1, N, 3)
    covariances: dict = field(default_factory=dict)        # filter -> (K+1, N, 3, 3)
    nees: dict = field(default_factory=dict)               # filter -> (K+1, N)
    team_nees: dict = field(default_factory=dict)          # filter -> (K+1,)
    bytes: dict = field(default_factory=dict)              # filter -> (K+1, N) int
    update_traces: dict = field(default_factory=dict)      # filter -> [(step, before, after)]
    checksums: dict = field(default_factory=dict)
    oracle_delta: dict = field(default_factory=dict)       # filter -> (K+1, 2) state / cov
    refactor_steps: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.truth.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.truth.shape[0]) * self.dt

    def sigma3(self, filt: str) -> np.ndarray:
        cov = self.covariances[filt]
        return 3.0 * np.sqrt(np.maximum(np.diagonal(cov, axis1=-2, axis2=-1), 0.0))

    def errors(self, filt: str) -> np.ndarray:
        e = self.truth - self.estimates[filt]
        e[..., 2] = wrap_angles(e[..., 2])
        return e


def batch_nees(errors: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Vectorized NEES over leading axes; ``errors`` must already have wrapped headings."""
    sol = np.linalg.solve(covs, errors[..., None])[..., 0]
    return np.einsum("...i,...i->...", errors, sol)


def simulate(spec: ScenarioSpec, filters=None, seed: int | None = None, *,
             check: bool = True, refactor_condition: float = REFACTOR_CONDITION) -> RunRecord:
    """One run of every filter in ``filters`` on identical noise draws."""
    filters = list(filters or spec.filters)
    for f in filters:
        if f not in FILTERS:
            raise ValueError(f"unknown filter {f!r}; choose from {FILTERS}")
    if check:
        problems = validate(spec.with_filters(filters))
        if problems:
            raise ValueError("invalid scenario: " + "; ".join(problems))
    seed = spec.seed if seed is None else seed
    uids = spec.uids
    N, K = len(uids), spec.n_steps
    truth = truth_trajectory(spec)
    draws = draw_noise(spec, true_controls(spec), seed)
    x0 = {u: truth[0, n] + draws.x0_error[n] for n, u in enumerate(uids)}
    for u in uids:
        x0[u][2] = wrap_angle(x0[u][2])
    P0 = {a.uid: a.P0 for a in spec.agents}

    drivers = {}
    for f in filters:
        kw = {"refactor_condition": refactor_condition} if f in DCL_FILTERS else {}
        drivers[f] = make_driver(f, spec, x0, P0, **kw)
    rec = RunRecord(spec.name, int(seed), spec.dt, uids, filters, truth)
    for f in filters:
        rec.estimates[f] = np.empty((K + 1, N, 3))
        rec.covariances[f] = np.empty((K + 1, N, 3, 3))
        rec.bytes[f] = np.zeros((K + 1, N), dtype=np.int64)
    oracle = "central" if "central" in drivers else None
    for f in filters:
        if oracle and f in DCL_FILTERS:
            rec.oracle_delta[f] = np.empty((K + 1, 2))

    static_graph = spec.comm_graph() if spec.comm.static else None

    joints = {f: np.empty((K + 1, 3 * N, 3 * N)) for f, d in drivers.items() if d.joint() is not None}

    def record(k):
        for f, d in drivers.items():
            for n, u in enumerate(uids):
                x, P = d.estimate(u)
                rec.estimates[f][k, n] = x
                rec.covariances[f][k, n] = P
            rec.bytes[f][k] = [d.bytes[u] for u in uids]
            if f in joints:
                joints[f][k] = d.joint()[1]

    record(0)
    odo = draws.odometry
    for k in range(K):
        step = k + 1
        controls = {u: (float(odo[k, n, 0]), float(odo[k, n, 1])) for n, u in enumerate(uids)}
        meas = measurements_for_step(spec, truth, draws, step)
        graph = static_graph or spec.comm_graph({u: truth[step, n, :2] for n, u in enumerate(uids)})
        for f, d in drivers.items():
            d.reset_bytes()
            try:
                d.step(step, controls, meas, graph)
            except Exception as exc:
                raise SimulationError(f, step, exc) from exc
        record(step)

    for f in filters:
        e = rec.errors(f)
        rec.nees[f] = batch_nees(e, rec.covariances[f])
        if f in joints:
            rec.team_nees[f] = batch_nees(e.reshape(K + 1, 3 * N), joints[f])
        else:
            rec.team_nees[f] = rec.nees[f].sum(axis=1)
    for f in rec.oracle_delta:
        xc, xf = rec.estimates[oracle], rec.estimates[f]
        d = xc - xf
        d[..., 2] = wrap_angles(d[..., 2])
        scale_x = 1.0 + np.abs(xc).reshape(K + 1, -1).max(axis=1)
        scale_p = 1.0 + np.abs(joints[oracle]).reshape(K + 1, -1).max(axis=1)
        rec.oracle_delta[f][:, 0] = np.abs(d).reshape(K + 1, -1).max(axis=1) / scale_x
        rec.oracle_delta[f][:, 1] = np.abs(joints[oracle] - joints[f]).reshape(K + 1, -1).max(axis=1) / scale_p
    for f, d in drivers.items():
        rec.checksums[f] = d.checksum
        rec.update_traces[f] = list(d.update_traces)
        if isinstance(d, DclDriver):
            rec.refactor_steps[f] = list(d.refactor_steps)
    return rec


def max_oracle_delta(rec: RunRecord) -> dict[str, tuple[float, float]]:
    """Largest relative state and covariance delta versus the centralized filter."""
    return {f: (float(d[:, 0].max()), float(d[:, 1].max())) for f, d in rec.oracle_delta.items()}


def variant_delta(rec: RunRecord) -> tuple[float, float]:
    """Max-abs difference of estimates and covariance blocks between the two D-CL variants."""
    a, b = "imdcl", "imdcl-ownrow"
    e = rec.estimates[a] - rec.estimates[b]
    e[..., 2] = wrap_angles(e[..., 2])
    return float(np.max(np.abs(e))), float(np.max(np.abs(rec.covariances[a] - rec.covariances[b])))


# -- Monte Carlo -----------------------------------------------------------------


@dataclass
class RunSummary:
    """Reduced per-run data sent back from worker processes."""

    seed: int
    sq_pos: dict
    sq_heading: dict
    nees: dict
    team_nees: dict
    sigma: dict
    trace_ok: dict


def summarize(rec: RunRecord) -> RunSummary:
    sq_pos, sq_h, sig, ok = {}, {}, {}, {}
    for f in rec.filters:
        e = rec.errors(f)
        sq_pos[f] = e[..., 0] ** 2 + e[..., 1] ** 2
        sq_h[f] = e[..., 2] ** 2
        sig[f] = np.sqrt(np.maximum(np.diagonal(rec.covariances[f], axis1=-2, axis2=-1), 0.0))
        ok[f] = all(after <= before + 1e-12 for _, before, after in rec.update_traces[f])
    return RunSummary(rec.seed, sq_pos, sq_h, {f: rec.nees[f] for f in rec.filters},
                      dict(rec.team_nees), sig, ok)


@dataclass
class MonteCarloReport:
    scenario: str
    base_seed: int
    runs: int
    dt: float
    uids: list
    filters: list
    rmse_pos: dict          # filter -> (K+1, N)
    rmse_heading: dict      # filter -> (K+1, N)
    nees_mean: dict         # filter -> (K+1, N)
    team_nees_mean: dict    # filter -> (K+1,)
    sigma_mean: dict        # filter -> (K+1, N, 3) mean 1-sigma
    nees_bounds: tuple      # per-agent (lo, hi), 3 dof
    team_nees_bounds: tuple  # (lo, hi), 3N dof
    trace_monotone: dict    # filter -> bool over all runs
    first: RunRecord | None = None

    @property
    def times(self) -> np.ndarray:
        return np.arange(next(iter(self.rmse_pos.values())).shape[0]) * self.dt


def chi2_bounds(dof: int, runs: int, level: float = 0.95) -> tuple[float, float]:
    """Two-sided bounds of the average of ``runs`` NEES samples with ``dof`` degrees of freedom."""
    a = (1.0 - level) / 2.0
    return (float(stats.chi2.ppf(a, dof * runs) / runs), float(stats.chi2.ppf(1.0 - a, dof * runs) / runs))


def _run_one(args):
    spec, filters, seed = args
    return summarize(simulate(spec, filters, seed, check=False))


def worker_count(runs: int) -> int:
    env = os.environ.get("COOPLOC_THREADS")
    n = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(n, runs))


def monte_carlo(spec: ScenarioSpec, filters=None, runs: int | None = None, base_seed: int | None = None,
                keep_first: bool = False) -> MonteCarloReport:
    """``runs`` independent runs; reduction is a sum in run order, so results do not depend on workers."""
    filters = list(filters or spec.filters)
    runs = spec.runs if runs is None else runs
    if runs < 1:
        raise ValueError("runs must be >= 1")
    base_seed = spec.seed if base_seed is None else base_seed
    problems = validate(spec.with_filters(filters))
    if problems:
        raise ValueError("invalid scenario: " + "; ".join(problems))
    seeds = [derive_seed(base_seed, r) for r in range(runs)]

    first = simulate(spec, filters, seeds[0], check=False)
    summaries = [summarize(first)]
    rest = [(spec, filters, s) for s in seeds[1:]]
    workers = worker_count(len(rest)) if rest else 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries.extend(pool.map(_run_one, rest))
    else:
        summaries.extend(_run_one(a) for a in rest)

    def mean(attr):
        out = {}
        for f in filters:
            acc = None
            for s in summaries:
                v = getattr(s, attr)[f]
                acc = v.copy() if acc is None else acc + v
            out[f] = acc / runs
        return out

    N = len(spec.agents)
    return MonteCarloReport(
        spec.name, int(base_seed), runs, spec.dt, spec.uids, filters,
        rmse_pos={f: np.sqrt(v) for f, v in mean("sq_pos").items()},
        rmse_heading={f: np.sqrt(v) for f, v in mean("sq_heading").items()},
        nees_mean=mean("nees"),
        team_nees_mean=mean("team_nees"),
        sigma_mean=mean("sigma"),
        nees_bounds=chi2_bounds(3, runs),
        team_nees_bounds=chi2_bounds(3 * N, runs),
        trace_monotone={f: all(s.trace_ok[f] for s in summaries) for f in filters},
        first=first if keep_first else None,
    )


# -- CSV output ----------------------------------------------------------------

RUNRECORD_COLUMNS = ("step", "agent", "filter", "field", "value")
RMSE_COLUMNS = ("step", "time", "agent", "filter", "rmse_pos", "rmse_heading")
NEES_COLUMNS = ("step", "time", "agent", "filter", "nees_mean", "lower", "upper")
BYTES_COLUMNS = ("step", "agent", "filter", "bytes")


def _num(v) -> str:
    return repr(float(v))


def write_runrecord_csv(rec: RunRecord, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNRECORD_COLUMNS)
        for k in range(rec.n_steps + 1):
            for n, u in enumerate(rec.uids):
                for name, val in zip(("x", "y", "phi"), rec.truth[k, n]):
                    w.writerow((k, u, "truth", name, _num(val)))
                for f in rec.filters:
                    x = rec.estimates[f][k, n]
                    s3 = 3.0 * np.sqrt(np.maximum(np.diag(rec.covariances[f][k, n]), 0.0))
                    rows = (("x", x[0]), ("y", x[1]), ("phi", x[2]),
                            ("sigma3_x", s3[0]), ("sigma3_y", s3[1]), ("sigma3_phi", s3[2]),
                            ("nees", rec.nees[f][k, n]))
                    for name, val in rows:
                        w.writerow((k, u, f, name, _num(val)))


def write_rmse_csv(rep: MonteCarloReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RMSE_COLUMNS)
        t = rep.times
        for k in range(t.size):
            for n, u in enumerate(rep.uids):
                for f in rep.filters:
                    w.writerow((k, _num(t[k]), u, f, _num(rep.rmse_pos[f][k, n]),
                                _num(rep.rmse_heading[f][k, n])))


def write_nees_csv(rep: MonteCarloReport, path) -> None:
    """Per-agent rows, plus ``agent = team`` rows using the joint covariance."""
    lo, hi = rep.nees_bounds
    tlo, thi = rep.team_nees_bounds
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NEES_COLUMNS)
        t = rep.times
        for k in range(t.size):
            for f in rep.filters:
                for n, u in enumerate(rep.uids):
                    w.writerow((k, _num(t[k]), u, f, _num(rep.nees_mean[f][k, n]), _num(lo), _num(hi)))
                w.writerow((k, _num(t[k]), "team", f, _num(rep.team_nees_mean[f][k]), _num(tlo), _num(thi)))


def write_bytes_csv(rec: RunRecord, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BYTES_COLUMNS)
        for k in range(rec.n_steps + 1):
            for n, u in enumerate(rec.uids):
                for f in rec.filters:
                    w.writerow((k, u, f, int(rec.bytes[f][k, n])))


# -- message-size scaling ------------------------------------------------------

SCALING_COLUMNS = ("n_agents", "variant", "landmark_bytes", "update_bytes", "registry_entries")


def scaling_study(sizes=(3, 6, 12, 24), seed: int = 0) -> list[dict]:
    """One relative-measurement round per team size and registry layout.

    Random poses and covariances; after one propagation step agent 1 measures
    agent 2.  Reports the encoded sizes of the landmark and update messages and
    the number of ``Pi`` blocks each agent stores.
    """
    from .models import OdometryNoise, UnicycleAgent, pose_noise_cov

    rows = []
    for n in sizes:
        rng = np.random.default_rng([int(seed), int(n)])
        team = list(range(1, n + 1))
        poses = {u: np.array([*rng.uniform(-20, 20, 2), rng.uniform(-np.pi, np.pi)]) for u in team}
        P0 = pose_noise_cov(0.1, 0.1, 0.02)
        z = relative_pose_h(poses[1], poses[2])
        R = pose_noise_cov(0.05, 0.05, 0.02)
        for variant in (im.Variant.FULL, im.Variant.OWN_ROW):
            agents = {u: im.dcl_init(u, team, poses[u], P0, variant) for u in team}
            model = {u: UnicycleAgent(u, OdometryNoise(0.1, 0.02), 0.1) for u in team}
            agents = {u: im.dcl_propagate(a, (0.25, 0.01), model[u]) for u, a in agents.items()}
            lm = im.make_landmark_message(agents[2], 1).encode()
            um, _ = im.master_compute(agents[1], im.LandmarkMessage.decode(lm), z, R)
            rows.append({
                "n_agents": n,
                "variant": variant.value,
                "landmark_bytes": len(lm),
                "update_bytes": len(um.encode()),
                "registry_entries": im.registry_size(agents[1]),
            })
    return rows


def scaling_slopes(rows: list[dict], key: str = "update_bytes") -> dict[str, float]:
    """Least-squares slope of ``key`` versus team size, per variant (bytes per agent)."""
    out = {}
    for variant in sorted({r["variant"] for r in rows}):
        sel = [r for r in rows if r["variant"] == variant]
        n = np.array([r["n_agents"] for r in sel], dtype=float)
        b = np.array([r[key] for r in sel], dtype=float)
        out[variant] = float(np.polyfit(n, b, 1)[0])
    return out
