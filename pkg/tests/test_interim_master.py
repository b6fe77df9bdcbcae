import json

import numpy as np
import pytest

from cooploc import centralized as cen
from cooploc import interim_master as im
from cooploc import wire
from cooploc.models import OdometryNoise, UnicycleAgent, pose_noise_cov, relative_pose_h
from oracles import random_spd

DT = 0.1


def setup(n=3, seed=0, variant=im.Variant.FULL):
    rng = np.random.default_rng(seed)
    uids = list(range(1, n + 1))
    x0 = {u: np.array([*rng.uniform(-5, 5, 2), rng.uniform(-3, 3)]) for u in uids}
    P0 = {u: random_spd(rng, 3, scale=0.05, min_eig=0.2) for u in uids}
    models = {u: UnicycleAgent(u, OdometryNoise(0.1, 0.02), DT) for u in uids}
    agents = {u: im.dcl_init(u, uids, x0[u], P0[u], variant) for u in uids}
    belief = cen.TeamBelief.from_agents(x0, P0)
    return rng, uids, models, agents, belief


def dcl_round(agents, a, b, z, R, variant):
    """One measurement processed through encoded messages."""
    if a == b:
        um, loc = im.absolute_update_master(agents[a], z, R)
    else:
        lm = im.LandmarkMessage.decode(im.make_landmark_message(agents[b], a).encode())
        um, loc = im.master_compute(agents[a], lm, z, R)
    msg = im.decode_update(um.encode(), variant)
    return {u: im.apply_update(ag, msg) for u, ag in agents.items()}, loc


def assert_matches(agents, belief, tol=1e-9):
    uids = belief.uids
    for u in uids:
        ag = agents[u]
        d = ag.x - belief.state(u)
        d[2] = (d[2] + np.pi) % (2 * np.pi) - np.pi
        assert np.abs(d).max() <= tol * (1 + np.abs(belief.x).max())
        assert np.abs(ag.P - belief.block(u)).max() <= tol * (1 + np.abs(belief.P).max())
        for v in uids:
            if v != u:
                cross = im.cross_covariance(ag, agents[v].phi, v)
                assert np.abs(cross - belief.block(u, v)).max() <= tol * (1 + np.abs(belief.P).max())


def run(variant, n=3, steps=150, seed=0, refactor_every=None):
    rng, uids, models, agents, belief = setup(n, seed, variant)
    R = pose_noise_cov(0.05, 0.05, 0.03)
    for k in range(steps):
        controls = {u: (rng.uniform(0.1, 0.5), rng.uniform(-0.3, 0.3)) for u in uids}
        belief = cen.propagate(belief, controls, models)
        agents = {u: im.dcl_propagate(ag, controls[u], models[u]) for u, ag in agents.items()}
        if refactor_every and k % refactor_every == refactor_every - 1:
            phis = {u: ag.phi for u, ag in agents.items()}
            agents = {u: im.refactorize(ag, phis) for u, ag in agents.items()}
            assert all(np.array_equal(ag.phi, np.eye(3)) for ag in agents.values())
            assert_matches(agents, belief)
            continue
        kind = rng.integers(0, 5)
        if kind == 0:
            continue
        a = int(rng.choice(uids))
        if kind == 1:
            z, Rm, b = belief.state(a)[:2] + rng.normal(0, 0.1, 2), np.eye(2) * 0.01, a
        else:
            b = int(rng.choice([u for u in uids if u != a]))
            z, Rm = relative_pose_h(belief.state(a), belief.state(b)) + rng.normal(0, 0.05, 3), R
        belief, diag = cen.update(belief, cen.RelativeMeasurement(a, b, z, Rm))
        agents, loc = dcl_round(agents, a, b, z, Rm, variant)
        assert np.allclose(loc.S, diag.S, atol=1e-12)
        assert_matches(agents, belief)
    return agents, belief


@pytest.mark.parametrize("variant", list(im.Variant))
def test_equivalent_to_centralized(variant):
    run(variant)


@pytest.mark.parametrize("variant", list(im.Variant))
def test_equivalent_for_larger_team(variant):
    run(variant, n=6, steps=80, seed=3)


@pytest.mark.parametrize("variant", list(im.Variant))
def test_refactorization_preserves_equivalence(variant):
    run(variant, steps=120, seed=5, refactor_every=17)


def test_variants_agree():
    a, _ = run(im.Variant.FULL, seed=8)
    b, _ = run(im.Variant.OWN_ROW, seed=8)
    for u in a:
        assert np.abs(a[u].x - b[u].x).max() <= 1e-10
        assert np.abs(a[u].P - b[u].P).max() <= 1e-10
        for j in b[u].registry:
            assert np.abs(a[u].pi(u, j) - b[u].pi(u, j)).max() <= 1e-10


def test_full_registries_identical_across_agents():
    agents, _ = run(im.Variant.FULL, n=4, steps=60, seed=2)
    ref = agents[1].registry
    for ag in agents.values():
        assert ag.registry.keys() == ref.keys()
        for key in ref:
            assert np.array_equal(ag.registry[key], ref[key])


def test_gain_matches_centralized_gain():
    rng, uids, models, agents, belief = setup(3, 11)
    R = pose_noise_cov(0.05, 0.05, 0.03)
    z = relative_pose_h(belief.state(1), belief.state(2)) + 0.01
    belief, _ = cen.update(belief, cen.RelativeMeasurement(1, 2, z, R))
    agents, _ = dcl_round(agents, 1, 2, z, R, im.Variant.FULL)
    z = relative_pose_h(belief.state(2), belief.state(3)) - 0.02
    _, diag = cen.update(belief, cen.RelativeMeasurement(2, 3, z, R))
    lm = im.make_landmark_message(agents[3], 2)
    _, loc = im.master_compute(agents[2], lm, z, R)
    for u in (2, 3):
        assert np.allclose(loc.gain(u, agents[u].phi), diag.gains[u], atol=1e-12)


def test_registry_sizes():
    for n in (3, 6, 12):
        uids = list(range(1, n + 1))
        full = im.dcl_init(1, uids, np.zeros(3), np.eye(3), "full")
        own = im.dcl_init(1, uids, np.zeros(3), np.eye(3), "ownrow")
        assert im.registry_size(full) == n * (n - 1) // 2
        assert im.registry_size(own) == n - 1


def test_update_message_size():
    sizes = {}
    for n in (3, 6, 12):
        for variant in im.Variant:
            _, uids, models, agents, _ = setup(n, 0, variant)
            lm = im.make_landmark_message(agents[2], 1)
            um, _ = im.master_compute(agents[1], lm, np.array([1.0, 0.0, 0.0]), np.eye(3) * 0.01)
            sizes[n, variant] = len(um.encode())
    # header + rbar + four 3x3 blocks
    full = wire.HEADER_SIZE + wire.array_size(3, 1) + 4 * wire.array_size(3, 3)
    assert sizes[3, im.Variant.FULL] == sizes[12, im.Variant.FULL] == full
    per_agent = wire.array_size(3, 3) + 8
    assert sizes[12, im.Variant.OWN_ROW] - sizes[6, im.Variant.OWN_ROW] == 6 * per_agent


def test_messages_round_trip_and_json():
    _, _, _, agents, _ = setup(4, 1, im.Variant.OWN_ROW)
    lm = im.make_landmark_message(agents[3], 1)
    back = im.LandmarkMessage.decode(lm.encode())
    assert back.sender == 3 and back.master == 1
    assert sorted(back.pi_row) == [2, 4]
    d = json.loads(lm.to_json())
    assert d["type"] == "landmark" and len(d["x"]) == 3
    um, _ = im.master_compute(agents[1], back, np.array([1.0, 0.0, 0.0]), np.eye(3) * 0.01)
    um2 = im.OwnRowUpdateMessage.decode(um.encode())
    assert sorted(um2.gammas) == [1, 2, 3, 4]
    assert json.loads(um.to_json())["variant"] == "ownrow"
    ann = im.Announcement.decode(im.Announcement(1, 2, 5).encode())
    assert (ann.master, ann.landmark_count, ann.step) == (1, 2, 5)


def test_stale_landmark_message_rejected():
    _, _, models, agents, _ = setup()
    lm = im.make_landmark_message(agents[2], 1)
    a1 = im.dcl_propagate(agents[1], (0.1, 0.0), models[1])
    with pytest.raises(im.ProtocolError):
        im.master_compute(a1, lm, np.zeros(3), np.eye(3))


def test_misaddressed_landmark_message_rejected():
    _, _, _, agents, _ = setup()
    lm = im.make_landmark_message(agents[2], 3)
    with pytest.raises(im.ProtocolError):
        im.master_compute(agents[1], lm, np.zeros(3), np.eye(3))


def test_update_for_wrong_step_rejected():
    _, _, models, agents, _ = setup()
    um, _ = im.master_compute(agents[1], im.make_landmark_message(agents[2], 1), np.zeros(3), np.eye(3))
    late = im.dcl_propagate(agents[3], (0.1, 0.0), models[3])
    with pytest.raises(im.ProtocolError):
        im.apply_update(late, um)


def test_variant_mismatch_rejected():
    _, _, _, agents, _ = setup()
    own = im.dcl_init(3, [1, 2, 3], np.zeros(3), np.eye(3), "ownrow")
    um, _ = im.master_compute(agents[1], im.make_landmark_message(agents[2], 1), np.zeros(3), np.eye(3))
    with pytest.raises(im.ProtocolError):
        im.apply_update(own, um)


def test_propagation_needs_no_messages_and_accumulates_phi():
    _, _, models, agents, _ = setup()
    ag = agents[1]
    F_prod = np.eye(3)
    for _ in range(5):
        before = ag.x
        ag = im.dcl_propagate(ag, (0.3, 0.1), models[1])
        F, _ = models[1].jacobians(before, (0.3, 0.1))
        F_prod = F @ F_prod
    assert np.allclose(ag.phi, F_prod)
    assert ag.k == 5


def test_ill_conditioned_motion_jacobian_raises():
    _, _, models, agents, _ = setup()
    with pytest.raises(im.ConditioningError):
        im.dcl_propagate(agents[1], (1e9, 0.0), models[1])


def test_no_measurement_tick_is_identity():
    _, _, _, agents, _ = setup()
    out = im.no_measurement_tick(agents[1])
    assert out is not agents[1]
    assert np.array_equal(out.x, agents[1].x)


def test_retire_agent():
    _, _, _, agents, _ = setup(4)
    out = im.retire_agent(agents[1], 3)
    assert out.team == [1, 2, 4]
    assert all(3 not in key for key in out.registry)
    with pytest.raises(ValueError):
        im.retire_agent(agents[1], 1)
