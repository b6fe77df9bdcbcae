import math

import numpy as np
import pytest

from cooploc import loose_ci as lci
from cooploc.models import OdometryNoise, UnicycleAgent
from oracles import fd_jacobian, random_spd, wrap


def compose_oracle(p, r):
    c, s = math.cos(p[2]), math.sin(p[2])
    return np.array([p[0] + c * r[0] - s * r[1], p[1] + s * r[0] + c * r[1], wrap(p[2] + r[2])])


def test_compose_jacobians_finite_difference():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = np.array([*rng.uniform(-5, 5, 2), rng.uniform(-3, 3)])
        r = np.array([*rng.uniform(-5, 5, 2), rng.uniform(-3, 3)])
        out, J1, J2 = lci.compose(p, r)
        assert np.allclose(out, compose_oracle(p, r), atol=1e-12)
        assert np.abs(J1 - fd_jacobian(lambda q: lci.compose(q, r)[0], p, angle_rows=[2])).max() <= 1e-5
        assert np.abs(J2 - fd_jacobian(lambda q: lci.compose(p, q)[0], r, angle_rows=[2])).max() <= 1e-5


def test_relay_perfect_observer():
    obs = lci.CiAgent(1, np.array([1.0, 2.0, 0.5]), np.zeros((3, 3)))
    target = np.array([3.0, -1.0, 2.0])
    c, s = math.cos(0.5), math.sin(0.5)
    z = np.array([c * 2.0 + s * -3.0, -s * 2.0 + c * -3.0, 1.5])
    x, P = lci.relay_estimate(obs, z, np.zeros((3, 3)))
    assert np.allclose(x, target, atol=1e-12)
    assert not P.any()


def test_relay_identity_frame():
    P = np.diag([0.1, 0.2, 0.01])
    R = np.diag([0.01, 0.02, 0.001])
    obs = lci.CiAgent(1, np.zeros(3), P)
    x, PL = lci.relay_estimate(obs, np.zeros(3), R)
    assert np.allclose(PL, P + R)


def test_relay_covariance_matches_sampling():
    rng = np.random.default_rng(1)
    x = np.array([1.0, -2.0, 0.7])
    P = np.diag([0.02, 0.03, 0.003])
    z = np.array([3.0, 1.0, 0.2])
    R = np.diag([0.01, 0.01, 0.002])
    _, PL = lci.relay_estimate(lci.CiAgent(1, x, P), z, R)
    n = 100_000
    xs = rng.multivariate_normal(x, P, n)
    zs = rng.multivariate_normal(z, R, n)
    c, s = np.cos(xs[:, 2]), np.sin(xs[:, 2])
    out = np.column_stack([xs[:, 0] + c * zs[:, 0] - s * zs[:, 1],
                           xs[:, 1] + s * zs[:, 0] + c * zs[:, 1],
                           xs[:, 2] + zs[:, 2]])
    emp = np.cov(out.T)
    assert np.allclose(np.diag(PL), np.diag(emp), rtol=0.05)
    assert np.abs(PL - emp).max() <= 0.05 * np.abs(emp).max()


def test_ci_identical_inputs():
    rng = np.random.default_rng(2)
    P = random_spd(rng, 3)
    x = np.array([1.0, 2.0, 0.3])
    xf, Pf, _ = lci.ci_fuse(x, P, x, P)
    assert np.allclose(xf, x)
    assert np.allclose(Pf, P)


def test_ci_dominant_information():
    x1, x2 = np.array([0.0, 0.0, 0.0]), np.array([1.0, 1.0, 0.5])
    P1, P2 = np.eye(3) * 1e-4, np.eye(3)
    xf, Pf, w = lci.ci_fuse(x1, P1, x2, P2)
    assert w > 0.99
    assert np.allclose(xf, x1, atol=1e-3)
    assert np.allclose(Pf, P1, atol=1e-5)


def test_ci_grid_optimality():
    rng = np.random.default_rng(3)
    grid = np.linspace(0.0, 1.0, 100)
    interior = 0
    for _ in range(100):
        P1, P2 = random_spd(rng, 3), random_spd(rng, 3, scale=rng.uniform(0.5, 2.0))
        _, Pf, w = lci.ci_fuse(np.zeros(3), P1, np.zeros(3), P2)
        I1, I2 = np.linalg.inv(P1), np.linalg.inv(P2)
        best = min(np.trace(np.linalg.inv(g * I1 + (1 - g) * I2)) for g in grid)
        assert 0.0 <= w <= 1.0
        interior += 0.0 < w < 1.0
        # the grid may hit the optimum exactly, so allow for rounding only
        assert np.trace(Pf) <= best * (1 + 1e-12)
    assert interior > 20


def test_ci_conservative_versus_independent_fusion():
    rng = np.random.default_rng(4)
    for _ in range(20):
        P1, P2 = random_spd(rng, 3), random_spd(rng, 3)
        _, Pf, _ = lci.ci_fuse(np.zeros(3), P1, np.zeros(3), P2)
        P_kf = np.linalg.inv(np.linalg.inv(P1) + np.linalg.inv(P2))
        assert np.linalg.eigvalsh(Pf - P_kf).min() >= -1e-12


def test_ci_consistent_for_correlated_inputs():
    rng = np.random.default_rng(5)
    # two estimates of the same quantity with strongly correlated errors
    A = random_spd(rng, 6)
    A[:3, 3:] = A[3:, :3] = 0.8 * np.linalg.cholesky(A[:3, :3]) @ np.linalg.cholesky(A[3:, 3:]).T
    A = 0.5 * (A + A.T) + 0.1 * np.eye(6)
    P1, P2 = A[:3, :3], A[3:, 3:]
    _, Pf, w = lci.ci_fuse(np.zeros(3), P1, np.zeros(3), P2, heading_index=None)
    I1, I2 = np.linalg.inv(P1), np.linalg.inv(P2)
    W1, W2 = Pf @ (w * I1), Pf @ ((1 - w) * I2)
    E = rng.multivariate_normal(np.zeros(6), A, 50_000)
    err = E[:, :3] @ W1.T + E[:, 3:] @ W2.T
    actual = np.cov(err.T)
    assert np.linalg.eigvalsh(Pf - actual).min() >= -1e-3 * np.trace(Pf)


def test_ci_heading_wrap():
    P = np.eye(3) * 0.01
    a, b = math.pi - 0.01, -math.pi + 0.01
    xf, _, _ = lci.ci_fuse(np.array([0, 0, a]), P, np.array([0, 0, b]), P * 2)
    # the fused heading lies on the short arc through +-pi, not near 0
    assert abs(wrap(xf[2] - a)) <= 0.02 + 1e-12
    assert abs(wrap(xf[2] - b)) <= 0.02 + 1e-12


def test_ci_rejects_singular():
    with pytest.raises(np.linalg.LinAlgError):
        lci.ci_fuse(np.zeros(3), np.zeros((3, 3)), np.zeros(3), np.eye(3))


def test_golden_section():
    w = lci.golden_section(lambda t: (t - 0.3) ** 2, tol=1e-10)
    assert w == pytest.approx(0.3, abs=1e-8)
    assert lci.golden_section(lambda t: t) == 0.0
    assert lci.golden_section(lambda t: -t) == 1.0


def test_only_landmark_changes():
    obs = lci.CiAgent(1, np.array([0.0, 0.0, 0.0]), np.eye(3) * 0.01)
    lm = lci.CiAgent(2, np.array([2.1, 0.0, 0.0]), np.eye(3) * 0.5)
    x_l, P_l = lci.relay_estimate(obs, np.array([2.0, 0.0, 0.0]), np.eye(3) * 0.001)
    relay = lci.CiRelay.decode(lci.CiRelay(1, 2, 7, x_l, P_l).encode())
    assert relay.step == 7 and np.allclose(relay.P, P_l)
    new = lci.landmark_fuse(lm, relay)
    assert np.trace(new.P) < np.trace(lm.P)
    assert np.array_equal(obs.P, np.eye(3) * 0.01)


def test_absolute_update():
    ag = lci.CiAgent(1, np.array([1.0, 1.0, 0.2]), np.eye(3) * 0.1)
    out = lci.absolute_update(ag, np.array([1.2, 0.8]), np.eye(2) * 0.1)
    assert np.allclose(out.x[:2], [1.1, 0.9])
    assert out.P[0, 0] == pytest.approx(0.05)


def test_propagate_matches_model():
    m = UnicycleAgent(1, OdometryNoise(0.1, 0.01), 0.1)
    ag = lci.CiAgent(1, np.zeros(3), np.eye(3) * 0.01)
    out = ag.propagate((0.5, 0.1), m)
    x, P, _ = m.propagate(ag.x, ag.P, (0.5, 0.1))
    assert np.array_equal(out.x, x) and np.array_equal(out.P, P)
