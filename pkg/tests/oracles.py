"""Independent reference computations used by the tests.

Nothing here imports the filter code: Jacobians come from central finite
differences and the joint EKF uses explicit inverses and the Joseph form.
"""
import math

import numpy as np


def wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def fd_jacobian(f, x, eps=1e-6, angle_rows=()):
    """Central finite-difference Jacobian of ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        d = np.zeros_like(x)
        d[i] = eps
        diff = np.asarray(f(x + d), dtype=float) - np.asarray(f(x - d), dtype=float)
        for r in angle_rows:
            diff[r] = wrap(diff[r])
        J[:, i] = diff / (2 * eps)
    return J


def random_spd(rng, n, scale=1.0, min_eig=0.1):
    A = rng.standard_normal((n, n))
    Q, _ = np.linalg.qr(A)
    w = rng.uniform(min_eig, 1.0, n) * scale
    return (Q * w) @ Q.T


def unicycle(x, u, dt):
    return np.array([x[0] + u[0] * math.cos(x[2]) * dt,
                     x[1] + u[0] * math.sin(x[2]) * dt,
                     wrap(x[2] + u[1] * dt)])


def relpose(xa, xb):
    c, s = math.cos(xa[2]), math.sin(xa[2])
    dx, dy = xb[0] - xa[0], xb[1] - xa[1]
    return np.array([c * dx + s * dy, -s * dx + c * dy, wrap(xb[2] - xa[2])])


class JointEkf:
    """Textbook EKF over the stacked team state, finite-difference Jacobians."""

    def __init__(self, uids, x0, P0, dt):
        self.uids = list(uids)
        self.x = np.concatenate([np.asarray(x0[u], float) for u in self.uids])
        self.P = np.zeros((self.x.size, self.x.size))
        for n, u in enumerate(self.uids):
            self.P[3 * n:3 * n + 3, 3 * n:3 * n + 3] = P0[u]
        self.dt = dt

    def idx(self, uid):
        n = self.uids.index(uid)
        return slice(3 * n, 3 * n + 3)

    def predict(self, controls, qs):
        """``qs[uid]`` is the 2x2 covariance of the (v, omega) input noise."""
        dt = self.dt
        d = self.x.size

        def f(x):
            out = x.copy()
            for u in self.uids:
                s = self.idx(u)
                out[s] = unicycle(x[s], controls[u], dt)
            return out

        F = fd_jacobian(f, self.x, angle_rows=[3 * n + 2 for n in range(len(self.uids))])
        GQG = np.zeros((d, d))
        for u in self.uids:
            s = self.idx(u)
            G = fd_jacobian(lambda uu: unicycle(self.x[s], uu, dt), np.asarray(controls[u], float),
                            angle_rows=[2])
            GQG[s, s] = G @ qs[u] @ G.T
        self.x = f(self.x)
        self.P = F @ self.P @ F.T + GQG

    def update(self, a, b, z, R):
        if a == b:
            def h(x):
                return x[self.idx(a)][:2]
            angle_rows = ()
        else:
            def h(x):
                return relpose(x[self.idx(a)], x[self.idx(b)])
            angle_rows = (2,)
        H = fd_jacobian(h, self.x, angle_rows=angle_rows)
        r = np.asarray(z, float) - h(self.x)
        for i in angle_rows:
            r[i] = wrap(r[i])
        S = H @ self.P @ H.T + R
        K = self.P @ H.T @ np.linalg.inv(S)
        IKH = np.eye(self.x.size) - K @ H
        self.x = self.x + K @ r
        for n in range(len(self.uids)):
            self.x[3 * n + 2] = wrap(self.x[3 * n + 2])
        self.P = IKH @ self.P @ IKH.T + K @ R @ K.T
