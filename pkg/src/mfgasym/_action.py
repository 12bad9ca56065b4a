"""Discrete action of the potential MFG in mass-Lagrangian coordinates.

Nodes X_j(t), j = 0..J, bound mass cells of fixed mass w_j.  With
Delta_j = X_{j+1} - X_j and F(s) = s^(theta+1)/(theta+1), the discrete action is

    S = sum_n sum_j mu_j (X_j^{n+1} - X_j^n)^2 / (2 dt_n)
        + sum_n omega_n V(X^n) + c_T V(X^N),    V(X) = sum_j Delta_j F(w_j / Delta_j),

with lumped node masses mu_j and trapezoid weights omega_n.  S is convex in X
on {Delta > 0}, so Newton with backtracking finds the unique minimiser.  Its
Euler-Lagrange equations are a second-order discretisation of
X_tt = (m^theta)_x along trajectories, the Lagrangian form of the system.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu


def potential(delta, w, theta):
    return np.sum(w ** (theta + 1) * delta ** (-theta), axis=-1) / (theta + 1)


def potential_grad(delta, w, theta):
    # dV/dX_j = g(Delta_{j-1}) - g(Delta_j) with g = dphi/dDelta = -(theta/(theta+1)) rho^(theta+1)
    g = -theta / (theta + 1) * (w / delta) ** (theta + 1)
    out = np.zeros(delta.shape[:-1] + (delta.shape[-1] + 1,))
    out[..., 1:] += g
    out[..., :-1] -= g
    return out


def potential_curv(delta, w, theta):
    """phi''(Delta_j) for each cell; the Hessian of V is the graph Laplacian with these weights."""
    return theta * w ** (theta + 1) * delta ** (-theta - 2)


class ActionProblem:
    """Minimise the discrete action over node trajectories.

    ``X0`` holds the initial nodes, ``w`` the cell masses, ``times`` the time
    levels.  With ``XT`` given the terminal nodes are fixed (planning);
    otherwise the terminal cost c_T V(X^N) applies.
    """

    def __init__(self, X0, w, times, theta, cT=0.0, XT=None):
        self.X0 = np.asarray(X0, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.times = np.asarray(times, dtype=float)
        self.theta = float(theta)
        self.cT = float(cT)
        self.XT = None if XT is None else np.asarray(XT, dtype=float)
        self.dt = np.diff(self.times)
        J1 = len(self.X0)
        self.mu = np.zeros(J1)
        self.mu[:-1] += 0.5 * self.w
        self.mu[1:] += 0.5 * self.w
        N = len(self.dt)
        om = np.zeros(N + 1)
        om[:-1] += 0.5 * self.dt
        om[1:] += 0.5 * self.dt
        self.omega = om
        self.n_free = N if self.XT is None else N - 1
        self._pattern = None

    # full trajectory array (N+1, J+1) from the free unknowns
    def full(self, Y):
        parts = [self.X0[None, :], Y.reshape(self.n_free, -1)]
        if self.XT is not None:
            parts.append(self.XT[None, :])
        return np.concatenate(parts, axis=0)

    def action(self, X):
        d = np.diff(X, axis=1)
        if np.any(d <= 0):
            return np.inf
        kin = 0.5 * np.sum(self.mu * np.diff(X, axis=0) ** 2 / self.dt[:, None])
        V = potential(d, self.w, self.theta)
        S = kin + np.dot(self.omega, V)
        if self.XT is None:
            S += self.cT * V[-1]
        return S

    def gradient(self, X):
        d = np.diff(X, axis=1)
        vel = np.diff(X, axis=0) / self.dt[:, None]  # (N, J+1) segment velocities
        G = np.zeros_like(X)
        G[1:] += self.mu * vel
        G[:-1] -= self.mu * vel
        gV = potential_grad(d, self.w, self.theta)
        G += self.omega[:, None] * gV
        if self.XT is None:
            G[-1] += self.cT * gV[-1]
            return G[1:].ravel()
        return G[1:-1].ravel()

    def hessian(self, X):
        N = len(self.dt)
        J1 = X.shape[1]
        nf = self.n_free
        d = np.diff(X, axis=1)
        curv = potential_curv(d, self.w, self.theta) * self.omega[:, None]
        if self.XT is None:
            curv[-1] += self.cT * potential_curv(d[-1], self.w, self.theta)
        # kinetic diagonal: mu (1/dt_{n-1} + 1/dt_n) for interior levels
        inv = 1.0 / self.dt
        kd = np.zeros(N + 1)
        kd[1:] += inv
        kd[:-1] += inv
        lev = np.arange(1, nf + 1)
        diag = kd[lev, None] * self.mu[None, :]
        c = curv[lev]
        diag[:, :-1] += c
        diag[:, 1:] += c
        idx = np.arange(nf * J1).reshape(nf, J1)
        rows = [idx.ravel()]
        cols = [idx.ravel()]
        vals = [diag.ravel()]
        # space coupling within a level
        rows += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
        cols += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
        vals += [-c.ravel(), -c.ravel()]
        # time coupling between consecutive free levels
        if nf > 1:
            off = -(inv[lev[:-1], None] * self.mu[None, :]).ravel()
            rows += [idx[:-1].ravel(), idx[1:].ravel()]
            cols += [idx[1:].ravel(), idx[:-1].ravel()]
            vals += [off, off]
        H = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nf * J1, nf * J1),
        )
        return H.tocsc()

    def solve(self, X_init, tol=1e-10, max_iter=50, callback=None):
        """Damped Newton.  Returns (X, history, converged) where history holds
        the max-over-time L1 change of the cell densities per step."""
        X = np.array(X_init, dtype=float)
        X[0] = self.X0
        if self.XT is not None:
            X[-1] = self.XT
        Y = X[1:] if self.XT is None else X[1:-1]
        Y = Y.ravel().copy()
        S = self.action(self.full(Y))
        if not np.isfinite(S):
            raise ValueError("initial trajectories cross")
        history = []
        converged = False
        for _ in range(max_iter):
            Xc = self.full(Y)
            g = self.gradient(Xc)
            H = self.hessian(Xc)
            step = -splu(H, permc_spec="MMD_AT_PLUS_A").solve(g)
            decrement = -np.dot(g, step)
            s = 1.0
            while True:
                Yn = Y + s * step
                Sn = self.action(self.full(Yn))
                if np.isfinite(Sn) and Sn <= S - 1e-4 * s * decrement + 1e-14 * abs(S):
                    break
                s *= 0.5
                if s < 1e-12:
                    break
            Xn = self.full(Yn)
            change = density_change(Xc, Xn, self.w)
            history.append(change)
            Y, S = Yn, Sn
            if callback is not None:
                callback(Xn, change)
            if change <= tol or decrement < 1e-28 * max(1.0, abs(S)):
                converged = True
                break
        return self.full(Y), history, converged


def density_change(Xa, Xb, w):
    """max over levels of sum_j |rho_a - rho_b| Delta_a (L1 change of cell densities)."""
    da = np.diff(Xa, axis=1)
    db = np.diff(Xb, axis=1)
    return float(np.max(np.sum(np.abs(w / da - w / db) * da, axis=1)))
