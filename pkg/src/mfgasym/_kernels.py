"""Compiled time-stepping kernels shared by the solver.

All kernels work on cell-centred values with homogeneous Neumann boundaries
and take the full vector of time levels so that graded steps are allowed.
"""

import numpy as np
from numba import njit

CLAMP = 1e-14


@njit(cache=True)
def hj_backward_kernel(m, theta, uT, times, dx, out):
    """Explicit Godunov scheme for -u_t + u_x^2/2 = m^theta, marching from T to t0.

    Returns the largest dt*|p|/dx met along the way.
    """
    nt1, nx = m.shape
    cfl = 0.0
    for i in range(nx):
        out[nt1 - 1, i] = uT[i]
    for n in range(nt1 - 2, -1, -1):
        dt = times[n + 1] - times[n]
        for i in range(nx):
            ui = out[n + 1, i]
            ul = out[n + 1, i - 1] if i > 0 else ui
            ur = out[n + 1, i + 1] if i < nx - 1 else ui
            pm = (ui - ul) / dx
            pp = (ur - ui) / dx
            a = pm if pm > 0.0 else 0.0
            b = -pp if pp < 0.0 else 0.0
            g = a if a > b else b
            c = max(abs(pm), abs(pp)) * dt / dx
            if c > cfl:
                cfl = c
            out[n, i] = ui + dt * (m[n + 1, i] ** theta - 0.5 * g * g)
    return cfl


@njit(cache=True)
def _transport_step(m, u, dt, dx, out):
    # face velocity b = -u_x at i+1/2, upwind flux, zero flux through the walls
    nx = m.shape[0]
    cfl = 0.0
    flux_left = 0.0
    for i in range(nx):
        if i < nx - 1:
            b = -(u[i + 1] - u[i]) / dx
            flux_right = b * m[i] if b > 0.0 else b * m[i + 1]
            bout_r = b if b > 0.0 else 0.0
        else:
            flux_right = 0.0
            bout_r = 0.0
        if i > 0:
            bl = -(u[i] - u[i - 1]) / dx
            bout_l = -bl if bl < 0.0 else 0.0
        else:
            bout_l = 0.0
        c = (bout_r + bout_l) * dt / dx
        if c > cfl:
            cfl = c
        out[i] = m[i] - dt / dx * (flux_right - flux_left)
        flux_left = flux_right
    for i in range(nx):
        if out[i] < CLAMP:
            out[i] = 0.0
    return cfl


@njit(cache=True)
def transport_kernel(m0, u, times, dx, out):
    """Forward upwind transport m_t - (m u_x)_x = 0 driven by the value field u."""
    nt1, nx = u.shape
    cfl = 0.0
    for i in range(nx):
        out[0, i] = m0[i]
    for n in range(nt1 - 1):
        c = _transport_step(out[n], u[n], times[n + 1] - times[n], dx, out[n + 1])
        if c > cfl:
            cfl = c
    return cfl


@njit(cache=True)
def transport_average_kernel(m0, u, times, dx, mbar, lam, work):
    """Transport m0 under u and blend the result into mbar in place.

    mbar <- (1 - lam) mbar + lam m_new, level by level, so the new density is
    never stored in full.  Returns (cfl, sup_t L1 change of mbar, terminal
    density of the new iterate is left in work[1]).
    """
    nt1, nx = u.shape
    cfl = 0.0
    change = 0.0
    cur = work[0]
    nxt = work[1]
    for i in range(nx):
        cur[i] = m0[i]
    for n in range(nt1):
        if n > 0:
            c = _transport_step(cur, u[n - 1], times[n] - times[n - 1], dx, nxt)
            if c > cfl:
                cfl = c
            for i in range(nx):
                cur[i] = nxt[i]
        s = 0.0
        for i in range(nx):
            d = lam * (cur[i] - mbar[n, i])
            mbar[n, i] += d
            s += abs(d)
        s *= dx
        if s > change:
            change = s
    for i in range(nx):
        nxt[i] = cur[i]
    return cfl, change


@njit(cache=True)
def hj_exterior_kernel(U, inside, times, dx, cfl):
    """Fill U outside the support by the Godunov scheme with zero coupling.

    Cells flagged ``inside`` carry prescribed values (linearly interpolated in
    time across sub-steps); the rest is marched backward from U[-1] with
    sub-steps chosen so that dt*|p|/dx stays at ``cfl``.  Returns the number
    of sub-steps taken.
    """
    nt1, nx = U.shape
    cur = U[nt1 - 1].copy()
    start = cur.copy()
    new = np.empty(nx)
    steps = 0
    for n in range(nt1 - 2, -1, -1):
        t_hi = times[n + 1]
        t_lo = times[n]
        for i in range(nx):
            start[i] = cur[i]
        t = t_hi
        while t > t_lo:
            gmax = 0.0
            for i in range(nx - 1):
                g = abs(cur[i + 1] - cur[i]) / dx
                if g > gmax:
                    gmax = g
            dt = t - t_lo
            if gmax * dt > cfl * dx:
                dt = cfl * dx / gmax
                # avoid a sliver step at the end of the interval
                if t - dt - t_lo < 1e-3 * dt:
                    dt = t - t_lo
            tn = t - dt
            if tn < t_lo or dt == t - t_lo:
                tn = t_lo
            wlo = (t_hi - tn) / (t_hi - t_lo)
            for i in range(nx):
                if inside[n, i]:
                    new[i] = (1.0 - wlo) * start[i] + wlo * U[n, i]
                else:
                    ui = cur[i]
                    ul = cur[i - 1] if i > 0 else ui
                    ur = cur[i + 1] if i < nx - 1 else ui
                    pm = (ui - ul) / dx
                    pp = (ur - ui) / dx
                    a = pm if pm > 0.0 else 0.0
                    b = -pp if pp < 0.0 else 0.0
                    gg = a if a > b else b
                    new[i] = ui - (t - tn) * 0.5 * gg * gg
            for i in range(nx):
                cur[i] = new[i]
            t = tn
            steps += 1
        for i in range(nx):
            U[n, i] = cur[i]
    return steps
