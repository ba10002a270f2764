"""Compiled inner loops for the implicit time steppers.

Both steppers are backward Euler for the full system, solved by a Picard
iteration whose every iterate is a pair of linear tridiagonal M-matrix solves
(so positivity is kept at every iterate). The first iterate is the split
scheme: trapped-state update at frozen carriers, then carrier updates at the
new trapped state.

The matrices are ``I/dt - L + diag(react)`` acting on the densities, where
``L`` is the no-flux two-point diffusion operator with edge weights
``mu_edge / h**2``. Only ``react`` changes between iterates, so the
off-diagonals and the constant part of the diagonal are built once per run.
"""
import numpy as np
from numba import njit

OK = 0
NOT_CONVERGED = 1
NON_FINITE = 2

# rows of the per-run workspace
_N_WORK = 9
_LO, _UP, _BASE, _DIAG, _RHS, _W, _CUR, _NEW, _REACT = range(_N_WORK)


@njit(cache=True, nogil=True)
def thomas(lower, diag, upper, rhs, out, work):
    """Solve a tridiagonal system; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = diag.shape[0]
    work[0] = upper[0] / diag[0]
    out[0] = rhs[0] / diag[0]
    for i in range(1, n):
        inv = 1.0 / (diag[i] - lower[i] * work[i - 1])
        work[i] = upper[i] * inv if i < n - 1 else 0.0
        out[i] = (rhs[i] - lower[i] * out[i - 1]) * inv
    for i in range(n - 2, -1, -1):
        out[i] -= work[i] * out[i + 1]


@njit(cache=True, nogil=True)
def _operator(mu, w_edge, dt, ws):
    n = mu.shape[0]
    for i in range(n):
        left = w_edge[i - 1] if i > 0 else 0.0
        right = w_edge[i] if i < n - 1 else 0.0
        ws[_BASE, i] = 1.0 / dt + (left + right) / mu[i]
        ws[_LO, i] = -left / mu[i - 1] if i > 0 else 0.0
        ws[_UP, i] = -right / mu[i + 1] if i < n - 1 else 0.0


@njit(cache=True, nogil=True)
def _solve_pair(x, y):
    # Thomas on both workspaces in one sweep; the two recurrences are
    # independent, so interleaving them hides the division latency.
    # diag = base + react, rhs already filled; results land in ws[_NEW]
    n = x.shape[1]
    for i in range(n):
        x[_DIAG, i] = x[_BASE, i] + x[_REACT, i]
        y[_DIAG, i] = y[_BASE, i] + y[_REACT, i]
    ix = 1.0 / x[_DIAG, 0]
    iy = 1.0 / y[_DIAG, 0]
    x[_W, 0] = x[_UP, 0] * ix
    y[_W, 0] = y[_UP, 0] * iy
    x[_NEW, 0] = x[_RHS, 0] * ix
    y[_NEW, 0] = y[_RHS, 0] * iy
    for i in range(1, n):
        ix = 1.0 / (x[_DIAG, i] - x[_LO, i] * x[_W, i - 1])
        iy = 1.0 / (y[_DIAG, i] - y[_LO, i] * y[_W, i - 1])
        x[_W, i] = x[_UP, i] * ix
        y[_W, i] = y[_UP, i] * iy
        x[_NEW, i] = (x[_RHS, i] - x[_LO, i] * x[_NEW, i - 1]) * ix
        y[_NEW, i] = (y[_RHS, i] - y[_LO, i] * y[_NEW, i - 1]) * iy
    for i in range(n - 2, -1, -1):
        x[_NEW, i] -= x[_W, i] * x[_NEW, i + 1]
        y[_NEW, i] -= y[_W, i] * y[_NEW, i + 1]


@njit(cache=True, nogil=True)
def _accept(ws):
    # relative sup-norm change of the iterate; copies NEW into CUR
    m = 0.0
    s = 1.0
    for i in range(ws.shape[1]):
        d = abs(ws[_NEW, i] - ws[_CUR, i])
        if d > m:
            m = d
        if abs(ws[_NEW, i]) > s:
            s = abs(ws[_NEW, i])
        ws[_CUR, i] = ws[_NEW, i]
    return m / s


@njit(cache=True, nogil=True)
def _trap_step(n, p, ntr, sn, sp, tau_n, tau_p, eps, dt, tol, max_iter,
               wsn, wsp, out_ntr):
    # sn = 1/(n0 mu_n), sp = 1/(p0 mu_p); carrier iterates live in ws[_CUR]
    size = n.shape[0]
    rn, rp, rdt = 1.0 / tau_n, 1.0 / tau_p, 1.0 / dt
    for it in range(max_iter):
        for i in range(size):
            a = wsn[_CUR, i] * sn[i]
            b = wsp[_CUR, i] * sp[i]
            gain = rp + a * rn
            loss = (1.0 + b) * rp + (1.0 + a) * rn
            t = (eps * ntr[i] + dt * gain) / (eps + dt * loss)
            out_ntr[i] = t
            wsn[_REACT, i] = (1.0 - t) * sn[i] * rn
            wsn[_RHS, i] = n[i] * rdt + t * rn
            wsp[_REACT, i] = t * sp[i] * rp
            wsp[_RHS, i] = p[i] * rdt + (1.0 - t) * rp
        _solve_pair(wsn, wsp)
        change = max(_accept(wsn), _accept(wsp))
        if not np.isfinite(change):
            return NON_FINITE, it + 1
        if change <= tol:
            if max_iter > 1:
                _finish_trap(n, p, ntr, sn, sp, rn, rp, eps, dt, wsn, wsp, out_ntr)
            return OK, it + 1
    return NOT_CONVERGED, max_iter


@njit(cache=True, nogil=True)
def _flux_form(ws, old, dt):
    # x = old + dt * (div F(x) + R) with R stored in ws[_REACT]; the edge
    # flux F_i = w_i (u_{i+1} - u_i) is rebuilt from the stored couplings
    # (lower[i+1] = -w_i / mu_i, upper[i] = -w_i / mu_{i+1}), so the flux
    # differences telescope and the total changes only by dt * sum(R).
    # In place: flux i reads cells i and i+1 before cell i is overwritten.
    n = old.shape[0]
    prev = 0.0
    for i in range(n):
        if i < n - 1:
            flux = ws[_LO, i + 1] * ws[_CUR, i] - ws[_UP, i] * ws[_CUR, i + 1]
        else:
            flux = 0.0
        ws[_CUR, i] = old[i] + dt * (flux - prev + ws[_REACT, i])
        prev = flux


@njit(cache=True, nogil=True)
def _finish_trap(n, p, ntr, sn, sp, rn, rp, eps, dt, wsn, wsp, out_ntr):
    # Once Picard has stopped, the carriers were solved with the occupancy t
    # of the last iterate, the occupancy with the carriers of the one before.
    # Rates are re-evaluated at (carriers, t); carriers are written in flux
    # form and the occupancy from the cellwise charge balance, so the step
    # conserves charge to rounding. Both moves are O(tolerance * dt).
    for i in range(n.shape[0]):
        t = out_ntr[i]
        r_n = (t - wsn[_CUR, i] * sn[i] * (1.0 - t)) * rn
        r_p = (1.0 - t - wsp[_CUR, i] * sp[i] * t) * rp
        wsn[_REACT, i] = r_n
        wsp[_REACT, i] = r_p
        out_ntr[i] = min(max(ntr[i] + dt / eps * (r_p - r_n), 0.0), 1.0)
    _flux_form(wsn, n, dt)
    _flux_form(wsp, p, dt)


@njit(cache=True, nogil=True)
def _finish_srh(n, p, sn, sp, tau_n, tau_p, dt, wsn, wsp):
    # one common rate at the final carriers for both species, flux form
    for i in range(n.shape[0]):
        a = wsn[_CUR, i] * sn[i]
        b = wsp[_CUR, i] * sp[i]
        r = (1.0 - a * b) / (tau_n * (1.0 + b) + tau_p * (1.0 + a))
        wsn[_REACT, i] = r
        wsp[_REACT, i] = r
    _flux_form(wsn, n, dt)
    _flux_form(wsp, p, dt)


@njit(cache=True, nogil=True)
def _srh_step(n, p, sn, sp, tau_n, tau_p, dt, tol, max_iter, wsn, wsp):
    size = n.shape[0]
    rdt = 1.0 / dt
    for it in range(max_iter):
        for i in range(size):
            a = wsn[_CUR, i] * sn[i]
            b = wsp[_CUR, i] * sp[i]
            rden = 1.0 / (tau_n * (1.0 + b) + tau_p * (1.0 + a))
            # numerator 1 - a*b: own-species factor implicit, other frozen
            wsn[_REACT, i] = b * sn[i] * rden
            wsn[_RHS, i] = n[i] * rdt + rden
            wsp[_REACT, i] = a * sp[i] * rden
            wsp[_RHS, i] = p[i] * rdt + rden
        _solve_pair(wsn, wsp)
        change = max(_accept(wsn), _accept(wsp))
        if not np.isfinite(change):
            return NON_FINITE, it + 1
        if change <= tol:
            if max_iter > 1:
                _finish_srh(n, p, sn, sp, tau_n, tau_p, dt, wsn, wsp)
            return OK, it + 1
    return NOT_CONVERGED, max_iter


@njit(cache=True, nogil=True)
def _setup(mu_n, mu_p, wn, wp, n0, p0, dt):
    size = mu_n.shape[0]
    wsn = np.zeros((_N_WORK, size))
    wsp = np.zeros((_N_WORK, size))
    _operator(mu_n, wn, dt, wsn)
    _operator(mu_p, wp, dt, wsp)
    return wsn, wsp, 1.0 / (n0 * mu_n), 1.0 / (p0 * mu_p)


@njit(cache=True, nogil=True)
def step_trap(n, p, ntr, mu_n, mu_p, wn, wp, tau_n, tau_p, n0, p0, eps, dt,
              tol, max_iter, out_n, out_p, out_ntr, guess_n, guess_p):
    """One step; Picard starts from ``guess_n, guess_p`` (nonnegative)."""
    wsn, wsp, sn, sp = _setup(mu_n, mu_p, wn, wp, n0, p0, dt)
    wsn[_CUR] = guess_n
    wsp[_CUR] = guess_p
    status, iters = _trap_step(n, p, ntr, sn, sp, tau_n, tau_p, eps, dt, tol,
                               max_iter, wsn, wsp, out_ntr)
    out_n[:] = wsn[_CUR]
    out_p[:] = wsp[_CUR]
    return status, iters


@njit(cache=True, nogil=True)
def step_srh(n, p, mu_n, mu_p, wn, wp, tau_n, tau_p, n0, p0, dt, tol,
             max_iter, out_n, out_p, guess_n, guess_p):
    wsn, wsp, sn, sp = _setup(mu_n, mu_p, wn, wp, n0, p0, dt)
    wsn[_CUR] = guess_n
    wsp[_CUR] = guess_p
    status, iters = _srh_step(n, p, sn, sp, tau_n, tau_p, dt, tol, max_iter,
                              wsn, wsp)
    out_n[:] = wsn[_CUR]
    out_p[:] = wsp[_CUR]
    return status, iters


@njit(cache=True, nogil=True)
def _advance(ws, cur, use):
    # accept ws[_CUR] as the new state and seed the next iterate by linear
    # extrapolation in time (clipped so it stays admissible); returns the min
    lo = np.inf
    for i in range(cur.shape[0]):
        x = ws[_CUR, i]
        if use:
            ws[_CUR, i] = max(2.0 * x - cur[i], 0.0)
        cur[i] = x
        lo = min(lo, x)
    return lo


@njit(cache=True, nogil=True)
def _track(extremes, lo_n, lo_p, iters):
    extremes[0] = min(extremes[0], lo_n)
    extremes[1] = min(extremes[1], lo_p)
    extremes[4] = max(extremes[4], float(iters))
    extremes[5] += iters


@njit(cache=True, nogil=True)
def run_trap(n, p, ntr, mu_n, mu_p, wn, wp, tau_n, tau_p, n0, p0, eps, dt,
             tol, max_iter, n_steps, output_every, snaps_n, snaps_p,
             snaps_ntr, extremes):
    """Advance ``n_steps`` steps, storing every ``output_every``-th state.

    ``extremes`` receives (min n, min p, min ntr, max ntr, max Picard iters,
    total Picard iters) over all steps. Returns (status, step index of
    failure or n_steps).
    """
    wsn, wsp, sn, sp = _setup(mu_n, mu_p, wn, wp, n0, p0, dt)
    cn = n.copy()
    cp = p.copy()
    ct = ntr.copy()
    nt = np.empty(n.shape[0])
    wsn[_CUR] = cn
    wsp[_CUR] = cp
    use = max_iter > 1
    k_out = 0
    for k in range(n_steps):
        status, iters = _trap_step(cn, cp, ct, sn, sp, tau_n, tau_p, eps, dt,
                                   tol, max_iter, wsn, wsp, nt)
        if status != OK:
            return status, k
        lo_n = _advance(wsn, cn, use)
        lo_p = _advance(wsp, cp, use)
        _track(extremes, lo_n, lo_p, iters)
        for i in range(ct.shape[0]):
            t = nt[i]
            ct[i] = t
            extremes[2] = min(extremes[2], t)
            extremes[3] = max(extremes[3], t)
        if (k + 1) % output_every == 0:
            snaps_n[k_out, :] = cn
            snaps_p[k_out, :] = cp
            snaps_ntr[k_out, :] = ct
            k_out += 1
    return OK, n_steps


@njit(cache=True, nogil=True)
def run_srh(n, p, mu_n, mu_p, wn, wp, tau_n, tau_p, n0, p0, dt, tol,
            max_iter, n_steps, output_every, snaps_n, snaps_p, extremes):
    wsn, wsp, sn, sp = _setup(mu_n, mu_p, wn, wp, n0, p0, dt)
    cn = n.copy()
    cp = p.copy()
    wsn[_CUR] = cn
    wsp[_CUR] = cp
    use = max_iter > 1
    k_out = 0
    for k in range(n_steps):
        status, iters = _srh_step(cn, cp, sn, sp, tau_n, tau_p, dt, tol,
                                  max_iter, wsn, wsp)
        if status != OK:
            return status, k
        lo_n = _advance(wsn, cn, use)
        lo_p = _advance(wsp, cp, use)
        _track(extremes, lo_n, lo_p, iters)
        if (k + 1) % output_every == 0:
            snaps_n[k_out, :] = cn
            snaps_p[k_out, :] = cp
            k_out += 1
    return OK, n_steps
