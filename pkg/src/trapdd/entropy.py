"""Discrete entropy, entropy production, relative entropy and the quantities
derived from them along trajectories.

Every functional accepts fields with arbitrary leading (batch) axes; the last
axis runs over cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from operator import attrgetter

import numpy as np

from .dynamics import ntr_quasi_equilibrium
from .meshfield import cell_average, l1_distance

LOG_FLOOR = 1e-300
LOG_CEIL = 1e300
LN2 = math.log(2.0)


class DecayFitError(ValueError):
    pass


@dataclass(frozen=True)
class DiagnosticsRow:
    t: float
    nbar: float
    pbar: float
    ntrbar: float
    mass: float
    E: float
    D: float
    E_rel: float
    l1_n: float
    l1_p: float
    l1_ntr: float
    ckp: float
    maxn: float
    maxp: float
    singular_flag: int


CSV_COLUMNS = tuple(f.name for f in fields(DiagnosticsRow))
row_values = attrgetter(*CSV_COLUMNS)


@dataclass(frozen=True)
class DecayFit:
    K: float
    r2: float
    window: tuple
    amplitude: float
    n_points: int
    decades: float


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, x * np.log(safe), 0.0)


def _safe_log(x):
    x = np.asarray(x, dtype=float)
    singular = (x < LOG_FLOOR) | (x > LOG_CEIL)
    return np.log(np.clip(x, LOG_FLOOR, LOG_CEIL)), singular


def trap_potential(x):
    """Closed form of the integral of ln(s/(1-s)) from 1/2 to x."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1) or np.any(np.isnan(x)):
        raise ValueError("trap_potential is defined on [0, 1] only")
    out = _xlogx(x) + _xlogx(1.0 - x) + LN2
    return float(out) if out.ndim == 0 else out


class _Terms:
    """Clamped logarithms of a (batch of) states, computed once and shared by
    every functional. ``la = ln(n/(n0 mu_n))``, ``lb = ln(p/(p0 mu_p))``,
    ``lt = ln ntr``, ``lt1 = ln(1 - ntr)``; zero arguments are clamped, which
    is harmless wherever the log is multiplied by its own argument."""

    def __init__(self, n, p, ntr, params):
        self.params = params
        self.n = np.asarray(n, dtype=float)
        self.p = np.asarray(p, dtype=float)
        self.a = self.n / (params.n0 * params.mu_n)
        self.b = self.p / (params.p0 * params.mu_p)
        self.la, sa = _safe_log(self.a)
        self.lb, sb = _safe_log(self.b)
        self.singular = sa | sb
        self.ntr = None if ntr is None else np.asarray(ntr, dtype=float)
        if self.ntr is not None:
            self.lt, st = _safe_log(self.ntr)
            self.lt1, st1 = _safe_log(1.0 - self.ntr)
            self.singular = self.singular | st | st1

    def phi(self):
        t = self.ntr
        return t * self.lt + (1.0 - t) * self.lt1 + LN2

    def entropy(self, eps):
        prm = self.params
        dens = (self.n * (self.la - 1.0) + prm.n0 * prm.mu_n
                + self.p * (self.lb - 1.0) + prm.p0 * prm.mu_p)
        if self.ntr is not None and eps > 0:
            dens = dens + eps * self.phi()
        return cell_average(dens)

    def flux(self):
        prm = self.params
        pot = prm.potentials
        h = prm.grid.h
        # u = n/mu differs from a by the constant n0, so diff(ln u) = diff(la)
        un, up = self.n / pot.mu_n, self.p / pot.mu_p
        terms = (pot.mu_n_edge * np.diff(un, axis=-1) * np.diff(self.la, axis=-1)
                 + pot.mu_p_edge * np.diff(up, axis=-1) * np.diff(self.lb, axis=-1))
        return np.sum(terms, axis=-1) / h

    def reaction(self):
        prm = self.params
        t = self.ntr
        rn = (t - self.a * (1.0 - t)) / prm.tau_n
        rp = (1.0 - t - self.b * t) / prm.tau_p
        dens = (-rn * (self.la + self.lt1 - self.lt)
                - rp * (self.lb + self.lt - self.lt1))
        return cell_average(dens)

    def reaction_srh(self):
        prm = self.params
        r = (1.0 - self.a * self.b) / (prm.tau_n * (1.0 + self.b)
                                       + prm.tau_p * (1.0 + self.a))
        return cell_average(-r * (self.la + self.lb))

    def production(self, eps):
        if self.ntr is not None and eps > 0:
            return self.flux() + self.reaction()
        return self.flux() + self.reaction_srh()

    def flag(self):
        return np.any(self.singular, axis=-1)

    def relative(self, eq, eps):
        prm = self.params
        # n ln(n/n_inf) - n + n_inf with n_inf = n_star mu_n
        ln_n = math.log(eq.n_star / prm.n0)
        ln_p = math.log(eq.p_star / prm.p0)
        dens = (self.n * (self.la - ln_n) - self.n + eq.n_inf
                + self.p * (self.lb - ln_p) - self.p + eq.p_inf)
        if self.ntr is not None and eps > 0:
            t_inf = eq.ntr_inf
            logit = math.log(t_inf / (1.0 - t_inf))
            phi_inf = float(_phi(t_inf))
            dens = dens + eps * (self.phi() - phi_inf - logit * (self.ntr - t_inf))
        return cell_average(dens)


def _phi(x):
    return _xlogx(x) + _xlogx(1.0 - x) + LN2


def _trap_field(state, params):
    return state.ntr if params.eps > 0 else None


def entropy(state, params):
    return _Terms(state.n, state.p, _trap_field(state, params), params).entropy(params.eps)


def entropy_srh(n, p, params):
    return _Terms(n, p, None, params).entropy(0.0)


def entropy_production(state, params, with_flag=False):
    """Flux part plus reaction part; both are sums of non-negative terms.

    Zero densities or occupancies in {0, 1} make the exact value infinite;
    logarithm arguments are then clamped and the singular flag is raised.
    For eps = 0 (or a state without trapped states) this is the
    Shockley-Read-Hall production.
    """
    ntr = None if state.ntr is None else _trap_field(state, params)
    terms = _Terms(state.n, state.p, ntr, params)
    D = terms.production(params.eps)
    return (D, terms.flag()) if with_flag else D


def production_srh(n, p, params, with_flag=False):
    terms = _Terms(n, p, None, params)
    D = terms.production(0.0)
    return (D, terms.flag()) if with_flag else D


def relative_entropy(state, eq, params):
    """Entropy relative to ``eq`` in the form that avoids cancellation.

    Equals entropy(state) - entropy(eq) whenever the state carries the same
    charge as the equilibrium.
    """
    ntr = None if state.ntr is None else _trap_field(state, params)
    return _Terms(state.n, state.p, ntr, params).relative(eq, params.eps)


def equilibrium_entropy(eq, params):
    ntr = None if params.eps == 0 else np.full_like(eq.n_inf, eq.ntr_inf)
    return _Terms(eq.n_inf, eq.p_inf, ntr, params).entropy(params.eps)


def _ckp_fields(n, p, ntr, eq, eps):
    nbar, pbar = cell_average(n), cell_average(p)
    ninf, pinf = cell_average(eq.n_inf), cell_average(eq.p_inf)
    value = (3.0 / (2.0 * nbar + 4.0 * ninf) * l1_distance(n, eq.n_inf) ** 2
             + 3.0 / (2.0 * pbar + 4.0 * pinf) * l1_distance(p, eq.p_inf) ** 2)
    if ntr is not None and eps > 0:
        value = value + 2.0 * eps * l1_distance(ntr, eq.ntr_inf) ** 2
    return value


def ckp_bound(state, eq, params):
    """Lower bound on the relative entropy by squared L1 distances."""
    return _ckp_fields(state.n, state.p, state.ntr, eq, params.eps)


def l1_mass_cap(params, E_initial):
    if E_initial < 0:
        raise ValueError("initial entropy must be non-negative")
    pot = params.potentials
    return 2.5 * max(params.n0 * pot.mu_n_bar, params.p0 * pot.mu_p_bar) + 0.75 * E_initial


# -- trajectory diagnostics -------------------------------------------------

def diagnostics_rows(times, n, p, ntr, eq, params):
    """Rows for a stack of snapshots (first axis = output index)."""
    eps = params.eps
    trap = ntr is not None and eps > 0
    terms = _Terms(n, p, ntr if trap else None, params)
    ntr_report = ntr if trap else ntr_quasi_equilibrium(n, p, params)
    nbar, pbar = cell_average(n), cell_average(p)
    ntrbar = cell_average(ntr_report)
    mass = nbar - pbar + (eps * ntrbar if trap else 0.0)
    columns = (
        np.asarray(times, dtype=float), nbar, pbar, ntrbar, mass,
        terms.entropy(eps), terms.production(eps), terms.relative(eq, eps),
        l1_distance(n, eq.n_inf), l1_distance(p, eq.p_inf),
        l1_distance(ntr_report, eq.ntr_inf),
        _ckp_fields(n, p, ntr if trap else None, eq, eps),
        np.max(n, axis=-1), np.max(p, axis=-1),
    )
    table = np.column_stack(columns).tolist()
    flags = terms.flag().astype(int).tolist()
    return [DiagnosticsRow(*row, flag) for row, flag in zip(table, flags)]


def rows_to_arrays(rows):
    if not rows:
        return {name: np.empty(0) for name in CSV_COLUMNS}
    table = np.array([row_values(r) for r in rows], dtype=float)
    return {name: table[:, j] for j, name in enumerate(CSV_COLUMNS)}


def weak_law_residual(rows):
    """Per-interval |(E_{k+1} - E_k)/dt + (D_k + D_{k+1})/2| and interval midpoints."""
    cols = rows_to_arrays(rows)
    t, E, D = cols["t"], cols["E"], cols["D"]
    dt = np.diff(t)
    res = np.abs(np.diff(E) / dt + 0.5 * (D[:-1] + D[1:]))
    return 0.5 * (t[:-1] + t[1:]), res


def fit_decay_rate(rows, floor=1e-10, min_points=10):
    """Least-squares rate of ln(E_rel) over the decay window.

    The window drops the first row and keeps rows with
    floor <= E_rel <= E_rel(first row) / 10.
    """
    if isinstance(rows, dict):
        t, e = np.asarray(rows["t"], float), np.asarray(rows["E_rel"], float)
    else:
        cols = rows_to_arrays(rows)
        t, e = cols["t"], cols["E_rel"]
    if t.size < min_points + 1:
        raise DecayFitError(f"window too short: only {t.size} rows")
    top = e[0] / 10.0
    keep = np.zeros(t.size, dtype=bool)
    keep[1:] = (e[1:] >= floor) & (e[1:] <= top)
    if keep.sum() < min_points:
        raise DecayFitError(
            f"window too short: {int(keep.sum())} usable rows (need {min_points})")
    x, y = t[keep], np.log(e[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 0.0
    return DecayFit(
        K=float(-slope),
        r2=float(min(max(r2, 0.0), 1.0)),
        window=(float(x[0]), float(x[-1])),
        amplitude=float(math.exp(intercept)),
        n_points=int(keep.sum()),
        decades=float((y.max() - y.min()) / math.log(10.0)),
    )
