"""Reaction rates and implicit time stepping for the trapped-state system
(eps > 0) and its Shockley-Read-Hall limit (eps = 0)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .equilibrium import solve_equilibrium
from .meshfield import cell_average


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class State:
    t: float
    n: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    ntr: np.ndarray | None = field(default=None, repr=False)

    def mass(self, eps):
        m = cell_average(self.n) - cell_average(self.p)
        if self.ntr is not None:
            m += eps * cell_average(self.ntr)
        return float(m)

    def check_box(self):
        if np.any(self.n < 0) or np.any(self.p < 0):
            raise ValueError("densities must be non-negative")
        if self.ntr is not None and (np.any(self.ntr < 0) or np.any(self.ntr > 1)):
            raise ValueError("trapped-state occupancy must lie in [0, 1]")


@dataclass(frozen=True)
class StepperConfig:
    dt: float = 1e-3
    t_end: float = 20.0
    output_every: int = 10
    linear_tol: float = 1e-12
    max_picard: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_end >= 0:
            raise ValueError(f"t_end must be >= 0, got {self.t_end}")
        if self.output_every < 1:
            raise ValueError("output_every must be >= 1")
        if self.max_picard < 1:
            raise ValueError("max_picard must be >= 1")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


# -- rates ------------------------------------------------------------------

def rate_Rn(n, ntr, params):
    a = np.asarray(n) / (params.n0 * params.mu_n)
    return (ntr - a * (1.0 - ntr)) / params.tau_n


def rate_Rp(p, ntr, params):
    b = np.asarray(p) / (params.p0 * params.mu_p)
    return (1.0 - ntr - b * ntr) / params.tau_p


def ntr_quasi_equilibrium(n, p, params):
    """Occupancy solving R_n(n, ntr) = R_p(p, ntr) cellwise."""
    a = np.asarray(n) / (params.n0 * params.mu_n)
    b = np.asarray(p) / (params.p0 * params.mu_p)
    num = params.tau_n + params.tau_p * a
    return num / (params.tau_n + params.tau_p + params.tau_n * b + params.tau_p * a)


def rate_srh(n, p, params):
    a = np.asarray(n) / (params.n0 * params.mu_n)
    b = np.asarray(p) / (params.p0 * params.mu_p)
    return (1.0 - a * b) / (params.tau_n * (1.0 + b) + params.tau_p * (1.0 + a))


# -- steppers ---------------------------------------------------------------

def _edge_weights(params):
    h = params.grid.h
    pot = params.potentials
    return pot.mu_n_edge / h**2, pot.mu_p_edge / h**2


def _tol(cfg):
    # a single Picard pass is the plain split scheme
    return math.inf if cfg.max_picard == 1 else cfg.linear_tol


def _raise(status, where):
    if status == _kernels.NON_FINITE:
        raise SolverError(f"non-finite values produced {where}")
    raise SolverError(f"Picard iteration did not converge {where}")


def step(state, params, cfg):
    """One backward-Euler step of the trapped-state system (eps > 0)."""
    if params.eps <= 0:
        raise ValueError("step requires eps > 0; use step_srh for eps = 0")
    if state.ntr is None:
        raise ValueError("state has no trapped-state field")
    wn, wp = _edge_weights(params)
    size = params.grid.n_cells
    out_n, out_p, out_ntr = np.empty(size), np.empty(size), np.empty(size)
    status, _ = _kernels.step_trap(
        np.ascontiguousarray(state.n, float), np.ascontiguousarray(state.p, float),
        np.ascontiguousarray(state.ntr, float), params.mu_n, params.mu_p, wn, wp,
        params.tau_n, params.tau_p, params.n0, params.p0, params.eps, cfg.dt,
        _tol(cfg), cfg.max_picard, out_n, out_p, out_ntr,
        np.ascontiguousarray(state.n, float), np.ascontiguousarray(state.p, float))
    if status != _kernels.OK:
        _raise(status, f"at t={state.t}")
    return State(state.t + cfg.dt, out_n, out_p, out_ntr)


def step_srh(state, params, cfg):
    """One backward-Euler step of the Shockley-Read-Hall system (eps = 0)."""
    wn, wp = _edge_weights(params)
    size = params.grid.n_cells
    out_n, out_p = np.empty(size), np.empty(size)
    status, _ = _kernels.step_srh(
        np.ascontiguousarray(state.n, float), np.ascontiguousarray(state.p, float),
        params.mu_n, params.mu_p, wn, wp, params.tau_n, params.tau_p,
        params.n0, params.p0, cfg.dt, _tol(cfg), cfg.max_picard, out_n, out_p,
        np.ascontiguousarray(state.n, float), np.ascontiguousarray(state.p, float))
    if status != _kernels.OK:
        _raise(status, f"at t={state.t}")
    return State(state.t + cfg.dt, out_n, out_p, None)


@dataclass
class Trajectory:
    rows: list
    final: State
    eq: object
    times: np.ndarray
    n: np.ndarray
    p: np.ndarray
    ntr: np.ndarray | None
    min_n: float = math.inf
    min_p: float = math.inf
    min_ntr: float = math.inf
    max_ntr: float = -math.inf
    max_picard_iters: int = 0
    total_picard_iters: int = 0

    def states(self):
        for k, t in enumerate(self.times):
            yield State(float(t), self.n[k], self.p[k],
                        None if self.ntr is None else self.ntr[k])


def simulate(initial, params, cfg, eq=None):
    """Integrate from ``initial`` to ``cfg.t_end``.

    Diagnostics rows are recorded at t = 0 and after every ``output_every``
    steps. A final partial stride is integrated into ``final`` but gets no
    row. The equilibrium is solved for the initial charge unless given.
    """
    from .entropy import diagnostics_rows

    eps = params.eps
    trap = eps > 0
    n_init = np.array(initial.n, dtype=float)
    p_init = np.array(initial.p, dtype=float)
    if trap:
        ntr_init = (ntr_quasi_equilibrium(n_init, p_init, params)
                    if initial.ntr is None else np.array(initial.ntr, dtype=float))
    else:
        ntr_init = None
    start = State(initial.t, n_init, p_init, ntr_init)
    start.check_box()
    if eq is None:
        eq = solve_equilibrium(params, start.mass(eps))

    n_steps = cfg.n_steps
    if n_steps == 0:
        return Trajectory([], start, eq, np.empty(0), np.empty((0, n_init.size)),
                          np.empty((0, n_init.size)), None)

    n_out = n_steps // cfg.output_every
    size = n_init.size
    snaps_n = np.empty((n_out + 1, size))
    snaps_p = np.empty((n_out + 1, size))
    snaps_n[0], snaps_p[0] = n_init, p_init
    extremes = np.array([n_init.min(), p_init.min(), math.inf, -math.inf, 0.0, 0.0])
    wn, wp = _edge_weights(params)
    tol = _tol(cfg)
    if trap:
        snaps_ntr = np.empty((n_out + 1, size))
        snaps_ntr[0] = ntr_init
        extremes[2], extremes[3] = ntr_init.min(), ntr_init.max()
        status, k_fail = _kernels.run_trap(
            n_init, p_init, ntr_init, params.mu_n, params.mu_p, wn, wp,
            params.tau_n, params.tau_p, params.n0, params.p0, eps, cfg.dt, tol,
            cfg.max_picard, n_steps, cfg.output_every, snaps_n[1:], snaps_p[1:],
            snaps_ntr[1:], extremes)
    else:
        snaps_ntr = None
        status, k_fail = _kernels.run_srh(
            n_init, p_init, params.mu_n, params.mu_p, wn, wp, params.tau_n,
            params.tau_p, params.n0, params.p0, cfg.dt, tol, cfg.max_picard,
            n_steps, cfg.output_every, snaps_n[1:], snaps_p[1:], extremes)
    if status != _kernels.OK:
        _raise(status, f"in step {k_fail} (t={initial.t + k_fail * cfg.dt:g}, eps={eps})")

    times = initial.t + cfg.dt * cfg.output_every * np.arange(n_out + 1)
    rows = diagnostics_rows(times, snaps_n, snaps_p, snaps_ntr, eq, params)

    # the last step may not land on an output stride
    if n_steps % cfg.output_every:
        tail = replace(cfg, t_end=(n_steps % cfg.output_every) * cfg.dt,
                       output_every=n_steps % cfg.output_every)
        last = State(float(times[-1]), snaps_n[-1], snaps_p[-1],
                     None if snaps_ntr is None else snaps_ntr[-1])
        rest = simulate(last, params, tail, eq=eq)
        final = rest.final
        extremes[0] = min(extremes[0], rest.min_n)
        extremes[1] = min(extremes[1], rest.min_p)
        extremes[2] = min(extremes[2], rest.min_ntr)
        extremes[3] = max(extremes[3], rest.max_ntr)
        extremes[4] = max(extremes[4], rest.max_picard_iters)
        extremes[5] += rest.total_picard_iters
    else:
        final = State(float(initial.t + n_steps * cfg.dt), snaps_n[-1].copy(),
                      snaps_p[-1].copy(),
                      None if snaps_ntr is None else snaps_ntr[-1].copy())

    return Trajectory(
        rows=rows, final=final, eq=eq, times=times, n=snaps_n, p=snaps_p,
        ntr=snaps_ntr, min_n=float(extremes[0]), min_p=float(extremes[1]),
        min_ntr=float(extremes[2]), max_ntr=float(extremes[3]),
        max_picard_iters=int(extremes[4]), total_picard_iters=int(extremes[5]))
