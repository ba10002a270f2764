"""Model parameters and the unique positive equilibrium for a given charge."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .meshfield import PotentialPair, cell_average


class EquilibriumError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimParams:
    """Recombination constants, relaxation parameter and potentials.

    ``eps = 0`` selects the Shockley-Read-Hall model. ``eps0`` is the cap of
    the relaxation range and enters only the explicit equilibrium bounds.
    """

    potentials: PotentialPair
    tau_n: float = 1.0
    tau_p: float = 1.0
    n0: float = 1.0
    p0: float = 1.0
    eps: float = 0.0
    eps0: float | None = None

    def __post_init__(self):
        for name in ("tau_n", "tau_p", "n0", "p0"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if not (math.isfinite(self.eps) and self.eps >= 0):
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.eps0 is None:
            object.__setattr__(self, "eps0", self.eps if self.eps > 0 else 1.0)
        if not self.eps0 >= self.eps:
            raise ValueError(f"eps={self.eps} exceeds eps0={self.eps0}")

    @property
    def grid(self):
        return self.potentials.grid

    @property
    def mu_n(self):
        return self.potentials.mu_n

    @property
    def mu_p(self):
        return self.potentials.mu_p

    def to_dict(self):
        return {
            "tau_n": self.tau_n, "tau_p": self.tau_p, "n0": self.n0,
            "p0": self.p0, "eps": self.eps, "eps0": self.eps0,
            "n_cells": self.grid.n_cells,
            "V_n": self.potentials.V_n.tolist(),
            "V_p": self.potentials.V_p.tolist(),
        }

    def with_eps(self, eps):
        return SimParams(self.potentials, self.tau_n, self.tau_p, self.n0,
                         self.p0, float(eps), max(self.eps0, float(eps)))


@dataclass(frozen=True)
class EquilibriumState:
    n_star: float
    p_star: float
    ntr_inf: float
    M: float
    eps: float
    n_inf: np.ndarray = field(repr=False)
    p_inf: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "n_star": self.n_star,
            "p_star": self.p_star,
            "ntr_inf": self.ntr_inf,
            "M": self.M,
            "eps": self.eps,
            "n_inf": self.n_inf.tolist(),
            "p_inf": self.p_inf.tolist(),
        }


def _mass_function(params, eps):
    mun, mup = params.potentials.mu_n_bar, params.potentials.mu_p_bar
    npq = params.n0 * params.p0

    def f(x):
        value = x * mun - npq * mup / x
        if eps > 0:
            value += eps * x / (x + params.n0)
        return value

    return f


def equilibrium_bounds(params, M, species="n"):
    """Explicit uniform-in-eps bounds ``alpha <= x_star <= beta``.

    For ``species="p"`` the roles of (n0, mu_n) and (p0, mu_p) are swapped and
    the charge changes sign.
    """
    if species == "n":
        own, other = params.potentials.mu_n_bar, params.potentials.mu_p_bar
    elif species == "p":
        own, other = params.potentials.mu_p_bar, params.potentials.mu_n_bar
    else:
        raise ValueError("species must be 'n' or 'p'")
    ratio = params.n0 * params.p0 * other / own
    beta = (abs(M) + params.eps0) / own + math.sqrt(ratio)
    alpha = ratio / beta
    return alpha, beta


def solve_equilibrium(params, M, rtol=1e-13):
    """Bisection for n_star on the strictly increasing charge function.

    The bracket is the explicit [alpha, beta] pair widened by a factor 10.
    """
    M = float(M)
    if not math.isfinite(M):
        raise ValueError(f"charge must be finite, got {M}")
    eps = params.eps
    f = _mass_function(params, eps)
    alpha, beta = equilibrium_bounds(params, M)
    lo, hi = alpha / 10.0, beta * 10.0
    if not (f(lo) <= M <= f(hi)):
        raise EquilibriumError(
            f"charge {M} not bracketed by [{lo}, {hi}] "
            f"(f(lo)={f(lo)}, f(hi)={f(hi)})")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) < M:
            lo = mid
        else:
            hi = mid
    n_star = 0.5 * (lo + hi)
    p_star = params.n0 * params.p0 / n_star
    ntr_inf = n_star / (n_star + params.n0)
    return EquilibriumState(
        n_star=n_star,
        p_star=p_star,
        ntr_inf=ntr_inf,
        M=M,
        eps=eps,
        n_inf=n_star * params.mu_n,
        p_inf=p_star * params.mu_p,
    )


def equilibrium_mass(state, params):
    """Charge n* mean(mu_n) - p* mean(mu_p) + eps ntr_inf of stored constants."""
    return (state.n_star * params.potentials.mu_n_bar
            - state.p_star * params.potentials.mu_p_bar
            + params.eps * state.ntr_inf)


def discrete_mass(state_eq, params):
    """Charge recomputed from the stored profiles with discrete averages."""
    grid = params.grid
    return (cell_average(state_eq.n_inf, grid) - cell_average(state_eq.p_inf, grid)
            + params.eps * state_eq.ntr_inf)
