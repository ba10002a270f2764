"""Uniform 1D cell-centred mesh on the unit interval, potentials and the
equilibrium-preserving two-point flux.

Fields are plain ``numpy`` arrays whose last axis runs over cells; leading axes
are allowed everywhere a batch of fields makes sense.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    n_cells: int
    h: float
    centers: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n_cells < 2:
            raise ValueError(f"n_cells must be >= 2, got {self.n_cells}")
        self.centers.setflags(write=False)

    def check(self, f, name="field"):
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.n_cells:
            raise ValueError(
                f"{name} has {f.shape[-1]} cells, grid has {self.n_cells}")
        if not np.all(np.isfinite(f)):
            raise ValueError(f"{name} contains non-finite values")
        return f


def build_grid(n_cells):
    n_cells = int(n_cells)
    if n_cells < 2:
        raise ValueError(f"n_cells must be >= 2, got {n_cells}")
    h = 1.0 / n_cells
    centers = (np.arange(n_cells) + 0.5) * h
    return Grid1D(n_cells=n_cells, h=h, centers=centers)


def cell_average(f, grid=None):
    """Integral of the piecewise-constant reconstruction over the unit cell
    domain (the mean, since |Omega| = 1)."""
    f = np.asarray(f, dtype=float)
    h = 1.0 / f.shape[-1] if grid is None else grid.h
    return h * np.sum(f, axis=-1)


def l1_distance(f, g, grid=None):
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.ndim and g.ndim and f.shape[-1] != g.shape[-1]:
        raise ValueError("fields live on different grids")
    return cell_average(np.abs(f - g), grid)


def l2_sq(f, grid=None):
    """Squared L2 norm h * sum f**2."""
    return cell_average(np.square(f), grid)


def grad_sq(f, grid):
    """Squared L2 norm of the edge difference quotient, interior edges only."""
    df = np.diff(f, axis=-1)
    return np.sum(df * df, axis=-1) / grid.h


def edge_mean(mu):
    """Geometric mean of neighbouring cell values, one entry per interior edge."""
    mu = np.asarray(mu, dtype=float)
    return np.sqrt(mu[..., :-1] * mu[..., 1:])


def discrete_flux_divergence(f, mu, grid):
    """Cellwise divergence of ``mu * grad(f / mu)`` with zero flux through both
    boundary faces.

    Edge fluxes are ``mu_e * ((f/mu)_{i+1} - (f/mu)_i) / h`` with ``mu_e`` the
    geometric mean, so the result vanishes identically for ``f = c * mu`` and
    sums to zero for any ``f``.
    """
    f = grid.check(f, "f")
    mu = grid.check(mu, "mu")
    if np.any(mu <= 0):
        raise ValueError("mu must be strictly positive")
    u = f / mu
    flux = edge_mean(mu) * np.diff(u, axis=-1) / grid.h
    pad = [(0, 0)] * (flux.ndim - 1) + [(1, 1)]
    flux = np.pad(flux, pad)
    return np.diff(flux, axis=-1) / grid.h


# -- potentials -------------------------------------------------------------

def _constant(x, amplitude):
    return np.full_like(x, amplitude)


def _cosine_well(x, amplitude):
    # minimum at x = 1/2, zero slope at both walls
    return 0.5 * amplitude * (1.0 + np.cos(2.0 * np.pi * x))


def _double_well(x, amplitude):
    # minima at x = 1/4 and x = 3/4
    return 0.5 * amplitude * (1.0 + np.cos(4.0 * np.pi * x))


def _piecewise_linear(x, amplitude):
    # V-shaped, outward slope +2*amplitude at both walls
    return 2.0 * amplitude * np.abs(x - 0.5)


POTENTIALS = {
    "constant": _constant,
    "cosine_well": _cosine_well,
    "double_well": _double_well,
    "piecewise_linear": _piecewise_linear,
}


def evaluate_potential(family, amplitude, grid):
    try:
        fn = POTENTIALS[family]
    except KeyError:
        raise ValueError(
            f"unknown potential family {family!r}; "
            f"choose from {sorted(POTENTIALS)}") from None
    return fn(grid.centers, float(amplitude))


@dataclass(frozen=True)
class PotentialPair:
    """Cell samples of V_n, V_p with the derived Boltzmann factors
    mu = exp(-V) at cells and (geometric mean) at interior edges."""

    grid: Grid1D
    V_n: np.ndarray
    V_p: np.ndarray
    mu_n: np.ndarray = field(init=False, repr=False)
    mu_p: np.ndarray = field(init=False, repr=False)
    mu_n_edge: np.ndarray = field(init=False, repr=False)
    mu_p_edge: np.ndarray = field(init=False, repr=False)
    V: float = field(init=False)

    def __post_init__(self):
        V_n = self.grid.check(self.V_n, "V_n")
        V_p = self.grid.check(self.V_p, "V_p")
        mu_n, mu_p = np.exp(-V_n), np.exp(-V_p)
        derived = {
            "V_n": V_n, "V_p": V_p, "mu_n": mu_n, "mu_p": mu_p,
            "mu_n_edge": np.exp(-0.5 * (V_n[:-1] + V_n[1:])),
            "mu_p_edge": np.exp(-0.5 * (V_p[:-1] + V_p[1:])),
        }
        for name, arr in derived.items():
            arr = np.array(arr, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(
            self, "V", float(max(np.max(np.abs(V_n)), np.max(np.abs(V_p)))))

    @property
    def mu_n_bar(self):
        return float(cell_average(self.mu_n, self.grid))

    @property
    def mu_p_bar(self):
        return float(cell_average(self.mu_p, self.grid))

    @classmethod
    def from_family(cls, grid, family="constant", amplitude=0.0,
                    family_p=None, amplitude_p=None):
        family_p = family if family_p is None else family_p
        amplitude_p = amplitude if amplitude_p is None else amplitude_p
        return cls(grid,
                   evaluate_potential(family, amplitude, grid),
                   evaluate_potential(family_p, amplitude_p, grid))

    @classmethod
    def flat(cls, grid):
        zero = np.zeros(grid.n_cells)
        return cls(grid, zero, zero)
