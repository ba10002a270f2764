"""Trap-assisted drift-diffusion-recombination in 1D.

Modules: ``meshfield`` (grid, potentials, fluxes), ``equilibrium``,
``dynamics`` (implicit time stepping), ``entropy`` (functionals and decay
fits), ``verify`` (sampled functional inequalities) and ``cli``.
"""
__version__ = "0.1.0"
