import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trapdd.dynamics import State, ntr_quasi_equilibrium
from trapdd.entropy import (CSV_COLUMNS, DecayFitError, DiagnosticsRow, ckp_bound,
                            diagnostics_rows, entropy, entropy_production, entropy_srh,
                            equilibrium_entropy, fit_decay_rate, l1_mass_cap,
                            production_srh, relative_entropy, rows_to_arrays,
                            trap_potential, weak_law_residual)
from trapdd.equilibrium import solve_equilibrium
from trapdd.meshfield import cell_average

from conftest import make_params

LN2 = math.log(2.0)


def uniform(prm, n, p, ntr=None):
    k = prm.grid.n_cells
    return State(0.0, np.full(k, float(n)), np.full(k, float(p)),
                 None if ntr is None else np.full(k, float(ntr)))


# -- trap potential ---------------------------------------------------------

def test_trap_potential_values():
    assert trap_potential(0.5) == 0.0
    assert trap_potential(0.0) == pytest.approx(LN2, rel=1e-15)
    assert trap_potential(1.0) == pytest.approx(LN2, rel=1e-15)


def test_trap_potential_total_variation_of_logit():
    # the integral of |ln(s/(1-s))| over [0, 1] is 2 ln 2
    assert trap_potential(0.0) + trap_potential(1.0) == pytest.approx(2 * LN2, rel=1e-15)


def test_trap_potential_derivative_is_logit():
    x = np.linspace(0.05, 0.95, 19)
    h = 1e-6
    deriv = (trap_potential(x + h) - trap_potential(x - h)) / (2 * h)
    np.testing.assert_allclose(deriv, np.log(x / (1 - x)), atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0))
def test_trap_potential_non_negative(x):
    assert trap_potential(x) >= 0.0


@pytest.mark.parametrize("x", [-1e-12, 1.0 + 1e-12, math.nan])
def test_trap_potential_domain(x):
    with pytest.raises(ValueError):
        trap_potential(x)


# -- entropy ----------------------------------------------------------------

def test_entropy_zero_at_reference_state():
    prm = make_params(16, "cosine_well", 1.0, n0=2.0, p0=0.5, eps=0.4)
    s = State(0.0, 2.0 * prm.mu_n, 0.5 * prm.mu_p, np.full(16, 0.5))
    assert abs(entropy(s, prm)) < 1e-14


def test_entropy_with_empty_electrons():
    prm = make_params(8, eps=0.3)
    assert entropy(uniform(prm, 0.0, 1.0, 0.5), prm) == pytest.approx(1.0, rel=1e-14)


def test_entropy_srh_limit():
    prm = make_params(16, "double_well", 1.0)
    s = State(0.0, 1.0 + prm.grid.centers, 2.0 - prm.grid.centers, np.full(16, 0.9))
    assert entropy(s, prm) == entropy_srh(s.n, s.p, prm)


def test_entropy_hand_value_with_trap_term():
    prm = make_params(4, eps=0.5, n0=1.0)
    s = uniform(prm, 2.0, 1.0, 0.25)
    phi = 0.25 * math.log(0.25) + 0.75 * math.log(0.75) + LN2
    assert entropy(s, prm) == pytest.approx(2 * LN2 - 1 + 0.5 * phi, rel=1e-14)


# -- production -------------------------------------------------------------

def test_production_zero_at_equilibrium():
    prm = make_params(32, "piecewise_linear", 1.0, n0=3.0, p0=0.2, eps=0.7)
    eq = solve_equilibrium(prm, 0.6)
    s = State(0.0, eq.n_inf, eq.p_inf, np.full(32, eq.ntr_inf))
    assert abs(entropy_production(s, prm)) < 1e-12
    assert abs(production_srh(eq.n_inf, eq.p_inf, prm.with_eps(0))) < 1e-12


def test_production_uniform_hand_value():
    prm = make_params(8, eps=1.0)
    assert entropy_production(uniform(prm, 2.0, 1.0, 0.5), prm) == pytest.approx(
        0.5 * LN2, rel=1e-14)


def test_production_srh_uniform_hand_value():
    prm = make_params(8)
    # R = (1 - 2)/(2 + 3) = -0.2
    assert production_srh(np.full(8, 2.0), np.full(8, 1.0), prm) == pytest.approx(
        0.2 * LN2, rel=1e-14)


def test_flux_term_uses_logarithmic_mean():
    prm = make_params(6, "cosine_well", 1.2, eps=0.5)
    x = prm.grid.centers
    n = 1.0 + x ** 2
    p = prm.mu_p.copy()
    s = State(0.0, n, p, ntr_quasi_equilibrium(n, p, prm))
    # reaction part vanishes only where ntr balances; compare flux alone
    u = n / prm.mu_n
    du = np.diff(u)
    log_mean = du / np.diff(np.log(u))
    expected = np.sum(prm.potentials.mu_n_edge * du ** 2 / (prm.grid.h * log_mean))
    D = entropy_production(s, prm)
    t = s.ntr
    a, b = n / prm.mu_n, p / prm.mu_p
    rn, rp = t - a * (1 - t), 1 - t - b * t
    reaction = cell_average(-rn * np.log(a * (1 - t) / t) - rp * np.log(b * t / (1 - t)))
    assert D == pytest.approx(expected + reaction, rel=1e-12)


def test_production_singular_flag():
    prm = make_params(8, eps=0.5)
    s = uniform(prm, 1.0, 1.0, 0.5)
    D, flag = entropy_production(s, prm, with_flag=True)
    assert not flag
    zero = State(0.0, np.r_[0.0, np.ones(7)], s.p, s.ntr)
    D, flag = entropy_production(zero, prm, with_flag=True)
    assert flag and np.isfinite(D) and D > 0
    full = State(0.0, s.n, s.p, np.r_[1.0, np.full(7, 0.5)])
    D, flag = entropy_production(full, prm, with_flag=True)
    assert flag and np.isfinite(D)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.01, 1.0]))
def test_production_non_negative(seed, eps):
    rng = np.random.default_rng(seed)
    prm = make_params(12, "double_well", rng.uniform(0, 3), eps=eps,
                      tau_n=rng.uniform(0.1, 5), n0=rng.uniform(0.1, 10))
    n = rng.exponential(1.0, 12) * rng.choice([0.0, 1.0], 12, p=[0.1, 0.9])
    p = rng.exponential(1.0, 12)
    ntr = rng.choice([0.0, 1.0, 0.3], 12) if eps else None
    assert entropy_production(State(0.0, n, p, ntr), prm) >= -1e-12


def test_srh_production_identity(rng):
    prm = make_params(24, "cosine_well", 1.0, tau_n=2.0, tau_p=0.3, n0=0.5, p0=4.0, eps=0.2)
    for _ in range(50):
        n, p = rng.exponential(2.0, (2, 24))
        s = State(0.0, n, p, ntr_quasi_equilibrium(n, p, prm))
        assert production_srh(n, p, prm) == pytest.approx(entropy_production(s, prm),
                                                          rel=1e-10, abs=1e-12)


# -- relative entropy and CKP ----------------------------------------------

def _compatible_state(rng, prm, M):
    k = prm.grid.n_cells
    n = rng.exponential(1.0, k) + 0.5
    ntr = rng.uniform(0.01, 0.99, k)
    shape = rng.exponential(1.0, k) + 0.1
    pbar = cell_average(n) + prm.eps * cell_average(ntr) - M
    return State(0.0, n, shape * pbar / cell_average(shape), ntr)


@pytest.mark.parametrize("eps", [0.0, 0.1, 1.0])
def test_relative_entropy_identity(rng, eps):
    prm = make_params(20, "double_well", 1.0, n0=1.5, p0=0.8, eps=eps, eps0=1.0)
    M = -0.2
    eq = solve_equilibrium(prm, M)
    E_inf = equilibrium_entropy(eq, prm)
    for _ in range(100):
        s = _compatible_state(rng, prm, M)
        assert relative_entropy(s, eq, prm) == pytest.approx(entropy(s, prm) - E_inf,
                                                             abs=1e-10)


def test_relative_entropy_zero_at_equilibrium():
    prm = make_params(20, "cosine_well", 1.0, eps=0.5)
    eq = solve_equilibrium(prm, 0.3)
    s = State(0.0, eq.n_inf, eq.p_inf, np.full(20, eq.ntr_inf))
    assert abs(relative_entropy(s, eq, prm)) < 1e-14
    assert abs(ckp_bound(s, eq, prm)) < 1e-14


def test_relative_entropy_needs_matching_charge():
    prm = make_params(10, eps=0.5)
    eq = solve_equilibrium(prm, 0.0)
    s = uniform(prm, 3.0, 1.0, 0.5)
    gap = relative_entropy(s, eq, prm) - (entropy(s, prm) - equilibrium_entropy(eq, prm))
    assert abs(gap) > 1e-3


def test_ckp_hand_example():
    prm = make_params(10)
    eq = solve_equilibrium(prm, 0.0)
    s = uniform(prm, 2.0, 1.0)
    assert ckp_bound(s, eq, prm) == pytest.approx(3 / 8, rel=1e-14)
    assert relative_entropy(s, eq, prm) == pytest.approx(2 * LN2 - 1, rel=1e-14)
    assert ckp_bound(s, eq, prm) <= relative_entropy(s, eq, prm)


def test_ckp_below_relative_entropy(rng):
    prm = make_params(16, "piecewise_linear", 1.0, n0=0.7, p0=2.0, eps=0.5)
    M = 0.1
    eq = solve_equilibrium(prm, M)
    for _ in range(2000):
        s = _compatible_state(rng, prm, M)
        assert ckp_bound(s, eq, prm) <= relative_entropy(s, eq, prm) + 1e-10


def test_l1_mass_cap_values():
    prm = make_params(8)
    assert l1_mass_cap(prm, 0.0) == pytest.approx(2.5)
    assert l1_mass_cap(prm, 4.0) == pytest.approx(5.5)
    with pytest.raises(ValueError):
        l1_mass_cap(prm, -1.0)


# -- rows, weak law, fits ---------------------------------------------------

def test_csv_columns_order():
    assert ",".join(CSV_COLUMNS) == (
        "t,nbar,pbar,ntrbar,mass,E,D,E_rel,l1_n,l1_p,l1_ntr,ckp,maxn,maxp,singular_flag")


def test_diagnostics_rows_fields():
    prm = make_params(10, eps=0.5)
    eq = solve_equilibrium(prm, 0.25)
    n = np.stack([np.full(10, 2.0), eq.n_inf])
    p = np.stack([np.full(10, 1.0), eq.p_inf])
    ntr = np.stack([np.full(10, 0.5), np.full(10, eq.ntr_inf)])
    rows = diagnostics_rows([0.0, 1.0], n, p, ntr, eq, prm)
    assert all(isinstance(r, DiagnosticsRow) for r in rows)
    r0, r1 = rows
    assert r0.mass == pytest.approx(1.25)
    assert r0.maxn == 2.0 and r0.ntrbar == 0.5
    assert r1.E_rel == pytest.approx(0.0, abs=1e-14)
    assert r1.l1_n == pytest.approx(0.0, abs=1e-14)
    assert r0.singular_flag == 0
    cols = rows_to_arrays(rows)
    np.testing.assert_array_equal(cols["t"], [0.0, 1.0])


def test_srh_rows_report_balanced_occupancy():
    prm = make_params(10)
    eq = solve_equilibrium(prm, 0.0)
    n = np.full((1, 10), 2.0)
    p = np.full((1, 10), 1.0)
    row = diagnostics_rows([0.0], n, p, None, eq, prm)[0]
    assert row.ntrbar == pytest.approx(float(ntr_quasi_equilibrium(2.0, 1.0, prm)[0]))
    assert row.mass == pytest.approx(1.0)


def test_rows_to_arrays_empty():
    cols = rows_to_arrays([])
    assert set(cols) == set(CSV_COLUMNS) and cols["t"].size == 0


def _synthetic(t, E_rel):
    return {"t": np.asarray(t), "E_rel": np.asarray(E_rel)}


def test_fit_exact_exponential():
    t = np.linspace(0, 10, 201)
    fit = fit_decay_rate(_synthetic(t, np.exp(-2 * t)))
    assert fit.K == pytest.approx(2.0, abs=1e-6)
    assert fit.r2 >= 1 - 1e-9
    assert fit.window[0] < fit.window[1]


def test_fit_scaled_exponential():
    t = np.linspace(0, 40, 401)
    fit = fit_decay_rate(_synthetic(t, 5 * np.exp(-0.3 * t)))
    assert fit.K == pytest.approx(0.3, abs=1e-6)
    assert fit.amplitude == pytest.approx(5.0, rel=1e-6)


def test_fit_window_excludes_first_row_and_floor():
    t = np.linspace(0, 20, 201)
    e = np.exp(-2 * t)
    e[0] = 1e6
    fit = fit_decay_rate(_synthetic(t, e))
    assert fit.K == pytest.approx(2.0, abs=1e-6)
    assert np.exp(-2 * fit.window[1]) >= 1e-10


def test_fit_equilibrium_window_too_short():
    t = np.linspace(0, 5, 51)
    with pytest.raises(DecayFitError, match="window too short"):
        fit_decay_rate(_synthetic(t, np.full(51, 1e-12)))
    with pytest.raises(DecayFitError):
        fit_decay_rate(_synthetic(t[:5], np.exp(-t[:5])))


def test_weak_law_residual_exact_for_linear_data():
    rows = [DiagnosticsRow(t, 0, 0, 0, 0, 1.0 - 2 * t, 2.0, 0, 0, 0, 0, 0, 0, 0, 0)
            for t in (0.0, 0.1, 0.3)]
    mid, res = weak_law_residual(rows)
    np.testing.assert_allclose(mid, [0.05, 0.2])
    np.testing.assert_allclose(res, 0.0, atol=1e-14)
