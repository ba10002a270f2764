import json
import math

import numpy as np
import pytest

from trapdd import verify
from trapdd.dynamics import State, ntr_quasi_equilibrium
from trapdd.entropy import entropy_production, relative_entropy
from trapdd.equilibrium import solve_equilibrium
from trapdd.verify import (AdmissibleState, InfeasibleError, QuadState, eep_ratio,
                           flux_lemma_check, homogeneous_eep_check,
                           indirect_diffusion_check, inhomogeneous_eep_check,
                           iter_admissible, logsob_ratio_check, mass_identity_check,
                           reaction_domination_check, run_check, sample_admissible,
                           sample_admissible_batch, sample_homogeneous, sample_quad)

from conftest import make_params


@pytest.fixture
def wells():
    return make_params(24, "cosine_well", 1.0, n0=1.3, p0=0.6, eps=0.2, eps0=1.0)


# -- sampling ---------------------------------------------------------------

def test_sample_admissible_deterministic(wells):
    a = sample_admissible(wells, 0.3, 4.0, seed=7)
    b = sample_admissible(wells, 0.3, 4.0, seed=7)
    np.testing.assert_array_equal(a.n, b.n)
    np.testing.assert_array_equal(a.ntr, b.ntr)
    c = sample_admissible(wells, 0.3, 4.0, seed=8)
    assert not np.array_equal(a.n, c.n)


@pytest.mark.parametrize("M", [-1.5, 0.0, 0.3])
def test_sample_admissible_constraints(wells, M):
    st = sample_admissible_batch(wells, M, 4.0, 500, seed=1)
    assert len(st) == 500
    assert np.max(st.residual()) <= 1e-12
    assert np.all(st.n > 0) and np.all(st.p > 0)
    assert np.all((st.ntr >= verify.DELTA) & (st.ntr <= 1 - verify.DELTA))
    nbar = st.n.mean(axis=1)
    pbar = st.p.mean(axis=1)
    assert np.all(nbar <= 2.0 + 1e-12) and np.all(pbar <= 4.0 + 1e-12)


def test_sample_admissible_infeasible(wells):
    M1 = 3.0
    with pytest.raises(InfeasibleError):
        sample_admissible(wells, M1 + wells.eps + 1.0, M1, seed=0)
    with pytest.raises(ValueError):
        sample_admissible(wells, 0.0, 0.0, seed=0)


def test_sample_stream_extends(wells):
    short = [b.n for _, b in iter_admissible(wells, 0.1, 3.0, 100, seed=3, chunk=64)]
    long = [b.n for _, b in iter_admissible(wells, 0.1, 3.0, 200, seed=3, chunk=64)]
    np.testing.assert_array_equal(short[0], long[0])
    assert short[1].shape == (36, 24) and long[1].shape == (64, 24)


def test_sample_homogeneous_constraints(wells):
    a, b, c, d = sample_homogeneous(wells, 0.2, 3.0, 1000, seed=2)
    pot = wells.potentials
    charge = wells.n0 * pot.mu_n_bar * a**2 - wells.p0 * pot.mu_p_bar * b**2 + wells.eps * c**2
    np.testing.assert_allclose(charge, 0.2, atol=1e-12)
    np.testing.assert_allclose(c**2 + d**2, 1.0, atol=1e-14)


def test_quad_state_unit_circle():
    with pytest.raises(ValueError):
        QuadState(np.ones(3), np.ones(3), np.ones(3), np.ones(3))
    q = sample_quad(np.random.default_rng(0), 10, 16)
    np.testing.assert_allclose(q.c**2 + q.d**2, 1.0, atol=1e-14)
    assert np.all(q.a > 0) and np.all(q.b > 0)


# -- zero sets --------------------------------------------------------------

@pytest.mark.parametrize("eps", [0.0, 0.01, 1.0])
@pytest.mark.parametrize("family", ["constant", "double_well"])
def test_every_check_vanishes_at_equilibrium(eps, family):
    prm = make_params(20, family, 1.0, n0=2.0, p0=0.3, eps=eps, eps0=1.0)
    M = 0.4
    eq = solve_equilibrium(prm, M)
    st = AdmissibleState(eq.n_inf, eq.p_inf, np.full(20, eq.ntr_inf), M, eps)
    q = QuadState.from_equilibrium(eq, prm)
    lhs, rhs = homogeneous_eep_check(q.a[0], q.b[0], q.c[0], q.d[0], prm, M, eq) \
        if family == "constant" else (0.0, 0.0)
    assert abs(lhs) < 1e-24 and abs(rhs) < 1e-24
    qs = QuadState.from_state(st, prm)
    lhs, rhs = inhomogeneous_eep_check(qs, prm, M, eq)
    assert lhs < 1e-24 and rhs < 1e-24
    rd = reaction_domination_check(st, prm)
    assert max(abs(v) for v in rd) < 1e-24
    assert mass_identity_check(st, eq, prm) < 1e-14
    with pytest.raises(ValueError, match="equilibrium"):
        eep_ratio(st, eq, prm)


def test_homogeneous_equilibrium_point():
    prm = make_params(10, n0=2.0, p0=0.5, eps=0.4)
    M = -0.3
    eq = solve_equilibrium(prm, M)
    nu, pi = math.sqrt(eq.n_star / 2.0), math.sqrt(eq.p_star / 0.5)
    c, d = math.sqrt(eq.ntr_inf), math.sqrt(1 - eq.ntr_inf)
    # ad = c and bc = d at equilibrium
    assert nu * d == pytest.approx(c, rel=1e-12)
    assert pi * c == pytest.approx(d, rel=1e-12)
    lhs, rhs = homogeneous_eep_check(nu, pi, c, d, prm, M)
    assert lhs < 1e-24 and rhs < 1e-24


def test_homogeneous_rejects_wrong_charge():
    prm = make_params(10, eps=0.4)
    with pytest.raises(ValueError, match="charge"):
        homogeneous_eep_check(1.0, 1.0, 0.6, 0.8, prm, 1.0)
    with pytest.raises(ValueError):
        homogeneous_eep_check(1.0, 1.0, 0.6, 0.7, prm, 0.4 * 0.36)


def test_homogeneous_small_rhs_means_small_lhs(wells):
    a, b, c, d = sample_homogeneous(wells, 0.1, 3.0, 20000, seed=5)
    lhs, rhs = homogeneous_eep_check(a, b, c, d, wells, 0.1)
    assert np.all(lhs[rhs < 1e-14] < 1e-10)


def test_inhomogeneous_reduces_to_homogeneous():
    prm = make_params(12, n0=1.5, eps=0.3)
    a, b, c, d = sample_homogeneous(prm, 0.2, 3.0, 5, seed=9)
    for k in range(5):
        q = QuadState(*(np.full(12, v[k]) for v in (a, b, c, d)))
        lhs_i, rhs_i = inhomogeneous_eep_check(q, prm, 0.2)
        lhs_h, rhs_h = homogeneous_eep_check(a[k], b[k], c[k], d[k], prm, 0.2)
        assert lhs_i == pytest.approx(lhs_h, rel=1e-12, abs=1e-15)
        assert rhs_i == pytest.approx(rhs_h, rel=1e-12, abs=1e-15)


def test_inhomogeneous_cap(wells):
    st = sample_admissible_batch(wells, 0.1, 3.0, 4, seed=0)
    q = QuadState.from_state(st, wells)
    inhomogeneous_eep_check(q, wells, 0.1, M1=3.0)
    with pytest.raises(ValueError, match="cap"):
        inhomogeneous_eep_check(q, wells, 0.1, M1=1e-3)


def test_indirect_diffusion_special_cases():
    k = 16
    x = (np.arange(k) + 0.5) / k
    theta = 0.3 + 0.2 * x
    a = 1 + x
    lc, rc, ld, rd = indirect_diffusion_check(
        QuadState(a, np.full(k, 2.0), np.full(k, 0.6), np.full(k, 0.8)))
    assert lc == 0 <= rc and ld == 0 <= rd
    s = np.full(k, 1 / math.sqrt(2))
    lc, rc, ld, rd = indirect_diffusion_check(QuadState(a, a, s, np.sqrt(1 - s**2)))
    assert ld < 1e-30
    lc, rc, ld, rd = indirect_diffusion_check(
        QuadState(a, a, np.cos(theta), np.sin(theta)))
    assert lc <= rc and ld <= rd


def test_indirect_diffusion_factor_four_random():
    q = sample_quad(np.random.default_rng(11), 20000, 32)
    lc, rc, ld, rd = indirect_diffusion_check(q)
    assert np.all(lc <= rc) and np.all(ld <= rd)


def test_flux_lemma_examples():
    grid = make_params(64).grid
    x = grid.centers
    g = 1.0 + 0.5 * np.sin(5 * x)
    lhs, rhs = flux_lemma_check(3.0 * g, g, grid)
    assert lhs < 1e-28 and rhs < 1e-28
    f = np.exp(np.cos(4 * x))
    lhs, rhs = flux_lemma_check(f, np.ones(64), grid)
    assert lhs < 1e-28 and rhs > 0
    lhs, rhs = flux_lemma_check(f, g, grid)
    assert np.isfinite(lhs / rhs)
    with pytest.raises(ValueError):
        flux_lemma_check(f, g - 2, grid)


def test_logsob_examples(rng):
    prm = make_params(40, "cosine_well", 1.0)
    lhs, rhs = logsob_ratio_check(2.5 * prm.mu_n, prm)
    assert abs(lhs) < 1e-15 and abs(rhs) < 1e-12
    n = rng.exponential(1.0, (500, 40))
    lhs, rhs = logsob_ratio_check(n, prm)
    assert np.all(lhs >= -1e-12) and np.all(rhs >= 0)
    with pytest.raises(ValueError):
        logsob_ratio_check(np.zeros(40), prm)


def test_reaction_domination_at_balanced_occupancy(wells, rng):
    n, p = rng.exponential(1.0, (2, 24))
    t = ntr_quasi_equilibrium(n, p, wells)
    rd = reaction_domination_check(AdmissibleState(n, p, t, 0.0, wells.eps), wells)
    a = n / (wells.n0 * wells.mu_n)
    # at balance tau_n R_n and tau_p R_p are tied by the ratio of the taus
    r = (t - a * (1 - t)) / wells.tau_n
    assert np.all(np.isfinite(r))
    assert rd.lhs_n <= rd.rhs_n and rd.lhs_p <= rd.rhs_p


def test_reaction_domination_rejects_boundary(wells):
    st = AdmissibleState(np.ones(24), np.ones(24), np.r_[0.0, np.full(23, 0.5)], 0.0, 0.2)
    with pytest.raises(ValueError, match="interior"):
        reaction_domination_check(st, wells)


def test_mass_identity_symmetric_params(rng):
    prm = make_params(10)
    eq = solve_equilibrium(prm, 0.0)
    st = AdmissibleState(rng.exponential(1, 10), rng.exponential(1, 10),
                         rng.uniform(0, 1, 10), 0.0, 0.0)
    assert mass_identity_check(st, eq, prm) < 1e-12


def test_mass_identity_sampled(wells):
    M = 0.25
    eq = solve_equilibrium(wells, M)
    st = sample_admissible_batch(wells, M, 3.0, 10000, seed=4)
    assert np.max(mass_identity_check(st, eq, wells)) <= 1e-10


# -- eep ratio --------------------------------------------------------------

def test_eep_ratio_homogeneous_scalar_oracle():
    # V = 0, n = 2 n0 uniform: all integrals collapse to one cell
    prm = make_params(8, n0=1.0, p0=1.0, eps=0.5, tau_n=1.0, tau_p=2.0)
    n, p, t = 2.0, 0.7, 0.4
    M = n - p + 0.5 * t
    eq = solve_equilibrium(prm, M)
    st = AdmissibleState(np.full(8, n), np.full(8, p), np.full(8, t), M, 0.5)
    ns, ps, ti = eq.n_star, eq.p_star, eq.ntr_inf

    def phi(x):
        return x * math.log(x) + (1 - x) * math.log(1 - x) + math.log(2)

    E_rel = (n * math.log(n / ns) - n + ns + p * math.log(p / ps) - p + ps
             + 0.5 * (phi(t) - phi(ti) - math.log(ti / (1 - ti)) * (t - ti)))
    Rn = t - n * (1 - t)
    Rp = (1 - t - p * t) / 2.0
    D = -Rn * math.log(n * (1 - t) / t) - Rp * math.log(p * t / (1 - t))
    assert eep_ratio(st, eq, prm) == pytest.approx(E_rel / D, rel=1e-12)


def test_eep_ratio_batch_finite(wells):
    M = 0.1
    eq = solve_equilibrium(wells, M)
    st = sample_admissible_batch(wells, M, 3.0, 2000, seed=6)
    r = eep_ratio(st, eq, wells)
    assert np.all(np.isfinite(r)) and np.all(r >= 0)
    np.testing.assert_allclose(
        r, relative_entropy(st, eq, wells) / entropy_production(st, wells))


def test_eep_ratio_flags_zero_production(wells):
    # a state with D = 0 but E_rel > 0 is impossible for true solutions;
    # a forged one must come out as +inf
    eq = solve_equilibrium(wells, 0.0)
    other = solve_equilibrium(wells, 0.5)
    st = State(0.0, other.n_inf, other.p_inf, np.full(24, other.ntr_inf))
    batch = AdmissibleState(st.n[None], st.p[None], st.ntr[None], 0.0, wells.eps)
    assert np.isinf(eep_ratio(batch, eq, wells)[0])


# -- suites -----------------------------------------------------------------

@pytest.mark.parametrize("check", verify.EXACT_CHECKS + verify.EMPIRICAL_CHECKS)
def test_run_check_small(wells, check):
    res = run_check(check, wells, 0.1, 3.0, 300, seed=1, chunk=128)
    assert res.n_samples == 300 and res.n_violations == 0
    assert res.exact == (check in verify.EXACT_CHECKS)
    if not res.exact:
        assert 0 < res.sup_ratio < math.inf and res.n_evaluated > 0


@pytest.mark.parametrize("check", verify.EXACT_CHECKS)
def test_exact_checks_hold_without_traps(check):
    prm = make_params(24, "cosine_well", 1.0, n0=1.3, p0=0.6, eps=0.0, eps0=1.0)
    res = run_check(check, prm, 0.1, 3.0, 4000, seed=3)
    assert res.n_samples == 4000 and res.n_violations == 0


def test_run_check_unknown(wells):
    with pytest.raises(ValueError):
        run_check("nope", wells, 0.1, 3.0, 10)


def test_run_check_records_violation_dump(wells, monkeypatch):
    monkeypatch.setattr(verify, "ckp_bound", lambda st, eq, prm: np.full(len(st), 1e9))
    res = run_check("ckp", wells, 0.1, 3.0, 5, seed=2)
    assert res.n_violations == 5
    doc = json.loads(res.violations[0].to_json())
    assert doc["check"] == "ckp" and doc["seed"] == 2
    assert len(doc["fields"]["n"]) == 24 and doc["params"]["eps"] == wells.eps
