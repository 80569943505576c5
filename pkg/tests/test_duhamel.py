import numpy as np
import pytest
from scipy.linalg import expm

from bbm_gibbs import spectral as sp
from bbm_gibbs.duhamel import (
    ContractionFailure,
    calibrate_horizon,
    contraction_factor,
    flow_convergence,
    picard_duhamel,
    semigroup,
    semigroup_growth,
)
from bbm_gibbs.flows import FlowSpec, evolve
from bbm_gibbs.measures import mu, sample_members
from bbm_gibbs.operators import build_d_n
from bbm_gibbs.potential import Potential

V01 = Potential.cosine(0.1)
S = 0.4


def unit_hs(N, seed, s=S):
    rng = np.random.default_rng(seed)
    u = sp.SpectralField(rng.standard_normal(sp.dim(N)) * sp.h_multiplier(N, -1.0))
    return u / sp.sobolev_norm(u, s)


def test_semigroup_matches_expm():
    for V in (None, V01):
        spec = FlowSpec("galerkin-bbm", 6) if V is None else FlowSpec("perturbed", 6, V=V)
        D = sp.k_matrix(6) if V is None else build_d_n(V, 6).matrix
        np.testing.assert_allclose(semigroup(spec, 0.7), expm(-0.7 * D), atol=1e-13)


def test_semigroup_growth_rate():
    times = np.linspace(-5, 5, 11)
    assert semigroup_growth(FlowSpec("galerkin-bbm", 8), times) == pytest.approx(0.0, abs=1e-12)
    # V_N conjugation bounds the growth: |exp(-tD_N)| <= |V_N^{-1}| |V_N| uniformly in t
    c = semigroup_growth(FlowSpec("perturbed", 8, V=V01), times)
    assert 0 <= c < 0.1


@pytest.mark.parametrize("kind", ["galerkin-bbm", "perturbed"])
def test_small_data_is_linear(kind):
    spec = FlowSpec(kind, 8, V=V01 if kind == "perturbed" else None)
    u0 = unit_hs(8, 1) * 1e-6
    res = picard_duhamel(spec, u0, 0.5)
    lin = semigroup(spec, 0.5) @ u0.coeffs
    assert sp.l2_norm(res.field - sp.SpectralField(lin)) <= 1e-6 * sp.l2_norm(u0)


@pytest.mark.parametrize("kind", ["galerkin-bbm", "perturbed"])
def test_agrees_with_midpoint(kind):
    spec = FlowSpec(kind, 8, V=V01 if kind == "perturbed" else None)
    u0 = unit_hs(8, 2)
    res = picard_duhamel(spec, u0, 0.05)
    ref = evolve(spec.with_(dt=1e-4), u0, t_end=0.05).final
    assert sp.l2_norm(res.field - ref) <= 1e-6
    assert res.contraction <= 0.5
    assert res.richardson_error <= 1e-8


def test_composite_tail_exact():
    spec = FlowSpec("composite-bbm", 4, N_tail=4)
    u0 = unit_hs(8, 3)
    res = picard_duhamel(spec, u0, 0.3)
    ref = evolve(spec.with_(dt=1e-4), u0, t_end=0.3).final
    assert sp.l2_norm(res.field - ref) <= 1e-6


def test_horizon_calibration_and_contraction():
    spec = FlowSpec("galerkin-bbm", 8)
    u0 = unit_hs(8, 4) * 4.0
    hz = calibrate_horizon(spec, u0, S)
    assert hz.bracketed
    assert hz.R == pytest.approx(4.0)
    assert hz.horizon(hz.R) == pytest.approx(hz.T, rel=1e-12)
    assert contraction_factor(spec, u0, 0.5 * hz.T) <= 0.5
    assert contraction_factor(spec, u0, 4 * hz.T) > 0.5


def test_contraction_failure_reports_factor():
    spec = FlowSpec("galerkin-bbm", 8)
    u0 = unit_hs(8, 5) * 50.0
    with pytest.raises(ContractionFailure) as err:
        picard_duhamel(spec, u0, 20.0)
    assert err.value.factor > 0.5


def test_horizon_shrinks_with_size():
    spec = FlowSpec("galerkin-bbm", 8)
    u0 = unit_hs(8, 6)
    T1 = calibrate_horizon(spec, u0 * 2.0, S).T
    T2 = calibrate_horizon(spec, u0 * 8.0, S).T
    assert T2 < T1


# -- Galerkin convergence -----------------------------------------------------------


def test_convergence_mu_samples():
    u0 = sample_members(mu(64), 0, np.arange(4))
    rep = flow_convergence(u0, [8, 16, 32], 0.05, FlowSpec("galerkin-bbm", 8, dt=5e-3), N_ref=64)
    err = rep.estimates["error"]
    assert rep.passed and np.all(np.diff(err, axis=0) < 0)


def test_convergence_rate_deterministic_profile():
    L = 128
    n = sp.mode_numbers(L)
    u0 = sp.SpectralField((1 + n**2) ** (-(S + 0.5) / 2))
    rep = flow_convergence(u0, [8, 16, 32], 0.05, FlowSpec("galerkin-bbm", 8, dt=5e-3), N_ref=L, s=S)
    assert rep.passed
    # the loss of N^{-s} is an upper bound; the observed decay is faster
    assert rep.fits["decay_exponent"] <= -S + 0.3


def test_convergence_zero_at_start_and_band_limited_data():
    u0 = sp.SpectralField(sp.pad(unit_hs(4, 7).coeffs, 32))
    rep = flow_convergence(u0, [8, 16], 0.0, FlowSpec("galerkin-bbm", 8), N_ref=32)
    assert np.all(rep.estimates["error"] == 0)
