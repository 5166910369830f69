import numpy as np
import pytest
from scipy.special import ive

from roetrace import (build_space, chebyshev_operator, diagonal_heat,
                      gaussian_decay_check, heat_filter, heat_operator,
                      hutchinson_theta, schur_bound, theta, theta_value)
from roetrace.spectral import hodge_laplacian


def oracle_z1(t):
    """Return probability of the continuous-time walk: e^{-2t} I_0(2t)."""
    return float(ive(0, 2.0 * t))


def test_filter_accuracy_on_grid():
    filt = heat_filter(4.0, 2.0, eps_target=1e-12)
    lam = np.linspace(0.0, 4.0, 2001)
    x = 2.0 * lam / 4.0 - 1.0
    acc = np.polynomial.chebyshev.chebval(x, filt.coeffs)
    assert np.max(np.abs(acc - np.exp(-2.0 * lam))) <= filt.error_bound + 1e-14
    assert filt.error_bound <= 1e-12


def test_filter_input_validation():
    with pytest.raises(ValueError):
        heat_filter(4.0, -1.0)
    with pytest.raises(ValueError):
        heat_filter(4.0, 1.0, eps_target=1e-20)


def test_theta_z1_oracle():
    spc = build_space("lattice", d=1, window=32)
    delta = hodge_laplacian(spc, 0)
    for t in (0.5, 1.0, 2.0, 4.0, 8.0):
        val, err = theta_value(delta, t)
        assert abs(val - oracle_z1(t)) <= max(err, 1e-10)


def test_theta_z2_product_formula():
    spc = build_space("lattice", d=2, window=8)
    delta = hodge_laplacian(spc, 0)
    for t in (0.5, 2.0, 8.0):
        val, err = theta_value(delta, t)
        assert abs(val - oracle_z1(t) ** 2) <= max(err, 1e-9)


def test_theta_strip_continuum_asymptotics():
    spc = build_space("strip", length=4.0, mesh=0.05)
    delta = hodge_laplacian(spc, 0)
    for t in (0.5, 1.0, 2.0):
        val, _ = theta_value(delta, t)
        cont = (4.0 * np.pi * t) ** -0.5
        assert val == pytest.approx(cont, rel=2e-3)


def test_theta_decreasing_and_positive():
    spc = build_space("lattice", d=1, window=16)
    delta = hodge_laplacian(spc, 0)
    ts = np.geomspace(0.25, 64.0, 10)
    vals, errs = theta(delta, ts)
    assert np.all(vals > 0)
    assert np.all(np.diff(vals) < 0)
    assert np.all(errs < 1e-11)


def test_diagonal_matches_fast_path():
    spc = build_space("lattice", d=1, window=40)
    delta = hodge_laplacian(spc, 0)
    samp = diagonal_heat(delta, 1.5)
    fast, _ = theta_value(delta, 1.5)
    assert samp.theta == pytest.approx(fast, abs=1e-11)


def test_translation_invariance_of_diagonal():
    spc = build_space("lattice", d=1, window=48)
    delta = hodge_laplacian(spc, 0)
    interior = np.flatnonzero(spc.grade <= 5)
    samp = diagonal_heat(delta, 1.0, sites=interior)
    assert np.ptp(samp.diag) < 1e-12


def test_semigroup_property():
    spc = build_space("lattice", d=1, window=60)
    delta = hodge_laplacian(spc, 0)
    e1 = heat_operator(delta, 0.5, eps=1e-10)
    e2 = heat_operator(delta, 0.7, eps=1e-10)
    e12 = heat_operator(delta, 1.2, eps=1e-10)
    from dataclasses import replace
    from roetrace import add, compose
    diff = replace(add(compose(e1, e2), e12, beta=-1.0), self_adjoint=True)
    assert schur_bound(diff, interior_only=True) <= 2 * (1e-10 + 1e-10) + 1e-9


def test_gaussian_decay():
    spc = build_space("lattice", d=1, window=64)
    delta = hodge_laplacian(spc, 0)
    rep = gaussian_decay_check(delta, 2.0, dists=[0, 1, 2, 3, 4, 6, 8])
    assert rep["decaying"]


def test_hutchinson_consistent_with_exact():
    spc = build_space("lattice", d=1, window=40)
    delta = hodge_laplacian(spc, 0)
    mask = spc.grade <= 10
    est, se = hutchinson_theta(delta, 1.0, mask, n_probes=64, seed=0)
    exact, _ = theta_value(delta, 1.0)
    assert abs(est - exact) <= 5 * se + 1e-6


def test_chebyshev_operator_window_guard():
    spc = build_space("lattice", d=1, window=8)
    delta = hodge_laplacian(spc, 0)
    from roetrace import WindowEscape
    with pytest.raises(WindowEscape):
        heat_operator(delta, 50.0)
