import numpy as np
import pytest
import scipy.sparse as sp

from roetrace import (build_space, betti, chebyshev_moments, diagonal_operator,
                      hodge_laplacian, ns_numbers, operator_norm,
                      spectral_density, theta, varopoulos_check)


def z1_counting(lam):
    """Integrated density of 2 - 2 cos k on [0, 4]: arccos(1 - lam/2) / pi."""
    return np.arccos(1.0 - np.clip(lam, 0.0, 4.0) / 2.0) / np.pi


def test_hodge_input_validation():
    spc = build_space("lattice", d=1, window=8)
    with pytest.raises(ValueError):
        hodge_laplacian(spc, 2)
    tree = build_space("tree", degree=3, depth=4)
    with pytest.raises(ValueError):
        hodge_laplacian(tree, 1)


def test_delta0_matches_graph_laplacian():
    spc = build_space("lattice", d=2, window=8)
    delta = hodge_laplacian(spc, 0)
    mat = delta.matrix()
    # interior rows: 4 on the diagonal, -1 to each lattice neighbour
    i = np.flatnonzero((spc.coords[:, 0] == 0) & (spc.coords[:, 1] == 0))[0]
    row = mat.getrow(i).toarray().ravel()
    assert row[i] == 4.0
    assert np.sort(row[row != 0]) == pytest.approx([-1, -1, -1, -1, 4])


def test_delta1_on_z1_is_delta0():
    # in one dimension d0 d0* has the same tridiagonal stencil as Delta_0
    spc = build_space("lattice", d=1, window=12)
    d1 = hodge_laplacian(spc, 1).matrix().toarray()
    d0 = hodge_laplacian(spc, 0).matrix().toarray()
    # Dirichlet truncations differ in the dirty boundary row only
    interior = spc.grade <= 10
    assert np.allclose(d1[interior], d0[interior])


def test_delta1_z2_structure():
    spc = build_space("lattice", d=2, window=8)
    delta = hodge_laplacian(spc, 1)
    assert delta.nfiber == 2
    mat = delta.matrix()
    assert (abs(mat - mat.T)).max() < 1e-12
    # positive semidefinite
    assert operator_norm(delta) <= 8.0 + 1e-9
    lo = sp.linalg.eigsh(mat, k=1, which="SA",
                         return_eigenvectors=False)[0]
    assert lo >= -1e-9
    # interior edge rows carry the flat-torus diagonal 4
    interior = spc.grade <= 2
    diag = mat.diagonal().reshape(-1, 2)
    assert np.all(diag[interior] == 4.0)


def test_oracle_density_z1_closed_form():
    spc = build_space("lattice", d=1, window=16)
    delta = hodge_laplacian(spc, 0)
    lam = np.linspace(0.0, 4.0, 401)
    dens = spectral_density(delta, lam, method="oracle")
    assert dens.total_mass == 1.0
    assert np.max(np.abs(dens.N - z1_counting(lam))) < 1e-5


def test_oracle_density_z2_against_direct_quadrature():
    spc = build_space("lattice", d=2, window=8)
    delta = hodge_laplacian(spc, 0)
    lam = np.array([0.5, 1.0, 2.0, 4.0, 6.0, 7.5])
    dens = spectral_density(delta, lam, method="oracle")
    # independent check: 2-D midpoint rule on the Brillouin zone
    m = 1500
    k = (np.arange(m) + 0.5) * np.pi / m
    s1 = 2.0 - 2.0 * np.cos(k)
    sig = s1[:, None] + s1[None, :]
    direct = np.array([np.mean(sig <= v) for v in lam])
    assert np.max(np.abs(dens.N - direct)) < 2e-3


def test_moment_density_matches_oracle():
    spc = build_space("lattice", d=1, window=420)
    delta = hodge_laplacian(spc, 0)
    lam = np.linspace(0.05, 3.95, 79)
    dens = spectral_density(delta, lam, method="moments", degree=400)
    assert dens.smoothing_width == pytest.approx(np.pi * 4.0 / 400)
    oracle = z1_counting(lam)
    # compare against the oracle smeared by the KPM resolution
    hi = z1_counting(lam + dens.smoothing_width)
    lo = z1_counting(lam - dens.smoothing_width)
    assert np.all(dens.N <= hi + 5e-3)
    assert np.all(dens.N >= lo - 5e-3)
    assert np.max(np.abs(dens.N - oracle)) < 0.05


def test_hutchinson_moments_close_to_column():
    spc = build_space("lattice", d=1, window=200)
    delta = hodge_laplacian(spc, 0)
    mu_c = chebyshev_moments(delta, 60, mode="column")
    mu_h = chebyshev_moments(delta, 60, mode="hutchinson", n_probes=32,
                             seed=1)
    # stochastic trace sees the boundary, so only modest agreement
    assert np.max(np.abs(mu_c - mu_h)) < 0.1


def test_zero_operator_density_is_full_atom():
    spc = build_space("lattice", d=1, window=30)
    Z = diagonal_operator(spc, np.zeros(spc.n_sites))
    lam = np.array([0.0, 0.5, 1.0])
    dens = spectral_density(Z, lam, method="moments", degree=8)
    assert dens.N == pytest.approx([0.0, 1.0, 1.0])


def test_laplace_transform_consistency():
    # theta(t) = int e^{-t lam} dN(lam), checked by Stieltjes integration
    spc = build_space("lattice", d=1, window=64)
    delta = hodge_laplacian(spc, 0)
    lam = np.linspace(0.0, 4.0, 20001)
    dens = spectral_density(delta, lam, method="oracle")
    dN = np.diff(dens.N)
    mid = 0.5 * (lam[1:] + lam[:-1])
    for t in (0.5, 1.0, 2.0):
        quad = float(np.sum(np.exp(-t * mid) * dN))
        val, err = theta(delta, np.array([t]))
        assert quad == pytest.approx(val[0], abs=1e-4)


def test_betti_zero_for_z1_laplacian():
    spc = build_space("lattice", d=1, window=64)
    delta = hodge_laplacian(spc, 0)
    ts = np.geomspace(1.0, 1e4, 41)
    th, _ = theta(delta, ts)
    lam = np.geomspace(1e-6, 4.0, 200)
    dens = spectral_density(delta, lam, method="oracle")
    est = betti(ts, th, dens)
    assert est.agree
    assert est.b == pytest.approx(0.0, abs=1e-2)


def test_betti_counts_zero_modes():
    spc = build_space("lattice", d=1, window=30)
    Z = diagonal_operator(spc, np.zeros(spc.n_sites))
    ts = np.geomspace(1.0, 1e4, 21)
    th, _ = theta(Z, ts)
    lam = np.geomspace(1e-6, 4.0, 100)
    dens = spectral_density(Z, lam, method="moments", degree=8)
    est = betti(ts, th, dens)
    assert est.agree
    assert est.b == pytest.approx(1.0, abs=1e-12)
    assert est.b_theta == 1.0 and est.b_density == 1.0


def test_ns_exponents_z1():
    spc = build_space("lattice", d=1, window=64)
    delta = hodge_laplacian(spc, 0)
    ts = np.geomspace(10.0, 1e4, 61)
    th, _ = theta(delta, ts)
    lam = np.geomspace(1e-7, 1e-2, 120)
    dens = spectral_density(delta, lam, method="oracle")
    rep = ns_numbers(ts, th, dens, b=0.0)
    assert not rep.wide
    assert rep.alpha_prime == pytest.approx(1.0, abs=0.05)
    assert rep.alpha == pytest.approx(1.0, abs=0.05)
    assert rep.alpha_lower <= rep.alpha + 1e-12


def test_ns_exponents_z2():
    spc = build_space("lattice", d=2, window=10)
    delta = hodge_laplacian(spc, 0)
    ts = np.geomspace(10.0, 1e4, 61)
    th, _ = theta(delta, ts)
    rep = ns_numbers(ts, th, b=0.0)
    assert rep.alpha_prime == pytest.approx(2.0, abs=0.10)


def test_ns_flags_narrow_data():
    rep = ns_numbers(np.geomspace(10.0, 50.0, 12),
                     np.geomspace(10.0, 50.0, 12) ** -0.5, b=0.0)
    assert rep.wide


def test_varopoulos_all_models():
    ts = np.geomspace(1.0, 1e3, 31)
    for kind, kw in (("lattice", {"d": 1, "window": 48}),
                     ("lattice", {"d": 2, "window": 10})):
        spc = build_space(kind, **kw)
        delta = hodge_laplacian(spc, 0)
        rep = varopoulos_check(delta, ts)
        assert rep["verdict"], kind
        assert np.all(rep["sup_diag"] <= rep["C"] / np.sqrt(ts) + 1e-12)


def test_varopoulos_strip():
    spc = build_space("strip", length=60.0, mesh=0.1)
    delta = hodge_laplacian(spc, 0)
    rep = varopoulos_check(delta, np.geomspace(0.5, 50.0, 21))
    assert rep["verdict"]
    # continuum heat kernel constant 1/sqrt(4 pi)
    assert rep["C"] == pytest.approx((4.0 * np.pi) ** -0.5, rel=1e-2)
