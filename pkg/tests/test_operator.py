import numpy as np
import pytest
import scipy.sparse as sp

from roetrace import (WindowEscape, add, adjoint, band_operator, build_space,
                      compose, conjugate, diagonal_operator, dump_kernel_csv,
                      identity, invert_delta_unitary, is_delta_unitary,
                      is_positive_certified, load_kernel_csv, local_trace,
                      make_delta_unitary, measured_propagation, operator_norm,
                      schur_bound, shift_operator)
from roetrace.spectral import hodge_laplacian


def test_shift_acts_as_translation():
    spc = build_space("lattice", d=1, window=10)
    S = shift_operator(spc)
    v = np.zeros(spc.n_sites)
    i = np.flatnonzero(spc.coords[:, 0] == 3)[0]
    v[i] = 1.0
    out = S.apply(v)
    j = np.flatnonzero(out != 0)[0]
    assert spc.coords[j, 0] == 4        # (S phi)(x) = phi(x - 1)
    assert S.propagation == 1.0


def test_compose_adds_propagation():
    spc = build_space("lattice", d=1, window=12)
    A = band_operator(spc, {0: 1.0, 1: 0.5, -1: 0.5})
    B = band_operator(spc, {0: 2.0, 2: 0.25, -2: 0.25})
    C = compose(A, B)
    assert C.propagation == 3.0
    assert measured_propagation(C) <= 3.0
    with pytest.raises(WindowEscape):
        big = band_operator(spc, {7: 1.0, -7: 1.0})
        compose(big, big)


def test_adjoint_and_algebra():
    spc = build_space("lattice", d=1, window=10)
    A = band_operator(spc, {1: 1.0 + 2.0j})
    Ah = adjoint(A)
    assert np.allclose((A.kern - Ah.kern.conj().T).toarray(), 0)
    Ssum = add(A, Ah)
    assert np.allclose(Ssum.kern.toarray(), (A.kern + Ah.kern).toarray())


def test_schur_bound_dominates_norm():
    spc = build_space("lattice", d=1, window=20)
    delta = hodge_laplacian(spc, 0)
    sb = schur_bound(delta)
    assert sb == pytest.approx(4.0)
    assert operator_norm(delta) <= sb + 1e-9
    with pytest.raises(ValueError):
        schur_bound(shift_operator(spc))    # not self-adjoint


def test_local_trace_identity_measures_volume():
    spc = build_space("strip", length=4.0, mesh=0.1)
    I = identity(spc)
    K = np.abs(spc.coords) <= 0.5 + 1e-9
    assert local_trace(I, np.flatnonzero(K)) == pytest.approx(1.1)


def test_positivity_certificate():
    spc = build_space("lattice", d=1, window=10)
    assert is_positive_certified(hodge_laplacian(spc, 0))
    assert is_positive_certified(diagonal_operator(spc,
                                                   np.ones(spc.n_sites)))
    neg = diagonal_operator(spc, -np.ones(spc.n_sites))
    assert not is_positive_certified(neg)


def test_kernel_csv_round_trip(tmp_path):
    spc = build_space("lattice", d=2, window=8)
    rng = np.random.default_rng(0)
    n = spc.n_sites
    mat = sp.random(n, n, density=0.01, random_state=3, format="csr")
    mat = mat + mat.T
    from roetrace import from_matrix
    A = from_matrix(spc, mat, 0.0, self_adjoint=True)
    path = tmp_path / "k.csv"
    dump_kernel_csv(A, path)
    B = load_kernel_csv(spc, path, self_adjoint=True)
    assert np.allclose((A.kern - B.kern).toarray(), 0)
    assert B.propagation == measured_propagation(A)


def test_phased_shift_is_exactly_unitary():
    spc = build_space("lattice", d=1, window=40)
    U = make_delta_unitary(spc, 0.01, "phased-shift", seed=1)
    ok, d1, d2 = is_delta_unitary(U, 0.01)
    assert ok and d1 < 1e-12 and d2 < 1e-12


def test_perturbed_shift_defect_bound():
    spc = build_space("lattice", d=1, window=40)
    for seed in range(5):
        eps = 0.002
        U = make_delta_unitary(spc, 0.01, "perturbed-shift", eps=eps,
                               seed=seed)
        ok, d1, d2 = is_delta_unitary(U, 0.01)
        assert ok
        assert max(d1, d2) <= 2 * eps + eps * eps + 1e-12


def test_neumann_inverse():
    spc = build_space("lattice", d=1, window=60)
    U = make_delta_unitary(spc, 0.05, "perturbed-shift", eps=0.02, seed=2)
    Uinv = invert_delta_unitary(U, 0.05)
    from dataclasses import replace
    I = identity(spc)
    R = replace(add(compose(U, Uinv), I, beta=-1.0), self_adjoint=True)
    assert schur_bound(R, interior_only=True) < 1e-8
