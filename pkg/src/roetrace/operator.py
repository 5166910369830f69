"""Banded kernel operators with propagation bounds on a SpaceModel.

An operator is stored through its kernel a(x,y) (fiber blocks, sparse over
site pairs); the action on vectors carries the quadrature weight:
(A phi)(x) = sum_y a(x,y) w phi(y).  All bundled spaces have a constant
site weight w, so matrix algebra reduces to kern-matrix algebra with a
weight factor per product.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .space import SpaceModel, WindowEscape, pen_plus

_EPS = 1e-9


@dataclass(frozen=True)
class KernelOperator:
    space: SpaceModel
    kern: sp.csr_matrix = field(repr=False)   # a(x,y) values, shape (N*nf, N*nf)
    propagation: float
    self_adjoint: bool = False
    nfiber: int = 1
    # depth (metric units) from the window boundary within which entries may
    # be contaminated by truncation; grows under composition
    dirty_margin: float = 0.0
    # band of the 1-D factor when the operator is a d-fold Kronecker sum
    # (used by the heat module's homogeneous fast path)
    factor_band: tuple | None = None

    @property
    def dim(self) -> int:
        return self.kern.shape[0]

    @property
    def weight(self) -> float:
        return self.space.site_weight

    def matrix(self) -> sp.csr_matrix:
        """The operator's action matrix on coefficient vectors."""
        return self.weight * self.kern

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix() @ vec

    def site_diagonal(self) -> np.ndarray:
        """tr of the fiber block a(x,x), per site (real part)."""
        d = self.kern.diagonal().real
        if self.nfiber == 1:
            return d
        return d.reshape(-1, self.nfiber).sum(axis=1)

    def interior_margin(self) -> float:
        return self.dirty_margin


def _block_abs(kern: sp.csr_matrix, nf: int) -> sp.csr_matrix:
    """Site-level matrix of Frobenius norms of the fiber blocks."""
    if nf == 1:
        out = kern.copy()
        out.data = np.abs(out.data)
        return out.tocsr()
    co = kern.tocoo()
    rows = co.row // nf
    cols = co.col // nf
    sq = sp.coo_matrix((np.abs(co.data) ** 2, (rows, cols)),
                       shape=(kern.shape[0] // nf, kern.shape[1] // nf)).tocsr()
    sq.sum_duplicates()
    sq.data = np.sqrt(sq.data)
    return sq


def from_matrix(space: SpaceModel, mat, propagation: float,
                self_adjoint: bool = False, nfiber: int = 1,
                dirty_margin: float = 0.0,
                factor_band=None) -> KernelOperator:
    """Wrap an action matrix (kern = mat / w)."""
    kern = sp.csr_matrix(mat) / space.site_weight
    return KernelOperator(space, kern.tocsr(), float(propagation),
                          self_adjoint, nfiber, dirty_margin,
                          tuple(factor_band) if factor_band is not None else None)


def identity(space: SpaceModel, nfiber: int = 1) -> KernelOperator:
    """The identity kernel a(x,x) = 1 (volume-weighted unit density)."""
    n = space.n_sites * nfiber
    return KernelOperator(space, sp.eye(n, format="csr"), 0.0, True, nfiber)


def diagonal_operator(space: SpaceModel, values: np.ndarray,
                      nfiber: int = 1) -> KernelOperator:
    n = space.n_sites * nfiber
    vals = np.asarray(values)
    kern = sp.diags(vals, format="csr", shape=(n, n))
    sa = bool(np.all(np.isreal(vals)))
    return KernelOperator(space, kern, 0.0, sa, nfiber)


def shift_operator(space: SpaceModel, axis: int = 0, step: int = 1
                   ) -> KernelOperator:
    """Translation by `step` grid cells along an axis: (S phi)(x) = phi(x - step)."""
    if space.kind == "tree":
        raise ValueError("no canonical shift on trees")
    if space.is_lattice:
        shape = space.grid_shape
        mats = []
        for ax, n in enumerate(shape):
            if ax == axis:
                mats.append(sp.eye(n, k=-step, format="csr"))
            else:
                mats.append(sp.eye(n, format="csr"))
        mat = mats[0]
        for m in mats[1:]:
            mat = sp.kron(mat, m, format="csr")
    else:
        n = space.n_sites
        mat = sp.eye(n, k=-step, format="csr")
    return from_matrix(space, mat, abs(step) * space.site_weight,
                       self_adjoint=False)


def band_operator(space: SpaceModel, band: dict, self_adjoint=None
                  ) -> KernelOperator:
    """1-D translation-invariant operator from {offset: kernel value}."""
    if space.is_lattice and space.dim != 1:
        raise ValueError("band_operator is 1-D; use kron sums for Z^d")
    n = space.n_sites
    mat = sp.csr_matrix((n, n))
    for off, val in band.items():
        mat = mat + val * space.site_weight * sp.eye(n, k=-off, format="csr")
    prop = max(abs(o) for o in band) * space.site_weight if band else 0.0
    if self_adjoint is None:
        self_adjoint = all(
            np.isclose(band.get(-o, 0.0), np.conj(v)) for o, v in band.items())
    return from_matrix(space, mat, prop, self_adjoint,
                       factor_band=None)


# ---------------------------------------------------------------------------
# algebra

def _common_space(A: KernelOperator, B: KernelOperator):
    if A.space is not B.space or A.nfiber != B.nfiber:
        raise ValueError("operands must live on the same space and fiber")


def compose(A: KernelOperator, B: KernelOperator) -> KernelOperator:
    _common_space(A, B)
    u = A.propagation + B.propagation
    half = A.space.window
    if u >= half:
        raise WindowEscape("composed propagation exceeds the window")
    kern = (A.weight * (A.kern @ B.kern)).tocsr()
    dirty = A.dirty_margin + B.dirty_margin + min(A.propagation, B.propagation)
    return KernelOperator(A.space, kern, u, False, A.nfiber, dirty)


def add(A: KernelOperator, B: KernelOperator, alpha=1.0, beta=1.0
        ) -> KernelOperator:
    _common_space(A, B)
    kern = (alpha * A.kern + beta * B.kern).tocsr()
    sa = (A.self_adjoint and B.self_adjoint
          and np.isreal(alpha) and np.isreal(beta))
    return KernelOperator(A.space, kern,
                          max(A.propagation, B.propagation), bool(sa),
                          A.nfiber, max(A.dirty_margin, B.dirty_margin))


def scale(A: KernelOperator, alpha) -> KernelOperator:
    return replace(A, kern=(alpha * A.kern).tocsr(),
                   self_adjoint=A.self_adjoint and bool(np.isreal(alpha)))


def adjoint(A: KernelOperator) -> KernelOperator:
    return replace(A, kern=A.kern.conj().T.tocsr())


def conjugate(U: KernelOperator, A: KernelOperator) -> KernelOperator:
    """U A U*."""
    out = compose(compose(U, A), adjoint(U))
    if A.self_adjoint:
        out = replace(out, self_adjoint=True)
    return out


def measured_propagation(A: KernelOperator, tol: float = 0.0) -> float:
    co = A.kern.tocoo()
    keep = np.abs(co.data) > tol
    if not np.any(keep):
        return 0.0
    rows = co.row[keep] // A.nfiber
    cols = co.col[keep] // A.nfiber
    return float(np.max(A.space.distance(rows, cols)))


# ---------------------------------------------------------------------------
# norms and traces

def schur_bound(A: KernelOperator, interior_only: bool = False) -> float:
    """sup_x sum_y w |a(x,y)| (fiber blocks in Frobenius norm).

    Upper-bounds the operator norm for self-adjoint kernels (symmetric
    kernel + Riesz-Thorin); the contract rejects non-self-adjoint input.
    """
    if not A.self_adjoint:
        raise ValueError("schur_bound requires a self-adjoint operator")
    if A.kern.nnz == 0:
        return 0.0
    babs = _block_abs(A.kern, A.nfiber)
    rows = np.asarray(babs.sum(axis=1)).ravel()
    if interior_only:
        depth = A.dirty_margin + A.propagation
        keep = A.space.margin() >= depth - _EPS
        if not np.any(keep):
            raise WindowEscape("no interior rows at the required margin")
        rows = rows[keep]
    return A.weight * float(rows.max())


def operator_norm(A: KernelOperator, tol: float = 1e-10) -> float:
    """Independent estimate of ||A||: dense for small windows, Lanczos above."""
    mat = A.matrix()
    n = mat.shape[0]
    if n <= 2000:
        dense = mat.toarray()
        if A.self_adjoint:
            return float(np.max(np.abs(np.linalg.eigvalsh(dense))))
        return float(np.linalg.norm(dense, 2))
    if A.self_adjoint:
        val = spla.eigsh(mat, k=1, which="LM", tol=tol,
                         return_eigenvectors=False)
        return float(abs(val[0]))
    val = spla.svds(mat, k=1, tol=tol, return_singular_vectors=False)
    return float(val[0])


def local_trace(A: KernelOperator, K: np.ndarray) -> float:
    """mu_A(K) = sum_{x in K} w tr a(x,x)."""
    return float(A.site_diagonal()[K].sum()) * A.weight


def is_positive_certified(A: KernelOperator, strict_tol: float = 1e-9) -> bool:
    """Sufficient positivity check: Gershgorin rows, else smallest eigenvalue."""
    if not A.self_adjoint:
        return False
    diag = A.kern.diagonal().real
    if np.any(diag < -strict_tol):
        return False
    babs = _block_abs(A.kern, 1)
    off = np.asarray(babs.sum(axis=1)).ravel() - np.abs(A.kern.diagonal())
    if np.all(diag + strict_tol >= off):
        return True
    mat = A.matrix()
    if mat.shape[0] <= 2000:
        lam = np.linalg.eigvalsh(mat.toarray())[0]
    else:
        lam = spla.eigsh(mat, k=1, which="SA", tol=1e-8,
                         return_eigenvectors=False)[0]
    return lam >= -strict_tol * max(1.0, abs(mat).max())


# ---------------------------------------------------------------------------
# delta-unitaries

def make_delta_unitary(space: SpaceModel, delta: float, recipe: str,
                       eps: float | None = None, seed: int = 0
                       ) -> KernelOperator:
    """Finite-propagation approximate unitaries.

    phased-shift: S diag(e^{i theta}) -- exactly unitary on the interior.
    perturbed-shift(eps): S (1 + eps diag(c)), |c|=1, defect <= 2 eps + eps^2.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0,1)")
    rng = np.random.default_rng(seed)
    n = space.n_sites
    S = shift_operator(space, axis=0, step=1)
    phases = np.exp(2j * np.pi * rng.random(n))
    if recipe == "phased-shift":
        return replace(compose(S, diagonal_operator(space, phases)),
                       dirty_margin=S.propagation)
    if recipe == "perturbed-shift":
        if eps is None:
            # largest eps with certified defect < delta
            eps = math.sqrt(1 + delta) - 1
        if 2 * eps + eps * eps >= 1:
            raise ValueError("perturbation too large: defect bound >= 1")
        pert = diagonal_operator(space, 1.0 + eps * phases)
        return replace(compose(S, pert), dirty_margin=S.propagation)
    raise ValueError(f"unknown recipe {recipe!r}")


def is_delta_unitary(U: KernelOperator, delta: float):
    """(verdict, defect ||U*U-1||, defect ||UU*-1||), Schur-certified.

    Defect norms are measured over interior rows (the finite window makes
    every shift fail unitarity at the very boundary).
    """
    I = identity(U.space, U.nfiber)
    d1 = replace(add(compose(adjoint(U), U), I, beta=-1.0), self_adjoint=True)
    d2 = replace(add(compose(U, adjoint(U)), I, beta=-1.0), self_adjoint=True)
    n1 = schur_bound(d1, interior_only=True)
    n2 = schur_bound(d2, interior_only=True)
    return (n1 < delta and n2 < delta), n1, n2


def invert_delta_unitary(U: KernelOperator, delta: float, tol: float = 1e-10
                         ) -> KernelOperator:
    """Neumann-series inverse U^{-1} = sum (1-U*U)^k U*, valid for delta < 1."""
    if delta >= 1:
        raise ValueError("inverse certified only for delta < 1")
    I = identity(U.space, U.nfiber)
    R = add(I, compose(adjoint(U), U), beta=-1.0)   # 1 - U*U
    acc = adjoint(U)
    term = adjoint(U)
    k = 1
    while delta ** k > tol and k < 60:
        term = compose(R, term)
        acc = add(acc, term)
        k += 1
    return acc


# ---------------------------------------------------------------------------
# serialization

def _coord_str(space: SpaceModel, site: int) -> str:
    if space.is_lattice:
        return ":".join(str(c) for c in space.coords[site])
    return str(site)


def dump_kernel_csv(A: KernelOperator, path):
    """CSV rows x,y,i,j,re,im over the band, lexicographic in (x,y,i,j)."""
    co = A.kern.tocoo()
    nf = A.nfiber
    entries = sorted(
        (int(r // nf), int(c // nf), int(r % nf), int(c % nf), v)
        for r, c, v in zip(co.row, co.col, co.data))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "i", "j", "re", "im"])
        for x, y, i, j, v in entries:
            wr.writerow([_coord_str(A.space, x), _coord_str(A.space, y),
                         i, j, repr(float(np.real(v))),
                         repr(float(np.imag(v)))])


def load_kernel_csv(space: SpaceModel, path, nfiber: int = 1,
                    self_adjoint: bool = False) -> KernelOperator:
    if space.is_lattice:
        index = {tuple(c): i for i, c in enumerate(space.coords)}

        def site_of(s):
            return index[tuple(int(t) for t in s.split(":"))]
    else:
        def site_of(s):
            return int(s)

    rows, cols, vals = [], [], []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        for rec in rd:
            x = site_of(rec["x"])
            y = site_of(rec["y"])
            rows.append(x * nfiber + int(rec["i"]))
            cols.append(y * nfiber + int(rec["j"]))
            vals.append(float(rec["re"]) + 1j * float(rec["im"]))
    vals = np.array(vals)
    if np.allclose(vals.imag, 0):
        vals = vals.real
    n = space.n_sites * nfiber
    kern = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    op = KernelOperator(space, kern, 0.0, self_adjoint, nfiber)
    prop = measured_propagation(op)
    return replace(op, propagation=prop)
