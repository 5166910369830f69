"""Spectral density functions, L2-Betti numbers, Novikov-Shubin exponents,
cubical Hodge Laplacians for p in {0,1}, and the on-diagonal heat-decay
(Varopoulos) check.

All densities are per-volume: N(lam) = lim mu_{E_lam}(K_n)/vol(K_n), so the
total mass is nfiber per unit volume (nfiber / mesh on the strip).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .heat import theta as heat_theta
from .operator import KernelOperator, from_matrix, schur_bound
from .space import SpaceModel, WindowEscape

_EPS = 1e-9


# ---------------------------------------------------------------------------
# Hodge Laplacians

def _kron_chain(mats):
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def hodge_laplacian(space: SpaceModel, p: int = 0, nfiber: int = 1
                    ) -> KernelOperator:
    """Delta_p = (d + d*)^2 on the cubical cell structure of the window.

    p = 0 acts on vertex functions; p = 1 acts on edge cochains of Z^d with
    one fiber per axis direction (the edge based at each vertex).  The
    boundary truncation is Dirichlet; entries within one step of the window
    edge are marked dirty for p = 1.  p >= 2 is not supported.
    """
    if p not in (0, 1):
        raise ValueError("only p in {0,1} is supported")

    if space.kind == "tree":
        if p != 0:
            raise ValueError("tree Laplacian is only provided for p = 0")
        n = space.n_sites
        deg = len(space.tree_adj[0])   # infinite-tree vertex degree
        rows, cols, vals = [], [], []
        for v in range(n):
            for w in space.tree_adj[v]:
                rows.append(v)
                cols.append(w)
                vals.append(-1.0)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        mat = (float(deg) * sp.eye(n) + A).tocsr()
        return from_matrix(space, mat, 1.0, self_adjoint=True)

    if space.kind == "strip":
        if p != 0:
            raise ValueError("strip Laplacian is only provided for p = 0")
        h = space.mesh
        n = space.n_sites
        mat = sp.diags([-1.0 / h ** 2, 2.0 / h ** 2, -1.0 / h ** 2],
                       offsets=[-1, 0, 1], shape=(n, n), format="csr")
        band = ((-1, -1.0 / h ** 2), (0, 2.0 / h ** 2), (1, -1.0 / h ** 2))
        return from_matrix(space, mat, h, self_adjoint=True,
                           factor_band=band)

    d = space.dim
    shape = space.grid_shape
    N = space.n_sites

    if p == 0:
        L1 = sp.diags([-1.0, 2.0, -1.0], offsets=[-1, 0, 1],
                      shape=(shape[0],) * 2, format="csr")
        mat = sp.csr_matrix((N, N))
        for i in range(d):
            mat = mat + _kron_chain(
                [L1 if ax == i else sp.eye(n, format="csr")
                 for ax, n in enumerate(shape)])
        if nfiber > 1:
            mat = sp.kron(mat, sp.eye(nfiber), format="csr")
        return KernelOperator(space, mat.tocsr(), 1.0, True, nfiber,
                              factor_band=((-1, -1.0), (0, 2.0), (1, -1.0)))

    # p == 1: edges (v, v + e_i), indexed site-major as (site v, fiber i)
    nf = d
    eye = sp.eye(N, format="csr")
    B = [(_kron_chain([sp.eye(n, k=1, format="csr") if ax == i
                       else sp.eye(n, format="csr")
                       for ax, n in enumerate(shape)]) - eye).tocsr()
         for i in range(d)]
    cols_unit = [sp.csr_matrix(np.eye(nf)[:, [i]]) for i in range(nf)]
    rows_unit = [sp.csr_matrix(np.eye(nf)[[i], :]) for i in range(nf)]
    d0 = sp.csr_matrix((N * nf, N))
    for i in range(d):
        d0 = d0 + sp.kron(B[i], cols_unit[i], format="csr")
    lap = (d0 @ d0.T).tocsr()
    for i in range(d):
        for j in range(i + 1, d):
            d1 = (sp.kron(B[i], rows_unit[j], format="csr")
                  - sp.kron(B[j], rows_unit[i], format="csr"))
            lap = lap + (d1.T @ d1).tocsr()
    fb = ((-1, -1.0), (0, 2.0), (1, -1.0)) if d == 1 else None
    return KernelOperator(space, lap.tocsr(), 1.0, True, nf,
                          dirty_margin=1.0, factor_band=fb)


# ---------------------------------------------------------------------------
# spectral density

@dataclass
class SpectralDensity:
    lam: np.ndarray
    N: np.ndarray
    method: str
    total_mass: float
    smoothing_width: float = 0.0


def _symbol(band: dict, k: np.ndarray) -> np.ndarray:
    sig = np.zeros_like(k)
    for off, val in band.items():
        sig += np.real(val) * np.cos(off * k)
    return sig


def _make_counting_1d(band: dict, m: int = 1 << 21):
    """N_1(s) = |{k in [0,pi]: symbol(k) <= s}| / pi, as a callable."""
    k = np.linspace(0.0, math.pi, m + 1)
    sig = _symbol(band, k)
    if np.all(np.diff(sig) >= -1e-12):
        table_k, table_s = k, sig

        def count(s):
            return np.interp(s, table_s, table_k,
                             left=0.0, right=math.pi) / math.pi
        return count
    sig_sorted = np.sort(sig)

    def count(s):
        s = np.asarray(s, dtype=float)
        return np.searchsorted(sig_sorted, s, side="right") / len(sig_sorted)
    return count


def spectral_density_oracle(delta: KernelOperator, lam_grid
                            ) -> SpectralDensity:
    """N(lam) by quadrature over the translation-invariant symbol.

    Needs the operator to be a d-fold Kronecker sum of a single 1-D band
    (factor_band set); supports d <= 2.
    """
    if delta.factor_band is None:
        raise ValueError("oracle method needs a Kronecker-sum operator")
    lam = np.asarray(lam_grid, dtype=float)
    band = dict(delta.factor_band)
    total = delta.nfiber / delta.space.site_weight
    if all(abs(v) < 1e-300 for v in band.values()):
        return SpectralDensity(lam, np.where(lam > 0, total, 0.0),
                               "oracle", total)
    d = delta.space.dim
    count = _make_counting_1d(band)
    if d == 1:
        N = count(lam)
    elif d == 2:
        nodes, weights = np.polynomial.legendre.leggauss(4000)
        k = 0.5 * math.pi * (nodes + 1.0)
        w = 0.5 * weights            # dk / pi on [0, pi]
        sig = _symbol(band, k)
        N = np.array([float(np.sum(w * count(v - sig))) for v in lam])
    else:
        raise ValueError("oracle density supports d <= 2")
    return SpectralDensity(lam, total * np.clip(N, 0.0, 1.0),
                           "oracle", total)


def _jackson(M: int) -> np.ndarray:
    k = np.arange(M + 1)
    q = math.pi / (M + 2)
    return ((M + 2 - k) * np.cos(q * k)
            + np.sin(q * k) / math.tan(q)) / (M + 2)


def chebyshev_moments(delta: KernelOperator, degree: int,
                      mode: str = "column", n_probes: int = 8,
                      seed: int = 0) -> np.ndarray:
    """Per-volume Chebyshev moments mu_k = tr T_k(B), B = (2/Lam) Delta - 1.

    column: exact central-site column (translation-invariant spaces);
    hutchinson: seeded stochastic trace over the whole window.
    """
    lam_max = schur_bound(delta)
    w = delta.space.site_weight
    if lam_max == 0:
        # Delta = 0 means B = -1 and T_k(-1) = (-1)^k at full mass
        return (delta.nfiber / w) * np.array(
            [(-1.0) ** k for k in range(degree + 1)])
    need = degree * delta.propagation + delta.dirty_margin
    if mode == "column" and need > delta.space.window - _EPS:
        raise WindowEscape("moment degree exceeds the window margin")
    mat = delta.matrix()
    n = mat.shape[0]
    nf = delta.nfiber

    def bmat(x):
        return (2.0 / lam_max) * (mat @ x) - x

    rng = np.random.default_rng(seed)
    if mode == "column":
        c = int(np.argmin(delta.space.grade))
        vecs = []
        for f in range(nf):
            v = np.zeros(n)
            v[c * nf + f] = 1.0
            vecs.append(v)
    elif mode == "hutchinson":
        vecs = [rng.choice([-1.0, 1.0], size=n) for _ in range(n_probes)]
    else:
        raise ValueError(f"unknown moment mode {mode!r}")

    mu = np.zeros(degree + 1)
    for v in vecs:
        t0 = v
        t1 = bmat(v)
        mu[0] += v @ t0
        if degree >= 1:
            mu[1] += v @ t1
        for k in range(2, degree + 1):
            t0, t1 = t1, 2.0 * bmat(t1) - t0
            mu[k] += v @ t1
    if mode == "column":
        return mu / w
    return mu / (n_probes * w * delta.space.n_sites)


def spectral_density_moments(delta: KernelOperator, lam_grid,
                             degree: int = 400, mode: str = "column",
                             n_probes: int = 8, seed: int = 0
                             ) -> SpectralDensity:
    """Kernel-polynomial N(lam) with Jackson damping, isotonic-corrected."""
    lam = np.asarray(lam_grid, dtype=float)
    lam_max = schur_bound(delta)
    total = delta.nfiber / delta.space.site_weight
    if lam_max == 0:
        return SpectralDensity(lam, np.where(lam > 0, total, 0.0),
                               "moments", total)
    mu = chebyshev_moments(delta, degree, mode, n_probes, seed)
    g = _jackson(degree)
    x = np.clip(2.0 * lam / lam_max - 1.0, -1.0, 1.0)
    th = np.arccos(x)
    N = g[0] * mu[0] * (math.pi - th) / math.pi
    for k in range(1, degree + 1):
        N -= (2.0 / math.pi) * g[k] * mu[k] * np.sin(k * th) / k
    N = np.maximum.accumulate(np.clip(N, 0.0, total))
    return SpectralDensity(lam, N, "moments", total,
                           math.pi * lam_max / degree)


def spectral_density(delta: KernelOperator, lam_grid,
                     method: str = "oracle", **kw) -> SpectralDensity:
    if method == "oracle":
        return spectral_density_oracle(delta, lam_grid)
    if method == "moments":
        return spectral_density_moments(delta, lam_grid, **kw)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Betti numbers

@dataclass
class BettiEstimate:
    b: float
    b_theta: float
    b_density: float
    uncertainty: float
    agree: bool


def _limit_estimate(x: np.ndarray, y: np.ndarray, toward_small_x: bool,
                    plateau_slope: float = 0.05):
    """Plateau-or-decay limit of y(x) at the extreme end of the sample range:
    if the extreme decade is flat (log-log slope within plateau_slope) the
    limit is its mean, otherwise the sequence is decaying and the limit is 0
    with the extreme sample as the uncertainty."""
    order = np.argsort(x)
    x, y = x[order], y[order]
    sel = x <= x[0] * 10.0 if toward_small_x else x >= x[-1] / 10.0
    xs, ys = x[sel], y[sel]
    pos = ys > 0
    if np.count_nonzero(pos) < 2:
        return 0.0, float(np.max(np.abs(ys), initial=0.0))
    slope = np.polyfit(np.log(xs[pos]), np.log(ys[pos]), 1)[0]
    if abs(slope) <= plateau_slope:
        return float(np.mean(ys)), float(np.std(ys))
    extreme = ys[0] if toward_small_x else ys[-1]
    return 0.0, float(abs(extreme))


def betti(t=None, theta=None, density: SpectralDensity | None = None,
          tol: float = 1e-2) -> BettiEstimate:
    """L2-Betti number b = lim_{lam->0} N(lam) = lim_{t->inf} theta(t)."""
    if theta is None and density is None:
        raise ValueError("need theta samples and/or a density")
    b_t = b_n = None
    unc = 0.0
    if theta is not None:
        b_t, u = _limit_estimate(np.asarray(t, float),
                                 np.asarray(theta, float),
                                 toward_small_x=False)
        unc = max(unc, u)
    if density is not None:
        pos = density.lam > 0
        b_n, u = _limit_estimate(density.lam[pos], density.N[pos],
                                 toward_small_x=True)
        unc = max(unc, u)
    if b_t is None:
        return BettiEstimate(b_n, math.nan, b_n, unc, True)
    if b_n is None:
        return BettiEstimate(b_t, b_t, math.nan, unc, True)
    agree = abs(b_t - b_n) <= tol
    return BettiEstimate(0.5 * (b_t + b_n) if agree else math.nan,
                         b_t, b_n, unc, agree)


# ---------------------------------------------------------------------------
# Novikov-Shubin exponents

@dataclass
class NSReport:
    alpha: float              # density-side limsup exponent
    alpha_lower: float        # density-side liminf
    alpha_prime: float        # heat-side limsup
    alpha_prime_lower: float  # heat-side liminf
    fit_window: tuple
    residuals: float
    wide: bool                # set when the usable data spans < 2 decades


def _window_slopes(logx: np.ndarray, logy: np.ndarray,
                   width: float = 1.0, stride: float = 0.25):
    """Least-squares slopes over sliding width-decade windows."""
    slopes = []
    resid = 0.0
    start = logx.min()
    hi = logx.max()
    while start + width <= hi + 1e-9:
        sel = (logx >= start - 1e-9) & (logx <= start + width + 1e-9)
        if np.count_nonzero(sel) >= 3:
            c = np.polyfit(logx[sel], logy[sel], 1)
            slopes.append(c[0])
            resid = max(resid, float(np.max(np.abs(
                np.polyval(c, logx[sel]) - logy[sel]))))
        start += stride
    if not slopes:
        return np.array([math.nan]), resid
    return np.array(slopes), resid


def ns_numbers(t=None, theta0=None, density: SpectralDensity | None = None,
               b: float = 0.0, decades: float = 2.0) -> NSReport:
    """Novikov-Shubin exponents: twice the power-law exponents of the
    zero-atom-subtracted heat trace (t -> inf) and density (lam -> 0).

    limsup/liminf are realized as the max/min slope over sliding one-decade
    windows restricted to the extreme `decades` of the sample range.
    """
    a = a_lo = ap = ap_lo = math.nan
    resid = 0.0
    window = (math.nan, math.nan)
    wide = False
    if theta0 is not None:
        t = np.asarray(t, float)
        y = np.asarray(theta0, float) - b
        sel = (y > 0) & (t >= t.max() / 10.0 ** decades * (1.0 - 1e-9))
        if np.count_nonzero(sel) >= 3:
            if np.log10(t[sel].max() / t[sel].min()) < 1.9:
                wide = True
            s, r = _window_slopes(np.log10(t[sel]), np.log10(y[sel]))
            resid = max(resid, r)
            # theta0 ~ t^{-alpha'/2}
            ap = 2.0 * float(-np.min(s))
            ap_lo = 2.0 * float(-np.max(s))
            ap, ap_lo = max(ap, ap_lo), min(ap, ap_lo)
            window = (float(t[sel].min()), float(t[sel].max()))
        else:
            wide = True
    if density is not None:
        lam = density.lam
        y = density.N - b
        sel = (y > 1e-300) & (lam > 0)
        lam, y = lam[sel], y[sel]
        if len(lam) >= 3:
            sel2 = lam <= lam.min() * 10.0 ** decades * (1.0 + 1e-9)
            if np.log10(lam[sel2].max() / lam[sel2].min()) < 1.9:
                wide = True
            s, r = _window_slopes(np.log10(lam[sel2]), np.log10(y[sel2]))
            resid = max(resid, r)
            # N0 ~ lam^{alpha/2}
            a = 2.0 * float(np.max(s))
            a_lo = 2.0 * float(np.min(s))
        else:
            wide = True
    return NSReport(a, a_lo, ap, ap_lo, window, resid, wide)


# ---------------------------------------------------------------------------
# Varopoulos bound

def varopoulos_check(delta: KernelOperator, t_grid, eps: float = 1e-12,
                     tol: float = 0.05) -> dict:
    """On-diagonal heat decay H(t,x,x) <= C t^{-1/2}, hence alpha_0 >= 1.

    For the bundled homogeneous models the diagonal is constant, so the
    supremum equals the exhaustion-averaged trace.
    """
    ts = np.asarray(t_grid, float)
    sup_diag, _ = heat_theta(delta, ts, eps=eps)
    slopes, resid = _window_slopes(np.log10(ts), np.log10(sup_diag))
    alpha0 = 2.0 * float(-np.max(slopes))
    C = float(np.max(sup_diag * np.sqrt(ts)))
    return {"t": ts, "sup_diag": sup_diag, "alpha0": alpha0, "C": C,
            "residual": resid,
            "verdict": bool(alpha0 >= 1.0 - tol and np.isfinite(C))}
