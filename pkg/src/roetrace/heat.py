"""Heat semigroup by propagation-preserving Chebyshev filters.

e^{-t lam} on [0, Lam] has the Chebyshev expansion with Bessel coefficients
a_0 = e^{-s} I_0(s), a_k = 2 (-1)^k e^{-s} I_k(s), s = t Lam / 2, so degrees
and truncation tails are certified exactly from scaled Bessel values.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import ive

from .operator import KernelOperator, schur_bound
from .space import WindowEscape

_EPS = 1e-9


@dataclass(frozen=True)
class HeatFilter:
    t: float
    lam_max: float
    degree: int
    coeffs: np.ndarray
    error_bound: float


@dataclass(frozen=True)
class HeatSample:
    t: float
    sites: np.ndarray | None
    diag: np.ndarray          # kernel-diagonal values H(t,x,x)
    theta: float
    error_bound: float


def heat_filter(lam_max: float, t: float, eps_target: float = 1e-12
                ) -> HeatFilter:
    """Uniform Chebyshev approximation of e^{-t lam} on [0, lam_max]."""
    if eps_target < 1e-15:
        raise ValueError("eps_target below achievable double precision")
    if t < 0:
        raise ValueError("t must be >= 0")
    s = t * lam_max / 2.0
    if s == 0.0:
        return HeatFilter(t, lam_max, 0, np.array([1.0]), 0.0)
    k_hi = int(s + 40.0 * np.sqrt(s + 4.0) + 60)
    k = np.arange(k_hi + 1)
    a = 2.0 * ive(k, s)
    a[0] *= 0.5
    tails = np.concatenate([np.cumsum(np.abs(a[::-1]))[::-1][1:], [0.0]])
    ok = np.nonzero(tails <= eps_target)[0]
    if len(ok) == 0:
        raise ValueError("eps_target below achievable precision at this t")
    m = int(ok[0])
    signs = (-1.0) ** np.arange(m + 1)
    return HeatFilter(t, lam_max, m, signs * a[:m + 1], float(tails[m]))


def apply_filter(filt: HeatFilter, matvec, v: np.ndarray) -> np.ndarray:
    """p(Delta) v via the three-term recurrence on B = (2/Lam) Delta - 1."""
    if filt.degree == 0:
        return filt.coeffs[0] * v

    def bmat(x):
        return (2.0 / filt.lam_max) * matvec(x) - x

    t0 = v
    t1 = bmat(v)
    acc = filt.coeffs[0] * t0 + filt.coeffs[1] * t1
    for k in range(2, filt.degree + 1):
        t0, t1 = t1, 2.0 * bmat(t1) - t0
        acc += filt.coeffs[k] * t1
    return acc


def chebyshev_operator(delta: KernelOperator, filt: HeatFilter
                       ) -> KernelOperator:
    """Materialize p(Delta) as a banded operator (small windows only)."""
    mat = delta.matrix()
    n = mat.shape[0]
    eye = sp.eye(n, format="csr")
    if filt.degree == 0:
        out = filt.coeffs[0] * eye
    else:
        B = (2.0 / filt.lam_max) * mat - eye
        t0, t1 = eye, B.copy()
        out = filt.coeffs[0] * t0 + filt.coeffs[1] * t1
        for k in range(2, filt.degree + 1):
            t0, t1 = t1, (2.0 * (B @ t1) - t0).tocsr()
            out = out + filt.coeffs[k] * t1
    prop = filt.degree * delta.propagation
    if prop >= delta.space.window:
        raise WindowEscape("filter band exceeds the window")
    return KernelOperator(delta.space, (out / delta.weight).tocsr(), prop,
                          delta.self_adjoint, delta.nfiber,
                          delta.dirty_margin * filt.degree + prop)


def heat_operator(delta: KernelOperator, t: float, eps: float = 1e-12
                  ) -> KernelOperator:
    filt = heat_filter(schur_bound(delta), t, eps)
    return chebyshev_operator(delta, filt)


# ---------------------------------------------------------------------------
# homogeneous fast path: one interior column of a 1-D factor

def _band_matvec(offsets, values, v):
    out = np.zeros_like(v)
    n = len(v)
    for off, val in zip(offsets, values):
        if off == 0:
            out += val * v
        elif off > 0:
            out[:-off] += val * v[off:]
        else:
            out[-off:] += val * v[:off]
    return out


def heat_value_1d(band: dict, t: float, eps: float = 1e-12):
    """Central diagonal entry of e^{-t T} for a 1-D banded T, plus err bound.

    The window is sized to the filter degree, so the value is exact for the
    infinite operator up to the declared truncation error.
    """
    offsets = np.array(sorted(band))
    values = np.array([band[o] for o in sorted(band)])
    lam_max = float(np.sum(np.abs(values)))
    filt = heat_filter(lam_max, t, eps)
    u = int(np.max(np.abs(offsets))) if len(offsets) else 1
    half = filt.degree * u + 2
    n = 2 * half + 1
    v = np.zeros(n)
    v[half] = 1.0
    col = apply_filter(filt, lambda x: _band_matvec(offsets, values, x), v)
    return float(col[half]), filt.error_bound, col, half


def theta_value(delta: KernelOperator, t: float, eps: float = 1e-12):
    """Exhaustion-averaged heat trace theta(t) for a homogeneous operator.

    For Kronecker-sum operators (factor_band set) this is the d-th power of
    one interior 1-D column value; otherwise the filter is applied to the
    central site indicator on the actual window.
    """
    space = delta.space
    if delta.factor_band is not None:
        band = dict(delta.factor_band)
        if all(abs(v) < 1e-300 for v in band.values()):
            return float(delta.nfiber), 0.0
        v1, err, _, _ = heat_value_1d(band, t, eps)
        d = space.dim
        val = delta.nfiber * v1 ** d / space.site_weight
        bound = delta.nfiber * ((abs(v1) + err) ** d - abs(v1) ** d
                                ) / space.site_weight
        return val, bound
    samp = diagonal_heat(delta, t, sites=None, eps=eps)
    return samp.theta, samp.error_bound


def theta(delta: KernelOperator, t_grid, exhaustion=None, limit=None,
          eps: float = 1e-12):
    """theta(t) over a time grid, with truncation-error bars."""
    ts = np.asarray(t_grid, dtype=float)
    vals = np.empty_like(ts)
    errs = np.empty_like(ts)
    for i, t in enumerate(ts):
        vals[i], errs[i] = theta_value(delta, t, eps)
    return vals, errs


# ---------------------------------------------------------------------------
# generic per-site path

def _central_site(space) -> int:
    return int(np.argmin(space.grade))


def heat_column(delta: KernelOperator, t: float, site: int,
                eps: float = 1e-12):
    """Kernel column H(t, . , site) computed on the actual window."""
    lam = schur_bound(delta)
    filt = heat_filter(lam, t, eps)
    need = filt.degree * delta.propagation + delta.dirty_margin
    if delta.space.margin(site) < need - _EPS:
        raise WindowEscape(
            f"site margin {delta.space.margin(site):g} < filter need {need:g}")
    nf = delta.nfiber
    n = delta.space.n_sites * nf
    mat = delta.matrix()
    cols = np.zeros((n, nf))
    for f in range(nf):
        v = np.zeros(n)
        v[site * nf + f] = 1.0
        cols[:, f] = apply_filter(filt, lambda x: mat @ x, v)
    return cols / delta.weight, filt

def diagonal_heat(delta: KernelOperator, t: float, sites=None,
                  eps: float = 1e-12) -> HeatSample:
    """Per-site heat kernel diagonal H(t,x,x) by explicit filter application."""
    if sites is None:
        sites = np.array([_central_site(delta.space)])
    else:
        sites = np.asarray(sites)
    nf = delta.nfiber
    diag = np.empty(len(sites))
    filt = None
    for i, s in enumerate(sites):
        cols, filt = heat_column(delta, t, int(s), eps)
        diag[i] = sum(cols[int(s) * nf + f, f] for f in range(nf))
    w = delta.space.site_weight
    return HeatSample(t, sites, diag, float(np.mean(diag)),
                      nf * filt.error_bound / w)


def gaussian_decay_check(delta: KernelOperator, t: float, dists,
                         eps: float = 1e-12) -> dict:
    """Fit log |H(t,x,y)| against dist(x,y)^2 / t; slope must be negative."""
    space = delta.space
    c = _central_site(space)
    cols, _ = heat_column(delta, t, c, eps)
    vals = []
    all_d = space.distance(np.arange(space.n_sites),
                           np.full(space.n_sites, c))
    for r in dists:
        pick = np.nonzero(np.abs(all_d - r) <= space.site_weight / 2 + _EPS)[0]
        h = np.max(np.abs(cols[pick * delta.nfiber, 0]))
        vals.append(h)
    vals = np.array(vals)
    x = np.asarray(dists, dtype=float) ** 2 / t
    keep = vals > 0
    slope, intercept = np.polyfit(x[keep], np.log(vals[keep]), 1)
    return {"dists": np.asarray(dists), "values": vals,
            "slope": float(slope), "intercept": float(intercept),
            "decaying": bool(slope < 0)}


def hutchinson_theta(delta: KernelOperator, t: float, mask,
                     n_probes: int = 16, seed: int = 0,
                     eps: float = 1e-12):
    """Stochastic per-volume heat trace over a site set, with stderr."""
    rng = np.random.default_rng(seed)
    lam = schur_bound(delta)
    filt = heat_filter(lam, t, eps)
    nf = delta.nfiber
    n = delta.space.n_sites * nf
    mvec = np.repeat(mask, nf)
    mat = delta.matrix()
    vol = delta.space.volume(mask)
    ests = np.empty(n_probes)
    for i in range(n_probes):
        z = rng.choice([-1.0, 1.0], size=n) * mvec
        pz = apply_filter(filt, lambda x: mat @ x, z)
        ests[i] = (z @ pz) * delta.space.site_weight / vol
    return float(ests.mean()), float(ests.std(ddof=1) / np.sqrt(n_probes))
