"""The exhaustion-averaged functional, its limit surrogates, cone
diagnostics, delta-unitary invariance, the mollified regularization, and the
non-closed-kernel counterexample on the strip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .operator import (KernelOperator, adjoint, compose, conjugate,
                       is_delta_unitary, is_positive_certified, schur_bound)
from .space import Exhaustion, SpaceModel, WindowEscape

_EPS = 1e-9


# ---------------------------------------------------------------------------
# generalized-limit surrogates

@dataclass(frozen=True)
class LimitProcedure:
    """Computable surrogate for a generalized limit of a bounded sequence.

    cesaro      -- mean of the tail
    subsequence -- mean of the tail along given indices
    envelope    -- [liminf, limsup] interval of the tail
    extrapolate -- least-squares fit a + b/x + c/x^2 over the tail
                   (x = exhaustion radii), resolving the surface-to-volume
                   corrections of shifted and contracted exhaustion sets
    """

    mode: str = "cesaro"
    tail_fraction: float = 0.5
    indices: tuple | None = None

    def tail_start(self, n: int) -> int:
        return min(n - 1, int(self.tail_fraction * n))

    def evaluate(self, seq, xs=None):
        """(value, (lo, hi)) -- the tail envelope always accompanies the value."""
        seq = np.asarray(seq, dtype=float)
        n = len(seq)
        if n == 0:
            raise ValueError("empty sequence")
        i0 = self.tail_start(n)
        tail = seq[i0:]
        env = (float(tail.min()), float(tail.max()))
        if self.mode == "cesaro":
            return float(tail.mean()), env
        if self.mode == "subsequence":
            idx = np.asarray(self.indices if self.indices is not None
                             else range(n))
            idx = idx[idx >= i0]
            if len(idx) == 0:
                idx = np.asarray([n - 1])
            return float(seq[idx].mean()), env
        if self.mode == "envelope":
            return 0.5 * (env[0] + env[1]), env
        if self.mode == "extrapolate":
            x = np.asarray(xs, dtype=float)[i0:] if xs is not None \
                else np.arange(i0 + 1, n + 1, dtype=float)
            A = np.stack([np.ones_like(x), 1.0 / x, 1.0 / x ** 2], axis=1)
            coef, *_ = np.linalg.lstsq(A, tail, rcond=None)
            return float(coef[0]), env
        raise ValueError(f"unknown limit mode {self.mode!r}")


@dataclass
class TraceValue:
    value: float
    envelope: tuple
    cone_member: bool = True
    omega_dependent: bool = False
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# ratio machinery

def _require_margin(A: KernelOperator, exh: Exhaustion, extra: float = 0.0):
    need = exh.radii[-1] + max(extra, 0.0) + A.dirty_margin
    if need > A.space.window + _EPS:
        raise WindowEscape(
            f"exhaustion + margin {need:g} exceeds window {A.space.window:g}")


def mu_sequence(A: KernelOperator, exh: Exhaustion, shift: float = 0.0
                ) -> np.ndarray:
    """mu_A(K_n(shift)) for all n (negative shift contracts)."""
    return exh.cumulative(A.site_diagonal(), shift=shift)


@dataclass
class ConeDiagnostics:
    member: bool
    bound_c: float
    boundary_ratios: dict          # (r1,r2) -> ratio array over n
    probe_verdicts: dict
    positive: bool


def _vanishing_trend(ratio: np.ndarray, atol: float = 1e-12) -> bool:
    """ratio_n must fall below C/sqrt(n), C fitted on the first half."""
    n = len(ratio)
    if n < 4:
        return bool(ratio[-1] <= atol)
    k = np.arange(1, n + 1, dtype=float)
    half = n // 2
    C = float(np.max(ratio[:half] * np.sqrt(k[:half])))
    return bool(np.all(ratio[half:] <= C / np.sqrt(k[half:]) + atol))


def cone_membership(A: KernelOperator, exh: Exhaustion, probes=((1.0, 1.0),),
                    check_positive: bool = True) -> ConeDiagnostics:
    """Membership diagnostics for the positive cone of admissible operators:
    linear volume bound plus vanishing boundary mass ratios."""
    positive = is_positive_certified(A) if check_positive else True
    max_r1 = max(r1 for r1, _ in probes)
    _require_margin(A, exh, extra=max_r1)
    vol = exh.volumes()
    mu = mu_sequence(A, exh)
    c = float(np.max(mu / vol))
    ratios = {}
    verdicts = {}
    ok = positive
    for (r1, r2) in probes:
        bnd = (exh.cumulative(A.site_diagonal(), shift=r1)
               - exh.cumulative(A.site_diagonal(), shift=-r2))
        ratio = bnd / vol
        ratios[(r1, r2)] = ratio
        v = _vanishing_trend(np.abs(ratio))
        verdicts[(r1, r2)] = v
        ok = ok and v
    return ConeDiagnostics(ok, c, ratios, verdicts, positive)


def roe_functional(A: KernelOperator, exh: Exhaustion,
                   limit: LimitProcedure = LimitProcedure(),
                   cone: ConeDiagnostics | None = None,
                   envelope_tol: float = 0.01) -> TraceValue:
    """phi(A) = Lim mu_A(K_n) / vol(K_n)."""
    _require_margin(A, exh)
    vol = exh.volumes()
    mu = mu_sequence(A, exh)
    ratio = mu / vol
    value, env = limit.evaluate(ratio, xs=exh.radii)
    i0 = limit.tail_start(len(mu))
    if limit.mode == "extrapolate" and np.allclose(mu[i0:], mu[-1],
                                                   rtol=1e-12, atol=1e-300):
        # eventually constant mass (compact support): Lim c/vol(K_n) = 0
        value = 0.0
    member = cone.member if cone is not None else True
    tv = TraceValue(value, env, member,
                    diagnostics={"ratios": ratio, "volumes": vol})
    if not member:
        tv.value = math.inf
        return tv
    if limit.mode == "extrapolate":
        # the trend is resolved by the fit; omega-dependence shows up as
        # fit residuals that do not die out along the tail
        x = exh.radii[i0:]
        design = np.stack([np.ones_like(x), 1.0 / x, 1.0 / x ** 2], axis=1)
        coef, *_ = np.linalg.lstsq(design, ratio[i0:], rcond=None)
        resid = np.abs(ratio[i0:] - design @ coef)
        wide = (float(resid.max()) > envelope_tol
                and not _vanishing_trend(resid, atol=envelope_tol))
    else:
        wide = env[1] - env[0] > envelope_tol and limit.mode != "envelope"
    if wide:
        tv.omega_dependent = True
        tv.value = math.nan
    return tv


def shifted_functional(A: KernelOperator, exh: Exhaustion,
                       r1: float, r2: float,
                       limit: LimitProcedure = LimitProcedure()
                       ) -> TraceValue:
    """Lim mu_A(K_n(r1)) / vol(K_n(r2)); equals phi(A) on the cone."""
    _require_margin(A, exh, extra=max(r1, r2, 0.0))
    mu = mu_sequence(A, exh, shift=r1)
    vol = exh.volumes(shift=r2)
    keep = vol > 0          # K_n(r2) can be empty for the first few n
    mu, vol = mu[keep], vol[keep]
    ratio = mu / vol
    value, env = limit.evaluate(ratio, xs=exh.radii[keep])
    return TraceValue(value, env,
                      diagnostics={"ratios": ratio, "volumes": vol})


# ---------------------------------------------------------------------------
# delta-unitary conjugation

@dataclass
class ConjugationReport:
    phi_A: float
    phi_UAU: float
    ratio: float
    cone_member: bool
    contraction_applies: bool      # ||U|| <= 1 certified
    contraction_ok: bool
    delta: float | None
    band: tuple | None
    band_ok: bool | None


def conjugation_suite(A: KernelOperator, U: KernelOperator, exh: Exhaustion,
                      limit: LimitProcedure = LimitProcedure("extrapolate"),
                      probes=((1.0, 1.0),)) -> ConjugationReport:
    """phi(UAU*) against phi(A): contraction for ||U|| <= 1, two-sided
    [1-2 delta, 1+2 delta] band for measured delta-unitaries."""
    UAU = conjugate(U, A)
    cone = cone_membership(UAU, exh, probes, check_positive=False)
    phi_A = roe_functional(A, exh, limit).value
    phi_U = roe_functional(UAU, exh, limit).value
    ratio = phi_U / phi_A if phi_A != 0 else math.inf
    gram = replace(compose(adjoint(U), U), self_adjoint=True)
    norm2 = schur_bound(gram, interior_only=True)
    contraction_applies = norm2 <= 1.0 + 1e-12
    contraction_ok = (phi_U <= phi_A * (1 + 1e-9) + 1e-12)
    _, d1, d2 = is_delta_unitary(U, 1.0)
    delta = max(d1, d2)
    band = band_ok = None
    if delta < 0.5:
        band = (1 - 2 * delta, 1 + 2 * delta)
        band_ok = bool(band[0] - 1e-9 <= ratio <= band[1] + 1e-9)
    return ConjugationReport(phi_A, phi_U, ratio, cone.member,
                             contraction_applies,
                             contraction_ok if contraction_applies else True,
                             delta, band, band_ok)


# ---------------------------------------------------------------------------
# mollifiers and the regularized trace

@dataclass(frozen=True)
class MollifierFamily:
    space: SpaceModel
    delta: float
    op: KernelOperator          # B_delta, ||B_delta|| <= 1, propagation <= delta
    beta_ratio: float           # beta_1(delta)/beta_2(delta) in the model


def mollifier(space: SpaceModel, delta: float) -> MollifierFamily:
    """Averaging kernel chi_{dist < delta} / V(x, delta), scaled to norm <= 1.

    On unit lattices with delta < 1 the ball is the site itself and the
    mollifier is exactly the identity.  On the strip the homogeneous interior
    ball volume is used for every row, which keeps both Schur sums <= 1.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    h = space.site_weight
    if space.kind == "strip" and delta < 4 * h - _EPS:
        raise ValueError("delta below mesh resolution (need delta >= 4h)")
    steps = int(math.ceil(delta / h - _EPS)) - 1   # strict inequality ball
    if steps <= 0:
        from .operator import identity
        return MollifierFamily(space, delta, identity(space), 1.0)
    if not (space.is_lattice and space.dim == 1) and space.kind != "strip":
        raise ValueError("mollifier implemented for 1-D lattices and the strip")
    vol_ball = (2 * steps + 1) * h
    n = space.n_sites
    mat = sp.diags([h / vol_ball] * (2 * steps + 1),
                   offsets=range(-steps, steps + 1),
                   shape=(n, n), format="csr")
    kern = (mat / h).tocsr()
    op = KernelOperator(space, kern, steps * h, True, 1)
    return MollifierFamily(space, delta, op, 1.0)


def mollified_functional(A: KernelOperator, delta: float, exh: Exhaustion,
                         limit: LimitProcedure = LimitProcedure("extrapolate")
                         ) -> TraceValue:
    """psi_delta(A) = phi(B_delta A B_delta*)."""
    mol = mollifier(A.space, delta)
    BAB = compose(compose(mol.op, A), adjoint(mol.op))
    if A.self_adjoint:
        BAB = replace(BAB, self_adjoint=True)
    return roe_functional(BAB, exh, limit)


def kernel_continuity_probe(A: KernelOperator, delta: float) -> float:
    """max |a(x,y) - a(x,x)| over stored entries with 0 < dist(x,y) < delta."""
    co = A.kern.tocoo()
    nf = A.nfiber
    rows = co.row // nf
    cols = co.col // nf
    d = A.space.distance(rows, cols)
    diag = A.kern.diagonal()
    sel = (d > 0) & (d < delta - _EPS)
    if not np.any(sel):
        return 0.0
    return float(np.max(np.abs(co.data[sel] - diag[co.row[sel]])))


def regularized_trace(A: KernelOperator, delta_schedule, exh: Exhaustion,
                      limit: LimitProcedure = LimitProcedure("extrapolate")
                      ) -> TraceValue:
    """sup over the schedule of psi_delta(A): a certified lower bound for the
    semicontinuous regularization, equal to phi(A) on uniformly continuous
    kernels."""
    phi = roe_functional(A, exh, limit)
    values = {}
    best = -math.inf
    for d in sorted(delta_schedule, reverse=True):
        values[d] = mollified_functional(A, d, exh, limit).value
        best = max(best, values[d])
    gap = phi.value - best
    probe = kernel_continuity_probe(A, min(delta_schedule))
    return TraceValue(best, phi.envelope, phi.cone_member,
                      diagnostics={"per_delta": values, "gap": gap,
                                   "phi": phi.value,
                                   "continuity_probe": probe})


# ---------------------------------------------------------------------------
# the non-closed-kernel counterexample (1-D strip model)

@dataclass
class CounterexampleReport:
    n: int
    phi_Tn: list                 # extrapolated functional values, all ~ 0
    tail_bound: float            # certified Schur bound on ||T_inf - T_n||
    tail_stage_bounds: dict      # k -> sup_x row mass of stage k
    diag_average: float          # diagonal-average functional of T_inf


def _stage_radius(k: int) -> float:
    return 4.0 ** (-k)


def counterexample_stage_row_bound(k: int, mesh_div: int = 64,
                                   n_samples: int = 200) -> float:
    """sup_x integral of chi_{X_k}(x, .) on the stage-k grid.

    X_k pairs both coordinates in the annulus [k, k+1] (both signs) at
    distance <= r_k = 4^{-k}; the stage mesh is r_k / mesh_div.
    """
    r = _stage_radius(k)
    h = r / mesh_div
    n_cells = round(1.0 / h)
    best = 0.0
    for x_idx in np.linspace(0, n_cells, n_samples):
        x = k + round(x_idx) * h
        lo = max(k, x - r)
        hi = min(k + 1, x + r)
        # grid points of the annulus inside [lo, hi]
        i_lo = math.ceil((lo - k) / h - _EPS)
        i_hi = math.floor((hi - k) / h + _EPS)
        best = max(best, (i_hi - i_lo + 1) * h)
    return best


def counterexample_tail_bound(n: int, k_numeric: int = 9,
                              mesh_div: int = 64) -> tuple:
    """Schur bound on ||T_inf - T_n||: numerically audited stages up to
    k_numeric, geometric comparison-volume remainder beyond."""
    stage = {}
    total = 0.0
    for k in range(n + 1, k_numeric + 1):
        stage[k] = counterexample_stage_row_bound(k, mesh_div)
        total += stage[k]
    # remaining stages: row mass <= discrete ball volume 2 r_k + h_k
    rem = 0.0
    k = k_numeric + 1
    while _stage_radius(k) > 1e-300:
        add = 2.0 * _stage_radius(k) * (1.0 + 0.5 / mesh_div)
        rem += add
        if add < 1e-18 * max(total, 1e-30):
            break
        k += 1
    return total + rem, stage


def counterexample_diag_ratio(m: int, mesh_div: int = 64) -> float:
    """Diagonal-average of T_inf over K_m = [-m, m], per-stage grids.

    The kernel is 1 on the diagonal over every annulus [k, k+1], k >= 1,
    and 0 on [0, 1); annuli are discretized with their own stage meshes.
    """
    num = 0.0
    vol = 2.0 * 1.0   # the [-1,1] core, diagonal value 0
    for k in range(1, m):
        h = _stage_radius(k) / mesh_div
        pts = round(1.0 / h) + 1
        seg = pts * h          # discrete measure of one annulus side
        num += 2 * seg
        vol += 2 * seg
    return num / vol


def counterexample_phi_ratios(n: int, m_values, mesh_div: int = 64
                              ) -> np.ndarray:
    """mu_{T_n}(K_m)/vol(K_m): compact support makes the mass constant."""
    mass = 0.0
    for k in range(1, n + 1):
        h = _stage_radius(k) / mesh_div
        pts = round(1.0 / h) + 1
        mass += 2 * pts * h
    return np.array([mass / (2.0 * m) for m in m_values])


def counterexample_suite(n_max: int = 5, m_limit: int = 400,
                         mesh_div: int = 64) -> CounterexampleReport:
    """Exhibits the non-closed kernel: phi(T_n) = 0 for all finite n, the
    operator-norm tail vanishes geometrically, yet the diagonal-average
    functional of the limit operator equals 1."""
    limit = LimitProcedure("extrapolate")
    ms = np.arange(n_max + 2, m_limit + 1)
    phis = []
    for n in range(1, n_max + 1):
        ratios = counterexample_phi_ratios(n, ms, mesh_div)
        masses = ratios * (2.0 * ms)
        if np.allclose(masses, masses[0], rtol=1e-12, atol=0.0):
            # constant mass: Lim c/vol(K_m) = 0 under every generalized limit
            phis.append(0.0)
        else:
            val, _ = limit.evaluate(ratios, xs=2.0 * ms)
            phis.append(val)
    tail, stage = counterexample_tail_bound(n_max, mesh_div=mesh_div)
    diag_ratios = np.array([counterexample_diag_ratio(m, mesh_div)
                            for m in range(2, 60)])
    diag_val, _ = limit.evaluate(diag_ratios,
                                 xs=np.arange(2, 60, dtype=float))
    return CounterexampleReport(n_max, phis, tail, stage, diag_val)
