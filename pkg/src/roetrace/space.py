"""Discrete geometric substrates: Z^d lattice windows, regular trees, 1-D quadrature strip.

Infinite homogeneous spaces are represented by finite windows.  Every
operation that could be contaminated by the missing exterior declares the
margin it needs and raises WindowEscape instead of silently truncating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.ndimage import maximum_filter


class WindowEscape(ValueError):
    """A penumbra or propagation request does not fit in the finite window."""


_LATTICE_KINDS = {"lattice", "lattice-Z^d", "lattice-zd"}
_TREE_KINDS = {"tree", "regular-tree"}
_STRIP_KINDS = {"strip"}

# float slack when comparing real-valued radii against grid quantities
_EPS = 1e-9


@dataclass(frozen=True)
class SpaceModel:
    """A finite window of an infinite homogeneous metric measure space.

    Sites are indexed 0..n_sites-1.  ``grade`` is the distance of each site
    from the basepoint in the metric used for exhaustions (L-inf norm on
    lattices, |position| on the strip, depth on trees); level sets of the
    grade are the canonical exhaustion sets.
    """

    kind: str
    dim: int
    window: float            # grade of the outermost sites
    mesh: float              # 1.0 for lattice/tree, h for the strip
    fiber_dim: int
    grade: np.ndarray = field(repr=False)
    coords: np.ndarray = field(repr=False)   # (N, dim) ints, or (N,) floats for strip
    # tree only
    tree_parent: np.ndarray | None = field(default=None, repr=False)
    tree_adj: list | None = field(default=None, repr=False)

    @property
    def n_sites(self) -> int:
        return self.grade.shape[0]

    @property
    def site_weight(self) -> float:
        return self.mesh if self.kind in _STRIP_KINDS else 1.0

    @property
    def is_lattice(self) -> bool:
        return self.kind in _LATTICE_KINDS

    @property
    def grid_shape(self) -> tuple:
        if self.is_lattice:
            n = int(2 * self.window) + 1
            return (n,) * self.dim
        return (self.n_sites,)

    # distances ---------------------------------------------------------

    def distance(self, i, j):
        """Metric distance between sites (vectorized over index arrays)."""
        i = np.asarray(i)
        j = np.asarray(j)
        if self.is_lattice:
            return np.max(np.abs(self.coords[i] - self.coords[j]), axis=-1)
        if self.kind in _STRIP_KINDS:
            return np.abs(self.coords[i] - self.coords[j])
        return np.array([self._tree_dist(a, b) for a, b in
                         zip(np.atleast_1d(i), np.atleast_1d(j))]).reshape(i.shape)

    def _tree_dist(self, a: int, b: int) -> int:
        da, db = int(self.grade[a]), int(self.grade[b])
        dist = 0
        while da > db:
            a = self.tree_parent[a]
            da -= 1
            dist += 1
        while db > da:
            b = self.tree_parent[b]
            db -= 1
            dist += 1
        while a != b:
            a = self.tree_parent[a]
            b = self.tree_parent[b]
            dist += 2
        return dist

    def margin(self, i=None):
        """Distance of site(s) to the window boundary, in metric units."""
        g = self.grade if i is None else self.grade[i]
        return self.window - g

    # masks and volumes -------------------------------------------------

    def volume(self, mask: np.ndarray) -> float:
        return self.site_weight * float(np.count_nonzero(mask))

    def grade_mask(self, c: float) -> np.ndarray:
        """The exhaustion set {grade <= c} as a boolean mask."""
        return self.grade <= c + _EPS

    def ball(self, center: int, r: float) -> np.ndarray:
        if self.kind in _TREE_KINDS:
            d = self.distance(np.arange(self.n_sites),
                              np.full(self.n_sites, center))
            return d <= r + _EPS
        d = self.distance(np.arange(self.n_sites),
                          np.full(self.n_sites, center))
        return d <= r + _EPS

    def to_config(self) -> str:
        if self.is_lattice:
            return (f"[space]\nkind=lattice\nd={self.dim}\n"
                    f"window={int(self.window)}\nfiber={self.fiber_dim}\n")
        if self.kind in _STRIP_KINDS:
            return (f"[space]\nkind=strip\nlength={2 * self.window:g}\n"
                    f"mesh={self.mesh:g}\nfiber={self.fiber_dim}\n")
        deg = len(self.tree_adj[0])
        return (f"[space]\nkind=tree\ndegree={deg}\n"
                f"depth={int(self.window)}\nfiber={self.fiber_dim}\n")


def build_space(kind: str, **params) -> SpaceModel:
    """Construct a space window.  Deterministic site enumeration.

    lattice: d, window (half-width W, sites -W..W per axis)
    strip:   length L (interval [-L/2, L/2]), mesh h
    tree:    degree q (>= 3), depth D (balls around the root)
    """
    fiber = int(params.get("fiber", params.get("fiber_dim", 1)))
    if fiber < 1:
        raise ValueError("fiber dimension must be positive")

    if kind in _LATTICE_KINDS:
        d = int(params.get("d", params.get("dim", 1)))
        W = int(params["window"])
        if W < 8:
            raise ValueError("window too small (need >= 8)")
        axes = [np.arange(-W, W + 1)] * d
        coords = np.stack(np.meshgrid(*axes, indexing="ij"),
                          axis=-1).reshape(-1, d)
        grade = np.max(np.abs(coords), axis=1).astype(float)
        return SpaceModel("lattice", d, float(W), 1.0, fiber, grade, coords)

    if kind in _STRIP_KINDS:
        L = float(params["length"])
        h = float(params["mesh"])
        if h <= 0:
            raise ValueError("mesh must be positive")
        half = L / 2.0
        n_half = round(half / h)
        if abs(n_half * h - half) > 1e-9 * max(1.0, half):
            raise ValueError("mesh must divide the window evenly")
        if half < 8 * h:
            raise ValueError("window too small for the requested mesh")
        idx = np.arange(-n_half, n_half + 1)
        pos = idx * h
        return SpaceModel("strip", 1, half, h, fiber, np.abs(pos), pos)

    if kind in _TREE_KINDS:
        q = int(params["degree"])
        D = int(params["depth"])
        if q < 3:
            raise ValueError("tree branching must be >= 3")
        if D < 2:
            raise ValueError("window too small (need depth >= 2)")
        parent = [-1]
        depth = [0]
        frontier = [0]
        for level in range(1, D + 1):
            nxt = []
            for v in frontier:
                n_children = q if v == 0 else q - 1
                for _ in range(n_children):
                    parent.append(v)
                    depth.append(level)
                    nxt.append(len(parent) - 1)
            frontier = nxt
        n = len(parent)
        adj = [[] for _ in range(n)]
        for v in range(1, n):
            adj[v].append(parent[v])
            adj[parent[v]].append(v)
        return SpaceModel("tree", 1, float(D), 1.0, fiber,
                          np.array(depth, dtype=float),
                          np.arange(n).reshape(-1, 1),
                          tree_parent=np.array(parent), tree_adj=adj)

    raise ValueError(f"unknown space kind: {kind!r}")


# ---------------------------------------------------------------------------
# penumbrae

def _check_escape(space: SpaceModel, K: np.ndarray, r: float):
    if not np.any(K):
        raise ValueError("K must be nonempty")
    if r < 0:
        raise ValueError("penumbra radius must be >= 0")
    m = space.margin()[K]
    if np.any(m + _EPS < r):
        raise WindowEscape(
            f"Pen+(K,{r}) escapes the window (margin {m.min():g} < {r:g})")


def _dilate(space: SpaceModel, mask: np.ndarray, steps: int) -> np.ndarray:
    if steps <= 0:
        return mask.copy()
    if space.is_lattice:
        grid = mask.reshape(space.grid_shape)
        out = maximum_filter(grid, size=2 * steps + 1, mode="constant")
        return out.reshape(-1)
    if space.kind in _STRIP_KINDS:
        return maximum_filter(mask, size=2 * steps + 1, mode="constant")
    # tree: multi-source BFS
    out = mask.copy()
    frontier = list(np.nonzero(mask)[0])
    for _ in range(steps):
        nxt = []
        for v in frontier:
            for w in space.tree_adj[v]:
                if not out[w]:
                    out[w] = True
                    nxt.append(w)
        frontier = nxt
    return out


def _steps(space: SpaceModel, r: float) -> int:
    """Number of unit grid steps covered by metric radius r (floor)."""
    return int(math.floor(r / space.site_weight + _EPS))


def pen_plus(space: SpaceModel, K: np.ndarray, r: float) -> np.ndarray:
    """Pen+(K,r) = {x : dist(x,K) <= r}.  Errors if it escapes the window."""
    _check_escape(space, K, r)
    return _dilate(space, K, _steps(space, r))


def pen_minus(space: SpaceModel, K: np.ndarray, r: float) -> np.ndarray:
    """Pen-(K,r): complement of Pen+(complement of K, r).

    The complement includes the (virtual) exterior of the window, so sites
    within r of the window boundary never belong to Pen-(K,r).
    """
    if r < 0:
        raise ValueError("penumbra radius must be >= 0")
    comp = ~K
    steps = _steps(space, r)
    grown = _dilate(space, comp, steps) if np.any(comp) else comp.copy()
    # exterior sites sit one grid step beyond the boundary
    near_boundary = space.margin() + space.site_weight <= r + _EPS
    return K & ~grown & ~near_boundary


def penumbra_lemma_check(space: SpaceModel, K: np.ndarray,
                         r1: float, r2: float, R: float) -> bool:
    """Enumeration check of the penumbra inclusions on a concrete set K:

    (i)   Pen-(K,r2) subset of K subset of Pen+(K,r1)
    (iii) Pen+(Pen+(K,r1) \\ Pen-(K,r2), R)
              subset of Pen+(K, r1+R+eps) \\ Pen-(K, r2+R+eps)

    with eps = one grid step (the discrete stand-in for "any eps > 0").
    """
    eps = space.site_weight
    kp = pen_plus(space, K, r1)
    km = pen_minus(space, K, r2)
    ok_i = not np.any(km & ~K) and not np.any(K & ~kp)
    ann = kp & ~km
    grown = pen_plus(space, ann, R) if np.any(ann) else ann
    outer = pen_plus(space, K, r1 + R + eps)
    inner = pen_minus(space, K, r2 + R + eps)
    ok_iii = not np.any(grown & ~(outer & ~inner))
    return bool(ok_i and ok_iii)


# ---------------------------------------------------------------------------
# exhaustions

@dataclass(frozen=True)
class Exhaustion:
    """Nested sets K_n = {grade <= c_n} of a space, c_n increasing."""

    space: SpaceModel
    radii: np.ndarray                  # grade cutoffs c_n, increasing
    radii_probes: tuple = (1.0,)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if np.any(np.diff(r) <= 0):
            raise ValueError("exhaustion radii must be strictly increasing")
        if r[-1] > self.space.window + _EPS:
            raise WindowEscape("exhaustion exceeds the window")
        object.__setattr__(self, "radii", r)

    def __len__(self):
        return len(self.radii)

    def mask(self, i: int) -> np.ndarray:
        return self.space.grade_mask(self.radii[i])

    def volumes(self, shift: float = 0.0) -> np.ndarray:
        """vol(K_n(shift)) for all n; shift may be negative (contraction)."""
        return self.cumulative(np.ones(self.space.n_sites), shift)

    def cumulative(self, site_values: np.ndarray, shift: float = 0.0
                   ) -> np.ndarray:
        """sum of site_weight * site_values over K_n(shift), for all n.

        Uses the graded structure: Pen+-(K_n, r) = {grade <= c_n +- r}.
        """
        cuts = self.radii + shift
        if cuts[-1] > self.space.window + _EPS:
            raise WindowEscape("penumbra probe exceeds the window")
        order = np.argsort(self.space.grade, kind="stable")
        g = self.space.grade[order]
        csum = np.concatenate([[0.0], np.cumsum(site_values[order])])
        pos = np.searchsorted(g, cuts + _EPS)
        return self.space.site_weight * csum[pos]


def box_exhaustion(space: SpaceModel, n_max: int, n_min: int = 1,
                   probes=(1.0,)) -> Exhaustion:
    """Graded exhaustion K_n for n = n_min..n_max (boxes / intervals / balls)."""
    step = space.site_weight
    radii = np.arange(n_min, n_max + 1) * step if space.kind != "strip" \
        else np.arange(n_min, n_max + 1) * step
    return Exhaustion(space, radii.astype(float), tuple(probes))


# ---------------------------------------------------------------------------
# regularity

@dataclass
class RegularityReport:
    ratios: dict              # probe r -> array over n of vol(K_n(r))/vol(K_n(-r))
    verdict: bool
    tolerance: dict           # probe r -> tolerance curve used

    def __bool__(self):
        return self.verdict


def check_regular(space: SpaceModel, exh: Exhaustion, tol_scale: float = 5.0
                  ) -> RegularityReport:
    """Folner-type regularity: vol(K_n(r))/vol(K_n(-r)) -> 1 for each probe r.

    Pass iff for every probe r the second half of the sequence satisfies
    ratio - 1 <= tol_scale * max(1, r/step) / n.
    """
    ratios = {}
    tols = {}
    verdict = True
    step = space.site_weight
    n_idx = exh.radii / step
    for r in exh.radii_probes:
        vp = exh.volumes(shift=+r)
        vm = exh.volumes(shift=-r)
        if np.any(vm <= 0):
            raise WindowEscape(f"Pen-(K_n,{r}) empty; window too small")
        ratio = vp / vm
        ratios[r] = ratio
        tol = tol_scale * max(1.0, r / step) / n_idx
        tols[r] = tol
        half = len(ratio) // 2
        if np.any(ratio[half:] - 1.0 > tol[half:]):
            verdict = False
    return RegularityReport(ratios, verdict, tols)


# ---------------------------------------------------------------------------
# comparison volumes

@dataclass(frozen=True)
class VolumeComparison:
    """Ball volume V_delta(r) in the constant-curvature comparison space."""

    curvature: float
    dimension: int

    def warp(self, t: float) -> float:
        d = self.curvature
        if d < 0:
            s = math.sqrt(-d)
            return math.sinh(t * s) / s
        if d > 0:
            s = math.sqrt(d)
            return math.sin(t * s) / s
        return t

    def volume(self, r: float) -> float:
        n = self.dimension
        d = self.curvature
        if r <= 0:
            raise ValueError("radius must be positive")
        if d > 0 and r >= math.pi / math.sqrt(d):
            raise ValueError("radius beyond the diameter of the sphere")
        # Euclidean normalization: V_0(r) = pi^{n/2}/Gamma(n/2+1) r^n
        c_n = n * math.pi ** (n / 2) / math.gamma(n / 2 + 1)
        val, _ = quad(lambda t: self.warp(t) ** (n - 1), 0.0, r)
        return c_n * val


def comparison_volume(vc: VolumeComparison, r: float) -> float:
    return vc.volume(r)


def beta_pair(c_upper: float, c_lower: float, n: int, r: float,
              r0: float = math.inf) -> tuple:
    """(beta_1(r), beta_2(r)): comparison bounds on ball volumes.

    c_upper bounds sectional curvature from above, c_lower bounds Ricci/(n-1)
    from below; beta_1 uses the cap radius r0.
    """
    b1 = VolumeComparison(c_upper, n).volume(min(r, r0))
    b2 = VolumeComparison(c_lower, n).volume(r)
    return b1, b2
