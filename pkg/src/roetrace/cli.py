"""Command-line driver: config handling, CSV emission, run manifests, and
the `verify all` umbrella suite.

Commands: space build, trace phi, trace regularized, trace counterexample,
heat theta, spectral dos, spectral ns, verify all.  Exit codes: 0 pass,
1 suite failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy
from scipy.special import ive

from . import __version__
from .heat import heat_operator, theta as heat_theta, theta_value
from .operator import (diagonal_operator, load_kernel_csv,
                       make_delta_unitary)
from .space import (Exhaustion, WindowEscape, box_exhaustion, build_space,
                    check_regular, penumbra_lemma_check)
from .spectral import (betti, hodge_laplacian, ns_numbers, spectral_density,
                       varopoulos_check)
from .trace import (LimitProcedure, cone_membership, conjugation_suite,
                    counterexample_suite, mollified_functional,
                    regularized_trace, roe_functional, shifted_functional)

_SPACE_KEYS = ("kind", "d", "window", "length", "mesh", "degree", "depth",
               "fiber")


# ---------------------------------------------------------------------------
# config plumbing

def _read_config(path: str) -> dict:
    import configparser
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    return {sec: dict(cp[sec]) for sec in cp.sections()}


def _space_params(args) -> dict:
    params = {}
    if getattr(args, "space", None):
        cfg = _read_config(args.space)
        if "space" not in cfg:
            raise ValueError("cli: config is missing a [space] section")
        params.update(cfg["space"])
    for key in _SPACE_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    if "kind" not in params:
        raise ValueError("cli: no space given (use --space or --kind)")
    kind = params.pop("kind")
    typed = {}
    for k, v in params.items():
        typed[k] = float(v) if k in ("length", "mesh") else int(v)
    return {"kind": kind, **typed}


def _build_space(args):
    p = _space_params(args)
    return build_space(p.pop("kind"), **p)


def _config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_manifest(out_csv: str, command: str, payload: dict,
                    t0: float) -> None:
    man = {
        "command": command,
        "config": payload,
        "config_hash": _config_hash(payload),
        "versions": {"python": sys.version.split()[0],
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "roetrace": __version__},
        "timings": {"total_s": round(time.monotonic() - t0, 3)},
        "output": out_csv,
    }
    with open(out_csv + ".manifest.json", "w") as fh:
        json.dump(man, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow(row)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _parse_grid(spec: str) -> np.ndarray:
    lo, hi, n = spec.split(":")
    return np.linspace(float(lo), float(hi), int(n))


def _parse_probes(spec: str):
    out = []
    for item in spec.split(","):
        r1, r2 = item.split(":")
        out.append((float(r1), float(r2)))
    return tuple(out)


def _n_workers() -> int:
    try:
        return max(1, int(os.environ.get("ROETRACE_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# commands

def cmd_space_build(args) -> int:
    t0 = time.monotonic()
    space = _build_space(args)
    rows = []
    for i in range(space.n_sites):
        coord = space.coords[i]
        cs = ":".join(str(c) for c in np.atleast_1d(coord))
        rows.append([cs, _fmt(space.grade[i])])
    rows.sort(key=lambda r: r[0])
    _write_csv(args.out, ["site", "grade"], rows)
    with open(args.out + ".config", "w") as fh:
        fh.write(space.to_config())
    _write_manifest(args.out, "space build", _space_params(args), t0)
    return 0


def _exhaustion_for(space, n_max: int, probes) -> Exhaustion:
    return box_exhaustion(space, n_max, probes=tuple(r for r, _ in probes)
                          or (1.0,))


def cmd_trace_phi(args) -> int:
    t0 = time.monotonic()
    space = _build_space(args)
    A = load_kernel_csv(space, args.op, self_adjoint=True)
    probes = _parse_probes(args.probes)
    limit = LimitProcedure(args.limit)
    n_max = args.nmax or int(space.window - A.dirty_margin
                             - max(max(p) for p in probes) - 1)
    exh = box_exhaustion(space, n_max)
    cone = cone_membership(A, exh, probes)
    tv = roe_functional(A, exh, limit, cone)
    ratios = tv.diagnostics["ratios"]
    vols = tv.diagnostics["volumes"]
    rows = [[n + 1, _fmt(ratios[n] * vols[n]), _fmt(vols[n]),
             _fmt(ratios[n])] for n in range(len(vols))]
    rows.append(["value", "envelope_lo", "envelope_hi", "cone_member"])
    rows.append([_fmt(tv.value), _fmt(tv.envelope[0]), _fmt(tv.envelope[1]),
                 _fmt(tv.cone_member)])
    _write_csv(args.out, ["n", "mu", "vol", "ratio"], rows)
    _write_manifest(args.out, "trace phi",
                    {**_space_params(args), "op": args.op,
                     "limit": args.limit, "probes": args.probes}, t0)
    return 0


def cmd_trace_regularized(args) -> int:
    t0 = time.monotonic()
    space = _build_space(args)
    A = load_kernel_csv(space, args.op, self_adjoint=True)
    deltas = [float(d) for d in args.deltas.split(",")]
    n_max = args.nmax or int((space.window - A.dirty_margin
                              - max(deltas)) / space.site_weight) - 2
    exh = box_exhaustion(space, n_max)
    tv = regularized_trace(A, deltas, exh, LimitProcedure(args.limit))
    rows = [[_fmt(d), _fmt(v)]
            for d, v in sorted(tv.diagnostics["per_delta"].items())]
    rows.append(["phi", _fmt(tv.diagnostics["phi"])])
    rows.append(["value", _fmt(tv.value)])
    rows.append(["gap", _fmt(tv.diagnostics["gap"])])
    _write_csv(args.out, ["delta", "psi_delta"], rows)
    _write_manifest(args.out, "trace regularized",
                    {**_space_params(args), "op": args.op,
                     "deltas": args.deltas, "limit": args.limit}, t0)
    return 0


def cmd_trace_counterexample(args) -> int:
    t0 = time.monotonic()
    rep = counterexample_suite(n_max=args.n)
    rows = [["n", _fmt(rep.n)]]
    for i, v in enumerate(rep.phi_Tn, start=1):
        rows.append([f"phi_T{i}", _fmt(v)])
    rows.append(["tail_bound", _fmt(rep.tail_bound)])
    rows.append(["diag_average", _fmt(rep.diag_average)])
    _write_csv(args.out, ["quantity", "value"], rows)
    _write_manifest(args.out, "trace counterexample", {"n": args.n}, t0)
    return 0


def cmd_heat_theta(args) -> int:
    t0 = time.monotonic()
    space = _build_space(args)
    delta = hodge_laplacian(space, p=args.p)
    ts = np.geomspace(args.tmin, args.tmax, args.points)
    vals, errs = heat_theta(delta, ts, eps=args.eps)
    rows = [[_fmt(t), _fmt(v), _fmt(e)] for t, v, e in zip(ts, vals, errs)]
    _write_csv(args.out, ["t", "theta", "err_bound"], rows)
    _write_manifest(args.out, "heat theta",
                    {**_space_params(args), "p": args.p, "tmin": args.tmin,
                     "tmax": args.tmax, "points": args.points,
                     "eps": args.eps}, t0)
    return 0


def cmd_spectral_dos(args) -> int:
    t0 = time.monotonic()
    space = _build_space(args)
    delta = hodge_laplacian(space, p=args.p)
    lam = _parse_grid(args.grid)
    dens = spectral_density(delta, lam, method=args.method,
                            **({"degree": args.kpm_degree, "seed": args.seed}
                               if args.method == "moments" else {}))
    rows = [[_fmt(x), _fmt(v)] for x, v in zip(dens.lam, dens.N)]
    _write_csv(args.out, ["lambda", "N"], rows)
    _write_manifest(args.out, "spectral dos",
                    {**_space_params(args), "p": args.p, "grid": args.grid,
                     "method": args.method, "kpm_degree": args.kpm_degree,
                     "seed": args.seed}, t0)
    return 0


def cmd_spectral_ns(args) -> int:
    t0 = time.monotonic()
    space = _build_space(args)
    delta = hodge_laplacian(space, p=args.p)
    ts, th = [], []
    with open(args.source, newline="") as fh:
        for rec in csv.DictReader(fh):
            ts.append(float(rec["t"]))
            th.append(float(rec["theta"]))
    ts, th = np.asarray(ts), np.asarray(th)
    lam = np.geomspace(1e-4, 4.0 / space.site_weight ** 2, 200)
    dens = spectral_density(delta, lam, method="oracle") \
        if delta.factor_band is not None else None
    be = betti(t=ts, theta=th, density=dens)
    rep = ns_numbers(t=ts, theta0=th, density=dens, b=be.b_theta)
    rows = [
        ["betti", _fmt(be.b_theta), _fmt(be.b_theta - be.uncertainty),
         _fmt(be.b_theta + be.uncertainty), ""],
        ["alpha_prime", _fmt(rep.alpha_prime), _fmt(rep.alpha_prime_lower),
         _fmt(rep.alpha_prime), f"{rep.fit_window[0]:g}:{rep.fit_window[1]:g}"],
    ]
    if dens is not None:
        rows.append(["alpha", _fmt(rep.alpha), _fmt(rep.alpha_lower),
                     _fmt(rep.alpha), ""])
    rows.append(["wide_flag", _fmt(rep.wide), "", "", ""])
    _write_csv(args.out, ["quantity", "value", "lo", "hi", "window"], rows)
    _write_manifest(args.out, "spectral ns",
                    {**_space_params(args), "p": args.p,
                     "source": args.source}, t0)
    return 0


# ---------------------------------------------------------------------------
# verify all: the bundled Z^1 profile

def _suite_heat_oracle() -> str:
    space = build_space("lattice", d=1, window=32)
    delta = hodge_laplacian(space, 0)
    worst = 0.0
    for t in (0.5, 1.0, 2.0, 4.0, 8.0):
        val, _ = theta_value(delta, t)
        worst = max(worst, abs(val - float(ive(0, 2.0 * t))))
    if worst > 1e-10:
        raise AssertionError(f"Z^1 heat oracle deviation {worst:g}")
    return f"max oracle deviation {worst:.2e}"


def _suite_ns() -> str:
    space = build_space("lattice", d=1, window=16)
    delta = hodge_laplacian(space, 0)
    ts = np.geomspace(10.0, 1e4, 25)
    vals, _ = heat_theta(delta, ts)
    dens = spectral_density(delta, np.geomspace(1e-5, 4.0, 200))
    rep = ns_numbers(t=ts, theta0=vals, density=dens, b=0.0)
    if abs(rep.alpha_prime - 1.0) > 0.05:
        raise AssertionError(f"alpha'_0 = {rep.alpha_prime:g}")
    if abs(rep.alpha - rep.alpha_prime) > 0.05:
        raise AssertionError("density/heat exponent mismatch")
    return f"alpha'_0 = {rep.alpha_prime:.3f}, alpha_0 = {rep.alpha:.3f}"


def _suite_varopoulos() -> str:
    space = build_space("lattice", d=1, window=16)
    delta = hodge_laplacian(space, 0)
    rep = varopoulos_check(delta, np.geomspace(10.0, 1e4, 25))
    if not rep["verdict"]:
        raise AssertionError(f"alpha_0 = {rep['alpha0']:g} < 0.95")
    return f"alpha_0 = {rep['alpha0']:.3f}, C = {rep['C']:.3f}"


def _suite_tauberian() -> str:
    space = build_space("lattice", d=1, window=16)
    ts = np.geomspace(10.0, 1e4, 25)
    for name, delta in (("Delta_0", hodge_laplacian(space, 0)),
                        ("zero", diagonal_operator(space,
                                                   np.zeros(33)))):
        vals, _ = heat_theta(delta, ts)
        dens = spectral_density(delta, np.geomspace(1e-5, 4.0, 200)) \
            if delta.factor_band is not None else \
            spectral_density(delta, np.geomspace(1e-5, 4.0, 200),
                             method="moments", degree=8)
        be = betti(t=ts, theta=vals, density=dens)
        if not be.agree:
            raise AssertionError(
                f"{name}: |b_N - b_theta| = "
                f"{abs(be.b_theta - be.b_density):g} > 1e-2")
    return "theta/density atoms agree on Delta_0 and the zero operator"


def _suite_counterexample() -> str:
    rep = counterexample_suite(n_max=5)
    if rep.tail_bound > 6.6e-4:
        raise AssertionError(f"tail bound {rep.tail_bound:g}")
    if abs(rep.diag_average - 1.0) > 1e-3:
        raise AssertionError(f"diag average {rep.diag_average:g}")
    if any(v != 0.0 for v in rep.phi_Tn):
        raise AssertionError("phi(T_n) != 0")
    return (f"tail {rep.tail_bound:.2e}, "
            f"diag average {rep.diag_average:.6f}")


def _suite_regularization() -> str:
    rng = np.random.default_rng(7)
    space = build_space("lattice", d=1, window=64)
    exh = box_exhaustion(space, 60)
    limit = LimitProcedure("extrapolate")
    for _ in range(10):
        A = diagonal_operator(space, 1.0 + rng.random(space.n_sites))
        phi = roe_functional(A, exh, limit).value
        psi = mollified_functional(A, 0.5, exh, limit).value
        if psi > phi + 1e-12:
            raise AssertionError("psi_delta > phi")
    # compact vanishing
    for _ in range(10):
        vals = np.zeros(space.n_sites)
        sites = rng.integers(55, 74, size=5)
        vals[sites] = rng.random(5)
        A = diagonal_operator(space, vals)
        tv = regularized_trace(A, [0.5], exh, limit)
        if abs(tv.value) > 1e-9 or abs(tv.diagnostics["phi"]) > 1e-9:
            raise AssertionError("compact operator has nonzero trace")
    return "psi_delta <= phi and compact operators vanish"


def _suite_delta_unitary() -> str:
    space = build_space("lattice", d=1, window=128)
    delta_op = hodge_laplacian(space, 0)
    A = heat_operator(delta_op, 1.0, eps=1e-8)
    exh = box_exhaustion(space, 60)
    for seed in range(10):
        U = make_delta_unitary(space, 0.01, "perturbed-shift", seed=seed)
        rep = conjugation_suite(A, U, exh)
        if rep.band_ok is False:
            raise AssertionError(f"ratio {rep.ratio:g} outside {rep.band}")
    return "phi(UAU*)/phi(A) within [1-2d, 1+2d], 10 seeds"


def _suite_shift_invariance() -> str:
    space = build_space("lattice", d=1, window=520)
    vals = 1.5 + 0.5 * np.cos(np.pi * space.coords[:, 0])
    A = diagonal_operator(space, vals)
    exh = box_exhaustion(space, 500)
    limit = LimitProcedure("extrapolate")
    phi = roe_functional(A, exh, limit).value
    worst = 0.0
    for r1 in (-2.0, 0.0, 3.0):
        for r2 in (-2.0, 0.0, 3.0):
            sv = shifted_functional(A, exh, r1, r2, limit).value
            worst = max(worst, abs(sv - phi))
    if worst > 1e-3:
        raise AssertionError(f"shift deviation {worst:g}")
    return f"max |shifted - phi| = {worst:.2e}"


def _suite_regularity() -> str:
    rng = np.random.default_rng(11)
    space = build_space("lattice", d=1, window=64)
    exh = box_exhaustion(space, 60, n_min=3, probes=(1.0, 2.0))
    rep = check_regular(space, exh)
    if not rep.verdict:
        raise AssertionError("Z^1 boxes failed regularity")
    tree = build_space("tree", degree=3, depth=9)
    texh = box_exhaustion(tree, 8, n_min=2)
    trep = check_regular(tree, texh)
    worst_tree = max(float(r.max()) for r in trep.ratios.values())
    if trep.verdict or worst_tree < 2.0:
        raise AssertionError("tree negative control did not fail")
    for _ in range(20):
        c = int(rng.integers(20, 45))
        K = space.grade_mask(float(rng.integers(3, 10))).copy()
        K &= np.abs(space.coords[:, 0] - (c - 32)) <= 12
        if not np.any(K):
            continue
        r1, r2, R = (float(rng.integers(1, 4)) for _ in range(3))
        if not penumbra_lemma_check(space, K, r1, r2, R):
            raise AssertionError("penumbra lemma violated")
    return f"boxes regular, tree ratio {worst_tree:.2f} >= 2"


_SUITES = (
    ("heat-oracle", _suite_heat_oracle),
    ("novikov-shubin", _suite_ns),
    ("varopoulos", _suite_varopoulos),
    ("tauberian", _suite_tauberian),
    ("counterexample", _suite_counterexample),
    ("regularization", _suite_regularization),
    ("delta-unitary", _suite_delta_unitary),
    ("shift-invariance", _suite_shift_invariance),
    ("regularity", _suite_regularity),
)


def cmd_verify(args) -> int:
    t0 = time.monotonic()
    results = {}

    def run(item):
        name, fn = item
        try:
            return name, True, fn()
        except Exception as exc:          # report, do not abort the umbrella
            return name, False, f"{type(exc).__name__}: {exc}"

    workers = _n_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for name, ok, msg in pool.map(run, _SUITES):
                results[name] = (ok, msg)
    else:
        for item in _SUITES:
            name, ok, msg = run(item)
            results[name] = (ok, msg)

    rows = []
    n_pass = 0
    for name, _ in _SUITES:
        ok, msg = results[name]
        n_pass += ok
        rows.append([name, "pass" if ok else "FAIL", msg])
        print(f"{name:18s} {'pass' if ok else 'FAIL'}  {msg}")
    out = args.out or "verify.csv"
    _write_csv(out, ["suite", "status", "detail"], rows)
    _write_manifest(out, "verify all", {"profile": "zd1"}, t0)
    print(f"{n_pass}/{len(_SUITES)} suites passed")
    return 0 if n_pass == len(_SUITES) else 1


# ---------------------------------------------------------------------------
# argument parsing

def _add_space_flags(p):
    p.add_argument("--space", help="config file with a [space] section")
    p.add_argument("--kind", choices=["lattice", "strip", "tree"])
    p.add_argument("--d", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--length", type=float)
    p.add_argument("--mesh", type=float)
    p.add_argument("--degree", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--fiber", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="roetrace",
        description="renormalized traces on discrete homogeneous models")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("space", help="space construction")
    ssub = p.add_subparsers(dest="subcommand", required=True)
    b = ssub.add_parser("build", help="enumerate a space window")
    _add_space_flags(b)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_space_build)

    p = sub.add_parser("trace", help="renormalized trace functionals")
    tsub = p.add_subparsers(dest="subcommand", required=True)
    t = tsub.add_parser("phi", help="exhaustion-averaged functional")
    _add_space_flags(t)
    t.add_argument("--op", required=True, help="kernel CSV")
    t.add_argument("--limit", default="cesaro",
                   choices=["cesaro", "subsequence", "envelope",
                            "extrapolate"])
    t.add_argument("--probes", default="1:1")
    t.add_argument("--nmax", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_trace_phi)
    t = tsub.add_parser("regularized", help="mollified trace sup_delta")
    _add_space_flags(t)
    t.add_argument("--op", required=True)
    t.add_argument("--deltas", required=True, help="comma list of delta")
    t.add_argument("--limit", default="extrapolate")
    t.add_argument("--nmax", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_trace_regularized)
    t = tsub.add_parser("counterexample", help="non-closed-kernel suite")
    t.add_argument("--n", type=int, default=5)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_trace_counterexample)

    p = sub.add_parser("heat", help="heat semigroup traces")
    hsub = p.add_subparsers(dest="subcommand", required=True)
    h = hsub.add_parser("theta", help="exhaustion-averaged heat trace")
    _add_space_flags(h)
    h.add_argument("--p", type=int, default=0)
    h.add_argument("--tmin", type=float, default=1.0)
    h.add_argument("--tmax", type=float, default=1024.0)
    h.add_argument("--points", type=int, default=11)
    h.add_argument("--eps", type=float, default=1e-12)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_heat_theta)

    p = sub.add_parser("spectral", help="density, Betti, Novikov-Shubin")
    psub = p.add_subparsers(dest="subcommand", required=True)
    s = psub.add_parser("dos", help="integrated density of states")
    _add_space_flags(s)
    s.add_argument("--p", type=int, default=0)
    s.add_argument("--grid", default="0:4:400", help="lo:hi:count")
    s.add_argument("--method", default="oracle",
                   choices=["oracle", "moments"])
    s.add_argument("--kpm-degree", type=int, default=400,
                   dest="kpm_degree")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectral_dos)
    s = psub.add_parser("ns", help="Novikov-Shubin exponents")
    _add_space_flags(s)
    s.add_argument("--p", type=int, default=0)
    s.add_argument("--source", required=True, help="theta CSV")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectral_ns)

    p = sub.add_parser("verify", help="invariant umbrella")
    vsub = p.add_subparsers(dest="subcommand", required=True)
    v = vsub.add_parser("all", help="run every suite on the Z^1 profile")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except AssertionError as exc:
        print(f"suite failure: {exc}", file=sys.stderr)
        return 1
    except WindowEscape as exc:
        print(f"space: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
