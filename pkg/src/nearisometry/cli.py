"""Command-line front end: one subcommand per construction or audit."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import jsonio
from .correspondence import ToleranceModel, correspondence_search, distance_multiset_compare
from .equidistribution import Sphere, Torus, config_metrics, design_test, finite_field_sphere, optimize_config
from .errors import (
    DeltaTooLarge,
    KExceeded,
    KExceedsD,
    NearIsometryError,
    PointFileError,
)
from .finite_extension import extend_finite, extend_with_properness
from .maps import Ball, Box, bmo_rotation_audit, distortion_audit, jacobian_defects, map_from_dict
from .procrustes import fit_euclidean_motion, orthogonal_procrustes
from .whitney import set_from_dict, whitney_extend

EXIT_OK, EXIT_ERROR, EXIT_REFUSAL = 0, 1, 2
OUTPUT_ENV = "NEARISOMETRY_OUTPUT_DIR"

HINTS = {
    KExceedsD: "more than D points can force an orientation flip; retry with --properness and a bound --K",
    KExceeded: "raise --K to at least the number of points",
    DeltaTooLarge: "the inputs are further from isometric than the requested epsilon allows; raise --epsilon",
}


class Refusal(Exception):
    """A well-defined negative outcome; exit status 2."""

    def __init__(self, payload):
        super().__init__("refused")
        self.payload = payload


# ---------------------------------------------------------------- helpers

def _out_dir(args) -> Path:
    path = Path(args.out_dir or os.environ.get(OUTPUT_ENV) or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _points(path, dim=None):
    config, notes = jsonio.parse_point_file(path, dim)
    for note in notes:
        print(f"warning: {path}: {note}", file=sys.stderr)
    return config.points


def _read_json(path):
    try:
        return jsonio.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise PointFileError(f"{path}: no such file") from exc


def _region(args, dim):
    if args.box is not None:
        lo, hi = np.split(np.asarray(args.box, dtype=float), 2)
        return Box(lo, hi)
    if args.ball is not None:
        vals = np.asarray(args.ball, dtype=float)
        return Ball(vals[:-1], float(vals[-1]))
    return Ball(np.zeros(dim), 1.0)


def _map_samples(smooth_map, region, n, seed):
    rng = np.random.default_rng(seed)
    X = region.sample(n, rng)
    Y = smooth_map(X)
    defect = jacobian_defects(smooth_map.jacobian(X))
    dim = X.shape[1]
    header = [f"x{i}" for i in range(dim)] + [f"y{i}" for i in range(dim)] + ["jacobianDefect"]
    return header, np.hstack([X, Y, defect[:, None]])


# ---------------------------------------------------------------- commands

def cmd_align(args, out):
    P, Q = _points(args.P), _points(args.Q)
    if args.require_proper:
        motion, err = fit_euclidean_motion(P, Q, require_proper=True)
        rss = float(np.sqrt(np.sum((motion(P) - Q) ** 2)))
    else:
        motion, rss = orthogonal_procrustes(P, Q)
        err = float(np.max(np.linalg.norm(motion(P) - Q, axis=1)))
    return {"motion": motion, "residual": rss, "maxPointError": err}


def cmd_match(args, out):
    P, Q = _points(args.P), _points(args.Q)
    model = ToleranceModel(args.epsilon)
    tol = max(args.epsilon, 1e-9)
    found = correspondence_search(P, Q, model, args.method, budget=args.budget)
    return {"method": args.method, "E": args.epsilon, "multiset": distance_multiset_compare(P, Q, tol),
            "correspondences": found}


def cmd_extend_finite(args, out):
    E, F = _points(args.E), _points(args.F)
    if args.properness:
        K = args.K if args.K is not None else len(E)
        result = extend_with_properness(E, F, args.epsilon, K, C_K=args.C_K, n_audit=args.samples, seed=args.seed)
    else:
        result = extend_finite(E, F, args.epsilon, lam=args.lam, n_audit=args.samples, seed=args.seed)
    payload = {"result": result}
    if result.map is None:
        raise Refusal(payload)
    center = E.mean(axis=0)
    radius = 2.0 * max(result.far_field_radius if np.isfinite(result.far_field_radius) else 0.0, result.diam, 1.0)
    header, rows = _map_samples(result.map, Ball(center, radius), args.plot_samples, args.seed)
    jsonio.write_json(out / "extend-finite-map.json", result.map)
    jsonio.write_table_tsv(out / "extend-finite-samples.tsv", header, rows)
    return payload


def cmd_extend_smooth(args, out):
    E = set_from_dict(_read_json(args.set))
    phi = map_from_dict(_read_json(args.map))
    kwargs = {}
    if args.lower is not None:
        kwargs["lower"], kwargs["upper"] = args.lower, args.upper
    report = whitney_extend(E, phi, args.epsilon, eta=args.eta, n_probes=args.probes, seed=args.seed, **kwargs)
    payload = {"report": report}
    if not report.ok:
        raise Refusal(payload)
    lo, hi = report.cover.corners.min(axis=0), (report.cover.corners + report.cover.sides[:, None]).max(axis=0)
    header, rows = _map_samples(report.map, Box(lo, hi), args.plot_samples, args.seed)
    jsonio.write_json(out / "extend-smooth-map.json", report.map)
    jsonio.write_table_tsv(out / "extend-smooth-samples.tsv", header, rows)
    return payload


def cmd_sphere_gen(args, out):
    if args.finite_field is not None:
        D, p = args.finite_field
        ff = finite_field_sphere(D, p)
        jsonio.write_points_csv(out / f"sphere-ff-{D}-{p}.csv", ff.points)
        return {"kind": "finiteField", "D": D, "p": p, "count": ff.count, "formulaCount": ff.formula_count,
                "designDefect3": design_test(ff.points, 3),
                "csv": f"sphere-ff-{D}-{p}.csv"}
    D, k, s = args.riesz
    D, k = int(D), int(k)
    if args.seed is None:
        raise NearIsometryError("--riesz needs --seed")
    manifold = Sphere(D)
    X, report = optimize_config(manifold, k, s, max_iters=args.max_iters, seed=args.seed, restarts=args.restarts)
    name = f"sphere-riesz-{D}-{k}-{s:g}-seed{args.seed}.csv"
    jsonio.write_points_csv(out / name, X)
    return {"kind": "riesz", "D": D, "k": k, "energy": report, "csv": name}


def cmd_metrics(args, out):
    X = _points(args.config)
    if args.manifold == "torus":
        manifold = Torus()
    else:
        manifold = Sphere(X.shape[1] - 1)
    payload = {"manifold": args.manifold, "metrics": config_metrics(manifold, X, args.dense_n)}
    if args.manifold == "sphere":
        payload["designDefects"] = {str(t): design_test(X, t) for t in range(1, args.design_t + 1)}
    return payload


def cmd_audit(args, out):
    smooth_map = map_from_dict(_read_json(args.map))
    data = _read_json(args.map)
    dim = _map_dim(data, args)
    region = _region(args, dim)
    a = distortion_audit(smooth_map, region, args.samples, args.seed)
    payload = {"supJacobianDefect": a.sup_jacobian_defect, "supPairRatioDefect": a.sup_pair_ratio_defect,
               "samples": args.samples, "seed": args.seed}
    if args.bmo and isinstance(region, Ball):
        b = bmo_rotation_audit(smooth_map, region, args.bmo_grid)
        payload["bmo"] = {"rotation": b.rotation, "meanResidual": b.mean_residual,
                          "tailFractions": list(b.tail_fractions)}
    header, rows = _map_samples(smooth_map, region, args.plot_samples, args.seed)
    jsonio.write_table_tsv(out / "audit-samples.tsv", header, rows)
    return payload


def _map_dim(data, args):
    if args.ball is not None:
        return len(args.ball) - 1
    if args.box is not None:
        return len(args.box) // 2
    if args.dim is not None:
        return args.dim
    raise NearIsometryError("give --ball, --box or --dim for the audit region")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nearisometry", description=__doc__)
    parser.add_argument("--out-dir", help=f"artifact directory (default ${OUTPUT_ENV} or .)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="least-squares Euclidean motion between labeled sets")
    p.add_argument("P")
    p.add_argument("Q")
    p.add_argument("--require-proper", action="store_true")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("match", help="relabel unlabeled sets and align them")
    p.add_argument("P")
    p.add_argument("Q")
    p.add_argument("--epsilon", type=float, default=0.0, help="relative distance distortion E")
    p.add_argument("--method", choices=["tenstep", "graph"], default="tenstep")
    p.add_argument("--budget", type=int, default=14)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("extend-finite", help="extend a finite near-isometry to all of R^D")
    p.add_argument("E")
    p.add_argument("F")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--properness", action="store_true", help="orientation-aware extension with refusals")
    p.add_argument("--K", type=int)
    p.add_argument("--C-K", dest="C_K", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--plot-samples", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extend_finite)

    p = sub.add_parser("extend-smooth", help="extend a map given near a compact set")
    p.add_argument("set", help="set descriptor JSON")
    p.add_argument("map", help="map descriptor JSON")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--eta", type=float)
    p.add_argument("--lower", type=float, nargs="+")
    p.add_argument("--upper", type=float, nargs="+")
    p.add_argument("--probes", type=int, default=4000)
    p.add_argument("--plot-samples", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extend_smooth)

    p = sub.add_parser("sphere-gen", help="generate well-distributed points on a sphere")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--finite-field", nargs=2, type=int, metavar=("D", "p"))
    g.add_argument("--riesz", nargs=3, type=float, metavar=("D", "k", "s"))
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--max-iters", type=int, default=2000)
    p.set_defaults(func=cmd_sphere_gen)

    p = sub.add_parser("metrics", help="separation, mesh norm and design defects of a configuration")
    p.add_argument("config")
    p.add_argument("--manifold", choices=["sphere", "torus"], default="sphere")
    p.add_argument("--dense-n", type=int, default=200_000)
    p.add_argument("--design-t", type=int, default=3)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("audit", help="sampled distortion audit of a serialized map")
    p.add_argument("map")
    p.add_argument("--ball", type=float, nargs="+", metavar="C", help="center coordinates then radius")
    p.add_argument("--box", type=float, nargs="+", metavar="B", help="lower corner then upper corner")
    p.add_argument("--dim", type=int)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--plot-samples", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bmo", action="store_true")
    p.add_argument("--bmo-grid", type=int, default=101)
    p.set_defaults(func=cmd_audit)
    return parser


def _validate(args, parser):
    eps = getattr(args, "epsilon", None)
    if eps is not None:
        if args.command == "match" and not 0 <= eps < 1:
            parser.error("--epsilon must lie in [0, 1)")
        if args.command != "match" and not 0 < eps < 1:
            parser.error("--epsilon must lie in (0, 1)")
    if args.command == "extend-smooth" and (args.lower is None) != (args.upper is None):
        parser.error("--lower and --upper go together")
    if args.command == "audit" and args.box is not None and len(args.box) % 2:
        parser.error("--box needs an even number of values")
    if args.command == "audit" and args.ball is not None and len(args.ball) < 2:
        parser.error("--ball needs a center and a radius")
    for name in ("samples", "plot_samples", "probes", "dense_n", "restarts", "max_iters"):
        value = getattr(args, name, None)
        if value is not None and value < 1:
            parser.error(f"--{name.replace('_', '-')} must be positive")


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(args, parser)
    out = _out_dir(args)
    name = f"{args.command}.json"
    try:
        payload = args.func(args, out)
        status = EXIT_OK
    except Refusal as refusal:
        payload, status = refusal.payload, EXIT_REFUSAL
    except (NearIsometryError, ValueError) as exc:
        hint = next((h for cls, h in HINTS.items() if isinstance(exc, cls)), None)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if hint:
            print(f"hint: {hint}", file=sys.stderr)
        return EXIT_ERROR
    payload = {"command": args.command, "status": "refused" if status == EXIT_REFUSAL else "ok", **payload}
    text = jsonio.dumps(payload)
    (out / name).write_text(text)
    sys.stdout.write(text)
    return status


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
