"""Command-line interface: ``skelstat <command> ...``.

Exit codes: 0 success, 1 numerical failure, 2 usage, IO or validation error.
Errors are reported as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import dsrep
from .dsrep import DsRepError, load_any, load_gp, load_lp, save_gp, save_lp, scale_lp
from .inference import gop_count, run_study
from .plotting import write_pvalue_plot
from .population import LpPopulation, mean_lp
from .reparam import gp_to_lp, lp_to_gp
from .simulation import (DeformSpec, StudyConfig, build_study, default_bend_nodes,
                         ellipsoid_template, rotate_frames, study_template)
from .sphere import ConvergenceError, GeometryError, frame_alignment, geodesic_dist

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(obj):
    print(json.dumps(obj, indent=2))


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DsRepError(f"{path}: invalid JSON ({exc})") from exc


def _load_dir(path):
    d = Path(path)
    if not d.is_dir():
        raise UsageError(f"not a directory: {path}")
    files = sorted(d.glob("*.json"))
    if not files:
        raise UsageError(f"no .json ds-rep files in {path}")
    members = [load_lp(f) for f in files]
    bad = [f.name for f, m in zip(files, members) if not members[0].same_structure(m)]
    if bad:
        raise DsRepError(f"structurally different from {files[0].name}: {', '.join(bad)}")
    return files, members


# --------------------------------------------------------------------------
# commands


def _root_aligned(gp, frames):
    """Move ``gp`` so that its root frame is the reference frame at the origin."""
    from .frames import build_hierarchy
    root = build_hierarchy(gp.grid).root
    A, _ = frame_alignment(frames[root])
    return gp.transformed(A, -A @ gp.points[root])


def cmd_reparam(args):
    if args.direction == "gp2lp":
        from .frames import fit_frames
        gp = load_gp(args.input)
        ff = fit_frames(gp)
        lp = gp_to_lp(gp, ff)
        back = lp_to_gp(lp)
        ref = _root_aligned(gp, ff.frames)
        pos_err = float(np.max(np.linalg.norm(back.points - ref.points, axis=1)))
        dir_err = float(np.max(geodesic_dist(back.spoke_dirs, ref.spoke_dirs)))
        if args.scale:
            lp = scale_lp(lp)
        save_lp(lp, args.output)
        _emit({"lp_size": lp.lp_size, "scaled": lp.scaled, "n_p": lp.n_p, "n_s": lp.n_s,
               "K_lp": gop_count(lp.n_s, lp.n_p, "lp"), "K_gp": gop_count(lp.n_s, lp.n_p, "gp"),
               "round_trip": {"max_position_error": pos_err, "max_direction_error": dir_err,
                              "ok": pos_err < 1e-8 and dir_err < 1e-9}})
    else:
        lp = load_lp(args.input)
        size = args.size if args.size is not None else (lp.lp_size if lp.scaled else None)
        gp = lp_to_gp(lp, size=size)
        save_gp(gp, args.output)
        _emit({"n_p": gp.n_p, "n_s": gp.n_s, "lp_size": lp.lp_size, "restored_size": size})
    return EXIT_OK


def cmd_mean(args):
    files, members = _load_dir(args.input_dir)
    members = [m if m.scaled else scale_lp(m) for m in members]
    mean = mean_lp(LpPopulation(members), method=args.method, lengths=args.lengths,
                   strategy=args.strategy)
    save_lp(mean, args.output)
    info = {"members": len(members), "lp_size": mean.lp_size, "meta": mean.meta}
    if args.reconstruct:
        gp = lp_to_gp(mean, size=mean.lp_size)
        save_gp(gp, args.reconstruct)
        tips = Path(args.reconstruct).with_suffix(".tips.csv")
        np.savetxt(tips, gp.tips(), delimiter=",", header="x,y,z", comments="", fmt="%.17g")
        info["reconstruction"] = {"gp": str(args.reconstruct), "tips": str(tips)}
    if args.reference:
        ref = load_lp(args.reference)
        if not ref.same_structure(mean):
            raise DsRepError("reference is structurally different from the population")
        dev = geodesic_dist(np.swapaxes(mean.frames, 1, 2), np.swapaxes(ref.frames, 1, 2))
        info["frame_deviation"] = {"max": float(dev.max()), "per_axis_max": dev.max(axis=0).tolist()}
        if args.kappa_frame:
            bound = 3.0 / np.sqrt(len(members) * args.kappa_frame)
            info["frame_deviation"].update(bound=bound, nodes_above_bound=np.flatnonzero(
                dev.max(axis=1) >= bound).tolist())
    _emit(info)
    return EXIT_OK


def cmd_test(args):
    _, group_a = _load_dir(args.group_a)
    _, group_b = _load_dir(args.group_b)
    if not group_a[0].same_structure(group_b[0]):
        raise DsRepError("the two groups are structurally different")
    report = run_study(group_a, group_b, mode=args.mode, scaling=args.scaling == "on", B=args.B,
                       seed=args.seed, alpha=args.alpha, fdr=args.fdr, euclid=args.euclid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    report.write_summary(out / "summary.json")
    report.write_significance_map(out / "significance_map.csv")
    write_pvalue_plot(report, out / "pvalues.svg")
    _emit(report.summary())
    return EXIT_OK


def _study_template(cfg):
    src = cfg.get("template", "default")
    if src == "default":
        return study_template()
    if isinstance(src, dict):
        gp = ellipsoid_template(src.get("rows", 5), src.get("cols", 13),
                                tuple(src.get("radii", (3.0, 2.0, 1.0))), src.get("crest_count", 20))
        return gp_to_lp(gp)
    lp = load_any(src)
    return gp_to_lp(lp) if isinstance(lp, dsrep.GpDsRep) else lp


def cmd_simulate(args):
    cfg_doc = _read_json(args.config)
    template = _study_template(cfg_doc)
    config = StudyConfig.from_dict(cfg_doc)
    groups = build_study(template, config)
    out = Path(args.out_dir)
    resolved = dict(config.to_dict(), template=cfg_doc.get("template", "default"))
    if resolved["bend_nodes"] is None:
        resolved["bend_nodes"] = list(default_bend_nodes(template.grid))
    out.mkdir(parents=True, exist_ok=True)
    save_lp(template, out / "template.json")
    for name, members in zip(("group_a", "group_b"), groups):
        d = out / name
        d.mkdir(exist_ok=True)
        for i, lp in enumerate(members):
            save_lp(lp, d / f"member_{i:04d}.json")
    (out / "config.json").write_text(json.dumps(resolved, indent=2) + "\n")
    _emit({"out_dir": str(out), "members_per_group": config.n_per_group, "config": resolved})
    return EXIT_OK


def cmd_deform(args):
    lp = load_lp(args.input)
    spec_doc = _read_json(args.spec)
    try:
        spec = DeformSpec(tuple(spec_doc["target_nodes"]), spec_doc.get("axis", "b_perp"),
                          spec_doc.get("angle", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise DsRepError(f"invalid deformation spec: {exc}") from exc
    out = rotate_frames(lp, spec)
    save_lp(out, args.output)
    _emit({"deformed_nodes": list(spec.target_nodes), "axis": spec.axis.value,
           "angles": list(spec.angles())})
    return EXIT_OK


def cmd_template(args):
    if args.study:
        lp = study_template()
    else:
        lp = gp_to_lp(ellipsoid_template(args.rows, args.cols, tuple(args.radii), args.crest))
    if args.gp:
        save_gp(lp_to_gp(lp), args.output)
    else:
        save_lp(lp, args.output)
    _emit({"n_p": lp.n_p, "n_s": lp.n_s, "lp_size": lp.lp_size,
           "bend_nodes": list(default_bend_nodes(lp.grid))})
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="skelstat", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS worker threads (default: $SKELSTAT_THREADS or library default)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reparam", help="convert GP <-> LP ds-reps")
    r.add_argument("input")
    r.add_argument("output")
    r.add_argument("--direction", choices=["gp2lp", "lp2gp"], default="gp2lp")
    r.add_argument("--scale", action="store_true", help="write a scaled LP-ds-rep (gp2lp)")
    r.add_argument("--size", type=float, default=None, help="LP-size to restore (lp2gp)")
    r.set_defaults(func=cmd_reparam)

    m = sub.add_parser("mean", help="mean LP-ds-rep of a directory")
    m.add_argument("input_dir")
    m.add_argument("output")
    m.add_argument("--method", choices=["pns", "frechet"], default="pns")
    m.add_argument("--lengths", choices=["geometric", "arithmetic"], default="geometric")
    m.add_argument("--strategy", choices=["A", "B"], default="B")
    m.add_argument("--reconstruct", metavar="GP_JSON", help="also write the reconstructed GP and tips CSV")
    m.add_argument("--reference", metavar="LP_JSON", help="report frame deviations from this LP")
    m.add_argument("--kappa-frame", type=float, default=None,
                   help="frame concentration for the 3/sqrt(N kappa) deviation bound")
    m.set_defaults(func=cmd_mean)

    t = sub.add_parser("test", help="two-group permutation test")
    t.add_argument("group_a")
    t.add_argument("group_b")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--mode", choices=["lp", "gp"], default="lp")
    t.add_argument("--scaling", choices=["on", "off"], default="on")
    t.add_argument("--B", type=int, default=10_000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--fdr", type=float, default=0.05)
    t.add_argument("--euclid", choices=["pns", "tangent"], default="pns")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="generate the two-group bending study")
    s.add_argument("config")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("deform", help="rotate frames of an LP-ds-rep")
    d.add_argument("input")
    d.add_argument("spec")
    d.add_argument("output")
    d.set_defaults(func=cmd_deform)

    e = sub.add_parser("template", help="write an ellipsoid template")
    e.add_argument("output")
    e.add_argument("--rows", type=int, default=5)
    e.add_argument("--cols", type=int, default=9)
    e.add_argument("--radii", type=float, nargs=3, default=(3.0, 2.0, 1.0))
    e.add_argument("--crest", type=int, default=20)
    e.add_argument("--study", action="store_true", help="the curved 5x13 study template")
    e.add_argument("--gp", action="store_true", help="write the GP form instead of the LP form")
    e.set_defaults(func=cmd_template)
    return p


def _thread_limit(n):
    if n is None:
        env = os.environ.get("SKELSTAT_THREADS")
        n = int(env) if env else None
    if n is None:
        return nullcontext()
    if n < 1:
        raise UsageError("--threads must be positive")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        with _thread_limit(args.threads), warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (GeometryError, ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    except (UsageError, DsRepError, OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_USAGE, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
