"""Command-line interface.

Subcommands: sample, classify, perforate, cluster, isop, regularity, walk,
pipeline, report, validate. The default output directory comes from
PERCOLAB_OUT (falling back to the working directory). Exit codes: 0 ok,
2 validation error, 3 stage failure, 4 integrity error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import load_config, validate_config
from .errors import IntegrityError, PercolabError, StageError
from .lattice import Box
from .renorm import DensityPair, ScaleLadder, classify, load_badness, save_badness
from .samplers import ModelSpec, read_snapshot, sample, write_snapshot

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3
EXIT_INTEGRITY = 4


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _out_dir(args) -> Path:
    base = getattr(args, "out_dir", None) or os.environ.get("PERCOLAB_OUT") or "."
    p = Path(base)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _parse_ladder(text: str) -> ScaleLadder:
    vals = [int(v) for v in text.split(",")]
    if len(vals) == 4:
        l0, r0, L0, theta = vals
        return ScaleLadder(l0, r0, L0, theta, depth=2)
    l0, r0, L0, theta, depth = vals
    return ScaleLadder(l0, r0, L0, theta, depth)


def cmd_sample(args) -> int:
    model = ModelSpec(args.model, args.param, args.guard_factor)
    corner = _ints(args.corner) if args.corner else tuple(0 for _ in _ints(args.box))
    box = Box(corner, _ints(args.box))
    snap = sample(model, box, args.seed)
    out = args.out or str(_out_dir(args) / "snapshot.perc")
    write_snapshot(out, snap)
    print(f"wrote {out}: {snap.sites.count}/{box.site_count} occupied")
    return EXIT_OK


def cmd_classify(args) -> int:
    snap = read_snapshot(args.snapshot)
    if args.config:
        cfg = load_config(args.config)
        ladder, eta = cfg.ladder, cfg.eta
    else:
        ladder = _parse_ladder(args.ladder)
        e1, e2 = _floats(args.eta)
        eta = DensityPair(e1, e2)
    g = snap.subgraph()
    if args.region_corner and args.region_sides:
        region = Box(_ints(args.region_corner), _ints(args.region_sides))
    else:
        L = ladder.L[args.levels]
        corner = tuple(c + ladder.L0 for c in snap.box.corner)
        sides = tuple(((s - 2 * ladder.L0) // L) * L for s in snap.box.sides)
        region = Box(corner, sides)
    fld = classify(g, ladder, eta, region, args.levels)
    out = args.out or str(_out_dir(args) / "badness.npz")
    save_badness(out, fld)
    for n in range(fld.nmax + 1):
        print(f"level {n}: D-bad {int(fld.d_bad[n].sum())}, I-bad {int(fld.i_bad[n].sum())} of {fld.d_bad[n].size}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_perforate(args) -> int:
    from .perforate import build, perforation_to_text, verify_structure

    fld = load_badness(args.badness)
    origin = _ints(args.origin) if args.origin else fld.region.corner
    perf = build(fld, args.K, args.s, origin)
    out = args.out or str(_out_dir(args) / "perforation.txt")
    Path(out).write_text(perforation_to_text(perf))
    rep = verify_structure(perf)
    print(
        f"wrote {out}: connected={rep.connected} volume={rep.volume}"
        f" (bound {rep.volume_bound:.1f}) all_good={rep.all_good}"
    )
    return EXIT_OK


def cmd_cluster(args) -> int:
    from .clusters import chemical_distance_check, extend_cluster, largest_cluster, volume_growth_check
    from .rng import substream

    snap = read_snapshot(args.snapshot)
    g = snap.subgraph()
    ladder = _parse_ladder(args.ladder)
    origin = _ints(args.origin)
    cd = largest_cluster(g, ladder, args.K, args.s, origin)
    ec = extend_cluster(cd, g, ladder.L[args.s])
    checks = args.checks.split(",")
    rng = substream(args.seed, "cli-cluster")
    print(f"largest cluster: {cd.largest_size} sites (tie={cd.tie}); extended: {ec.size}")
    if "distance" in checks:
        rep = chemical_distance_check(ec, g, ladder, args.s, n_pairs=args.pairs, rng=rng)
        print(f"chemical distance: max ratio {rep.max_ratio:.4f} over {rep.pairs} pairs, {rep.failures} failures")
    if "volume" in checks:
        lo = ladder.L[args.s] ** g.d
        hi = args.K * ladder.L[args.s]
        radii = sorted({lo, (lo + hi) // 2, hi})
        rep = volume_growth_check(ec, g, ladder, args.s, args.K, radii, rng=rng)
        print(f"volume growth: min constant {rep.min_constant:.4f} over radii {radii}")
    if "isop" in checks:
        from .clusters import extended_isop_audit

        eta = DensityPair(*_floats(args.eta))
        reports = extended_isop_audit(ec, eta, ladder, args.s, args.K, rng=rng)
        worst = min((r.boundary / max(r.bound, 1e-300) for r in reports), default=float("inf"))
        print(f"extended isoperimetry: worst margin {worst:.3g} over {len(reports)} subsets")
    return EXIT_OK


def cmd_isop(args) -> int:
    import csv

    from .isoperimetry import isop_audit, worst_ratio
    from .perforate import perforation_from_text
    from .rng import substream

    perf = perforation_from_text(Path(args.perforation).read_text())
    rng = substream(args.seed, "cli-isop")
    reports = isop_audit(perf, tuple(args.families.split(",")), rng)
    out = args.out or str(_out_dir(args) / "report.csv")
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["family", "size", "boundary", "ratio", "gamma_ref", "pass"])
        for r in reports:
            w.writerow([r.family, r.size, r.boundary, repr(r.ratio), repr(r.gamma_ref), int(r.passed)])
    print(f"wrote {out}: {len(reports)} subsets, worst ratio {worst_ratio(reports):.6g}")
    return EXIT_OK


def cmd_regularity(args) -> int:
    from .regularity import ClusterContext, certify_ball
    from .rng import substream

    snap = read_snapshot(args.snapshot)
    g = snap.subgraph()
    ladder = _parse_ladder(args.ladder)
    ctx = ClusterContext(g, ladder, 0)
    cert = certify_ball(
        g, _ints(args.center), args.R, args.CV, args.CP, args.CW, ctx,
        rng=substream(args.seed, "cli-regularity"),
    )
    print(
        f"ball B({cert.center}, {cert.radius}): verdict {cert.verdict};"
        f" mu={cert.mu_ball:.0f} cv_margin={cert.cv_margin:.3f}"
        f" iso={cert.iso_constant_achieved:.4g} cw_achieved={cert.cw_achieved:.2f}"
    )
    return EXIT_OK


def cmd_walk(args) -> int:
    from .rng import substream
    from .walk import envelope_check, exact_kernel, green_field, harnack_ratio, qip_stats

    snap = read_snapshot(args.snapshot)
    g = snap.subgraph()
    source = _ints(args.source)
    checks = args.checks.split(",")
    rng = substream(args.seed, "cli-walk")
    if "envelope" in checks:
        ts = [args.horizon // 4, args.horizon // 2]
        keep = sorted({t for t in ts} | {t + 1 for t in ts})
        kern = exact_kernel(g, source, max(keep), keep=keep)
        fit = envelope_check(kern, ts, g.d)
        print(f"envelope: C1={fit.c1:.4g} C2={fit.c2:.4g} C3={fit.c3:.4g} C4={fit.c4:.4g}")
    if "harnack" in checks:
        rep = harnack_ratio(g, source, max(4, args.horizon // 8), rng=rng)
        print(f"harnack: max ratio {rep.max_ratio:.4f} (constant data {rep.constant_ratio:.6f})")
    if "green" in checks:
        if g.d < 3:
            print("green: skipped (requires d >= 3)")
        else:
            f = green_field(g, source, max(8, args.horizon // 4))
            print(f"green: diagonal {f.values[f.window.rel(source)]:.6f}")
    if "qip" in checks:
        rep = qip_stats(g, source, args.horizon, 400, rng=rng)
        cov = rep.captures[args.horizon]
        print(f"qip: sigma diag {np.diag(cov)} offdiag {cov[0, 1]:.4f}")
    if "clt" in checks:
        from .walk import local_clt_check

        sigma = 0.5 * np.eye(g.d)
        rep = local_clt_check(g, source, ns=[args.horizon], sigma=sigma, m=2.0 * g.d,
                              grid_radius=1.0, grid_step=0.5)
        print(f"clt: sup error {rep.rows[0][1]:.4g} at n={args.horizon} (full-lattice reference sigma)")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .pipeline import run_pipeline

    cfg = load_config(args.config)
    out = args.out_dir or cfg.output_dir or os.environ.get("PERCOLAB_OUT") or "percolab-out"
    bundle = run_pipeline(cfg, out, snapshot_path=args.snapshot)
    print(f"bundle written to {bundle.directory}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .pipeline import report

    print(report(args.bundle, plots=args.plots), end="")
    return EXIT_OK


def cmd_validate(args) -> int:
    rep = validate_config(args.config)
    if rep.errors:
        for e in rep.errors:
            print(f"error: {e}", file=sys.stderr)
    if rep.compliance is not None:
        print(rep.table())
    if not rep.ok:
        return EXIT_VALIDATION
    print("config ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="percolab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw one configuration")
    p.add_argument("--model", required=True, choices=["bernoulli", "interlacements", "vacant", "gff_excursion"])
    p.add_argument("--param", type=float, required=True)
    p.add_argument("--box", required=True, help="sides, comma separated")
    p.add_argument("--corner", default=None, help="corner, comma separated")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--guard-factor", type=float, default=4.0)
    p.add_argument("--out", default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("classify", help="good/bad classification")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--ladder", default=None, help="l0,r0,L0,theta[,depth]")
    p.add_argument("--eta", default=None, help="eta1,eta2")
    p.add_argument("--config", default=None, help="read ladder and eta from a config file")
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--region-corner", default=None)
    p.add_argument("--region-sides", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("perforate", help="multiscale perforation")
    p.add_argument("--badness", required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--origin", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_perforate)

    p = sub.add_parser("cluster", help="largest-cluster checks")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--ladder", required=True)
    p.add_argument("--eta", default="0.6,0.9")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--origin", required=True)
    p.add_argument("--checks", default="distance,volume")
    p.add_argument("--pairs", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("isop", help="isoperimetric audit of a perforation")
    p.add_argument("--perforation", required=True)
    p.add_argument("--families", default="balls,halves,holes,random")
    p.add_argument("--out", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_isop)

    p = sub.add_parser("regularity", help="certify a ball")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--ladder", default="12,1,4,1")
    p.add_argument("--center", required=True)
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--CV", type=float, default=0.5)
    p.add_argument("--CP", type=float, default=60.0)
    p.add_argument("--CW", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_regularity)

    p = sub.add_parser("walk", help="random-walk diagnostics")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--horizon", type=int, default=64)
    p.add_argument("--checks", default="envelope,harnack")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("pipeline", help="run configured stages")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--snapshot", default=None, help="pre-existing snapshot input")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("report", help="summarize a bundle")
    p.add_argument("bundle")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="validate a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except PercolabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
