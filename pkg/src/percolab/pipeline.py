"""Pipeline orchestration: stage execution, intermediates, manifest, report.

Stages run in the fixed order sample -> classify -> perforate -> cluster ->
isop -> regularity -> walk, each persisting its outputs under the bundle
directory. A manifest records the config hash, package versions, wall times,
and the CSV schema version; any stage failure halts the run and leaves a
partial manifest with the failure recorded.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .clusters import (
    chemical_distance_check,
    event_H,
    extend_cluster,
    extended_isop_audit,
    largest_cluster,
    volume_growth_check,
)
from .config import ExperimentConfig, config_hash, to_toml_text
from .errors import IntegrityError, PercolabError, StageError
from .isoperimetry import isop_audit
from .lattice import Box
from .perforate import build as build_perforation
from .perforate import perforation_to_text, verify_structure
from .regularity import ClusterContext, certify_ball
from .renorm import classify, save_badness
from .rng import substream
from .samplers import sample, write_snapshot
from .walk import envelope_check, exact_kernel, green_field, harnack_ratio, qip_stats

CSV_SCHEMA_VERSION = 1


@dataclass
class ReportBundle:
    directory: Path
    manifest: dict

    @property
    def ok(self) -> bool:
        return "failed_stage" not in self.manifest


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _fmt(v) -> str:
    return repr(float(v))


def run_pipeline(cfg: ExperimentConfig, out_dir, snapshot_path=None) -> ReportBundle:
    """Execute the configured stages, persisting intermediates under out_dir.

    snapshot_path provides a pre-existing snapshot when the sample stage is
    omitted; a missing dependency raises StageError after the partial manifest
    is written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_text = to_toml_text(cfg)
    (out / "config.toml").write_text(cfg_text)
    manifest = {
        "schema": 1,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "config_sha256": config_hash(cfg_text),
        "percolab_version": __version__,
        "numpy_version": np.__version__,
        "stages": [],
    }

    state: dict = {}
    if snapshot_path is not None:
        from .samplers import read_snapshot

        state["snapshot"] = read_snapshot(snapshot_path)

    runners = {
        "sample": _stage_sample,
        "classify": _stage_classify,
        "perforate": _stage_perforate,
        "cluster": _stage_cluster,
        "isop": _stage_isop,
        "regularity": _stage_regularity,
        "walk": _stage_walk,
    }
    try:
        for name in cfg.stages:
            t0 = time.perf_counter()
            outputs = runners[name](cfg, state, out)
            manifest["stages"].append(
                {
                    "name": name,
                    "wall_time_s": time.perf_counter() - t0,
                    "outputs": outputs,
                }
            )
    except PercolabError as exc:
        manifest["failed_stage"] = {"name": name, "error": str(exc)}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        raise StageError(f"stage {name!r} failed: {exc}") from exc
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return ReportBundle(out, manifest)


def _require(state: dict, key: str, needed_by: str):
    if key not in state:
        raise StageError(f"stage {needed_by!r} requires {key!r}; run its stage or pass an input")
    return state[key]


def _stage_sample(cfg, state, out) -> list:
    snap = sample(cfg.model, cfg.box, cfg.stage_seed("sample"))
    state["snapshot"] = snap
    write_snapshot(out / "snapshot.perc", snap)
    _write_csv(
        out / "sample.csv",
        ["variant", "parameter", "seed", "occupied", "sites"],
        [[snap.model.variant, _fmt(snap.model.parameter), snap.seed, snap.sites.count, snap.box.site_count]],
    )
    return ["snapshot.perc", "sample.csv"]


def _default_region(cfg: ExperimentConfig) -> Box:
    p = cfg.classify_params
    if p.region_corner is not None and p.region_sides is not None:
        return Box(tuple(p.region_corner), tuple(p.region_sides))
    L = cfg.ladder.L[p.levels]
    corner = tuple(c + cfg.ladder.L0 for c in cfg.box.corner)
    sides = tuple(((s - 2 * cfg.ladder.L0) // L) * L for s in cfg.box.sides)
    if any(s <= 0 for s in sides):
        raise StageError("box too small to classify any full level box")
    return Box(corner, sides)


def _stage_classify(cfg, state, out) -> list:
    snap = _require(state, "snapshot", "classify")
    region = _default_region(cfg)
    fld = classify(snap.subgraph(), cfg.ladder, cfg.eta, region, cfg.classify_params.levels)
    state["badness"] = fld
    save_badness(out / "badness.npz", fld)
    rows = []
    for n in range(fld.nmax + 1):
        for fam, arr in (("D", fld.d_bad[n]), ("I", fld.i_bad[n])):
            rows.append([n, fam, int(arr.sum()), int(arr.size)])
    _write_csv(out / "classify.csv", ["level", "family", "bad", "vertices"], rows)
    return ["badness.npz", "classify.csv"]


def _stage_perforate(cfg, state, out) -> list:
    fld = _require(state, "badness", "perforate")
    p = cfg.perforate_params
    origin = tuple(p.origin) if p.origin is not None else fld.region.corner
    perf = build_perforation(fld, p.K, p.s, origin)
    state["perforation"] = perf
    (out / "perforation.txt").write_text(perforation_to_text(perf))
    rep = verify_structure(perf)
    rows = [
        ["connected", int(rep.connected)],
        ["volume", rep.volume],
        ["volume_bound", _fmt(rep.volume_bound)],
        ["all_good", int(bool(rep.all_good))],
        ["records", len(perf.records)],
    ]
    _write_csv(out / "perforate.csv", ["quantity", "value"], rows)
    return ["perforation.txt", "perforate.csv"]


def _stage_cluster(cfg, state, out) -> list:
    snap = _require(state, "snapshot", "cluster")
    g = snap.subgraph()
    p = cfg.cluster_params
    origin = tuple(p.origin) if p.origin is not None else tuple(
        c + 2 * cfg.ladder.L[p.s] for c in cfg.box.corner
    )
    cd = largest_cluster(g, cfg.ladder, p.K, p.s, origin)
    ec = extend_cluster(cd, g, cfg.ladder.L[p.s])
    state["cluster"] = (cd, ec)
    rng = substream(cfg.master_seed, "stage", "cluster")
    rows = [
        ["largest_size", _fmt(cd.largest_size)],
        ["tie", _fmt(int(cd.tie))],
        ["extended_size", _fmt(ec.size)],
    ]
    if "badness" in state:
        h = event_H(g, state["badness"], p.K, p.s, origin, cfg.eta)
        rows.append(["event_H", _fmt(int(h.holds))])
    if "distance" in p.checks:
        rep = chemical_distance_check(ec, g, cfg.ladder, p.s, n_pairs=p.pairs, rng=rng)
        rows.append(["chemdist_max_ratio", _fmt(rep.max_ratio)])
        rows.append(["chemdist_failures", _fmt(rep.failures)])
    if "volume" in p.checks:
        lo = cfg.ladder.L[p.s] ** g.d
        hi = p.K * cfg.ladder.L[p.s]
        radii = sorted({lo, (lo + hi) // 2, hi})
        rep = volume_growth_check(ec, g, cfg.ladder, p.s, p.K, radii, rng=rng)
        rows.append(["volume_min_constant", _fmt(rep.min_constant)])
    if "isop" in p.checks:
        reports = extended_isop_audit(ec, cfg.eta, cfg.ladder, p.s, p.K, rng=rng)
        worst = min((r.boundary / max(r.bound, 1e-300) for r in reports), default=float("inf"))
        rows.append(["ext_isop_worst_margin", _fmt(worst)])
    _write_csv(out / "cluster.csv", ["quantity", "value"], rows)
    return ["cluster.csv"]


def _stage_isop(cfg, state, out) -> list:
    perf = _require(state, "perforation", "isop")
    rng = substream(cfg.master_seed, "stage", "isop")
    reports = isop_audit(
        perf, tuple(cfg.isop_params.families), rng, per_family=cfg.isop_params.per_family
    )
    rows = [
        [r.family, r.size, r.boundary, _fmt(r.ratio), _fmt(r.gamma_ref), int(r.passed)]
        for r in reports
    ]
    _write_csv(out / "isop.csv", ["family", "size", "boundary", "ratio", "gamma_ref", "pass"], rows)
    return ["isop.csv"]


def _stage_regularity(cfg, state, out) -> list:
    snap = _require(state, "snapshot", "regularity")
    g = snap.subgraph()
    p = cfg.regularity_params
    center = tuple(p.center) if p.center is not None else tuple(
        c + s // 2 for c, s in zip(cfg.box.corner, cfg.box.sides)
    )
    if not g.sites.contains(center):
        occ = np.argwhere(g.bits)
        rel = np.asarray(g.box.rel(center))
        center = tuple(int(v) for v in (occ[np.abs(occ - rel).sum(axis=1).argmin()] + np.asarray(g.box.corner)))
    ctx = ClusterContext(g, cfg.ladder, 0)
    rng = substream(cfg.master_seed, "stage", "regularity")
    cert = certify_ball(g, center, p.R, p.C_V, p.C_P, p.C_W, ctx, rng=rng)
    rows = [
        ["center", " ".join(str(c) for c in cert.center)],
        ["radius", cert.radius],
        ["mu_ball", _fmt(cert.mu_ball)],
        ["cv_margin", _fmt(cert.cv_margin)],
        ["iso_constant", _fmt(cert.iso_constant_achieved)],
        ["cw_achieved", _fmt(cert.cw_achieved)],
        ["verdict", cert.verdict],
    ]
    _write_csv(out / "regularity.csv", ["quantity", "value"], rows)
    return ["regularity.csv"]


def _stage_walk(cfg, state, out) -> list:
    snap = _require(state, "snapshot", "walk")
    g = snap.subgraph()
    p = cfg.walk_params
    source = tuple(p.source) if p.source is not None else tuple(
        c + s // 2 for c, s in zip(cfg.box.corner, cfg.box.sides)
    )
    if not g.sites.contains(source) or g.mu(source) == 0:
        occ = np.argwhere(g.degrees > 0)
        rel = np.asarray(g.box.rel(source))
        source = tuple(int(v) for v in (occ[np.abs(occ - rel).sum(axis=1).argmin()] + np.asarray(g.box.corner)))
    rows = []
    rng = substream(cfg.master_seed, "stage", "walk")
    if "envelope" in p.checks:
        ts = sorted(int(t) for t in p.ts)
        keep = sorted({t for t in ts} | {t + 1 for t in ts})
        kern = exact_kernel(g, source, max(keep), keep=keep)
        fit = envelope_check(kern, ts, g.d)
        rows += [
            ["envelope_c1", _fmt(fit.c1)],
            ["envelope_c2", _fmt(fit.c2)],
            ["envelope_c3", _fmt(fit.c3)],
            ["envelope_c4", _fmt(fit.c4)],
            ["envelope_anomalies", _fmt(fit.anomalies)],
        ]
    if "harnack" in p.checks:
        rep = harnack_ratio(g, source, p.harnack_R, p.harnack_trials, rng=rng)
        rows += [
            ["harnack_max_ratio", _fmt(rep.max_ratio)],
            ["harnack_constant_ratio", _fmt(rep.constant_ratio)],
            ["harnack_floored", _fmt(rep.floored)],
        ]
    if "green" in p.checks and g.d >= 3:
        f = green_field(g, source, p.green_guard)
        rows.append(["green_diagonal", _fmt(f.values[f.window.rel(source)])])
    if "qip" in p.checks:
        rep = qip_stats(g, source, p.qip_n, p.qip_trials, rng=rng)
        cov = rep.captures[p.qip_n]
        rows += [
            ["qip_sigma_diag_mean", _fmt(np.mean(np.diag(cov)))],
            ["qip_sigma_offdiag", _fmt(cov[0, 1])],
            ["qip_boundary_touches", _fmt(rep.boundary_touches)],
        ]
    _write_csv(out / "walk.csv", ["quantity", "value"], rows)
    return ["walk.csv"]


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def load_manifest(bundle_dir) -> dict:
    path = Path(bundle_dir) / "manifest.json"
    if not path.exists():
        raise IntegrityError(f"{path}: manifest missing")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path}: corrupt manifest: {exc}") from exc
    cfg_path = Path(bundle_dir) / "config.toml"
    if not cfg_path.exists():
        raise IntegrityError("config.toml missing from the bundle")
    if config_hash(cfg_path.read_text()) != manifest.get("config_sha256"):
        raise IntegrityError("config hash does not match the manifest")
    return manifest


def report(bundle_dir, plots: bool = False) -> str:
    """Human-readable summary of a bundle; optionally emits SVG plots."""
    out = Path(bundle_dir)
    manifest = load_manifest(out)
    lines = [
        f"percolab bundle {out}",
        f"  config sha256: {manifest['config_sha256'][:16]}...",
        f"  version: {manifest['percolab_version']} (numpy {manifest['numpy_version']})",
    ]
    if "failed_stage" in manifest:
        fs = manifest["failed_stage"]
        lines.append(f"  FAILED at stage {fs['name']}: {fs['error']}")
    for st in manifest["stages"]:
        lines.append(f"  stage {st['name']:12s} {st['wall_time_s']:8.2f}s -> {', '.join(st['outputs'])}")

    kv = {}
    for name in ("cluster", "walk", "regularity", "perforate"):
        path = out / f"{name}.csv"
        if path.exists():
            with open(path) as f:
                for row in csv.DictReader(f):
                    kv[f"{name}.{row['quantity']}"] = row["value"]
    if kv:
        lines.append("  fitted constants:")
        for k in sorted(kv):
            lines.append(f"    {k:32s} {kv[k]}")

    isop_path = out / "isop.csv"
    if isop_path.exists():
        with open(isop_path) as f:
            rows = list(csv.DictReader(f))
        if rows:
            ratios = [float(r["ratio"]) for r in rows]
            d_ref = float(rows[0]["gamma_ref"])
            lines.append(
                f"  isoperimetry: {len(rows)} subsets, worst ratio {min(ratios):.6g}"
                f" (reference constant {d_ref:.3g})"
            )
            if plots:
                _scatter_svg(
                    out / "isop.svg",
                    [float(r["size"]) for r in rows],
                    ratios,
                    "subset size",
                    "boundary ratio",
                )
                lines.append("  wrote isop.svg")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    return text


def _scatter_svg(path, xs, ys, xlabel, ylabel, w=480, h=320) -> None:
    """Dependency-free scatter plot as a standalone vector file."""
    pad = 40
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    x0, x1 = xs.min(), max(xs.max(), xs.min() + 1e-9)
    y0, y1 = ys.min(), max(ys.max(), ys.min() + 1e-9)

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (w - 2 * pad)

    def sy(y):
        return h - pad - (y - y0) / (y1 - y0) * (h - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
        f'<text x="{w // 2}" y="{h - 8}" font-size="12" text-anchor="middle">{xlabel}</text>',
        f'<text x="12" y="{h // 2}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {h // 2})">{ylabel}</text>',
    ]
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.5" fill="steelblue"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
