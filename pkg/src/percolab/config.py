"""Experiment configuration: a TOML file with nested tables.

The exact grammar (documented here and in the README):

* top level: ``master_seed`` (integer), optional ``output_dir`` (string).
* ``[model]``: ``variant`` in {bernoulli, interlacements, vacant,
  gff_excursion}, ``parameter`` (float), optional ``guard_factor`` (>= 2).
* ``[box]``: ``corner`` and ``sides`` (equal-length integer arrays, d >= 2).
* ``[ladder]``: ``l0``, ``r0``, ``L0``, optional ``theta_sc`` (default 1) and
  ``depth`` (default 2); requires l0 > 8 r0 and r0 | l0.
* ``[eta]``: ``eta1``, ``eta2`` with 0 < eta1 < 1 and eta1 <= eta2 < 2 eta1.
* ``[pipeline]``: ``stages``, an ordered subset of
  sample, classify, perforate, cluster, isop, regularity, walk.
* one optional table per stage with its parameters (see the dataclass
  defaults below).

A config round-trips losslessly through to_toml_text/parse. The master seed
determines every stage's substream through spawn_seed(master, stage-name).
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Optional

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .lattice import Box
from .renorm import DensityPair, ScaleLadder
from .rng import spawn_seed
from .samplers import ModelSpec

STAGES = ("sample", "classify", "perforate", "cluster", "isop", "regularity", "walk")


@dataclass
class ClassifyParams:
    levels: int = 1
    region_corner: Optional[list] = None
    region_sides: Optional[list] = None


@dataclass
class PerforateParams:
    K: int = 2
    s: int = 1
    origin: Optional[list] = None


@dataclass
class ClusterParams:
    K: int = 4
    s: int = 0
    origin: Optional[list] = None
    checks: list = field(default_factory=lambda: ["distance", "volume"])
    pairs: int = 400


@dataclass
class IsopParams:
    families: list = field(default_factory=lambda: ["balls", "halves", "holes", "random"])
    per_family: int = 24


@dataclass
class RegularityParams:
    center: Optional[list] = None
    R: int = 8
    C_V: float = 0.5
    C_P: float = 60.0
    C_W: float = 4.0


@dataclass
class WalkParams:
    source: Optional[list] = None
    ts: list = field(default_factory=lambda: [16, 32])
    checks: list = field(default_factory=lambda: ["envelope", "harnack"])
    harnack_R: int = 8
    harnack_trials: int = 32
    qip_n: int = 400
    qip_trials: int = 500
    green_guard: int = 16


@dataclass
class ExperimentConfig:
    master_seed: int
    model: ModelSpec
    box: Box
    ladder: ScaleLadder
    eta: DensityPair
    stages: list
    output_dir: Optional[str] = None
    classify_params: ClassifyParams = field(default_factory=ClassifyParams)
    perforate_params: PerforateParams = field(default_factory=PerforateParams)
    cluster_params: ClusterParams = field(default_factory=ClusterParams)
    isop_params: IsopParams = field(default_factory=IsopParams)
    regularity_params: RegularityParams = field(default_factory=RegularityParams)
    walk_params: WalkParams = field(default_factory=WalkParams)

    def stage_seed(self, stage: str) -> int:
        return spawn_seed(self.master_seed, "stage", stage)


def _need(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing required key {key!r}", where)
    return table[key]


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse failure: {exc}", "line 1") from exc
    return parse_config_dict(raw)


def parse_config_dict(raw: dict) -> ExperimentConfig:
    master_seed = _need(raw, "master_seed", "top level")
    if not isinstance(master_seed, int):
        raise ConfigError("master_seed must be an integer", "master_seed")

    mt = _need(raw, "model", "top level")
    try:
        model = ModelSpec(
            _need(mt, "variant", "model"),
            float(_need(mt, "parameter", "model")),
            float(mt.get("guard_factor", 4.0)),
        )
    except Exception as exc:
        raise ConfigError(str(exc), "model") from exc

    bt = _need(raw, "box", "top level")
    corner = _need(bt, "corner", "box")
    sides = _need(bt, "sides", "box")
    if len(corner) != len(sides):
        raise ConfigError("corner and sides lengths differ", "box")
    try:
        box = Box(tuple(corner), tuple(sides))
    except Exception as exc:
        raise ConfigError(str(exc), "box") from exc

    lt = _need(raw, "ladder", "top level")
    try:
        ladder = ScaleLadder(
            _need(lt, "l0", "ladder"),
            _need(lt, "r0", "ladder"),
            _need(lt, "L0", "ladder"),
            lt.get("theta_sc", 1),
            lt.get("depth", 2),
        )
    except Exception as exc:
        raise ConfigError(str(exc), "ladder") from exc

    et = _need(raw, "eta", "top level")
    try:
        eta = DensityPair(float(_need(et, "eta1", "eta")), float(_need(et, "eta2", "eta")))
    except Exception as exc:
        raise ConfigError(str(exc), "eta") from exc

    pt = raw.get("pipeline", {})
    stages = list(pt.get("stages", ["sample"]))
    for s in stages:
        if s not in STAGES:
            raise ConfigError(f"unknown stage {s!r}", "pipeline.stages")

    cfg = ExperimentConfig(
        master_seed=master_seed,
        model=model,
        box=box,
        ladder=ladder,
        eta=eta,
        stages=stages,
        output_dir=raw.get("output_dir"),
    )
    for name, cls, attr in (
        ("classify", ClassifyParams, "classify_params"),
        ("perforate", PerforateParams, "perforate_params"),
        ("cluster", ClusterParams, "cluster_params"),
        ("isop", IsopParams, "isop_params"),
        ("regularity", RegularityParams, "regularity_params"),
        ("walk", WalkParams, "walk_params"),
    ):
        if name in raw:
            table = raw[name]
            known = cls()
            for k, v in table.items():
                if not hasattr(known, k):
                    raise ConfigError(f"unknown key {k!r}", name)
                setattr(known, k, list(v) if isinstance(v, (list, tuple)) else v)
            setattr(cfg, attr, known)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


# ---------------------------------------------------------------------------
# writer (restricted TOML emitter for the schema above)
# ---------------------------------------------------------------------------


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"unserializable value {v!r}")


def to_toml_text(cfg: ExperimentConfig) -> str:
    lines = [f"master_seed = {cfg.master_seed}"]
    if cfg.output_dir is not None:
        lines.append(f"output_dir = {_toml_value(cfg.output_dir)}")
    lines += [
        "",
        "[model]",
        f"variant = {_toml_value(cfg.model.variant)}",
        f"parameter = {_toml_value(cfg.model.parameter)}",
        f"guard_factor = {_toml_value(cfg.model.guard_factor)}",
        "",
        "[box]",
        f"corner = {_toml_value(list(cfg.box.corner))}",
        f"sides = {_toml_value(list(cfg.box.sides))}",
        "",
        "[ladder]",
        f"l0 = {cfg.ladder.l0}",
        f"r0 = {cfg.ladder.r0}",
        f"L0 = {cfg.ladder.L0}",
        f"theta_sc = {cfg.ladder.theta_sc}",
        f"depth = {cfg.ladder.depth}",
        "",
        "[eta]",
        f"eta1 = {_toml_value(cfg.eta.eta1)}",
        f"eta2 = {_toml_value(cfg.eta.eta2)}",
        "",
        "[pipeline]",
        f"stages = {_toml_value(cfg.stages)}",
    ]
    for name, attr in (
        ("classify", "classify_params"),
        ("perforate", "perforate_params"),
        ("cluster", "cluster_params"),
        ("isop", "isop_params"),
        ("regularity", "regularity_params"),
        ("walk", "walk_params"),
    ):
        params = asdict(getattr(cfg, attr))
        body = [f"{k} = {_toml_value(v)}" for k, v in params.items() if v is not None]
        if body:
            lines += ["", f"[{name}]"] + body
    return "\n".join(lines) + "\n"


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# validation report
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    ok: bool
    errors: list
    compliance: Optional[dict] = None

    def table(self) -> str:
        if not self.compliance:
            return ""
        rows = ["ladder compliance (reference scale conditions):"]
        for k, v in self.compliance.items():
            if isinstance(v, bool):
                rows.append(f"  {k:22s} {'PASS' if v else 'fail'}")
            else:
                rows.append(f"  {k:22s} {v:.6g}")
        return "\n".join(rows)


def validate_config(path) -> ValidationReport:
    """Field presence/range checks plus the named ladder-condition table."""
    try:
        cfg = load_config(path)
    except FileNotFoundError:
        return ValidationReport(False, [f"{path}: no such file"])
    except ConfigError as exc:
        return ValidationReport(False, [str(exc)])
    errors = []
    if cfg.model.needs_d3 and cfg.box.d < 3:
        errors.append(f"model {cfg.model.variant} requires d >= 3")
    comp = cfg.ladder.compliance(cfg.box.d, cfg.eta)
    return ValidationReport(not errors, errors, comp)
