"""Run configuration: every hyper-parameter and seed, strictly parsed and hashed.

Config files use flat ``key = value`` lines; dotted keys select a section::

    seed = 7
    meta.max_iters = 500
    adapt.epsilon = 0.4
    model.hidden = [64, 64]

Unknown keys, wrong types and out-of-range values are errors.  The hash is
computed over the fully materialized config (defaults included), so it does
not depend on key order or on which defaults a file spelled out.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .exceptions import ConfigError


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [64, 64])
    embed_dim: int = 16
    pcn_bias: bool = True
    pcn_init: str = "averaging"


@dataclass
class DataConfig:
    input_dim: int = 16
    n_source_classes: int = 40
    n_target_classes: int = 20
    class_sep: float = 1.0
    noise: float = 1.0
    shift_rotation: bool = True
    shift_anisotropy: float = 2.0
    shift_offset: float = 0.5
    shift_tanh: bool = False


@dataclass
class MetaTrainConfig:
    max_iters: int = 2000
    max_initers: int = 5
    inner_lr: float = 1e-3
    outer_lr: float = 1e-6
    weight_decay: float = 1e-2
    optimizer: str = "adam"
    n_way: int = 5
    k_shot: int = 5
    q_per_class: int = 15
    lambda_dis: float = 0.1
    lambda_coh: float = 1e-3
    use_pcn: bool = True
    reset_theta: bool = False
    joint_update: bool = False
    warmup_iters: int = 0
    warmup_lr: float = 1e-3


@dataclass
class AdaptConfig:
    max_iters: int = 100
    lr: float = 1e-2
    optimizer: str = "sgd"
    alpha0: float = 0.5
    gamma: float = 0.99
    epsilon: float = 0.4
    lambda_dis: float = 0.1
    lambda_coh: float = 1e-3
    clustering: bool = True
    n_clusters: int = 5
    use_pcn: bool = True
    use_wma: bool = True
    use_ce_support: bool = True
    use_ce_transductive: bool = True
    alpha_first: bool = False


@dataclass
class HarnessConfig:
    n_tasks: int = 200
    n_way: int = 5
    k_shot: int = 5
    q_per_class: int = 15


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "out"
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    meta: MetaTrainConfig = field(default_factory=MetaTrainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def config_hash(self) -> str:
        return config_hash(self)


SECTIONS = ("model", "data", "meta", "adapt", "harness")
# fields that do not influence results and therefore stay out of the hash
_UNHASHED = ("out_dir",)


def _check_type(key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key}: expected a list of integers, got {value!r}")
        value = list(value)
    return value


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def from_flat(flat: dict, base: RunConfig | None = None) -> RunConfig:
    """Apply dotted ``key -> value`` overrides onto ``base`` (defaults if omitted)."""
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    sections = {s: dataclasses.replace(getattr(cfg, s)) for s in SECTIONS}
    top = {"seed": cfg.seed, "out_dir": cfg.out_dir}
    for key, value in flat.items():
        parts = key.split(".")
        if len(parts) == 1 and parts[0] in top:
            top[parts[0]] = _check_type(key, value, top[parts[0]])
        elif len(parts) == 2 and parts[0] in sections:
            section = sections[parts[0]]
            names = {f.name for f in dataclasses.fields(section)}
            if parts[1] not in names:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(section, parts[1], _check_type(key, value, getattr(section, parts[1])))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    out = RunConfig(seed=top["seed"], out_dir=top["out_dir"], **sections)
    validate(out)
    return out


def parse_config_text(text: str) -> RunConfig:
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    return from_flat(_flatten(tree))


def parse_config(path=None) -> RunConfig:
    """Read a config file; ``None`` yields the full default config."""
    if path is None:
        return from_flat({})
    return parse_config_text(Path(path).read_text())


def _require(cond: bool, key: str, constraint: str, value) -> None:
    if not cond:
        raise ConfigError(f"{key} = {value!r} violates constraint {constraint}")


def validate(cfg: RunConfig) -> None:
    m, a, h, d, mo = cfg.meta, cfg.adapt, cfg.harness, cfg.data, cfg.model
    _require(cfg.seed >= 0, "seed", ">= 0", cfg.seed)
    _require(all(v > 0 for v in mo.hidden), "model.hidden", "all > 0", mo.hidden)
    _require(mo.pcn_init in ("averaging", "glorot"), "model.pcn_init",
             "in {averaging, glorot}", mo.pcn_init)
    _require(mo.embed_dim > 0, "model.embed_dim", "> 0", mo.embed_dim)
    _require(d.input_dim > 0, "data.input_dim", "> 0", d.input_dim)
    _require(d.class_sep > 0, "data.class_sep", "> 0", d.class_sep)
    _require(d.noise > 0, "data.noise", "> 0", d.noise)
    _require(d.shift_anisotropy >= 1, "data.shift_anisotropy", ">= 1", d.shift_anisotropy)
    _require(d.shift_offset >= 0, "data.shift_offset", ">= 0", d.shift_offset)
    _require(m.max_iters >= 0, "meta.max_iters", ">= 0", m.max_iters)
    _require(m.max_initers >= 0, "meta.max_initers", ">= 0", m.max_initers)
    _require(m.inner_lr > 0, "meta.inner_lr", "> 0", m.inner_lr)
    _require(m.outer_lr > 0, "meta.outer_lr", "> 0", m.outer_lr)
    _require(m.warmup_lr > 0, "meta.warmup_lr", "> 0", m.warmup_lr)
    _require(m.warmup_iters >= 0, "meta.warmup_iters", ">= 0", m.warmup_iters)
    _require(m.weight_decay >= 0, "meta.weight_decay", ">= 0", m.weight_decay)
    _require(m.optimizer in ("adam", "sgd"), "meta.optimizer", "in {adam, sgd}", m.optimizer)
    for sec, name in ((m, "meta"), (h, "harness")):
        _require(sec.n_way >= 2, f"{name}.n_way", ">= 2", sec.n_way)
        _require(sec.k_shot >= 1, f"{name}.k_shot", ">= 1", sec.k_shot)
        _require(sec.q_per_class >= 1, f"{name}.q_per_class", ">= 1", sec.q_per_class)
    _require(m.n_way <= d.n_source_classes, "meta.n_way", "<= data.n_source_classes", m.n_way)
    _require(h.n_way <= d.n_target_classes, "harness.n_way", "<= data.n_target_classes", h.n_way)
    _require(h.n_tasks >= 1, "harness.n_tasks", ">= 1", h.n_tasks)
    for key in ("lambda_dis", "lambda_coh"):
        _require(getattr(m, key) >= 0, f"meta.{key}", ">= 0", getattr(m, key))
        _require(getattr(a, key) >= 0, f"adapt.{key}", ">= 0", getattr(a, key))
    _require(a.max_iters >= 0, "adapt.max_iters", ">= 0", a.max_iters)
    _require(a.lr > 0, "adapt.lr", "> 0", a.lr)
    _require(a.optimizer in ("adam", "sgd"), "adapt.optimizer", "in {adam, sgd}", a.optimizer)
    _require(0 < a.alpha0 <= 1, "adapt.alpha0", "in (0, 1]", a.alpha0)
    _require(0 < a.gamma < 1, "adapt.gamma", "in (0, 1)", a.gamma)
    _require(0 <= a.epsilon <= 1, "adapt.epsilon", "in [0, 1]", a.epsilon)
    _require(a.n_clusters >= 1, "adapt.n_clusters", ">= 1", a.n_clusters)


def hashed_dict(cfg: RunConfig) -> dict:
    d = cfg.to_dict()
    for k in _UNHASHED:
        d.pop(k)
    return d


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(hashed_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)


def to_text(cfg: RunConfig) -> str:
    """Materialized config as ``key = value`` lines that :func:`parse_config_text` reads back."""
    lines = [f"# config_hash = {cfg.config_hash}",
             f"seed = {cfg.seed}", f"out_dir = {_toml_value(cfg.out_dir)}"]
    for s in SECTIONS:
        for k, v in dataclasses.asdict(getattr(cfg, s)).items():
            lines.append(f"{s}.{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


def replace(cfg: RunConfig, **flat) -> RunConfig:
    """Copy of ``cfg`` with dotted overrides, e.g. ``replace(cfg, **{"adapt.epsilon": 1.0})``."""
    return from_flat(flat, base=cfg)
