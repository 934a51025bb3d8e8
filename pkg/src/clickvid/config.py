"""One text file drives every stage.

The format is line oriented: ``section.key = value`` where ``value`` is a JSON
literal (numbers, ``true``/``false``, ``null``, quoted strings, lists and
objects). Blank lines and lines starting with ``#`` are ignored. Unknown
sections or keys are rejected so that typos cannot silently fall back to
defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .errors import InvalidConfig, MissingInput
from .pipeline import EmbedSettings, MiningSettings
from .synth import SynthConfig
from .train import TrainConfig


@dataclass
class ClusterSettings:
    k_item: Optional[int] = None  # None means max(16, nodes // 20)
    k_leaf: int = 100
    max_iters: int = 100
    n_init: int = 10


@dataclass
class EvalSettings:
    k: int = 20
    ensemble_weight: float = 0.5
    fixed_category: bool = True


@dataclass
class PathSettings:
    pvlog: Optional[str] = None  # default: the synth stage output
    inventory: Optional[str] = None
    eval_queries: Optional[str] = None


@dataclass
class RunSettings:
    seed: int = 0


def _feature_train() -> TrainConfig:
    return TrainConfig(epochs=15, hidden=64, out_dim=32, lr=0.01)


def _category_train() -> TrainConfig:
    return TrainConfig(epochs=10, hidden=64, out_dim=32, lr=0.01)


@dataclass
class PipelineConfig:
    run: RunSettings = field(default_factory=RunSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    synth: SynthConfig = field(default_factory=SynthConfig)
    embed_item: EmbedSettings = field(default_factory=lambda: EmbedSettings(dim=32))
    embed_leaf: EmbedSettings = field(default_factory=lambda: EmbedSettings(dim=32))
    cluster: ClusterSettings = field(default_factory=ClusterSettings)
    mining: MiningSettings = field(default_factory=lambda: MiningSettings(channel_weights=(1.0, 0.2, 0.2)))
    train_category: TrainConfig = field(default_factory=_category_train)
    train_feature: TrainConfig = field(default_factory=_feature_train)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Copy with the run seed and every training seed set to ``seed``."""
        return replace(
            self,
            run=RunSettings(seed),
            train_category=replace(self.train_category, seed=seed),
            train_feature=replace(self.train_feature, seed=seed),
        )

    def validate(self) -> None:
        self.synth.validate()
        self.train_category.validate()
        self.train_feature.validate()
        for name in ("embed_item", "embed_leaf"):
            s = getattr(self, name)
            if min(s.walks_per_node, s.walk_length, s.window, s.dim, s.epochs, s.negative) < 1 or s.lr0 <= 0:
                raise InvalidConfig(f"{name}: walk, window, dim, epochs and negative must be positive and lr0 > 0")
            if s.mode not in ("hs", "neg"):
                raise InvalidConfig(f"{name}.mode must be 'hs' or 'neg', got {s.mode!r}")
            if s.min_edge_weight < 1 or s.min_degree < 0:
                raise InvalidConfig(f"{name}: min_edge_weight >= 1 and min_degree >= 0 required")
        c = self.cluster
        if c.k_item is not None and not isinstance(c.k_item, int):
            raise InvalidConfig("cluster.k_item must be null or an integer")
        if (c.k_item is not None and c.k_item < 1) or c.k_leaf < 1 or c.max_iters < 1 or c.n_init < 1:
            raise InvalidConfig("cluster K values, max_iters and n_init must be >= 1")
        m = self.mining
        if len(m.channel_weights) != len(self.synth.channel_dims):
            raise InvalidConfig("mining.channel_weights needs one weight per feature channel")
        if min(m.channel_weights) < 0 or sum(m.channel_weights) <= 0:
            raise InvalidConfig("mining.channel_weights must be non-negative with a positive sum")
        if m.max_triplets < 1 or m.list_size < 2:
            raise InvalidConfig("mining.max_triplets >= 1 and mining.list_size >= 2 required")
        if m.feature_source not in ("item", "query", "both") or m.category_source not in ("item", "query", "both"):
            raise InvalidConfig("mining sources must be 'item', 'query' or 'both'")
        for name in ("gamma", "eps"):
            v = getattr(m, name)
            if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0):
                raise InvalidConfig(f"mining.{name} must be null or a non-negative number")
        if not (0 <= m.gamma_pct <= 100 and 0 <= m.eps_pct <= 100):
            raise InvalidConfig("mining percentiles must lie in [0, 100]")
        if self.eval.k < 1 or not 0 <= self.eval.ensemble_weight <= 1:
            raise InvalidConfig("eval.k >= 1 and eval.ensemble_weight in [0, 1] required")


SECTIONS = tuple(f.name for f in fields(PipelineConfig))


def _coerce(section: str, key: str, default, value):
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidConfig(f"{where} expects true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfig(f"{where} expects an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig(f"{where} expects a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise InvalidConfig(f"{where} expects a list")
        return tuple(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise InvalidConfig(f"{where} expects a string")
    if isinstance(default, dict) and not isinstance(value, dict):
        raise InvalidConfig(f"{where} expects an object")
    if default is None and isinstance(value, bool):
        raise InvalidConfig(f"{where} does not take a boolean")
    return value


def parse_config(text: str) -> PipelineConfig:
    """Parse config text on top of the defaults and validate the result."""
    cfg = PipelineConfig()
    defaults = PipelineConfig()
    seen = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, value_text = line.partition("=")
        if not sep:
            raise InvalidConfig(f"line {line_no}: expected 'section.key = value'")
        name = name.strip()
        section, dot, key = name.partition(".")
        if not dot or section not in SECTIONS:
            raise InvalidConfig(f"line {line_no}: unknown section in {name!r}")
        obj = getattr(cfg, section)
        known = {f.name for f in fields(obj)}
        if key not in known:
            raise InvalidConfig(f"line {line_no}: unknown key {name!r}")
        if name in seen:
            raise InvalidConfig(f"line {line_no}: duplicate key {name!r}")
        seen.add(name)
        try:
            value = json.loads(value_text.strip())
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"line {line_no}: bad value for {name!r}: {exc.msg}") from None
        setattr(obj, key, _coerce(section, key, getattr(getattr(defaults, section), key), value))
    cfg.validate()
    return cfg


def _encode(value) -> str:
    if isinstance(value, tuple):
        value = list(value)
    return json.dumps(value, sort_keys=True)


def dump_config(cfg: PipelineConfig) -> str:
    """Every key of every section, one per line, in declaration order."""
    lines = []
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = {_encode(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def load_config(path: Optional[str]) -> PipelineConfig:
    """Read a config file, or return validated defaults when ``path`` is None."""
    if path is None:
        cfg = PipelineConfig()
        cfg.validate()
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except FileNotFoundError:
        raise MissingInput(f"config file {path} not found") from None
