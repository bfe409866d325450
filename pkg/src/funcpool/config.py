"""Strict JSON pipeline configuration.

Defaults reproduce the published hyperparameters. Every random stream in a
run is derived from the single top-level ``seed`` unless a stage section
pins its own ``seed``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .rng import Rng
from .seqio import BUILTIN_TAGS, TagSpec
from .stage1 import Stage1Config
from .stage2 import Stage2Config

CONFIG_ENV = "FUNCPOOL_CONFIG"

PATH_KEYS = (
    "fixture",
    "work",
    "stage1",
    "stage2",
    "sequences",
    "embeddings",
    "truth",
    "functional",
    "known_classes",
)


@dataclass
class EmbeddingConfig:
    """Parameters of the synthetic embedder used to re-embed augmented sequences."""

    dim: int = 32
    seed: int = 0
    signal: float = 4.0

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError("embedding.dim must be >= 2")


def _tag_from_json(item: Any) -> TagSpec:
    if isinstance(item, str):
        item = {"name": item}
    if not isinstance(item, dict):
        raise ConfigError(f"tag entry must be a name or an object, got {item!r}")
    unknown = set(item) - {"name", "residues", "terminus"}
    if unknown:
        raise ConfigError(f"unknown tag keys: {', '.join(sorted(unknown))}")
    name = item.get("name")
    if not isinstance(name, str):
        raise ConfigError("tag entry needs a name")
    residues = item.get("residues", BUILTIN_TAGS.get(name))
    if residues is None:
        raise ConfigError(f"tag {name!r} is not built in; give its residues")
    return TagSpec(name, residues, item.get("terminus", "N"))


def _default_tags() -> list[TagSpec]:
    return [TagSpec("his6", BUILTIN_TAGS["his6"], "N"), TagSpec("hsv", BUILTIN_TAGS["hsv"], "C")]


@dataclass
class PipelineConfig:
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    paths: dict[str, str] = field(default_factory=dict)
    seed: int = 0
    keep_fraction: float = 0.2
    pseudo_fraction: float = 0.10
    tags: list[TagSpec] = field(default_factory=_default_tags)
    ortholog_identity: float = 0.8
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)

    def __post_init__(self):
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ConfigError("keep_fraction must be in (0, 1]")
        if not 0.0 < self.pseudo_fraction <= 1.0:
            raise ConfigError("pseudo_fraction must be in (0, 1]")
        if not 0.0 <= self.ortholog_identity <= 1.0:
            raise ConfigError("ortholog_identity must be in [0, 1]")
        bad = set(self.paths) - set(PATH_KEYS)
        if bad:
            raise ConfigError(f"unknown paths keys: {', '.join(sorted(bad))}")

    def stream(self, name: str) -> Rng:
        return Rng(self.seed).child(name)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PipelineConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        seed = int(d.get("seed", 0))
        root = Rng(seed)
        sections = {}
        for name, section_cls in (("stage1", Stage1Config), ("stage2", Stage2Config)):
            sub = dict(_section(d, name))
            sub.setdefault("seed", root.child(name).next_u64())
            sections[name] = section_cls.from_dict(sub)
        emb = dict(_section(d, "embedding"))
        emb_unknown = set(emb) - {f.name for f in fields(EmbeddingConfig)}
        if emb_unknown:
            raise ConfigError(f"unknown embedding keys: {', '.join(sorted(emb_unknown))}")
        paths = _section(d, "paths")
        if not all(isinstance(v, str) for v in paths.values()):
            raise ConfigError("paths values must be strings")
        kwargs: dict[str, Any] = dict(
            stage1=sections["stage1"],
            stage2=sections["stage2"],
            paths=dict(paths),
            seed=seed,
            embedding=EmbeddingConfig(**emb),
        )
        for key in ("keep_fraction", "pseudo_fraction", "ortholog_identity"):
            if key in d:
                kwargs[key] = float(d[key])
        if "tags" in d:
            if not isinstance(d["tags"], list):
                raise ConfigError("tags must be a list")
            kwargs["tags"] = [_tag_from_json(t) for t in d["tags"]]
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage1": asdict(self.stage1),
            "stage2": asdict(self.stage2),
            "paths": dict(self.paths),
            "seed": self.seed,
            "keep_fraction": self.keep_fraction,
            "pseudo_fraction": self.pseudo_fraction,
            "tags": [asdict(t) for t in self.tags],
            "ortholog_identity": self.ortholog_identity,
            "embedding": asdict(self.embedding),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def path(self, key: str, base: str | Path | None = None) -> Path:
        if key not in self.paths:
            raise ConfigError(f"config paths has no {key!r} entry")
        p = Path(self.paths[key])
        if base is not None and not p.is_absolute():
            p = Path(base) / p
        return p


def _section(d: dict[str, Any], name: str) -> dict[str, Any]:
    sub = d.get(name, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return sub


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Read a config file; falls back to ``$FUNCPOOL_CONFIG``, then to defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return PipelineConfig.from_dict({})
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return PipelineConfig.from_dict(d)
