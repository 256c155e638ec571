"""Pipeline parameters and their flat dotted-key YAML form.

`ground.bin_width: 0.15`, `cluster.h_d: 0.49`, `d_o: 0.26` ... Unknown keys are rejected so a
typo in a tuned-parameter file fails loudly instead of silently using a default.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Literal

import yaml
from platformdirs import user_cache_dir

from lidar_proposals.classify.network import ClassifierConfig
from lidar_proposals.cluster import ClusterParams
from lidar_proposals.errors import ConfigError
from lidar_proposals.filtering import FilterParams, MinPointsCurve
from lidar_proposals.ground import GroundGridConfig

logger = logging.getLogger(__name__)

APP_NAME = "lidar-proposals"
CACHE_DIR = Path(user_cache_dir(APP_NAME))
MODELS_DIR = CACHE_DIR / "models"
RUNS_DIR = CACHE_DIR / "runs"
DEFAULT_MODEL = MODELS_DIR / "classifier.model"

Clustering = Literal["scan", "distance"]


@dataclass(frozen=True)
class PipelineParams:
    ground: GroundGridConfig = field(default_factory=GroundGridConfig)
    d_o: float = 0.26
    cluster: ClusterParams = field(default_factory=ClusterParams)
    filter: FilterParams = field(default_factory=FilterParams)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    model_path: str | None = None
    clustering: Clustering = "scan"
    distance_backend: Literal["kdtree", "exhaustive"] = "kdtree"
    filtering: bool = True
    classify: bool = True
    n_rings: int = 64
    threads: int = 1

    def __post_init__(self) -> None:
        if self.d_o < 0:
            raise ConfigError("d_o must be >= 0")
        if self.clustering not in ("scan", "distance"):
            raise ConfigError(f"unknown clustering {self.clustering!r}")
        if self.distance_backend not in ("kdtree", "exhaustive"):
            raise ConfigError(f"unknown distance backend {self.distance_backend!r}")
        if self.threads < 1 or self.n_rings < 1:
            raise ConfigError("threads and n_rings must be >= 1")

    def with_segmentation(self, h_d: float, v_d: float, d_o: float) -> PipelineParams:
        """Copy with the three tuned segmentation values replaced."""
        return replace(self, d_o=d_o, cluster=replace(self.cluster, h_d=h_d, v_d=v_d))

    def resolved_model_path(self) -> Path:
        return Path(self.model_path) if self.model_path else DEFAULT_MODEL


_SECTIONS = {"ground": GroundGridConfig, "cluster": ClusterParams, "filter": FilterParams, "classifier": ClassifierConfig}
_TOP_LEVEL = tuple(f.name for f in fields(PipelineParams) if f.name not in _SECTIONS)


def to_flat(params: PipelineParams) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for section in _SECTIONS:
        value = getattr(params, section)
        for f in fields(value):
            item = getattr(value, f.name)
            if f.name == "curve":
                flat["filter.curve_a"] = item.a if item else None
                flat["filter.curve_k"] = item.k if item else None
            else:
                flat[f"{section}.{f.name}"] = list(item) if isinstance(item, tuple) else item
    for name in _TOP_LEVEL:
        flat[name] = getattr(params, name)
    return flat


def from_flat(values: Mapping[str, Any], base: PipelineParams | None = None) -> PipelineParams:
    """Overlay dotted keys on `base` (defaults when omitted)."""
    base = base or PipelineParams()
    known = set(to_flat(base))
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")

    merged = {**to_flat(base), **values}
    try:
        sections: dict[str, Any] = {}
        for section, cls in _SECTIONS.items():
            prefix = f"{section}."
            kwargs = {k[len(prefix) :]: v for k, v in merged.items() if k.startswith(prefix)}
            if section == "filter":
                a, k = kwargs.pop("curve_a"), kwargs.pop("curve_k")
                kwargs["curve"] = MinPointsCurve(float(a), float(k)) if a is not None and k is not None else None
            kwargs = {key: tuple(v) if isinstance(v, list) else v for key, v in kwargs.items()}
            sections[section] = cls(**kwargs)
        top = {name: merged[name] for name in _TOP_LEVEL}
        return PipelineParams(**sections, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_params(path: str | Path | None, overrides: Iterable[str] = (), base: PipelineParams | None = None) -> PipelineParams:
    """Read a config file (if any), then apply `key=value` overrides; overrides win."""
    values: dict[str, Any] = {}
    if path is not None:
        with Path(path).open(encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a mapping of dotted keys")
        values.update(loaded)
    values.update(parse_overrides(overrides))
    return from_flat(values, base)


def parse_overrides(overrides: Iterable[str]) -> dict[str, Any]:
    parsed: dict[str, Any] = {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not key=value")
        parsed[key.strip()] = yaml.safe_load(raw) if raw.strip() else None
    return parsed


def save_params(path: str | Path, params: PipelineParams) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(to_flat(params), sort_keys=False), encoding="utf-8")
    logger.info("wrote parameters to %s", path)
