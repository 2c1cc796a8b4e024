"""Pipeline configuration: one YAML file drives every subcommand.

All paths are resolved relative to the config file's directory. CLI
overrides take the form ``section.key=value`` with YAML-parsed values.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError, ContractError
from .fusion import DEFAULT_COEFFICIENTS
from .retrievers import RetrieverSpec
from .signals import TOP_DOCS

KNOWN_MODES = ("mor-pre", "mor-post", "rrf", "route-oracle",
               "ablate-gmax-rmean", "ablate-gmean-rmean", "ablate-gmean-rpre")


@dataclass
class DatasetPaths:
    corpus: Path
    queries: Path
    qrels: Path | None = None
    propositions: Path | None = None
    subqueries: Path | None = None


@dataclass
class FusionSettings:
    modes: tuple[str, ...] = ("mor-pre", "mor-post")
    coefficients: tuple[float, float, float] = DEFAULT_COEFFICIENTS
    rrf_k: float = 60.0
    top_docs: int = TOP_DOCS
    run_depth: int = 100
    seed: int = 17
    prereject_threshold: float | None = None
    dump_signals: bool = True


@dataclass
class SweepSettings:
    mode: str = "mor-pre"
    thresholds: tuple[float, ...] = (0.0, 50.0, 95.0, 100.0)


@dataclass
class EvalSettings:
    metrics: tuple[str, ...] = ("ndcg@5", "ndcg@20")


@dataclass
class SimulationSettings:
    domains: tuple[str, ...] = ()
    reference_space: str = ""
    reference_query_space: str = ""
    seed: int = 7


@dataclass
class PipelineConfig:
    dataset: DatasetPaths
    spaces: dict[str, Path] = field(default_factory=dict)
    pool: list[RetrieverSpec] = field(default_factory=list)
    fusion: FusionSettings = field(default_factory=FusionSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    cache_dir: Path | None = None
    config_hash: str = ""

    def validate(self) -> None:
        for label, path in [("dataset.corpus", self.dataset.corpus),
                            ("dataset.queries", self.dataset.queries),
                            ("dataset.qrels", self.dataset.qrels),
                            ("dataset.propositions", self.dataset.propositions),
                            ("dataset.subqueries", self.dataset.subqueries)]:
            if path is not None and not path.exists():
                raise ConfigError(f"{label}: no such file {path}")
        for space_id, path in self.spaces.items():
            if not path.exists():
                raise ConfigError(f"spaces[{space_id!r}]: no such file {path}")
        if not self.pool:
            raise ConfigError("pool is empty")
        labels = [spec.label for spec in self.pool]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate pool members: {labels}")
        if any(c < 0 for c in self.fusion.coefficients):
            raise ConfigError(f"fusion.coefficients must be non-negative: "
                              f"{self.fusion.coefficients}")
        for mode in self.fusion.modes:
            if mode not in KNOWN_MODES:
                raise ConfigError(f"unknown fusion mode {mode!r} (known: {KNOWN_MODES})")
        if "route-oracle" in self.fusion.modes and self.dataset.qrels is None:
            raise ConfigError("fusion mode route-oracle requires dataset.qrels")
        for spec in self.pool:
            if spec.kind == "dense":
                self._require_space(spec, "query_space")
                self._require_space(spec, "doc_space")
                if spec.granularity.endswith("-p"):
                    self._require_space(spec, "prop_space")
                if spec.granularity.startswith("sq"):
                    self._require_space(spec, "subq_space")
            if spec.kind == "oracle-human":
                for key in ("reference_space", "reference_query_space"):
                    if spec.params.get(key) and str(spec.params[key]) not in self.spaces:
                        raise ConfigError(
                            f"pool member {spec.label!r}: space "
                            f"{spec.params[key]!r} not declared under spaces:"
                        )
            if spec.embedding_space and spec.kind != "sparse-bm25" \
                    and spec.embedding_space not in self.spaces:
                raise ConfigError(
                    f"pool member {spec.label!r}: signal space "
                    f"{spec.embedding_space!r} not declared under spaces:"
                )

    def _require_space(self, spec: RetrieverSpec, key: str) -> None:
        space_id = spec.params.get(key)
        if not space_id:
            raise ConfigError(f"pool member {spec.label!r}: params.{key} is required")
        if str(space_id) not in self.spaces:
            raise ConfigError(
                f"pool member {spec.label!r}: space {space_id!r} "
                f"not declared under spaces:"
            )


def _apply_override(tree: dict, dotted: str, raw_value: str) -> None:
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r}: {key!r} is not a mapping")
    node[keys[-1]] = yaml.safe_load(raw_value)


def load_config(path: str | Path, overrides: list[str] | None = None) -> PipelineConfig:
    """Load and validate a pipeline config, applying key=value overrides."""
    path = Path(path)
    raw_bytes = path.read_bytes()
    try:
        tree = yaml.safe_load(raw_bytes) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw_value = item.split("=", 1)
        _apply_override(tree, dotted, raw_value)

    base = path.parent

    def _path(value: Any) -> Path:
        return (base / str(value)).resolve()

    def _opt_path(section: dict, key: str) -> Path | None:
        return _path(section[key]) if section.get(key) else None

    dataset_raw = tree.get("dataset") or {}
    for required in ("corpus", "queries"):
        if required not in dataset_raw:
            raise ConfigError(f"dataset.{required} is required")
    dataset = DatasetPaths(
        corpus=_path(dataset_raw["corpus"]),
        queries=_path(dataset_raw["queries"]),
        qrels=_opt_path(dataset_raw, "qrels"),
        propositions=_opt_path(dataset_raw, "propositions"),
        subqueries=_opt_path(dataset_raw, "subqueries"),
    )

    spaces = {str(sid): _path(p) for sid, p in (tree.get("spaces") or {}).items()}

    pool: list[RetrieverSpec] = []
    for entry in tree.get("pool") or []:
        try:
            pool.append(RetrieverSpec(
                name=str(entry["name"]),
                kind=str(entry["kind"]),
                granularity=str(entry.get("granularity", "q-d")),
                embedding_space=str(entry.get("embedding_space", "")),
                params=dict(entry.get("params") or {}),
            ))
        except KeyError as exc:
            raise ConfigError(f"pool entry missing key {exc}") from exc
        except ContractError as exc:
            raise ConfigError(f"pool entry {entry.get('name', '?')!r}: {exc}") from exc

    def _settings(cls, key: str, tuple_keys: tuple[str, ...] = ()):
        section = dict(tree.get(key) or {})
        unknown = set(section) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown keys under {key}: {sorted(unknown)}")
        for tk in tuple_keys:
            if tk in section and isinstance(section[tk], list):
                section[tk] = tuple(section[tk])
        return cls(**section)

    fusion = _settings(FusionSettings, "fusion", ("modes", "coefficients"))
    if len(fusion.coefficients) != 3:
        raise ConfigError("fusion.coefficients must have exactly 3 entries")
    sweep = _settings(SweepSettings, "sweep", ("thresholds",))
    eval_settings = _settings(EvalSettings, "eval", ("metrics",))
    simulation = _settings(SimulationSettings, "simulation", ("domains",))

    cache_dir = _path(tree["cache_dir"]) if tree.get("cache_dir") else None

    config = PipelineConfig(
        dataset=dataset,
        spaces=spaces,
        pool=pool,
        fusion=fusion,
        sweep=sweep,
        eval=eval_settings,
        simulation=simulation,
        cache_dir=cache_dir,
        config_hash=hashlib.sha256(raw_bytes).hexdigest()[:16],
    )
    config.validate()
    return config
