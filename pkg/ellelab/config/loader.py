from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import yaml

from ellelab.attacks import AttackSpec
from ellelab.errors import ConfigError, EllelabError
from ellelab.models import ModelConfig
from ellelab.regularizers import RegularizerSpec
from ellelab.training import (
    CODetectorConfig,
    DataConfig,
    EvalConfig,
    ProbeConfig,
    RunConfig,
    RunSection,
    ScheduleConfig,
)

logger = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parents[2]
SCHEMA_DIR = REPO_ROOT / "schema"


class RunConfigSchema:
    """Lazy view of schema/run_config.yaml."""

    def __init__(self, schema_path: Path | None = None) -> None:
        self.schema_path = schema_path or (SCHEMA_DIR / "run_config.yaml")
        self._document: Dict[str, Any] | None = None

    @property
    def document(self) -> Dict[str, Any]:
        if self._document is None:
            with self.schema_path.open("r", encoding="utf-8") as fh:
                self._document = yaml.safe_load(fh) or {}
        return self._document

    def sections(self) -> Dict[str, Any]:
        return self.document.get("sections", {})

    def keys(self, section: str) -> Dict[str, Any]:
        return self.sections()[section].get("keys", {})


_SCALARS = {"int": int, "float": float, "bool": bool, "str": str}


def _coerce(path: str, value: Any, spec: Mapping[str, Any]) -> Any:
    kind = spec["type"]
    if value is None:
        if spec.get("nullable"):
            return None
        raise ConfigError(path, "may not be null")
    if kind.startswith("list["):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        item = {"type": kind[5:-1]}
        return [_coerce(f"{path}[{i}]", v, item) for i, v in enumerate(value)]
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected float, got {type(value).__name__}")
        value = float(value)
    elif kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected int, got {type(value).__name__}")
    elif not isinstance(value, _SCALARS[kind]):
        raise ConfigError(path, f"expected {kind}, got {type(value).__name__}")
    if "choices" in spec and value not in spec["choices"]:
        raise ConfigError(path, f"{value!r} is not one of {spec['choices']}")
    if "min" in spec and value < spec["min"]:
        raise ConfigError(path, f"{value} is below the minimum {spec['min']}")
    return value


def canonical(raw: Mapping[str, Any], schema: RunConfigSchema | None = None) -> Dict[str, Any]:
    """Validate a raw config mapping and fill every default from the schema."""
    schema = schema or RunConfigSchema()
    if not isinstance(raw, Mapping):
        raise ConfigError("<root>", "configuration must be a mapping of sections")
    sections = schema.sections()
    for name in raw:
        if name not in sections:
            raise ConfigError(str(name), "unknown section")
    resolved: Dict[str, Any] = {}
    for name, section in sections.items():
        given = raw.get(name)
        if given is None:
            if section.get("required"):
                raise ConfigError(name, "required section is missing")
            given = {}
        if not isinstance(given, Mapping):
            raise ConfigError(name, "section must be a mapping")
        keys = section.get("keys", {})
        for key in given:
            if key not in keys:
                raise ConfigError(f"{name}.{key}", "unknown key")
        out = {}
        for key, spec in keys.items():
            path = f"{name}.{key}"
            if key in given:
                out[key] = _coerce(path, given[key], spec)
            elif spec.get("required"):
                raise ConfigError(path, "required key is missing")
            else:
                default = spec.get("default")
                out[key] = list(default) if isinstance(default, list) else default
        resolved[name] = out
    data, model = resolved["data"], resolved["model"]
    for key in ("input_dim", "classes"):
        if data[key] is None:
            data[key] = model[key]
    if resolved["eval"]["epsilon"] is None:
        resolved["eval"]["epsilon"] = resolved["attack"]["epsilon"]
    return resolved


def _build(path: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except EllelabError as exc:
        raise ConfigError(path, str(exc)) from exc


def from_sections(sections: Mapping[str, Any]) -> RunConfig:
    m, d, a, r = sections["model"], sections["data"], sections["attack"], sections["regularizer"]
    s, t, e = sections["schedule"], sections["train"], sections["eval"]
    model = _build("model", ModelConfig, **{**m, "hidden": tuple(m["hidden"])})
    data = _build("data", DataConfig, **d)
    attack = _build("attack", AttackSpec, **a)
    eval_attack = _build(
        "eval",
        AttackSpec,
        kind=e["kind"],
        epsilon=e["epsilon"],
        steps=e["steps"],
        step_size=e["step_size"],
        restarts=e["restarts"],
        noise_factor=e["noise_factor"],
    )
    return _build(
        "train",
        RunConfig,
        model=model,
        data=data,
        attack=attack,
        regularizer=_build("regularizer", RegularizerSpec, **r),
        schedule=_build("schedule", ScheduleConfig, **{**s, "milestones": tuple(s["milestones"])}),
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        momentum=t["momentum"],
        weight_decay=t["weight_decay"],
        seed=t["seed"],
        eval=EvalConfig(attack=eval_attack, batch_size=e["batch_size"], max_examples=e["max_examples"]),
        probe=_build("probe", ProbeConfig, **sections["probe"]),
        co_detector=_build("co_detector", CODetectorConfig, **sections["co_detector"]),
        run=_build("run", RunSection, **sections["run"]),
    )


def to_sections(config: RunConfig) -> Dict[str, Any]:
    """Inverse of from_sections, in canonical (fully defaulted) form."""
    ev = config.eval.attack
    return {
        "model": {
            "input_dim": config.model.input_dim,
            "hidden": list(config.model.hidden),
            "classes": config.model.classes,
            "activation": config.model.activation,
            "seed": config.model.seed,
        },
        "data": {
            "source": config.data.source,
            "input_dim": config.data.input_dim,
            "classes": config.data.classes,
            "n_per_class": config.data.n_per_class,
            "test_per_class": config.data.test_per_class,
            "margin": float(config.data.margin),
            "spread": float(config.data.spread),
            "seed": config.data.seed,
            "train_images": config.data.train_images,
            "train_labels": config.data.train_labels,
            "test_images": config.data.test_images,
            "test_labels": config.data.test_labels,
            "train_size": config.data.train_size,
            "test_size": config.data.test_size,
        },
        "attack": {
            "kind": config.attack.kind,
            "epsilon": float(config.attack.epsilon),
            "steps": config.attack.steps,
            "step_size": config.attack.step_size,
            "restarts": config.attack.restarts,
            "noise_factor": float(config.attack.noise_factor),
            "random_start": config.attack.random_start,
        },
        "regularizer": {
            "kind": config.regularizer.kind,
            "lam": float(config.regularizer.lam),
            "gamma": float(config.regularizer.gamma),
            "alpha_mode": config.regularizer.alpha_mode,
            "clamp_samples": config.regularizer.clamp_samples,
        },
        "schedule": {
            "kind": config.schedule.kind,
            "lr_max": float(config.schedule.lr_max),
            "lr0": float(config.schedule.lr0),
            "milestones": list(config.schedule.milestones),
            "decay": float(config.schedule.decay),
        },
        "train": {
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "momentum": float(config.momentum),
            "weight_decay": float(config.weight_decay),
            "seed": config.seed,
        },
        "eval": {
            "kind": ev.kind,
            "epsilon": float(ev.epsilon),
            "steps": ev.steps,
            "step_size": ev.step_size,
            "restarts": ev.restarts,
            "noise_factor": float(ev.noise_factor),
            "batch_size": config.eval.batch_size,
            "max_examples": config.eval.max_examples,
        },
        "probe": {
            "every": config.probe.every,
            "n_samples": config.probe.n_samples,
            "slice_size": config.probe.slice_size,
        },
        "co_detector": {
            "window": config.co_detector.window,
            "spike_factor": float(config.co_detector.spike_factor),
            "drop": float(config.co_detector.drop),
        },
        "run": {
            "name": config.run.name,
            "checkpoint_every": config.run.checkpoint_every,
            "log_timing": config.run.log_timing,
        },
    }


@dataclass(frozen=True)
class GridSpec:
    base: RunConfig
    lambdas: Tuple[float, ...]
    seeds: Tuple[int, ...] = (0,)

    def __post_init__(self) -> None:
        if not self.lambdas:
            raise ConfigError("grid.lambdas", "needs at least one value")
        if not self.seeds:
            raise ConfigError("grid.seeds", "needs at least one seed")


def read_yaml(path: Path | str) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "configuration file not found")
    with path.open("r", encoding="utf-8") as fh:
        try:
            return yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"invalid YAML: {exc}") from exc


def parse_config(source: Path | str | Mapping[str, Any], schema: RunConfigSchema | None = None) -> RunConfig:
    raw = source if isinstance(source, Mapping) else read_yaml(source)
    config = from_sections(canonical(raw, schema))
    if not isinstance(source, Mapping):
        logger.info("Loaded config %s (run=%s)", source, config.run.name)
    return config


def parse_grid(source: Path | str | Mapping[str, Any], schema: RunConfigSchema | None = None) -> GridSpec:
    raw = source if isinstance(source, Mapping) else read_yaml(source)
    sections = canonical(raw, schema)
    grid = sections["grid"]
    return GridSpec(from_sections(sections), tuple(grid["lambdas"]), tuple(grid["seeds"]))


def serialize(config: RunConfig) -> str:
    return yaml.safe_dump(to_sections(config), sort_keys=True)


def canonical_text(raw: Mapping[str, Any], schema: RunConfigSchema | None = None) -> str:
    """YAML of the fully defaulted form of `raw`, without the grid section."""
    sections = canonical(raw, schema)
    sections.pop("grid", None)
    return yaml.safe_dump(sections, sort_keys=True)

