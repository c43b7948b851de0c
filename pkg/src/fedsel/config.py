"""JSON config parsing, validation, canonicalization, and digests.

Configs are plain JSON documents with explicit field names. Parsing resolves
defaults, so canonicalize(parse(text)) is a total snapshot: re-parsing it
yields an identical config, and its sha256 digest identifies the run.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import ConfigError
from .federation import (
    DataSpec,
    EtaSchedule,
    ExperimentConfig,
    ModelSpec,
    PolicySpec,
)
from .sketch import SketchConfig
from .study import StudyConfig


def _require(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}; allowed: {sorted(allowed)}")


def _parse_eta(section: dict) -> EtaSchedule:
    _require(section, {"schedule", "value", "decay", "every"}, "learning_rate")
    return EtaSchedule(
        kind=section.get("schedule", "constant"),
        value=section.get("value", 0.1),
        decay=section.get("decay", 0.5),
        every=section.get("every", 10),
    )


def _parse_policy(section: dict) -> PolicySpec:
    _require(
        section,
        {"name", "p", "variant", "queue_len", "subset_budget", "candidate_frac", "temperature"},
        "policy",
    )
    if "name" not in section:
        raise ConfigError("policy: missing required field 'name'")
    return PolicySpec(
        name=section["name"],
        p=section.get("p", 4.0),
        variant=section.get("variant", "powered"),
        queue_len=section.get("queue_len", 0),
        subset_budget=section.get("subset_budget", 50_000),
        candidate_frac=section.get("candidate_frac", 1.0),
        temperature=section.get("temperature", 1.0),
    )


def _parse_sketch(section: dict) -> SketchConfig:
    _require(section, {"mode", "sketch_dim", "seed", "per_segment"}, "sketch")
    return SketchConfig(
        mode=section.get("mode", "exact"),
        sketch_dim=section.get("sketch_dim"),
        seed=section.get("seed", 0),
        per_segment=section.get("per_segment", True),
    )


def _parse_data(section: dict) -> DataSpec:
    _require(section, {"source", "classes", "dim", "per_class", "spread", "path"}, "data")
    return DataSpec(
        source=section.get("source", "synthetic"),
        classes=section.get("classes", 10),
        dim=section.get("dim", 64),
        per_class=section.get("per_class", 200),
        spread=section.get("spread", 0.8),
        path=section.get("path"),
    )


def _parse_model(section: dict) -> ModelSpec:
    _require(section, {"arch", "hidden"}, "model")
    return ModelSpec(arch=section.get("arch", "linear"), hidden=section.get("hidden"))


def _parse_seeds(value) -> tuple[int, ...]:
    if not isinstance(value, list) or not all(isinstance(s, int) for s in value):
        raise ConfigError(f"seeds must be a list of integers, got {value!r}")
    return tuple(value)


RUN_FIELDS = {
    "num_clients",
    "rounds",
    "clients_per_round",
    "learning_rate",
    "policy",
    "sketch",
    "partition",
    "data",
    "model",
    "seeds",
    "selection_layers",
    "track_regret",
    "oracle_budget",
}


def parse_run_config(document: dict) -> ExperimentConfig:
    if not isinstance(document, dict):
        raise ConfigError(f"config root must be a JSON object, got {type(document).__name__}")
    _require(document, RUN_FIELDS, "config")
    partition = document.get("partition", {"mode": "shard", "shards_per_client": 1})
    _require(partition, {"mode", "shards_per_client", "alpha"}, "partition")
    layers = document.get("selection_layers")
    return ExperimentConfig(
        num_clients=document.get("num_clients", 10),
        rounds=document.get("rounds", 20),
        clients_per_round=document.get("clients_per_round", 2),
        eta=_parse_eta(document.get("learning_rate", {})),
        policy=_parse_policy(document.get("policy", {"name": "random"})),
        sketch=_parse_sketch(document.get("sketch", {})),
        partition_mode=partition.get("mode", "shard"),
        shards_per_client=partition.get("shards_per_client"),
        alpha=partition.get("alpha"),
        data=_parse_data(document.get("data", {})),
        model=_parse_model(document.get("model", {})),
        seeds=_parse_seeds(document.get("seeds", [0])),
        selection_layers=None if layers is None else tuple(layers),
        track_regret=document.get("track_regret", False),
        oracle_budget=document.get("oracle_budget", 10_000),
    )


def run_config_to_dict(cfg: ExperimentConfig) -> dict:
    """Full snapshot with every default resolved."""
    partition: dict = {"mode": cfg.partition_mode}
    if cfg.partition_mode == "shard":
        partition["shards_per_client"] = cfg.shards_per_client
    else:
        partition["alpha"] = cfg.alpha
    sketch: dict = {
        "mode": cfg.sketch.mode,
        "seed": cfg.sketch.seed,
        "per_segment": cfg.sketch.per_segment,
    }
    if cfg.sketch.sketch_dim is not None:
        sketch["sketch_dim"] = cfg.sketch.sketch_dim
    policy: dict = {"name": cfg.policy.name}
    if cfg.policy.name == "pncs":
        policy.update(
            p=cfg.policy.p,
            variant=cfg.policy.variant,
            queue_len=cfg.policy.queue_len,
            subset_budget=cfg.policy.subset_budget,
        )
    elif cfg.policy.name == "top_loss":
        policy["candidate_frac"] = cfg.policy.candidate_frac
    elif cfg.policy.name == "loss_softmax":
        policy["temperature"] = cfg.policy.temperature
    data: dict = {"source": cfg.data.source}
    if cfg.data.source == "synthetic":
        data.update(
            classes=cfg.data.classes,
            dim=cfg.data.dim,
            per_class=cfg.data.per_class,
            spread=cfg.data.spread,
        )
    else:
        data["path"] = cfg.data.path
    model: dict = {"arch": cfg.model.arch}
    if cfg.model.hidden is not None:
        model["hidden"] = cfg.model.hidden
    return {
        "num_clients": cfg.num_clients,
        "rounds": cfg.rounds,
        "clients_per_round": cfg.clients_per_round,
        "learning_rate": {
            "schedule": cfg.eta.kind,
            "value": cfg.eta.value,
            "decay": cfg.eta.decay,
            "every": cfg.eta.every,
        },
        "policy": policy,
        "sketch": sketch,
        "partition": partition,
        "data": data,
        "model": model,
        "seeds": list(cfg.seeds),
        "selection_layers": None if cfg.selection_layers is None else list(cfg.selection_layers),
        "track_regret": cfg.track_regret,
        "oracle_budget": cfg.oracle_budget,
    }


SWEEP_AXES = {"policy", "shards_per_client", "alpha", "queue_len", "seeds"}


def parse_sweep_config(document: dict) -> tuple[ExperimentConfig, dict]:
    """Returns (base run config, axes dict). Axes default to singletons drawn
    from the base config."""
    if not isinstance(document, dict):
        raise ConfigError("sweep config root must be a JSON object")
    _require(document, {"base", "axes"}, "sweep")
    if "base" not in document:
        raise ConfigError("sweep: missing required field 'base'")
    base = parse_run_config(document["base"])
    axes = document.get("axes", {})
    _require(axes, SWEEP_AXES, "axes")
    resolved = {
        "policy": [_parse_policy(p) for p in axes.get("policy", [])] or [base.policy],
        "shards_per_client": axes.get(
            "shards_per_client",
            [base.shards_per_client] if base.partition_mode == "shard" else [None],
        ),
        "alpha": axes.get(
            "alpha", [base.alpha] if base.partition_mode == "dirichlet" else [None]
        ),
        "queue_len": axes.get("queue_len", [None]),
        "seeds": axes.get("seeds", list(base.seeds)),
    }
    if not all(isinstance(s, int) for s in resolved["seeds"]):
        raise ConfigError("axes.seeds must be a list of integers")
    return base, resolved


STUDY_FIELDS = {
    "num_clients",
    "rounds",
    "seeds",
    "heterogeneity",
    "clients_per_round",
    "data",
    "model",
    "learning_rate",
    "label_source",
    "scaler",
    "softmax_temperature",
    "regularization",
}


def parse_study_config(document: dict) -> StudyConfig:
    if not isinstance(document, dict):
        raise ConfigError("study config root must be a JSON object")
    _require(document, STUDY_FIELDS, "study")
    return StudyConfig(
        num_clients=document.get("num_clients", 8),
        rounds=document.get("rounds", 5),
        seeds=_parse_seeds(document.get("seeds", [0, 1, 2, 3, 4])),
        heterogeneity=tuple(document.get("heterogeneity", [1])),
        clients_per_round=document.get("clients_per_round", 2),
        data=_parse_data(document.get("data", {"classes": 8, "dim": 32, "per_class": 100})),
        model=_parse_model(document.get("model", {})),
        eta=_parse_eta(document.get("learning_rate", {})),
        label_source=document.get("label_source", "accuracy"),
        scaler=document.get("scaler", "minmax"),
        softmax_temperature=document.get("softmax_temperature", 1.0),
        regularization=document.get("regularization", 1e-3),
    )


def study_config_to_dict(cfg: StudyConfig) -> dict:
    data: dict = {"source": cfg.data.source}
    if cfg.data.source == "synthetic":
        data.update(
            classes=cfg.data.classes,
            dim=cfg.data.dim,
            per_class=cfg.data.per_class,
            spread=cfg.data.spread,
        )
    else:
        data["path"] = cfg.data.path
    model: dict = {"arch": cfg.model.arch}
    if cfg.model.hidden is not None:
        model["hidden"] = cfg.model.hidden
    return {
        "num_clients": cfg.num_clients,
        "rounds": cfg.rounds,
        "seeds": list(cfg.seeds),
        "heterogeneity": list(cfg.heterogeneity),
        "clients_per_round": cfg.clients_per_round,
        "data": data,
        "model": model,
        "learning_rate": {
            "schedule": cfg.eta.kind,
            "value": cfg.eta.value,
            "decay": cfg.eta.decay,
            "every": cfg.eta.every,
        },
        "label_source": cfg.label_source,
        "scaler": cfg.scaler,
        "softmax_temperature": cfg.softmax_temperature,
        "regularization": cfg.regularization,
    }


def canonical_json(document: dict) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def config_digest(document: dict) -> str:
    return hashlib.sha256(canonical_json(document).encode("utf-8")).hexdigest()


def load_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open() as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
