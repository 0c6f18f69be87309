"""Typed experiment configuration and the flat key-value config file format.

Unknown sections or keys are hard errors: silent typos are the main
reproducibility hazard. Defaults follow the standard hyper-parameter table
(200 rounds, 5 clients, hop budgets 3/2, lr 1e-2, weight decay 5e-4,
dropout 0.5, 3 local epochs, 2-layer backbone).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

REFRESH_POLICIES = ("full", "static", "core_only", "text_only", "random_core")


@dataclass
class RunSettings:
    # text bank
    window: int = 32
    encoder: str = "hash"
    dim: int = 128
    embeddings_file: str | None = None
    # node condensation
    ratio: float = 0.08
    tau: float = 0.7
    prototypes: int = 4
    period: int = 10
    # evidence selection
    b1: int = 3
    b2: int = 2
    b_tok: int = 4
    two_hop_cap: int | None = None
    mix: float = 0.6
    entmax_alpha: float = 2.0
    # topology reconstruction
    topo_alpha: float = 8.0
    lambda1: float = 5.0
    lambda3: float = 1.0
    cand_q: int = 8
    row_k: int = 4
    ista_iters: int = 30
    # local training
    hidden: int | None = None  # resolved to dim; the fused pipeline needs them equal
    lr: float = 1e-2
    weight_decay: float = 5e-4
    dropout: float = 0.5
    lambda_align: float = 0.5
    local_epochs: int = 3
    # federation
    rounds: int = 200
    clients: int = 5
    participation: float = 1.0
    refresh_policy: str = "full"
    partition_method: str = "louvain"
    privacy_epsilon: float | None = None

    def validate(self) -> None:
        if self.hidden is None:
            self.hidden = self.dim
        if self.hidden != self.dim:
            raise ConfigError(
                "hidden must equal the embedding dim: one weight space serves both "
                "the original-graph and condensed passes"
            )
        if self.encoder not in ("hash", "precomputed"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.refresh_policy not in REFRESH_POLICIES:
            raise ConfigError(f"refresh_policy must be one of {REFRESH_POLICIES}")
        if not (0.0 < self.ratio <= 1.0):
            raise ConfigError("ratio must be in (0, 1]")
        if not (0.0 < self.participation <= 1.0):
            raise ConfigError("participation must be in (0, 1]")
        if self.entmax_alpha not in (1.5, 2.0):
            raise ConfigError("entmax_alpha must be 1.5 or 2.0")
        if not (0.0 <= self.mix <= 1.0):
            raise ConfigError("mix must be in [0, 1]")
        if self.privacy_epsilon is not None and self.privacy_epsilon <= 0:
            raise ConfigError("privacy_epsilon must be positive when set")
        if self.rounds < 1 or self.clients < 1 or self.local_epochs < 1:
            raise ConfigError("rounds, clients, local_epochs must be >= 1")
        if self.period < 1:
            raise ConfigError("period must be >= 1")


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # synthetic | files
    classes: int = 4
    nodes_per_class: int = 100
    p_in: float = 0.06
    p_out: float = 0.02
    path: str | None = None  # dataset directory for source=files

    def validate(self) -> None:
        if self.source not in ("synthetic", "files"):
            raise ConfigError(f"dataset source must be synthetic or files, not {self.source!r}")
        if self.source == "files" and not self.path:
            raise ConfigError("dataset source=files requires path")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    settings: RunSettings = field(default_factory=RunSettings)
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "out"

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("need at least one seed")
        self.dataset.validate()
        self.settings.validate()

    def resolved(self) -> dict[str, Any]:
        """Fully-expanded config for report provenance."""
        out: dict[str, Any] = {"seeds": list(self.seeds), "out_dir": self.out_dir}
        for prefix, obj in (("dataset", self.dataset), ("settings", self.settings)):
            for f in dc_fields(obj):
                out[f"{prefix}.{f.name}"] = getattr(obj, f.name)
        return out


# section -> {key: (target attribute path, parser)}
def _opt_float(v: str) -> float | None:
    return None if v.lower() in ("", "none") else float(v)


def _opt_int(v: str) -> int | None:
    return None if v.lower() in ("", "none") else int(v)


def _opt_str(v: str) -> str | None:
    return None if v.lower() in ("", "none") else v


def _seed_list(v: str) -> list[int]:
    return [int(tok) for tok in v.replace(",", " ").split()]


_SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "dataset": {
        "source": ("dataset.source", str),
        "classes": ("dataset.classes", int),
        "nodes_per_class": ("dataset.nodes_per_class", int),
        "p_in": ("dataset.p_in", float),
        "p_out": ("dataset.p_out", float),
        "path": ("dataset.path", _opt_str),
    },
    "text": {
        "window": ("settings.window", int),
        "encoder": ("settings.encoder", str),
        "dim": ("settings.dim", int),
        "embeddings_file": ("settings.embeddings_file", _opt_str),
    },
    "condense": {
        "ratio": ("settings.ratio", float),
        "tau": ("settings.tau", float),
        "prototypes": ("settings.prototypes", int),
        "period": ("settings.period", int),
    },
    "evidence": {
        "b1": ("settings.b1", int),
        "b2": ("settings.b2", int),
        "b_tok": ("settings.b_tok", int),
        "two_hop_cap": ("settings.two_hop_cap", _opt_int),
        "mix": ("settings.mix", float),
        "entmax_alpha": ("settings.entmax_alpha", float),
    },
    "topology": {
        "alpha": ("settings.topo_alpha", float),
        "lambda1": ("settings.lambda1", float),
        "lambda3": ("settings.lambda3", float),
        "q": ("settings.cand_q", int),
        "k": ("settings.row_k", int),
        "ista_iters": ("settings.ista_iters", int),
    },
    "training": {
        "hidden": ("settings.hidden", _opt_int),
        "lr": ("settings.lr", float),
        "weight_decay": ("settings.weight_decay", float),
        "dropout": ("settings.dropout", float),
        "lambda_align": ("settings.lambda_align", float),
        "local_epochs": ("settings.local_epochs", int),
    },
    "federation": {
        "rounds": ("settings.rounds", int),
        "clients": ("settings.clients", int),
        "participation": ("settings.participation", float),
        "refresh_policy": ("settings.refresh_policy", str),
        "partition": ("settings.partition_method", str),
        "privacy_epsilon": ("settings.privacy_epsilon", _opt_float),
    },
    "run": {
        "seeds": ("seeds", _seed_list),
        "out_dir": ("out_dir", str),
    },
}


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a config file; unknown keys are errors."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key '{key}' in section [{section}]")
            target, cast = _SCHEMA[section][key]
            try:
                value = cast(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {raw!r}") from exc
            obj = cfg
            *parents, attr = target.split(".")
            for parent in parents:
                obj = getattr(obj, parent)
            setattr(obj, attr, value)
    cfg.validate()
    return cfg
