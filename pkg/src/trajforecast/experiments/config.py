"""Experiment and dataset configuration loaded from YAML."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..data.series import DT, ConfigurationError
from ..models import MODELS

logger = logging.getLogger(__name__)

EXPERIMENTS = ("input_length_sweep", "within_team", "cross_team")

# Desk-scale widths: small enough that every model trains on a laptop CPU in minutes.
DESK_PRESETS: dict[str, dict[str, Any]] = {
    "cv": {},
    "linear": {"hidden_sizes": [128, 128], "dropout": 0.1},
    "tcnn": {"filters": 42, "kernel_size": 2, "dilations": [1, 2, 4, 8, 8]},
    "lstm": {"hidden_size": 64, "num_layers": 2},
    "cnn_lstm": {"hidden_size": 32, "num_layers": 2},
    "lmu": {"hidden_size": 32, "order": 32, "theta": 25.0},
    "gnn": {"gru_hidden": 32, "heads": 4, "gat_width": 8, "decoder_hidden": 32},
    "transformer": {"d_model": 32, "num_blocks": 2, "heads": 4, "d_ff": 64},
}

# Full-size widths as described for the original models.
FULL_PRESETS: dict[str, dict[str, Any]] = {name: {} for name in MODELS}


def seconds_to_steps(seconds: float, what: str, dt: float = DT, allow_rounding: bool = True) -> int:
    """Whole number of samples for a duration; off-grid values are rounded when allowed."""
    steps = int(round(seconds / dt))
    if abs(steps * dt - seconds) > 1e-9:
        if not allow_rounding:
            raise ConfigurationError(f"{what} of {seconds}s is not a multiple of {dt}s")
        logger.warning("%s of %ss is off the %ss grid; using %d steps (%.2fs)", what, seconds, dt, steps, steps * dt)
    if steps < 1:
        raise ConfigurationError(f"{what} of {seconds}s is shorter than one sample")
    return steps


@dataclass
class DatasetManifest:
    """Where scenes come from and how they become windows.

    ``source`` is ``"synthetic"`` (scenes from :func:`simulate_league` with
    ``synthetic`` keyword arguments) or ``"files"`` (``files`` lists
    ``{path, format}`` entries, paths relative to the manifest).
    """

    source: str = "synthetic"
    synthetic: dict[str, Any] = field(default_factory=lambda: {"focus_team": 1, "opponents": [2, 3, 4, 5],
                                                               "n_games": 8, "extra_games": [[6, 7]],
                                                               "duration": 60.0})
    files: list[dict[str, str]] = field(default_factory=list)
    split_policy: str = "by_game"
    ratios: list[float] = field(default_factory=lambda: [0.7, 0.2, 0.1])
    seed: int | None = None           # None follows the experiment seed
    team: int | None = 1              # by_game restricts to games of this team
    train_teams: list[int] | None = None
    test_teams: list[int] | None = None
    stride: int = 10                  # window stride for training
    eval_stride: int = 10             # window stride for validation and test
    targets_per_window: int | None = 3
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "DatasetManifest":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown dataset manifest keys: {sorted(unknown)}")
        out = cls(**{k: v for k, v in d.items() if k != "base_dir"})
        out.base_dir = str(base_dir)
        out.validate()
        return out

    def validate(self) -> None:
        if self.source not in ("synthetic", "files"):
            raise ConfigurationError(f"dataset source must be 'synthetic' or 'files', got {self.source!r}")
        if self.source == "files" and not self.files:
            raise ConfigurationError("dataset source 'files' needs a non-empty 'files' list")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigurationError(f"split ratios must sum to 1, got {self.ratios}")
        if self.stride < 1 or self.eval_stride < 1:
            raise ConfigurationError("strides must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d


@dataclass
class ExperimentConfig:
    experiment: str = "within_team"
    models: list[str] = field(default_factory=lambda: list(MODELS))
    history_s: list[float] = field(default_factory=lambda: [2.0])
    forecast_s: float = 2.0
    table_horizons_s: list[float] = field(default_factory=lambda: [0.48, 2.0])
    seed: int = 0
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.01
    patience: int = 5
    preset: str = "desk"
    model_params: dict[str, dict[str, Any]] = field(default_factory=dict)
    dataset: DatasetManifest = field(default_factory=DatasetManifest)
    dataset_path: str | None = None
    out_dir: str = "runs/out"
    baseline_dir: str | None = None   # cross_team: directory holding the within_team report

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        unknown = [m for m in self.models if m not in MODELS]
        if unknown:
            raise ConfigurationError(f"unknown model(s) {unknown}; choose from {sorted(MODELS)}")
        if not self.history_s:
            raise ConfigurationError("history_s needs at least one length")
        if self.preset not in ("desk", "full"):
            raise ConfigurationError(f"preset must be 'desk' or 'full', got {self.preset!r}")
        for name in self.model_params:
            if name not in MODELS:
                raise ConfigurationError(f"model_params given for unknown model {name!r}")
        for h in self.history_s:
            seconds_to_steps(h, "history length")
        seconds_to_steps(self.forecast_s, "forecast length", allow_rounding=False)
        self.dataset.validate()

    def resolved_dataset(self) -> DatasetManifest:
        """The dataset manifest with its seed filled in from the experiment seed when unset."""
        if self.dataset.seed is not None:
            return self.dataset
        return dataclasses.replace(self.dataset, seed=self.seed)

    def history_steps(self) -> list[int]:
        return [seconds_to_steps(h, "history length") for h in self.history_s]

    @property
    def forecast_steps(self) -> int:
        return seconds_to_steps(self.forecast_s, "forecast length", allow_rounding=False)

    def model_kwargs(self, name: str) -> dict[str, Any]:
        base = dict((DESK_PRESETS if self.preset == "desk" else FULL_PRESETS).get(name, {}))
        base.update(self.model_params.get(name, {}))
        if MODELS[name].trainable:
            base.update(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                        weight_decay=self.weight_decay, patience=self.patience, seed=self.seed)
        return {k: tuple(v) if isinstance(v, list) else v for k, v in base.items()}

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dataset"] = self.dataset.to_dict()
        return d

    def content_hash(self) -> str:
        """Hash of every setting that can change results (output location excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("baseline_dir")
        d.pop("dataset_path")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_dataset_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    return DatasetManifest.from_dict(raw, base_dir=path.parent)


def config_from_dict(raw: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    raw = dict(raw)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    ds = raw.pop("dataset", None)
    cfg = ExperimentConfig(**raw)
    if cfg.dataset_path and ds is None:
        p = Path(cfg.dataset_path)
        cfg.dataset = load_dataset_manifest(p if p.is_absolute() else Path(base_dir) / p)
    elif ds is not None:
        cfg.dataset = DatasetManifest.from_dict(ds, base_dir=base_dir)
    elif cfg.experiment == "cross_team":
        cfg.dataset = DatasetManifest(split_policy="by_team", team=None, train_teams=[1], test_teams=[6, 7])
    cfg.validate()
    return cfg


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML experiment config; ``overrides`` replace top-level keys before validation."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_dict(raw, base_dir=path.parent)
