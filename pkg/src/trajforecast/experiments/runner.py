"""Data preparation, training loops and the three experiment protocols."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..data import (ConfigurationError, FrameSeries, RawGame, WindowSet, concat_windows, derive_velocities,
                    expand_targets, ingest_game, make_windows, resample_uniform, simulate_league,
                    split_dataset)
from ..data.split import Split
from ..metrics import CSV_COLUMNS, MetricReport, evaluate, reports_to_csv
from ..models import CONTEXT_MODELS, MODELS, NeuralForecaster, make_model
from ..training import TrainingDiverged
from .checkpoint import save_checkpoint
from .config import DatasetManifest, ExperimentConfig
from .plots import write_chart

logger = logging.getLogger(__name__)

METRIC_FAMILIES = ("ade", "fde", "aae", "fae")
FAMILY_LABELS = {"ade": "ADE (m)", "fde": "FDE (m)", "aae": "AAE (deg)", "fae": "FAE (deg)"}

# Behavioural switches fixed by this implementation; recorded in every run manifest.
DESIGN_SWITCHES: dict[str, Any] = {
    "loss": "mse_on_normalized_native_output",
    "optimizer": {"name": "adamw", "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "initialization": "uniform_fan_in_weights_zero_biases",
    "normalization": "zscore_train_split_only",
    "velocity_boundary": "copy_forward",
    "resample_gap_split_s": 0.5,
    "angle_degenerate_steps": "excluded_and_counted",
    "forecast_target": "one_target_object_per_sample_at_index_0",
    "early_stopping": "best_validation_snapshot",
    "exp1_windows": "history_cropped_from_longest_length",
}


# --------------------------------------------------------------------------- data

def load_games(manifest: DatasetManifest) -> list[RawGame]:
    """Raw games named by ``manifest``: simulated, or parsed from its files."""
    if manifest.source == "synthetic":
        kw = dict(manifest.synthetic)
        kw.setdefault("seed", manifest.seed or 0)
        for key in ("opponents", "extra_games"):
            if key in kw:
                kw[key] = tuple(tuple(x) if isinstance(x, list) else x for x in kw[key])
        return simulate_league(**kw)
    games = []
    for entry in manifest.files:
        if "path" not in entry:
            raise ConfigurationError(f"dataset file entry without 'path': {entry}")
        path = Path(entry["path"])
        if not path.is_absolute():
            path = Path(manifest.base_dir) / path
        with open(path, "rb") as fh:
            games.append(ingest_game(fh, entry.get("format", "neutral_csv"), game_id=entry.get("game_id", path.stem)))
    return games


def to_series(games: Sequence[RawGame]) -> list[FrameSeries]:
    """Resample to the 0.04 s grid and append velocities."""
    series = [derive_velocities(s) for g in games for s in resample_uniform(g)]
    if not series:
        raise ConfigurationError("dataset produced no usable scenes")
    return series


def load_series(manifest: DatasetManifest) -> list[FrameSeries]:
    return to_series(load_games(manifest))


def split_series(series: list[FrameSeries], manifest: DatasetManifest) -> Split:
    return split_dataset(series, manifest.split_policy, manifest.ratios, seed=manifest.seed or 0,
                         team=manifest.team if manifest.split_policy == "by_game" else None,
                         train_teams=manifest.train_teams, test_teams=manifest.test_teams)


def _windows(part: list[FrameSeries], H: int, P: int, stride: int, per_window: int | None,
             seed: int) -> WindowSet | None:
    sets = [make_windows(s, H, P, stride=stride) for s in part if len(s) >= H + P]
    sets = [s for s in sets if len(s)]
    if not sets:
        return None
    return expand_targets(concat_windows(sets), rng=np.random.default_rng(seed), per_window=per_window)


@dataclass
class WindowSplit:
    train: WindowSet
    validation: WindowSet | None
    test: WindowSet


def build_windows(split: Split, H: int, P: int, manifest: DatasetManifest, seed: int = 0) -> WindowSplit | None:
    """Window each partition; ``None`` when train or test has no window of this size."""
    per = manifest.targets_per_window
    train = _windows(split.train, H, P, manifest.stride, per, seed * 3 + 0)
    val = _windows(split.validation, H, P, manifest.eval_stride, per, seed * 3 + 1)
    test = _windows(split.test, H, P, manifest.eval_stride, per, seed * 3 + 2)
    if train is None or test is None:
        return None
    out = WindowSplit(train, val, test)
    assert_no_leakage(out)
    return out


def crop_history(ws: WindowSet, H: int) -> WindowSet:
    """Keep the last ``H`` history steps; forecasts and last positions are unchanged."""
    if H > ws.H:
        raise ValueError(f"cannot crop history of {ws.H} steps to {H}")
    return WindowSet(np.ascontiguousarray(ws.history[:, ws.H - H:]), ws.future, ws.last_pos, ws.team_ids,
                     ws.object_ids, list(ws.keys), ws.stride, ws.feature_names, ws.target_first)


def crop_split(ws: WindowSplit, H: int) -> WindowSplit:
    return WindowSplit(crop_history(ws.train, H), None if ws.validation is None else crop_history(ws.validation, H),
                       crop_history(ws.test, H))


def assert_no_leakage(ws: WindowSplit) -> None:
    """Fail if any test window also appears among the training or validation inputs."""
    test = set(ws.test.hashes())
    seen = set(ws.train.hashes())
    if ws.validation is not None:
        seen |= set(ws.validation.hashes())
    shared = test & seen
    if shared:
        raise AssertionError(f"{len(shared)} test window(s) leak into the training inputs")


# --------------------------------------------------------------------------- training

@dataclass
class ModelRun:
    """Outcome of fitting and scoring one model configuration."""

    label: str
    model: str
    report: MetricReport | None
    n_parameters: int = 0
    epoch_seconds: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    history_steps: int = 0
    checkpoint: str | None = None
    error: str | None = None

    def summary(self) -> dict:
        return {"label": self.label, "model": self.model, "n_parameters": self.n_parameters,
                "history_steps": self.history_steps, "epoch_seconds": self.epoch_seconds,
                "train_loss": self.train_loss, "val_loss": self.val_loss, "best_epoch": self.best_epoch,
                "checkpoint": self.checkpoint, "absent": self.report is None, "error": self.error}


def fit_and_evaluate(name: str, label: str, cfg: ExperimentConfig, ws: WindowSplit,
                     checkpoint_dir: Path | None = None, manifest_hash: str = "") -> ModelRun:
    """Train ``name`` on ``ws.train`` and score it on ``ws.test``; divergence marks the row absent."""
    model = make_model(name, **cfg.model_kwargs(name))
    run = ModelRun(label, name, None, history_steps=ws.train.H)
    t0 = time.perf_counter()
    try:
        model.fit(ws.train, validation=ws.validation)
    except TrainingDiverged as exc:
        logger.error("%s diverged: %s; row marked absent", label, exc)
        run.error = str(exc)
        return run
    result = getattr(model, "train_result_", None)
    if result is not None:
        run.epoch_seconds = [float(s) for s in result.epoch_seconds]
        run.train_loss = [float(x) for x in result.train_loss]
        run.val_loss = [float(x) for x in result.val_loss]
        run.best_epoch = result.best_epoch
    if isinstance(model, NeuralForecaster):
        run.n_parameters = model.n_parameters
    pred = model.predict(ws.test)
    run.report = evaluate(pred, ws.test.target_positions(), ws.test.last_pos[:, 0], model=label)
    if checkpoint_dir is not None:
        run.checkpoint = str(save_checkpoint(checkpoint_dir / f"{label}.npz", model, manifest_hash))
    logger.info("%s: FDE@end %.3f m in %.1fs", label, run.report.fde[-1], time.perf_counter() - t0)
    return run


def absent_report(label: str, steps: int) -> MetricReport:
    nan = np.full(steps, np.nan)
    return MetricReport(label, nan, nan.copy(), nan.copy(), nan.copy(), n=0)


# --------------------------------------------------------------------------- reporting

def check_writable(out_dir: str | Path) -> Path:
    """Create ``out_dir`` and prove it accepts files; raises ``OSError`` otherwise."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_bytes(b"")
    probe.unlink()
    return out


def emit_reports(reports: Sequence[MetricReport], out_dir: str | Path, table_horizons_s: Sequence[float],
                 families: Sequence[str] = METRIC_FAMILIES, prefix: str = "", title: str = "",
                 summary: dict | None = None) -> dict[str, Path]:
    """Write the horizon table, the full curves, one SVG per metric family and a JSON summary."""
    if not reports:
        raise ValueError("no reports to emit")
    unknown = [f for f in families if f not in METRIC_FAMILIES]
    if unknown:
        raise ValueError(f"unknown metric families {unknown}")
    out = check_writable(out_dir)
    reports = sorted(reports, key=lambda r: r.model)
    paths: dict[str, Path] = {}
    paths["table"] = out / f"{prefix}metrics.csv"
    paths["table"].write_text(reports_to_csv(reports, table_horizons_s), encoding="utf-8")
    paths["curves"] = out / f"{prefix}curves.csv"
    paths["curves"].write_text(reports_to_csv(reports), encoding="utf-8")
    for fam in families:
        series = [(r.model, r.horizons_s, getattr(r, fam)) for r in reports]
        paths[f"plot_{fam}"] = write_chart(out / f"{prefix}{fam}.svg", series,
                                           f"{title} {fam.upper()}".strip(), "forecast horizon (s)",
                                           FAMILY_LABELS[fam])
    if summary is not None:
        paths["summary"] = out / f"{prefix}summary.json"
        paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n",
                                    encoding="utf-8")
    return paths


def _json_default(o):
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def read_table(path: str | Path) -> dict[tuple[str, float], dict[str, float]]:
    """Parse a metrics CSV into ``{(model, horizon_s): {column: value}}``."""
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path} does not have columns {CSV_COLUMNS}")
    return {(r["model"], round(float(r["horizon_s"]), 6)): {k: float(r[k]) for k in CSV_COLUMNS[2:]} for r in rows}


DELTA_COLUMNS = ("model", "horizon_s", "d_ade_m", "d_fde_m", "d_aae_deg", "d_fae_deg")


def delta_table(reports: Sequence[MetricReport], baseline: dict, horizons_s: Sequence[float]) -> str:
    """CSV of current minus baseline per metric; models missing from the baseline are skipped."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DELTA_COLUMNS)
    for rep in sorted(reports, key=lambda r: r.model):
        for h in horizons_s:
            base = baseline.get((rep.model, round(float(h), 6)))
            if base is None:
                continue
            cur = rep.at(float(h))
            w.writerow([rep.model, f"{h:.2f}"] + [f"{cur[k] - base[k]:.6f}" for k in CSV_COLUMNS[2:6]])
    return buf.getvalue()


# --------------------------------------------------------------------------- experiments

@dataclass
class ExperimentResult:
    reports: list[MetricReport]
    runs: list[ModelRun]
    paths: dict[str, Path]
    manifest: dict


def run_manifest(cfg: ExperimentConfig, runs: Sequence[ModelRun], counts: dict) -> dict:
    return {
        "config": cfg.to_dict(),
        "content_hash": cfg.content_hash(),
        "design_switches": DESIGN_SWITCHES,
        "model_parameters": {r.label: cfg.model_kwargs(r.model) for r in runs},
        "parameter_counts": {r.label: r.n_parameters for r in runs},
        "epoch_seconds": {r.label: r.epoch_seconds for r in runs},
        "runs": [r.summary() for r in runs],
        "counts": counts,
    }


def _counts(split: Split, ws: WindowSplit) -> dict:
    return {"series": {"train": len(split.train), "validation": len(split.validation), "test": len(split.test)},
            "windows": {"train": len(ws.train), "validation": 0 if ws.validation is None else len(ws.validation),
                        "test": len(ws.test)}}


def _prepare(cfg: ExperimentConfig, H: int) -> tuple[Split, WindowSplit]:
    ds = cfg.resolved_dataset()
    split = split_series(load_series(ds), ds)
    ws = build_windows(split, H, cfg.forecast_steps, ds, ds.seed)
    if ws is None:
        raise ConfigurationError(f"no windows of {H}+{cfg.forecast_steps} steps in the train or test split")
    return split, ws


def _label(name: str, H: int, cfg: ExperimentConfig) -> str:
    return f"{name}@h{H * 0.04:.2f}s" if cfg.experiment == "input_length_sweep" else name


def run_experiment1(cfg: ExperimentConfig) -> ExperimentResult:
    """Input-length sweep: one set of curves per history length.

    Windows are cut once at the longest usable length and cropped, so every
    length is scored on the same forecast targets.
    """
    out = check_writable(cfg.out_dir)
    P = cfg.forecast_steps
    ds = cfg.resolved_dataset()
    split = split_series(load_series(ds), ds)
    lengths = sorted(set(cfg.history_steps()))
    usable = []
    for H in lengths:
        if build_windows(split, H, P, ds, ds.seed) is None:
            logger.warning("history of %d steps exceeds the available spans; skipped", H)
        else:
            usable.append(H)
    if not usable:
        raise ConfigurationError("no history length fits the available spans")
    full = build_windows(split, max(usable), P, ds, ds.seed)
    runs: list[ModelRun] = []
    paths: dict[str, Path] = {}
    for H in usable:
        ws = crop_split(full, H)
        h_runs = [fit_and_evaluate(m, _label(m, H, cfg), cfg, ws, out / "checkpoints", cfg.content_hash())
                  for m in cfg.models]
        runs.extend(h_runs)
        reps = [r.report for r in h_runs if r.report is not None]
        if reps:
            series = [(r.model, r.horizons_s, r.fde) for r in reps]
            paths[f"curve_h{H}"] = write_chart(out / f"curves_h{H * 0.04:.2f}s.svg", series,
                                               f"FDE with {H * 0.04:.2f} s input", "forecast horizon (s)", "FDE (m)")
    reports = [r.report if r.report is not None else absent_report(r.label, P) for r in runs]
    manifest = run_manifest(cfg, runs, _counts(split, full) | {"history_steps": usable})
    paths |= emit_reports(reports, out, cfg.table_horizons_s, title="input length sweep", summary=manifest)
    return ExperimentResult(reports, runs, paths, manifest)


def run_experiment2(cfg: ExperimentConfig) -> ExperimentResult:
    """Within-team generalization: every configured model, one history length."""
    out = check_writable(cfg.out_dir)
    H = cfg.history_steps()[0]
    split, ws = _prepare(cfg, H)
    runs = [fit_and_evaluate(m, m, cfg, ws, out / "checkpoints", cfg.content_hash()) for m in cfg.models]
    reports = [r.report if r.report is not None else absent_report(r.label, cfg.forecast_steps) for r in runs]
    manifest = run_manifest(cfg, runs, _counts(split, ws))
    paths = emit_reports(reports, out, cfg.table_horizons_s, title="within team", summary=manifest)
    return ExperimentResult(reports, runs, paths, manifest)


def run_experiment3(cfg: ExperimentConfig) -> ExperimentResult:
    """Cross-team generalization for the context models, with deltas against a within-team run."""
    if cfg.dataset.split_policy != "by_team":
        raise ConfigurationError("cross_team needs split_policy 'by_team'")
    out = check_writable(cfg.out_dir)
    models = [m for m in cfg.models if m in CONTEXT_MODELS] or list(CONTEXT_MODELS)
    H = cfg.history_steps()[0]
    split, ws = _prepare(cfg, H)
    runs = [fit_and_evaluate(m, m, cfg, ws, out / "checkpoints", cfg.content_hash()) for m in models]
    reports = [r.report if r.report is not None else absent_report(r.label, cfg.forecast_steps) for r in runs]
    manifest = run_manifest(cfg, runs, _counts(split, ws))
    baseline = None
    if cfg.baseline_dir:
        path = Path(cfg.baseline_dir) / "metrics.csv"
        if path.exists():
            baseline = read_table(path)
        else:
            logger.warning("no within-team table at %s; deltas omitted", path)
    else:
        logger.warning("no baseline_dir configured; deltas omitted")
    manifest["deltas"] = baseline is not None
    paths = emit_reports(reports, out, cfg.table_horizons_s, title="cross team", summary=manifest)
    if baseline is not None:
        paths["deltas"] = out / "deltas.csv"
        paths["deltas"].write_text(delta_table(reports, baseline, cfg.table_horizons_s), encoding="utf-8")
    return ExperimentResult(reports, runs, paths, manifest)


RUNNERS = {"input_length_sweep": run_experiment1, "within_team": run_experiment2, "cross_team": run_experiment3}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    return RUNNERS[cfg.experiment](cfg)


def train_only(cfg: ExperimentConfig) -> list[ModelRun]:
    """Fit the configured models at the first history length and store checkpoints and loss curves."""
    out = check_writable(cfg.out_dir)
    H = cfg.history_steps()[0]
    split, ws = _prepare(cfg, H)
    runs = [fit_and_evaluate(m, m, cfg, ws, out / "checkpoints", cfg.content_hash()) for m in cfg.models]
    manifest = run_manifest(cfg, runs, _counts(split, ws))
    (out / "train_summary.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default)
                                            + "\n", encoding="utf-8")
    return runs


def evaluate_checkpoint(model, dataset: DatasetManifest, history_steps: int, forecast_steps: int,
                        seed: int = 0) -> MetricReport:
    """Score a fitted model on the test partition of ``dataset``."""
    split = split_series(load_series(dataset), dataset)
    test = _windows(split.test, history_steps, forecast_steps, dataset.eval_stride, dataset.targets_per_window,
                    seed * 3 + 2)
    if test is None:
        raise ConfigurationError("the dataset's test split has no windows of the checkpoint's size")
    return evaluate(model.predict(test), test.target_positions(), test.last_pos[:, 0])
