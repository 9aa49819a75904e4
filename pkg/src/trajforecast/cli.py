"""``forecast`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .data import ConfigurationError
from .data.ingest import write_csv
from .experiments import (DatasetManifest, ExperimentConfig, config_from_dict, evaluate_checkpoint, load_checkpoint,
                          load_config, load_dataset_manifest, run_experiment, seconds_to_steps, to_series,
                          train_only)
from .experiments.runner import load_games
from .metrics import reports_to_csv

logger = logging.getLogger("trajforecast")

EXPERIMENT_COMMANDS = {"exp1": "input_length_sweep", "exp2": "within_team", "exp3": "cross_team"}


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="experiment config (YAML); defaults apply when omitted")
    p.add_argument("--seed", type=int, help="seed for splits, initialization and shuffling")
    p.add_argument("--out", help="output directory")
    p.add_argument("--models", type=_names, help="comma-separated model names")
    p.add_argument("--history-s", type=_floats, help="comma-separated history lengths in seconds")
    p.add_argument("--forecast-s", type=float, help="forecast length in seconds")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--baseline", help="cross_team: directory holding a within_team metrics.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forecast", description="Multi-agent trajectory forecasting benchmarks.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and resample a dataset; optionally export it as neutral CSV")
    p.add_argument("manifest", nargs="?", help="dataset manifest (YAML); the synthetic league when omitted")
    p.add_argument("--out", help="write one neutral CSV per game plus a manifest listing them")
    p.add_argument("--seed", type=int, help="seed for the synthetic source")

    p = sub.add_parser("train", help="train the configured models and save checkpoints")
    _add_overrides(p)
    for cmd, exp in EXPERIMENT_COMMANDS.items():
        p = sub.add_parser(cmd, help=f"run the {exp.replace('_', ' ')} experiment")
        _add_overrides(p)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset's test split")
    p.add_argument("checkpoint")
    p.add_argument("dataset", help="dataset manifest (YAML)")
    p.add_argument("--history-s", type=float, help="history length for models without a stored one")
    p.add_argument("--forecast-s", type=float, help="forecast length for models without a stored one")
    p.add_argument("--seed", type=int, default=0, help="seed for target sampling")
    p.add_argument("--out", help="write the per-horizon CSV here instead of stdout")
    return parser


def resolve_config(args: argparse.Namespace, experiment: str | None) -> ExperimentConfig:
    overrides = {"seed": args.seed, "out_dir": args.out, "models": args.models, "history_s": args.history_s,
                 "forecast_s": args.forecast_s, "epochs": args.epochs, "baseline_dir": args.baseline}
    if experiment is not None:
        overrides["experiment"] = experiment
    if args.config:
        return load_config(args.config, overrides)
    return config_from_dict({k: v for k, v in overrides.items() if v is not None})


def cmd_ingest(args) -> int:
    manifest = load_dataset_manifest(args.manifest) if args.manifest else DatasetManifest()
    if args.seed is not None:
        manifest.seed = args.seed
    games = load_games(manifest)
    series = to_series(games)
    summary = {"games": len(games), "series": len(series), "frames": int(sum(len(s) for s in series)),
               "flagged_moments": int(sum(g.n_flagged for g in games)),
               "teams": sorted({t for s in series for t in s.teams})}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for g in games:
            for e in range(len(g.events)):
                name = f"{g.game_id}_e{e}.csv" if len(g.events) > 1 else f"{g.game_id}.csv"
                one = type(g)(game_id=g.game_id, events=[g.events[e]], teams=g.teams)
                (out / name).write_text(write_csv(one), encoding="utf-8")
                files.append({"path": name, "format": "neutral_csv", "game_id": g.game_id})
        exported = dict(manifest.to_dict(), source="files", files=files, synthetic={})
        (out / "dataset.yaml").write_text(yaml.safe_dump(exported, sort_keys=True), encoding="utf-8")
        summary["exported"] = str(out / "dataset.yaml")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args, None)
    for run in train_only(cfg):
        best = "absent" if run.report is None else f"best epoch {run.best_epoch}"
        print(f"{run.label}: {run.n_parameters} parameters, {best}, checkpoint {run.checkpoint}")
    return 0


def cmd_experiment(args) -> int:
    cfg = resolve_config(args, EXPERIMENT_COMMANDS[args.command])
    result = run_experiment(cfg)
    sys.stdout.write(reports_to_csv(sorted(result.reports, key=lambda r: r.model), cfg.table_horizons_s))
    print(f"reports written to {cfg.out_dir}")
    return 0


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    fitted = meta.get("fitted", {})
    H = fitted.get("history_steps")
    if H is None:
        H = seconds_to_steps(args.history_s if args.history_s is not None else 2.0, "history length")
    P = fitted.get("forecast_steps")
    if P is None:
        P = seconds_to_steps(args.forecast_s if args.forecast_s is not None else 2.0, "forecast length",
                             allow_rounding=False)
    dataset = load_dataset_manifest(args.dataset)
    if dataset.seed is None:
        dataset.seed = args.seed
    report = evaluate_checkpoint(model, dataset, int(H), int(P), seed=dataset.seed)
    report.model = meta["model"]
    text = reports_to_csv([report])
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"ingest": cmd_ingest, "train": cmd_train, "eval": cmd_eval}
    try:
        return handlers.get(args.command, cmd_experiment)(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"forecast: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
