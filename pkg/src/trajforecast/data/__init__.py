"""Ingestion, resampling, windowing, normalization, context and graph construction."""
from .context import ContextFeatures, context_features, context_fields, distance_transform
from .graph import SceneGraph, build_graph
from .ingest import ParseError, ingest_game
from .normalize import FeatureScaler, NormStats, fit_normalizer
from .series import (DT, FT_TO_M, HOOPS, ConfigurationError, FrameSeries, RawGame, derive_velocities,
                     resample_uniform)
from .split import split_dataset
from .synthetic import simulate_game, simulate_league
from .windows import WindowSet, concat_windows, expand_targets, make_windows

__all__ = [
    "DT", "FT_TO_M", "HOOPS", "ConfigurationError", "ContextFeatures", "FeatureScaler", "FrameSeries",
    "NormStats", "ParseError", "RawGame", "SceneGraph", "WindowSet", "build_graph", "concat_windows",
    "context_features", "context_fields", "derive_velocities", "distance_transform", "expand_targets",
    "fit_normalizer", "ingest_game", "make_windows", "resample_uniform", "simulate_game",
    "simulate_league", "split_dataset",
]
