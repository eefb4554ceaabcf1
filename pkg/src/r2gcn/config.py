"""Flat key=value run configuration.

Grammar: one ``key = value`` assignment per line; blank lines and lines
starting with ``#`` are ignored. Keys are typed against a fixed registry
and unknown keys are rejected. Environment variables override only paths
and the seed: R2GCN_DATA_DIR, R2GCN_OUT_DIR, R2GCN_SEED.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields
from pathlib import Path


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in raw.split(",") if v.strip())


def _parse_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in raw.split(",") if v.strip())


@dataclass
class RunConfig:
    # model
    hidden: int = 128
    readout_hidden: int = 128
    num_layers: int = 3
    variant: str = "r2gcn"
    # training
    lr: float = 1e-4
    weight_decay: float = 1e-2
    max_epochs: int = 400
    patience: int = 100
    runs: int = 10
    seed: int = 0
    label_fraction: float = 1.0
    workers: int = 1
    # snapshots and cohort
    split_train: float = 0.7
    split_val: float = 0.15
    min_records: int = 20
    max_students: int = 30  # 0 keeps every qualifying student
    feature_cutoff_ms: int = -1  # -1 resolves to the interaction era start
    # feature extraction
    drag_threshold_px: float = 5.0
    attempt_gap_ms: int = 2000
    utc_offset_hours: int = 0
    level_thresholds: tuple[int, ...] = (25, 50, 75)
    # label-size sweep
    sweep_fractions: tuple[float, ...] = (0.4, 0.6, 0.8, 1.0)
    # synthetic data
    synth_students: int = 500
    synth_questions: int = 200
    synth_interactions: float = 40.0
    synth_latent_dim: int = 8
    synth_noise_sigma: float = 0.5
    synth_math_dimensions: int = 6
    synth_history_fraction: float = 0.5
    synth_window_days: int = 120
    synth_second_trial_prob: float = 0.25
    # paths
    data_dir: str = ""  # defaults to <out_dir>/synth when empty
    out_dir: str = "runs/default"

    def split_cuts(self) -> tuple[float, float]:
        return (self.split_train, self.split_train + self.split_val)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_DEFAULTS = RunConfig()


def _field_parser(name: str):
    if name == "level_thresholds":
        return _parse_int_list
    if name == "sweep_fractions":
        return _parse_float_list
    return type(getattr(_DEFAULTS, name))  # int / float / str constructors


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Read a config file, apply env vars and explicit overrides, validate."""
    cfg = RunConfig()
    known = {f.name: f for f in fields(RunConfig)}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            parser = _field_parser(key)
            try:
                setattr(cfg, key, parser(raw))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    if os.environ.get("R2GCN_DATA_DIR"):
        cfg.data_dir = os.environ["R2GCN_DATA_DIR"]
    if os.environ.get("R2GCN_OUT_DIR"):
        cfg.out_dir = os.environ["R2GCN_OUT_DIR"]
    if os.environ.get("R2GCN_SEED"):
        cfg.seed = int(os.environ["R2GCN_SEED"])
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        if value is not None:
            setattr(cfg, key, value)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.variant not in ("r2gcn", "rgcn_e2n", "rgcn_no_e2n"):
        raise ValueError(f"unknown variant {cfg.variant!r}")
    if not 0 < cfg.split_train < 1 or not 0 < cfg.split_val < 1:
        raise ValueError("split fractions must be in (0, 1)")
    if cfg.split_train + cfg.split_val >= 1:
        raise ValueError("train and validation fractions must leave room for a test set")
    if not 0 < cfg.label_fraction <= 1:
        raise ValueError("label_fraction must be in (0, 1]")
    if cfg.runs < 1 or cfg.workers < 1:
        raise ValueError("runs and workers must be >= 1")
    if sorted(cfg.level_thresholds) != list(cfg.level_thresholds) or len(cfg.level_thresholds) != 3:
        raise ValueError("level_thresholds must be three ascending values")


def config_hash(cfg: RunConfig) -> str:
    """Short content hash over the canonical key=value rendering."""
    payload = "\n".join(f"{k}={cfg.to_dict()[k]!r}" for k in sorted(cfg.to_dict()))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]
