"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import BuoyDataset, GridField, GridSpec, load_buoys, load_grid_field
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


_GRID_KEYS = ("lat_north", "lat_south", "lon_west", "lon_east", "cell_deg")
_MODEL_INT = ("width", "layers", "heads", "ffn_mult", "max_tokens", "soft_prompt_len",
              "patch_len", "stride", "window")
_TRAIN_FLOAT = ("lr", "alpha", "head_lr_scale")
_TRAIN_INT = ("max_epochs", "patience", "windows_per_epoch")
KNOWN_KEYS = frozenset(("buoy_files", "buoy_latlon", "grid_field", "truth_field", "out_dir",
                        "interval_hours", "start", "steps", "prompt", "use_location", "seed")
                       + _GRID_KEYS + _MODEL_INT + _TRAIN_FLOAT + _TRAIN_INT)


@dataclass
class RunConfig:
    buoy_files: list[Path]
    buoy_latlon: list[tuple[float, float]]
    grid: GridSpec
    out_dir: Path
    grid_field: Path | None = None
    truth_field: Path | None = None
    interval_hours: float = 3.0
    start: str | None = None
    steps: int | None = None
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def load_dataset(self) -> BuoyDataset:
        return load_buoys(self.buoy_files, self.buoy_latlon, self.grid, self.interval_hours,
                          self.start, self.steps)

    def load_surrogate(self, steps: int) -> GridField | None:
        if self.grid_field is None:
            return None
        return load_grid_field(self.grid_field, self.grid, "surrogate", steps)


def _split_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _optional_int(value: str) -> int | None:
    return None if value.strip().lower() in ("", "none") else int(value)


def read_pairs(path: str | Path) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + Path(path).read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return dict(parser["run"])


def parse_config(pairs: dict[str, str], base: Path, overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig`; relative paths resolve against ``base``."""
    pairs = {k: str(v) for k, v in pairs.items()}
    for k, v in (overrides or {}).items():
        if v is not None:
            pairs[k] = str(v)
    unknown = sorted(set(pairs) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")

    def path(key):
        if not pairs.get(key):
            return None
        p = Path(pairs[key])
        return p if p.is_absolute() else base / p

    try:
        files = [base / f if not Path(f).is_absolute() else Path(f) for f in _split_list(pairs.get("buoy_files", ""))]
        latlon = []
        for item in _split_list(pairs.get("buoy_latlon", "")):
            lat, lon = item.split(":")
            latlon.append((float(lat), float(lon)))
        missing = [k for k in _GRID_KEYS if k not in pairs]
        if missing:
            raise ConfigError(f"missing grid keys: {', '.join(missing)}")
        grid = GridSpec.from_bounds(*(float(pairs[k]) for k in _GRID_KEYS))
        seed = int(pairs.get("seed", 0))
        model_kw = {k: int(pairs[k]) for k in _MODEL_INT if k in pairs}
        if "prompt" in pairs:
            model_kw["prompt"] = pairs["prompt"]
        if "use_location" in pairs:
            model_kw["use_location"] = _bool(pairs["use_location"])
        train_kw = {k: float(pairs[k]) for k in _TRAIN_FLOAT if k in pairs}
        train_kw.update({k: _optional_int(pairs[k]) for k in _TRAIN_INT if k in pairs})
        model = ModelConfig(seed=seed, **model_kw)
        train = TrainConfig(seed=seed, **train_kw)
        steps = _optional_int(pairs["steps"]) if "steps" in pairs else None
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if len(files) != len(latlon):
        raise ConfigError(f"{len(files)} buoy files but {len(latlon)} buoy_latlon entries")
    out_dir = path("out_dir") or base / "run"
    cfg = RunConfig(files, latlon, grid, out_dir, path("grid_field"), path("truth_field"),
                    float(pairs.get("interval_hours", 3.0)), pairs.get("start") or None, steps,
                    seed, model, train)
    if model.prompt not in ("full", "light", "no-features"):
        raise ConfigError(f"prompt must be full, light or no-features, got {model.prompt!r}")
    return cfg


def load_config(path: str | Path, overrides: dict | None = None, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    cfg = parse_config(read_pairs(path), path.parent, overrides)
    if check_paths:
        validate_paths(cfg)
    return cfg


def validate_paths(cfg: RunConfig) -> None:
    if not cfg.buoy_files:
        raise ConfigError("no buoy_files configured")
    for p in cfg.buoy_files:
        if not p.exists():
            raise ConfigError(f"buoy file {p} does not exist")
    if cfg.train.alpha > 0 and cfg.grid_field is None:
        raise ConfigError("alpha > 0 needs grid_field (the numerical-model field for the regularizer)")
    for p in (cfg.grid_field, cfg.truth_field):
        if p is not None and not p.exists():
            raise ConfigError(f"grid field file {p} does not exist")


def format_config(pairs: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())
