"""
Run configuration.

Plain ``key = value`` files, ``STATARB_*`` environment variables and CLI
flags, resolved with precedence flag > environment > file > default.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

from .errors import InvalidConfig
from .gbm import GbmConfig
from .walkforward import DEPTH_GRID, ModelSpec, model_specs

ENV_PREFIX = "STATARB_"

PROFILES: dict[str, dict] = {
    "baseline": {"n_trees": 500, "shrinkage": 0.02},
    "robustness": {"n_trees": 100, "shrinkage": 0.1},
}

_INPUT_FILES = {
    "constituents": "constituents.csv",
    "returns": "returns.csv",
    "prices": "prices.csv",
    "svi_daily": "svi_daily.csv",
    "svi_monthly": "svi_monthly.csv",
    "stitched": "stitched_svi.csv",
}

INPUT_NAMES = tuple(_INPUT_FILES)

_NON_OUTPUT_KEYS = ("out_dir", "workers")


@dataclass
class RunConfig:
    data_dir: str | None = None
    constituents: str | None = None
    returns: str | None = None
    prices: str | None = None
    svi_daily: str | None = None
    svi_monthly: str | None = None
    stitched: str | None = None
    study_start: dt.date = dt.date(2005, 1, 1)
    study_end: dt.date = dt.date(2017, 12, 31)
    profile: str = "baseline"
    n_trees: int | None = None
    shrinkage: float | None = None
    depth_grid: tuple[int, ...] = DEPTH_GRID
    bag_fraction: float = 0.5
    min_node: int = 10
    depth_mode: str = "depth"
    col_fraction: float = 1.0
    specs: tuple[str, ...] = field(default_factory=lambda: tuple(s.name for s in model_specs()))
    out_dir: str = "out"
    seed: int = 0
    workers: int = 1
    excess_kurtosis: bool = True

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise InvalidConfig(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.study_end <= self.study_start:
            raise InvalidConfig("study_end must be after study_start")
        if not self.depth_grid or any(d < 1 for d in self.depth_grid):
            raise InvalidConfig("depth_grid must hold positive integers")
        if self.workers < 1:
            raise InvalidConfig("workers must be >= 1")
        self.model_specs()  # validates spec names
        self.gbm_config()

    def path(self, name: str) -> Path | None:
        explicit = getattr(self, name)
        if explicit:
            return Path(explicit)
        if self.data_dir:
            return Path(self.data_dir) / _INPUT_FILES[name]
        return None

    def model_specs(self) -> list[ModelSpec]:
        return [ModelSpec.parse(s) for s in self.specs]

    def gbm_config(self) -> GbmConfig:
        prof = PROFILES[self.profile]
        return GbmConfig(
            n_trees=self.n_trees if self.n_trees is not None else prof["n_trees"],
            shrinkage=self.shrinkage if self.shrinkage is not None else prof["shrinkage"],
            interaction_depth=max(self.depth_grid),
            bag_fraction=self.bag_fraction,
            min_node=self.min_node,
            seed=self.seed,
            depth_mode=self.depth_mode,
            col_fraction=self.col_fraction,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["study_start"] = self.study_start.isoformat()
        d["study_end"] = self.study_end.isoformat()
        d["depth_grid"] = list(self.depth_grid)
        d["specs"] = list(self.specs)
        return d

    def digest(self) -> str:
        """Hash of every setting that can change outputs (not out_dir or workers)."""
        d = {k: v for k, v in self.to_dict().items() if k not in _NON_OUTPUT_KEYS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _coerce(name: str, value):
    """Convert a string setting to the field's type."""
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if name in ("study_start", "study_end"):
            return dt.date.fromisoformat(text)
        if name == "depth_grid":
            return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())
        if name == "specs":
            return tuple(v.strip() for v in text.split(",") if v.strip())
        if name in ("n_trees", "min_node", "seed", "workers"):
            return None if text.lower() in ("", "none") else int(text)
        if name in ("shrinkage", "bag_fraction", "col_fraction"):
            return None if text.lower() in ("", "none") else float(text)
        if name == "excess_kurtosis":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise InvalidConfig(f"bad value for {name}: {value!r}") from None
    return text or None


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"config line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_").lower()] = value
    return out


def load_run_config(
    path=None,
    overrides: Mapping | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    names = {f.name for f in fields(RunConfig)}
    settings: dict = {}
    if path:
        file_values = parse_config_text(Path(path).read_text(encoding="utf-8"))
        unknown = sorted(set(file_values) - names)
        if unknown:
            raise InvalidConfig(f"unknown config key(s) in {path}: {unknown}")
        settings.update(file_values)
    env = os.environ if env is None else env
    for key, value in env.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX) :].lower()
            if name in names:
                settings[name] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            settings[key] = value
    return RunConfig(**{k: _coerce(k, v) for k, v in settings.items()})
