"""Engine configuration: key=value file plus CLI/env overrides.

The config file is plain text, one ``key = value`` per line, ``#`` starts
a comment. Lists are comma separated. Unknown keys are rejected so typos
fail loudly. Thread-count resolution order: explicit flag, config file,
``POINTMATCH_THREADS`` environment variable, then 1.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import InvalidConfig
from .sampling import SamplingModel
from .search import SearchConfig
from .similarity import SimilarityKind


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


_KEY_PARSERS = {
    "levels": int,
    "threads": int,
    "mi_bins": int,
    "half_extent": int,
    "cache_pairs": int,
    "port": int,
    "level1_grid_mm": float,
    "cosine_weight": float,
    "mi_weight": float,
    "intensity_offset": float,
    "metric": SimilarityKind.parse,
    "host": str,
    "box_schedule_mm": _parse_float_list,
    "resolutions_mm": _parse_float_list,
}


@dataclass(frozen=True)
class EngineConfig:
    """Search config, sampling model, and service settings in one place."""

    search: SearchConfig = field(default_factory=SearchConfig)
    model: SamplingModel = field(default_factory=SamplingModel)
    intensity_offset: float = 0.0
    cache_pairs: int = 8
    host: str = "127.0.0.1"
    port: int = 8008

    def validate(self) -> None:
        self.search.validate()
        if self.cache_pairs < 1:
            raise InvalidConfig("cache_pairs must be >= 1")
        if not (0 < self.port < 65536):
            raise InvalidConfig(f"port must be in 1..65535, got {self.port}")


def read_config_file(path) -> dict:
    """Parse a key=value config file into typed values."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, text = line.partition("=")
        key = key.strip()
        text = text.strip()
        parser = _KEY_PARSERS.get(key)
        if parser is None:
            raise InvalidConfig(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = parser(text)
        except ValueError as exc:
            raise InvalidConfig(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def _default_threads() -> int | None:
    env = os.environ.get("POINTMATCH_THREADS")
    if env is None:
        return None
    try:
        n = int(env)
    except ValueError as exc:
        raise InvalidConfig(f"POINTMATCH_THREADS must be an integer, got {env!r}") from exc
    if n < 1:
        raise InvalidConfig(f"POINTMATCH_THREADS must be >= 1, got {n}")
    return n


def build_config(config_path=None, overrides: dict | None = None) -> EngineConfig:
    """Defaults -> config file -> overrides (CLI flags), then validate."""
    values: dict = {}
    if config_path is not None:
        values.update(read_config_file(config_path))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _KEY_PARSERS:
            raise InvalidConfig(f"unknown config key {key!r}")
        values[key] = val

    if "threads" not in values:
        env_threads = _default_threads()
        if env_threads is not None:
            values["threads"] = env_threads

    search_keys = {
        "levels", "level1_grid_mm", "box_schedule_mm", "metric", "threads",
        "mi_bins", "cosine_weight", "mi_weight",
    }
    search = SearchConfig()
    search_updates = {k: values[k] for k in search_keys if k in values}
    if search_updates:
        search = replace(search, **search_updates)

    model = SamplingModel()
    model_updates = {}
    if "resolutions_mm" in values:
        model_updates["resolutions_mm"] = values["resolutions_mm"]
    if "half_extent" in values:
        model_updates["half_extent"] = values["half_extent"]
    if model_updates:
        try:
            model = replace(model, **model_updates)
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc

    cfg = EngineConfig(
        search=search,
        model=model,
        intensity_offset=values.get("intensity_offset", 0.0),
        cache_pairs=values.get("cache_pairs", 8),
        host=values.get("host", "127.0.0.1"),
        port=values.get("port", 8008),
    )
    cfg.validate()
    return cfg
