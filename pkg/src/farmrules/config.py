"""Experiment configuration: flat ``key = value`` text files.

One file describes a whole experiment: the map and target series, the
search settings, the eleven simulation-parameter ranges, forest and
permutation settings, scoring radii, and the master seed. The published
parameter ranges are built in; a config that departs from them must say
``override = true`` or it is rejected. The canonical serialization
(:meth:`ExperimentConfig.to_text`) is what gets hashed into manifests,
and deliberately excludes the worker count — how many processes ran an
experiment is not part of its identity.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace

from .engine import SimConfig
from .factors import ScoreContext
from .gp import GpConfig
from .world import DEFAULT_PARAM_RANGES, PARAM_NAMES

__all__ = ["ExperimentConfig", "ConfigError"]


class ConfigError(ValueError):
    """A config file that cannot be used as written."""


_RANGE_PREFIX = "range_"


def _parse_bool(text: str, where: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"{where}: expected true/false, got {text!r}")


def _parse_range(text: str, where: str) -> tuple[float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"{where}: expected 'low, high', got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"{where}: expected two numbers, got {text!r}") from None
    if not lo <= hi:
        raise ConfigError(f"{where}: low must not exceed high, got {text!r}")
    return lo, hi


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a command needs, validated once at load time."""

    map_path: str = "map.csv"
    history_path: str = "history.csv"
    # search settings (mirror of GpConfig)
    population_size: int = 50
    generations: int = 100
    runs: int = 20
    depth_min: int = 4
    depth_max: int = 10
    crossover_rate: float = 0.8
    mutation_rate: float = 0.2
    tournament_size: int = 3
    social_mutation_prob: float = 0.1
    replicates: int = 1
    # simulation parameter ranges
    param_ranges: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_PARAM_RANGES)
    )
    override: bool = False
    # forest / permutation settings
    forest_n_trees: int = 520
    forest_split: float = 0.9
    forest_min_samples_leaf: int = 5
    forest_max_features: int | str = "third"
    perm_repeats: int = 30
    perm_mode: str = "shuffle"
    # candidate scoring
    radius: float = 11.5
    top_k: int = 5
    perf_rank_by: str = "corn_stock"
    # orchestration
    seed: int = 0
    workers: int = 1

    _INT_KEYS = (
        "population_size", "generations", "runs", "depth_min", "depth_max",
        "tournament_size", "replicates", "forest_n_trees",
        "forest_min_samples_leaf", "perm_repeats", "top_k", "seed", "workers",
    )
    _FLOAT_KEYS = (
        "crossover_rate", "mutation_rate", "social_mutation_prob",
        "forest_split", "radius",
    )
    _STR_KEYS = ("perm_mode", "perf_rank_by")
    _PATH_KEYS = {"map": "map_path", "history": "history_path"}

    def __post_init__(self) -> None:
        # GpConfig re-validates the search settings.
        self.gp_config()
        missing = set(PARAM_NAMES) - set(self.param_ranges)
        extra = set(self.param_ranges) - set(PARAM_NAMES)
        if missing or extra:
            raise ConfigError(
                f"parameter ranges mismatch: missing {sorted(missing)}, unknown {sorted(extra)}"
            )
        if not self.override:
            for name in PARAM_NAMES:
                if tuple(self.param_ranges[name]) != DEFAULT_PARAM_RANGES[name]:
                    raise ConfigError(
                        f"range_{name} departs from the published interval "
                        f"{DEFAULT_PARAM_RANGES[name]}; set override = true to allow it"
                    )
        if not 0.0 < self.forest_split < 1.0:
            raise ConfigError(f"forest_split must be in (0, 1), got {self.forest_split}")
        if self.forest_n_trees < 1:
            raise ConfigError("forest_n_trees must be >= 1")
        if self.forest_min_samples_leaf < 1:
            raise ConfigError("forest_min_samples_leaf must be >= 1")
        if self.perm_repeats < 2:
            raise ConfigError("perm_repeats must be >= 2")
        if self.perm_mode not in ("shuffle", "per_tree"):
            raise ConfigError(f"perm_mode must be shuffle or per_tree, got {self.perm_mode!r}")
        mf = self.forest_max_features
        if not (mf in ("third", "all") or (isinstance(mf, int) and mf >= 1)):
            raise ConfigError(f"forest_max_features must be third, all, or a positive integer, got {mf!r}")
        if self.radius <= 0:
            raise ConfigError(f"radius must be positive, got {self.radius}")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.perf_rank_by not in ("corn_stock", "last_harvest"):
            raise ConfigError(f"perf_rank_by must be corn_stock or last_harvest, got {self.perf_rank_by!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    # -- loading -----------------------------------------------------------

    @classmethod
    def from_text(
        cls, text: str, base_dir: str = ".", source: str = "<config>"
    ) -> "ExperimentConfig":
        values: dict = {}
        ranges = dict(DEFAULT_PARAM_RANGES)
        seen: set[str] = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            where = f"{source}:{lineno}: {key}"
            if key in seen:
                raise ConfigError(f"{where}: duplicate key")
            seen.add(key)
            if key in cls._PATH_KEYS:
                values[cls._PATH_KEYS[key]] = os.path.normpath(
                    os.path.join(base_dir, val)
                )
            elif key in cls._INT_KEYS:
                try:
                    values[key] = int(val)
                except ValueError:
                    raise ConfigError(f"{where}: expected an integer, got {val!r}") from None
            elif key in cls._FLOAT_KEYS:
                try:
                    values[key] = float(val)
                except ValueError:
                    raise ConfigError(f"{where}: expected a number, got {val!r}") from None
            elif key in cls._STR_KEYS:
                values[key] = val
            elif key == "override":
                values["override"] = _parse_bool(val, where)
            elif key == "forest_max_features":
                values[key] = val if val in ("third", "all") else _int_or_error(val, where)
            elif key.startswith(_RANGE_PREFIX):
                name = key[len(_RANGE_PREFIX):]
                if name not in PARAM_NAMES:
                    raise ConfigError(f"{where}: unknown simulation parameter {name!r}")
                ranges[name] = _parse_range(val, where)
            else:
                raise ConfigError(f"{where}: unknown key")
        values["param_ranges"] = ranges
        return cls(**values)

    @classmethod
    def from_file(cls, path: str, check_files: bool = True) -> "ExperimentConfig":
        try:
            with open(path) as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = cls.from_text(text, base_dir=os.path.dirname(path) or ".", source=path)
        if check_files:
            for p in (cfg.map_path, cfg.history_path):
                if not os.path.exists(p):
                    raise ConfigError(f"{path}: referenced file does not exist: {p}")
        return cfg

    # -- canonical form ------------------------------------------------------

    def to_text(self) -> str:
        """Canonical serialization: fixed key order, shortest-round-trip
        floats. The worker count is execution detail and is left out."""
        lines = [
            f"map = {self.map_path}",
            f"history = {self.history_path}",
        ]
        for key in ("population_size", "generations", "runs", "depth_min",
                    "depth_max", "tournament_size", "replicates"):
            lines.append(f"{key} = {getattr(self, key)}")
        for key in ("crossover_rate", "mutation_rate", "social_mutation_prob"):
            lines.append(f"{key} = {getattr(self, key)!r}")
        for name in PARAM_NAMES:
            lo, hi = self.param_ranges[name]
            lines.append(f"{_RANGE_PREFIX}{name} = {lo!r}, {hi!r}")
        lines.append(f"override = {'true' if self.override else 'false'}")
        for key in ("forest_n_trees", "forest_min_samples_leaf", "perm_repeats"):
            lines.append(f"{key} = {getattr(self, key)}")
        lines.append(f"forest_split = {self.forest_split!r}")
        lines.append(f"forest_max_features = {self.forest_max_features}")
        lines.append(f"perm_mode = {self.perm_mode}")
        lines.append(f"radius = {self.radius!r}")
        lines.append(f"top_k = {self.top_k}")
        lines.append(f"perf_rank_by = {self.perf_rank_by}")
        lines.append(f"seed = {self.seed}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    # -- adapters ------------------------------------------------------------

    def gp_config(self) -> GpConfig:
        try:
            return GpConfig(
                population_size=self.population_size,
                generations=self.generations,
                runs=self.runs,
                depth_min=self.depth_min,
                depth_max=self.depth_max,
                crossover_rate=self.crossover_rate,
                mutation_rate=self.mutation_rate,
                tournament_size=self.tournament_size,
                social_mutation_prob=self.social_mutation_prob,
                replicates=self.replicates,
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def score_context(self) -> ScoreContext:
        return ScoreContext(
            radius=self.radius, top_k=self.top_k, perf_rank_by=self.perf_rank_by
        )

    def sim_config(self) -> SimConfig:
        return SimConfig(score=self.score_context())

    def with_updates(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _int_or_error(val: str, where: str) -> int:
    try:
        return int(val)
    except ValueError:
        raise ConfigError(
            f"{where}: expected third, all, or an integer, got {val!r}"
        ) from None
