"""Valley grid, household population, and simulation parameters.

The world is a rectangular grid of cells. Each cell has a static soil
quality and zone label plus per-year dryness and water-source series
covering the full simulation horizon. Households occupy one farm cell and
one dwelling cell each; occupancy is exclusive per role.

``SimParams`` carries the eleven behavioral parameters. Their default
sampling ranges are the +/-5% intervals around the standard calibration
of the reference household model.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "N_YEARS",
    "PARAM_NAMES",
    "DEFAULT_PARAM_RANGES",
    "SimParams",
    "sample_params",
    "Household",
    "WorldState",
    "HistoricalSeries",
]

N_YEARS = 550

# Largest grid for which the cell-by-cell adjacency table is worth its
# quadratic memory (bytes = n_cells ** 2 per distinct radius).
_ADJACENCY_CELL_LIMIT = 3600

DEFAULT_PARAM_RANGES: dict[str, tuple[float, float]] = {
    "water_source_distance": (10.925, 12.075),
    "death_age_span": (9.5, 10.5),
    "min_fertility": (0.1615, 0.1785),
    "base_nutrition_need": (175.75, 194.25),
    "fertility_span": (0.0285, 0.0315),
    "min_fertility_ends_age": (27.55, 30.45),
    "harvest_variance": (0.418, 0.462),
    "harvest_adjustment": (0.608, 0.672),
    "maize_gift_to_child": (0.4465, 0.4935),
    "min_death_age": (38.0, 42.0),
    "fertility_ends_age_span": (4.75, 5.25),
}

# Fixed order in which sample_params consumes random draws.
PARAM_NAMES = tuple(DEFAULT_PARAM_RANGES)


@dataclass(frozen=True)
class SimParams:
    """Behavioral parameters of the household model."""

    water_source_distance: float
    death_age_span: float
    min_fertility: float
    base_nutrition_need: float
    fertility_span: float
    min_fertility_ends_age: float
    harvest_variance: float
    harvest_adjustment: float
    maize_gift_to_child: float
    min_death_age: float
    fertility_ends_age_span: float

    @classmethod
    def midpoint(cls, ranges: dict[str, tuple[float, float]] | None = None) -> "SimParams":
        """Parameters at the center of each range."""
        r = DEFAULT_PARAM_RANGES if ranges is None else ranges
        return cls(**{k: (lo + hi) / 2.0 for k, (lo, hi) in r.items()})


def sample_params(ranges: dict[str, tuple[float, float]], seed: int) -> SimParams:
    """Draw one parameter vector uniformly from ``ranges``.

    Draws happen in ``PARAM_NAMES`` order from a fresh generator, so a
    given (ranges, seed) pair always produces the same vector.
    """
    missing = set(PARAM_NAMES) - set(ranges)
    if missing:
        raise ValueError(f"ranges missing parameters: {sorted(missing)}")
    for k, (lo, hi) in ranges.items():
        if not lo <= hi:
            raise ValueError(f"range for {k} is inverted: ({lo}, {hi})")
    rng = np.random.default_rng(seed)
    values = {}
    for name in PARAM_NAMES:
        lo, hi = ranges[name]
        values[name] = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    return SimParams(**values)


@dataclass
class Household:
    """One household and its demographic state.

    Death age and the fertility schedule are drawn once at creation, so a
    household's fate depends only on its own draws and the harvests it
    experiences.
    """

    id: int
    age: float
    farm_cell: int
    dwelling_cell: int
    corn_stock: float
    death_age: float
    fertility_ends_age: float
    fertility_rate: float
    last_harvest: float = 0.0
    parent_id: int | None = None
    grandparent_id: int | None = None
    children: list[int] = field(default_factory=list)


@dataclass
class HistoricalSeries:
    """Target household-count series, one entry per simulated year."""

    counts: np.ndarray
    start_year: int = 800

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or len(self.counts) != N_YEARS:
            raise ValueError(
                f"historical series must have exactly {N_YEARS} entries, got shape {self.counts.shape}"
            )
        if np.any(self.counts < 0):
            raise ValueError("historical counts must be non-negative")


class WorldState:
    """Grid arrays plus the current household population.

    Static per-cell arrays: ``row``, ``col``, ``zone``, ``quality``,
    ``is_water_body``. Per-year arrays indexed [year, cell]: ``dryness``
    (larger means drier) and ``water`` (1 when the cell offers a usable
    water source that year; water-body cells always do). ``farm_owner``
    and ``dwelling_owner`` hold occupying household ids or -1.

    ``year`` is the 0-based simulation year; calendar labels add
    ``start_year``.
    """

    def __init__(
        self,
        rows: int,
        cols: int,
        zone: np.ndarray,
        quality: np.ndarray,
        is_water_body: np.ndarray,
        dryness: np.ndarray,
        water: np.ndarray,
        start_year: int = 800,
    ) -> None:
        n = rows * cols
        zone = np.asarray(zone, dtype=np.int64)
        quality = np.asarray(quality, dtype=np.float64)
        is_water_body = np.asarray(is_water_body, dtype=bool)
        dryness = np.asarray(dryness, dtype=np.float64)
        water = np.asarray(water, dtype=bool)
        if rows < 1 or cols < 1:
            raise ValueError("grid must have positive dimensions")
        for name, arr, shape in (
            ("zone", zone, (n,)),
            ("quality", quality, (n,)),
            ("is_water_body", is_water_body, (n,)),
            ("dryness", dryness, (N_YEARS, n)),
            ("water", water, (N_YEARS, n)),
        ):
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
        if np.any(quality < 0.0) or np.any(quality > 1.0):
            raise ValueError("quality must lie in [0, 1]")
        if not np.all(np.isfinite(dryness)):
            raise ValueError("dryness must be finite")
        if np.any(water[:, is_water_body] != True):  # noqa: E712
            raise ValueError("water-body cells must offer water every year")

        self.rows = rows
        self.cols = cols
        self.n_cells = n
        self.zone = zone
        self.quality = quality
        self.is_water_body = is_water_body
        self.dryness = dryness
        self.water = water
        self.start_year = start_year
        ids = np.arange(n)
        self.cell_row = ids // cols
        self.cell_col = ids % cols
        self.cell_rowf = self.cell_row.astype(np.float64)
        self.cell_colf = self.cell_col.astype(np.float64)

        self.year = 0
        self.farm_owner = np.full(n, -1, dtype=np.int64)
        self.dwelling_owner = np.full(n, -1, dtype=np.int64)
        self.households: dict[int, Household] = {}
        self._id_list: list[int] = []
        self.next_household_id = 0
        # Bumped whenever membership or a dwelling location changes, so
        # callers can cache population-derived arrays between decisions.
        self.pop_version = 0
        # Bumped whenever cell occupancy (farm or dwelling ownership)
        # changes through the mutation methods below, so callers can cache
        # availability between decisions.
        self.occ_version = 0
        self._adjacency: dict[float, np.ndarray] = {}
        self.rng = np.random.default_rng()

    # -- population management -------------------------------------------

    def live_ids(self) -> list[int]:
        """Household ids in ascending order (the canonical iteration order)."""
        return list(self._id_list)

    @property
    def n_households(self) -> int:
        return len(self.households)

    def add_household(self, h: Household) -> None:
        if h.id in self.households:
            raise ValueError(f"household id {h.id} already present")
        for cell, owners, role in (
            (h.farm_cell, self.farm_owner, "farm"),
            (h.dwelling_cell, self.dwelling_owner, "dwelling"),
        ):
            if not 0 <= cell < self.n_cells:
                raise ValueError(f"{role} cell {cell} out of range")
            if self.is_water_body[cell]:
                raise ValueError(f"{role} cell {cell} is a water body")
            if owners[cell] != -1:
                raise ValueError(f"{role} cell {cell} already occupied by {owners[cell]}")
        self.farm_owner[h.farm_cell] = h.id
        self.dwelling_owner[h.dwelling_cell] = h.id
        self.households[h.id] = h
        bisect.insort(self._id_list, h.id)
        self.pop_version += 1
        self.occ_version += 1
        self.next_household_id = max(self.next_household_id, h.id + 1)

    def remove_household(self, hid: int) -> None:
        h = self.households.pop(hid)
        self._id_list.remove(hid)
        self.pop_version += 1
        self.occ_version += 1
        self.farm_owner[h.farm_cell] = -1
        self.dwelling_owner[h.dwelling_cell] = -1

    def move_farm(self, hid: int, new_cell: int) -> None:
        h = self.households[hid]
        if self.farm_owner[new_cell] != -1 or self.dwelling_owner[new_cell] != -1:
            raise ValueError(f"cell {new_cell} is occupied")
        self.farm_owner[h.farm_cell] = -1
        self.farm_owner[new_cell] = hid
        h.farm_cell = new_cell
        self.occ_version += 1

    def move_dwelling(self, hid: int, new_cell: int) -> None:
        h = self.households[hid]
        if self.farm_owner[new_cell] != -1 or self.dwelling_owner[new_cell] != -1:
            raise ValueError(f"cell {new_cell} is occupied")
        self.dwelling_owner[h.dwelling_cell] = -1
        self.dwelling_owner[new_cell] = hid
        h.dwelling_cell = new_cell
        self.pop_version += 1
        self.occ_version += 1

    # -- geometry and availability ---------------------------------------

    def distance(self, cell_a: int, cell_b) -> np.ndarray | float:
        """Euclidean distance between cell centers; ``cell_b`` may be an array."""
        dr = self.cell_rowf[cell_a] - self.cell_rowf[cell_b]
        dc = self.cell_colf[cell_a] - self.cell_colf[cell_b]
        return np.hypot(dr, dc)

    def available_mask(self) -> np.ndarray:
        """Cells free of water bodies, farms, and dwellings."""
        return (~self.is_water_body) & (self.farm_owner == -1) & (self.dwelling_owner == -1)

    def within_radius_matrix(self, radius: float) -> np.ndarray | None:
        """Cell-by-cell boolean table of ``distance(a, b) <= radius``.

        Built once per map and radius with the same squared-distance
        arithmetic scorers use on the fly, so a lookup is interchangeable
        with direct evaluation. Returns None for grids large enough that
        the quadratic table would not pay for itself; callers must then
        fall back to computing distances directly. Treat as read-only.
        """
        if self.n_cells > _ADJACENCY_CELL_LIMIT:
            return None
        adj = self._adjacency.get(radius)
        if adj is None:
            r2 = radius * radius
            adj = np.empty((self.n_cells, self.n_cells), dtype=bool)
            # Row blocks keep the float temporaries small on big grids.
            step = max(1, (1 << 22) // max(self.n_cells, 1))
            for lo in range(0, self.n_cells, step):
                hi = min(lo + step, self.n_cells)
                dr = self.cell_rowf[lo:hi, None] - self.cell_rowf[None, :]
                dc = self.cell_colf[lo:hi, None] - self.cell_colf[None, :]
                adj[lo:hi] = (dr * dr + dc * dc) <= r2
            self._adjacency[radius] = adj
        return adj

    def water_cell_ids(self, year: int) -> np.ndarray:
        return np.flatnonzero(self.water[year])

    def water_within(self, year: int, max_dist: float) -> np.ndarray:
        """Boolean mask of cells with a water source within ``max_dist``."""
        wc = self.water_cell_ids(year)
        if wc.size == 0:
            return np.zeros(self.n_cells, dtype=bool)
        dr = self.cell_row[:, None] - self.cell_row[wc][None, :]
        dc = self.cell_col[:, None] - self.cell_col[wc][None, :]
        dist2 = dr.astype(np.float64) ** 2 + dc.astype(np.float64) ** 2
        return np.min(dist2, axis=1) <= max_dist * max_dist

    # -- copying -----------------------------------------------------------

    def fresh_copy(self) -> "WorldState":
        """Copy of the map with an empty population and year 0.

        Static and per-year arrays are shared (they are never mutated by
        the simulation); occupancy and population state are new.
        """
        w = WorldState.__new__(WorldState)
        w.rows, w.cols, w.n_cells = self.rows, self.cols, self.n_cells
        w.zone, w.quality, w.is_water_body = self.zone, self.quality, self.is_water_body
        w.dryness, w.water = self.dryness, self.water
        w.start_year = self.start_year
        w.cell_row, w.cell_col = self.cell_row, self.cell_col
        w.cell_rowf, w.cell_colf = self.cell_rowf, self.cell_colf
        w.year = 0
        w.farm_owner = np.full(self.n_cells, -1, dtype=np.int64)
        w.dwelling_owner = np.full(self.n_cells, -1, dtype=np.int64)
        w.households = {}
        w._id_list = []
        w.next_household_id = 0
        w.pop_version = 0
        w.occ_version = 0
        w._adjacency = self._adjacency
        w.rng = np.random.default_rng()
        return w
