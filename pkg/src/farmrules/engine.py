"""Annual household simulation over the valley grid.

Each simulated year runs five phases in a fixed order, iterating
households in ascending id so a run is fully determined by the map, the
parameters, the rule, and one integer seed:

1. Harvest: every household reaps quality * base_yield(dryness) *
   harvest_adjustment * (1 + u * harvest_variance) from its farm cell,
   with u drawn uniformly from [-1, 1] per household.
2. Consumption: corn stock grows by the harvest and shrinks by
   base_nutrition_need.
3. Aging and death: age increases by one; households with negative stock
   or age beyond their personal death age leave the grid.
4. Fission: adult households within their fertile window spawn a child
   household with probability fertility_rate. The child picks a farm with
   the active rule (using the parent's farm and dwelling as its point of
   reference), then a dwelling near that farm; only then is the maize
   gift transferred. A child that finds no farm or no dwelling does not
   settle and the parent keeps its stock.
5. Relocation: households whose projected harvest on their current farm
   (this year's dryness, no noise) falls below base_nutrition_need pick a
   new farm with the rule. An empty candidate set means the household
   leaves the valley for good. The dwelling moves along only when the old
   one no longer serves the new farm (too far, or cut off from water).

Random draws per year, in order: one harvest uniform per household
(ascending id), then per fissioning parent one fertility uniform plus
three demographic uniforms for the child (death age, fertility end,
fertility rate). Initial placement draws are documented on
``init_households``. Dwelling choice and plot choice draw nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .factors import ScoreContext, base_yield, evaluate_rule
from .ruletree import RuleTree, extract_presence
from .stats import rmse
from .world import Household, HistoricalSeries, SimParams, WorldState, N_YEARS

__all__ = ["SimConfig", "SimResult", "init_households", "step_year", "simulate", "run_simulation"]


@dataclass
class SimConfig:
    """Structural knobs of the simulation (not swept by experiments)."""

    adult_age: float = 16.0
    initial_households: int = 14
    initial_age_range: tuple[float, float] = (0.0, 28.0)
    initial_corn_stock: tuple[float, float] = (400.0, 800.0)
    score: ScoreContext = field(default_factory=ScoreContext)

    def __post_init__(self) -> None:
        if self.initial_households < 1:
            raise ValueError("initial_households must be at least 1")
        if self.adult_age < 0:
            raise ValueError("adult_age must be non-negative")


@dataclass
class SimResult:
    """Household counts per year and error against the target series."""

    counts: np.ndarray
    error: float


def projected_harvest(world: WorldState, h: Household, params: SimParams, cfg: SimConfig) -> float:
    """Expected (noise-free) harvest of the household's farm this year."""
    q = world.quality[h.farm_cell]
    by = float(base_yield(world.dryness[world.year, h.farm_cell], cfg.score.yield_table))
    return float(q) * by * params.harvest_adjustment


def choose_dwelling(
    world: WorldState,
    farm_cell: int,
    params: SimParams,
    cfg: SimConfig,
    water_ok: np.ndarray,
) -> int | None:
    """Free cell for the household's dwelling, preferring proximity to the farm.

    First choice: free cells within water_source_distance of both the farm
    and a water source. Fallbacks relax the farm constraint, then the
    water constraint. Nearest to the farm wins; ties go to the lowest cell
    id. Returns None when the grid has no free cell at all.
    """
    free = world.available_mask()
    d = world.distance(farm_cell, np.arange(world.n_cells))
    wsd = params.water_source_distance
    for mask in (free & water_ok & (d <= wsd), free & water_ok, free):
        ids = np.flatnonzero(mask)
        if ids.size:
            return int(ids[np.argmin(d[ids])])
    return None


def _spawn_child(
    world: WorldState,
    parent: Household,
    rule: RuleTree,
    params: SimParams,
    cfg: SimConfig,
    water_ok: np.ndarray,
    presence: dict[str, int] | None = None,
    year_cache: dict | None = None,
) -> None:
    rng = world.rng
    v = rng.uniform(0.0, 1.0)
    u = rng.uniform(0.0, 1.0)
    w = rng.uniform(0.0, 1.0)
    gift = parent.corn_stock * params.maize_gift_to_child
    child = Household(
        id=world.next_household_id,
        age=0.0,
        farm_cell=parent.farm_cell,
        dwelling_cell=parent.dwelling_cell,
        corn_stock=gift,
        death_age=params.min_death_age + v * params.death_age_span,
        fertility_ends_age=params.min_fertility_ends_age + u * params.fertility_ends_age_span,
        fertility_rate=params.min_fertility + w * params.fertility_span,
        parent_id=parent.id,
        grandparent_id=parent.parent_id,
    )
    plot = evaluate_rule(rule, child, world, cfg.score, presence, year_cache)
    if plot is None:
        return
    # Claim the farm before looking for a dwelling so the two never collide.
    world.farm_owner[plot] = child.id
    dwelling = choose_dwelling(world, plot, params, cfg, water_ok)
    world.farm_owner[plot] = -1
    if dwelling is None:
        return
    child.farm_cell = plot
    child.dwelling_cell = dwelling
    parent.corn_stock -= gift
    world.add_household(child)
    parent.children.append(child.id)


def step_year(
    world: WorldState,
    params: SimParams,
    rule: RuleTree,
    cfg: SimConfig,
    presence: dict[str, int] | None = None,
) -> None:
    """Advance the world by one year in place."""
    year = world.year
    if year >= N_YEARS:
        raise ValueError(f"simulation horizon is {N_YEARS} years")
    rng = world.rng
    water_ok = world.water_within(year, params.water_source_distance)
    year_cache: dict = {}

    # 1-3. harvest, consumption, aging and death, vectorized over the
    # id-sorted population (one uniform per household, ascending id).
    members = [world.households[i] for i in world.live_ids()]
    if members:
        farms = np.array([h.farm_cell for h in members], dtype=np.int64)
        u = rng.uniform(-1.0, 1.0, size=len(members))
        by = base_yield(world.dryness[year, farms], cfg.score.yield_table)
        harvests = (
            world.quality[farms] * by * params.harvest_adjustment * (1.0 + u * params.harvest_variance)
        )
        for h, crop in zip(members, harvests):
            h.last_harvest = float(crop)
            h.corn_stock += h.last_harvest - params.base_nutrition_need
            h.age += 1.0
            if h.corn_stock < 0.0 or h.age > h.death_age:
                world.remove_household(h.id)

    # 4. fission (parents present at the start of the phase)
    for hid in world.live_ids():
        h = world.households[hid]
        if not cfg.adult_age <= h.age <= h.fertility_ends_age:
            continue
        if rng.uniform(0.0, 1.0) < h.fertility_rate:
            _spawn_child(world, h, rule, params, cfg, water_ok, presence, year_cache)

    # 5. relocation of households whose projection falls short
    members = [world.households[i] for i in world.live_ids()]
    if members:
        farms = np.array([h.farm_cell for h in members], dtype=np.int64)
        by = base_yield(world.dryness[year, farms], cfg.score.yield_table)
        projected = world.quality[farms] * by * params.harvest_adjustment
        for h, proj in zip(members, projected):
            if proj >= params.base_nutrition_need:
                continue
            plot = evaluate_rule(rule, h, world, cfg.score, presence, year_cache)
            if plot is None:
                world.remove_household(h.id)
                continue
            world.move_farm(h.id, plot)
            if not _dwelling_still_fits(world, h, params, water_ok):
                dwelling = choose_dwelling(world, plot, params, cfg, water_ok)
                if dwelling is not None:
                    world.move_dwelling(h.id, dwelling)

    world.year = year + 1


def _dwelling_still_fits(
    world: WorldState, h: Household, params: SimParams, water_ok: np.ndarray
) -> bool:
    """True when the current dwelling still serves the (new) farm location."""
    if not water_ok[h.dwelling_cell]:
        return False
    return bool(
        world.distance(h.farm_cell, h.dwelling_cell) <= params.water_source_distance
    )


def init_households(world: WorldState, params: SimParams, cfg: SimConfig) -> None:
    """Seed the initial population on water-adjacent free cells.

    Per household, in order: one integer draw for the farm cell (uniform
    over eligible cells), one uniform for age, one for starting corn
    stock, then the three demographic uniforms (death age, fertility end,
    fertility rate). Placement stops early if the grid runs out of room.
    """
    rng = world.rng
    water_ok = world.water_within(0, params.water_source_distance)
    for _ in range(cfg.initial_households):
        eligible = np.flatnonzero(world.available_mask() & water_ok)
        if eligible.size == 0:
            eligible = np.flatnonzero(world.available_mask())
        if eligible.size == 0:
            break
        farm = int(eligible[int(rng.integers(eligible.size))])
        age = rng.uniform(*cfg.initial_age_range)
        corn = rng.uniform(*cfg.initial_corn_stock)
        v = rng.uniform(0.0, 1.0)
        u = rng.uniform(0.0, 1.0)
        w = rng.uniform(0.0, 1.0)
        world.farm_owner[farm] = world.next_household_id
        dwelling = choose_dwelling(world, farm, params, cfg, water_ok)
        world.farm_owner[farm] = -1
        if dwelling is None:
            continue
        world.add_household(
            Household(
                id=world.next_household_id,
                age=age,
                farm_cell=farm,
                dwelling_cell=dwelling,
                corn_stock=corn,
                death_age=params.min_death_age + v * params.death_age_span,
                fertility_ends_age=params.min_fertility_ends_age + u * params.fertility_ends_age_span,
                fertility_rate=params.min_fertility + w * params.fertility_span,
            )
        )


def simulate(
    world_template: WorldState,
    params: SimParams,
    rule: RuleTree,
    seed: int,
    cfg: SimConfig | None = None,
) -> np.ndarray:
    """Run the full horizon and return end-of-year household counts."""
    cfg = cfg or SimConfig()
    w = world_template.fresh_copy()
    w.rng = np.random.default_rng(seed)
    init_households(w, params, cfg)
    presence = extract_presence(rule)
    counts = np.zeros(N_YEARS, dtype=np.int64)
    for t in range(N_YEARS):
        if w.n_households == 0:
            break
        step_year(w, params, rule, cfg, presence)
        counts[t] = w.n_households
    return counts


def run_simulation(
    world_template: WorldState,
    history: HistoricalSeries,
    params: SimParams,
    rule: RuleTree,
    seed: int,
    cfg: SimConfig | None = None,
) -> SimResult:
    """Simulate and score against the target series."""
    counts = simulate(world_template, params, rule, seed, cfg)
    return SimResult(counts, rmse(counts.astype(np.float64), history.counts.astype(np.float64)))
