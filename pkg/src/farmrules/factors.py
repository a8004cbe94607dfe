"""Semantics of rules: candidate plots, factor sub-scores, plot choice.

A deciding household first builds a candidate set of available plots
according to the rule's social-connectivity tag, then scores every
candidate. Each factor is evaluated as a raw value per candidate and
min-max normalized over the candidate set to [0, 1]; when a factor's raw
values are all equal the normalized sub-score is 1.0 for every candidate
(the factor cannot discriminate, so it must not break ties). F_Mig is the
exception: it is already a 0/1 indicator and is used unnormalized.

Because the rule language combines sub-scores with ``+`` and ``-`` only,
the value of any rule tree equals the dot product of its signed presence
vector with the sub-score vectors. ``evaluate_rule`` exploits this
identity rather than walking the tree per candidate; a recursive
reference evaluator ships in the test suite to pin the equivalence.

Raw factor values for a candidate plot x, deciding household h:

* F_Dist: negated distance from h's current farm to x (closer is better).
* F_Dry: negated dryness of x this year (wetter is better).
* F_Qual: soil quality of x.
* F_Yield: last year's potential yield of x (quality times the base
  yield for x's dryness last year; year 0 uses the current year).
* F_Water: number of cells offering water this year within the
  neighborhood radius of x.
* F_Soc: number of other households dwelling within the radius of x.
* F_HAge: negated age gap between h and the mean age of households
  dwelling within the radius of x (0 when there are none).
* F_HAgri: same as F_HAge but over corn stocks.
* F_Mig: 1.0 when x lies in a different zone than h's current farm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ruletree import FACTOR_NAMES, RuleTree, extract_presence
from .world import Household, WorldState

__all__ = [
    "ScoreContext",
    "candidate_plots",
    "factor_raw",
    "normalize_subscores",
    "subscore_matrix",
    "evaluate_rule",
    "choose_plot",
]

# Factors whose raw values skip min-max normalization.
_UNNORMALIZED = frozenset({"F_Mig"})


@dataclass
class ScoreContext:
    """Knobs shared by candidate construction and factor scoring."""

    radius: float = 11.5
    top_k: int = 5
    perf_rank_by: str = "corn_stock"  # or "last_harvest"
    yield_table: tuple[tuple[float, float], ...] = (
        (-4.0, 1000.0),
        (-2.0, 900.0),
        (0.0, 700.0),
        (2.0, 400.0),
        (4.0, 200.0),
    )


def base_yield(dryness, table) -> np.ndarray:
    """Piecewise-linear base yield as a function of dryness (drier is worse)."""
    xs = np.array([p[0] for p in table], dtype=np.float64)
    ys = np.array([p[1] for p in table], dtype=np.float64)
    return np.interp(np.asarray(dryness, dtype=np.float64), xs, ys)


def _pop_arrays(world: WorldState, year_cache: dict | None):
    """Id-aligned arrays (ids, dwelling, age, stock, last_harvest) for all households.

    Cached per ``world.pop_version`` so consecutive decisions against an
    unchanged population reuse them.
    """
    if year_cache is not None:
        entry = year_cache.get("pop")
        if entry is not None and entry[0] == world.pop_version:
            return entry[1:]
    ids_list = world.live_ids()
    members = [world.households[i] for i in ids_list]
    ids = np.array(ids_list, dtype=np.int64)
    dwell = np.array([o.dwelling_cell for o in members], dtype=np.int64)
    age = np.array([o.age for o in members], dtype=np.float64)
    stock = np.array([o.corn_stock for o in members], dtype=np.float64)
    harv = np.array([o.last_harvest for o in members], dtype=np.float64)
    if year_cache is not None:
        year_cache["pop"] = (world.pop_version, ids, dwell, age, stock, harv)
    return ids, dwell, age, stock, harv


def _farm_cells(world: WorldState, year_cache: dict | None) -> np.ndarray:
    """Id-aligned farm cells for all households.

    Keyed on ``world.occ_version`` (not ``pop_version``) because a farm
    relocation changes occupancy without touching the population; any
    membership change bumps both counters, so this stays aligned with the
    arrays from ``_pop_arrays``.
    """
    if year_cache is not None:
        entry = year_cache.get("farms")
        if entry is not None and entry[0] == world.occ_version:
            return entry[1]
    # Invert the cell -> owner map: every live household owns exactly one
    # farm cell, so sorting occupied cells by owner id yields the farm
    # cell of the k-th smallest id at position k.
    occupied = np.flatnonzero(world.farm_owner != -1)
    arr = occupied[np.argsort(world.farm_owner[occupied])]
    if year_cache is not None:
        year_cache["farms"] = (world.occ_version, arr)
    return arr


def _informant_farms(
    rule_social: str,
    h: Household,
    world: WorldState,
    ctx: ScoreContext,
    year_cache: dict | None = None,
) -> np.ndarray:
    """Farm cells anchoring the candidate neighborhoods.

    The deciding household is always one of its own informants. It may not
    be registered in the world yet (a child picking its first plot uses
    its parent's farm and dwelling as reference), so its farm reference is
    added directly.
    """
    if rule_social == "S_Fam":
        ids = set()
        if h.parent_id is not None:
            ids.add(h.parent_id)
            parent = world.households.get(h.parent_id)
            if parent is not None:
                ids.update(parent.children)
        if h.grandparent_id is not None:
            ids.add(h.grandparent_id)
        ids.update(h.children)
        ids.discard(h.id)
        farms = {h.farm_cell}
        farms.update(world.households[i].farm_cell for i in ids if i in world.households)
        return np.array(sorted(farms), dtype=np.int64)
    if rule_social == "S_Neigh":
        ids, dwell, _, _, _ = _pop_arrays(world, year_cache)
        if not ids.size:
            return np.array([h.farm_cell], dtype=np.int64)
        near = world.distance(h.dwelling_cell, dwell) <= ctx.radius
        near &= ids != h.id
        cells = _farm_cells(world, year_cache)[near]
        return np.unique(np.append(cells, h.farm_cell))
    if rule_social == "S_Perf":
        key = ctx.perf_rank_by
        if key not in ("corn_stock", "last_harvest"):
            raise ValueError(f"unknown performance ranking {key!r}")
        ids, _, _, stock, harv = _pop_arrays(world, year_cache)
        if not ids.size:
            return np.array([h.farm_cell], dtype=np.int64)
        attr = stock if key == "corn_stock" else harv
        # Top performers: highest attribute first, ties to the lowest id.
        order = np.lexsort((ids, -attr))[: ctx.top_k]
        cells = _farm_cells(world, year_cache)[order]
        return np.unique(np.append(cells, h.farm_cell))
    raise ValueError(f"unknown social configuration {rule_social!r}")


def _availability(world: WorldState, year_cache: dict | None):
    """Availability mask and free-cell ids, cached per occupancy version.

    Both arrays are shared with later callers on a cache hit; treat them
    as read-only.
    """
    if year_cache is not None:
        entry = year_cache.get("avail")
        if entry is not None and entry[0] == world.occ_version:
            return entry[1], entry[2]
    mask = world.available_mask()
    ids = np.flatnonzero(mask)
    if year_cache is not None:
        year_cache["avail"] = (world.occ_version, mask, ids)
    return mask, ids


def candidate_plots(
    rule_social: str,
    h: Household,
    world: WorldState,
    ctx: ScoreContext,
    year_cache: dict | None = None,
) -> np.ndarray:
    """Sorted cell ids the household may select under the social scope.

    Available means no water body, no farm, and no dwelling. S_All admits
    every available cell; the other scopes restrict to cells within the
    neighborhood radius of an informant household's farm. The deciding
    household is always its own informant, so narrower scopes always keep
    the household's own surroundings in play. Treat the result as
    read-only; it may be shared with later decisions in the same year.
    """
    avail, avail_ids = _availability(world, year_cache)
    if rule_social == "S_All":
        return avail_ids
    farms = _informant_farms(rule_social, h, world, ctx, year_cache)
    if farms.size == 0:
        return np.zeros(0, dtype=np.int64)
    adjacency = world.within_radius_matrix(ctx.radius)
    if adjacency is not None:
        near = adjacency[farms].any(axis=0)
    else:
        dr = world.cell_rowf[:, None] - world.cell_rowf[farms][None, :]
        dc = world.cell_colf[:, None] - world.cell_colf[farms][None, :]
        near = np.min(dr * dr + dc * dc, axis=1) <= ctx.radius * ctx.radius
    return np.flatnonzero(avail & near)


def _water_counts(world: WorldState, ctx: ScoreContext, year: int) -> np.ndarray:
    """Per-cell count of water sources within the radius, for one year."""
    wc = world.water_cell_ids(year)
    counts = np.zeros(world.n_cells, dtype=np.float64)
    if wc.size:
        dr = world.cell_rowf[:, None] - world.cell_rowf[wc][None, :]
        dc = world.cell_colf[:, None] - world.cell_colf[wc][None, :]
        counts[:] = ((dr * dr + dc * dc) <= ctx.radius * ctx.radius).sum(axis=1)
    return counts


def _yield_potential(world: WorldState, ctx: ScoreContext, year: int) -> np.ndarray:
    """Per-cell potential yield using last year's dryness (year 0 uses year 0)."""
    prev = max(year - 1, 0)
    return world.quality * base_yield(world.dryness[prev], ctx.yield_table)


def _within_all(
    world: WorldState, ctx: ScoreContext, year_cache: dict | None, dwell: np.ndarray
) -> np.ndarray | None:
    """(n_cells, n_households) within-radius table for the current dwellings.

    Cached per ``world.pop_version`` — exactly the epoch of the ``dwell``
    array it is built from. None when the grid is too large for the
    adjacency table. Treat as read-only.
    """
    if year_cache is not None:
        entry = year_cache.get("within_all")
        if entry is not None and entry[0] == world.pop_version:
            return entry[1]
    adjacency = world.within_radius_matrix(ctx.radius)
    if adjacency is None:
        return None
    table = adjacency[:, dwell]
    if year_cache is not None:
        year_cache["within_all"] = (world.pop_version, table)
    return table


def _social_counts(
    cands: np.ndarray,
    h: Household,
    world: WorldState,
    ctx: ScoreContext,
    year_cache: dict | None,
) -> np.ndarray | None:
    """Per-candidate neighbor counts without materializing the decision mask.

    Integer arithmetic only — the total count per cell minus the deciding
    household's own contribution equals the masked row sum exactly — so
    the result is identical to summing ``_neighbor_stats``'s mask.
    """
    ids, dwell, _, _, _ = _pop_arrays(world, year_cache)
    keep = ids != h.id
    if not keep.any():
        return np.zeros(len(cands), dtype=np.float64)
    table = _within_all(world, ctx, year_cache, dwell)
    if table is None:
        return None
    if year_cache is not None:
        entry = year_cache.get("within_counts")
        if entry is not None and entry[0] == world.pop_version:
            totals = entry[1]
        else:
            totals = table.sum(axis=1)
            year_cache["within_counts"] = (world.pop_version, totals)
    else:
        totals = table.sum(axis=1)
    counts = totals[cands]
    if not keep.all():
        decider = int(np.flatnonzero(~keep)[0])
        counts = counts - table[cands, decider]
    return counts.astype(np.float64)


def _neighbor_stats(
    cands: np.ndarray,
    h: Household,
    world: WorldState,
    ctx: ScoreContext,
    scratch: dict,
    year_cache: dict | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Within-radius dwelling mask and neighbor attributes, shared per decision.

    The mask covers every household except the deciding one (its column is
    cleared), so the three neighbor factors see identical neighborhoods.
    """
    if "neighbors" in scratch:
        return scratch["neighbors"]
    ids, dwell, ages, stocks, _ = _pop_arrays(world, year_cache)
    keep = ids != h.id
    if not keep.any():
        scratch["neighbors"] = None
        return None
    table = _within_all(world, ctx, year_cache, dwell)
    if table is not None:
        within = table[cands]
    else:
        dr = world.cell_rowf[cands][:, None] - world.cell_rowf[dwell][None, :]
        dc = world.cell_colf[cands][:, None] - world.cell_colf[dwell][None, :]
        within = (dr * dr + dc * dc) <= ctx.radius * ctx.radius
    if not keep.all():
        within[:, ~keep] = False
    scratch["neighbors"] = (within, ages, stocks)
    return scratch["neighbors"]


def factor_raw(
    name: str,
    cands: np.ndarray,
    h: Household,
    world: WorldState,
    ctx: ScoreContext,
    year_cache: dict | None = None,
    scratch: dict | None = None,
) -> np.ndarray:
    """Raw (pre-normalization) factor values for each candidate plot.

    ``year_cache`` (owned by the caller, valid for one simulated year)
    memoizes per-cell vectors that do not depend on the deciding
    household; ``scratch`` memoizes per-decision intermediates shared by
    the three neighbor-based factors.
    """
    year = world.year
    if scratch is None:
        scratch = {}
    if name == "F_Dist":
        return -world.distance(h.farm_cell, cands)
    if name == "F_Dry":
        return -world.dryness[year, cands]
    if name == "F_Qual":
        return world.quality[cands]
    if name == "F_Yield":
        if year_cache is not None:
            if "yield" not in year_cache:
                year_cache["yield"] = _yield_potential(world, ctx, year)
            return year_cache["yield"][cands]
        return _yield_potential(world, ctx, year)[cands]
    if name == "F_Water":
        if year_cache is not None:
            if "water_counts" not in year_cache:
                year_cache["water_counts"] = _water_counts(world, ctx, year)
            return year_cache["water_counts"][cands]
        return _water_counts(world, ctx, year)[cands]
    if name in ("F_Soc", "F_HAge", "F_HAgri"):
        if name == "F_Soc" and scratch.get("counts_only") and "neighbors" not in scratch:
            fast = _social_counts(cands, h, world, ctx, year_cache)
            if fast is not None:
                return fast
        stats = _neighbor_stats(cands, h, world, ctx, scratch, year_cache)
        if stats is None:
            return np.zeros(len(cands), dtype=np.float64)
        within, ages, stocks = stats
        counts = scratch.get("neighbor_counts")
        if counts is None:
            counts = within.sum(axis=1)
            scratch["neighbor_counts"] = counts
        if name == "F_Soc":
            return counts.astype(np.float64)
        attr = ages if name == "F_HAge" else stocks
        own = h.age if name == "F_HAge" else h.corn_stock
        # Pairwise row reduction rather than a BLAS dot: the result must not
        # depend on which BLAS numpy was built against, or reruns on another
        # machine could break ties differently and diverge.
        sums = np.add.reduce(np.where(within, attr, 0.0), axis=1)
        out = np.zeros(len(cands), dtype=np.float64)
        has = counts > 0
        out[has] = -np.abs(own - sums[has] / counts[has])
        return out
    if name == "F_Mig":
        return (world.zone[cands] != world.zone[h.farm_cell]).astype(np.float64)
    raise ValueError(f"unknown factor {name!r}")


def normalize_subscores(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize raw values over the candidate set.

    A degenerate range (all values equal) maps every candidate to 1.0.
    """
    raw = np.asarray(raw, dtype=np.float64)
    lo = raw.min()
    hi = raw.max()
    if hi == lo:
        return np.ones_like(raw)
    return (raw - lo) / (hi - lo)


def _normalize_inplace(raw: np.ndarray) -> np.ndarray:
    """``normalize_subscores`` for a float64 array whose storage we own."""
    lo = raw.min()
    hi = raw.max()
    if hi == lo:
        raw.fill(1.0)
        return raw
    raw -= lo
    raw /= hi - lo
    return raw


def subscore_matrix(
    cands: np.ndarray,
    h: Household,
    world: WorldState,
    ctx: ScoreContext,
    names=FACTOR_NAMES,
) -> dict[str, np.ndarray]:
    """Normalized sub-score vector per factor name."""
    out = {}
    scratch: dict = {}
    for name in names:
        raw = factor_raw(name, cands, h, world, ctx, None, scratch)
        out[name] = raw if name in _UNNORMALIZED else normalize_subscores(raw)
    return out


def evaluate_rule(
    rule: RuleTree,
    h: Household,
    world: WorldState,
    ctx: ScoreContext,
    presence: dict[str, int] | None = None,
    year_cache: dict | None = None,
) -> int | None:
    """Plot chosen by ``rule`` for household ``h``, or None when no candidate exists.

    Scores every candidate with the rule's presence-weighted sub-score sum
    and returns the argmax; ties go to the lowest cell id (np.argmax keeps
    the first maximum over the id-sorted candidate array). A rule whose
    factors cancel scores all candidates 0 and therefore picks the lowest
    available id in scope. Callers evaluating the same rule many times may
    pass its presence vector to skip re-extraction, and callers issuing
    many decisions within one simulated year may share a ``year_cache``.
    """
    cands = candidate_plots(rule.social, h, world, ctx, year_cache)
    if cands.size == 0:
        return None
    if presence is None:
        presence = extract_presence(rule)
    active = [(name, presence[name]) for name in FACTOR_NAMES if presence[name] != 0]
    if not active:
        # All factors cancel: every candidate scores 0, argmax keeps the first.
        return int(cands[0])
    scratch: dict = {}
    if len(active) == 1:
        # One factor decides alone. Min-max normalization is strictly
        # monotone (and maps a degenerate range to all-equal scores), so
        # the coefficient's sign alone fixes the selection — including the
        # first-maximum tie-break that argmax applies either way.
        name, c = active[0]
        raw = factor_raw(name, cands, h, world, ctx, year_cache, scratch)
        pick = np.argmax(raw) if c > 0 else np.argmin(raw)
        return int(cands[int(pick)])
    if not (presence["F_HAge"] or presence["F_HAgri"]):
        # Lets F_Soc take its counts-only path, skipping the decision mask.
        scratch["counts_only"] = True
    total = np.zeros(len(cands), dtype=np.float64)
    for name, c in active:
        # Every factor_raw branch returns a freshly allocated array, so the
        # normalization and coefficient scaling may reuse its storage.
        raw = factor_raw(name, cands, h, world, ctx, year_cache, scratch)
        sub = raw if name in _UNNORMALIZED else _normalize_inplace(raw)
        if c != 1:
            sub *= float(c)
        total += sub
    return int(cands[int(np.argmax(total))])


def choose_plot(
    rule: RuleTree, h: Household, world: WorldState, ctx: ScoreContext
) -> int | None:
    """Alias of ``evaluate_rule`` under the name used by the simulation."""
    return evaluate_rule(rule, h, world, ctx)
