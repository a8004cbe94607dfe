"""Reading, writing, and generating valley maps and target series.

Both file formats are plain CSV with a ``#format:v1`` first line. The map
file carries one row per cell with static attributes followed by the full
per-year dryness and water columns; the history file carries one
(calendar year, household count) row per simulated year. Writers emit
deterministic bytes for identical inputs, and loaders validate enough to
reject truncated or inconsistent files with positioned error messages.
"""

from __future__ import annotations

import numpy as np

from .seeding import derive_seed
from .world import HistoricalSeries, N_YEARS, SimParams, WorldState

__all__ = [
    "MapFormatError",
    "FORMAT_LINE",
    "map_columns",
    "write_map",
    "write_history",
    "load_map",
    "load_history",
    "generate_world",
    "gen_synthetic_map",
]

FORMAT_LINE = "#format:v1"


class MapFormatError(ValueError):
    """Raised for malformed or inconsistent map/history files."""


def map_columns() -> list[str]:
    cols = ["id", "row", "col", "zone", "quality", "is_water_body"]
    cols += [f"dry_{t}" for t in range(N_YEARS)]
    cols += [f"water_{t}" for t in range(N_YEARS)]
    return cols


def write_map(path, world: WorldState) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(FORMAT_LINE + "\n")
        f.write(",".join(map_columns()) + "\n")
        for i in range(world.n_cells):
            fields = [
                str(i),
                str(int(world.cell_row[i])),
                str(int(world.cell_col[i])),
                str(int(world.zone[i])),
                f"{world.quality[i]:.6f}",
                str(int(world.is_water_body[i])),
            ]
            fields += [f"{v:.4f}" for v in world.dryness[:, i]]
            fields += [str(int(v)) for v in world.water[:, i]]
            f.write(",".join(fields) + "\n")


def write_history(path, series: HistoricalSeries) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(FORMAT_LINE + "\n")
        f.write("year,count\n")
        for t in range(N_YEARS):
            f.write(f"{series.start_year + t},{int(series.counts[t])}\n")


def _read_lines(path) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read().splitlines()
    except OSError as e:
        raise MapFormatError(f"{path}: cannot read file: {e}") from e


def _check_format_line(path, lines: list[str]) -> None:
    if not lines or lines[0].strip() != FORMAT_LINE:
        found = lines[0].strip() if lines else "<empty file>"
        raise MapFormatError(f"{path}:1: expected format line {FORMAT_LINE!r}, found {found!r}")


def load_history(path) -> HistoricalSeries:
    lines = _read_lines(path)
    _check_format_line(path, lines)
    if len(lines) < 2 or lines[1].strip() != "year,count":
        raise MapFormatError(f"{path}:2: expected header 'year,count'")
    rows = [ln for ln in lines[2:] if ln.strip()]
    if len(rows) != N_YEARS:
        raise MapFormatError(f"{path}: expected {N_YEARS} data rows, found {len(rows)}")
    counts = np.zeros(N_YEARS, dtype=np.int64)
    start_year = None
    for k, ln in enumerate(rows):
        lineno = k + 3
        parts = ln.split(",")
        if len(parts) != 2:
            raise MapFormatError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
        try:
            year, count = int(parts[0]), int(parts[1])
        except ValueError:
            raise MapFormatError(f"{path}:{lineno}: year and count must be integers") from None
        if start_year is None:
            start_year = year
        elif year != start_year + k:
            raise MapFormatError(f"{path}:{lineno}: years must be contiguous, expected {start_year + k}")
        if count < 0:
            raise MapFormatError(f"{path}:{lineno}: count must be non-negative")
        counts[k] = count
    return HistoricalSeries(counts, start_year=int(start_year))


def _load_map_only(path) -> WorldState:
    lines = _read_lines(path)
    _check_format_line(path, lines)
    expected_cols = map_columns()
    if len(lines) < 2 or lines[1].split(",") != expected_cols:
        raise MapFormatError(f"{path}:2: column header does not match the v1 map schema")
    rows = [ln for ln in lines[2:] if ln.strip()]
    n = len(rows)
    if n == 0:
        raise MapFormatError(f"{path}: map has no cells")

    raw = np.empty((n, len(expected_cols)), dtype=np.float64)
    for k, ln in enumerate(rows):
        lineno = k + 3
        parts = ln.split(",")
        if len(parts) != len(expected_cols):
            raise MapFormatError(
                f"{path}:{lineno}: expected {len(expected_cols)} fields, got {len(parts)}"
            )
        try:
            raw[k] = [float(p) for p in parts]
        except ValueError:
            raise MapFormatError(f"{path}:{lineno}: non-numeric field") from None

    ids = raw[:, 0].astype(np.int64)
    rr = raw[:, 1].astype(np.int64)
    cc = raw[:, 2].astype(np.int64)
    if sorted(ids.tolist()) != list(range(n)):
        raise MapFormatError(f"{path}: cell ids must cover 0..{n - 1} exactly once")
    order = np.argsort(ids)
    raw, rr, cc = raw[order], rr[order], cc[order]

    n_rows = int(rr.max()) + 1
    n_cols = int(cc.max()) + 1
    if n_rows * n_cols != n:
        raise MapFormatError(f"{path}: grid is not rectangular ({n_rows}x{n_cols} vs {n} cells)")
    if np.any(rr < 0) or np.any(cc < 0):
        raise MapFormatError(f"{path}: negative cell coordinates")
    if not np.array_equal(rr * n_cols + cc, np.arange(n)):
        raise MapFormatError(f"{path}: cell ids must equal row*cols+col")

    zone = raw[:, 3].astype(np.int64)
    quality = raw[:, 4]
    water_body = raw[:, 5]
    if not np.all(np.isin(water_body, (0.0, 1.0))):
        raise MapFormatError(f"{path}: is_water_body must be 0 or 1")
    if np.any(quality < 0.0) or np.any(quality > 1.0):
        raise MapFormatError(f"{path}: quality must lie in [0, 1]")
    dryness = raw[:, 6 : 6 + N_YEARS].T.copy()
    water = raw[:, 6 + N_YEARS :].T
    if not np.all(np.isin(water, (0.0, 1.0))):
        raise MapFormatError(f"{path}: water flags must be 0 or 1")

    try:
        return WorldState(
            rows=n_rows,
            cols=n_cols,
            zone=zone,
            quality=quality,
            is_water_body=water_body.astype(bool),
            dryness=dryness,
            water=water.astype(bool),
        )
    except ValueError as e:
        raise MapFormatError(f"{path}: {e}") from e


def load_map(map_path, history_path) -> tuple[WorldState, HistoricalSeries]:
    """Load a map/history pair and align their calendar."""
    world = _load_map_only(map_path)
    history = load_history(history_path)
    world.start_year = history.start_year
    return world, history


def generate_world(seed: int, rows: int, cols: int, zones: int) -> WorldState:
    """Build a synthetic valley with zoned climate and scattered water.

    Soil quality follows a north-south gradient with local noise. Zones
    are column bands sharing a dryness regime: an AR(1) series with two
    slow cycles, plus a static per-cell offset. Every zone gets at least
    one permanent water body; springs come and go in multi-decade epochs.
    """
    n = rows * cols
    if n < 4:
        raise ValueError("grid needs at least 4 cells")
    if not 1 <= zones <= cols:
        raise ValueError("zones must lie in [1, cols]")
    rng = np.random.default_rng(derive_seed(seed, "map"))

    ids = np.arange(n)
    cell_row = ids // cols
    cell_col = ids % cols
    zone = (cell_col * zones) // cols

    row_frac = cell_row / max(rows - 1, 1)
    quality = np.clip(0.2 + 0.6 * row_frac + rng.normal(0.0, 0.12, n), 0.01, 1.0)

    t = np.arange(N_YEARS)
    dryness = np.zeros((N_YEARS, n))
    for z in range(zones):
        drift = np.zeros(N_YEARS)
        x = 0.0
        steps = rng.normal(0.0, 0.55, N_YEARS)
        for k in range(N_YEARS):
            x = 0.85 * x + steps[k]
            drift[k] = x
        phase1, phase2 = rng.uniform(0.0, 1.0, 2)
        cycles = 1.6 * np.sin(2 * np.pi * (t / 137.0 + phase1)) + 0.8 * np.sin(
            2 * np.pi * (t / 53.0 + phase2)
        )
        members = np.flatnonzero(zone == z)
        offsets = rng.normal(0.0, 0.35, members.size)
        dryness[:, members] = np.clip(
            (drift * 0.8 + cycles)[:, None] + offsets[None, :], -4.0, 4.0
        )

    is_water_body = np.zeros(n, dtype=bool)
    water = np.zeros((N_YEARS, n), dtype=bool)
    for z in range(zones):
        members = np.flatnonzero(zone == z)
        n_bodies = max(1, members.size // 60)
        picks = rng.choice(members, size=min(n_bodies + 2, members.size), replace=False)
        bodies, springs = picks[:n_bodies], picks[n_bodies:]
        is_water_body[bodies] = True
        water[:, bodies] = True
        for s in springs:
            state = bool(rng.integers(2))
            k = 0
            while k < N_YEARS:
                span = int(rng.integers(20, 81))
                water[k : k + span, s] = state
                state = not state
                k += span

    return WorldState(
        rows=rows,
        cols=cols,
        zone=zone,
        quality=quality,
        is_water_body=is_water_body,
        dryness=dryness,
        water=water,
    )


def gen_synthetic_map(
    seed: int,
    rows: int,
    cols: int,
    zones: int,
    map_path,
    history_path,
    start_year: int = 800,
) -> tuple[WorldState, HistoricalSeries]:
    """Generate a map and a matching target series, then write both.

    The target series is a baseline simulation on the generated map:
    midpoint parameters and the nearest-plot rule, seeded from ``seed``.
    The same seed always produces byte-identical files.
    """
    from .engine import SimConfig, simulate
    from .ruletree import BASELINE_RULE_TEXT, parse_rule

    world = generate_world(seed, rows, cols, zones)
    world.start_year = start_year
    counts = simulate(
        world,
        SimParams.midpoint(),
        parse_rule(BASELINE_RULE_TEXT),
        derive_seed(seed, "history"),
        SimConfig(),
    )
    history = HistoricalSeries(counts, start_year=start_year)
    write_map(map_path, world)
    write_history(history_path, history)
    return world, history
