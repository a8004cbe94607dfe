"""Shared fixtures: a small deterministic world and its target series.

Session-scoped templates are never mutated directly; simulations copy them
via ``fresh_copy`` and tests that need populated worlds build their own
copies.
"""

import numpy as np
import pytest

from farmrules.engine import SimConfig, simulate
from farmrules.mapio import generate_world
from farmrules.ruletree import BASELINE_RULE_TEXT, parse_rule
from farmrules.seeding import derive_seed
from farmrules.world import HistoricalSeries, SimParams


@pytest.fixture(scope="session")
def tiny_world():
    """12x12 grid with 3 drought zones, fixed seed."""
    return generate_world(3, 12, 12, 3)


@pytest.fixture(scope="session")
def tiny_history(tiny_world):
    """Baseline-rule simulation on the tiny world, used as the target series."""
    counts = simulate(
        tiny_world,
        SimParams.midpoint(),
        parse_rule(BASELINE_RULE_TEXT),
        derive_seed(3, "history"),
        SimConfig(),
    )
    return HistoricalSeries(counts, start_year=tiny_world.start_year)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
