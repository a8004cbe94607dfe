"""The factor-scores CSV: one row per evaluated rule.

Layout (after a ``#schema:v1`` line and a header row)::

    run,generation,social,F_Dist,...,F_Mig,rmse,rule,sim_seed,param_seed

with the nine presence columns in canonical factor order. The presence
columns are redundant with ``rule`` by construction, and the reader
enforces that (a row whose presence disagrees with its own rule text is
data corruption, not a judgment call).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .forest import Dataset
from .ruletree import FACTOR_NAMES, SOCIAL_CONFIGS, extract_presence, parse_rule

__all__ = [
    "SCHEMA_LINE",
    "CSV_COLUMNS",
    "PresenceRecord",
    "record_from_fields",
    "format_fields",
    "write_records",
    "read_records",
    "to_dataset",
]

SCHEMA_LINE = "#schema:v1"
CSV_COLUMNS = ("run", "generation", "social", *FACTOR_NAMES,
               "rmse", "rule", "sim_seed", "param_seed")


@dataclass(frozen=True)
class PresenceRecord:
    """One evaluated rule: identity, presence vector, fitness, seeds."""

    run_id: int
    generation: int
    social: str
    presence: dict[str, int]
    rmse: float
    rule_text: str
    sim_seed: int
    param_seed: int


def format_fields(rec) -> list[str]:
    """CSV field strings for one record (``PresenceRecord`` or any object
    with the same attributes, e.g. ``gp.EvaluatedIndividual``)."""
    rmse = getattr(rec, "rmse", None)
    if rmse is None:
        rmse = rec.fitness
    return [
        str(rec.run_id),
        str(rec.generation),
        rec.social,
        *(str(int(rec.presence[name])) for name in FACTOR_NAMES),
        repr(float(rmse)),
        rec.rule_text,
        str(rec.sim_seed),
        str(rec.param_seed),
    ]


def record_from_fields(fields: list[str], where: str) -> PresenceRecord:
    """Parse and validate one CSV row (``where`` names it in errors)."""
    if len(fields) != len(CSV_COLUMNS):
        raise ValueError(
            f"{where}: expected {len(CSV_COLUMNS)} fields, got {len(fields)}"
        )
    try:
        run_id = int(fields[0])
        generation = int(fields[1])
        social = fields[2]
        presence = {
            name: int(fields[3 + i]) for i, name in enumerate(FACTOR_NAMES)
        }
        rmse = float(fields[3 + len(FACTOR_NAMES)])
        rule_text = fields[4 + len(FACTOR_NAMES)]
        sim_seed = int(fields[5 + len(FACTOR_NAMES)])
        param_seed = int(fields[6 + len(FACTOR_NAMES)])
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None
    if run_id < 0 or generation < 0:
        raise ValueError(f"{where}: run and generation must be non-negative")
    if social not in SOCIAL_CONFIGS:
        raise ValueError(f"{where}: unknown social config {social!r}")
    if not math.isfinite(rmse) or rmse < 0:
        raise ValueError(f"{where}: rmse must be finite and non-negative, got {rmse}")
    rule = parse_rule(rule_text)
    if rule.social != social:
        raise ValueError(
            f"{where}: social column {social} disagrees with rule text"
        )
    derived = extract_presence(rule)
    if derived != presence:
        raise ValueError(
            f"{where}: presence columns disagree with rule text "
            f"(columns {presence}, rule gives {derived})"
        )
    return PresenceRecord(
        run_id, generation, social, presence, rmse, rule_text, sim_seed, param_seed
    )


def write_records(path, records, append: bool = False) -> int:
    """Write (or append) records; returns the number of rows written."""
    mode = "a" if append else "w"
    n = 0
    with open(path, mode, newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if not append or f.tell() == 0:
            f.write(SCHEMA_LINE + "\n")
            writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(format_fields(rec))
            n += 1
    return n


def read_records(path) -> list[PresenceRecord]:
    """Read and fully validate a factor-scores CSV."""
    with open(path, newline="") as f:
        first = f.readline().rstrip("\n")
        if first != SCHEMA_LINE:
            raise ValueError(f"{path}:1: expected {SCHEMA_LINE!r}, got {first!r}")
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}:2: missing header row") from None
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(
                f"{path}:2: header {header} does not match {list(CSV_COLUMNS)}"
            )
        out = []
        for i, fields in enumerate(reader, start=3):
            if not fields:
                continue
            out.append(record_from_fields(fields, f"{path}:{i}"))
    return out


def records_to_text(records) -> str:
    """The exact CSV bytes (as text) for a full record list."""
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow(format_fields(rec))
    return buf.getvalue()


def to_dataset(records: list[PresenceRecord], social: str | None = "S_All") -> Dataset:
    """Presence matrix and RMSE vector for analysis, filtered to one
    social config (pass ``None`` to keep every row)."""
    if social is not None and social not in SOCIAL_CONFIGS:
        raise ValueError(f"unknown social config {social!r}")
    rows = [r for r in records if social is None or r.social == social]
    if not rows:
        raise ValueError(
            f"no records with social={social!r} to analyze" if social is not None
            else "no records to analyze"
        )
    X = np.array(
        [[r.presence[name] for name in FACTOR_NAMES] for r in rows],
        dtype=np.float64,
    )
    y = np.array([r.rmse for r in rows], dtype=np.float64)
    return Dataset(X, y, FACTOR_NAMES)
