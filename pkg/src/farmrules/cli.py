"""Command-line workbench.

Subcommands
-----------
``gen-map``
    Write a synthetic valley map and a matching target household series.
``evolve``
    Run the full search campaign: several independent runs, every
    evaluated rule appended to ``FactorScores.csv``, per-generation
    checkpoints, per-run best rules.
``analyze``
    Turn a factor-scores CSV into report tables: social-config tests,
    presence-vs-error distributions, forest importances, pairwise
    importance and presence-level test matrices, joint contributions.
``compare``
    Re-simulate named rules many times under freshly sampled parameters
    and test each against the first (baseline) rule.
``simulate``
    Run one rule once per seed and write the year-by-year counts.

Every command writes a ``manifest.json`` capturing the exact inputs,
seeds, config hash, and output digests — and nothing execution-specific,
so reruns (any worker count, interrupted or not) produce byte-identical
artifacts.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import ConfigError, ExperimentConfig
from .engine import SimConfig, run_simulation, simulate
from .forest import fit_forest
from .gp import EvalTask, GpCheckpoint, evaluate_task, evolve, serial_eval_batch
from .importance import (
    OTHER_KEY,
    gini_importance,
    joint_contributions,
    permutation_importance,
)
from .mapio import gen_synthetic_map, load_map
from .records import (
    CSV_COLUMNS,
    SCHEMA_LINE,
    format_fields,
    read_records,
    to_dataset,
)
from .ruletree import FACTOR_NAMES, SOCIAL_CONFIGS, parse_rule
from .seeding import derive_seed
from .stats import mann_whitney_one_tailed, rmse
from .world import SimParams, sample_params

__all__ = ["main"]

WORKERS_ENV = "FARMRULES_WORKERS"
MIN_PRESENCE_OCCURRENCES = 200
SIGNIFICANCE_ALPHA = 0.05
TOP_FACTORS_FOR_PRESENCE_TESTS = 5


# ---------------------------------------------------------------------------
# small shared helpers


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _csv_text(header: tuple[str, ...], rows) -> str:
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _write_report(path, header: tuple[str, ...], rows) -> None:
    with open(path, "w", newline="") as f:
        f.write(_csv_text(header, rows))


def _write_manifest(out_dir, command: str, *, config: ExperimentConfig | None,
                    inputs: dict, outputs: list, extra: dict) -> str:
    doc = {
        "schema": "v1",
        "command": command,
        "inputs": {
            role: {"path": path, "sha256": _sha256_file(path)}
            for role, path in sorted(inputs.items())
        },
        "outputs": {
            os.path.basename(p): _sha256_file(p) for p in sorted(outputs)
        },
        **extra,
    }
    if config is not None:
        doc["config_hash"] = config.config_hash()
        doc["config"] = config.to_text()
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")
    return path


def _resolve_workers(flag_value: int | None, cfg: ExperimentConfig | None) -> int:
    if flag_value is not None:
        n = flag_value
    elif os.environ.get(WORKERS_ENV):
        try:
            n = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise ConfigError(
                f"{WORKERS_ENV} must be an integer, got {os.environ[WORKERS_ENV]!r}"
            ) from None
    elif cfg is not None:
        n = cfg.workers
    else:
        n = 1
    if n < 1:
        raise ConfigError(f"worker count must be >= 1, got {n}")
    return n


def _load_experiment(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_updates(seed=args.seed)
    if getattr(args, "runs", None) is not None:
        cfg = cfg.with_updates(runs=args.runs)
    return cfg


# ---------------------------------------------------------------------------
# worker-pool evaluation (results always reduced in task order)

_POOL_STATE: dict = {}


def _pool_init(map_path, history_path, ranges, sim_cfg, replicates) -> None:
    from .mapio import load_map as _lm

    world, history = _lm(map_path, history_path)
    _POOL_STATE["world"] = world
    _POOL_STATE["history"] = history
    _POOL_STATE["ranges"] = ranges
    _POOL_STATE["sim_cfg"] = sim_cfg
    _POOL_STATE["replicates"] = replicates


def _pool_eval_task(task: EvalTask):
    return evaluate_task(
        task,
        _POOL_STATE["world"],
        _POOL_STATE["history"],
        _POOL_STATE["ranges"],
        _POOL_STATE["sim_cfg"],
        _POOL_STATE["replicates"],
    )


def _pool_run_rule(payload):
    rule_text, params, sim_seed = payload
    result = run_simulation(
        _POOL_STATE["world"],
        _POOL_STATE["history"],
        params,
        parse_rule(rule_text),
        sim_seed,
        _POOL_STATE["sim_cfg"],
    )
    return result.error


class _Evaluator:
    """Dispatches evaluation batches serially or over a process pool;
    either way, results come back in task order."""

    def __init__(self, cfg: ExperimentConfig, workers: int, world, history):
        self.world = world
        self.history = history
        self.ranges = cfg.param_ranges
        self.sim_cfg = cfg.sim_config()
        self.replicates = cfg.replicates
        self._serial = serial_eval_batch(
            world, history, self.ranges, self.sim_cfg, self.replicates
        )
        self._pool = None
        if workers > 1:
            self._pool = ProcessPoolExecutor(
                max_workers=workers,
                initializer=_pool_init,
                initargs=(
                    cfg.map_path,
                    cfg.history_path,
                    self.ranges,
                    self.sim_cfg,
                    self.replicates,
                ),
            )

    def eval_batch(self, tasks):
        if self._pool is None:
            return self._serial(tasks)
        return list(self._pool.map(_pool_eval_task, tasks, chunksize=1))

    def run_rules(self, payloads):
        if self._pool is None:
            out = []
            for rule_text, params, sim_seed in payloads:
                result = run_simulation(
                    self.world, self.history, params,
                    parse_rule(rule_text), sim_seed, self.sim_cfg,
                )
                out.append(result.error)
            return out
        return list(self._pool.map(_pool_run_rule, payloads, chunksize=1))

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


# ---------------------------------------------------------------------------
# gen-map


def cmd_gen_map(args) -> int:
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    map_path = os.path.join(out_dir, "map.csv")
    history_path = os.path.join(out_dir, "history.csv")
    gen_synthetic_map(args.seed, args.rows, args.cols, args.zones,
                      map_path, history_path)
    _write_manifest(
        out_dir,
        "gen-map",
        config=None,
        inputs={},
        outputs=[map_path, history_path],
        extra={
            "seed": args.seed,
            "rows": args.rows,
            "cols": args.cols,
            "zones": args.zones,
        },
    )
    print(f"wrote {map_path} and {history_path}")
    return 0


# ---------------------------------------------------------------------------
# evolve


def _checkpoint_path(out_dir, run_id: int) -> str:
    return os.path.join(out_dir, "checkpoints", f"run_{run_id}.json")


def _save_checkpoint(out_dir, run_id: int, ckpt: GpCheckpoint, csv_offset: int) -> None:
    path = _checkpoint_path(out_dir, run_id)
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(
            {"schema": "v1", "csv_offset": csv_offset,
             "state": json.loads(ckpt.to_json())},
            f, sort_keys=True,
        )
        f.write("\n")
    os.replace(tmp, path)


def _load_checkpoint(out_dir, run_id: int):
    path = _checkpoint_path(out_dir, run_id)
    if not os.path.exists(path):
        return None
    with open(path) as f:
        doc = json.load(f)
    return int(doc["csv_offset"]), GpCheckpoint.from_json(json.dumps(doc["state"]))


def _generation_csv_chunk(individuals) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for ind in individuals:
        writer.writerow(format_fields(ind))
    return buf.getvalue().encode()


def cmd_evolve(args) -> int:
    cfg = _load_experiment(args)
    workers = _resolve_workers(args.workers, cfg)
    out_dir = args.out_dir
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    csv_path = os.path.join(out_dir, "FactorScores.csv")

    world, history = load_map(cfg.map_path, cfg.history_path)
    gp_cfg = cfg.gp_config()

    # Where to pick up: the first run whose checkpoint is missing or not at
    # the final generation. The stored byte offset marks the end of that
    # run's last fully written generation, so truncating there discards
    # any torn rows from an interrupted write.
    header = (SCHEMA_LINE + "\n" + ",".join(CSV_COLUMNS) + "\n").encode()
    start_run = 0
    resume_ckpt = None
    truncate_to = len(header)
    if os.path.exists(csv_path):
        for run_id in range(gp_cfg.runs):
            found = _load_checkpoint(out_dir, run_id)
            if found is None:
                break
            offset, ckpt = found
            if ckpt.generation < gp_cfg.generations - 1:
                resume_ckpt = ckpt
                truncate_to = offset
                start_run = run_id
                break
            truncate_to = offset
            start_run = run_id + 1

    evaluator = _Evaluator(cfg, workers, world, history)
    try:
        if start_run == 0 and resume_ckpt is None:
            f = open(csv_path, "wb")
            f.write(header)
        else:
            f = open(csv_path, "r+b")
            f.truncate(truncate_to)
            f.seek(truncate_to)
            print(f"resuming at run {start_run}")
        with f:
            for run_id in range(start_run, gp_cfg.runs):
                resume = resume_ckpt if run_id == start_run else None
                last_best = None
                for gen in evolve(
                    gp_cfg,
                    world,
                    history,
                    ranges=cfg.param_ranges,
                    sim_cfg=cfg.sim_config(),
                    run_id=run_id,
                    eval_batch=evaluator.eval_batch,
                    resume=resume,
                ):
                    f.write(_generation_csv_chunk(gen.individuals))
                    f.flush()
                    _save_checkpoint(out_dir, run_id, gen.checkpoint, f.tell())
                    last_best = gen.best
                print(
                    f"run {run_id}: best rmse={last_best.fitness!r} "
                    f"rule={last_best.rule_text}"
                )
    finally:
        evaluator.close()

    # Per-run best lines, recomputed from the CSV so a resumed campaign
    # reports identically to an uninterrupted one.
    all_records = read_records(csv_path)
    best_path = os.path.join(out_dir, "best_rules.txt")
    with open(best_path, "w") as bf:
        bf.write(SCHEMA_LINE + "\n")
        for run_id in range(gp_cfg.runs):
            rows = [r for r in all_records if r.run_id == run_id]
            best = min(rows, key=lambda r: (r.rmse, r.generation))
            bf.write(f"run {run_id}: rmse={best.rmse!r} rule={best.rule_text}\n")

    _write_manifest(
        out_dir,
        "evolve",
        config=cfg,
        inputs={"map": cfg.map_path, "history": cfg.history_path},
        outputs=[csv_path, best_path],
        extra={"seed": cfg.seed, "runs": gp_cfg.runs,
               "generations": gp_cfg.generations,
               "population_size": gp_cfg.population_size,
               "rows_written": len(all_records)},
    )
    return 0


# ---------------------------------------------------------------------------
# analyze


def _test_row(label_a, label_b, a, b, alternative):
    res = mann_whitney_one_tailed(a, b, alternative=alternative)
    return [
        label_a, label_b, str(res.n_a), str(res.n_b),
        repr(float(res.u_statistic)), repr(float(res.p_value)), res.method,
        str(res.p_value < SIGNIFICANCE_ALPHA).lower(),
    ]


def cmd_analyze(args) -> int:
    cfg = _load_experiment(args)
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    csv_path = args.csv

    records = read_records(csv_path)

    # (a) error comparison across social-connectivity configurations
    groups = {
        s: np.array([r.rmse for r in records if r.social == s])
        for s in SOCIAL_CONFIGS
    }
    social_rows = []
    for a in SOCIAL_CONFIGS:
        for b in SOCIAL_CONFIGS:
            if a == b or len(groups[a]) == 0 or len(groups[b]) == 0:
                continue
            social_rows.append(_test_row(a, b, groups[a], groups[b], "less"))
    social_path = os.path.join(out_dir, "social_tests.csv")
    _write_report(
        social_path,
        ("group_a", "group_b", "n_a", "n_b", "u_statistic", "p_value",
         "method", "significant"),
        social_rows,
    )

    # Analysis set: rules evaluated under the all-plots configuration.
    data = to_dataset(records, "S_All")
    min_rows = cfg.forest_min_samples_leaf * 10
    if data.n_rows < min_rows:
        raise ConfigError(
            f"need at least {min_rows} S_All rows to train "
            f"(min_samples_leaf={cfg.forest_min_samples_leaf} x 10), got {data.n_rows}"
        )

    # (b) error distributions per factor presence value, common values only
    presence_rows = []
    for j, name in enumerate(FACTOR_NAMES):
        col = data.X[:, j]
        for v in np.unique(col):
            mask = col == v
            count = int(mask.sum())
            if count < MIN_PRESENCE_OCCURRENCES:
                continue
            vals = data.y[mask]
            presence_rows.append([
                name, str(int(v)), str(count),
                repr(float(np.mean(vals))), repr(float(np.std(vals))),
                repr(float(np.median(vals))),
            ])
    presence_path = os.path.join(out_dir, "presence_rmse.csv")
    _write_report(
        presence_path,
        ("factor", "presence", "count", "mean_rmse", "std_rmse", "median_rmse"),
        presence_rows,
    )

    # (c) forest importances
    forest_seed = derive_seed(cfg.seed, "analysis", "forest")
    perm_seed = derive_seed(cfg.seed, "analysis", "perm")
    model, held_out = fit_forest(
        data,
        cfg.forest_n_trees,
        forest_seed,
        cfg.forest_split,
        min_samples_leaf=cfg.forest_min_samples_leaf,
        max_features=cfg.forest_max_features,
    )
    gini = gini_importance(model)
    perm = permutation_importance(
        model, held_out, repeats=cfg.perm_repeats, seed=perm_seed,
        mode=cfg.perm_mode,
    )
    importances_path = os.path.join(out_dir, "importances.csv")
    _write_report(
        importances_path,
        ("factor", "gini", "perm_mean", "perm_std"),
        [
            [FACTOR_NAMES[j], repr(float(gini[j])),
             repr(float(np.mean(perm[j]))), repr(float(np.std(perm[j])))]
            for j in range(len(FACTOR_NAMES))
        ],
    )

    # (d) pairwise permutation-importance tests (is A's score > B's?)
    perm_matrix_path = os.path.join(out_dir, "perm_matrix.csv")
    matrix_rows = []
    for i, a in enumerate(FACTOR_NAMES):
        row = [a]
        for j, b in enumerate(FACTOR_NAMES):
            if i == j:
                row.append("")
                continue
            res = mann_whitney_one_tailed(perm[i], perm[j], alternative="greater")
            row.append(repr(float(res.p_value)))
        matrix_rows.append(row)
    _write_report(perm_matrix_path, ("factor", *FACTOR_NAMES), matrix_rows)

    # (e) joint path contributions, factor sets of size <= 3
    joint = joint_contributions(model, data, max_set_size=3)
    def joint_label(key):
        return key if key == OTHER_KEY else "+".join(
            sorted(key, key=FACTOR_NAMES.index)
        )
    joint_rows = [
        [joint_label(k), repr(float(v))]
        for k, v in sorted(
            joint.items(), key=lambda kv: (-kv[1], joint_label(kv[0]))
        )
    ]
    joint_path = os.path.join(out_dir, "joint_contributions.csv")
    _write_report(joint_path, ("factor_set", "joint_score"), joint_rows)

    # (f) presence-level error tests for the most important factors
    presence_test_rows = []
    order = sorted(range(len(FACTOR_NAMES)), key=lambda j: (-gini[j], j))
    top = [FACTOR_NAMES[j] for j in order[:TOP_FACTORS_FOR_PRESENCE_TESTS]]
    for name in top:
        j = FACTOR_NAMES.index(name)
        col = data.X[:, j]
        levels = [
            int(v) for v in np.unique(col)
            if (col == v).sum() >= MIN_PRESENCE_OCCURRENCES
        ]
        for va in levels:
            for vb in levels:
                if va == vb:
                    continue
                a = data.y[col == va]
                b = data.y[col == vb]
                presence_test_rows.append(
                    [name, str(va), str(vb)] + _test_row("", "", a, b, "less")[2:]
                )
    presence_tests_path = os.path.join(out_dir, "presence_tests.csv")
    _write_report(
        presence_tests_path,
        ("factor", "presence_a", "presence_b", "n_a", "n_b", "u_statistic",
         "p_value", "method", "significant"),
        presence_test_rows,
    )

    _write_manifest(
        out_dir,
        "analyze",
        config=cfg,
        inputs={"factor_scores": csv_path,
                "map": cfg.map_path, "history": cfg.history_path},
        outputs=[social_path, presence_path, importances_path,
                 perm_matrix_path, joint_path, presence_tests_path],
        extra={
            "seed": cfg.seed,
            "forest_seed": forest_seed,
            "perm_seed": perm_seed,
            "n_trees": cfg.forest_n_trees,
            "n_rows_s_all": data.n_rows,
            "min_presence_occurrences": MIN_PRESENCE_OCCURRENCES,
            "top_factors": list(top),
        },
    )
    print(f"wrote 6 report tables to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args) -> int:
    cfg = _load_experiment(args)
    workers = _resolve_workers(args.workers, cfg)
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    rule_texts = args.rule
    rules = [parse_rule(t) for t in rule_texts]  # fail fast on bad text
    n_runs = args.runs if args.runs is not None else 100

    world, history = load_map(cfg.map_path, cfg.history_path)
    evaluator = _Evaluator(cfg, workers, world, history)
    payloads = []
    meta = []
    for i, text in enumerate(rule_texts):
        for r in range(n_runs):
            param_seed = derive_seed(cfg.seed, "compare", "params", i, r)
            sim_seed = derive_seed(cfg.seed, "compare", "sim", i, r)
            params = sample_params(cfg.param_ranges, param_seed)
            payloads.append((text, params, sim_seed))
            meta.append((i, r, sim_seed, param_seed))
    try:
        errors = evaluator.run_rules(payloads)
    finally:
        evaluator.close()

    samples_path = os.path.join(out_dir, "rmse_samples.csv")
    _write_report(
        samples_path,
        ("rule_index", "rule", "run", "rmse", "sim_seed", "param_seed"),
        [
            [str(i), rule_texts[i], str(r), repr(float(err)), str(ss), str(ps)]
            for (i, r, ss, ps), err in zip(meta, errors)
        ],
    )

    by_rule = [
        np.array([e for (i, _, _, _), e in zip(meta, errors) if i == idx])
        for idx in range(len(rule_texts))
    ]
    test_rows = []
    for idx in range(1, len(rule_texts)):
        test_rows.append(
            [str(idx), rule_texts[idx], "0", rule_texts[0]]
            + _test_row("", "", by_rule[idx], by_rule[0], "less")[2:]
        )
    tests_path = os.path.join(out_dir, "tests.csv")
    _write_report(
        tests_path,
        ("rule_index", "rule", "baseline_index", "baseline_rule", "n_a", "n_b",
         "u_statistic", "p_value", "method", "significant"),
        test_rows,
    )

    _write_manifest(
        out_dir,
        "compare",
        config=cfg,
        inputs={"map": cfg.map_path, "history": cfg.history_path},
        outputs=[samples_path, tests_path],
        extra={"seed": cfg.seed, "n_runs": n_runs, "rules": list(rule_texts)},
    )
    for idx in range(len(rule_texts)):
        print(
            f"rule {idx}: mean rmse={float(np.mean(by_rule[idx])):.3f} "
            f"({rule_texts[idx]})"
        )
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    cfg = _load_experiment(args)
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    rule = parse_rule(args.rule)
    seeds = args.seeds if args.seeds else [0]

    world, history = load_map(cfg.map_path, cfg.history_path)
    params = SimParams.midpoint()
    out_paths = []
    for seed in seeds:
        counts = simulate(world, params, rule, seed, cfg.sim_config())
        target = np.asarray(history.counts, dtype=np.float64)
        rows = []
        for t in range(len(counts)):
            partial = rmse(counts[: t + 1], target[: t + 1])
            rows.append([
                str(history.start_year + t), str(int(counts[t])),
                repr(float(partial)),
            ])
        path = os.path.join(out_dir, f"sim_{seed}.csv")
        _write_report(path, ("year", "count", "rmse_so_far"), rows)
        out_paths.append(path)
        print(f"seed {seed}: final rmse={rows[-1][2]} -> {path}")

    _write_manifest(
        out_dir,
        "simulate",
        config=cfg,
        inputs={"map": cfg.map_path, "history": cfg.history_path},
        outputs=out_paths,
        extra={"rule": args.rule, "seeds": list(seeds),
               "params": dataclasses.asdict(params)},
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="farmrules",
        description="Evolve, analyze, and compare farm-plot-selection rules.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-map", help="write a synthetic map and target series")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rows", type=int, default=20)
    p.add_argument("--cols", type=int, default=20)
    p.add_argument("--zones", type=int, default=4)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_map)

    p = sub.add_parser("evolve", help="run the search campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--runs", type=int, default=None,
                   help="override the configured run count")
    p.add_argument("--seed", type=int, default=None,
                   help="override the configured master seed")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("analyze", help="build report tables from a factor-scores CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="re-simulate rules against a baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--rule", action="append", required=True,
                   help="canonical rule text; repeat for several rules "
                        "(first is the baseline)")
    p.add_argument("--runs", type=int, default=None,
                   help="simulations per rule (default 100)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="run one rule and write yearly counts")
    p.add_argument("--config", required=True)
    p.add_argument("--rule", required=True)
    p.add_argument("--seed", type=int, action="append", default=None,
                   dest="seeds", help="simulation seed; repeat for several runs")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
