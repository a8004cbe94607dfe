"""Genetic programming over plot-selection rules.

Each run evolves a fixed-size population of rule trees against one map
and target series. Fitness is the RMSE of the simulated household-count
series (averaged over ``replicates`` simulation seeds), so lower is
better. Selection is tournament-based with a single elite carried into
the next generation; variation is typed subtree crossover plus subtree
mutation, with a small probability that mutation retargets the
social-connectivity tag instead of the tree.

Generation 0 is the evaluated initial population, so a run with G
generations and population P emits exactly G * P evaluated individuals:
the elite re-appears in each later generation as index 0 with its
original seeds and fitness, and P - 1 fresh offspring fill the rest.

Every individual's fitness is tied to an explicit (sim_seed, param_seed)
pair derived from the master seed, the run id, the generation, and the
individual's index; re-running a simulation with a recorded pair
reproduces the recorded fitness exactly. All variation randomness comes
from one per-run generator whose state is checkpointed after every
generation, so interrupted runs resume bit-exactly. Evaluation itself
draws nothing from the per-run generator, which is what makes the
results independent of how evaluation work is scheduled across workers.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .engine import SimConfig, run_simulation
from .ruletree import (
    DEPTH_MAX,
    DEPTH_MIN,
    FACTOR_NAMES,
    OPERATORS,
    SOCIAL_CONFIGS,
    Factor,
    Node,
    Op,
    RuleTree,
    check_typing,
    clone,
    depth,
    extract_presence,
    format_rule,
    from_sexpr,
    get_subtree,
    iter_subtrees,
    replace_subtree,
    to_sexpr,
)
from .seeding import derive_seed
from .world import DEFAULT_PARAM_RANGES, HistoricalSeries, WorldState, sample_params

__all__ = [
    "GpConfig",
    "EvalTask",
    "EvaluatedIndividual",
    "GenerationResult",
    "GpCheckpoint",
    "random_tree",
    "init_population",
    "crossover",
    "mutate",
    "evaluate_task",
    "serial_eval_batch",
    "evolve",
]

# Probability that grow-initialization places a terminal once the minimum
# depth is satisfied: terminals outnumber operators 9 to 2 in the language.
_P_TERMINAL = 9.0 / 11.0


@dataclass
class GpConfig:
    """Search settings for one campaign."""

    population_size: int = 50
    generations: int = 100
    runs: int = 20
    depth_min: int = DEPTH_MIN
    depth_max: int = DEPTH_MAX
    crossover_rate: float = 0.8
    mutation_rate: float = 0.2
    tournament_size: int = 3
    social_mutation_prob: float = 0.1
    replicates: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.generations < 1:
            raise ValueError("generations must be at least 1")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if not DEPTH_MIN <= self.depth_min <= self.depth_max <= DEPTH_MAX:
            raise ValueError(
                f"depth bounds must satisfy {DEPTH_MIN} <= depth_min <= depth_max <= {DEPTH_MAX}"
            )
        for name in ("crossover_rate", "mutation_rate", "social_mutation_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be at least 1")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")


@dataclass(frozen=True)
class EvalTask:
    """One fitness evaluation, fully described by picklable values."""

    run_id: int
    generation: int
    index: int
    tree_sexpr: tuple
    social: str
    sim_seed: int
    param_seed: int

    def rule(self) -> RuleTree:
        return RuleTree(self.social, from_sexpr(self.tree_sexpr))


@dataclass(frozen=True)
class EvaluatedIndividual:
    """A rule with its fitness and the seeds that produced it."""

    run_id: int
    generation: int
    index: int
    rule_text: str
    social: str
    presence: dict[str, int]
    fitness: float
    sim_seed: int
    param_seed: int


@dataclass
class GpCheckpoint:
    """Everything needed to continue a run after its last finished generation."""

    run_id: int
    generation: int
    rng_state: dict
    population: list[dict]  # tree, social, fitness, sim_seed, param_seed per slot

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GpCheckpoint":
        obj = json.loads(text)
        return cls(
            run_id=int(obj["run_id"]),
            generation=int(obj["generation"]),
            rng_state=obj["rng_state"],
            population=list(obj["population"]),
        )


# -- tree generation ---------------------------------------------------------


def _random_terminal(rng: np.random.Generator) -> Factor:
    return Factor(FACTOR_NAMES[int(rng.integers(len(FACTOR_NAMES)))])


def _random_op(rng: np.random.Generator) -> str:
    return OPERATORS[int(rng.integers(len(OPERATORS)))]


def _grow(rng: np.random.Generator, min_d: int, max_d: int) -> Node:
    if max_d <= 1:
        return _random_terminal(rng)
    if min_d <= 1 and rng.uniform() < _P_TERMINAL:
        return _random_terminal(rng)
    op = _random_op(rng)
    deep_child = int(rng.integers(2))
    children = []
    for k in range(2):
        if k == deep_child:
            children.append(_grow(rng, min_d - 1, max_d - 1))
        else:
            children.append(_grow(rng, 1, max_d - 1))
    return Op(op, children[0], children[1])


def _full(rng: np.random.Generator, target: int) -> Node:
    if target <= 1:
        return _random_terminal(rng)
    return Op(_random_op(rng), _full(rng, target - 1), _full(rng, target - 1))


def random_tree(
    rng: np.random.Generator, depth_min: int, depth_max: int, method: str = "grow"
) -> Node:
    """Random well-typed expression with depth inside the bounds."""
    if method == "full":
        target = int(rng.integers(depth_min, depth_max + 1))
        return _full(rng, target)
    if method == "grow":
        target = int(rng.integers(depth_min, depth_max + 1))
        return _grow(rng, depth_min, target)
    raise ValueError(f"unknown tree method {method!r}")


def init_population(cfg: GpConfig, rng: np.random.Generator) -> list[RuleTree]:
    """Ramped half-and-half initialization; even slots full, odd slots grow."""
    out = []
    for i in range(cfg.population_size):
        social = SOCIAL_CONFIGS[int(rng.integers(len(SOCIAL_CONFIGS)))]
        method = "full" if i % 2 == 0 else "grow"
        root = random_tree(rng, cfg.depth_min, cfg.depth_max, method)
        tree = RuleTree(social, root)
        assert check_typing(tree)
        out.append(tree)
    return out


# -- variation ---------------------------------------------------------------


def crossover(
    a: RuleTree,
    b: RuleTree,
    rng: np.random.Generator,
    depth_min: int = DEPTH_MIN,
    depth_max: int = DEPTH_MAX,
) -> tuple[RuleTree, RuleTree]:
    """Typed subtree exchange with reject-and-copy depth enforcement.

    A swap point is drawn uniformly in each parent among subtrees of
    matching return type (every subtree scores here, so all points are
    compatible). A child that would leave the depth bounds is replaced by
    a copy of its primary parent. Children keep their primary parent's
    social tag.
    """
    paths_a = [p for p, _ in iter_subtrees(a.root)]
    paths_b = [p for p, _ in iter_subtrees(b.root)]
    pa = paths_a[int(rng.integers(len(paths_a)))]
    pb = paths_b[int(rng.integers(len(paths_b)))]
    sub_a = clone(get_subtree(a.root, pa))
    sub_b = clone(get_subtree(b.root, pb))
    root1 = replace_subtree(a.root, pa, sub_b)
    root2 = replace_subtree(b.root, pb, sub_a)
    if not depth_min <= depth(root1) <= depth_max:
        root1 = clone(a.root)
    if not depth_min <= depth(root2) <= depth_max:
        root2 = clone(b.root)
    return RuleTree(a.social, root1), RuleTree(b.social, root2)


def mutate(
    t: RuleTree,
    rng: np.random.Generator,
    depth_min: int = DEPTH_MIN,
    depth_max: int = DEPTH_MAX,
    social_mutation_prob: float = 0.1,
) -> RuleTree:
    """Subtree regeneration, or (rarely) a new social tag.

    With probability ``social_mutation_prob`` the social tag is redrawn
    among the other three configurations and the tree is untouched.
    Otherwise a uniformly chosen subtree is replaced by a fresh grown
    subtree whose depth window keeps the whole tree inside the bounds.
    """
    if rng.uniform() < social_mutation_prob:
        others = [s for s in SOCIAL_CONFIGS if s != t.social]
        return RuleTree(others[int(rng.integers(len(others)))], clone(t.root))
    paths = [p for p, _ in iter_subtrees(t.root)]
    path = paths[int(rng.integers(len(paths)))]
    rest = depth(replace_subtree(t.root, path, Factor(FACTOR_NAMES[0])))
    sub_min = 1 if rest >= depth_min else depth_min - len(path)
    sub_max = depth_max - len(path)
    new_sub = _grow(rng, max(1, sub_min), sub_max)
    return RuleTree(t.social, replace_subtree(t.root, path, new_sub))


def _tournament(fitness: list[float], cfg: GpConfig, rng: np.random.Generator) -> int:
    picks = rng.integers(0, len(fitness), size=cfg.tournament_size)
    return int(min(picks, key=lambda i: (fitness[i], i)))


def next_offspring(
    trees: list[RuleTree], fitness: list[float], cfg: GpConfig, rng: np.random.Generator
) -> list[RuleTree]:
    """Produce population_size - 1 offspring (the elite fills the last slot)."""
    out: list[RuleTree] = []
    while len(out) < cfg.population_size - 1:
        i = _tournament(fitness, cfg, rng)
        j = _tournament(fitness, cfg, rng)
        a = RuleTree(trees[i].social, clone(trees[i].root))
        b = RuleTree(trees[j].social, clone(trees[j].root))
        if rng.uniform() < cfg.crossover_rate:
            a, b = crossover(a, b, rng, cfg.depth_min, cfg.depth_max)
        if rng.uniform() < cfg.mutation_rate:
            a = mutate(a, rng, cfg.depth_min, cfg.depth_max, cfg.social_mutation_prob)
        if rng.uniform() < cfg.mutation_rate:
            b = mutate(b, rng, cfg.depth_min, cfg.depth_max, cfg.social_mutation_prob)
        out.append(a)
        if len(out) < cfg.population_size - 1:
            out.append(b)
    return out


# -- evaluation ---------------------------------------------------------------


def evaluate_task(
    task: EvalTask,
    world: WorldState,
    history: HistoricalSeries,
    ranges: dict[str, tuple[float, float]],
    sim_cfg: SimConfig,
    replicates: int = 1,
) -> EvaluatedIndividual:
    """Run the simulations behind one individual and package the result."""
    rule = task.rule()
    params = sample_params(ranges, task.param_seed)
    errors = []
    for r in range(replicates):
        res = run_simulation(world, history, params, rule, derive_seed(task.sim_seed, r), sim_cfg)
        errors.append(res.error)
    return EvaluatedIndividual(
        run_id=task.run_id,
        generation=task.generation,
        index=task.index,
        rule_text=format_rule(rule),
        social=rule.social,
        presence=extract_presence(rule),
        fitness=float(np.mean(errors)),
        sim_seed=task.sim_seed,
        param_seed=task.param_seed,
    )


def serial_eval_batch(
    world: WorldState,
    history: HistoricalSeries,
    ranges: dict[str, tuple[float, float]],
    sim_cfg: SimConfig,
    replicates: int,
) -> Callable[[list[EvalTask]], list[EvaluatedIndividual]]:
    """In-process evaluator: results in task order."""

    def run(tasks: list[EvalTask]) -> list[EvaluatedIndividual]:
        return [evaluate_task(t, world, history, ranges, sim_cfg, replicates) for t in tasks]

    return run


@dataclass
class GenerationResult:
    """One generation's evaluated individuals plus the resume checkpoint."""

    run_id: int
    generation: int
    individuals: list[EvaluatedIndividual]
    checkpoint: GpCheckpoint
    best: EvaluatedIndividual = field(init=False)

    def __post_init__(self) -> None:
        self.best = min(self.individuals, key=lambda e: (e.fitness, e.index))


def _make_task(cfg: GpConfig, run_id: int, gen: int, idx: int, tree: RuleTree) -> EvalTask:
    return EvalTask(
        run_id=run_id,
        generation=gen,
        index=idx,
        tree_sexpr=_freeze(to_sexpr(tree.root)),
        social=tree.social,
        sim_seed=derive_seed(cfg.seed, "sim", run_id, gen, idx),
        param_seed=derive_seed(cfg.seed, "params", run_id, gen, idx),
    )


def _freeze(sexpr) -> tuple | str:
    if isinstance(sexpr, str):
        return sexpr
    return tuple(_freeze(s) for s in sexpr)


def _checkpoint(
    run_id: int,
    gen: int,
    rng: np.random.Generator,
    trees: list[RuleTree],
    evaluated: list[EvaluatedIndividual],
) -> GpCheckpoint:
    population = []
    for tree, rec in zip(trees, evaluated):
        population.append(
            {
                "tree": to_sexpr(tree.root),
                "social": tree.social,
                "fitness": rec.fitness,
                "sim_seed": rec.sim_seed,
                "param_seed": rec.param_seed,
            }
        )
    state = json.loads(json.dumps(rng.bit_generator.state, default=int))
    return GpCheckpoint(run_id=run_id, generation=gen, rng_state=state, population=population)


def evolve(
    cfg: GpConfig,
    world: WorldState,
    history: HistoricalSeries,
    ranges: dict[str, tuple[float, float]] | None = None,
    sim_cfg: SimConfig | None = None,
    run_id: int = 0,
    eval_batch: Callable[[list[EvalTask]], list[EvaluatedIndividual]] | None = None,
    resume: GpCheckpoint | None = None,
) -> Iterator[GenerationResult]:
    """Drive one run, yielding each generation as soon as it is evaluated.

    ``eval_batch`` maps a task list to results in the same order; the
    default evaluates in process. Passing a checkpoint resumes after its
    generation and continues the original random sequence exactly.
    """
    ranges = DEFAULT_PARAM_RANGES if ranges is None else ranges
    sim_cfg = sim_cfg or SimConfig()
    if eval_batch is None:
        eval_batch = serial_eval_batch(world, history, ranges, sim_cfg, cfg.replicates)

    rng = np.random.default_rng(derive_seed(cfg.seed, "run", run_id))

    if resume is None:
        trees = init_population(cfg, rng)
        tasks = [_make_task(cfg, run_id, 0, i, t) for i, t in enumerate(trees)]
        evaluated = eval_batch(tasks)
        yield GenerationResult(run_id, 0, evaluated, _checkpoint(run_id, 0, rng, trees, evaluated))
        start_gen = 1
    else:
        if resume.run_id != run_id:
            raise ValueError(f"checkpoint belongs to run {resume.run_id}, not {run_id}")
        trees = [RuleTree(p["social"], from_sexpr(p["tree"])) for p in resume.population]
        if len(trees) != cfg.population_size:
            raise ValueError(
                f"checkpoint population {len(trees)} != configured {cfg.population_size}"
            )
        evaluated = [
            EvaluatedIndividual(
                run_id=run_id,
                generation=resume.generation,
                index=i,
                rule_text=format_rule(t),
                social=t.social,
                presence=extract_presence(t),
                fitness=float(p["fitness"]),
                sim_seed=int(p["sim_seed"]),
                param_seed=int(p["param_seed"]),
            )
            for i, (t, p) in enumerate(zip(trees, resume.population))
        ]
        rng.bit_generator.state = resume.rng_state
        start_gen = resume.generation + 1

    fitness = [e.fitness for e in evaluated]
    for gen in range(start_gen, cfg.generations):
        elite_idx = min(range(len(fitness)), key=lambda i: (fitness[i], i))
        elite_tree = RuleTree(trees[elite_idx].social, clone(trees[elite_idx].root))
        elite_rec = dataclasses.replace(evaluated[elite_idx], generation=gen, index=0)

        offspring = next_offspring(trees, fitness, cfg, rng)
        tasks = [_make_task(cfg, run_id, gen, i + 1, t) for i, t in enumerate(offspring)]
        children = eval_batch(tasks)

        trees = [elite_tree] + offspring
        evaluated = [elite_rec] + children
        fitness = [e.fitness for e in evaluated]
        yield GenerationResult(run_id, gen, evaluated, _checkpoint(run_id, gen, rng, trees, evaluated))
