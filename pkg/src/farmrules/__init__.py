"""farmrules: evolve, analyze, and compare farm-plot-selection rules.

A workbench around an annual-tick settlement simulation on a gridded
valley: strongly typed genetic programming searches over plot-selection
rules, every evaluated rule's factor-presence vector and fitness is
recorded, and a from-scratch regression forest ranks which factors (and
factor interactions) actually drive fitness.
"""

from .config import ConfigError, ExperimentConfig
from .engine import SimConfig, SimResult, run_simulation, simulate
from .factors import ScoreContext, candidate_plots, choose_plot, evaluate_rule, factor_raw
from .forest import Dataset, RandomForestRegressor, fit_forest
from .gp import (
    EvaluatedIndividual,
    EvalTask,
    GenerationResult,
    GpCheckpoint,
    GpConfig,
    crossover,
    evolve,
    init_population,
    mutate,
    random_tree,
)
from .importance import (
    ImportanceReport,
    decompose_row,
    gini_importance,
    joint_contributions,
    permutation_importance,
    select_n_trees,
)
from .mapio import gen_synthetic_map, generate_world, load_map
from .records import PresenceRecord, read_records, to_dataset, write_records
from .ruletree import (
    BASELINE_RULE_TEXT,
    DEPTH_MAX,
    DEPTH_MIN,
    FACTOR_NAMES,
    OPERATORS,
    SOCIAL_CONFIGS,
    Factor,
    Op,
    RuleSyntaxError,
    RuleTree,
    check_typing,
    extract_presence,
    format_rule,
    parse_rule,
    presence_vector,
    tree_from_presence,
)
from .seeding import derive_seed
from .stats import (
    MannWhitneyResult,
    PairwiseResult,
    mann_whitney_one_tailed,
    pairwise_matrix,
    rmse,
)
from .world import (
    DEFAULT_PARAM_RANGES,
    N_YEARS,
    PARAM_NAMES,
    HistoricalSeries,
    Household,
    SimParams,
    WorldState,
    sample_params,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # rules
    "FACTOR_NAMES", "SOCIAL_CONFIGS", "OPERATORS", "DEPTH_MIN", "DEPTH_MAX",
    "BASELINE_RULE_TEXT", "RuleTree", "Factor", "Op",
    "RuleSyntaxError",
    "check_typing", "extract_presence", "presence_vector", "format_rule",
    "parse_rule", "tree_from_presence",
    # world and simulation
    "N_YEARS", "PARAM_NAMES", "DEFAULT_PARAM_RANGES",
    "WorldState", "Household", "SimParams", "HistoricalSeries", "sample_params",
    "SimConfig", "SimResult", "simulate", "run_simulation",
    "ScoreContext", "evaluate_rule", "choose_plot", "candidate_plots", "factor_raw",
    "generate_world", "gen_synthetic_map", "load_map",
    # search
    "GpConfig", "GpCheckpoint", "EvalTask", "EvaluatedIndividual",
    "GenerationResult", "init_population", "random_tree", "crossover",
    "mutate", "evolve",
    # analysis
    "Dataset", "RandomForestRegressor", "fit_forest",
    "gini_importance", "permutation_importance", "joint_contributions",
    "decompose_row", "select_n_trees", "ImportanceReport",
    "PresenceRecord", "write_records", "read_records", "to_dataset",
    # statistics
    "rmse", "MannWhitneyResult", "mann_whitney_one_tailed",
    "PairwiseResult", "pairwise_matrix",
    # configuration
    "ExperimentConfig", "ConfigError",
    "derive_seed",
]
