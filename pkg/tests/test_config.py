"""Experiment config files: parsing, canonical form, hashing, adapters."""

import pytest

from farmrules.config import ConfigError, ExperimentConfig
from farmrules.world import DEFAULT_PARAM_RANGES, PARAM_NAMES

GOOD_TEXT = """\
# example experiment
map = valley.csv
history = target.csv
population_size = 30
generations = 8
runs = 2
seed = 7
workers = 4
"""


class TestParsing:
    def test_defaults_fill_unset_keys(self):
        cfg = ExperimentConfig.from_text(GOOD_TEXT)
        assert cfg.population_size == 30
        assert cfg.generations == 8
        assert cfg.runs == 2
        assert cfg.seed == 7
        assert cfg.workers == 4
        assert cfg.depth_min == 4 and cfg.depth_max == 10
        assert cfg.forest_n_trees == 520
        assert cfg.param_ranges == dict(DEFAULT_PARAM_RANGES)

    def test_paths_resolve_against_base_dir(self):
        cfg = ExperimentConfig.from_text(GOOD_TEXT, base_dir="/data/run1")
        assert cfg.map_path == "/data/run1/valley.csv"
        assert cfg.history_path == "/data/run1/target.csv"

    def test_comments_and_blank_lines_skipped(self):
        cfg = ExperimentConfig.from_text("# only a comment\n\nseed = 3\n")
        assert cfg.seed == 3

    def test_unknown_key_reports_location(self):
        with pytest.raises(ConfigError, match=r"exp.cfg:2: colour: unknown key"):
            ExperimentConfig.from_text("seed = 1\ncolour = blue\n", source="exp.cfg")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match=r"<config>:2: seed: duplicate key"):
            ExperimentConfig.from_text("seed = 1\nseed = 2\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match=r"<config>:1: expected 'key = value'"):
            ExperimentConfig.from_text("just some words\n")

    @pytest.mark.parametrize("line,hint", [
        ("population_size = many", "expected an integer"),
        ("radius = wide", "expected a number"),
        ("override = perhaps", "expected true/false"),
        ("forest_max_features = half", "expected third, all, or an integer"),
        ("range_min_death_age = 40", "expected 'low, high'"),
        ("range_min_death_age = a, b", "expected two numbers"),
        ("range_min_death_age = 42, 38", "low must not exceed high"),
        ("range_shoe_size = 1, 2", "unknown simulation parameter"),
    ])
    def test_bad_values_rejected(self, line, hint):
        with pytest.raises(ConfigError, match=hint):
            ExperimentConfig.from_text(line + "\n")

    def test_range_override_requires_flag(self):
        text = "range_min_death_age = 30, 50\n"
        with pytest.raises(ConfigError, match="departs from the published interval"):
            ExperimentConfig.from_text(text)
        cfg = ExperimentConfig.from_text(text + "override = true\n")
        assert cfg.param_ranges["min_death_age"] == (30.0, 50.0)

    def test_restating_published_range_needs_no_flag(self):
        lo, hi = DEFAULT_PARAM_RANGES["min_death_age"]
        cfg = ExperimentConfig.from_text(f"range_min_death_age = {lo}, {hi}\n")
        assert cfg.override is False

    def test_from_file_checks_referenced_files(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("map = nowhere.csv\nhistory = nothing.csv\n")
        with pytest.raises(ConfigError, match="referenced file does not exist"):
            ExperimentConfig.from_file(str(path))
        cfg = ExperimentConfig.from_file(str(path), check_files=False)
        assert cfg.map_path == str(tmp_path / "nowhere.csv")

    def test_from_file_missing_config(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            ExperimentConfig.from_file(str(tmp_path / "absent.cfg"))


class TestValidation:
    @pytest.mark.parametrize("kw,hint", [
        (dict(forest_split=1.0), "forest_split"),
        (dict(forest_n_trees=0), "forest_n_trees"),
        (dict(forest_min_samples_leaf=0), "forest_min_samples_leaf"),
        (dict(perm_repeats=1), "perm_repeats"),
        (dict(perm_mode="sorted"), "perm_mode"),
        (dict(forest_max_features=0), "forest_max_features"),
        (dict(radius=0.0), "radius"),
        (dict(top_k=0), "top_k"),
        (dict(perf_rank_by="height"), "perf_rank_by"),
        (dict(workers=0), "workers"),
        (dict(population_size=1), "population_size"),
    ])
    def test_constructor_rejects_bad_settings(self, kw, hint):
        with pytest.raises(ConfigError, match=hint):
            ExperimentConfig(**kw)

    def test_param_ranges_must_cover_all_parameters(self):
        partial = {n: DEFAULT_PARAM_RANGES[n] for n in PARAM_NAMES[:-1]}
        with pytest.raises(ConfigError, match="parameter ranges mismatch"):
            ExperimentConfig(param_ranges=partial)


class TestCanonicalForm:
    def test_round_trip_preserves_everything_but_workers(self):
        cfg = ExperimentConfig.from_text(GOOD_TEXT)
        back = ExperimentConfig.from_text(cfg.to_text())
        assert back == cfg.with_updates(workers=1)

    def test_workers_excluded_from_text_and_hash(self):
        one = ExperimentConfig.from_text(GOOD_TEXT)
        eight = one.with_updates(workers=8)
        assert "workers" not in one.to_text()
        assert one.to_text() == eight.to_text()
        assert one.config_hash() == eight.config_hash()

    def test_hash_changes_with_settings(self):
        cfg = ExperimentConfig.from_text(GOOD_TEXT)
        assert cfg.config_hash() != cfg.with_updates(seed=8).config_hash()
        assert len(cfg.config_hash()) == 64

    def test_equivalent_sources_hash_identically(self):
        sparse = ExperimentConfig.from_text("seed = 7\n")
        verbose = ExperimentConfig.from_text(
            "seed = 7\npopulation_size = 50\ngenerations = 100\n"
        )
        assert sparse.config_hash() == verbose.config_hash()


class TestAdapters:
    def test_gp_config_mirror(self):
        cfg = ExperimentConfig.from_text(GOOD_TEXT)
        gp = cfg.gp_config()
        assert (gp.population_size, gp.generations, gp.runs, gp.seed) == (30, 8, 2, 7)
        assert (gp.depth_min, gp.depth_max) == (4, 10)

    def test_score_context(self):
        cfg = ExperimentConfig(radius=5.0, top_k=2, perf_rank_by="last_harvest")
        ctx = cfg.score_context()
        assert ctx.radius == 5.0
        assert ctx.top_k == 2
        assert ctx.perf_rank_by == "last_harvest"

    def test_sim_config_carries_score_context(self):
        cfg = ExperimentConfig(radius=5.0)
        assert cfg.sim_config().score.radius == 5.0

    def test_with_updates_returns_new_validated_config(self):
        cfg = ExperimentConfig()
        other = cfg.with_updates(seed=99)
        assert other.seed == 99 and cfg.seed == 0
        with pytest.raises(ConfigError):
            cfg.with_updates(top_k=0)
