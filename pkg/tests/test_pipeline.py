import csv
import json

import pytest

from forbidden_triads.pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    load_config,
    parse_config,
    robustness_suite,
    run_pipeline,
    stage_seed,
)
from forbidden_triads.records import write_dataset
from forbidden_triads.synth import synth_corpus

EXPECTED_OUTPUTS = [
    "census.csv",
    "fig3_closure.csv",
    "fig4_density_comparison.csv",
    "fig4_kde.csv",
    "fig4_tests.csv",
    "fig5_lowess.csv",
    "fig6_power_sequence.csv",
    "fig7_margins.csv",
    "fig8_margins_tie_strength.csv",
    "fig9_leader_interaction.csv",
    "features.csv",
    "feature_exclusions.csv",
    "table3_closure_logit.csv",
    "table4_correlations.csv",
    "table5_models.csv",
    "table6_vif.csv",
    "rewire_constraints.csv",
    "fits/model1.json",
    "fits/model4.json",
    "worlds/world_000.csv",
]


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("inputs")
    write_dataset(synth_corpus(seed=1), root)
    return root


def _cfg(inputs, **kw):
    base = dict(
        sessions_path=str(inputs / "sessions.csv"),
        personnel_path=str(inputs / "personnel.csv"),
        n_worlds=2,
        n_quantiles=50,
        n_permutations=10,
        window_sweep=(1, 2),
        theta_sweep=(2, 3),
        cutoff_sweep=(1957, 1955),
    )
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def run(inputs, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    return out, run_pipeline(_cfg(inputs), out)


def test_outputs_exist(run):
    out, manifest = run
    for rel in EXPECTED_OUTPUTS:
        assert (out / rel).is_file(), rel
    assert set(manifest["files"]) >= set(EXPECTED_OUTPUTS)
    assert not list(out.parent.glob("*.tmp*"))


def test_manifest_contents(run):
    out, manifest = run
    on_disk = json.loads((out / "manifest.json").read_text())
    assert on_disk == manifest
    assert manifest["config"]["n_worlds"] == 2
    assert {"numpy", "scipy", "pandas"} <= set(manifest["versions"])
    assert "created" not in json.dumps(manifest)


def test_rewired_worlds_are_clean(run):
    out, _ = run
    with open(out / "rewire_constraints.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert all(int(r[f"c{k}_violations"]) == 0 for r in rows for k in range(1, 5))


def test_rerun_is_identical_and_cached(run, inputs, tmp_path):
    out, manifest = run
    again = run_pipeline(_cfg(inputs), out)
    assert again == manifest
    fresh = run_pipeline(_cfg(inputs), tmp_path / "fresh")
    assert fresh["files"] == manifest["files"]


def test_changed_seed_reruns_rewire_only_downstream(run, inputs, tmp_path):
    _, manifest = run
    other = run_pipeline(_cfg(inputs, seed=5), tmp_path / "other")
    assert other["files"]["census.csv"] == manifest["files"]["census.csv"]
    assert other["files"]["features.csv"] == manifest["files"]["features.csv"]
    assert other["files"]["worlds/world_000.csv"] != manifest["files"]["worlds/world_000.csv"]


def test_no_worlds_notice(inputs, tmp_path):
    m = run_pipeline(_cfg(inputs, n_worlds=0), tmp_path / "o")
    assert any("rewire" in n for n in m["notices"])
    assert not (tmp_path / "o" / "fig4_tests.csv").exists()
    assert (tmp_path / "o" / "table5_models.csv").exists()


def test_stage_failure_leaves_nothing(inputs, tmp_path):
    with pytest.raises(StageError) as e:
        run_pipeline(_cfg(inputs, n_worlds=0, cutoff_year=1900), tmp_path / "bad")
    assert e.value.stage == "features"
    assert list(tmp_path.iterdir()) == []


def test_robustness_suite(inputs, tmp_path):
    out = tmp_path / "rob"
    m = robustness_suite(_cfg(inputs, n_worlds=1), out)
    for name in ("table7_theta_sweep.csv", "table8_cutoff_sweep.csv", "appendix_no_closed.csv",
                 "fig10_margins_no_closed.csv", "rewire_window_sweep.csv"):
        assert (out / name).is_file(), name
    assert any("exclude_leaders_path" in n for n in m["notices"])
    with open(out / "rewire_window_sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["window_years"] for r in rows] == ["1", "2"]
    assert all(r["violations"] == "0" for r in rows)


def test_leader_exclusion_table(inputs, tmp_path):
    (tmp_path / "leaders.txt").write_text("m0001\nm0002\n")
    out = tmp_path / "rob"
    robustness_suite(_cfg(inputs, n_worlds=0, exclude_leaders_path=str(tmp_path / "leaders.txt")), out)
    assert (out / "table8_leader_exclusion.csv").is_file()
    assert (out / "leader_exclusion_counts.csv").is_file()


# --- configuration ---------------------------------------------------------------


def test_parse_config(tmp_path):
    text = """
    # inputs
    sessions_path = data/sessions.csv
    personnel_path = data/personnel.csv
    theta_sweep = 2, 4
    n_worlds = 7   # few
    lowess_frac = 0.25
    """
    cfg = parse_config(text, tmp_path)
    assert cfg.theta_sweep == (2, 4) and cfg.n_worlds == 7 and cfg.lowess_frac == 0.25
    assert cfg.path("sessions_path") == tmp_path / "data/sessions.csv"
    assert parse_config(cfg.to_text(), tmp_path) == cfg
    assert cfg.digest() == parse_config(cfg.to_text(), tmp_path).digest()


@pytest.mark.parametrize(
    "text, match",
    [
        ("records_path = r.txt\ncolour = red", "unknown key"),
        ("records_path = r.txt\nrecords_path = s.txt", "duplicate key"),
        ("records_path = r.txt\nn_worlds = many", "cannot parse"),
        ("records_path = r.txt\njust words", "expected"),
        ("n_worlds = 3", "sessions_path"),
        ("records_path = r.txt\nsessions_path = s.csv", "go together"),
        ("records_path = r.txt\ntheta = 1", "theta"),
        ("records_path = r.txt\nlowess_frac = 0", "lowess_frac"),
        ("records_path = r.txt\nn_worlds = -1", ">= 0"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_load_config_missing(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_stage_seeds():
    assert stage_seed(0, "rewire", 1) == stage_seed(0, "rewire", 1)
    seeds = {stage_seed(0, "rewire", i) for i in range(100)} | {stage_seed(0, "permute", 0), stage_seed(1, "rewire", 0)}
    assert len(seeds) == 102
    assert 0 <= stage_seed(7, "x") < 2**64
