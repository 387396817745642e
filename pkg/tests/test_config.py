import pytest
import yaml

from gatecircuits.config import (
    SEED_ENV,
    ConfigError,
    ExperimentConfig,
    build_dataset,
    build_model,
    load_config,
    model_spec,
)

BASE = {
    "model": {"preset": "toy", "gate": "AND"},
    "algorithms": [{"algorithm": "greedy", "metric": "sink"}],
    "k_grid": [2],
}


def test_round_trip_through_yaml(tmp_path):
    cfg = ExperimentConfig.from_dict({**BASE, "strategies": ["Ns", "Dn"], "seed": 4,
                                      "options": {"box_repeats": 3}})
    path = tmp_path / "c.yaml"
    path.write_text(cfg.dumps())
    again = load_config(path)
    assert again.to_dict() == cfg.to_dict()
    assert again.option("box_repeats") == 3 and again.option("m") == 1.5


def test_every_problem_is_listed():
    bad = {
        "version": 9,
        "model": {"preset": "nope"},
        "algorithms": [{"algorithm": "acdc"}, {"algorithm": "linear", "metric": "l2", "beam": 1}],
        "k_grid": [-1],
        "strategies": ["sideways"],
        "evaluations": ["vibes"],
        "options": {"colour": 1},
    }
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(bad)
    fields = [p.split(":")[0] for p in info.value.problems]
    assert fields == [
        "version", "model", "algorithms[0].algorithm", "algorithms[1].metric", "algorithms[1]",
        "k_grid", "strategies", "evaluations", "options",
    ]


def test_missing_and_unknown_top_level_fields():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict({"model": BASE["model"], "colour": 1})
    assert info.value.problems == [
        "colour: unknown field", "algorithms: required field missing", "k_grid: required field missing",
    ]
    with pytest.raises(ConfigError, match="mapping"):
        ExperimentConfig.from_dict([1, 2])


def test_empty_grids_rejected():
    with pytest.raises(ConfigError, match="grid must be nonempty"):
        ExperimentConfig.from_dict({**BASE, "k_grid": []})


def test_env_seed_overrides_file(tmp_path, monkeypatch):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({**BASE, "seed": 1}))
    monkeypatch.setenv(SEED_ENV, "42")
    assert load_config(path).seed == 42
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(ConfigError, match=SEED_ENV):
        load_config(path)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError, match="<file>"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_presets_resolve():
    spec, kinds = model_spec({"preset": "mixed"})
    assert sorted((n.name, k) for n, k in kinds.items()) == [("g1.0", "AND"), ("g1.1", "OR"), ("g2.0", "ADDER")]
    spec, kinds = model_spec({"preset": "planted", "kinds": ["AND", "OR"], "sizes": [2, 3]})
    assert sorted(kinds.values()) == ["ADDER", "AND", "OR"]
    assert model_spec({"preset": "toy", "gate": "OR"})[1] is None
    with pytest.raises(ValueError, match="family"):
        model_spec({"family": "rnn"})


def test_datasets_follow_the_model():
    cfg = ExperimentConfig.from_dict(BASE)
    model, kinds = build_model(cfg)
    assert kinds is None and len(build_dataset(cfg, model, 0)) == 1
    cfg = ExperimentConfig.from_dict({**BASE, "model": {"preset": "mixed"}})
    model, _ = build_model(cfg)
    assert len(build_dataset(cfg, model, 0)) == 1
