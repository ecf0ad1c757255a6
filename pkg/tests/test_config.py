"""Config tree: defaults, dotted-path validation, JSON round-trips."""

import json

import pytest

from neuralign.config import (
    AttackSpec,
    ConfigError,
    ExperimentConfig,
    TriggerSpec,
    WatermarkSpec,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
    validate_config,
)


def test_defaults_are_valid():
    cfg = validate_config(ExperimentConfig())
    assert cfg.coding.k == 2 and cfg.coding.t == 60
    assert [a.kind for a in cfg.attacks] == ["np", "ftp", "npp", "rescale"]


def test_watermarked_layer_helpers():
    cfg = ExperimentConfig()
    assert cfg.model.watermarked_layer == "dense1"
    assert cfg.watermarked_index() == 1
    assert cfg.watermarked_width() == 32


def test_round_trip_through_dict():
    cfg = ExperimentConfig(seed=7, normalize=True)
    cfg.attacks[1].trials = 11
    again = config_from_dict(config_to_dict(cfg))
    assert again == cfg


def test_round_trip_through_file(tmp_path):
    cfg = ExperimentConfig(seed=3)
    cfg.triggers.mode = "t2"
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_partial_dict_fills_defaults():
    cfg = config_from_dict({"seed": 5, "coding": {"t": 40}})
    assert cfg.seed == 5 and cfg.coding.t == 40
    assert cfg.coding.k == 2  # untouched default
    assert cfg.model.widths == [128, 32, 16]


def test_unknown_key_rejected_with_path():
    with pytest.raises(ConfigError, match=r"coding\.tt"):
        config_from_dict({"coding": {"tt": 40}})
    with pytest.raises(ConfigError, match="unknown key"):
        config_from_dict({"bogus": 1})


def test_attacks_list_built_per_item():
    cfg = config_from_dict({"attacks": [{"kind": "np", "trials": 3}]})
    assert len(cfg.attacks) == 1 and cfg.attacks[0].trials == 3
    with pytest.raises(ConfigError, match=r"attacks\[0\]\.oops"):
        config_from_dict({"attacks": [{"kind": "np", "oops": 1}]})
    with pytest.raises(ConfigError, match="expected a list"):
        config_from_dict({"attacks": {"kind": "np"}})


def test_wrong_shape_rejected():
    with pytest.raises(ConfigError, match="expected an object"):
        config_from_dict({"coding": 4})


def test_invalid_json_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(path)


@pytest.mark.parametrize(
    "mutate, path_fragment",
    [
        (lambda c: setattr(c.data, "classes", 1), "data.classes"),
        (lambda c: setattr(c.data, "holdout", 99999), "data.holdout"),
        (lambda c: setattr(c.model, "widths", []), "model.widths"),
        (lambda c: setattr(c.model, "watermarked_layer", "conv1"), "model.watermarked_layer"),
        (lambda c: setattr(c.model, "watermarked_layer", "dense9"), "model.watermarked_layer"),
        (lambda c: setattr(c.coding, "k", 1), "coding.k"),
        (lambda c: setattr(c.coding, "k_corrupted", 0), "coding.k_corrupted"),
        (lambda c: setattr(c.coding, "k_corrupted", 2), "coding.k_corrupted"),
        (lambda c: setattr(c.triggers, "mode", "t3"), "triggers.mode"),
        (lambda c: setattr(c.triggers, "j", 3), "triggers.j"),
        (lambda c: setattr(c.triggers, "restarts", 0), "triggers.restarts"),
        (lambda c: setattr(c.triggers, "box_low", 9.0), "triggers.box_low"),
        (lambda c: setattr(c.watermark, "threshold", 1.5), "watermark.threshold"),
        (lambda c: setattr(c.attacks[0], "kind", "steal"), r"attacks\[0\].kind"),
        (lambda c: setattr(c.attacks[0], "trials", 0), r"attacks\[0\].trials"),
        (lambda c: setattr(c.attacks[3], "scale_low", 0.0), r"attacks\[3\].scale_low"),
    ],
)
def test_validation_reports_dotted_path(mutate, path_fragment):
    cfg = ExperimentConfig()
    mutate(cfg)
    with pytest.raises(ConfigError, match=path_fragment):
        validate_config(cfg)


def test_ensemble_mode_requires_variants():
    cfg = ExperimentConfig(triggers=TriggerSpec(mode="t2", j=0))
    with pytest.raises(ConfigError, match=r"triggers\.j"):
        validate_config(cfg)


def test_prune_fractions_must_stay_below_one():
    cfg = ExperimentConfig(triggers=TriggerSpec(j=6, prune_step=0.4))
    with pytest.raises(ConfigError, match="prune"):
        validate_config(cfg)


def test_config_error_is_value_error():
    assert issubclass(ConfigError, ValueError)


def test_saved_file_is_plain_json(tmp_path):
    path = tmp_path / "cfg.json"
    save_config(ExperimentConfig(), path)
    raw = json.loads(path.read_text())
    assert raw["watermark"]["bits"] == 32
    assert isinstance(raw["attacks"], list) and len(raw["attacks"]) == 4
