import pytest

from neuralign.config import AttackSpec, ExperimentConfig, validate_config
from neuralign.pipeline import run_all


def tiny_config() -> ExperimentConfig:
    """A few-second experiment; unit tests assert mechanics, not margins."""
    cfg = ExperimentConfig()
    cfg.data.samples = 600
    cfg.data.input_dim = 24
    cfg.data.classes = 3
    cfg.data.holdout = 120
    cfg.model.widths = [48, 16, 8]
    cfg.model.epochs = 12
    cfg.coding.t = 20
    cfg.triggers.steps = 400
    cfg.triggers.restarts = 3
    cfg.triggers.j = 4
    cfg.watermark.bits = 16
    cfg.attacks = [
        AttackSpec(kind="np", trials=3),
        AttackSpec(kind="ftp", trials=3, epochs=1),
        AttackSpec(kind="npp", trials=3),
        AttackSpec(kind="rescale", trials=3, scale_low=0.2, scale_high=5.0),
    ]
    return validate_config(cfg)


@pytest.fixture()
def tiny_config_factory():
    return tiny_config


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """One complete pipeline run shared by every read-only test."""
    cfg = tiny_config()
    out = tmp_path_factory.mktemp("tiny_run")
    report = run_all(cfg, out)
    return cfg, out, report
