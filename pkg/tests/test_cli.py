"""Command line behavior: stage chaining, exit codes, verify output."""

import json
import shutil

import numpy as np
import pytest

from neuralign.cli import EXIT_INTEGRITY, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION, main
from neuralign.config import config_to_dict, save_config
from neuralign.network import init_network
from neuralign.pipeline import CONFIG_FILE, MODEL_FILE, RECORD_FILE, CODEBOOK_FILE, trigger_file
from neuralign.serialize import read_container, save_model, write_container


@pytest.fixture()
def cfg_file(tiny_config_factory, tmp_path):
    path = tmp_path / "cfg.json"
    save_config(tiny_config_factory(), path)
    return path


def test_full_stage_chain(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    base = ["--config", str(cfg_file), "--out", str(out)]
    assert main(["train", *base]) == EXIT_OK
    assert "watermark ber 0.0000" in capsys.readouterr().out
    assert main(["encode", *base]) == EXIT_OK
    text = capsys.readouterr().out
    assert "N\\T" in text and "codebook:" in text and "fold gap" in text
    assert main(["forge", *base, "--mode", "t1"]) == EXIT_OK
    assert "forged t1:" in capsys.readouterr().out
    assert main(["attack", *base, "--kind", "np", "--trials", "2"]) == EXIT_OK
    assert "attacked np: 2 trials" in capsys.readouterr().out
    assert main(["align", *base, "--kind", "np", "--mode", "t1"]) == EXIT_OK
    assert "aligned np/t1" in capsys.readouterr().out
    assert main(["report", *base]) == EXIT_OK
    assert "report written" in capsys.readouterr().out
    assert (out / "report.json").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["attacks"][0]["kind"] == "np"
    assert report["attacks"][0]["trials"] == 2  # --trials overrode the config


def test_config_echo_fallback(cfg_file, tmp_path, capsys):
    """Later stages pick the config back up from the run directory."""
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
    assert (out / CONFIG_FILE).exists()
    assert main(["encode", "--out", str(out)]) == EXIT_OK
    capsys.readouterr()


def test_seed_override_lands_in_echo(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--out", str(out), "--seed", "77"]) == EXIT_OK
    echo = json.loads((out / CONFIG_FILE).read_text())
    assert echo["seed"] == 77
    capsys.readouterr()


def test_verify_plain_and_aligned(tiny_run, capsys):
    _, out, _ = tiny_run
    model, record = str(out / MODEL_FILE), str(out / RECORD_FILE)
    assert main(["verify", "--model", model, "--record", record]) == EXIT_OK
    plain = json.loads(capsys.readouterr().out)
    assert plain == {"accepted": True, "aligned": False, "ber": 0.0}

    suspect = str(out / "suspects" / "np" / "trial_000.naf")
    assert main(["verify", "--model", suspect, "--record", record]) == EXIT_OK
    rejected = json.loads(capsys.readouterr().out)
    assert not rejected["accepted"] and rejected["ber"] > 0.15

    assert main([
        "verify", "--model", suspect, "--record", record,
        "--triggers", str(out / trigger_file("t1")), "--codebook", str(out / CODEBOOK_FILE),
    ]) == EXIT_OK
    aligned = json.loads(capsys.readouterr().out)
    assert aligned["accepted"] and aligned["aligned"] and aligned["ber"] == 0.0


def test_verify_needs_both_alignment_files(tiny_run, capsys):
    _, out, _ = tiny_run
    code = main([
        "verify", "--model", str(out / MODEL_FILE), "--record", str(out / RECORD_FILE),
        "--triggers", str(out / trigger_file("t1")),
    ])
    assert code == EXIT_VALIDATION
    assert "both" in capsys.readouterr().err


def test_verify_refuses_destroyed_layer(tiny_run, tmp_path, capsys):
    cfg, out, _ = tiny_run
    stranger = init_network(cfg.data.input_dim, [8, 5, cfg.data.classes], seed=0)
    path = tmp_path / "stranger.naf"
    save_model(stranger, path)
    code = main([
        "verify", "--model", str(path), "--record", str(out / RECORD_FILE),
        "--triggers", str(out / trigger_file("t1")), "--codebook", str(out / CODEBOOK_FILE),
    ])
    assert code == EXIT_INTEGRITY
    refusal = json.loads(capsys.readouterr().out)
    assert refusal["refused"] and "neurons" in refusal["cause"]


def test_corrupt_container_exits_2(tiny_run, tmp_path, capsys):
    _, out, _ = tiny_run
    broken = tmp_path / "broken.naf"
    raw = bytearray((out / MODEL_FILE).read_bytes())
    raw[40] ^= 0xFF
    broken.write_bytes(bytes(raw))
    code = main(["verify", "--model", str(broken), "--record", str(out / RECORD_FILE)])
    assert code == EXIT_INTEGRITY
    assert "integrity error" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path, capsys):
    code = main(["verify", "--model", str(tmp_path / "nope.naf"),
                 "--record", str(tmp_path / "nope.nar")])
    assert code == EXIT_VALIDATION
    assert "missing file" in capsys.readouterr().err


def test_bad_config_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"coding": {"k": 1}}')
    code = main(["train", "--config", str(bad), "--out", str(tmp_path / "run")])
    assert code == EXIT_VALIDATION
    assert "coding.k" in capsys.readouterr().err


def test_unsatisfiable_codebook_exits_3(tiny_run, tiny_config_factory, tmp_path, capsys):
    """16 neurons cannot get distinct 3-symbol binary words: numeric failure."""
    _, out, _ = tiny_run
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    cfg = tiny_config_factory()
    cfg.coding.t = 3
    bad = tmp_path / "short.json"
    save_config(cfg, bad)
    code = main(["encode", "--config", str(bad), "--out", str(copy)])
    assert code == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


def test_align_without_triggers_exits_1(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
    capsys.readouterr()
    code = main(["align", "--config", str(cfg_file), "--out", str(out)])
    assert code == EXIT_VALIDATION
    assert "forge first" in capsys.readouterr().err


def test_capacity_table_output(capsys):
    assert main(["capacity-table"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    rows = {int(l.split()[0]): [int(x) for x in l.split()[1:]] for l in lines[2:]}
    assert rows[64] == [4, 12, 21, 29, 38, 47, 56, 65]
    assert rows[128] == [4, 11, 20, 28, 37, 46, 55, 64]


def test_capacity_table_rejects_bad_k(capsys):
    assert main(["capacity-table", "--k", "1"]) == EXIT_VALIDATION
    assert "invalid input" in capsys.readouterr().err
