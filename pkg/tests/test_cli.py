import json

import pytest

from vfx import cli, experiments


def run(argv, capsys=None):
    code = cli.main(argv)
    out = capsys.readouterr() if capsys else None
    return code, out


def test_describe_lists_keys(capsys):
    code, out = run(["describe", "fixed-point"], capsys)
    assert code == 0
    assert "fixed-point.eps_bar = 0.01" in out.out


def test_describe_unknown_lists_valid_names(capsys):
    code, out = run(["describe", "nonsense"], capsys)
    assert code == 2
    assert "adjointness" in out.err and "verify-all" in out.err


def test_every_subcommand_has_defaults_and_a_description():
    defaults = cli.load_defaults()
    assert set(experiments.RUNNERS) == set(experiments.DESCRIPTIONS)
    assert set(experiments.RUNNERS) <= set(defaults)


def test_unknown_flag_is_a_usage_error(capsys):
    code, _ = run(["adjointness", "--bogus"], capsys)
    assert code == 2


@pytest.mark.parametrize(
    "text, suffix, path",
    [
        ("[adjointness]\ntrialz = 3\n", ".toml", "adjointness.trialz"),
        ('{"adjointness": {"trials": "many"}}', ".json", "adjointness.trials"),
        ('{"adjointness": {"cases": [[4.0, 3]]}}', ".json", "adjointness.cases[0]"),
        ('{"nonsense": {}}', ".json", "nonsense"),
        ("seed = 1.5\n", ".toml", "seed"),
        ("[adjointness\n", ".toml", "invalid TOML"),
    ],
)
def test_schema_violations_name_the_key_path(tmp_path, capsys, text, suffix, path):
    cfg = tmp_path / f"c{suffix}"
    cfg.write_text(text)
    code, out = run(["adjointness", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 2
    assert path in out.err


def test_missing_config_file(tmp_path, capsys):
    code, out = run(["adjointness", "--config", str(tmp_path / "nope.toml")], capsys)
    assert code == 2 and "not found" in out.err


def test_resolved_config_is_stamped(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"adjointness": {"trials": 5, "cases": [[2, 2, 1]]}}))
    out = tmp_path / "run"
    assert cli.main(["adjointness", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    stamped = json.loads((out / "config.json").read_text())
    assert stamped["seed"] == 3
    assert stamped["adjointness"]["trials"] == 5
    assert stamped["adjointness"]["cases"] == [[2.0, 2, 1.0]]
    assert stamped["adjointness"]["tolerance"] == 1e-10
    assert {"numpy", "scipy", "python"} <= set(json.loads((out / "versions.json").read_text()))
    assert json.loads((out / "report.json").read_text())["passed"] is True
    # the stamped config reproduces the run
    again = tmp_path / "again"
    assert cli.main(["adjointness", "--config", str(out / "config.json"), "--out", str(again)]) == 0
    assert (again / "defects.csv").read_bytes() == (out / "defects.csv").read_bytes()


def test_simulate_is_byte_deterministic(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[simulate]\nn_paths = 5\nt_final = 0.02\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(a), "--seed", "11"]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(b), "--seed", "11", "--workers", "2"]) == 0
    data = (a / "paths.csv").read_bytes()
    assert data == (b / "paths.csv").read_bytes()
    assert data.splitlines()[0] == b"path,time,kx,ky,re,im"
    c = tmp_path / "c"
    cli.main(["simulate", "--config", str(cfg), "--out", str(c), "--seed", "12"])
    assert (c / "paths.csv").read_bytes() != data


def test_sample_measure_writes_a_readable_snapshot(tmp_path):
    from vfx.torus import read_snapshot

    cfg = tmp_path / "c.toml"
    cfg.write_text("[sample-measure]\nsamples = 500\n")
    assert cli.main(["sample-measure", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    field = read_snapshot(tmp_path / "sample0.vfld")
    assert field.lattice.m == 4.0
    assert (tmp_path / "mode_variance.csv").read_text().startswith("kx,ky,empirical_var")


def test_failing_check_exits_one(tmp_path):
    # an impossible tolerance turns the adjointness check red
    cfg = tmp_path / "c.toml"
    cfg.write_text("[adjointness]\ntrials = 3\ntolerance = 0.0\ncases = [[2.0, 2, 1.0]]\n")
    assert cli.main(["adjointness", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_worker_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("VFX_WORKERS", "2")
    cfg = tmp_path / "c.toml"
    cfg.write_text("[simulate]\nn_paths = 2\nt_final = 0.01\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
