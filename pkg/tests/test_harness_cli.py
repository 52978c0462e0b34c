import csv
import hashlib
import json
import math

import numpy as np
import pytest

from convhom.cli import main
from convhom.config import load_config, parse_config
from convhom.errors import HomogenizationError
from convhom.harness import (
    COLUMNS,
    emit_plot_data,
    fmt_float,
    read_results,
    run_config,
    run_epsilon_sequence,
    run_loaded,
    solve_homogenized_reference,
    to_json,
)
from convhom.kernel import EffectiveTensor

CAMPAIGN = """
schema_version = 1
experiment = "cell-campaign"
name = "small"
seeds = {{ base_seed = 3, count = {count} }}

[kernel]
family = "ball-indicator"

[environment]
kind = "checkerboard-product"
lambda1 = 1.0
lambda2 = 4.0

[grid]
d = 1
h = 0.5
K_schedule = [1.0, 2.0]
R_schedule = {R}

[probes]
monotonicity = true
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def campaign(tmp_path, count=3, R="[8.0, 16.0, 24.0]"):
    return write(tmp_path, CAMPAIGN.format(count=count, R=R))


def limit_config(d=1, z="[1.0]", env='kind = "constant"', ref='"analytic"', eps="[0.25, 0.125]"):
    return parse_config({
        "schema_version": 1, "experiment": "gamma-limit", "name": "lim", "seeds": [0],
        "kernel": {"family": "ball-indicator"}, "environment": _toml_env(env),
        "grid": {"d": d, "h": 1 / 32, "epsilon_schedule": json.loads(eps)},
        "gamma_limit": {"z": json.loads(z), "reference": json.loads(ref)},
    }, output_dir="unused")


def _toml_env(text):
    out = {}
    for line in text.splitlines():
        k, v = (s.strip() for s in line.split("="))
        out[k] = json.loads(v)
    return out


# ---------------------------------------------------------------- reference

def test_reference_identity():
    assert solve_homogenized_reference(EffectiveTensor([[1.0]]), ([0.0], [1.0]), [1.0]) == 1.0


@pytest.mark.parametrize("z", [0.5, -2.0, 3.0])
def test_reference_one_dimensional(z):
    ref = solve_homogenized_reference([[2 / 3]], ([0.0], [1.0]), [z])
    assert ref == pytest.approx(2 / 3 * z * z, rel=1e-15)


def test_reference_unit_square():
    A = EffectiveTensor(np.pi / 4 * np.eye(2))
    z = np.array([0.3, -1.1])
    assert solve_homogenized_reference(A, ([0, 0], [1, 1]), z) == pytest.approx(np.pi / 4 * z @ z, rel=1e-15)


def test_reference_rejects_indefinite():
    with pytest.raises(HomogenizationError, match="invalid-tensor"):
        solve_homogenized_reference([[1.0, 2.0], [2.0, 1.0]], ([0, 0], [1, 1]), [1, 0])


# ---------------------------------------------------------------- gamma limit

def test_epsilon_sequence_zero_datum():
    table = run_epsilon_sequence(limit_config(z="[0.0]"))
    assert table[0]["reference"] == 0.0
    assert all(row["minimum"] == 0.0 for row in table)


def test_epsilon_sequence_constant_converges():
    table = run_epsilon_sequence(limit_config(eps="[0.25, 0.125, 0.0625]"))
    gaps = [row["gap"] for row in table]
    assert [row["epsilon"] for row in table] == [0.25, 0.125, 0.0625]
    assert gaps[0] >= gaps[1] >= gaps[2]
    assert gaps[-1] / table[-1]["reference"] < 0.10


def test_epsilon_sequence_checkerboard_sandwich():
    checker = 'kind = "checkerboard-product"\nlambda1 = 1.0\nlambda2 = 4.0'
    rows = run_epsilon_sequence(limit_config(env=checker, ref='"none"'))
    const = run_epsilon_sequence(limit_config(ref='"none"'))
    for r, c in zip(rows, const):
        assert c["minimum"] * (1 - 1e-10) <= r["minimum"] <= 16 * c["minimum"] * (1 + 1e-10)


def test_epsilon_underresolved():
    with pytest.raises(HomogenizationError, match="epsilon-underresolved"):
        run_epsilon_sequence(limit_config(eps="[0.02]"))


# ---------------------------------------------------------------- config

def test_config_seed_forms_and_override(tmp_path):
    cfg = load_config(campaign(tmp_path))
    assert cfg.seeds == (3, 4, 5)
    over = load_config(campaign(tmp_path), seed_override=10)
    assert over.seeds == (10, 11, 12)
    assert over.config_hash != cfg.config_hash


def test_config_hash_ignores_output_dir(tmp_path):
    a = load_config(campaign(tmp_path), output_dir=str(tmp_path / "a"))
    b = load_config(campaign(tmp_path), output_dir=str(tmp_path / "b"))
    assert a.config_hash == b.config_hash and len(a.config_hash) == 16


def test_empty_R_schedule_rejected(tmp_path):
    p = campaign(tmp_path, R="[]")
    with pytest.raises(HomogenizationError, match=r"config-invalid: grid\.R_schedule"):
        load_config(p)
    assert main(["run", str(p)]) == 2


def test_unsupported_schema(tmp_path):
    p = write(tmp_path, CAMPAIGN.format(count=2, R="[8.0]").replace("schema_version = 1", "schema_version = 7"))
    with pytest.raises(HomogenizationError, match="unsupported-schema"):
        load_config(p)


@pytest.mark.parametrize("old,new,path", [
    ('K_schedule = [1.0, 2.0]', 'K_schedule = [2.0, 1.0]', "grid.K_schedule"),
    ('family = "ball-indicator"', 'family = "disk"', "kernel.family"),
    ('lambda1 = 1.0', 'lambda1 = 5.0', "environment"),
    ('d = 1', 'd = 4', "grid.d"),
    ('monotonicity = true', 'bogus = true', "probes"),
])
def test_invalid_fields_name_their_path(tmp_path, old, new, path):
    p = write(tmp_path, CAMPAIGN.format(count=2, R="[8.0]").replace(old, new))
    with pytest.raises(HomogenizationError) as exc:
        load_config(p)
    assert str(exc.value).startswith(f"config-invalid: {path}")


def test_shipped_presets_validate(capsys):
    from importlib import resources
    names = sorted(p.name for p in resources.files("convhom.presets").iterdir() if p.name.endswith(".toml"))
    assert len(names) >= 11
    for name in names:
        path = resources.files("convhom.presets") / name
        assert main(["validate", str(path)]) == 0
    assert "config_hash=" in capsys.readouterr().out


# ---------------------------------------------------------------- run + files

@pytest.fixture(scope="module")
def campaign_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg_path = campaign(tmp)
    out = tmp / "out"
    status = run_config(cfg_path, output_dir=str(out))
    return cfg_path, out, status


def test_run_writes_files(campaign_run):
    _, out, status = campaign_run
    assert status == 0
    assert (out / "results.csv").exists() and (out / "summary.json").exists() and (out / "run.log").exists()
    rows = read_results(out / "results.csv")
    assert tuple(rows[0].keys()) == COLUMNS
    assert len([r for r in rows if r["kind"] == "cell"]) == 2 * 3 * 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["all_probes_pass"] and "A_hom" in summary and "wall" not in json.dumps(summary)


def test_rerun_is_byte_identical(campaign_run, tmp_path):
    cfg_path, out, _ = campaign_run
    run_config(cfg_path, output_dir=str(tmp_path), workers=2)
    for name in ("results.csv", "summary.json"):
        a = hashlib.sha256((out / name).read_bytes()).hexdigest()
        b = hashlib.sha256((tmp_path / name).read_bytes()).hexdigest()
        assert a == b


def test_floats_have_17_significant_digits(campaign_run):
    _, out, _ = campaign_run
    for row in read_results(out / "results.csv"):
        if row["kind"] == "cell":
            v = float(row["value"])
            assert float(fmt_float(v)) == v
            assert row["value"] == fmt_float(v)
            assert len(row["value"].replace("-", "").replace(".", "").split("e")[0].lstrip("0")) <= 17
    assert fmt_float(2 / 3) == "0.66666666666666663"


def test_wall_times_only_in_log(campaign_run):
    _, out, _ = campaign_run
    assert "wall_s=" in (out / "run.log").read_text()
    assert "wall" not in (out / "results.csv").read_text()


def test_plot_gamma_vs_R(campaign_run):
    _, out, _ = campaign_run
    path = emit_plot_data(out / "results.csv", "gamma_vs_R")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    data = [ln for ln in lines if not ln.startswith("#")]
    assert len(data) == 3 and all(len(ln.split()) == 3 for ln in data)


def test_plot_gamma_vs_K_and_variance(campaign_run):
    _, out, _ = campaign_run
    data = [ln for ln in emit_plot_data(out / "results.csv", "gamma_vs_K").read_text().splitlines()
            if not ln.startswith("#")]
    assert len(data) == 2
    var = [ln for ln in emit_plot_data(out / "results.csv", "variance_vs_R").read_text().splitlines()
           if not ln.startswith("#")]
    assert len(var) == 3


def test_plot_variance_with_one_seed(tmp_path):
    p = campaign(tmp_path, count=1, R="[8.0, 12.0]")
    run_config(p, output_dir=str(tmp_path / "o"))
    with pytest.raises(HomogenizationError, match="insufficient-data"):
        emit_plot_data(tmp_path / "o" / "results.csv", "variance_vs_R")


def test_plot_eps_convergence_final_gap_smallest(tmp_path):
    cfg = limit_config(eps="[0.25, 0.125, 0.0625]")
    cfg = parse_config({**cfg.canonical, "output": {}}, output_dir=str(tmp_path))
    status, summary = run_loaded(cfg)
    assert status == 0 and summary["probes"]["eps-convergence"]["pass"]
    rows = [ln.split() for ln in emit_plot_data(tmp_path / "results.csv", "eps_convergence").read_text().splitlines()
            if not ln.startswith("#")]
    gaps = [float(r[2]) for r in rows]
    assert gaps[-1] == min(gaps)


def test_plot_eps_convergence_needs_limit_rows(campaign_run):
    _, out, _ = campaign_run
    with pytest.raises(HomogenizationError, match="insufficient-data"):
        emit_plot_data(out / "results.csv", "eps_convergence", out / "x.dat")


def test_to_json_roundtrip_precision():
    obj = {"a": 1 / 3, "b": [math.pi, 2], "c": None, "d": True, "e": "x"}
    back = json.loads(to_json(obj))
    assert back == obj


# ---------------------------------------------------------------- CLI

def test_cli_run_and_plot(tmp_path, capsys):
    p = campaign(tmp_path, count=2, R="[8.0, 12.0]")
    out = tmp_path / "cli"
    assert main(["run", str(p), "--output-dir", str(out), "--workers", "2", "--seed-override", "7"]) == 0
    text = capsys.readouterr().out
    assert "monotonicity: pass" in text
    rows = read_results(out / "results.csv")
    assert {r["seed"] for r in rows if r["kind"] == "cell"} == {"7", "8"}
    assert main(["plot", str(out / "results.csv"), "--kind", "gamma_vs_R"]) == 0
    assert (out / "gamma_vs_R.dat").exists()


def test_cli_global_flags_before_subcommand(tmp_path):
    p = campaign(tmp_path, count=2, R="[8.0]")
    assert main(["--output-dir", str(tmp_path / "g"), "run", str(p)]) == 0
    assert (tmp_path / "g" / "results.csv").exists()


def test_cli_failing_probe_exit_status(tmp_path, capsys):
    # a single R cannot show variance decay
    text = CAMPAIGN.format(count=2, R="[8.0]").replace("monotonicity = true", '"variance-decay" = true')
    p = write(tmp_path, text)
    assert main(["run", str(p), "--output-dir", str(tmp_path / "f")]) == 1
    assert "variance-decay: FAIL" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "missing.toml")]) == 2
    assert main(["run", str(campaign(tmp_path)), "--workers", "0"]) == 2
    err = capsys.readouterr().err
    assert "config-unreadable" in err


def test_results_columns_order(campaign_run):
    _, out, _ = campaign_run
    with open(out / "results.csv") as fh:
        header = next(csv.reader(fh))
    assert header == list(COLUMNS)
