import csv
import json

import pytest

from spinqec.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main


@pytest.fixture
def base(tmp_path, cache_dir):
    return ["--out", str(tmp_path / "runs"), "--set", f'run.cache="{cache_dir}"',
            "--workers", "1"]


def _manifest(out, capsys):
    line = [x for x in capsys.readouterr().out.splitlines() if x.startswith("manifest: ")][-1]
    return json.loads(open(line.split(": ", 1)[1]).read())


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_zero_noise_memory(base, tmp_path, capsys):
    rc = main(["memory", *base, "--rounds", "4", "--trials", "2",
               "--noise.t2=0", "--noise.tj", "0"])
    assert rc == EXIT_OK
    m = _manifest(tmp_path, capsys)
    assert m["command"] == "memory" and m["seed"] == 1
    out = tmp_path / "runs"
    rows = _rows(out / next(o for o in m["outputs"] if o.endswith(".csv")))
    assert [float(r["mean_fidelity"]) for r in rows] == [1.0, 1.0]
    summary = json.loads((out / f"memory-{m['config_hash']}.json").read_text())
    assert summary["fit"] is None and summary["t_qec_us"] == pytest.approx(15.2)


def test_rerun_from_echoed_config_is_identical(base, tmp_path, capsys):
    args = ["memory", *base, "--rounds", "6", "--trials", "2", "--set", "noise.t2=30.0",
            "--set", "noise.tj=0", "--seed", "5"]
    assert main(args) == EXIT_OK
    m1 = _manifest(tmp_path, capsys)
    out = tmp_path / "runs"
    first = (out / f"memory-{m1['config_hash']}.csv").read_text()
    echo = out / f"memory-{m1['config_hash']}.config.toml"
    (out / f"memory-{m1['config_hash']}.csv").unlink()
    assert main(["memory", "--config", str(echo), "--workers", "1"]) == EXIT_OK
    m2 = _manifest(tmp_path, capsys)
    assert m2["config_hash"] == m1["config_hash"]
    assert (out / f"memory-{m1['config_hash']}.csv").read_text() == first


def test_config_errors_exit_2(base, capsys):
    assert main(["memory", *base, "--set", "noise.ts=0.3"]) == EXIT_CONFIG
    assert "noise.ts" in capsys.readouterr().err
    assert main(["memory", *base, "--bogus"]) == EXIT_CONFIG
    assert main(["memory", *base, "--config", "/nonexistent.toml"]) == EXIT_CONFIG


def test_missing_cache_with_abort_exits_3(tmp_path, capsys):
    rc = main(["memory", "--out", str(tmp_path / "r"), "--set", f'run.cache="{tmp_path / "c"}"',
               "--cache-policy", "abort", "--rounds", "4", "--trials", "1"])
    assert rc == EXIT_NUMERIC
    assert "library" in capsys.readouterr().err


def test_build_tables_and_schedule(base, capsys):
    assert main(["build-tables", *base, "--show-schedule"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "15.200" in out


def test_gate_fidelity(base, tmp_path, capsys):
    assert main(["gate-fidelity", *base, "--delta-omega", "0.01"]) == EXIT_OK
    m = _manifest(tmp_path, capsys)
    summary = json.loads((tmp_path / "runs" / f"gate-fidelity-{m['config_hash']}.json").read_text())
    assert summary["command"] == "gate-fidelity"


def test_ramsey_command(base, tmp_path, capsys):
    assert main(["ramsey", *base, "--trials", "20", "--set", "ramsey.points=10"]) == EXIT_OK
    assert "T2*" in capsys.readouterr().out


def test_build_library_node_count(tmp_path, capsys):
    # a coarse grid keeps the build fast; the reported count is per gate
    rc = main(["build-library", "--out", str(tmp_path / "r"), "--set",
               f'run.cache="{tmp_path / "c"}"', "--set", "noise.t2=0", "--set", "noise.tj=0"])
    assert rc == EXIT_OK
    assert "100001 detuning nodes per one-qubit gate" in capsys.readouterr().out
