import os
import subprocess
import sys

import pytest

from bsdn import cli

SMALL = ["fig2_small", "--seed", "1", "--model", "permissioned_bc_sdn"]


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def snapshot(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run_cli("run", *SMALL, "--out", str(out)) == 0
    return out / "fig2_small_permissioned_bc_sdn_1.bsdn"


def test_run_writes_outputs(tmp_path, capsys):
    assert run_cli("run", *SMALL, "--out", str(tmp_path), "--trace") == 0
    names = sorted(os.listdir(tmp_path))
    stem = "fig2_small_permissioned_bc_sdn_1"
    assert names == [f"{stem}.bsdn", f"{stem}.csv", f"{stem}_audit.csv", f"{stem}_trace.csv"]
    assert "state_digest" in capsys.readouterr().out


def test_run_one_csv_per_model_and_seed(tmp_path):
    assert run_cli("run", "fig2_small", "--seed", "1", "--seed", "2", "--out", str(tmp_path)) == 0
    csvs = [n for n in os.listdir(tmp_path) if n.endswith(".csv") and "_audit" not in n]
    assert len(csvs) == 6


def test_missing_topology_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("name: bad\nrun: {end_time: 1}\n")
    assert run_cli("run", str(p), "--out", str(tmp_path)) == 2
    assert "topology" in capsys.readouterr().err


def test_unknown_model_exit_2(tmp_path, capsys):
    assert run_cli("run", "fig2_small", "--model", "bitcoin", "--out", str(tmp_path)) == 2
    err = capsys.readouterr().err
    assert "permissioned_bc_sdn" in err and "openflow_sdn" in err


def test_runtime_failure_exit_3(tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("engine exploded")

    monkeypatch.setattr(cli, "run", boom)
    assert run_cli("run", *SMALL, "--out", str(tmp_path)) == 3
    err = capsys.readouterr().err
    assert "scenario=fig2_small" in err and "model=permissioned_bc_sdn" in err and "seed=1" in err


def test_verify_ok(snapshot, capsys):
    assert run_cli("verify", str(snapshot)) == 0
    assert "state_digest" in capsys.readouterr().out


def test_verify_flipped_byte_exit_4(snapshot, tmp_path, capsys):
    data = bytearray(snapshot.read_bytes())
    data[len(data) // 2] ^= 0x01
    bad = tmp_path / "bad.bsdn"
    bad.write_bytes(bytes(data))
    assert run_cli("verify", str(bad)) == 4
    assert "break_at:" in capsys.readouterr().err


def test_verify_truncated_exit_2(snapshot, tmp_path):
    bad = tmp_path / "short.bsdn"
    bad.write_bytes(snapshot.read_bytes()[:-3])
    assert run_cli("verify", str(bad)) == 2


def test_verify_missing_file_exit_2(tmp_path):
    assert run_cli("verify", str(tmp_path / "nope.bsdn")) == 2


def test_replay(snapshot, capsys):
    assert run_cli("replay", str(snapshot), "--height", "0") == 0
    out = capsys.readouterr().out
    assert "height: 0" in out and "policy p1: holder=alice" in out
    assert run_cli("replay", str(snapshot)) == 0
    assert "policy p1: holder=bob" in capsys.readouterr().out
    assert run_cli("replay", str(snapshot), "--height", "9999") == 2


def test_sweep_writes_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    rc = run_cli("sweep", "fig2_small", "--param", "packet_in_rate", "--values", "10,40",
                 "--model", "permissioned_bc_sdn", "--model", "public_bc_sdn",
                 "--metric", "update_latency_mean_s", "--seed", "1", "--out", str(out))
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "packet_in_rate,permissioned_bc_sdn,public_bc_sdn,reduction_pct"
    assert len(lines) == 3


def test_sweep_default_name_in_directory(tmp_path):
    rc = run_cli("sweep", "fig2_small", "--param", "attack_rate", "--values", "0",
                 "--model", "openflow_sdn", "--seed", "1", "--out", str(tmp_path))
    assert rc == 0
    assert os.listdir(tmp_path) == ["fig2_small_sweep_attack_rate.csv"]


def test_sweep_bad_param_exit_2(tmp_path):
    assert run_cli("sweep", "fig2_small", "--param", "colour", "--values", "1", "--out", str(tmp_path)) == 2
    assert run_cli("sweep", "fig2_small", "--param", "loss", "--values", "x,y", "--out", str(tmp_path)) == 2


def _subprocess_run(out_dir):
    env = dict(os.environ, PYTHONHASHSEED="random")
    subprocess.run([sys.executable, "-m", "bsdn", "run", *SMALL, "--out", str(out_dir)],
                   check=True, env=env, capture_output=True)
    return {n: (out_dir / n).read_bytes() for n in sorted(os.listdir(out_dir))}


def test_outputs_identical_across_processes(tmp_path):
    a = _subprocess_run(tmp_path / "a")
    b = _subprocess_run(tmp_path / "b")
    assert a == b and len(a) == 3
