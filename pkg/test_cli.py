#!/usr/bin/env python3
"""
Test the command line, manifests, replay and figure emission
"""

import json
import math

import numpy as np
import pytest

from scripts.verify_manifest import evaluate
from src.cli import build_parser, parse_lambdas, replay_directory, run
from src.errors import ConfigError
from src.persistence import read_csv, sha256_file
from src.quantum import read_snapshot
from src.svg_utils import plot_series

SMOKE = ["--profile", "smoke", "--quiet"]


def manifest_of(directory):
    return json.loads((directory / "manifest.json").read_text(encoding="utf-8"))


def test_parse_lambdas_range_and_list():
    assert parse_lambdas("0:0.05:0.2") == [0.0, 0.05, 0.1, 0.15, 0.2]
    assert parse_lambdas("0.3, 0.1") == [0.1, 0.3]
    assert parse_lambdas("0.25") == [0.25]


@pytest.mark.parametrize("text", ["0:0:1", "0:1", "1:0.1:0", "a,b", "", "0:x:1"])
def test_parse_lambdas_rejects(text):
    with pytest.raises(ConfigError):
        parse_lambdas(text)


def test_parser_knows_every_subcommand():
    parser = build_parser()
    for command in (["poincare"], ["lyapunov"], ["evolve", "--seed", "a"], ["autocorr", "--seed", "c"],
                    ["revival-scan"], ["floquet"], ["reproduce-figure", "3"]):
        assert parser.parse_args(command).command == command[0]
    with pytest.raises(SystemExit):
        parser.parse_args(["reproduce-figure", "5"])


def test_missing_subcommand_is_a_usage_error(capsys):
    assert run([]) == 2
    assert "subcommand" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    status = run(["evolve", "--seed", "a", "--set", "physics.kapa=1", "--out", str(tmp_path)] + SMOKE)
    assert status == 2
    assert "kapa" in capsys.readouterr().err
    assert not (tmp_path / "manifest.json").exists()


def test_bad_seed_exits_2(tmp_path):
    assert run(["evolve", "--seed", "q", "--out", str(tmp_path)] + SMOKE) == 2


def test_packet_leaving_the_box_exits_3(tmp_path, capsys):
    status = run(["evolve", "--seed", "75,5", "--set", "grid.t_total=4", "--out", str(tmp_path)] + SMOKE)
    assert status == 3
    assert "BoxTooSmallError" in capsys.readouterr().err
    assert not (tmp_path / "manifest.json").exists()


@pytest.fixture(scope="module")
def evolve_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("evolve")
    status = run(["evolve", "--seed", "a", "--set", "grid.t_total=20", "--out", str(out)] + SMOKE)
    assert status == 0
    return out


def test_evolve_outputs(evolve_run):
    names = {p.name for p in evolve_run.iterdir()}
    for name in ("autocorr.csv", "expectations.csv", "evolve.json", "evolve.svg", "manifest.json",
                 "psi_000.bin", "psi_004.bin", "density_000.csv", "density_004.csv"):
        assert name in names
    summary = json.loads((evolve_run / "evolve.json").read_text(encoding="utf-8"))
    assert summary["seed_id"] == "a"
    assert summary["E0"] == pytest.approx(14.5 + 0.5 * 1.45 ** 2 + 0.25, abs=1e-3)
    # packet a bounces once per two drive periods
    assert summary["t_cl_hint"] == pytest.approx(4 * math.pi, rel=1e-12)
    # 20 time units are shorter than three bounce periods
    assert summary["revival"] is None
    header, rows = read_csv(evolve_run / "autocorr.csv")
    assert header == ["t", "C2"]
    assert float(rows[0][1]) == 1.0
    assert all(0.0 <= float(r[1]) <= 1.0 for r in rows)


def test_evolve_snapshots_are_normalized(evolve_run):
    psi, kbar = read_snapshot(evolve_run / "psi_004.bin")
    assert kbar == 1.0
    assert psi.grid.n == 1024
    assert psi.norm == pytest.approx(1.0, abs=1e-10)
    assert psi.t > 19.0


def test_manifest_lists_outputs_with_digests(evolve_run):
    manifest = manifest_of(evolve_run)
    assert manifest["command"][0] == "evolve"
    assert manifest["config"]["grid"]["t_total"] == 20
    assert manifest["version"]
    paths = [entry["path"] for entry in manifest["outputs"]]
    assert paths == sorted(paths)
    assert "manifest.json" not in paths
    for entry in manifest["outputs"]:
        assert sha256_file(evolve_run / entry["path"]) == entry["sha256"]


def test_replay_reproduces_outputs(evolve_run, tmp_path):
    status = run(["--from-manifest", str(evolve_run / "manifest.json"), "--out", str(tmp_path), "--quiet"])
    assert status == 0
    for entry in manifest_of(evolve_run)["outputs"]:
        assert sha256_file(tmp_path / entry["path"]) == entry["sha256"], entry["path"]


def test_replay_without_out_leaves_the_recorded_run_alone(evolve_run):
    before = {p.name: sha256_file(p) for p in evolve_run.iterdir()}
    target = replay_directory(evolve_run)
    assert target == evolve_run.resolve().with_name(f"{evolve_run.name}_replay")
    status = run(["--from-manifest", str(evolve_run / "manifest.json"), "--quiet"])
    assert status == 0
    assert {p.name: sha256_file(p) for p in evolve_run.iterdir()} == before
    for entry in manifest_of(evolve_run)["outputs"]:
        assert sha256_file(target / entry["path"]) == entry["sha256"], entry["path"]
    assert replay_directory(evolve_run) == target.with_name(f"{evolve_run.name}_replay2")


def test_verify_manifest_verdict(evolve_run, tmp_path):
    verdict, metrics = evaluate(evolve_run / "manifest.json", tmp_path, verbose=False)
    assert verdict
    assert metrics["exit_status"] == 0
    assert set(metrics["outputs"].values()) == {"ok"}


def test_replay_of_missing_manifest_exits_2(tmp_path):
    assert run(["--from-manifest", str(tmp_path / "nope.json")]) == 2


def test_poincare_table(tmp_path):
    status = run(["poincare", "--seed", "a", "--seed", "b", "--set", "classical.n_periods=3",
                  "--out", str(tmp_path)] + SMOKE)
    assert status == 0
    header, rows = read_csv(tmp_path / "poincare.csv")
    assert header == ["seed_id", "n", "z", "p"]
    assert len(rows) == 8
    assert rows[0] == ["a", "0", "14.5", "1.45"]
    assert (tmp_path / "poincare.svg").read_bytes().startswith(b"<?xml")


def test_figure_one_layout(tmp_path):
    status = run(["reproduce-figure", "1", "--set", "classical.n_periods=4", "--out", str(tmp_path)] + SMOKE)
    assert status == 0
    summary = json.loads((tmp_path / "poincare.json").read_text(encoding="utf-8"))
    assert len(summary["seeds"]) == 25
    svg = (tmp_path / "figure1.svg").read_text(encoding="utf-8")
    assert "<svg" in svg


def test_figure_two_panels(tmp_path):
    status = run(["reproduce-figure", "2", "--set", "grid.t_total=40", "--out", str(tmp_path)] + SMOKE)
    assert status == 0
    for seed in "abcd":
        report = json.loads((tmp_path / f"revival_{seed}.json").read_text(encoding="utf-8"))
        assert report["seed_id"] == seed
        assert report["t_cl_hint"] == pytest.approx(4 * math.pi, rel=1e-12)
        assert "envelope_revival_threshold" in report["thresholds"]
        assert 0.0 <= report["revival_height"] <= 1.0
        assert (tmp_path / f"autocorr_{seed}.csv").exists()
    assert (tmp_path / "figure2.svg").exists()


def test_floquet_small_grid(tmp_path):
    status = run(["floquet", "--set", "floquet.n=128", "--set", "physics.lambda=0",
                  "--out", str(tmp_path)] + SMOKE)
    assert status == 0
    header, rows = read_csv(tmp_path / "spectrum.csv")
    assert header == ["index", "quasi_energy", "island_weight", "stochastic_weight"]
    assert len(rows) == 128
    assert np.load(tmp_path / "monodromy.npy").shape == (128, 128)
    document = json.loads((tmp_path / "floquet.json").read_text(encoding="utf-8"))
    assert document["unitarity_error"] < 1e-8
    assert len(document["static_match"]["energies"]) == 20
    assert document["chain"] == 1


def test_svg_is_deterministic(tmp_path):
    panels = [{"label": "(a)", "x": [0.0, 1.0, 2.0], "y": [1.0, 0.4, 0.9], "ylabel": "C^2"}]
    first = plot_series(tmp_path / "one.svg", panels, title="check").read_bytes()
    second = plot_series(tmp_path / "two.svg", panels, title="check").read_bytes()
    assert first == second


def test_svg_of_single_point_series(tmp_path):
    path = plot_series(tmp_path / "point.svg", [{"label": "(b)", "x": [0.0], "y": [1.0]}])
    assert path.read_bytes().startswith(b"<?xml")


def test_lyapunov_table(tmp_path):
    status = run(["lyapunov", "--seed", "a", "--seed", "e", "--set", "classical.lyapunov_periods=200",
                  "--set", "classical.min_lyapunov_periods=100", "--out", str(tmp_path)] + SMOKE)
    assert status == 0
    header, rows = read_csv(tmp_path / "lyapunov.csv")
    assert header == ["seed_id", "T", "exponent", "classification"]
    assert [r[0] for r in rows] == ["a", "e"]
    document = json.loads((tmp_path / "lyapunov.json").read_text(encoding="utf-8"))
    assert len(document["entries"][0]["convergence"]) == 1


def test_revival_scan_table(tmp_path):
    status = run(["revival-scan", "--seed", "f", "--lambdas", "0,0.3", "--set", "revival.scan_horizon=60",
                  "--out", str(tmp_path)] + SMOKE)
    assert status == 0
    document = json.loads((tmp_path / "revival_scan.json").read_text(encoding="utf-8"))
    assert [e["lambda"] for e in document["entries"]] == [0.0, 0.3]
    assert document["entries"][0]["predicted_time"] == pytest.approx(document["T0"])
    assert all(e["error"] is None for e in document["entries"])
    assert (tmp_path / "revival_scan.svg").exists()


def test_lyapunov_table_keeps_going_past_a_diverged_seed(tmp_path):
    status = run(["lyapunov", "--seed", "a", "--seed", "15,30", "--set", "classical.lyapunov_periods=200",
                  "--set", "classical.min_lyapunov_periods=100", "--set", "classical.divergence_cutoff=100",
                  "--set", "classical.zero_threshold=-1.0", "--set", "classical.chaotic_threshold=-0.5",
                  "--out", str(tmp_path)] + SMOKE)
    assert status == 0
    header, rows = read_csv(tmp_path / "lyapunov.csv")
    assert [r[3] for r in rows] == ["chaotic", "diverged"]
    document = json.loads((tmp_path / "lyapunov.json").read_text(encoding="utf-8"))
    lost = document["entries"][1]
    assert lost["exponent"] is None
    assert lost["diverged_at"] == 0.0
