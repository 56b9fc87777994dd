import json
import runpy
import shutil
import sys
import tempfile
from pathlib import Path

import pytest

from htlcsim import (
    CHANNELS_FILE,
    ENDPOINTS_FILE,
    PAYMENTS_FILE,
    PEERS_FILE,
    RAW_PAYMENT_DATA_FILE,
    STATISTICS_FILE,
)
from htlcsim.cli import main

LINE3_DIR = Path(__file__).parent / "data" / "line3"
ALL_FILES = (
    PEERS_FILE,
    CHANNELS_FILE,
    ENDPOINTS_FILE,
    PAYMENTS_FILE,
    RAW_PAYMENT_DATA_FILE,
    STATISTICS_FILE,
)
SMALL_RUN = ["--peers", "30", "--n-payments", "200", "--batches", "5", "--seed", "7"]


def read_all(dirpath: Path):
    return {name: (dirpath / name).read_bytes() for name in ALL_FILES}


def test_generate_writes_the_network_and_payments():
    with tempfile.TemporaryDirectory() as tmp_folder:
        out = Path(tmp_folder) / "net"
        main(["generate", "--out", str(out), "--peers", "20", "--n-payments", "50"])
        for name in (PEERS_FILE, CHANNELS_FILE, ENDPOINTS_FILE, PAYMENTS_FILE):
            assert (out / name).is_file()
        assert (out / PEERS_FILE).read_text().splitlines()[-1] == "19"
        assert len((out / PAYMENTS_FILE).read_text().splitlines()) == 51


def test_simulate_the_three_peer_fixture():
    with tempfile.TemporaryDirectory() as tmp_folder:
        out = Path(tmp_folder)
        main(
            [
                "simulate",
                "--in",
                str(LINE3_DIR),
                "--out",
                str(out),
                "--latency-min",
                "50",
                "--latency-max",
                "50",
            ]
        )
        lines = (out / RAW_PAYMENT_DATA_FILE).read_text().splitlines()
    assert len(lines) == 2
    assert lines[1] == "0,0,2,100000,0,200,success,none,1,false,0-1"


def test_uncooperation_is_a_simulation_option_not_a_generation_one():
    with pytest.raises(SystemExit) as excinfo:
        main(["generate", "--out", "unused", "--p-uncoop-before", "0.1"])
    assert excinfo.value.code == 2


def test_analyze_with_too_few_rows_exits_with_an_error(capsys):
    with tempfile.TemporaryDirectory() as tmp_folder:
        out = Path(tmp_folder)
        main(["simulate", "--in", str(LINE3_DIR), "--out", str(out)])
        with pytest.raises(SystemExit) as excinfo:
            main(["analyze", "--in", str(out)])
    assert excinfo.value.code == 1
    assert "batches" in capsys.readouterr().err


def test_invalid_input_exits_with_an_error(capsys):
    with tempfile.TemporaryDirectory() as tmp_folder:
        dirpath = Path(tmp_folder) / "line3"
        shutil.copytree(LINE3_DIR, dirpath)
        (dirpath / PEERS_FILE).write_text("id\n0\n1\n")
        with pytest.raises(SystemExit) as excinfo:
            main(["simulate", "--in", str(dirpath)])
    assert excinfo.value.code == 1
    assert "unknown peer 2" in capsys.readouterr().err

    with pytest.raises(SystemExit) as excinfo:
        main(["generate", "--out", "unused", "--defaults-from", "no_such_preset"])
    assert excinfo.value.code == 1


def test_run_prints_a_summary_and_is_deterministic(capsys):
    with tempfile.TemporaryDirectory() as tmp_folder:
        out1, out2 = Path(tmp_folder) / "a", Path(tmp_folder) / "b"
        main(["run", "--out", str(out1), *SMALL_RUN])
        summary = capsys.readouterr().out
        main(["run", "--out", str(out2), *SMALL_RUN])
        assert read_all(out1) == read_all(out2)
        statistics = json.loads((out1 / STATISTICS_FILE).read_text())

    assert "P(success)" in summary and "route length" in summary
    assert summary.splitlines()[0].split() == ["measure", "mean", "ci95_low", "ci95_high"]
    assert statistics["config"]["peers"] == 30
    assert statistics["p_success"]["n_batches"] == 5
    probability_sum = sum(
        statistics[name]["mean"]
        for name in (
            "p_success",
            "p_fail_no_route",
            "p_fail_unbalanced",
            "p_fail_uncooperative",
            "p_fail_timeout",
            "p_unknown",
        )
    )
    assert probability_sum == pytest.approx(1.0, abs=1e-9)


def test_run_equals_the_three_phases_chained():
    with tempfile.TemporaryDirectory() as tmp_folder:
        tmp = Path(tmp_folder)
        config = tmp / "htlcsim.cfg"
        config.write_text(
            "seed = 3\npeers = 40\nn-payments = 300\nbatches = 6\np_uncoop_before = 0.02\n"
        )
        main(["run", "--out", str(tmp / "run"), "--config", str(config)])
        chained = tmp / "chained"
        main(["generate", "--out", str(chained), "--config", str(config)])
        main(["simulate", "--in", str(chained), "--config", str(config)])
        main(["analyze", "--in", str(chained), "--config", str(config)])
        assert read_all(tmp / "run") == read_all(chained)


def test_replicas_run_with_consecutive_seeds(capsys):
    with tempfile.TemporaryDirectory() as tmp_folder:
        out = Path(tmp_folder)
        main(["run", "--out", str(out), "--runs", "2", *SMALL_RUN])
        summary = capsys.readouterr().out
        for r in range(2):
            assert (out / f"run-{r}" / STATISTICS_FILE).is_file()
        seeds = [
            json.loads((out / f"run-{r}" / STATISTICS_FILE).read_text())["config"]["seed"]
            for r in range(2)
        ]
        assert (out / "run-0" / PAYMENTS_FILE).read_bytes() != (
            out / "run-1" / PAYMENTS_FILE
        ).read_bytes()
    assert seeds == [7, 8]
    assert "run-0 (seed 7)" in summary and "run-1 (seed 8)" in summary


def test_the_package_runs_as_a_module(monkeypatch):
    with tempfile.TemporaryDirectory() as tmp_folder:
        out = Path(tmp_folder) / "net"
        argv = ["htlcsim", "generate", "--out", str(out), "--peers", "5", "--n-payments", "3"]
        monkeypatch.setattr(sys, "argv", argv)
        runpy.run_module("htlcsim", run_name="__main__")
        assert len((out / PAYMENTS_FILE).read_text().splitlines()) == 4
