import json
import subprocess
import sys

import pytest

from d2dtoken.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from d2dtoken.output import read_table, write_table

FIG_YAML = """
discount: 0.99
cost: 1.0
token_cap: 20
p_recv: 0.5
q_accept: 0.5
idle_prob: 0.2
traffic:
  - {label: s1, prob: 0.2, benefit: 3}
  - {label: s2, prob: 0.2, benefit: 4}
  - {label: s3, prob: 0.2, benefit: 5}
  - {label: s4, prob: 0.2, benefit: 6}
"""

MOS_YAML = """
discount: 0.95
cost: 0.4
token_cap: 8
p_recv: 0.8
q_accept: 0.8
idle_prob: 0.3
mos: {b1: 1, b2: 5, b3: 2.6949, b4: 0.0235, log_base: natural}
traffic:
  - {label: video, prob: 0.2, kind: video, d2d: {psnr: 10}, cellular: {psnr: 5}}
  - {label: elastic, prob: 0.5, kind: elastic, d2d: {throughput: 1500}, cellular: {throughput: 1000}}
"""

SMALL_YAML = """
discount: 0.9
cost: 0.5
token_cap: 4
p_recv: 0.6
q_accept: 0.6
idle_prob: 0.4
traffic:
  - {label: a, prob: 0.3, benefit: 1.0}
  - {label: b, prob: 0.3, benefit: 2.5}
"""


@pytest.fixture
def fig_config(tmp_path):
    path = tmp_path / "fig.yaml"
    path.write_text(FIG_YAML)
    return path


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_YAML)
    return path


class TestSolve:
    def test_writes_solution_and_checks(self, fig_config, tmp_path):
        out = tmp_path / "out"
        code = main(["solve", "--config", str(fig_config), "--out", str(out)])
        assert code == EXIT_OK
        kind, meta, header, rows = read_table(out / "solution.csv")
        assert kind == "d2dtoken.solution/1"
        assert header == ["type_index", "tokens", "value", "action"]
        assert len(rows) == 105
        assert meta["config"]["benefits"] == [3, 4, 5, 6]

        _, _, _, th_rows = read_table(out / "thresholds.csv")
        thresholds = {int(r[0]): int(r[2]) for r in th_rows}
        assert thresholds[4] == 1
        assert thresholds[1] >= thresholds[2] >= thresholds[3] >= thresholds[4]

        _, _, _, checks = read_table(out / "structure_checks.csv")
        assert all(r[1] == "true" for r in checks)

    def test_invalid_config_exits_2_without_output(self, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(FIG_YAML.replace("idle_prob: 0.2", "idle_prob: 0.9"))
        out = tmp_path / "out"
        assert main(["solve", "--config", str(cfg), "--out", str(out)]) == EXIT_CONFIG
        assert not out.exists()

    def test_nonconvergence_exits_3(self, fig_config, tmp_path):
        code = main(
            ["solve", "--config", str(fig_config), "--out", str(tmp_path / "o"),
             "--max-iter", "3"]
        )
        assert code == EXIT_SOLVER

    def test_mos_config_emits_benefit_report(self, tmp_path):
        cfg = tmp_path / "real.yaml"
        cfg.write_text(MOS_YAML)
        out = tmp_path / "out"
        assert main(["solve", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        _, meta, header, rows = read_table(out / "benefits.csv")
        by_label = {r[0]: r for r in rows}
        assert float(by_label["video"][2]) == pytest.approx(1.7265750217650027)
        assert by_label["video"][3] == "natural"

    def test_log_base_flag_changes_benefits(self, tmp_path):
        cfg = tmp_path / "real.yaml"
        cfg.write_text(MOS_YAML)
        out = tmp_path / "out"
        code = main(
            ["solve", "--config", str(cfg), "--out", str(out), "--log-base", "base10"]
        )
        assert code == EXIT_OK
        _, meta, _, rows = read_table(out / "benefits.csv")
        by_label = {r[0]: r for r in rows}
        assert float(by_label["elastic"][2]) == pytest.approx(0.4745483340291554)
        assert meta["config"]["mos"]["log_base"] == "base10"


class TestSweep:
    def test_beta_sweep_with_verdicts(self, small_config, tmp_path):
        out = tmp_path / "out"
        code = main(
            ["sweep", "--config", str(small_config), "--out", str(out),
             "--param", "beta", "--grid", "0.8,0.9,0.95"]
        )
        assert code == EXIT_OK
        _, meta, header, rows = read_table(out / "sweep.csv")
        assert header[0] == "beta"
        assert meta["parameter"] == "beta"
        assert len(rows) == 3 * 3  # three grid points x (idle + 2 types)
        _, _, _, verdicts = read_table(out / "sweep_verdicts.csv")
        assert all(v[5] == "true" for v in verdicts)

    def test_bad_grid_exits_2(self, small_config, tmp_path):
        code = main(
            ["sweep", "--config", str(small_config), "--out", str(tmp_path / "o"),
             "--param", "beta", "--grid", "0.9,zz"]
        )
        assert code == EXIT_CONFIG

    def test_per_point_errors_recorded(self, small_config, tmp_path):
        out = tmp_path / "out"
        code = main(
            ["sweep", "--config", str(small_config), "--out", str(out),
             "--param", "b1", "--grid", "0.5,2.6"]
        )
        assert code == EXIT_OK
        _, _, _, rows = read_table(out / "sweep.csv")
        errors = [r for r in rows if r[4]]
        assert len(errors) == 1  # 2.6 breaks the benefit ordering


class TestSimulate:
    def test_summary_and_usage(self, small_config, tmp_path):
        out = tmp_path / "out"
        code = main(
            ["simulate", "--config", str(small_config), "--out", str(out),
             "--policy", "greedy", "--slots", "5000", "--seed", "3"]
        )
        assert code == EXIT_OK
        _, meta, _, rows = read_table(out / "sim_summary.csv")
        assert rows[0][0] == "greedy"
        assert int(rows[0][1]) == 5000
        _, _, _, usage = read_table(out / "token_usage.csv")
        assert len(usage) == 2
        assert not (out / "trace.csv").exists()

    def test_full_trace_flag(self, small_config, tmp_path):
        out = tmp_path / "out"
        code = main(
            ["simulate", "--config", str(small_config), "--out", str(out),
             "--slots", "50", "--full-trace"]
        )
        assert code == EXIT_OK
        _, _, header, rows = read_table(out / "trace.csv")
        assert len(rows) == 50
        assert header == ["slot", "type_index", "tokens", "action", "event", "reward", "token_delta"]


class TestNetwork:
    def test_rates_and_conservation(self, small_config, tmp_path):
        out = tmp_path / "out"
        code = main(
            ["network", "--config", str(small_config), "--out", str(out),
             "--ues", "6", "--slots", "2000", "--policy", "optimal"]
        )
        assert code == EXIT_OK
        _, meta, _, rows = read_table(out / "network_rates.csv")
        assert len(rows) == 6
        assert meta["tokens_conserved"] is True
        assert meta["clipped_transfers"] == 0

    def test_fixed_point_report(self, small_config, tmp_path):
        out = tmp_path / "out"
        code = main(
            ["network", "--config", str(small_config), "--out", str(out),
             "--ues", "4", "--slots", "800", "--fixed-point-rounds", "2"]
        )
        assert code == EXIT_OK
        _, meta, _, rows = read_table(out / "fixed_point.csv")
        assert 1 <= len(rows) <= 2
        assert "converged" in meta


class TestLearn:
    def test_writes_qtable_curve_and_agreement(self, small_config, tmp_path):
        out = tmp_path / "out"
        code = main(
            ["learn", "--config", str(small_config), "--out", str(out),
             "--slots", "20000", "--seed", "1"]
        )
        assert code == EXIT_OK
        _, _, header, rows = read_table(out / "qtable.csv")
        assert header == ["type_index", "tokens", "action", "q", "visits"]
        # full table minus one impossible action per forced state
        assert len(rows) == 3 * 5 * 2 - 2 - 1
        _, _, _, curve = read_table(out / "training_curve.csv")
        assert len(curve) > 10
        _, _, _, summary = read_table(out / "learn_summary.csv")
        assert 0.0 <= float(summary[0][2]) <= 1.0
        assert (out / "learned_policy.csv").exists()


class TestCompare:
    def test_runs_summary_and_usage(self, small_config, tmp_path):
        out = tmp_path / "out"
        code = main(
            ["compare", "--config", str(small_config), "--out", str(out),
             "--grid", "0.5,0.9", "--seeds", "3", "--slots", "4000",
             "--compare-slots", "2000", "--seed", "5"]
        )
        assert code == EXIT_OK
        _, _, _, runs = read_table(out / "compare_runs.csv")
        assert len(runs) == 2 * 3 * 2  # betas x seeds x policies
        _, _, header, summary = read_table(out / "compare_summary.csv")
        assert header == ["beta", "optimal_mean", "greedy_mean", "gap", "pooled_se"]
        assert len(summary) == 2
        _, _, _, usage = read_table(out / "token_usage_compare.csv")
        assert {r[0] for r in usage} == {"optimal", "greedy"}


class TestPlumbing:
    def test_out_dir_env_var(self, small_config, tmp_path, monkeypatch, capsys):
        target = tmp_path / "envout"
        monkeypatch.setenv("D2DTOKEN_OUT", str(target))
        code = main(["simulate", "--config", str(small_config), "--slots", "20"])
        assert code == EXIT_OK
        assert (target / "sim_summary.csv").exists()

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG

    def test_module_entry_point(self, small_config, tmp_path):
        out = tmp_path / "out"
        proc = subprocess.run(
            [sys.executable, "-m", "d2dtoken.cli", "simulate",
             "--config", str(small_config), "--out", str(out), "--slots", "30"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert "average utility" in proc.stdout


class TestOutputHelpers:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "t.csv"
        meta = {"alpha": 1, "nested": {"x": [1, 2]}}
        write_table(path, "demo", meta, ["a", "b"], [[1, 2.5], [True, "x"]])
        kind, got_meta, header, rows = read_table(path)
        assert kind == "d2dtoken.demo/1"
        assert got_meta == meta
        assert header == ["a", "b"]
        assert rows == [["1", "2.5"], ["true", "x"]]

    def test_floats_are_compact_and_stable(self, tmp_path):
        path = tmp_path / "f.csv"
        write_table(path, "demo", {}, ["v"], [[0.1 + 0.2]])
        text = path.read_text()
        assert "0.3\n" in text
        assert json.loads("{}") == {}
