import csv
import json
import subprocess
import sys

import pytest

from tlpsim.cli import main, replay_manifest


def run_cli(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out-dir", str(out)])
    return code, out


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


class TestPriceCommands:
    def test_zero_volatility_prices_at_par(self, tmp_path):
        code, out = run_cli(tmp_path, "price", "--close", "100",
                            "--sigma-annual", "0", "--ltv", "0.9")
        assert code == 0
        result = read_json(out / "price.json")
        assert result["tlp_exact"] == 0.0
        assert result["fair_price"] == 100.0
        assert result["band_upper"] == 100.0

    def test_price_csv_format(self, tmp_path):
        code, out = run_cli(tmp_path, "price", "--close", "100", "--format", "csv")
        assert code == 0
        rows = read_csv(out / "price.csv")
        assert rows[0] == ["put_value", "tlp_exact", "tlp_approx", "pi", "ell",
                           "fair_price", "band_lower", "band_upper"]

    def test_band(self, tmp_path):
        code, out = run_cli(tmp_path, "band", "--close", "50",
                            "--pi", "0.02", "--ell", "0.10")
        assert code == 0
        result = read_json(out / "band.json")
        assert result["band_lower"] == pytest.approx(49.9, rel=1e-12)
        assert result["band_upper"] == 50.0

    def test_ltv_max_median_budget(self, tmp_path):
        code, out = run_cli(tmp_path, "ltv-max", "--epsilon", "0.5",
                            "--mu-annual", "0")
        assert code == 0
        assert read_json(out / "ltv_max.json")["max_ltv"] == 1.0

    def test_term_structure_zero_row(self, tmp_path):
        code, out = run_cli(tmp_path, "term-structure", "--sigma-daily", "0,0.02",
                            "--days", "1,2,3")
        assert code == 0
        rows = read_csv(out / "term_structure.csv")
        assert rows[1][1:] == ["0", "0", "0"]
        high = [float(v) for v in rows[2][1:]]
        assert high == sorted(high)


class TestSimulateAndReplay:
    def test_fixed_seed_runs_are_byte_identical(self, tmp_path):
        args = ["simulate", "--preset", "base", "--seed", "7"]
        _, out_a = run_cli(tmp_path, *args, name="a")
        _, out_b = run_cli(tmp_path, *args, name="b")
        for name in ("simulate_days.csv", "simulate_days.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_manifest_lists_outputs_and_seed(self, tmp_path):
        _, out = run_cli(tmp_path, "simulate", "--preset", "base", "--seed", "21")
        manifest = read_json(out / "manifest.json")
        assert manifest["command"] == "simulate"
        assert 21 in manifest["seeds"]
        assert set(manifest["outputs"]) == {"simulate_days.csv", "simulate_days.json"}
        for name in manifest["outputs"]:
            assert (out / name).exists()

    def test_manifest_replay_reproduces_outputs(self, tmp_path):
        _, out = run_cli(tmp_path, "simulate", "--preset", "news_crash_week")
        replay_dir = tmp_path / "replayed"
        assert replay_manifest(out / "manifest.json", replay_dir) == 0
        for name in read_json(out / "manifest.json")["outputs"]:
            assert (out / name).read_bytes() == (replay_dir / name).read_bytes()

    def test_static_policy_override(self, tmp_path):
        _, out = run_cli(tmp_path, "simulate", "--preset", "base",
                         "--policy", "static", "--initial-ltv", "0.9",
                         "--n-days", "10")
        rows = read_csv(out / "simulate_days.csv")
        header = rows[0]
        ltv_col = header.index("ltv_used")
        assert all(row[ltv_col] == "0.9" for row in rows[1:])

    def test_scenario_config_file(self, tmp_path):
        from tlpsim.market_sim import scenario_preset, sim_config_to_dict

        config_path = tmp_path / "scenario.json"
        snapshot = sim_config_to_dict(scenario_preset("base"))
        snapshot["n_days"] = 5
        config_path.write_text(json.dumps(snapshot))
        code, out = run_cli(tmp_path, "simulate", "--config", str(config_path))
        assert code == 0
        assert len(read_csv(out / "simulate_days.csv")) == 6  # header + 5 days

    def test_out_dir_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TLPSIM_OUT_DIR", str(tmp_path / "from_env"))
        assert main(["ltv-max", "--epsilon", "0.5"]) == 0
        assert (tmp_path / "from_env" / "ltv_max.json").exists()

    def test_day_count_from_config_file(self, tmp_path):
        config_path = tmp_path / "cfg.json"
        config_path.write_text('{"trading_days_per_year": 365}')
        _, out = run_cli(tmp_path, "ltv-max", "--epsilon", "0.5",
                         "--config", str(config_path))
        assert read_json(out / "ltv_max.json")["tau_years"] == pytest.approx(1 / 365)


class TestBacktestCommand:
    def test_bundled_run_emits_report(self, tmp_path):
        code, out = run_cli(tmp_path, "backtest", "--static-ltvs", "0.8,0.95")
        assert code == 0
        report = read_json(out / "backtest_report.json")
        assert report["n_nights"] == 1250
        assert report["histogram_bin_count"] == 40
        assert report["p95_tlp"] <= report["p99_tlp"]
        comparison = read_csv(out / "backtest_comparison.csv")
        assert [row[0] for row in comparison[1:]] == ["static_0.8", "static_0.95",
                                                      "dynamic"]
        assert int(comparison[1][1]) <= int(comparison[2][1])


class TestProxiesCommand:
    def test_adr_values_and_aggregate(self, tmp_path):
        data = tmp_path / "adr.csv"
        data.write_text("date,adr_usd,fx,local_close\n"
                        "2024-03-01,10.5,1.0,10.0\n"
                        "2024-03-04,10.0,1.0,10.0\n")
        code, out = run_cli(tmp_path, "proxies", "--kind", "adr",
                            "--data", str(data))
        assert code == 0
        values = read_csv(out / "proxies_values.csv")
        assert float(values[1][1]) == pytest.approx(0.05, abs=1e-12)
        aggregate = read_csv(out / "proxies_aggregate.csv")
        assert float(aggregate[1][1]) == pytest.approx(0.025, abs=1e-12)
        assert aggregate[1][3] == "2"

    def test_event_tagging_splits_buckets(self, tmp_path):
        data = tmp_path / "adr.csv"
        data.write_text("date,adr_usd,fx,local_close\n"
                        "2024-03-01,10.5,1.0,10.0\n"
                        "2024-03-04,10.0,1.0,10.0\n")
        events = tmp_path / "events.txt"
        events.write_text("2024-03-01\n")
        _, out = run_cli(tmp_path, "proxies", "--kind", "adr", "--data", str(data),
                         "--events", str(events))
        aggregate = read_csv(out / "proxies_aggregate.csv")
        assert [row[0] for row in aggregate[1:]] == ["event", "non_event"]

    def test_reversal_kind(self, tmp_path):
        data = tmp_path / "eq.csv"
        data.write_text("date,prev_close,open,close\n2024-03-01,100,105,103.95\n")
        _, out = run_cli(tmp_path, "proxies", "--kind", "reversal",
                         "--data", str(data))
        values = read_csv(out / "proxies_values.csv")
        assert values[0] == ["date", "overnight_ret", "intraday_ret", "reversal"]
        assert values[1][3] == "true"


class TestFigures:
    def test_ltv_tradeoff_anchors(self, tmp_path):
        _, out = run_cli(tmp_path, "figures", "--which", "ltv_tradeoff")
        rows = read_csv(out / "fig_ltv_tradeoff.csv")
        table = {float(r[0]): (float(r[1]), float(r[2])) for r in rows[1:]}
        assert table[1.0][0] == 1.0          # capital efficiency identity
        assert table[1.0][1] == pytest.approx(0.5, abs=1e-12)
        probs = [table[k][1] for k in sorted(table)]
        assert all(a < b for a, b in zip(probs, probs[1:]))

    def test_term_structure_figure(self, tmp_path):
        _, out = run_cli(tmp_path, "figures", "--which", "term_structure",
                         "--sigma-daily", "0,0.02,0.04", "--days", "1,2,3")
        rows = read_csv(out / "fig_term_structure.csv")
        assert rows[1][1:] == ["0", "0", "0"]

    def test_histogram_figure_bins(self, tmp_path):
        _, out = run_cli(tmp_path, "figures", "--which", "tlp_histogram")
        rows = read_csv(out / "fig_tlp_histogram.csv")
        assert len(rows) == 41  # header + 40 bins
        total = sum(int(float(r[2])) for r in rows[1:])
        stats = read_json(out / "fig_tlp_histogram_stats.json")
        assert total == stats["n_nights"] == 1250

    def test_price_timeseries_figure(self, tmp_path):
        _, out = run_cli(tmp_path, "figures", "--which", "price_timeseries")
        rows = read_csv(out / "fig_price_timeseries.csv")
        assert len(rows) == 8  # header + 7 days
        prices = [float(r[1]) for r in rows[1:]]
        assert 0.95 < min(prices) < 1.0


class TestErrorPaths:
    def test_unknown_figure_is_an_argparse_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["figures", "--which", "spiral", "--out-dir", str(tmp_path)])
        assert exc.value.code == 2
        assert "ltv_tradeoff" in capsys.readouterr().err

    def test_toolkit_errors_emit_json_record(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("date,close,next_open\n2020-01-01,0,1\n")
        code = main(["backtest", "--data", str(bad), "--out-dir", str(tmp_path / "o")])
        assert code == 1
        record = json.loads(capsys.readouterr().err)
        assert record["error"] == "DataError"
        assert "bad.csv:2" in record["message"]

    def test_missing_data_file(self, tmp_path, capsys):
        code = main(["proxies", "--kind", "adr", "--data", str(tmp_path / "nope.csv"),
                     "--out-dir", str(tmp_path / "o")])
        assert code == 1
        assert json.loads(capsys.readouterr().err)["error"] == "OSError"


def test_console_entry_point_runs():
    result = subprocess.run(
        [sys.executable, "-m", "tlpsim.cli", "--version"],
        capture_output=True, text=True)
    assert result.returncode == 0
    assert "tlpsim" in result.stdout
