import json
import os
from dataclasses import fields

import pytest

from mups_sim.cli import build_run_specs, main, run_experiment
from mups_sim.config import (ConfigError, SimConfig, config_hash, dump_config, load_config)

FAST = ("cells.count = 2\ncells.users_embb = 2\ncells.users_urllc = 1\n"
        "time.warmup_ms = 30\ntime.measure_ms = 120\nrun.drops = 1\nrun.seed = 4\n")


def write_cfg(tmp_path, text, name="sim.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadConfig:
    def test_empty_file_gives_table_defaults(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, ""))
        assert cfg.cqi_filter_coeff == 0.01
        assert cfg.mu_offset_db == 3.0
        assert cfg.urllc_lambda == 250.0
        assert cfg.urllc_payload_bytes == 50
        assert cfg.mu_rank == 2
        assert cfg.harq_rtt_ttis == 4
        assert cfg.n_tx == 8 and cfg.n_rx == 2
        assert cfg.minislots_per_slot == 7
        assert cfg.tick_ms == pytest.approx(1 / 7)

    def test_filter_coeff_bound_checked(self, tmp_path):
        with pytest.raises(ConfigError, match="filter_coeff"):
            load_config(write_cfg(tmp_path, "cqi.filter_coeff = 1.5\n"))

    def test_unknown_key_rejected_with_line(self, tmp_path):
        with pytest.raises(ConfigError, match=":2"):
            load_config(write_cfg(tmp_path, "run.seed = 1\nnot.a.key = 3\n"))

    def test_parse_error_names_key(self, tmp_path):
        with pytest.raises(ConfigError, match="run.drops"):
            load_config(write_cfg(tmp_path, "run.drops = banana\n"))

    def test_alpha_dominance_checked(self, tmp_path):
        with pytest.raises(ConfigError, match="alpha"):
            load_config(write_cfg(tmp_path, "sched.alpha_urllc = 5.0\nsched.alpha_embb = 1.0\n"))

    def test_comments_and_blanks_ignored(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, "# comment\n\nrun.seed = 9  # trailing\n"))
        assert cfg.seed == 9

    def test_round_trip_echo(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, FAST + "sched.d_min = 0.25\n"))
        echoed = write_cfg(tmp_path, dump_config(cfg), name="echo.cfg")
        again = load_config(echoed)
        for f in fields(SimConfig):
            assert getattr(again, f.name) == getattr(cfg, f.name), f.name
        assert config_hash(again) == config_hash(cfg)


class TestRunSpecs:
    def test_policy_times_omega_product(self):
        cfg = SimConfig(policies=["ps", "mups"]).validate()
        specs = build_run_specs(cfg, ["omega=5:5,10:10,20:5"])
        assert len(specs) == 6
        names = {s["name"] for s in specs}
        assert "ps_omega5x5" in names and "mups_omega20x5" in names
        omegas = {(s["config"].users_embb, s["config"].users_urllc) for s in specs}
        assert omegas == {(5, 5), (10, 10), (20, 5)}

    def test_generic_key_sweep(self):
        cfg = SimConfig(policies=["ps"]).validate()
        specs = build_run_specs(cfg, ["sched.theta_deg=30,60"])
        assert [s["config"].theta_deg for s in specs] == [30.0, 60.0]

    def test_bad_sweep_key(self):
        cfg = SimConfig().validate()
        with pytest.raises(ConfigError):
            build_run_specs(cfg, ["nope=1,2"])


class TestRunExperiment:
    def test_outputs_written(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, FAST))
        out = tmp_path / "runs"
        status = run_experiment(cfg, out, sweeps=[])
        assert status == 0
        run_dir = out / cfg.policies[0]
        for name in ("latency_samples.csv", "cell_tput.csv", "pairing_events.csv",
                     "summary.json", "config.echo"):
            assert (run_dir / name).exists(), name
        assert (out / "comparison.csv").exists()
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["seed"] == 4
        assert summary["config_hash"] == config_hash(cfg)
        header = (run_dir / "latency_samples.csv").read_text().splitlines()[0]
        assert header == "packet_id,arrival_tick,latency_ms,harq_tx_count"

    def test_byte_identical_summaries_across_runs_and_threads(self, tmp_path):
        cfg_path = write_cfg(tmp_path, FAST + "run.drops = 2\n")
        blobs = []
        for workers, name in (("1", "a"), ("2", "b")):
            os.environ["MUPS_SIM_THREADS"] = workers
            try:
                cfg = load_config(cfg_path)
                out = tmp_path / name
                assert run_experiment(cfg, out, sweeps=[]) == 0
                blobs.append((out / "mups" / "summary.json").read_bytes())
            finally:
                os.environ.pop("MUPS_SIM_THREADS", None)
        assert blobs[0] == blobs[1]

    def test_replay_feeds_identical_arrivals(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, FAST))
        trace_path = tmp_path / "trace.csv"
        assert run_experiment(cfg, tmp_path / "seed_run", sweeps=[],
                              export_trace=str(trace_path)) == 0
        cfg2 = load_config(write_cfg(tmp_path, FAST + "run.policies = ps,mups\n"))
        out = tmp_path / "replayed"
        assert run_experiment(cfg2, out, sweeps=[], replay_path=str(trace_path)) == 0
        s_ps = json.loads((out / "ps" / "summary.json").read_text())
        s_mups = json.loads((out / "mups" / "summary.json").read_text())
        assert s_ps["arrivals_sha"] == s_mups["arrivals_sha"]
        assert s_ps["packets"]["generated"] == s_mups["packets"]["generated"] > 0

    def test_main_entry_point(self, tmp_path):
        cfg_path = write_cfg(tmp_path, FAST)
        status = main(["--config", str(cfg_path), "--out", str(tmp_path / "o"),
                       "--policies", "ps", "--seed", "11"])
        assert status == 0
        assert (tmp_path / "o" / "ps" / "summary.json").exists()

    def test_main_bad_config_status(self, tmp_path):
        cfg_path = write_cfg(tmp_path, "cqi.filter_coeff = 9\n")
        assert main(["--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 2

    def test_deterministic_bler_flag(self, tmp_path):
        cfg_path = write_cfg(tmp_path, FAST)
        status = main(["--config", str(cfg_path), "--out", str(tmp_path / "o"),
                       "--policies", "ps", "--deterministic-bler"])
        assert status == 0
        echo = (tmp_path / "o" / "ps" / "config.echo").read_text()
        assert "run.deterministic_bler = true" in echo
