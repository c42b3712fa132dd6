"""End-to-end CLI and experiment-runner contracts: config validation, CSV
schema and determinism, ablation layout, verify exit codes, and saliency
export plumbing."""

import numpy as np
import pytest

from factormix.cli import main
from factormix.experiment import (
    ConfigError,
    ExperimentConfig,
    config_from_file,
    config_from_items,
    read_run_csv,
    run_experiment,
    run_single_seed,
    seed_csv_path,
    summarize_directory,
)
from factormix.envs import MatrixGame


@pytest.fixture()
def matrix_path(tmp_path):
    path = tmp_path / "game.txt"
    MatrixGame([[1.0, 0.0], [0.0, 0.5]]).to_file(path)
    return path


def tiny_items(matrix_path, out_dir, **extra):
    items = {
        "env": f"matrix:{matrix_path}",
        "algorithm": "vdn",
        "seeds": "0,1",
        "total_steps": "120",
        "eval_interval": "40",
        "eval_episodes": "2",
        "batch_size": "8",
        "buffer_size": "64",
        "train_start_episodes": "10",
        "target_update_freq": "20",
        "agent_hidden": "8",
        "mixing_embed": "8",
        "attention_heads": "2",
        "epsilon_decay_steps": "60",
        "gamma": "0.99",
        "out_dir": str(out_dir),
    }
    items.update({k: str(v) for k, v in extra.items()})
    return items


class TestConfig:
    def test_file_parsing_with_comments_and_overrides(self, tmp_path, matrix_path):
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text(
            "# experiment\n"
            f"env=matrix:{matrix_path}\n"
            "algorithm=qplex\n"
            "qplex_variant=history-state\n"
            "seeds=3, 4\n"
            "lr=1e-3\n"
        )
        cfg = config_from_file(cfg_file, overrides={"algorithm": "qmix"})
        assert cfg.algorithm == "qmix"
        assert cfg.qplex_variant == "history-state"
        assert cfg.seeds == (3, 4)
        assert cfg.lr == pytest.approx(1e-3)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown configuration key"):
            config_from_items({"learning_rate": "0.1"})

    def test_bad_enum_rejected(self):
        with pytest.raises(ConfigError, match="algorithm"):
            config_from_items({"algorithm": "qtran"})
        with pytest.raises(ConfigError, match="central_info"):
            config_from_items({"central_info": "state"})

    def test_unparsable_value_rejected(self):
        with pytest.raises(ConfigError, match="total_steps"):
            config_from_items({"total_steps": "many"})

    def test_cli_exit_code_2_on_config_error(self, capsys):
        assert main(["train", "--set", "algorithm=bogus"]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_output_root_env_var(self, tmp_path, matrix_path, monkeypatch):
        out = tmp_path / "from_env"
        monkeypatch.setenv("FACTORMIX_OUT", str(out))
        items = tiny_items(matrix_path, out, seeds="0", total_steps="40")
        del items["out_dir"]
        assert main(["train"] + sum(
            (["--set", f"{k}={v}"] for k, v in items.items()), []
        )) == 0
        assert seed_csv_path(out, 0).exists()


class TestTrainVerb:
    def test_writes_csvs_and_summary(self, tmp_path, matrix_path):
        out = tmp_path / "run"
        code = main(["train"] + sum(
            (["--set", f"{k}={v}"] for k, v in tiny_items(matrix_path, out).items()),
            [],
        ))
        assert code == 0
        for seed in (0, 1):
            csv = seed_csv_path(out, seed)
            assert csv.exists()
            text = csv.read_text()
            assert text.startswith("step,return,smoothed_return,loss\n")
            record = read_run_csv(csv)
            assert [row[0] for row in record.rows] == [40, 80, 120]
        assert (out / "summary.csv").exists()
        assert (out / "ckpt_seed0.npz").exists()

    def test_rerun_is_bitwise_identical(self, tmp_path, matrix_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        cfg_a = config_from_items(tiny_items(matrix_path, out_a))
        cfg_b = config_from_items(tiny_items(matrix_path, out_b))
        run_experiment(cfg_a)
        run_experiment(cfg_b)
        for seed in (0, 1):
            assert (seed_csv_path(out_a, seed).read_bytes()
                    == seed_csv_path(out_b, seed).read_bytes())

    def test_worker_pool_matches_serial(self, tmp_path, matrix_path):
        out_a, out_b = tmp_path / "serial", tmp_path / "pool"
        run_experiment(config_from_items(tiny_items(matrix_path, out_a)))
        run_experiment(config_from_items(tiny_items(matrix_path, out_b, workers=2)))
        for seed in (0, 1):
            assert (seed_csv_path(out_a, seed).read_bytes()
                    == seed_csv_path(out_b, seed).read_bytes())

    def test_smoothed_return_is_mean_of_last_ten(self, tmp_path, matrix_path):
        out = tmp_path / "run"
        cfg = config_from_items(tiny_items(matrix_path, out,
                                           total_steps=600, eval_interval=40))
        run_experiment(cfg)
        record = read_run_csv(seed_csv_path(out, 0))
        returns = [row[1] for row in record.rows]
        for i, row in enumerate(record.rows):
            window = returns[max(0, i - 9) : i + 1]
            assert row[2] == pytest.approx(float(np.mean(window)))

    def test_crashed_seed_reported_and_others_continue(self, tmp_path, matrix_path,
                                                       monkeypatch, capsys):
        out = tmp_path / "run"
        cfg = config_from_items(tiny_items(matrix_path, out))

        import factormix.experiment as exp

        original = exp.run_single_seed

        def flaky(config, seed):
            if seed == 1:
                raise RuntimeError("synthetic crash")
            return original(config, seed)

        monkeypatch.setattr(exp, "run_single_seed", flaky)
        result = exp.run_experiment(cfg)
        assert sorted(result.failures) == [1]
        assert len(result.records) == 1
        assert seed_csv_path(out, 0).exists()

    def test_resume_continues_from_checkpoint(self, tmp_path, matrix_path):
        out = tmp_path / "run"
        cfg = config_from_items(tiny_items(matrix_path, out, seeds="0",
                                           total_steps=80))
        run_single_seed(cfg, 0)
        longer = config_from_items(tiny_items(matrix_path, out, seeds="0",
                                              total_steps=160, resume="true"))
        record = run_single_seed(longer, 0)
        steps = [row[0] for row in record.rows]
        assert steps == [40, 80, 120, 160]


class TestSummarize:
    def test_round_trip_matches_summary(self, tmp_path, matrix_path):
        out = tmp_path / "run"
        cfg = config_from_items(tiny_items(matrix_path, out))
        result = run_experiment(cfg)
        summary = summarize_directory(out)
        row = result.summary_row()
        assert summary["seeds"] == row["seeds"]
        assert summary["mean_final_return"] == pytest.approx(row["mean_final_return"])
        assert summary["stderr_final_return"] == pytest.approx(row["stderr_final_return"])

    def test_cli_verb(self, tmp_path, matrix_path, capsys):
        out = tmp_path / "run"
        run_experiment(config_from_items(tiny_items(matrix_path, out)))
        assert main(["summarize", str(out)]) == 0
        assert "mean_final_return" in capsys.readouterr().out

    def test_missing_directory_is_config_error(self, tmp_path):
        assert main(["summarize", str(tmp_path / "nope")]) == 2


class TestAblateVerb:
    def test_nine_row_sweep_layout(self, tmp_path, matrix_path, capsys):
        out = tmp_path / "ablate"
        args = ["ablate"] + sum(
            (["--set", f"{k}={v}"] for k, v in tiny_items(
                matrix_path, out, seeds="0", total_steps="60",
                eval_interval="30").items()),
            [],
        )
        assert main(args) == 0
        summary = (out / "ablation_summary.csv").read_text().strip().splitlines()
        assert len(summary) == 1 + 9
        combos = [tuple(line.split(",")[:2]) for line in summary[1:]]
        assert combos == [(alg, kind) for alg in ("qmix", "qplex", "duelmix")
                          for kind in ("s", "r", "c")]


class TestVerifyVerb:
    def test_scoped_pass(self, capsys):
        assert main(["verify", "igm", "--igm-samples", "15"]) == 0
        out = capsys.readouterr().out
        assert "PASS igm.vdn" in out and "PASS igm.duelmix" in out

    def test_mutation_flags_cause_failures(self, capsys):
        assert main(["verify", "igm", "--igm-samples", "25",
                     "--break-monotonicity"]) == 1
        assert "VIOLATION" in capsys.readouterr().out
        assert main(["verify", "igm", "--igm-samples", "25",
                     "--break-lambda"]) == 1


class TestSaliencyVerb:
    def _train_tiny_bp(self, tmp_path, full_obs):
        out = tmp_path / ("full" if full_obs else "partial")
        cfg = ExperimentConfig(
            env="bp", bp_grid=8, bp_horizon=8, bp_full_obs=full_obs,
            algorithm="duelmix", seeds=(0,), total_steps=120, eval_interval=60,
            eval_episodes=1, batch_size=4, buffer_size=32,
            train_start_episodes=4, agent_hidden=8, mixing_embed=8,
            attention_heads=2, epsilon_decay_steps=60, out_dir=str(out),
        )
        run_single_seed(cfg, 0)
        return out / "ckpt_seed0.npz"

    def test_partial_checkpoint_rejected(self, tmp_path, capsys):
        ckpt = self._train_tiny_bp(tmp_path, full_obs=False)
        assert main(["saliency", str(ckpt)]) == 2
        assert "full-observability" in capsys.readouterr().err

    def test_full_checkpoint_exports_normalized_map(self, tmp_path):
        ckpt = self._train_tiny_bp(tmp_path, full_obs=True)
        out_csv = tmp_path / "map.csv"
        assert main(["saliency", str(ckpt), "--out", str(out_csv)]) == 0
        lines = out_csv.read_text().strip().splitlines()
        assert lines[0] == "feature,value,row,col"
        values = [float(line.split(",")[1]) for line in lines[1:]]
        assert len(values) == 18
        assert max(values) == 1.0
        # Position features carry grid coordinates, orientations do not.
        by_name = {line.split(",")[0]: line.split(",")[2:] for line in lines[1:]}
        assert by_name["self_row"][0] != ""
        assert by_name["self_up"] == ["", ""]
