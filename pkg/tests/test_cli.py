import subprocess
import sys
import time

import numpy as np
import pytest

from nfpf.cli import main
from nfpf.config import ExperimentConfig, format_config, load_config, parse_config
from nfpf.errors import ConfigError
from nfpf.filters import FilterTrace, read_trace, write_trace


def write_config(tmp_path, name="exp.cfg", **values):
    lines = [f"{k} = {v}" for k, v in values.items()]
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def read_metrics(path):
    rows = [ln.split(",") for ln in path.read_text().splitlines()[1:]]
    return {k: float(v) for k, v in rows}


def loss_values(path):
    return [float(ln.split(",")[2]) for ln in path.read_text().splitlines()[1:]]


PENDULUM_TOY = dict(env="pendulum", n_trajectories=2, T=20, image_size=8, flow_hidden=8, mean_hidden=8, dyn_hidden=8,
                    window=3, epochs=2)


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg.latent_dim == 4 and cfg.particles == 100 and cfg.window == 8

    def test_comments_and_types(self):
        cfg = parse_config("# comment\nlr = 0.01  # inline\nconditional = yes\nepochs=3\n")
        assert (cfg.lr, cfg.conditional, cfg.epochs) == (0.01, True, 3)

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="lerning_rate"):
            parse_config("lerning_rate = 1\n")

    @pytest.mark.parametrize("text", ["epochs = many", "env = cartpole", "particles = 0", "novalue"])
    def test_bad_values(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_paths_relative_to_config(self, tmp_path):
        cfg = load_config(write_config(tmp_path, data_dir="d"))
        assert cfg.data_dir == str(tmp_path / "d")

    def test_format_round_trip(self):
        cfg = ExperimentConfig(lr=0.5, env="lingauss", conditional=True)
        assert parse_config(format_config(cfg)) == cfg


class TestGenerate:
    def test_ten_files_and_manifest(self, tmp_path):
        cfg = write_config(tmp_path, n_trajectories=10, T=15)
        assert main(["generate", "--config", cfg]) == 0
        files = sorted((tmp_path / "data").glob("traj_*.csv"))
        assert len(files) == 10
        manifest = (tmp_path / "data" / "manifest.txt").read_text().split()
        assert manifest[:4] == ["traj_000.csv", "0", "traj_001.csv", "1"]

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, n_trajectories=3, T=15, seed=4)
        main(["generate", "--config", cfg])
        first = {p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()}
        main(["generate", "--config", cfg])
        assert first == {p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()}

    def test_malformed_key_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, partcles=10)
        assert main(["generate", "--config", cfg]) == 2
        assert "partcles" in capsys.readouterr().err

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["generate", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_unwritable_path_exits_2(self, tmp_path):
        (tmp_path / "blocker").write_text("")
        cfg = write_config(tmp_path, n_trajectories=1, T=3, data_dir="blocker/data")
        assert main(["generate", "--config", cfg]) == 2

    def test_missing_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2


class TestTrain:
    def test_zero_learning_rate_constant_losses(self, tmp_path):
        cfg = write_config(tmp_path, **{**PENDULUM_TOY, "lr": 0.0})
        main(["generate", "--config", cfg])
        assert main(["train", "--config", cfg]) == 0
        values = loss_values(tmp_path / "loss.csv")
        per_window = {}
        for ln in (tmp_path / "loss.csv").read_text().splitlines()[1:]:
            _, w, v = ln.split(",")
            per_window.setdefault(w, set()).add(v)
        assert values and all(len(v) == 1 for v in per_window.values())

    def test_identical_checkpoints(self, tmp_path, capsys):
        blobs = []
        for run in range(2):
            cfg = write_config(tmp_path, f"run{run}.cfg", **PENDULUM_TOY, checkpoint=f"ck{run}/model",
                               loss_csv=f"loss{run}.csv")
            if run == 0:
                main(["generate", "--config", cfg])
            assert main(["train", "--config", cfg]) == 0
            blobs.append((tmp_path / f"ck{run}" / "model.bin").read_bytes())
        assert blobs[0] == blobs[1]
        assert (tmp_path / "loss0.csv").read_bytes() == (tmp_path / "loss1.csv").read_bytes()
        assert "final NLL" in capsys.readouterr().out

    def test_toy_run_is_fast(self, tmp_path):
        cfg = write_config(tmp_path, env="pendulum", n_trajectories=2, T=200, image_size=8, epochs=5)
        main(["generate", "--config", cfg])
        start = time.perf_counter()
        assert main(["train", "--config", cfg]) == 0
        assert time.perf_counter() - start < 60.0

    def test_dimension_mismatch_across_files_exits_3(self, tmp_path, capsys):
        main(["generate", "--config", write_config(tmp_path, "a.cfg", **{**PENDULUM_TOY, "image_size": 8})])
        other = tmp_path / "other"
        main(["generate", "--config", write_config(tmp_path, "b.cfg", **{**PENDULUM_TOY, "image_size": 9},
                                                   data_dir="other")])
        (other / "traj_000.csv").rename(tmp_path / "data" / "traj_001.csv")
        assert main(["train", "--config", str(tmp_path / "a.cfg")]) == 3
        err = capsys.readouterr().err
        assert "traj_001.csv" in err and "traj_000.csv" in err

    def test_no_data_exits_3(self, tmp_path):
        (tmp_path / "data").mkdir()
        assert main(["train", "--config", write_config(tmp_path)]) == 3


class TestFilter:
    def test_two_particles(self, tmp_path):
        cfg = write_config(tmp_path, **PENDULUM_TOY, particles=2)
        main(["generate", "--config", cfg])
        main(["train", "--config", cfg])
        assert main(["filter", "--config", cfg]) == 0
        trace = read_trace(tmp_path / "trace.csv")
        assert trace.means.shape == (20, 4)
        assert trace.true_states.shape == (20, 2)
        assert np.all(trace.ess <= 2.0 + 1e-12)

    def test_hundred_dimensional_latent(self, tmp_path):
        cfg = write_config(tmp_path, **{**PENDULUM_TOY, "epochs": 0, "T": 5}, latent_dim=100, particles=3)
        main(["generate", "--config", cfg])
        assert main(["train", "--config", cfg]) == 0
        assert main(["filter", "--config", cfg]) == 0
        header = (tmp_path / "trace.csv").read_text().splitlines()[0].split(",")
        assert sum(c.startswith("mean_") for c in header) == 100

    def test_empty_trajectory(self, tmp_path):
        cfg = write_config(tmp_path, env="lingauss", likelihood="true", n_trajectories=1, T=0)
        main(["generate", "--config", cfg])
        assert main(["filter", "--config", cfg]) == 0
        assert (tmp_path / "trace.csv").read_text().splitlines() == ["t,mean_0,mean_1,ess,resampled,true_0,true_1"]

    def test_checkpoint_mismatch_exits_3(self, tmp_path):
        cfg = write_config(tmp_path, **PENDULUM_TOY)
        main(["generate", "--config", cfg])
        main(["train", "--config", cfg])
        cfg2 = write_config(tmp_path, "b.cfg", **{**PENDULUM_TOY, "image_size": 9}, data_dir="d9")
        main(["generate", "--config", cfg2])
        cfg3 = write_config(tmp_path, "c.cfg", **PENDULUM_TOY, trajectory="d9/traj_000.csv")
        assert main(["filter", "--config", cfg3]) == 3


class TestEval:
    def trace(self, tmp_path, means, truth):
        n = len(means)
        write_trace(tmp_path / "trace.csv", FilterTrace(np.asarray(means), np.ones(n), np.zeros(n, bool),
                                                        true_states=np.asarray(truth)))

    def test_truth_gives_zero(self, tmp_path):
        truth = np.random.default_rng(0).normal(size=(10, 2))
        self.trace(tmp_path, truth, truth)
        assert main(["eval", "--config", write_config(tmp_path)]) == 0
        m = read_metrics(tmp_path / "metrics.csv")
        assert m["rmse_0"] == 0.0 and m["rmse_1"] == 0.0 and m["rmse"] == 0.0

    def test_constant_offset(self, tmp_path):
        truth = np.random.default_rng(1).normal(size=(10, 3))
        self.trace(tmp_path, truth + np.array([0.5, -2.0, 0.0]), truth)
        main(["eval", "--config", write_config(tmp_path)])
        m = read_metrics(tmp_path / "metrics.csv")
        np.testing.assert_allclose([m["rmse_0"], m["rmse_1"], m["rmse_2"]], [0.5, 2.0, 0.0], atol=1e-12)
        assert m["mean_ess"] == 1.0 and m["resample_count"] == 0

    def test_column_mismatch_exits_3(self, tmp_path):
        self.trace(tmp_path, np.zeros((4, 3)), np.zeros((4, 2)))
        assert main(["eval", "--config", write_config(tmp_path)]) == 3

    def test_lingauss_against_kf(self, tmp_path):
        cfg = write_config(tmp_path, env="lingauss", likelihood="true", oracle="kf", n_trajectories=1, T=50,
                           particles=10_000, seed=3)
        for cmd in ("generate", "filter", "eval"):
            assert main([cmd, "--config", cfg]) == 0
        assert read_metrics(tmp_path / "metrics.csv")["pf_kf_rmse"] < 0.05


def test_console_entry_point(tmp_path):
    cfg = write_config(tmp_path, env="lingauss", n_trajectories=1, T=5)
    done = subprocess.run([sys.executable, "-m", "nfpf", "generate", "--config", cfg], capture_output=True,
                          text=True)
    assert done.returncode == 0
    assert (tmp_path / "data" / "traj_000.csv").exists()
