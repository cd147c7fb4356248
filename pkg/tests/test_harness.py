import csv
import os

import numpy as np
import pytest

from pegassembly import cli, harness
from pegassembly.config import parse_config
from pegassembly.env import EpisodeOutcome, Outcome
from pegassembly.harness import (ExperimentReport, cmd_eval, cmd_export_plots,
                                 cmd_gradcheck, cmd_train, load_checkpoint, spawn_rngs)

FAST_TRAIN = """
[run]
seed = 3
step_budget = 120
checkpoint_every = 60
episode_step_max = 25
train_mode = random
[train]
batch_size = 8
buffer_size = 512
train_every = 4
update_rate = 10
[world]
clearance_mm = 0.5
[env]
step_max = 25
"""

FAST_EVAL = """
[run]
seed = 3
[world]
clearance_mm = 0.5
[env]
step_max = 40
"""


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestSpawnRngs:
    def test_deterministic(self):
        a = spawn_rngs(5, 3)
        b = spawn_rngs(5, 3)
        for x, y in zip(a, b):
            assert x.uniform() == y.uniform()

    def test_streams_differ(self):
        rngs = spawn_rngs(5, 4)
        draws = [r.uniform() for r in rngs]
        assert len(set(draws)) == 4


class TestExperimentReport:
    def outcomes(self):
        return [EpisodeOutcome(Outcome.SUCCESS, 10, 1.5),
                EpisodeOutcome(Outcome.SUCCESS, 20, 1.0),
                EpisodeOutcome(Outcome.OUT_OF_REGION, 7, -0.4),
                EpisodeOutcome(Outcome.STEP_LIMIT, 40, -0.1)]

    def test_aggregates(self):
        rep = ExperimentReport(mode="ft", outcomes=self.outcomes())
        assert rep.attempts == 4
        assert rep.successes == 2
        assert rep.success_rate == pytest.approx(0.5)
        assert rep.average_er == pytest.approx((1.5 + 1.0 - 0.4 - 0.1) / 4)
        assert rep.average_completion_steps == pytest.approx(15.0)

    def test_no_successes_average_steps_none(self):
        rep = ExperimentReport(mode="rt",
                               outcomes=[EpisodeOutcome(Outcome.STEP_LIMIT, 5, 0.0)])
        assert rep.average_completion_steps is None
        assert dict(rep.summary_rows())["average_completion_steps"] == "-"

    def test_summary_shows_exact_fraction(self):
        rep = ExperimentReport(mode="ft", outcomes=self.outcomes())
        rows = dict(rep.summary_rows())
        assert rows["success_rate"] == "2/4"
        assert rows["success_rate_pct"] == 50

    def test_empty_report(self):
        rep = ExperimentReport(mode="fnt")
        assert rep.success_rate == 0.0 and rep.average_er == 0.0


class TestCmdTrain:
    def test_smoke_run_writes_artifacts(self, tmp_path):
        cfg = parse_config(FAST_TRAIN)
        out = str(tmp_path / "run")
        ckpt = cmd_train(cfg, out)
        assert os.path.exists(ckpt)
        params = load_checkpoint(ckpt)
        assert params.arch.n_actions == 27

        header, rows = read_csv(os.path.join(out, "episodes.csv"))
        assert header == harness.EPISODE_HEADER
        assert rows and sum(int(r[3]) for r in rows) >= cfg.run.step_budget

        header, rows = read_csv(os.path.join(out, "telemetry.csv"))
        assert header == harness.TELEMETRY_HEADER
        assert rows and all(float(r[1]) >= 0.0 for r in rows)

        with open(os.path.join(out, "effective_config.txt")) as fh:
            again = parse_config(fh.read())
        assert again.run == cfg.run and again.train == cfg.train

    def test_mixed_mode_alternates_start_distributions(self, tmp_path):
        cfg = parse_config(FAST_TRAIN.replace("train_mode = random",
                                              "train_mode = mixed"))
        out = str(tmp_path / "mixed")
        cmd_train(cfg, out)
        _, rows = read_csv(os.path.join(out, "episodes.csv"))
        modes = [r[1] for r in rows]
        assert modes[:2] == ["fixed", "random"]
        assert set(modes) <= {"fixed", "random"}

    def test_unknown_train_mode_rejected(self, tmp_path):
        cfg = parse_config("[run]\ntrain_mode = alternating\nstep_budget = 1\n")
        with pytest.raises(ValueError):
            cmd_train(cfg, str(tmp_path / "x"))

    def test_zero_budget_still_writes_checkpoint(self, tmp_path):
        cfg = parse_config("[run]\nstep_budget = 0\n")
        out = str(tmp_path / "run0")
        ckpt = cmd_train(cfg, out)
        assert os.path.exists(ckpt)
        _, rows = read_csv(os.path.join(out, "episodes.csv"))
        assert rows == []

    def test_deterministic_given_seed(self, tmp_path):
        cfg = parse_config(FAST_TRAIN)
        a = cmd_train(cfg, str(tmp_path / "a"))
        b = cmd_train(parse_config(FAST_TRAIN), str(tmp_path / "b"))
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()
        _, rows_a = read_csv(str(tmp_path / "a" / "episodes.csv"))
        _, rows_b = read_csv(str(tmp_path / "b" / "episodes.csv"))
        assert rows_a == rows_b


class TestCmdEval:
    def make_checkpoint(self, tmp_path):
        cfg = parse_config("[run]\nstep_budget = 0\n")
        return cmd_train(cfg, str(tmp_path / "ckpt"))

    def test_ft_requires_checkpoint(self, tmp_path):
        with pytest.raises(ValueError):
            cmd_eval(parse_config(FAST_EVAL), "ft", 1, str(tmp_path / "e"))

    def test_unknown_mode_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            cmd_eval(parse_config(FAST_EVAL), "xx", 1, str(tmp_path / "e"))

    def test_ft_writes_report_consistent_with_episode_log(self, tmp_path):
        ckpt = self.make_checkpoint(tmp_path)
        out = str(tmp_path / "ft")
        rep = cmd_eval(parse_config(FAST_EVAL), "ft", 3, out, checkpoint=ckpt)
        assert rep.attempts == 3
        _, rows = read_csv(os.path.join(out, "episodes_ft.csv"))
        assert len(rows) == 3
        successes = sum(1 for r in rows if r[2] == "success")
        summary = dict(read_csv(os.path.join(out, "report_ft.csv"))[1])
        assert summary["success_rate"] == f"{successes}/3"
        ers = [float(r[4]) for r in rows]
        assert float(summary["average_ER"]) == pytest.approx(np.mean(ers), abs=1e-3)

    def test_fnt_runs_without_checkpoint(self, tmp_path):
        out = str(tmp_path / "fnt")
        rep = cmd_eval(parse_config(FAST_EVAL), "fnt", 2, out)
        assert rep.attempts == 2
        assert os.path.exists(os.path.join(out, "episodes_fnt.csv"))

    def test_trace_recording(self, tmp_path):
        ckpt = self.make_checkpoint(tmp_path)
        out = str(tmp_path / "tr")
        cmd_eval(parse_config(FAST_EVAL), "rt", 2, out, checkpoint=ckpt,
                 record_trace=True)
        header, rows = read_csv(os.path.join(out, "wrench_trace_rt.csv"))
        assert header == ["episode", "step", "fx", "fy", "fz", "mx", "my", "mz"]
        assert rows   # sub-step samples were captured

    def test_eval_deterministic(self, tmp_path):
        ckpt = self.make_checkpoint(tmp_path)
        rep1 = cmd_eval(parse_config(FAST_EVAL), "rt", 3, str(tmp_path / "r1"),
                        checkpoint=ckpt)
        rep2 = cmd_eval(parse_config(FAST_EVAL), "rt", 3, str(tmp_path / "r2"),
                        checkpoint=ckpt)
        assert rep1.rows == rep2.rows


class TestGradcheck:
    def test_within_bound(self):
        assert cmd_gradcheck(seeds=(0,)) < cli.GRADCHECK_BOUND

    def test_corrupt_negative_control(self):
        assert cmd_gradcheck(seeds=(0,), corrupt=True) > cli.GRADCHECK_BOUND


class TestExportPlots:
    def test_empty_dir(self, tmp_path):
        src = tmp_path / "in"
        src.mkdir()
        assert cmd_export_plots(str(src), str(tmp_path / "out")) == []

    def test_series_from_eval_and_train_logs(self, tmp_path):
        src = tmp_path / "in"
        src.mkdir()
        with open(src / "episodes.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(harness.EPISODE_HEADER)
            w.writerow([1, "random", "success", 12, "1.5", 0, 0, 0])
            w.writerow([2, "random", "step_limit", 40, "-0.2", 0, 0, 0])
        with open(src / "telemetry.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(harness.TELEMETRY_HEADER)
            w.writerow([1, "0.5", "1.0", 32, 0])
        with open(src / "wrench_trace_ft.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "step", "fx", "fy", "fz", "mx", "my", "mz"])
            w.writerow([1, 1, "0.1", "0.2", "-5.0", "0", "0", "0"])
        out = tmp_path / "out"
        written = cmd_export_plots(str(src), str(out))
        names = {os.path.basename(p) for p in written}
        assert {"er_train.csv", "completion_steps_train.csv", "loss.csv"} <= names
        assert {f"wrench_{ax}_ft.csv" for ax in ("fx", "fy", "fz", "mx", "my", "mz")} <= names

        _, rows = read_csv(str(out / "loss.csv"))
        assert rows == [["1", "0.5"]]
        _, rows = read_csv(str(out / "completion_steps_train.csv"))
        assert rows == [["1", "12"]]   # only the successful episode
        _, rows = read_csv(str(out / "wrench_fz_ft.csv"))
        assert rows == [["1", "1", "-5.0"]]

    def test_malformed_log_rejected(self, tmp_path):
        src = tmp_path / "in"
        src.mkdir()
        (src / "telemetry.csv").write_text("")
        with pytest.raises(ValueError):
            cmd_export_plots(str(src), str(tmp_path / "out"))


class TestCli:
    def test_gradcheck_exit_zero(self, capsys):
        assert cli.main(["gradcheck"]) == 0
        assert "bound" in capsys.readouterr().out

    def test_train_then_eval_roundtrip(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.txt"
        cfg_path.write_text(FAST_TRAIN)
        out = tmp_path / "run"
        assert cli.main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        ckpt = out / "checkpoint.bin"
        eval_cfg = tmp_path / "eval.txt"
        eval_cfg.write_text(FAST_EVAL)
        code = cli.main(["eval", "--mode", "ft", "--episodes", "2",
                         "--config", str(eval_cfg), "--checkpoint", str(ckpt),
                         "--out", str(tmp_path / "eval")])
        assert code == 0
        assert "success_rate" in capsys.readouterr().out

    def test_missing_config_exit_one(self, tmp_path, capsys):
        code = cli.main(["train", "--config", str(tmp_path / "nope.txt"),
                         "--out", str(tmp_path / "o")])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_bad_config_exit_one(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.txt"
        cfg_path.write_text("[rocket]\n")
        code = cli.main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
        assert code == 1

    def test_eval_without_checkpoint_exit_one(self, tmp_path):
        code = cli.main(["eval", "--mode", "ft", "--out", str(tmp_path / "e")])
        assert code == 1
