import csv
import json

import pytest

from flowinv.checkpoint import save_checkpoint
from flowinv.cli import dispatch


@pytest.fixture(scope="module")
def ckpt_path(quick_checkpoint, tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "model.finv"
    save_checkpoint(quick_checkpoint, path)
    return path


def run(argv):
    return dispatch([str(a) for a in argv])


class TestTrainCommand:
    def test_deterministic_artifacts(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run(["train", "--seed", 7, "--out", out, "--iterations", 150]) == 0
            outs.append(out)
        assert (outs[0] / "model.finv").read_bytes() == (outs[1] / "model.finv").read_bytes()
        assert (outs[0] / "loss_curve.csv").read_bytes() == (outs[1] / "loss_curve.csv").read_bytes()


class TestPipelineCommands:
    def test_invert_writes_trajectory(self, ckpt_path, tmp_path):
        out = tmp_path / "inv"
        code = run(["invert", "--ckpt", ckpt_path, "--seed", 3, "--out", out,
                    "--source-token", 2, "--steps", 10])
        assert code == 0
        rows = list(csv.DictReader(open(out / "trajectory.csv")))
        assert len(rows) == 11
        noise = json.load(open(out / "noise.json"))
        assert len(noise["noise_latent"]) == 8

    def test_reconstruct_reports_l1(self, ckpt_path, tmp_path):
        out = tmp_path / "rec"
        code = run(["reconstruct", "--ckpt", ckpt_path, "--seed", 3, "--out", out,
                    "--source-token", 2, "--steps", 10])
        assert code == 0
        payload = json.load(open(out / "recon.json"))
        assert payload["l1"] >= 0.0

    def test_edit_emits_json_schedule_and_csvs(self, ckpt_path, tmp_path):
        out = tmp_path / "edit"
        code = run(["edit", "--ckpt", ckpt_path, "--seed", 3, "--out", out,
                    "--source-token", 2, "--edit-token", 10, "--steps", 10])
        assert code == 0
        payload = json.load(open(out / "edit.json"))
        assert payload["request"]["edit_token"] == 10
        assert (out / "null_schedule.finv").exists()
        runs = {row["run_id"] for row in csv.DictReader(open(out / "trajectory.csv"))}
        assert runs == {"inversion", "edited", "reconstruction"}

    def test_generate(self, ckpt_path, tmp_path):
        out = tmp_path / "gen"
        assert run(["generate", "--ckpt", ckpt_path, "--seed", 5, "--out", out,
                    "--token", 4, "--steps", 10]) == 0
        assert json.load(open(out / "sample.json"))["token"] == 4


class TestExperimentCommands:
    def test_recon_table_schema(self, ckpt_path, tmp_path):
        out = tmp_path / "exp"
        code = run(["experiment", "recon-table", "--ckpt", ckpt_path, "--seed", 3,
                    "--out", out, "--trials", 2, "--steps", 10])
        assert code == 0
        rows = list(csv.DictReader(open(out / "recon_table.csv")))
        assert [r["config"] for r in rows] == [
            "euler_approx", "nti_approx", "euler_empty", "nti_empty"]

    def test_prompt_type_writes_both_csvs(self, ckpt_path, tmp_path):
        out = tmp_path / "exp2"
        code = run(["experiment", "prompt-type", "--ckpt", ckpt_path, "--seed", 3,
                    "--out", out, "--trials", 2, "--steps", 10])
        assert code == 0
        assert (out / "prompt_type.csv").exists()
        assert (out / "norm_trace.csv").exists()

    def test_sink(self, ckpt_path, tmp_path):
        out = tmp_path / "exp3"
        code = run(["experiment", "sink", "--ckpt", ckpt_path, "--seed", 3,
                    "--out", out, "--samples-per-token", 2, "--steps", 10])
        assert code == 0
        rows = list(csv.DictReader(open(out / "sink_experiment.csv")))
        assert len(rows) == 4

    def test_missing_kind_is_usage_error(self, ckpt_path, capsys):
        assert run(["experiment", "--ckpt", ckpt_path]) == 1
        assert capsys.readouterr().err.startswith("error: usage:")


class TestErrorsAndHelp:
    def test_unknown_flag_exits_1(self, capsys):
        assert run(["train", "--seed", 1, "--out", "x", "--bogus"]) == 1
        assert capsys.readouterr().err.startswith("error: usage:")

    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        code = run(["inspect", "--ckpt", tmp_path / "nope.finv"])
        assert code == 2
        assert capsys.readouterr().err.startswith("error: CheckpointError:")

    def test_inspect_prints_json(self, ckpt_path, capsys):
        assert run(["inspect", "--ckpt", ckpt_path]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["d"] == 8 and payload["vocab"] == 39

    @pytest.mark.parametrize("command", ["reconstruct", "edit"])
    def test_help_lists_paper_defaults(self, command, capsys):
        with pytest.raises(SystemExit) as exit_info:
            run([command, "--help"])
        assert exit_info.value.code == 0
        text = capsys.readouterr().out
        assert "5.0" in text      # guidance scale
        assert "50" in text       # sampling timesteps
        assert "0.0001" in text   # null-optimizer lr
        assert "10" in text       # inner steps

    def test_config_file_supplies_defaults(self, ckpt_path, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text("steps = 6\n")
        out = tmp_path / "inv"
        assert run(["--config", cfg, "invert", "--ckpt", ckpt_path, "--seed", 3,
                    "--out", out, "--source-token", 2]) == 0
        rows = list(csv.DictReader(open(out / "trajectory.csv")))
        assert len(rows) == 7

    def test_config_unknown_key_is_usage_error(self, ckpt_path, tmp_path, capsys):
        cfg = tmp_path / "run.toml"
        cfg.write_text("bogus_key = 1\n")
        assert run(["--config", cfg, "inspect", "--ckpt", ckpt_path]) == 1
        assert "bogus_key" in capsys.readouterr().err
