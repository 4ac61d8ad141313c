import json

import pytest

from partmask_hub.cli import constants
from partmask_hub.cli.interface import run_cli
from partmask_hub.core import usecases
from partmask_hub.core.exceptions import UnassignedCategoryError
from partmask_hub.core.usecases import CHECKPOINT_NAME, TRAIN_LOG_NAME
from partmask_hub.infra.archive import INDEX_NAME
from partmask_hub.infra.checkpoint import load_checkpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    archive = root / "scenes"
    assert run_cli(["gen", "--count", "12", "--out", str(archive)]) == 0
    run_dir = root / "run"
    code = run_cli(
        [
            "train",
            "--archive",
            str(archive),
            "--out",
            str(run_dir),
            "--epochs",
            "1",
            "--batch-size",
            "6",
        ],
    )
    assert code == 0
    return root, archive, run_dir / CHECKPOINT_NAME


def _scene_files(directory):
    return {
        path.name: path.read_bytes()
        for path in directory.iterdir()
        if path.suffix in (".pgm", ".pbm") or path.name == INDEX_NAME
    }


def test_no_arguments_prints_help(capsys):
    assert run_cli([]) == constants.EXIT_USAGE
    assert "Доступные команды" in capsys.readouterr().out


def test_help_flag_exits_cleanly(capsys):
    assert run_cli(["--help"]) == 0
    assert "использование" in capsys.readouterr().out


def test_unknown_command_is_usage_error(capsys):
    assert run_cli(["fit"]) == constants.EXIT_USAGE
    assert "Ошибка" in capsys.readouterr().out


def test_gen_rejects_zero_count(tmp_path):
    assert run_cli(["gen", "--count", "0", "--out", str(tmp_path)]) == 2


def test_gen_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run_cli(["gen", "--count", "8", "--out", str(tmp_path / name)]) == 0
    assert _scene_files(tmp_path / "a") == _scene_files(tmp_path / "b")


def test_train_writes_run_artifacts(workspace):
    _, _, checkpoint = workspace
    run_dir = checkpoint.parent
    lines = (run_dir / TRAIN_LOG_NAME).read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["epoch"] == 1
    effective = json.loads((run_dir / "effective_config.json").read_text("utf-8"))
    assert effective["variant"] == "interpretable"
    assert effective["train"]["epochs"] == 1
    loaded = load_checkpoint(checkpoint)
    assert loaded.epoch == 1
    assert loaded.meta["variant"] == "interpretable"
    assert loaded.net.spec.num_categories == 6


def test_eval_reports_are_reproducible(workspace, capsys):
    root, archive, checkpoint = workspace
    outputs = []
    for name in ("eval_a", "eval_b"):
        out = root / name
        code = run_cli(
            [
                "eval",
                "--checkpoint",
                str(checkpoint),
                "--archive",
                str(archive),
                "--out",
                str(out),
                "--top-m",
                "5",
            ],
        )
        assert code == 0
        outputs.append(((out / "report.tsv").read_bytes(), (out / "report.json")))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1].read_bytes() == outputs[1][1].read_bytes()
    assert "interpretable" in capsys.readouterr().out


def test_compare_writes_report_per_checkpoint(workspace):
    root, archive, checkpoint = workspace
    out = root / "compare"
    code = run_cli(
        [
            "compare",
            "--checkpoints",
            str(checkpoint),
            "--archive",
            str(archive),
            "--out",
            str(out),
        ],
    )
    assert code == 0
    assert (out / "interpretable" / "report.tsv").exists()


def test_viz_writes_images(workspace):
    root, archive, checkpoint = workspace
    out = root / "viz"
    args = ["viz", "--checkpoint", str(checkpoint), "--archive", str(archive)]
    assert run_cli([*args, "--filters", "0,1", "--images", "1", "--out", str(out)]) == 0
    assert (out / "f01_img0000_masked.pgm").exists()
    assert run_cli([*args, "--filters", "99", "--out", str(out)]) == 2
    assert run_cli([*args, "--filters", "x", "--out", str(out)]) == 2


def test_missing_archive_is_usage_error(tmp_path, capsys):
    code = run_cli(["train", "--archive", str(tmp_path / "none"), "--epochs", "1"])
    assert code == constants.EXIT_USAGE
    assert "не найден" in capsys.readouterr().out


def test_checkpoint_archive_mismatch(workspace, tmp_path):
    root, archive, _ = workspace
    small = tmp_path / "small"
    assert run_cli(["gen", "--count", "2", "--out", str(small)]) == 0
    run_dir = tmp_path / "run"
    args = ["train", "--archive", str(small), "--out", str(run_dir), "--epochs", "1"]
    assert run_cli(args) == 0
    code = run_cli(
        [
            "eval",
            "--checkpoint",
            str(run_dir / CHECKPOINT_NAME),
            "--archive",
            str(archive),
            "--out",
            str(tmp_path / "eval"),
        ],
    )
    assert code == constants.EXIT_USAGE


@pytest.mark.parametrize(
    "content",
    [b"GBX0\n{}\n", b'GBX1\n{"version": 1}\n'],
    ids=["magic", "header"],
)
def test_corrupted_checkpoint_is_usage_error(workspace, tmp_path, content):
    _, archive, _ = workspace
    broken = tmp_path / "broken.gbx"
    broken.write_bytes(content)
    args = ["eval", "--checkpoint", str(broken), "--archive", str(archive)]
    assert run_cli([*args, "--out", str(tmp_path / "eval")]) == 2


def test_unassigned_category_is_usage_error(workspace, tmp_path, monkeypatch):
    _, archive, checkpoint = workspace

    def unassigned(*args, **kwargs):
        raise UnassignedCategoryError(3)

    monkeypatch.setattr(usecases, "evaluate_checkpoint", unassigned)
    args = ["eval", "--checkpoint", str(checkpoint), "--archive", str(archive)]
    assert run_cli([*args, "--out", str(tmp_path / "eval")]) == constants.EXIT_USAGE


def test_verify_passes_and_detects_flipped_sign(capsys):
    assert run_cli(["verify"]) == constants.EXIT_OK
    assert "Все проверки пройдены" in capsys.readouterr().out
    assert run_cli(["verify", "--flip-gradient-sign"]) == constants.EXIT_VERIFY_FAILED
    assert "filter_loss_gradient" in capsys.readouterr().out


def test_identical_training_runs_are_byte_identical(workspace, tmp_path):
    _, archive, checkpoint = workspace
    run_dir = tmp_path / "again"
    args = ["--archive", str(archive), "--epochs", "1", "--batch-size", "6"]
    assert run_cli(["train", *args, "--out", str(run_dir)]) == 0
    assert (run_dir / CHECKPOINT_NAME).read_bytes() == checkpoint.read_bytes()
    first_log = checkpoint.parent / TRAIN_LOG_NAME
    assert (run_dir / TRAIN_LOG_NAME).read_bytes() == first_log.read_bytes()
