"""Command line: sub-commands, output lines and exit codes.
"""
from pathlib import Path

import pytest

from coordtrack.cli import format_check
from coordtrack.cli import main
from coordtrack.config import format_config
from coordtrack.config import toy_config
from coordtrack.gradcheck import GradCheckReport
from coordtrack.model import TrackingModel
from coordtrack.sequence_io import GROUNDTRUTH_FILE
from coordtrack.sequence_io import read_predictions
from coordtrack.sequence_io import write_boxes
from coordtrack.sequence_io import write_sequence
from coordtrack.synth import Blob
from coordtrack.synth import SynthScene
from coordtrack.synth import gen_sequence
from coordtrack.vocab import BBox

DATA = Path(__file__).resolve().parent.parent / "data"

TINY = toy_config().replace(
    samples_per_epoch=4, batch_size=4, epochs=1, train_sequences=2, sequence_length=4,
)


def error_line(capsys):
    return capsys.readouterr().err.strip().splitlines()[-1]


@pytest.fixture
def weights(tmp_path):
    path = tmp_path / "toy.weights"
    TrackingModel(TINY, seed=0).save(path)
    return path


@pytest.fixture
def sequence_dir(tmp_path):
    seq = gen_sequence(SynthScene(Blob(50.0, 60.0, 14.0, 12.0, 170.0, 1.0, -0.5), length=3, seed=2))
    root = tmp_path / "seq"
    write_sequence(root, seq.frames, seq.boxes)
    return root


def test_eval_writes_report_and_prints_summary(tmp_path, capsys):
    """eval prints suc, pre and normp and exits 0."""
    boxes = [BBox(0.0, 0.0, 10.0, 10.0), BBox(4.0, 4.0, 10.0, 10.0)]
    write_boxes(tmp_path / "pred.txt", boxes)
    write_boxes(tmp_path / "gt.txt", boxes)
    code = main([
        "eval", "--pred", str(tmp_path / "pred.txt"), "--gt", str(tmp_path / "gt.txt"),
        "--report", str(tmp_path / "report.txt"),
    ])
    out = capsys.readouterr().out.splitlines()
    assert code == 0
    assert out == ["suc = 0.952381", "pre = 1.000000", "normp = 1.000000"]
    assert (tmp_path / "report.txt").read_text().startswith("suc = 0.952381\n")


@pytest.mark.parametrize(
    "argv",
    [
        pytest.param([], id="no command"),
        pytest.param(["track"], id="missing required options"),
        pytest.param(["dance"], id="unknown command"),
        pytest.param(["track", "--weights", "w", "--seq", "s", "--out", "o", "--fusion", "sum"], id="bad choice"),
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    """Argument errors become a usage error line and status 2."""
    assert main(argv) == 2
    assert error_line(capsys).startswith("error code=usage status=2 detail=")


def test_missing_input_exits_3(tmp_path, capsys):
    """A prediction file that does not exist is missing_file."""
    write_boxes(tmp_path / "gt.txt", [BBox(0.0, 0.0, 1.0, 1.0)])
    code = main([
        "eval", "--pred", str(tmp_path / "absent.txt"), "--gt", str(tmp_path / "gt.txt"),
        "--report", str(tmp_path / "r.txt"),
    ])
    assert code == 3
    assert error_line(capsys).startswith("error code=missing_file status=3")


def test_malformed_ground_truth_exits_4(tmp_path, capsys):
    """A ground-truth row with three values is malformed_input."""
    write_boxes(tmp_path / "pred.txt", [BBox(0.0, 0.0, 1.0, 1.0)])
    (tmp_path / "gt.txt").write_text("1,2,3\n")
    code = main([
        "eval", "--pred", str(tmp_path / "pred.txt"), "--gt", str(tmp_path / "gt.txt"),
        "--report", str(tmp_path / "r.txt"),
    ])
    assert code == 4
    assert error_line(capsys).startswith("error code=malformed_input status=4")


def test_length_mismatch_exits_5(tmp_path, capsys):
    """Predictions and ground truth of different lengths violate the evaluation contract."""
    write_boxes(tmp_path / "pred.txt", [BBox(0.0, 0.0, 1.0, 1.0)] * 2)
    write_boxes(tmp_path / "gt.txt", [BBox(0.0, 0.0, 1.0, 1.0)])
    code = main([
        "eval", "--pred", str(tmp_path / "pred.txt"), "--gt", str(tmp_path / "gt.txt"),
        "--report", str(tmp_path / "r.txt"),
    ])
    assert code == 5
    assert error_line(capsys).startswith("error code=contract_violation status=5")


def test_synth_renders_the_example_scene(tmp_path, capsys):
    """The example scene becomes 24 frames plus ground truth."""
    out = tmp_path / "example"
    assert main(["synth", "--scene", str(DATA / "example.scene"), "--out", str(out)]) == 0
    assert capsys.readouterr().out.strip() == "frames = 24"
    assert len(list(out.glob("*.pgm"))) == 24
    assert len((out / GROUNDTRUTH_FILE).read_text().splitlines()) == 24


def test_synth_with_unknown_scene_key_exits_4(tmp_path, capsys):
    """Scene files are validated."""
    scene = tmp_path / "bad.scene"
    scene.write_text("target = 40,50,16,12,180,0,0\nsky = blue\n")
    assert main(["synth", "--scene", str(scene), "--out", str(tmp_path / "out")]) == 4


def test_synth_target_leaving_frame_exits_8(tmp_path, capsys):
    """A target that leaves the frame is a generation error."""
    scene = tmp_path / "escape.scene"
    scene.write_text("width = 32\nheight = 32\nlength = 10\ntarget = 28,16,4,4,180,5,0\n")
    assert main(["synth", "--scene", str(scene), "--out", str(tmp_path / "out")]) == 8
    assert error_line(capsys).startswith("error code=generation_error status=8")


def test_track_writes_one_prediction_per_frame(weights, sequence_dir, tmp_path, capsys):
    """Frame 1 holds the ground-truth box with score 1; every frame gets a row."""
    out = tmp_path / "pred.txt"
    assert main(["track", "--weights", str(weights), "--seq", str(sequence_dir), "--out", str(out)]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "frames = 3"
    boxes, scores = read_predictions(out)
    assert len(boxes) == 3
    first_gt = (sequence_dir / GROUNDTRUTH_FILE).read_text().splitlines()[0]
    assert out.read_text().splitlines()[0] == f"{first_gt},1.000000"
    assert scores[0] == 1.0
    assert all(0.0 <= s <= 1.0 for s in scores)


def test_track_with_mismatched_config_exits_5(weights, sequence_dir, tmp_path, capsys):
    """Weights that do not fit the configured architecture are a contract violation."""
    other = tmp_path / "other.cfg"
    other.write_text(format_config(TINY.replace(nbins=50)))
    code = main([
        "track", "--weights", str(weights), "--seq", str(sequence_dir),
        "--out", str(tmp_path / "pred.txt"), "--config", str(other),
    ])
    assert code == 5


def test_track_without_weights_exits_3(sequence_dir, tmp_path, capsys):
    """Missing weights (and their config sidecar) are missing_file."""
    code = main([
        "track", "--weights", str(tmp_path / "none.weights"), "--seq", str(sequence_dir),
        "--out", str(tmp_path / "pred.txt"),
    ])
    assert code == 3


def test_train_toy_is_deterministic(tmp_path, capsys):
    """Two runs with the same seed write identical weights and print one loss line per epoch."""
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(format_config(TINY))
    for name in ("a.weights", "b.weights"):
        assert main(["train-toy", "--config", str(cfg), "--out-weights", str(tmp_path / name), "--seed", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2
    assert lines[0] == lines[1]
    assert lines[0].startswith("epoch = 1,")
    assert (tmp_path / "a.weights").read_bytes() == (tmp_path / "b.weights").read_bytes()
    assert (tmp_path / "a.weights.cfg").is_file()


def test_gradcheck_failure_exits_7(capsys):
    """A zero tolerance fails every check and reports gradcheck_failed."""
    assert main(["gradcheck", "--tol", "0"]) == 7
    captured = capsys.readouterr()
    assert all(line.endswith("status=fail") for line in captured.out.splitlines())
    assert all(" nonfinite_at=" in line for line in captured.out.splitlines())
    assert captured.err.strip().splitlines()[-1].startswith("error code=gradcheck_failed status=7")


def test_gradcheck_rejects_a_step_outside_range(capsys):
    """--eps must lie in [1e-6, 1e-3]; anything else is a contract violation."""
    assert main(["gradcheck", "--eps", "0.01"]) == 5
    captured = capsys.readouterr()
    assert captured.out == ""
    assert captured.err.strip().splitlines()[-1].startswith("error code=contract_violation status=5")


@pytest.mark.parametrize(
    "report,expected",
    [
        pytest.param(
            GradCheckReport("tensor.sqrt", 1.5e-9, 6, 1e-4, ((0, 3), (2, 17))),
            "check=tensor.sqrt max_rel_error=1.500e-09 probes=6 nonfinite_at=0:3;2:17 status=fail",
            id="non-finite entries",
        ),
        pytest.param(
            GradCheckReport("fusion.mpfm", 2.0e-7, 40, 1e-4),
            "check=fusion.mpfm max_rel_error=2.000e-07 probes=40 nonfinite_at=- status=ok",
            id="clean",
        ),
    ],
)
def test_gradcheck_line_names_non_finite_locations(report, expected):
    """Every line lists the (tensor, entry) pairs whose derivative was not finite."""
    assert format_check(report) == expected
