"""Sequence directories, box files, predictions and reports.
"""
import numpy as np
import pytest

from coordtrack.errors import ContractViolation
from coordtrack.errors import SequenceFormatError
from coordtrack.metrics import evaluate
from coordtrack.sequence_io import GROUNDTRUTH_FILE
from coordtrack.sequence_io import read_boxes
from coordtrack.sequence_io import read_predictions
from coordtrack.sequence_io import read_report
from coordtrack.sequence_io import read_sequence
from coordtrack.sequence_io import write_boxes
from coordtrack.sequence_io import write_predictions
from coordtrack.sequence_io import write_report
from coordtrack.sequence_io import write_sequence
from coordtrack.vocab import BBox


def frames(count=3, shape=(24, 32)):
    rng = np.random.default_rng(0)
    return [rng.integers(0, 256, size=shape).astype(np.uint8) for _ in range(count)]


def test_sequence_directory_round_trip(tmp_path):
    """PGM frames come back bit-identical; boxes come back to 4 decimals."""
    original = frames()
    boxes = [BBox(1.25, 2.5, 10.0, 8.0), BBox(2.0, 3.0, 10.5, 8.25), BBox(3.125, 4.0, 11.0, 8.5)]
    write_sequence(tmp_path / "seq", original, boxes)
    assert sorted(p.name for p in (tmp_path / "seq").iterdir()) == [
        "0001.pgm", "0002.pgm", "0003.pgm", GROUNDTRUTH_FILE,
    ]
    loaded = read_sequence(tmp_path / "seq")
    assert len(loaded) == 3
    assert all(np.array_equal(a, b) for a, b in zip(loaded.frames, original))
    for got, want in zip(loaded.boxes, boxes):
        np.testing.assert_allclose(got.as_tuple(), want.as_tuple(), atol=1e-4)


def test_box_files_are_one_indexed_on_disk(tmp_path):
    """Pixel (0, 0) in memory is written as 1,1."""
    path = tmp_path / "boxes.txt"
    write_boxes(path, [BBox(0.0, 0.0, 5.0, 6.0)])
    assert path.read_text() == "1.0000,1.0000,5.0000,6.0000\n"
    assert read_boxes(path) == [BBox(0.0, 0.0, 5.0, 6.0)]


def test_box_files_accept_whitespace_separators(tmp_path):
    """Tabs, spaces and commas all separate values; blank lines are skipped."""
    path = tmp_path / "boxes.txt"
    path.write_text("11\t21\t30\t40\n\n11 21, 30 40\n")
    assert read_boxes(path) == [BBox(10.0, 20.0, 30.0, 40.0)] * 2


@pytest.mark.parametrize(
    "text",
    [
        pytest.param("1,2,3\n", id="three values"),
        pytest.param("1,2,x,4\n", id="non-numeric"),
        pytest.param("1,2,0,4\n", id="zero width"),
    ],
)
def test_malformed_box_files(tmp_path, text):
    """Malformed rows raise SequenceFormatError."""
    path = tmp_path / "boxes.txt"
    path.write_text(text)
    with pytest.raises(SequenceFormatError):
        read_boxes(path)


def test_ground_truth_may_hold_only_the_first_box(tmp_path):
    """A single ground-truth row is enough for tracking."""
    write_sequence(tmp_path, frames(), [BBox(1.0, 1.0, 4.0, 4.0)] * 3)
    (tmp_path / GROUNDTRUTH_FILE).write_text("2,2,4,4\n")
    assert len(read_sequence(tmp_path).boxes) == 1


def test_ground_truth_count_must_match_frames(tmp_path):
    """Two boxes for three frames is malformed."""
    write_sequence(tmp_path, frames(), [BBox(1.0, 1.0, 4.0, 4.0)] * 3)
    (tmp_path / GROUNDTRUTH_FILE).write_text("2,2,4,4\n2,2,4,4\n")
    with pytest.raises(SequenceFormatError):
        read_sequence(tmp_path)


def test_missing_sequence_parts(tmp_path):
    """Missing directories and ground truth are FileNotFoundError; no frames is malformed."""
    with pytest.raises(FileNotFoundError):
        read_sequence(tmp_path / "nowhere")
    with pytest.raises(FileNotFoundError):
        read_sequence(tmp_path)
    (tmp_path / GROUNDTRUTH_FILE).write_text("1,1,2,2\n")
    with pytest.raises(SequenceFormatError):
        read_sequence(tmp_path)


def test_frames_must_share_one_size(tmp_path):
    """Every frame of a sequence has the same shape."""
    write_sequence(tmp_path, frames(count=1) + frames(count=1, shape=(10, 10)), [BBox(1.0, 1.0, 4.0, 4.0)] * 2)
    with pytest.raises(SequenceFormatError):
        read_sequence(tmp_path)


def test_unreadable_frame_is_malformed(tmp_path):
    """A .pgm that is not an image raises SequenceFormatError."""
    (tmp_path / "0001.pgm").write_bytes(b"not an image")
    (tmp_path / GROUNDTRUTH_FILE).write_text("1,1,2,2\n")
    with pytest.raises(SequenceFormatError):
        read_sequence(tmp_path)


def test_predictions_carry_scores(tmp_path):
    """Rows are x,y,w,h,score; a missing score reads as 1."""
    path = tmp_path / "pred.txt"
    write_predictions(path, [BBox(0.0, 1.0, 2.0, 3.0)], [0.75])
    assert path.read_text() == "1.0000,2.0000,2.0000,3.0000,0.750000\n"
    boxes, scores = read_predictions(path)
    assert boxes == [BBox(0.0, 1.0, 2.0, 3.0)]
    assert scores == [0.75]
    path.write_text("1,2,2,3\n")
    assert read_predictions(path)[1] == [1.0]


def test_predictions_need_one_score_per_box(tmp_path):
    """Boxes and scores pair up."""
    with pytest.raises(ContractViolation):
        write_predictions(tmp_path / "pred.txt", [BBox(0.0, 1.0, 2.0, 3.0)], [])


def test_report_file_summary(tmp_path):
    """The report starts with suc, pre, normp and the frame count, then one line per frame."""
    gt = [BBox(0.0, 0.0, 10.0, 10.0), BBox(5.0, 5.0, 10.0, 10.0)]
    report = evaluate(gt, gt)
    path = tmp_path / "report.txt"
    write_report(path, report)
    summary = read_report(path)
    assert summary == pytest.approx({"suc": round(20 / 21, 6), "pre": 1.0, "normp": 1.0, "frames": 2.0})
    assert len(path.read_text().splitlines()) == 6
