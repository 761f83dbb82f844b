"""Synthetic thermal sequences and scene files.
"""
from pathlib import Path

import numpy as np
import pytest

from coordtrack.errors import ContractViolation
from coordtrack.errors import GenerationError
from coordtrack.errors import SequenceFormatError
from coordtrack.synth import Blob
from coordtrack.synth import SynthScene
from coordtrack.synth import dump_scene
from coordtrack.synth import gen_sequence
from coordtrack.synth import load_scene
from coordtrack.synth import parse_scene
from coordtrack.synth import random_sequences

DATA = Path(__file__).resolve().parent.parent / "data"


def scene(**changes):
    values = dict(target=Blob(40.0, 50.0, 16.0, 12.0, 180.0, 1.5, 0.5), length=12, seed=3)
    values.update(changes)
    return SynthScene(**values)


def test_same_scene_renders_bit_identical_sequences():
    """Generation is a pure function of the scene and its seed."""
    a, b = gen_sequence(scene()), gen_sequence(scene())
    assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
    assert a.boxes == b.boxes


def test_different_seeds_change_only_the_noise():
    """Boxes follow the motion model; pixels differ with the seed."""
    a, b = gen_sequence(scene(seed=1)), gen_sequence(scene(seed=2))
    assert a.boxes == b.boxes
    assert not np.array_equal(a.frames[0], b.frames[0])


def test_frames_are_8_bit_and_sized_by_the_scene():
    """Every frame is height x width uint8."""
    seq = gen_sequence(scene(width=96, height=64))
    assert len(seq) == 12
    assert all(f.shape == (64, 96) and f.dtype == np.uint8 for f in seq.frames)


def test_boxes_follow_constant_velocity_and_scale_rate():
    """Centre moves by (vx, vy) per frame; extents grow by (1 + r)^t."""
    target = Blob(40.0, 50.0, 16.0, 12.0, 180.0, 1.5, 0.5, scale_rate=0.01)
    seq = gen_sequence(scene(target=target))
    for t, box in enumerate(seq.boxes):
        assert box.center == pytest.approx((40.0 + 1.5 * t, 50.0 + 0.5 * t))
        assert box.w == pytest.approx(16.0 * 1.01 ** t)
        assert box.h == pytest.approx(12.0 * 1.01 ** t)


def test_target_is_the_brightest_spot_without_noise():
    """The peak of a noiseless frame sits at the box centre."""
    seq = gen_sequence(scene(noise=0.0))
    frame, box = seq.frames[5], seq.boxes[5]
    row, col = np.unravel_index(np.argmax(frame), frame.shape)
    assert abs(col + 0.5 - box.center[0]) <= 1.0
    assert abs(row + 0.5 - box.center[1]) <= 1.0


def test_occluded_frames_hide_the_target():
    """Inclusive occlusion ranges drop the target but keep its box."""
    seq = gen_sequence(scene(noise=0.0, occlusions=((3, 4),)))
    assert seq.occluded == [t in (3, 4) for t in range(12)]
    assert seq.frames[3].max() == 60
    assert seq.frames[5].max() > 200
    assert len(seq.boxes) == 12


def test_target_leaving_the_frame_is_a_generation_error():
    """A target that moves fully out of view cannot be rendered."""
    with pytest.raises(GenerationError):
        gen_sequence(scene(target=Blob(120.0, 60.0, 8.0, 8.0, 180.0, 5.0, 0.0), length=20))


@pytest.mark.parametrize(
    "changes",
    [
        pytest.param({"length": 0}, id="empty sequence"),
        pytest.param({"noise": -1.0}, id="negative noise"),
        pytest.param({"occlusions": ((5, 2),)}, id="reversed occlusion"),
    ],
)
def test_invalid_scenes_are_rejected(changes):
    """Scene parameters are validated on construction."""
    with pytest.raises(ContractViolation):
        scene(**changes)


def test_random_sequences_keep_the_target_inside():
    """Random scenes are reproducible and never lose the target."""
    seqs = random_sequences(5, seed=9, width=64, height=64, length=10)
    again = random_sequences(5, seed=9, width=64, height=64, length=10)
    assert len(seqs) == 5
    for seq, other in zip(seqs, again):
        assert seq.boxes == other.boxes
        for box in seq.boxes:
            assert 0.0 <= box.x and box.x + box.w <= 64.0
            assert 0.0 <= box.y and box.y + box.h <= 64.0


def test_example_scene_file():
    """The shipped example scene parses to the documented values."""
    example = load_scene(DATA / "example.scene")
    assert (example.width, example.height, example.length, example.seed) == (128, 96, 24, 7)
    assert example.target == Blob(40.0, 48.0, 16.0, 12.0, 150.0, 2.0, 0.5, 0.005)
    assert example.distractors == (Blob(96.0, 30.0, 10.0, 10.0, 70.0, -0.5, 0.0),)
    assert example.occlusions == ((12, 14),)
    assert len(gen_sequence(example)) == 24


def test_dump_then_load_gives_the_same_scene(tmp_path):
    """Every scene field survives a trip through the file format."""
    original = scene(
        distractors=(Blob(10.0, 10.0, 6.0, 6.0, 80.0, 0.5, -0.5),),
        occlusions=((2, 3), (7, 7)),
        background=42.5,
    )
    path = tmp_path / "scene.txt"
    dump_scene(original, path)
    assert load_scene(path) == original


@pytest.mark.parametrize(
    "text",
    [
        pytest.param("width = 64\n", id="no target"),
        pytest.param("target = 1,2,3\n", id="short target"),
        pytest.param("target = 40,50,16,12,180,0,0\ncolour = red\n", id="unknown key"),
        pytest.param("target = 40,50,16,12,180,0,0\nocclusion = 3\n", id="occlusion without range"),
        pytest.param("target = 40,50,16,12,180,0,0\nwidth = wide\n", id="malformed width"),
        pytest.param("target = 40,50,-16,12,180,0,0\n", id="negative extent"),
    ],
)
def test_malformed_scene_text(text):
    """Scene files fail with SequenceFormatError."""
    with pytest.raises(SequenceFormatError):
        parse_scene(text)
