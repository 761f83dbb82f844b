"""Toy benchmark and the fusion ablation verdicts.
"""
import pytest

from coordtrack.allowed_parameters import FusionMode
from coordtrack.bench import AblationReport
from coordtrack.bench import BenchReport
from coordtrack.bench import format_ablation
from coordtrack.bench import make_datasets
from coordtrack.bench import run_ablation
from coordtrack.bench import train_and_evaluate
from coordtrack.config import toy_config

TINY = toy_config().replace(
    samples_per_epoch=4,
    batch_size=4,
    epochs=1,
    train_sequences=2,
    heldout_sequences=1,
    sequence_length=3,
)


def ablation(**sucs):
    return AblationReport(results={FusionMode(m): BenchReport(s, 0.5, 0.5, []) for m, s in sucs.items()})


@pytest.mark.parametrize(
    "sucs,expected",
    [
        pytest.param({"mpfm": 0.50, "conf": 0.60, "addf": 0.70}, True, id="trails both by more than the margin"),
        pytest.param({"mpfm": 0.50, "conf": 0.54, "addf": 0.70}, False, id="within margin of one rival"),
        pytest.param({"mpfm": 0.70, "conf": 0.60, "addf": 0.50}, False, id="best"),
        pytest.param({"mpfm": 0.10, "none": 0.90}, False, id="identity is not a rival"),
        pytest.param({"conf": 0.60, "addf": 0.70}, False, id="mpfm not run"),
    ],
)
def test_hard_failure_needs_mpfm_to_trail_every_rival(sucs, expected):
    """Only a margin loss against every fusion rival is a hard failure."""
    assert ablation(**sucs).hard_failure is expected


def test_beats_compares_suc():
    """mpfm >= rival on Suc; None when a side is missing."""
    report = ablation(mpfm=0.6, conf=0.6, addf=0.7)
    assert report.beats(FusionMode.conf) is True
    assert report.beats(FusionMode.addf) is False
    assert ablation(conf=0.6).beats(FusionMode.conf) is None


def test_format_ablation_lines():
    """Per-mode metrics, pairwise verdicts and the hard-failure flag."""
    text = format_ablation(ablation(mpfm=0.6, conf=0.5, addf=0.7))
    lines = text.splitlines()
    assert lines[0] == "mpfm.suc = 0.600000"
    assert "mpfm_ge_conf = true" in lines
    assert "mpfm_ge_addf = false" in lines
    assert lines[-1] == "hard_failure = false"


def test_datasets_are_disjoint_and_sized_by_the_config():
    """Training and held-out sets come from different seeds."""
    train, heldout = make_datasets(TINY.replace(heldout_sequences=2), seed=0)
    assert len(train) == 2
    assert len(heldout) == 2
    assert train[0].boxes != heldout[0].boxes
    assert all(len(seq) == 3 for seq in train + heldout)


def test_run_ablation_reports_every_mode():
    """One trained model and one held-out score per requested mode."""
    report = run_ablation(TINY, modes=(FusionMode.mpfm, FusionMode.addf), seed=0)
    assert set(report.results) == {FusionMode.mpfm, FusionMode.addf}
    for mode, result in report.results.items():
        assert 0.0 <= result.suc <= 1.0
        assert len(result.per_sequence) == 1
        assert len(report.loss_curves[mode]) == 1


@pytest.mark.slow
def test_toy_recipe_tracks_held_out_sequences():
    """The shipped toy recipe reaches Suc >= 0.55 and Pre >= 0.80 on the 20 held-out sequences."""
    cfg = toy_config()
    train, heldout = make_datasets(cfg)
    result, report = train_and_evaluate(cfg, train, heldout)
    assert result.loss_curve[-1] < result.loss_curve[0]
    assert report.suc >= 0.55
    assert report.pre >= 0.80


@pytest.mark.slow
def test_toy_ablation_has_no_hard_failure():
    """Multilevel progressive fusion does not trail both rivals by more than the margin."""
    report = run_ablation(toy_config())
    assert set(report.results) == {FusionMode.mpfm, FusionMode.conf, FusionMode.addf}
    assert not report.hard_failure
