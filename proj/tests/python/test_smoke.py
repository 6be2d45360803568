"""Smoke tests for the compiled bindings: each exposed operation is called
once with a fixture whose expected value is known in closed form."""

import json
import math
import os

import pytest

import musiscene


def test_prompts_are_exact():
    fusion = musiscene.fusion_prompt("a beach at dusk", "slow warm synths")
    assert fusion == (
        'Video Caption: "a beach at dusk", Music Caption: "slow warm synths". '
        "Describe the music from both video and music captions."
    )
    msi = musiscene.msi_prompt("a beach at dusk", "slow warm synths")
    assert msi == (
        'Video Caption: "a beach at dusk", Music Caption: "slow warm synths". '
        "What type of scene the music is suitable for?"
    )


def test_score_captions_identity():
    pairs = [
        ("a calm piano piece over a sunset", "a calm piano piece over a sunset"),
        ("fast drums for a chase scene", "fast drums for a chase scene"),
    ]
    scores = musiscene.score_captions(pairs)
    assert set(scores) == {"B-U", "M-R", "R-L", "B-S"}
    assert scores["B-U"] == pytest.approx(1.0, abs=1e-9)
    assert scores["R-L"] == pytest.approx(1.0, abs=1e-9)
    assert scores["B-S"] == pytest.approx(1.0, abs=1e-9)
    assert 0.9 < scores["M-R"] <= 1.0


def test_frechet_distance_identity_and_offset():
    np = pytest.importorskip("numpy")
    rng = np.random.default_rng(7)
    ref = rng.normal(size=(24, 4))
    assert musiscene.frechet_distance(ref, ref) == pytest.approx(0.0, abs=1e-6)
    # Pure translation by a unit vector: distance is the squared offset, 1.
    gen = ref + np.array([1.0, 0.0, 0.0, 0.0])
    assert musiscene.frechet_distance(ref, gen) == pytest.approx(1.0, abs=1e-6)


def test_label_kl_closed_form():
    np = pytest.importorskip("numpy")
    target = np.array([0.5, 0.5])
    pred = np.array([0.25, 0.75])
    expected = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
    assert musiscene.label_kl(target, pred) == pytest.approx(expected, abs=1e-12)
    assert musiscene.label_kl(target, target) == pytest.approx(0.0, abs=1e-12)


def test_subjective_means():
    rows = [
        ("r1", "v1", "msi", 70.0),
        ("r2", "v1", "msi", 80.0),
        ("r1", "v1", "fusion", 61.0),
    ]
    report = musiscene.subjective_means(rows)
    assert report["rows"]["msi"]["Mean"] == pytest.approx(75.0)
    assert report["rows"]["fusion"]["Mean"] == pytest.approx(61.0)
    assert report["partial_rows"] == []


def test_run_cli_round_trip(tmp_path):
    hyps = tmp_path / "hyps.txt"
    hyps.write_text("gentle strings in a quiet field\n")
    report = tmp_path / "report.json"
    code = musiscene.run_cli(
        [
            "eval-text",
            "--hyps",
            str(hyps),
            "--refs",
            str(hyps),
            "--report",
            str(report),
        ]
    )
    assert code == 0
    data = json.loads(report.read_text())
    assert data["rows"]["corpus"]["B-U"] == pytest.approx(1.0, abs=1e-9)


def test_run_cli_usage_error():
    assert musiscene.run_cli([]) == 2


if __name__ == "__main__":
    raise SystemExit(pytest.main([os.path.abspath(__file__), "-q"]))
