import dataclasses
import filecmp
import json

import numpy as np
import pytest

from lonecast import align, evaluation, forest, model, pipeline, synth
from lonecast.synth import SynthConfig


def test_same_seed_same_files(tmp_path, small_config):
    for name in ("a", "b"):
        cohort, truth = synth.generate(small_config)
        model.write_cohort(cohort, tmp_path / name)
        (tmp_path / name / "truth.json").write_text(truth.dumps())
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert cmp.left_list and not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert all(filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False) for f in cmp.common_files)


def test_other_seed_differs(small_config):
    a, _ = synth.generate(small_config)
    b, _ = synth.generate(dataclasses.replace(small_config, seed=small_config.seed + 1))
    assert a.self_reports != b.self_reports


def test_written_cohort_ingests_back(tmp_path, small_cohort):
    streams, _ = small_cohort
    model.write_cohort(streams, tmp_path)
    back = model.ingest_cohort(tmp_path)
    assert back.participants == streams.participants
    assert back.self_reports == streams.self_reports and back.ppg == streams.ppg
    assert back.phone_events == streams.phone_events and back.location_fixes == streams.location_fixes
    assert not back.duplicates


def test_default_volume():
    cfg = SynthConfig(ppg_segments_per_day=0)
    streams, truth = synth.generate(cfg)
    days = 29 * 56
    assert len(streams.participants) == 29 and cfg.n_days == 56
    # missing_rate 0.05 thins reports and ring days alike
    assert len(streams.self_reports) == pytest.approx(days * 3 * 0.95, rel=0.03)
    ring_days = {(s.participant, s.date) for s in streams.daily_scores}
    assert len(ring_days) == pytest.approx(days * 0.95, rel=0.03)
    assert truth.coefficients["sleep_restless"] > 0 and "sleep_restless" in truth.drivers
    assert truth.lag_days == 10


def test_reports_in_range(small_cohort):
    streams, _ = small_cohort
    scores = np.array([r.loneliness for r in streams.self_reports])
    assert scores.min() >= 0 and scores.max() <= 100 and scores.std() > 5


def test_no_effect_has_no_drivers():
    cfg = SynthConfig(n_participants=3, weeks=2, effect_strength=0.0, ppg_segments_per_day=0)
    streams, truth = synth.generate(cfg)
    assert truth.drivers == [] and all(v == 0 for v in truth.coefficients.values())
    text, listing = synth.describe_truth(truth)
    assert listing["drivers"] == [] and "no planted drivers" in text


def test_no_effect_protocol_is_at_chance():
    cfg = SynthConfig(n_participants=10, effect_strength=0.0, seed=1, ppg_segments_per_day=0)
    streams, _ = synth.generate(cfg)
    ext = pipeline.extract_features(streams)
    labels, _ = pipeline.cohort_labels(streams)
    grid = align.FeatureGrid.build(ext.frame, labels, model.StudyClock())
    res = evaluation.run_protocol(grid, labels, forest.ForestParams(n_trees=50, max_depth=8), evaluation.ProtocolConfig(explain=False))
    assert len(res.succeeded) == 10 and 0.40 <= res.macro.accuracy <= 0.65


def test_truth_round_trip(small_cohort):
    _, truth = small_cohort
    back = synth.PlantedTruth.from_dict(json.loads(truth.dumps()))
    assert back == truth
    text, listing = synth.describe_truth(truth)
    signs = {d["name"]: d["sign"] for d in listing["drivers"]}
    assert signs == {n: "+" if synth.DRIVER_SIGNS[n] > 0 else "-" for n in synth.DRIVERS}
    assert all(d["observed_by"] == synth.OBSERVED_BY[d["name"]] for d in listing["drivers"])


def test_planted_driver_is_observed(small_cohort):
    # the ring's restlessness score tracks the lagged latent logit
    streams, truth = small_cohort
    clock = model.StudyClock()
    for pid in streams.participants[:2]:
        scores = {clock.day_of_date(s.date): s.value for s in streams.daily_scores if s.participant == pid and s.name == "sleep_restless"}
        latent = truth.latent[pid]
        day0 = min(scores)
        pairs = [(scores[day0 + k - truth.lag_days], latent[k]) for k in range(truth.lag_days, len(latent)) if day0 + k - truth.lag_days in scores]
        a, b = np.array(pairs).T
        assert np.corrcoef(a, b)[0, 1] > 0.3


@pytest.mark.parametrize("kw", [{"n_participants": 0}, {"weeks": 0}, {"missing_rate": 1.0}, {"effect_strength": -1.0}, {"ppg_sample_rate": 0.0}])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)
