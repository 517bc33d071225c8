import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from lonecast import align, evaluation, forest
from lonecast.align import BinaryLabel, LabeledWindow
from lonecast.evaluation import ConfusionMatrix, ProtocolConfig

REFERENCE = ConfusionMatrix(tn=1371, fp=114, fn=412, tp=1198)
QUICK = forest.ForestParams(n_trees=5, max_depth=4)

counts = st.tuples(*(st.integers(0, 500) for _ in range(4))).filter(lambda c: sum(c) > 0)


class TestConfusion:
    def test_orientation(self):
        m = evaluation.confusion([1, 1, 0], [1, 1, 0])
        assert (m.tn, m.fp, m.fn, m.tp) == (1, 0, 0, 2)

    def test_inverted(self):
        m = evaluation.confusion([1, 1, 0], [0, 0, 1])
        assert (m.tp, m.tn, m.fp, m.fn) == (0, 0, 1, 2)

    def test_totals_and_table(self):
        assert REFERENCE.total == 3095
        assert REFERENCE.table() == [[1371, 114], [412, 1198]]

    @pytest.mark.parametrize("t,p", [([], []), ([0, 1], [0]), ([0, 2], [0, 1])])
    def test_bad_input(self, t, p):
        with pytest.raises(ValueError):
            evaluation.confusion(t, p)

    def test_negative_count(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(-1, 0, 0, 0)

    def test_addition(self):
        assert ConfusionMatrix(1, 2, 3, 4) + ConfusionMatrix(10, 20, 30, 40) == ConfusionMatrix(11, 22, 33, 44)

    def test_csv_and_render(self, tmp_path):
        REFERENCE.write_csv(tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[1] == "Not Feel Lonely,1371,114" and lines[2] == "Feel Lonely,412,1198"
        assert "1198" in REFERENCE.render() and "Feel Lonely" in REFERENCE.render()


class TestMetrics:
    def test_reference_matrix(self):
        r = evaluation.metrics(REFERENCE)
        assert r.accuracy == pytest.approx(2569 / 3095, abs=1e-12)
        assert r.precision == pytest.approx(1198 / 1312) and r.recall == pytest.approx(1198 / 1610)
        assert r.kappa == pytest.approx(oracles.kappa_direct(1371, 114, 412, 1198), abs=1e-12)

    def test_perfect(self):
        r = evaluation.metrics(ConfusionMatrix(5, 0, 0, 7))
        assert (r.accuracy, r.precision, r.recall, r.f1, r.kappa) == (1.0, 1.0, 1.0, 1.0, 1.0) and r.undefined == ()

    def test_chance(self):
        assert evaluation.metrics(ConfusionMatrix(25, 25, 25, 25)).kappa == pytest.approx(0.0, abs=1e-12)

    def test_no_positive_predictions(self):
        r = evaluation.metrics(ConfusionMatrix(5, 0, 3, 0))
        assert r.precision == 0.0 and r.f1 == 0.0 and set(r.undefined) == {"precision", "f1"}

    def test_single_class_kappa(self):
        r = evaluation.metrics(ConfusionMatrix(4, 0, 0, 0))
        assert "kappa" in r.undefined and r.accuracy == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluation.metrics(ConfusionMatrix(0, 0, 0, 0))

    @settings(max_examples=200, deadline=None)
    @given(counts)
    def test_flipped_positive(self, c):
        m = ConfusionMatrix(*c)
        a, b = evaluation.metrics(m), evaluation.metrics(m, positive=0)
        assert a.accuracy == b.accuracy and b.positive_class == "NotLonely"
        assert b.precision == evaluation.metrics(m.flipped()).precision
        if m.tn + m.fn and m.tn + m.fp:
            assert b.precision == pytest.approx(m.tn / (m.tn + m.fn)) and b.recall == pytest.approx(m.tn / (m.tn + m.fp))
        # kappa is symmetric in the class labels
        assert b.kappa == pytest.approx(a.kappa, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(counts)
    def test_kappa_matches_oracle(self, c):
        m = ConfusionMatrix(*c)
        r = evaluation.metrics(m)
        ref = oracles.kappa_direct(*c)
        if ref is None:
            assert "kappa" in r.undefined
        else:
            assert r.kappa == pytest.approx(ref, abs=1e-12) and -1 <= r.kappa <= 1

    def test_macro_average(self):
        a = evaluation.metrics(ConfusionMatrix(5, 0, 0, 5))
        b = evaluation.metrics(ConfusionMatrix(0, 5, 5, 0))
        m = evaluation.macro_average([a, b])
        assert m.accuracy == 0.5 and m.f1 == 0.5 and m.undefined == ("f1",)
        with pytest.raises(ValueError):
            evaluation.macro_average([])


def windows(pid, n):
    return [LabeledWindow(pid, BinaryLabel(pid, 86400.0 * (30 + k), 30 + k, 50.0, k % 2, 50.0), np.arange(9 + k, 23 + k), np.zeros((14, 1))) for k in range(n)]


class TestSplit:
    def test_sizes(self):
        ws = windows("A", 10) + windows("B", 10) + windows("C", 10)
        train, test = evaluation.personalized_split(ws, "B")
        assert len(test) == 5 and len(train) == 25
        assert all(w.participant == "B" for w in test)
        assert [w.label.day for w in test] == [35, 36, 37, 38, 39]

    def test_odd_count_tests_the_larger_half(self):
        train, test = evaluation.personalized_split(windows("A", 7), "A")
        assert (len(train), len(test)) == (3, 4)

    def test_one_window(self):
        with pytest.raises(evaluation.TooFewWindows):
            evaluation.personalized_split(windows("A", 1) + windows("B", 5), "A")

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(2, 12), min_size=1, max_size=5))
    def test_partition(self, sizes):
        ws = [w for i, n in enumerate(sizes) for w in windows(f"P{i}", n)]
        for p in {w.participant for w in ws}:
            train, test = evaluation.personalized_split(ws, p)
            ids = lambda s: sorted((w.participant, w.label.day) for w in s)
            assert ids(train + test) == ids(ws) and not set(ids(train)) & set(ids(test))
            own_train = [w.label.time for w in train if w.participant == p]
            assert max(own_train, default=-1) < min(w.label.time for w in test)


class TestShuffle:
    def test_permutes_within_participant(self):
        labs = [BinaryLabel(p, float(k), k, float(k + 10 * i), k % 2, 50.0) for i, p in enumerate("AB") for k in range(20)]
        out = evaluation.shuffle_within_participants(labs, 1)
        for p in "AB":
            before = sorted(l.score for l in labs if l.participant == p)
            after = [l for l in out if l.participant == p]
            assert sorted(l.score for l in after) == before
            assert [l.time for l in after] == [l.time for l in labs if l.participant == p]
        assert [l.score for l in out] != [l.score for l in labs]
        assert out == evaluation.shuffle_within_participants(labs, 1)


class TestProtocol:
    def test_runs_every_participant(self, small_grid):
        grid, labels, _ = small_grid
        res = evaluation.run_protocol(grid, labels, QUICK, ProtocolConfig(explain=True))
        assert len(res.succeeded) == 4 and not res.failed
        assert res.pooled.total == sum(p.n_test for p in res.succeeded)
        for p in res.succeeded:
            # no own training label at or after the first test label
            assert max(p.train_own_label_times) < min(p.test_label_times)
            assert p.n_test == -(-p.n_windows // 2)
        assert res.explanation.phi.shape == (res.pooled.total, len(res.feature_names))
        assert len(res.feature_names) == 14 * len(grid.names)

    def test_deterministic_and_written(self, small_grid, tmp_path):
        grid, labels, _ = small_grid
        cfg = ProtocolConfig(explain=False)
        a = evaluation.run_protocol(grid, labels, QUICK, cfg)
        b = evaluation.run_protocol(grid, labels, QUICK, cfg)
        assert a.to_dict() == b.to_dict()
        a.write(tmp_path)
        saved = json.loads((tmp_path / "metrics.json").read_text())
        assert saved["n_models"] == 4 and saved["macro"]["accuracy"] == pytest.approx(a.macro.accuracy)
        assert (tmp_path / "participants.csv").read_text().count("\n") == 5
        assert "macro" in a.render() and evaluation.MACRO_NOTE in a.render()

    def test_sparse_participant_is_skipped(self, small_grid):
        grid, labels, _ = small_grid
        kept = [l for l in labels if l.participant != "P0"]
        p0 = sorted((l for l in labels if l.participant == "P0"), key=lambda l: l.time)
        # one eligible label only: the latest one
        res = evaluation.run_protocol(grid, kept + p0[-1:], QUICK, ProtocolConfig(explain=False))
        (failed,) = res.failed
        assert failed.participant == "P0" and "window" in failed.error
        assert len(res.succeeded) == 3

    def test_needs_two_participants(self, small_grid):
        grid, labels, _ = small_grid
        with pytest.raises(ValueError):
            evaluation.run_protocol(grid, [l for l in labels if l.participant == "P1"], QUICK)

    def test_eligible_labels_fit_the_span(self, small_grid):
        grid, labels, _ = small_grid
        el = evaluation.eligible_labels(grid, labels)
        assert 0 < len(el) < len(labels)
        for l in el:
            lo, hi = grid.spans[l.participant]
            assert l.day - align.FIRST_OFFSET >= lo and l.day - align.LAST_OFFSET <= hi
