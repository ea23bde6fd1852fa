import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dastraffic import evaluation as E
from dastraffic.dataset import OCC2, OCC5, SIZE2, LabeledDataset
from dastraffic.framing import LabeledSample
from dastraffic.nn import Dense, Network


def _report(task, truth, pred, name=""):
    return E.report_from_predictions(task, truth, pred, name)


def _size_report(large_ok, small_ok, n=100, name="test"):
    truth = [0] * n + [1] * n
    pred = [0] * large_ok + [1] * (n - large_ok) + [1] * small_ok + [0] * (n - small_ok)
    return _report(SIZE2, truth, pred, name)


def test_binary_hand_count():
    r = _report(OCC2, [0, 0, 1, 1], [0, 1, 1, 1])
    assert r.overall_acc == 0.75
    assert r.per_class_acc == {"LOV": 0.5, "HOV": 1.0}
    assert r.confusion.tolist() == [[1, 1], [0, 2]]


def test_all_correct():
    r = _report(OCC5, [0, 1, 2, 3, 4, 4], [0, 1, 2, 3, 4, 4])
    assert r.overall_acc == 1.0
    assert np.array_equal(r.confusion, np.diag([1, 1, 1, 1, 2]))


def test_absent_class():
    r = _report(OCC5, [0, 0, 1], [0, 1, 1])
    assert r.per_class_acc["3p"] is None
    assert "n/a" in E.report_csv([r])
    assert E.avg_line(_report(SIZE2, [0, 0], [0, 1])) == "Avg 50 (Large: 50)"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60),
       st.randoms(use_true_random=False))
def test_report_invariants(pairs, rnd):
    truth, pred = zip(*pairs)
    r = _report(OCC5, truth, pred)
    assert r.total == len(pairs)
    assert r.overall_acc == pytest.approx(np.trace(r.confusion) / len(pairs))
    for i, (name, acc) in enumerate(r.per_class_acc.items()):
        row = r.confusion[i]
        assert acc == (None if row.sum() == 0 else pytest.approx(row[i] / row.sum()))
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    t2, p2 = zip(*shuffled)
    assert np.array_equal(_report(OCC5, t2, p2).confusion, r.confusion)


def test_evaluate_uses_network():
    net = Network((2,), [Dense(2)], "svm", seed=0)
    net.layers[0].params[0][:] = np.eye(2)
    samples = [LabeledSample(np.array(v, float), lab, 0, None, 0.0, 2)
               for v, lab in (([1, 0], 0), ([0, 1], 1), ([1, 0], 1), ([0.2, 0.1], 0))]
    ds = LabeledDataset(tuple(samples), OCC2)
    r = E.evaluate(net, ds, "test/1d")
    assert r.overall_acc == 0.75 and r.dataset_name == "test/1d"
    assert E.evaluate(net, ds).confusion.tolist() == r.confusion.tolist()
    rev = LabeledDataset(tuple(reversed(samples)), OCC2)
    assert np.array_equal(E.evaluate(net, rev).confusion, r.confusion)
    with pytest.raises(ValueError):
        E.evaluate(Network((2,), [Dense(5)], "svm"), ds)


def test_independent_average():
    assert E.independent_average([56, 69]) == 62.5
    assert E.percent(E.independent_average([56, 69])) == "63"
    assert E.percent(E.independent_average([69, 6])) == "38"
    r = _report(OCC2, [0, 1], [0, 0])
    assert E.independent_average([r]) == 0.5
    with pytest.raises(ValueError):
        E.independent_average([])


@pytest.mark.parametrize("acc, text", [(0.625, "63"), (0.92, "92"), (0.915, "92"),
                                       (0.0, "0"), (1.0, "100"), (62.5, "63"), (None, E.DASH)])
def test_percent_half_up(acc, text):
    assert E.percent(acc) == text


def test_size_avg_line():
    r = _size_report(89, 94)
    assert E.avg_line(r) == "Avg 92 (Large: 89, Small: 94)"
    assert "Avg 92 (Large: 89, Small: 94)" in E.render_table([r], E.SIZE_TABLE)


def test_empty_tables():
    occ = E.render_table([], E.OCCUPANCY_TABLE)
    assert E.DASH in occ and "Acc (%)" in occ and "Ind. Avg" in occ
    assert E.DASH in E.render_table([], E.SIZE_TABLE)
    with pytest.raises(ValueError):
        E.render_table([], "wide")


def test_occupancy_table_cells():
    reps = [
        _report(OCC2, [0] * 100, [0] * 85 + [1] * 15, "test/1d"),
        _report(OCC2, [0] * 100, [0] * 97 + [1] * 3, "test/2d"),
        _report(OCC2, [1] * 100, [1] * 56 + [0] * 44, "ind-5p/1d"),
        _report(OCC2, [0] * 100, [0] * 69 + [1] * 31, "ind-1p/1d"),
    ]
    lines = E.render_table(reps).splitlines()
    assert len(lines) == 5
    acc = lines[1].split()
    # 5-way 1D/2D empty, then 2-way 1D and 2D
    assert acc[2:6] == [E.DASH, E.DASH, "85", "97"]
    assert lines[4].split()[2:6] == [E.DASH, E.DASH, "63", E.DASH]


def test_report_csv_twin():
    r = _size_report(89, 94, name="test")
    rows = list(csv.reader(io.StringIO(E.report_csv([r]))))
    assert rows[0] == ["task", "dataset", "class", "accuracy", "support"]
    assert rows[1] == [SIZE2, "test", "Large", "0.89", "100"]
    assert rows[3] == [SIZE2, "test", "all", "0.915", "200"]


def test_confusion_text():
    text = E.confusion_text(_report(OCC2, [0, 1, 1], [0, 1, 0]))
    assert text.splitlines()[1].split() == ["LOV", "1", "0"]
    assert text.splitlines()[2].split() == ["HOV", "1", "1"]
