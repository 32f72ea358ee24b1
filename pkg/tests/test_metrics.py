import numpy as np
from hypothesis import given, strategies as st

from mambaout_rs.metrics import compute_metrics, confusion_matrix, metrics_from_confusion


def test_hand_case_k2():
    m = metrics_from_confusion([[3, 1], [2, 4]])
    np.testing.assert_allclose(m.precision, [0.6, 0.8], atol=1e-12)
    np.testing.assert_allclose(m.recall, [0.75, 2 / 3], atol=1e-12)
    np.testing.assert_allclose(m.f1, [2 / 3, 8 / 11], atol=1e-12)
    # (2/3 + 8/11) / 2
    assert abs(m.macro_f1 - 0.6969696969696970) < 1e-12
    assert m.accuracy == 0.7


def test_confusion_rows_are_true_labels():
    cm = confusion_matrix([0, 0, 1], [1, 1, 1], 2)
    assert cm.tolist() == [[0, 2], [0, 1]]


def test_perfect_predictor():
    y = np.repeat(np.arange(4), 5)
    m = compute_metrics(y, y, 4)
    assert m.macro_f1 == 1.0 and np.array_equal(m.confusion, np.diag([5] * 4))


def test_constant_predictor():
    K, n = 4, 10
    y = np.repeat(np.arange(K), n)
    m = compute_metrics(y, np.zeros_like(y), K)
    assert m.accuracy == 1 / K
    # only class 0 is ever predicted: P = 1/K, R = 1
    f0 = 2 * (1 / K) / (1 / K + 1)
    np.testing.assert_allclose(m.f1, [f0, 0, 0, 0])
    assert abs(m.macro_f1 - f0 / K) < 1e-12
    assert m.unpredicted_classes == [1, 2, 3]


def test_absent_class_flagged():
    m = compute_metrics([0, 0, 1], [0, 1, 1], 3)
    assert m.absent_classes == [2] and m.recall[2] == 0


@given(st.integers(2, 6), st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=60))
def test_invariants(K, pairs):
    yt = [a % K for a, _ in pairs]
    yp = [b % K for _, b in pairs]
    m = compute_metrics(yt, yp, K)
    assert np.array_equal(m.confusion.sum(axis=1), np.bincount(yt, minlength=K))
    for arr in (m.precision, m.recall, m.f1):
        assert ((0 <= arr) & (arr <= 1)).all()
    assert abs(m.macro_f1 - m.f1.mean()) < 1e-15
