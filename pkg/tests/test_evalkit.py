import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdrec.errors import LabelError, MetricError
from gdrec.evalkit import (
    average_ranks,
    binary_auc,
    classification_metrics,
    pca_project,
    regression_metrics,
    roc_auc_ovr,
)


def test_perfect_classification():
    rep = classification_metrics(["a", "b", "c"], ["a", "b", "c"])
    assert rep.accuracy == 1.0 and rep.macro_f1 == 1.0


def test_hand_counted_classification():
    rep = classification_metrics(list("aabb"), list("abbb"))
    assert rep.accuracy == 0.75
    assert rep.per_class["a"]["precision"] == 1.0
    assert rep.per_class["a"]["recall"] == 0.5
    assert rep.per_class["b"]["precision"] == pytest.approx(2 / 3)
    assert rep.per_class["b"]["recall"] == 1.0
    assert rep.confusion.tolist() == [[1, 1], [0, 2]]


def test_single_predicted_class():
    rep = classification_metrics(list("abc"), list("aaa"), classes="abc")
    assert rep.confusion[:, 1:].sum() == 0
    assert rep.zero_prediction_classes == ["b", "c"]
    assert rep.per_class["b"]["precision"] == 0.0


def test_unknown_label():
    with pytest.raises(LabelError):
        classification_metrics(["a"], ["z"], classes=["a"])


def test_confusion_csv():
    text = classification_metrics(list("ab"), list("ab")).confusion_csv()
    assert text.splitlines() == ["true\\pred,a,b", "a,1,0", "b,0,1"]


@settings(max_examples=100)
@given(st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("abcd")), min_size=1, max_size=40))
def test_classification_invariants(pairs):
    y_true, y_pred = zip(*pairs)
    rep = classification_metrics(y_true, y_pred)
    assert rep.accuracy == np.trace(rep.confusion) / rep.confusion.sum()
    for c, row in zip(rep.classes, rep.confusion):
        assert row.sum() == rep.per_class[c]["support"]


def test_auc_examples():
    assert binary_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert binary_auc([0.9, 0.4, 0.8, 0.1], [1, 1, 0, 0]) == 0.75
    assert binary_auc([0.5] * 4, [1, 0, 1, 0]) == 0.5


def test_average_ranks_ties():
    assert average_ranks([3.0, 1.0, 3.0, 2.0]).tolist() == [3.5, 1.0, 3.5, 2.0]


def _brute_auc(scores, pos):
    p = [s for s, m in zip(scores, pos) if m]
    n = [s for s, m in zip(scores, pos) if not m]
    wins = sum((a > b) + 0.5 * (a == b) for a in p for b in n)
    return wins / (len(p) * len(n))


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=50))
def test_auc_matches_brute_force(data):
    scores, pos = zip(*data)
    if all(pos) or not any(pos):
        return
    assert binary_auc([s / 5 for s in scores], pos) == _brute_auc([s / 5 for s in scores], pos)


def test_ovr_skips_and_errors():
    scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.6, 0.4, 0.0]])
    rep = roc_auc_ovr(["a", "b", "a"], scores, ["a", "b", "c"])
    assert rep.skipped == ["c"]
    assert rep.per_class == {"a": 1.0, "b": 1.0}
    with pytest.raises(MetricError):
        roc_auc_ovr(["a", "a"], np.ones((2, 1)), ["a"])
    with pytest.raises(MetricError):
        roc_auc_ovr(["a", "b"], np.array([[np.nan, 0], [0, 1]]), ["a", "b"])


def test_regression_examples():
    truth = np.array([0.0, 1.0, 2.0, 3.0])
    rep = regression_metrics(truth, truth)
    assert rep.rmse == 0.0 and rep.r_squared == 1.0
    rep = regression_metrics(np.full(4, truth.mean()), truth)
    assert rep.r_squared == pytest.approx(0.0, abs=1e-15)
    rep = regression_metrics([0.0, 1.0, 2.0, 5.0], truth)
    assert rep.rmse == 1.0
    assert rep.r_squared == pytest.approx(0.2)
    assert rep.rmse_ci[0] <= rep.rmse_ci[1]
    with pytest.raises(MetricError):
        regression_metrics([1.0, 2.0], [1.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_regression_permutation_symmetric(seed):
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=12)
    pred = truth + rng.normal(0, 0.3, size=12)
    perm = rng.permutation(12)
    a = regression_metrics(pred, truth, B=0)
    b = regression_metrics(pred[perm], truth[perm], B=0)
    assert a.rmse == pytest.approx(b.rmse, rel=1e-12)
    assert a.r_squared == pytest.approx(b.r_squared, rel=1e-12)
    assert a.r_squared <= 1.0


def test_pca_line_and_identical_points():
    t = np.linspace(0, 1, 10)
    proj = pca_project(np.stack([t, 2 * t, -t], axis=1))
    assert np.allclose(proj.coords[:, 1], 0.0, atol=1e-12)
    assert proj.padded_dims == 1
    same = pca_project(np.ones((5, 3)))
    assert np.all(same.coords == 0) and same.padded_dims == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pca_rotation_invariant_distances(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 4)) * [5.0, 2.0, 0.5, 0.1]
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a = pca_project(x).coords
    b = pca_project(x @ Q).coords
    da = np.sqrt(((a[:, None] - a[None]) ** 2).sum(-1))
    db = np.sqrt(((b[:, None] - b[None]) ** 2).sum(-1))
    assert np.allclose(da, db, atol=1e-9)


def test_pca_sign_convention():
    x = np.random.default_rng(0).normal(size=(8, 3))
    axes = pca_project(x).axes
    for v in axes:
        assert v[np.argmax(np.abs(v))] > 0
