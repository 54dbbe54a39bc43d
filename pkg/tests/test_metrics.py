import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regimelab.metrics import ConfusionMatrix, classification_report, report_to_json

sklearn_metrics = pytest.importorskip("sklearn.metrics")


# Hand case: 10 samples over labels {0, 1}, 7 correct.
#   truth 0: predicted 0 four times, 1 once      truth 1: predicted 0 twice, 1 three times
# precision_0 = 4/6, recall_0 = 4/5 -> f1_0 = 8/11
# precision_1 = 3/4, recall_1 = 3/5 -> f1_1 = 2/3
# binary mcc = (4*3 - 2*1) / sqrt(6*5*5*4) = 10 / sqrt(600) = 1/sqrt(6)
HAND_TRUE = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
HAND_PRED = np.array([0, 0, 0, 0, 1, 0, 0, 1, 1, 1])


def test_hand_case_all_metrics():
    cm = ConfusionMatrix.from_predictions(HAND_TRUE, HAND_PRED)
    assert cm.accuracy() == pytest.approx(0.7)
    f1 = cm.per_class_f1()
    assert f1[0] == pytest.approx(8 / 11)
    assert f1[1] == pytest.approx(2 / 3)
    assert f1[2] == 0.0
    assert cm.f1("weighted") == pytest.approx(23 / 33)
    assert cm.f1("macro") == pytest.approx(46 / 99)
    assert cm.mcc() == pytest.approx(1 / math.sqrt(6))


def test_hand_case_matrix_layout():
    cm = ConfusionMatrix.from_predictions(HAND_TRUE, HAND_PRED)
    assert cm.to_nested_list() == [[4, 1, 0], [2, 3, 0], [0, 0, 0]]


def test_constant_predictor_mcc_is_zero():
    cm = ConfusionMatrix.from_predictions(np.array([0, 1, 2]), np.array([1, 1, 1]))
    assert cm.mcc() == 0.0
    assert cm.accuracy() == pytest.approx(1 / 3)


def test_perfect_and_inverted_predictions():
    y = np.array([0, 1, 2, 0, 1, 2])
    perfect = ConfusionMatrix.from_predictions(y, y)
    assert perfect.accuracy() == 1.0
    assert perfect.f1("weighted") == 1.0
    assert perfect.f1("macro") == 1.0
    assert perfect.mcc() == pytest.approx(1.0)
    rotated = ConfusionMatrix.from_predictions(y, (y + 1) % 3)
    assert rotated.accuracy() == 0.0
    assert rotated.mcc() == pytest.approx(-0.5)


def test_validation_errors():
    with pytest.raises(ValueError):
        ConfusionMatrix.from_predictions(np.array([0, 1]), np.array([0]))
    with pytest.raises(ValueError):
        ConfusionMatrix.from_predictions(np.array([0, 3]), np.array([0, 0]))
    with pytest.raises(ValueError):
        ConfusionMatrix.from_predictions(np.array([]), np.array([]))
    with pytest.raises(ValueError):
        ConfusionMatrix(np.zeros((2, 2)))
    cm = ConfusionMatrix.from_predictions(np.array([0]), np.array([0]))
    with pytest.raises(ValueError):
        cm.f1("micro")


@pytest.mark.filterwarnings("ignore:A single label was found:UserWarning")
@given(
    st.lists(
        st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=200
    )
)
def test_matches_reference_implementation(pairs):
    y_true = np.array([p[0] for p in pairs])
    y_pred = np.array([p[1] for p in pairs])
    cm = ConfusionMatrix.from_predictions(y_true, y_pred)
    labels = [0, 1, 2]
    assert cm.accuracy() == pytest.approx(
        sklearn_metrics.accuracy_score(y_true, y_pred)
    )
    assert cm.f1("weighted") == pytest.approx(
        sklearn_metrics.f1_score(
            y_true, y_pred, labels=labels, average="weighted", zero_division=0
        )
    )
    assert cm.f1("macro") == pytest.approx(
        sklearn_metrics.f1_score(
            y_true, y_pred, labels=labels, average="macro", zero_division=0
        )
    )
    assert cm.mcc() == pytest.approx(
        sklearn_metrics.matthews_corrcoef(y_true, y_pred), abs=1e-12
    )
    np.testing.assert_array_equal(
        cm.counts, sklearn_metrics.confusion_matrix(y_true, y_pred, labels=labels)
    )


def test_report_shape_and_json():
    report = classification_report(HAND_TRUE, HAND_PRED)
    assert set(report) == {"acc", "f1_weighted", "f1_macro", "mcc", "confusion"}
    text = report_to_json(report)
    parsed = json.loads(text)
    assert parsed["acc"] == pytest.approx(0.7)
    assert parsed["confusion"] == [[4, 1, 0], [2, 3, 0], [0, 0, 0]]
    assert text == report_to_json(parsed)  # stable round trip
