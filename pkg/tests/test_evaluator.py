import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_peak, make_profile
from fixtures.published_tables import (
    LAB_ACCURACY,
    LAB_F1,
    LAB_PRINTED_PRECISION,
    LAB_PRINTED_RECALL,
    LAB_TEST,
    SIMULATED_COLUMN_TOTALS,
    SIMULATED_ROW_TOTALS,
    SIMULATED_TEST,
)
from strnoc.evaluator import (
    ConfusionMatrix,
    confusion,
    evaluation_report,
    locus_allele_counts,
    mac_estimate,
    metrics,
    noc_from_probs,
    threshold_sweep,
    write_report,
)
from strnoc.simulator import SimParams, simulate_record


def test_table1_fixture_totals_and_accuracy():
    cm = ConfusionMatrix(SIMULATED_TEST)
    assert cm.row_totals.tolist() == SIMULATED_ROW_TOTALS
    assert cm.column_totals.tolist() == SIMULATED_COLUMN_TOTALS
    assert cm.total == 10000
    assert cm.overall_accuracy == pytest.approx(0.7137, abs=1e-12)


def test_table2_fixture():
    cm = ConfusionMatrix(LAB_TEST)
    assert cm.overall_accuracy == pytest.approx(334 / 372)
    m = metrics(cm)
    assert np.allclose(m.accuracy, LAB_ACCURACY, atol=1e-3)
    assert np.allclose(m.f1, LAB_F1, atol=1e-3)
    assert m.accuracy[3] == pytest.approx(1 - (22 + 11) / 372)
    assert m.f1[2] == pytest.approx(2 * (69 / 72) * (69 / 79) / ((69 / 72) + (69 / 79)))
    # standard definitions with rows = predicted; the published columns are swapped
    assert np.allclose(m.precision, LAB_PRINTED_RECALL, atol=1e-3)
    assert np.allclose(m.recall, LAB_PRINTED_PRECISION, atol=1e-3)


def test_perfect_predictions():
    truth = [1, 2, 3, 3, 5]
    cm = confusion(truth, truth)
    assert np.array_equal(cm.counts, np.diag(np.bincount(np.array(truth) - 1, minlength=10)))
    assert cm.overall_accuracy == 1.0
    m = metrics(cm)
    present = cm.column_totals > 0
    assert np.all(m.f1[present] == 1) and np.all(m.precision[present] == 1)
    assert np.all(m.accuracy == 1)


@settings(max_examples=60, deadline=None)
@given(arrays(np.int64, (5, 5), elements=st.integers(0, 40)))
def test_transpose_swaps_precision_and_recall(counts):
    if counts.sum() == 0:
        counts[0, 0] = 1
    a, b = metrics(ConfusionMatrix(counts)), metrics(ConfusionMatrix(counts.T))
    assert np.allclose(a.f1, b.f1)
    assert np.allclose(a.accuracy, b.accuracy)
    assert np.allclose(a.precision, b.recall)


def test_confusion_validation():
    with pytest.raises(ValueError):
        confusion([1, 2], [1])
    with pytest.raises(ValueError):
        confusion([11], [1])
    with pytest.raises(ValueError):
        ConfusionMatrix(np.array([[1, -1], [0, 0]]))


def test_argmax_and_tie_rule():
    p = np.zeros(10)
    p[0] = 1
    assert noc_from_probs(p) == 1
    p = np.zeros(10)
    p[3] = p[4] = 0.5
    assert noc_from_probs(p) == 4


def test_sweep_degenerate_thresholds():
    probs = np.array([[0.6, 0.4] + [0] * 8, [0.2, 0.8] + [0] * 8])
    curve = threshold_sweep(probs, [1, 1], [0.0, 0.81])
    assert curve.proportion_classified[0] == 1.0
    assert curve.accuracy[0] == 0.5
    assert curve.proportion_classified[1] == 0.0
    assert math.isnan(curve.accuracy[1]) and curve.undefined[1]
    assert curve.as_list()[1]["accuracy"] is None


def test_sweep_confident_rows_correct():
    rng = np.random.default_rng(0)
    n = 400
    conf = rng.uniform(0.1, 1.0, n)
    truth = rng.integers(1, 11, n)
    probs = np.zeros((n, 10))
    for i in range(n):
        k = truth[i] - 1 if conf[i] > 0.5 else (truth[i] % 10)
        probs[i] = (1 - conf[i]) / 9
        probs[i, k] = conf[i]
    curve = threshold_sweep(probs, truth, [0.2, 0.4, 0.6, 0.8])
    assert np.all(np.diff(curve.proportion_classified) <= 0)
    assert np.all(np.diff(curve.accuracy) >= 0)
    assert curve.accuracy[-1] == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2 ** 32 - 1))
def test_sweep_proportion_monotone(n, seed):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(10), size=n)
    curve = threshold_sweep(probs, rng.integers(1, 11, n))
    assert np.all(np.diff(curve.proportion_classified) <= 0)


def test_mac_examples():
    three = [make_peak(0, a, 500) for a in (10, 11, 12)] + [make_peak(1, 9, 500)]
    assert mac_estimate(make_profile(three)) == 2
    five = [make_peak(4, a, 500) for a in (8, 9, 10, 11, 12)]
    assert mac_estimate(make_profile(five)) == 3
    assert mac_estimate(make_profile([])) == 1


def test_mac_respects_plp_cutoff():
    peaks = [make_peak(0, a, 500) for a in (10, 11)] + [make_peak(0, 12, 30, plp=0.2)]
    assert locus_allele_counts(make_profile(peaks))[0] == 2
    assert mac_estimate(make_profile(peaks)) == 1
    assert mac_estimate(make_profile(peaks), plp_cutoff=0.1) == 2


def test_mac_on_simulated(kit):
    for i in range(30):
        prof = simulate_record(kit, SimParams(seed=3), i)
        counts = [sum(1 for p in prof.peaks if p.locus == li and p.plp >= 0.5) for li in range(24)]
        assert mac_estimate(prof) == max(1, math.ceil(max(counts) / 2))


def test_report(tmp_path):
    probs = np.eye(10)[[0, 1, 1]]
    rep = evaluation_report([1, 2, 2], [1, 2, 3], probs, [0.5])
    assert rep["overall_accuracy"] == pytest.approx(2 / 3)
    assert rep["per_class"]["3"]["recall"] == 0.0
    write_report(rep, tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["n"] == 3


def test_format_table_layout():
    text = confusion([1, 2, 2], [1, 2, 3]).format_table()
    lines = text.splitlines()
    assert len(lines) == 12
    assert lines[0].startswith("Pred\\Known")
    assert lines[-1].split()[-1] == "3"
