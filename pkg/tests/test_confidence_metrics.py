import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detcal.metrics import confidence as cm


def test_binning_edges_half_open_last_closed():
    s = cm.BinningScheme((4,))
    idx = s.digitize(np.array([0.0, 0.25, 0.2499, 0.75, 1.0]))[:, 0]
    assert idx.tolist() == [0, 1, 0, 3, 3]


def test_ece_hand_computed():
    conf = np.array([0.1, 0.1, 0.9, 0.9])
    y = np.array([0, 1, 1, 1])
    # bins of width 0.5: |0.1 - 0.5| * 2/4 + |0.9 - 1| * 2/4
    assert cm.ece(conf, y, bins=2) == pytest.approx(0.25)
    assert cm.mce(conf, y, bins=2) == pytest.approx(0.4)


def test_dece_reduces_to_ece_for_confidence_only(rng):
    conf = rng.uniform(size=500)
    y = (rng.uniform(size=500) < conf).astype(int)
    assert cm.dece(conf[:, None], y, cm.BinningScheme((20,))) == pytest.approx(cm.ece(conf, y, 20))


def test_dece_min_samples_filter_and_error(rng):
    X = rng.uniform(size=(50, 2))
    y = rng.integers(0, 2, 50)
    with pytest.raises(ValueError, match="insufficient"):
        cm.dece(X, y, cm.BinningScheme((5, 5), min_samples_per_bin=1000))


def test_perfectly_calibrated_is_small(rng):
    conf = rng.uniform(size=200_000)
    y = (rng.uniform(size=conf.size) < conf).astype(int)
    assert cm.ece(conf, y) < 0.01


def test_brier_and_nll():
    assert cm.brier([1.0, 0.0], [1, 0]) == 0.0
    assert cm.brier([0.5, 0.5], [1, 0]) == pytest.approx(0.25)
    assert cm.nll_bernoulli([0.5, 0.5], [1, 0]) == pytest.approx(np.log(2))
    # eps keeps the loss finite at confident mistakes
    assert np.isfinite(cm.nll_bernoulli([1.0], [0]))


def brute_auprc(conf, y):
    """Trapezoid over (recall, precision) points from thresholding at every distinct value."""
    points = []
    for t in sorted(set(conf.tolist()), reverse=True):
        sel = conf >= t
        points.append((y[sel].sum() / y.sum(), y[sel].mean()))
    points.insert(0, (0.0, points[0][1]))
    return sum((r1 - r0) * (p0 + p1) / 2 for (r0, p0), (r1, p1) in zip(points, points[1:]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10), st.integers(0, 1)), min_size=2, max_size=40))
def test_auprc_matches_brute_force(pairs):
    conf = np.array([p[0] / 10 for p in pairs])
    y = np.array([p[1] for p in pairs])
    if y.sum() == 0:
        return
    assert cm.auprc(conf, y) == pytest.approx(brute_auprc(conf, y), abs=1e-12)


def test_auprc_perfect_ranking():
    assert cm.auprc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == pytest.approx(1.0)


def test_reliability_records_and_csv(tmp_path, rng):
    X = rng.uniform(size=(300, 3))
    y = rng.integers(0, 2, 300)
    scheme = cm.BinningScheme.for_features(3)
    recs = cm.reliability(X, y, scheme)
    assert sum(r.count for r in recs) == 300
    assert scheme.bins == (5, 5, 5)
    path = tmp_path / "r.csv"
    cm.write_reliability_csv(recs, path, ("confidence", "cx", "w"))
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(cm.RELIABILITY_HEADER)
    assert len(lines) == len(recs) + 1


def test_input_validation():
    with pytest.raises(ValueError):
        cm.ece([0.5], [2])
    with pytest.raises(ValueError):
        cm.ece([], [])
    with pytest.raises(ValueError):
        cm.BinningScheme((0,))
