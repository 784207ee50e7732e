from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from fishlen.dataset_io import Prediction, parse_dataset
from fishlen.evallen import (
    LengthPair,
    aggregation_curve,
    error_histogram,
    group_by_fish,
    length_report,
    match_lengths,
)
from fishlen.length_skl import LengthEstimate
from fishlen.maskops import BinaryMask, encode_rle

from oracles import greedy_pairing_reference


def laplace_median_ratio(n: int) -> float:
    """E|median of n iid Laplace| / E|single draw|, by quadrature over the order-statistic density."""
    k = (n + 1) // 2
    c = n * comb(n - 1, k - 1)
    L = stats.laplace

    def f(x):
        return x * c * L.cdf(x) ** (k - 1) * L.sf(x) ** (n - k) * L.pdf(x)

    return 2 * integrate.quad(f, 0, np.inf)[0]


def scene_index(gt_masks: list[np.ndarray], lengths: list[int]):
    h, w = gt_masks[0].shape
    ann = {
        "images": [{"id": 1, "width": w, "height": h, "attributes": {"group": 1, "set": "all"}}],
        "annotations": [
            {"id": k + 1, "image_id": 1, "category_id": 1, "segmentation": encode_rle(BinaryMask.from_array(m)),
             "attributes": {"fish_id": k + 1, "length_mm": ln}}
            for k, (m, ln) in enumerate(zip(gt_masks, lengths))
        ],
        "categories": [{"id": 1, "name": "fish"}],
    }
    return parse_dataset(ann)


def rect(x0, y0, x1, y1, w=24, h=24):
    a = np.zeros((h, w), bool)
    a[y0:y1, x0:x1] = True
    return a


# ---------------------------------------------------------------- pairing


def test_gt_mode_pairs_by_fish_id():
    idx = scene_index([rect(0, 0, 4, 4), rect(6, 6, 10, 10), rect(12, 0, 20, 3)], [300, 405, 120])
    ests = [LengthEstimate(1, f, 100.0 * f, 10) for f in (3, 1, 2)]
    res = match_lengths(ests, idx)
    assert sorted((p.fish_id, p.estimate, p.truth) for p in res.pairs) == [(1, 100.0, 300), (2, 200.0, 405), (3, 300.0, 120)]
    assert res.unmatched_estimates == res.unmatched_truths == 0


def test_gt_mode_unknown_fish_counted():
    idx = scene_index([rect(0, 0, 4, 4), rect(6, 6, 10, 10)], [300, 405])
    res = match_lengths([LengthEstimate(1, 1, 290.0, 10), LengthEstimate(1, 9, 1.0, 1)], idx)
    assert len(res.pairs) == 1
    assert (res.unmatched_estimates, res.unmatched_truths) == (1, 1)


def pd_case(pred_masks, scores, idx):
    preds = [Prediction(1, 1, encode_rle(BinaryMask.from_array(m)), s, 24, 24) for m, s in zip(pred_masks, scores)]
    ests = [LengthEstimate(1, None, 100.0 + k, 10, prediction_index=k) for k in range(len(preds))]
    return ests, preds


def test_pd_mode_no_overlap_excluded():
    idx = scene_index([rect(0, 0, 4, 4)], [300])
    ests, preds = pd_case([rect(10, 10, 14, 14), rect(0, 0, 4, 4)], [0.99, 0.95], idx)
    res = match_lengths(ests, idx, preds)
    assert [(p.fish_id, p.estimate) for p in res.pairs] == [(1, 101.0)]
    assert res.unmatched_estimates == 1 and res.unmatched_truths == 0


def test_pd_mode_needs_predictions():
    idx = scene_index([rect(0, 0, 4, 4)], [300])
    with pytest.raises(ValueError):
        match_lengths([LengthEstimate(1, None, 1.0, 1, prediction_index=0)], idx)


def test_pd_mode_swapped_confidences():
    # The confident but sloppy prediction claims fish 1; the exact one then finds it taken.
    g = [rect(0, 0, 10, 4), rect(0, 4, 10, 8)]
    p_hi = rect(0, 0, 10, 6)  # IoU 2/3 with fish 1 and 1/4 with fish 2; visited first
    p_lo = rect(0, 0, 10, 4)  # perfect for fish 1 but visited second
    idx = scene_index(g, [200, 250])
    ests, preds = pd_case([p_lo, p_hi], [0.91, 0.97], idx)
    res = match_lengths(ests, idx, preds)
    ref = greedy_pairing_reference([p_lo, p_hi], [0.91, 0.97], g, 0.5)
    assert ref == [None, 0]
    assert {(p.estimate, p.fish_id) for p in res.pairs} == {(101.0, 1)}
    assert (res.unmatched_estimates, res.unmatched_truths) == (1, 1)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pd_pairing_matches_exhaustive_reference(seed):
    rng = np.random.default_rng(seed)
    gts = []
    for _ in range(rng.integers(1, 5)):
        x0, y0 = rng.integers(0, 16, 2)
        gts.append(rect(x0, y0, x0 + rng.integers(3, 9), y0 + rng.integers(3, 9)))
    preds = []
    for _ in range(rng.integers(1, 5)):
        g = gts[rng.integers(len(gts))]
        a = np.roll(g, tuple(rng.integers(-2, 3, 2)), axis=(0, 1))
        if rng.random() < 0.5:
            a |= gts[rng.integers(len(gts))]
        preds.append(a if a.any() else g)
    scores = [float(rng.choice([0.9, 0.95, rng.uniform(0.9, 1)])) for _ in preds]
    idx = scene_index(gts, [100] * len(gts))
    ests, pr = pd_case(preds, scores, idx)
    res = match_lengths(ests, idx, pr)
    ref = greedy_pairing_reference(preds, scores, [a.mask().full() for a in idx.instances], 0.5)
    got = {int(p.estimate - 100): p.fish_id - 1 for p in res.pairs}
    assert got == {k: j for k, j in enumerate(ref) if j is not None}
    assert res.unmatched_estimates == sum(j is None for j in ref)


# ---------------------------------------------------------------- reports


def test_forty_vs_forty_one():
    rep = length_report([LengthPair(1, 1, 410.0, 400.0)])
    assert rep.mae_cm == pytest.approx(1.0, abs=1e-12)
    assert rep.mape == pytest.approx(2.5, abs=1e-12)
    assert rep.mean_cm == pytest.approx(1.0, abs=1e-12) and rep.std_cm == 0.0


def test_exact_estimates_zero_bin():
    pairs = [LengthPair(1, k, 100.0 + 5 * k, 100.0 + 5 * k) for k in range(30)]
    rep = length_report(pairs)
    assert rep.mae_cm == 0.0 and rep.mape == 0.0
    zero = int(np.flatnonzero(rep.histogram.centers == 0.0)[0])
    assert rep.histogram.counts[zero] == 30 and rep.histogram.counts.sum() == 30


def test_gaussian_errors_recovered():
    rng = np.random.default_rng(3)
    n, mu, sigma = 1000, 0.4, 1.3  # cm
    gt = rng.uniform(20, 60, n)
    err = rng.normal(mu, sigma, n)
    rep = length_report([LengthPair(1, k, g + e, g) for k, (g, e) in enumerate(zip(gt, err))], unit="cm")
    assert abs(rep.mean_cm - mu) < 3 * sigma / np.sqrt(n)
    assert abs(rep.std_cm - sigma) < 3 * sigma / np.sqrt(2 * n)
    assert rep.histogram.counts.sum() == n


def test_histogram_clipping_and_bins():
    h = error_histogram(np.array([-9.0, -5.0, -0.1, 0.0, 0.124, 0.126, 4.9, 12.0]), clip=5.0, bin_width=0.25)
    assert len(h.centers) == 41 and h.centers[0] == -5.0 and h.centers[-1] == 5.0
    c = dict(zip(h.centers.round(4), h.counts))
    assert c[-5.0] == 2 and c[5.0] == 2 and c[0.0] == 3 and c[0.25] == 1
    assert h.to_csv().splitlines()[0] == "error_cm,count"
    with pytest.raises(ValueError):
        error_histogram(np.zeros(1), clip=0)


def test_mae_uses_unclipped_errors():
    rep = length_report([LengthPair(1, 1, 300.0, 100.0), LengthPair(1, 2, 100.0, 100.0)])
    assert rep.mae_cm == 10.0
    assert rep.histogram.counts[-1] == 1


def test_report_contract_errors():
    with pytest.raises(ValueError):
        length_report([])
    with pytest.raises(ValueError):
        length_report([LengthPair(1, 1, 1.0, 1.0)], unit="inch")
    with pytest.raises(ValueError):
        length_report([LengthPair(1, 1, 1.0, 0.0)])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(50, 900), st.integers(10, 180)), min_size=1, max_size=40), st.randoms())
def test_report_permutation_invariant(rows, rnd):
    pairs = [LengthPair(1, k, e, 5.0 * t) for k, (e, t) in enumerate(rows)]
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    a, b = length_report(pairs).to_dict(), length_report(shuffled).to_dict()
    a.pop("errors_cm"), b.pop("errors_cm")
    assert a == b


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(50, 900), st.integers(10, 180)), min_size=1, max_size=40))
def test_unit_coherence(rows):
    mm = [LengthPair(1, k, e, 5.0 * t) for k, (e, t) in enumerate(rows)]
    cm = [LengthPair(1, k, e / 10.0, 5.0 * t / 10.0) for k, (e, t) in enumerate(rows)]
    assert length_report(mm).to_dict() == length_report(cm, unit="cm").to_dict()


# ---------------------------------------------------------------- aggregation


def laplace_pool(n_fish=300, per_fish=40, b=10.0, seed=0):
    rng = np.random.default_rng(seed)
    truths = {f: float(5 * rng.integers(30, 120)) for f in range(n_fish)}
    ests = {f: list(truths[f] + rng.laplace(0, b, per_fish)) for f in range(n_fish)}
    return ests, truths


def test_full_pool_is_deterministic():
    ests, truths = laplace_pool(n_fish=30)
    c = aggregation_curve(ests, truths, [40], trials=25, seed=1)
    assert c.std_cm == [0.0]
    med = np.array([np.median(np.array(ests[f]) / 10) for f in sorted(ests)])
    gt = np.array([truths[f] / 10 for f in sorted(ests)])
    assert c.mae_cm[0] == pytest.approx(np.abs(med - gt).mean(), abs=1e-12)


def test_single_draw_expectation():
    ests, truths = laplace_pool(n_fish=200)
    c = aggregation_curve(ests, truths, [1], trials=200, seed=2)
    plain = np.mean([np.mean(np.abs(np.array(ests[f]) - truths[f])) / 10 for f in ests])
    assert abs(c.mae_cm[0] - plain) < 3 * c.std_cm[0] / np.sqrt(200) + 1e-3


def test_laplace_median_curve():
    ests, truths = laplace_pool(n_fish=500)
    c = aggregation_curve(ests, truths, range(1, 8), trials=100, seed=0)
    assert all(a >= b for a, b in zip(c.mae_cm, c.mae_cm[1:]))
    assert c.mae_cm[0] == pytest.approx(1.0, abs=0.05)
    assert c.mae_cm[4] / c.mae_cm[0] == pytest.approx(laplace_median_ratio(5), abs=0.03)
    assert c.mae_cm[2] / c.mae_cm[0] == pytest.approx(laplace_median_ratio(3), abs=0.03)


def test_three_beats_one_under_symmetric_noise():
    rng = np.random.default_rng(8)
    truths = {f: 400.0 for f in range(100)}
    ests = {f: list(400.0 + rng.uniform(-15, 15, 20)) for f in truths}
    c = aggregation_curve(ests, truths, [1, 3], trials=200, seed=8)
    # one-sided 99% z bound on the difference of the two trial means
    se = np.hypot(c.std_cm[0], c.std_cm[1]) / np.sqrt(200)
    assert c.mae_cm[0] - c.mae_cm[1] > 2.33 * se


def test_seeded_curve_bit_reproducible():
    ests, truths = laplace_pool(n_fish=50)
    a = aggregation_curve(ests, truths, [1, 2, 5], trials=30, seed=4)
    b = aggregation_curve(ests, truths, [5, 2, 1], trials=30, seed=4)
    assert a.to_dict() == b.to_dict() and a.to_csv() == b.to_csv()
    # each n has its own stream
    c = aggregation_curve(ests, truths, [5], trials=30, seed=4)
    assert c.mae_cm[0] == a.mae_cm[2]


def test_short_fish_excluded_with_warning():
    ests = {1: [100.0] * 5, 2: [100.0] * 2}
    with pytest.warns(RuntimeWarning, match="1 fish"):
        c = aggregation_curve(ests, {1: 100.0, 2: 100.0}, [3])
    assert c.n_fish == 1
    with pytest.raises(ValueError), pytest.warns(RuntimeWarning):
        aggregation_curve({2: [1.0]}, {2: 1.0}, [3])
    with pytest.raises(ValueError):
        aggregation_curve(ests, {1: 100.0, 2: 100.0}, [])
    with pytest.raises(KeyError):
        aggregation_curve({3: [1.0]}, {}, [1])


def test_group_by_fish():
    est, gt = group_by_fish([LengthPair(1, 4, 10.0, 12.0), LengthPair(2, 4, 11.0, 12.0), LengthPair(2, 5, 3.0, 4.0)])
    assert est == {4: [10.0, 11.0], 5: [3.0]} and gt == {4: 12.0, 5: 4.0}
