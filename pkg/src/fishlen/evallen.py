"""Length-estimation evaluation: pairing, error reports and median aggregation.

Inputs are millimetres unless ``unit="cm"`` is passed; every report is in
centimetres.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset_io import DatasetIndex, Prediction
from .length_skl import LengthEstimate
from .maskops import BinaryMask, mask_iou, union

log = logging.getLogger(__name__)

MATCH_IOU = 0.5
_PER_CM = {"mm": 10.0, "cm": 1.0}


@dataclass(frozen=True)
class LengthPair:
    image_id: int
    fish_id: int
    estimate: float
    truth: float


@dataclass
class PairingResult:
    pairs: list[LengthPair]
    unmatched_estimates: int = 0
    unmatched_truths: int = 0


def _gt_lengths(index: DatasetIndex) -> dict[tuple[int, int], int]:
    return {(a.image_id, a.fish_id): a.length_mm for a in index.instances}


def _gt_masks(index: DatasetIndex) -> dict[tuple[int, int], BinaryMask]:
    parts: dict[tuple[int, int], list[BinaryMask]] = {}
    for a in index.instances:
        parts.setdefault((a.image_id, a.fish_id), []).append(a.mask())
    return {k: union(v) for k, v in parts.items()}


def match_lengths(
    estimates: Sequence[LengthEstimate],
    index: DatasetIndex,
    predictions: Sequence[Prediction] | None = None,
    iou_threshold: float = MATCH_IOU,
) -> PairingResult:
    """Pair length estimates with ground-truth fish.

    Estimates that carry a ``fish_id`` are paired by (image, fish id).
    Estimates from predictions (``prediction_index`` set) are matched to the
    fish of highest mask IoU >= ``iou_threshold`` in the same image, greedily
    by descending confidence and one-to-one, regardless of class.
    """
    truth = _gt_lengths(index)
    gt_mode = [e for e in estimates if e.prediction_index is None]
    pd_mode = [e for e in estimates if e.prediction_index is not None]
    pairs: list[LengthPair] = []
    unmatched_est = 0
    used: set[tuple[int, int]] = set()

    for e in gt_mode:
        key = (e.image_id, e.fish_id)
        if e.fish_id is None or key not in truth:
            unmatched_est += 1
            continue
        used.add(key)
        pairs.append(LengthPair(e.image_id, e.fish_id, e.length_mm, float(truth[key])))

    if pd_mode:
        if predictions is None:
            raise ValueError("prediction-mode estimates need the prediction file to recover masks")
        gt_masks = _gt_masks(index)
        by_image: dict[int, list[tuple[int, int]]] = {}
        for key in gt_masks:
            by_image.setdefault(key[0], []).append(key)
        order = sorted(range(len(pd_mode)), key=lambda k: (-predictions[pd_mode[k].prediction_index].score, k))
        taken: set[tuple[int, int]] = set()
        for k in order:
            e = pd_mode[k]
            pm = predictions[e.prediction_index].mask()
            best, best_key = -1.0, None
            for key in sorted(by_image.get(e.image_id, [])):
                if key in taken:
                    continue
                iou = mask_iou(pm, gt_masks[key])
                if iou >= iou_threshold and iou > best:
                    best, best_key = iou, key
            if best_key is None:
                unmatched_est += 1
                continue
            taken.add(best_key)
            pairs.append(LengthPair(e.image_id, best_key[1], e.length_mm, float(truth[best_key])))
        used |= taken
    images = {e.image_id for e in estimates}
    unmatched_gt = sum(1 for key in truth if key[0] in images and key not in used)
    if unmatched_est or unmatched_gt:
        log.info("pairing: %d unmatched estimates, %d unmatched fish", unmatched_est, unmatched_gt)
    return PairingResult(pairs, unmatched_est, unmatched_gt)


@dataclass
class Histogram:
    bin_width: float
    clip: float
    centers: np.ndarray
    counts: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["error_cm", "count"])
        for c, n in zip(self.centers, self.counts):
            w.writerow([f"{c:.4f}", int(n)])
        return buf.getvalue()


def error_histogram(errors_cm: np.ndarray, clip: float = 5.0, bin_width: float = 0.25) -> Histogram:
    """Histogram on bins centred at multiples of ``bin_width``; values past ±clip land in the outer bins."""
    if clip <= 0 or bin_width <= 0:
        raise ValueError("clip and bin width must be positive")
    k = int(math.floor(clip / bin_width + 1e-9))
    centers = np.arange(-k, k + 1) * bin_width
    idx = np.floor(np.clip(errors_cm, -clip, clip) / bin_width + 0.5).astype(int)
    counts = np.bincount(np.clip(idx, -k, k) + k, minlength=2 * k + 1)
    return Histogram(bin_width, clip, centers, counts)


@dataclass
class LengthReport:
    regime: str
    n: int
    mae_cm: float
    mape: float  # percent
    mean_cm: float
    std_cm: float
    errors_cm: np.ndarray = field(repr=False)
    histogram: Histogram = field(repr=False)
    unmatched_estimates: int = 0
    unmatched_truths: int = 0

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "n": self.n,
            "mae_cm": self.mae_cm,
            "mape_percent": self.mape,
            "mean_error_cm": self.mean_cm,
            "std_error_cm": self.std_cm,
            "unmatched_estimates": self.unmatched_estimates,
            "unmatched_truths": self.unmatched_truths,
            "histogram": {
                "bin_width_cm": self.histogram.bin_width,
                "clip_cm": self.histogram.clip,
                "centers_cm": self.histogram.centers.tolist(),
                "counts": self.histogram.counts.tolist(),
            },
            "errors_cm": self.errors_cm.tolist(),
        }


def length_report(
    pairs: Iterable[LengthPair] | PairingResult,
    clip: float = 5.0,
    bin_width: float = 0.25,
    unit: str = "mm",
    regime: str = "",
) -> LengthReport:
    """MAE (cm), MAPE (%) and the signed-error histogram. Clipping only affects the histogram."""
    unmatched = (0, 0)
    if isinstance(pairs, PairingResult):
        unmatched = (pairs.unmatched_estimates, pairs.unmatched_truths)
        pairs = pairs.pairs
    pairs = list(pairs)
    if not pairs:
        raise ValueError("length report needs at least one pair")
    if unit not in _PER_CM:
        raise ValueError(f"unit must be one of {sorted(_PER_CM)}")
    scale = _PER_CM[unit]
    est = np.array([p.estimate for p in pairs], dtype=float) / scale
    gt = np.array([p.truth for p in pairs], dtype=float) / scale
    if np.any(gt <= 0):
        raise ValueError("ground-truth lengths must be positive")
    err = est - gt
    # sorted sums make the scalar statistics independent of pair order
    abs_err = np.sort(np.abs(err))
    rel = np.sort(np.abs(err) / gt)
    mean = float(np.sort(err).sum() / len(err))
    std = float(math.sqrt(np.sort((err - mean) ** 2).sum() / len(err)))
    return LengthReport(
        regime,
        len(pairs),
        float(abs_err.sum() / len(err)),
        float(100.0 * rel.sum() / len(err)),
        mean,
        std,
        err,
        error_histogram(err, clip, bin_width),
        *unmatched,
    )


@dataclass
class AggregationCurve:
    n_values: list[int]
    mae_cm: list[float]
    std_cm: list[float]
    n_fish: int
    trials: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "n_values": self.n_values,
            "mae_cm": self.mae_cm,
            "std_cm": self.std_cm,
            "n_fish": self.n_fish,
            "trials": self.trials,
            "seed": self.seed,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "mae_cm", "std_cm"])
        for n, m, s in zip(self.n_values, self.mae_cm, self.std_cm):
            w.writerow([n, repr(m), repr(s)])
        return buf.getvalue()


def aggregation_curve(
    estimates: Mapping[int, Sequence[float]],
    truths: Mapping[int, float],
    n_values: Iterable[int],
    trials: int = 100,
    seed: int = 0,
    unit: str = "mm",
) -> AggregationCurve:
    """MAE of the per-fish median of ``n`` random estimates, as a function of ``n``.

    Each ``n`` draws from its own generator seeded by ``(seed, n)``, so the
    curve is reproducible and a point does not depend on which others are
    requested. Fish with fewer than ``max(n_values)`` estimates are dropped
    with a warning.
    """
    n_values = sorted({int(n) for n in n_values})
    if not n_values:
        raise ValueError("n_values must not be empty")
    if n_values[0] < 1 or trials < 1:
        raise ValueError("n values and trials must be positive")
    if unit not in _PER_CM:
        raise ValueError(f"unit must be one of {sorted(_PER_CM)}")
    scale = _PER_CM[unit]
    need = n_values[-1]
    fish = []
    short = []
    for fid in sorted(estimates):
        if fid not in truths:
            raise KeyError(f"no ground-truth length for fish {fid}")
        vals = np.asarray(estimates[fid], dtype=float) / scale
        (fish if len(vals) >= need else short).append((fid, vals))
    if short:
        warnings.warn(f"{len(short)} fish have fewer than {need} estimates and are excluded", RuntimeWarning, stacklevel=2)
    if not fish:
        raise ValueError("no fish has enough estimates for the requested n values")
    gt = np.array([truths[fid] / scale for fid, _ in fish])

    maes, stds = [], []
    for n in n_values:
        rng = np.random.default_rng([seed, n])
        med = np.empty((trials, len(fish)))
        for j, (_, vals) in enumerate(fish):
            pick = rng.random((trials, len(vals))).argsort(axis=1)[:, :n]
            med[:, j] = np.median(vals[pick], axis=1)
        per_trial = np.abs(med - gt).mean(axis=1)
        # shift by the first trial so identical trials give exactly zero spread
        d = per_trial - per_trial[0]
        maes.append(float(per_trial[0] + d.mean()))
        stds.append(float(d.std()))
    return AggregationCurve(n_values, maes, stds, len(fish), trials, seed)


def group_by_fish(pairs: Iterable[LengthPair]) -> tuple[dict[int, list[float]], dict[int, float]]:
    est: dict[int, list[float]] = {}
    gt: dict[int, float] = {}
    for p in pairs:
        est.setdefault(p.fish_id, []).append(p.estimate)
        gt[p.fish_id] = p.truth
    return est, gt


def save_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")
