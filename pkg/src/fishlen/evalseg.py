"""Instance-segmentation evaluation: greedy mask matching and COCO-style AP.

For each class and IoU threshold, predictions are visited by descending
confidence (ties: higher best-IoU first, then input order) and each takes the
unmatched same-class ground truth of highest IoU at or above the threshold.
AP is the 101-point interpolated area under the precision envelope.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .maskops import BinaryMask, mask_iou

log = logging.getLogger(__name__)

THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
HIGH_CONFIDENCE = 0.9


@dataclass(frozen=True)
class Detection:
    """Minimal prediction record: anything with these attributes can be evaluated."""

    image_id: int
    category_id: int
    mask: BinaryMask = field(repr=False)
    score: float = 1.0


def _mask_of(obj) -> BinaryMask:
    m = obj.mask
    return m() if callable(m) else m


@dataclass
class MatchResult:
    """Greedy matching of one class at one threshold.

    ``pairs`` lists (prediction index, gt index or None) in visiting order;
    indices refer to the caller's prediction and gt sequences.
    """

    threshold: float
    pairs: list[tuple[int, int | None]]
    gt_matched: dict[int, bool]
    ious: list[float]  # IoU of each pair, 0 for unmatched predictions


@dataclass
class SegReport:
    thresholds: tuple[float, ...]
    ap: dict[int, list[float]]  # class -> AP per threshold
    class_map: dict[int, float]
    mAP: float
    mean_matched_iou: float
    high_confidence_fraction: float
    n_matched: int
    excluded: list[int] = field(default_factory=list)
    class_names: dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "mAP": self.mAP,
            "classes": [
                {
                    "category_id": c,
                    "name": self.class_names.get(c, str(c)),
                    "mAP": self.class_map[c],
                    "ap": self.ap[c],
                }
                for c in sorted(self.ap)
            ],
            "mean_matched_iou": self.mean_matched_iou,
            "high_confidence_fraction": self.high_confidence_fraction,
            "n_matched": self.n_matched,
            "excluded_classes": self.excluded,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category_id", "name", "iou_threshold", "ap"])
        for c in sorted(self.ap):
            for t, ap in zip(self.thresholds, self.ap[c]):
                w.writerow([c, self.class_names.get(c, str(c)), f"{t:.2f}", repr(ap)])
        return buf.getvalue()

    def save(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        if csv_path is not None:
            Path(csv_path).write_text(self.to_csv(), encoding="utf-8")


def interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from a ranked true-positive indicator."""
    if n_gt == 0:
        raise ValueError("AP undefined without ground truth")
    tp = np.asarray(tp, dtype=float)
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    ok = idx < len(tp)
    return float(np.where(ok, envelope[np.minimum(idx, len(tp) - 1)], 0.0).sum() / len(RECALL_POINTS))


class _Scene:
    """Predictions and ground truths of one class, grouped by image, with IoUs."""

    def __init__(self, pred_idx, gt_idx, preds, gts, pred_masks, gt_masks):
        self.images: dict[int, tuple[list[int], list[int]]] = {}
        for p in pred_idx:
            self.images.setdefault(preds[p].image_id, ([], []))[0].append(p)
        for g in gt_idx:
            self.images.setdefault(gts[g].image_id, ([], []))[1].append(g)
        self.iou: dict[int, np.ndarray] = {}
        self.pred_masks, self.gt_masks = pred_masks, gt_masks

    def compute(self, image_id: int) -> None:
        pi, gi = self.images[image_id]
        m = np.zeros((len(pi), len(gi)))
        for a, p in enumerate(pi):
            for b, g in enumerate(gi):
                m[a, b] = mask_iou(self.pred_masks[p], self.gt_masks[g])
        self.iou[image_id] = m


def _visit_order(preds, pred_idx: list[int], best_iou: dict[int, float]) -> list[int]:
    return sorted(pred_idx, key=lambda p: (-float(preds[p].score), -best_iou[p], p))


def match_class(scene: _Scene, preds, threshold: float, order: list[int]) -> MatchResult:
    pos = {}
    for iid, (pi, _) in scene.images.items():
        for a, p in enumerate(pi):
            pos[p] = (iid, a)
    taken: dict[int, set[int]] = {iid: set() for iid in scene.images}
    pairs, ious = [], []
    for p in order:
        iid, a = pos[p]
        gi = scene.images[iid][1]
        row = scene.iou[iid][a] if len(gi) else np.zeros(0)
        best, best_b = -1.0, None
        for b in range(len(gi)):
            if b in taken[iid] or row[b] < threshold:
                continue
            if row[b] > best:
                best, best_b = row[b], b
        if best_b is None:
            pairs.append((p, None))
            ious.append(0.0)
        else:
            taken[iid].add(best_b)
            pairs.append((p, gi[best_b]))
            ious.append(float(best))
    matched = {g: False for _, gi in scene.images.values() for g in gi}
    for _, g in pairs:
        if g is not None:
            matched[g] = True
    return MatchResult(threshold, pairs, matched, ious)


def evaluate_segmentation(
    preds: Sequence,
    gts: Sequence,
    thresholds: Iterable[float] = THRESHOLDS,
    classes: Iterable[int] | None = None,
    class_names: dict[int, str] | None = None,
    threads: int = 1,
) -> SegReport:
    """Per-class AP over IoU thresholds and the class-averaged mAP.

    ``preds`` need ``image_id``, ``category_id``, ``score`` and ``mask``
    (a :class:`BinaryMask` or a callable returning one); ``gts`` the same
    without ``score``. Classes with no ground truth are left out of the
    average and listed in ``excluded``.
    """
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("at least one IoU threshold is required")
    gt_images = {g.image_id for g in gts}
    stray = sorted({p.image_id for p in preds} - gt_images)
    if stray and gts:
        log.info("%d prediction image(s) have no ground truth; their predictions count as false positives", len(stray))

    pred_masks = [_mask_of(p) for p in preds]
    gt_masks = [_mask_of(g) for g in gts]
    gt_classes = {g.category_id for g in gts}
    wanted = sorted(set(classes) if classes is not None else gt_classes | {p.category_id for p in preds})
    excluded = [c for c in wanted if c not in gt_classes]
    for c in excluded:
        log.warning("class %s has no ground truth and is excluded from mAP", c)

    scenes = {}
    for c in wanted:
        if c in excluded:
            continue
        pi = [i for i, p in enumerate(preds) if p.category_id == c]
        gi = [i for i, g in enumerate(gts) if g.category_id == c]
        scenes[c] = _Scene(pi, gi, preds, gts, pred_masks, gt_masks)
    jobs = [(s, iid) for s in scenes.values() for iid in s.images]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(lambda j: j[0].compute(j[1]), jobs))
    else:
        for s, iid in jobs:
            s.compute(iid)

    ap: dict[int, list[float]] = {}
    matched_ious: list[float] = []
    matched_scores: list[float] = []
    for c, scene in scenes.items():
        best = {}
        for iid, (pi, gi) in scene.images.items():
            m = scene.iou[iid]
            for a, p in enumerate(pi):
                best[p] = float(m[a].max()) if len(gi) else 0.0
        pi_all = [p for pi, _ in scene.images.values() for p in pi]
        order = _visit_order(preds, pi_all, best)
        n_gt = sum(len(gi) for _, gi in scene.images.values())
        ap[c] = []
        for k, t in enumerate(thresholds):
            res = match_class(scene, preds, t, order)
            ap[c].append(interpolated_ap([g is not None for _, g in res.pairs], n_gt))
            if k == 0:
                for (p, g), iou in zip(res.pairs, res.ious):
                    if g is not None:
                        matched_ious.append(iou)
                        matched_scores.append(float(preds[p].score))

    class_map = {c: float(np.mean(v)) for c, v in ap.items()}
    overall = float(np.mean(list(class_map.values()))) if class_map else 0.0
    n = len(matched_ious)
    return SegReport(
        thresholds,
        ap,
        class_map,
        overall,
        float(np.mean(matched_ious)) if n else 0.0,
        float(np.mean(np.asarray(matched_scores) > HIGH_CONFIDENCE)) if n else 0.0,
        n,
        excluded,
        dict(class_names or {}),
    )
