"""Skeleton-based length estimation (SKL).

Per mask: thin it, fit a quartic centreline to the skeleton in the frame of
the mask's principal axis, run the curve until it leaves the convex hull on
either side (so forked tails and occlusion gaps are bridged), then sample it
every pixel, map each sample to the belt plane and sum the segment lengths in
millimetres.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset_io import DatasetIndex, Prediction
from .geometry import CameraModel
from .maskops import (
    BinaryMask,
    ConvexHull,
    IsotropicMaskError,
    Skeleton,
    centroid,
    convex_hull,
    principal_axis,
    skeletonize,
    union,
)

MAX_DEGREE = 4
DEFAULT_THRESHOLD = 0.9


class MissingCameraError(KeyError):
    pass


@dataclass(frozen=True)
class CenterlineFit:
    angle: float  # principal axis, radians, image frame
    center: np.ndarray  # rotation centre (x, y), px
    coeffs: np.ndarray  # ascending powers of the rescaled abscissa
    u_mid: float  # rotated abscissa u = u_mid + u_half * s
    u_half: float
    domain: tuple[float, float]  # in the rescaled abscissa s
    normal_band: tuple[float, float] = (-np.inf, np.inf)  # hull extent across the axis, px
    flags: tuple[str, ...] = ()

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def u_range(self) -> tuple[float, float]:
        return self.u_mid + self.u_half * self.domain[0], self.u_mid + self.u_half * self.domain[1]

    def offset(self, u) -> np.ndarray:
        """Centreline offset across the axis at rotated abscissa ``u`` (px)."""
        s = (np.asarray(u, dtype=float) - self.u_mid) / self.u_half
        return np.polynomial.polynomial.polyval(s, self.coeffs)

    def to_image(self, u, v) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        return np.column_stack([self.center[0] + c * u - s * v, self.center[1] + s * u + c * v])

    def sample(self, step: float = 1.0) -> np.ndarray:
        """Image points along the curve every ``step`` px of rotated abscissa."""
        u0, u1 = self.u_range
        n = max(2, int(math.ceil((u1 - u0) / step)) + 1)
        u = np.linspace(u0, u1, n)
        return self.to_image(u, self.offset(u))


@dataclass(frozen=True)
class LengthEstimate:
    image_id: int
    fish_id: int | None
    length_mm: float
    n_samples: int
    flags: tuple[str, ...] = ()
    method: str = "skl"
    prediction_index: int | None = None  # position in the prediction file (pd mode)

    def to_dict(self) -> dict:
        d = {
            "image_id": self.image_id,
            "fish_id": self.fish_id,
            "method": self.method,
            "length_mm": self.length_mm,
            "flags": list(self.flags),
        }
        if self.prediction_index is not None:
            d["prediction_index"] = self.prediction_index
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "LengthEstimate":
        fid = d.get("fish_id")
        pidx = d.get("prediction_index")
        return cls(
            int(d["image_id"]),
            None if fid is None else int(fid),
            float(d["length_mm"]),
            int(d.get("n_samples", 0)),
            tuple(d.get("flags", ())),
            str(d.get("method", "skl")),
            None if pidx is None else int(pidx),
        )


def _rotated(points: np.ndarray, center: np.ndarray, angle: float) -> tuple[np.ndarray, np.ndarray]:
    c, s = math.cos(angle), math.sin(angle)
    d = np.asarray(points, dtype=float) - center
    return d[:, 0] * c + d[:, 1] * s, -d[:, 0] * s + d[:, 1] * c


ENDPOINT_RULES = ("hull_crossing", "hull_extent")


def _hull_crossing_domain(fit: CenterlineFit, hull: ConvexHull, step: float = 0.25) -> tuple[float, float] | None:
    # Walk outwards from the middle of the curve until it leaves the hull,
    # then bisect each exit to sub-pixel precision.
    u0, u1 = fit.u_mid - fit.u_half, fit.u_mid + fit.u_half
    n = max(3, int(math.ceil((u1 - u0) / step)) + 1)
    u = np.linspace(u0, u1, n)
    inside = hull.contains(fit.to_image(u, fit.offset(u)), tol=1e-9)
    if not inside.any():
        return None
    idx = np.flatnonzero(inside)
    start = idx[np.argmin(np.abs(idx - (n - 1) / 2))]
    lo = start
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = start
    while hi < n - 1 and inside[hi + 1]:
        hi += 1

    def bisect(a_in: float, b_out: float) -> float:
        for _ in range(24):  # 0.25 px bracket -> ~1e-8 px
            m = 0.5 * (a_in + b_out)
            if hull.contains(fit.to_image([m], fit.offset([m])), tol=1e-9)[0]:
                a_in = m
            else:
                b_out = m
        return a_in

    ua = u[lo] if lo == 0 else bisect(u[lo], u[lo - 1])
    ub = u[hi] if hi == n - 1 else bisect(u[hi], u[hi + 1])
    return (ua - fit.u_mid) / fit.u_half, (ub - fit.u_mid) / fit.u_half


def fit_centerline(
    skeleton: Skeleton,
    hull: ConvexHull,
    axis: float,
    center: np.ndarray | None = None,
    endpoint_rule: str = "hull_crossing",
) -> CenterlineFit:
    """Least-squares quartic through the skeleton in the axis frame, bounded by the hull.

    ``endpoint_rule="hull_crossing"`` ends the curve where it leaves the
    convex hull; ``"hull_extent"`` uses the hull's full extent along the
    axis. When the skeleton has too few distinct abscissae the degree is
    lowered to the highest full-rank one and a ``degree_lowered`` flag is set.
    """
    if endpoint_rule not in ENDPOINT_RULES:
        raise ValueError(f"endpoint_rule must be one of {ENDPOINT_RULES}")
    pts = np.asarray(skeleton.points, dtype=float)
    if len(pts) == 0:
        raise ValueError("cannot fit a centreline to an empty skeleton")
    center = pts.mean(axis=0) if center is None else np.asarray(center, dtype=float)
    u, v = _rotated(pts, center, axis)
    hu, hv = _rotated(hull.vertices, center, axis)
    u0, u1 = float(hu.min()), float(hu.max())
    flags: list[str] = []
    mid, half = 0.5 * (u0 + u1), 0.5 * (u1 - u0)
    if half <= 0:
        half = 1.0
        flags.append("zero_extent")
    s = (u - mid) / half
    distinct = len(np.unique(np.round(s, 12)))
    degree = min(MAX_DEGREE, distinct - 1)
    coeffs = np.zeros(1)
    while degree >= 0:
        vander = np.vander(s, degree + 1, increasing=True)
        coeffs, _, rank, _ = np.linalg.lstsq(vander, v, rcond=None)
        if rank == degree + 1:
            break
        degree -= 1
    if degree < MAX_DEGREE:
        flags.append("degree_lowered")
    band = (float(hv.min()), float(hv.max()))
    fit = CenterlineFit(axis, center, coeffs, mid, half, (-1.0, 1.0), band, tuple(flags))
    ext = band[1] - band[0]
    vs = fit.offset(np.linspace(u0, u1, 64))
    if vs.min() < band[0] - 0.5 * ext or vs.max() > band[1] + 0.5 * ext:
        fit = replace(fit, flags=fit.flags + ("fit_outside_hull",))
    if endpoint_rule == "hull_crossing":
        dom = _hull_crossing_domain(fit, hull)
        if dom is None:
            fit = replace(fit, flags=fit.flags + ("curve_misses_hull",))
        else:
            fit = replace(fit, domain=dom)
    return fit


def estimate_length(
    fit: CenterlineFit,
    camera: CameraModel,
    step: float = 1.0,
    image_id: int = 0,
    fish_id: int | None = None,
) -> LengthEstimate:
    """Arc length of the centreline on the belt plane (mm)."""
    pts = fit.sample(step)
    belt = camera.to_belt(pts)
    length = float(np.hypot(*np.diff(belt, axis=0).T).sum())
    return LengthEstimate(image_id, fish_id, length, len(pts), fit.flags)


def mask_axis(mask: BinaryMask) -> tuple[float, tuple[str, ...]]:
    """Principal axis, falling back to the longer bounding-box side for isotropic masks."""
    try:
        return principal_axis(mask), ()
    except IsotropicMaskError:
        x0, y0, x1, y1 = mask.bbox()
        return (0.0 if x1 - x0 >= y1 - y0 else math.pi / 2), ("isotropic_axis",)


def centerline_for_mask(
    mask: BinaryMask, endpoint_rule: str = "hull_crossing"
) -> tuple[CenterlineFit, Skeleton, ConvexHull]:
    axis, flags = mask_axis(mask)
    skel = skeletonize(mask)
    hull = convex_hull(mask)
    fit = fit_centerline(skel, hull, axis, centroid(mask), endpoint_rule)
    if flags:
        fit = replace(fit, flags=flags + fit.flags)
    return fit, skel, hull


def measure_mask(
    mask: BinaryMask,
    camera: CameraModel,
    image_id: int = 0,
    fish_id: int | None = None,
    step: float = 1.0,
    endpoint_rule: str = "hull_crossing",
) -> LengthEstimate:
    fit, _, _ = centerline_for_mask(mask, endpoint_rule)
    return estimate_length(fit, camera, step, image_id, fish_id)


def _sort_key(e: LengthEstimate):
    return (e.image_id, -1 if e.fish_id is None else e.fish_id, -1 if e.prediction_index is None else e.prediction_index)


def run_skl(
    index: DatasetIndex,
    cameras: Mapping[int, CameraModel],
    predictions: Sequence[Prediction] | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    threads: int | None = None,
    step: float = 1.0,
) -> list[LengthEstimate]:
    """SKL over a dataset.

    Ground-truth mode (``predictions is None``): one estimate per fish per
    image, unioning split segments that share a fish id. Prediction mode:
    one estimate per prediction with score >= ``threshold``.
    """
    images = index.image_by_id
    needed = {images[i].group for i in images}
    missing = sorted(needed - set(cameras))
    if missing:
        raise MissingCameraError(f"no camera model for group(s) {missing}")

    jobs: list[tuple] = []
    if predictions is None:
        by_fish: dict[tuple[int, int], list] = {}
        for a in index.instances:
            by_fish.setdefault((a.image_id, a.fish_id), []).append(a)
        for (iid, fid), parts in by_fish.items():
            jobs.append((iid, fid, None, parts))
    else:
        for k, p in enumerate(predictions):
            if p.image_id in images and p.score >= threshold:
                jobs.append((p.image_id, None, k, [p]))
        if not jobs:
            warnings.warn(f"no predictions with score >= {threshold}; nothing to measure", RuntimeWarning, stacklevel=2)
            return []

    def work(job) -> LengthEstimate:
        iid, fid, pidx, parts = job
        mask = union([p.mask() for p in parts])
        est = measure_mask(mask, cameras[images[iid].group], iid, fid, step)
        if pidx is not None:
            est = LengthEstimate(iid, None, est.length_mm, est.n_samples, est.flags, prediction_index=pidx)
        return est

    threads = threads or os.cpu_count() or 1
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(work, jobs))
    else:
        out = [work(j) for j in jobs]
    return sorted(out, key=_sort_key)


def write_lengths(estimates: Sequence[LengthEstimate], path) -> None:
    Path(path).write_text(json.dumps([e.to_dict() for e in estimates], indent=1) + "\n", encoding="utf-8")


def read_lengths(path) -> list[LengthEstimate]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError(f"{path}: length file must be a JSON array")
    return [LengthEstimate.from_dict(d) for d in data]
