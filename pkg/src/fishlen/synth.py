"""Synthetic fish scenes with analytically known lengths.

Fish are variable-width tubes around a polynomial spine laid on the belt
plane, with an optional forked tail carved as a wedge. Scenes are rendered
through a known camera (intrinsics, distortion, belt pose) at full sensor
resolution and emitted in the package's own annotation / calibration
formats, so every downstream stage can be checked against the true spine
arc length.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.polynomial.polynomial import polyval
from scipy import integrate, ndimage

from .geometry import BoardSpec, CameraModel, Homography, project_board
from .maskops import BinaryMask, encode_rle, rasterize

IMAGE_SIZE = (2464, 2056)
BELT_DISTANCE_MM = 1500.0
# 1000 mm of belt across 2464 px
FOCAL_PX = IMAGE_SIZE[0] * BELT_DISTANCE_MM / 1000.0
BELT_SIZE_MM = (960.0, 800.0)
LENGTH_RANGE_MM = (150.0, 600.0)
MIN_COMPONENT_PX = 10

LAYOUT_RESTARTS = 4
SPECIES = ["cod", "haddock", "whiting", "hake", "horse_mackerel", "other"]


class SynthError(ValueError):
    pass


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def _rot_axis(axis: np.ndarray, a: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * k + (1 - np.cos(a)) * k @ k


# --------------------------------------------------------------------------
# camera with a known belt pose


@dataclass(frozen=True, eq=False)
class SynthCamera:
    """Intrinsics and distortion plus the belt pose (belt mm -> camera mm)."""

    intrinsics: CameraModel
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(
        default_factory=lambda: np.array([-BELT_SIZE_MM[0] / 2, -BELT_SIZE_MM[1] / 2, BELT_DISTANCE_MM])
    )

    @classmethod
    def default(
        cls,
        k1: float = 0.0,
        k2: float = 0.0,
        tilt_deg: float = 0.0,
        focal: float = FOCAL_PX,
        image_size: tuple[int, int] = IMAGE_SIZE,
        belt_size: tuple[float, float] = BELT_SIZE_MM,
        seed: int | None = None,
    ) -> "SynthCamera":
        """Camera 1.5 m above the belt centre, optionally tilted by ``tilt_deg`` about a random axis."""
        w, h = image_size
        intr = CameraModel(focal, focal, (w - 1) / 2, (h - 1) / 2, k1=k1, k2=k2, image_size=image_size)
        rot = np.eye(3)
        if tilt_deg:
            rng = np.random.default_rng(seed)
            phi = rng.uniform(0, 2 * np.pi)
            rot = _rot_axis([np.cos(phi), np.sin(phi), 0.0], np.radians(tilt_deg))
        centre = np.array([belt_size[0] / 2, belt_size[1] / 2, 0.0])
        t = np.array([0, 0, BELT_DISTANCE_MM]) - rot @ centre
        return cls(intr, rot, t)

    @property
    def image_size(self) -> tuple[int, int]:
        return self.intrinsics.image_size or IMAGE_SIZE

    def belt_homography(self) -> Homography:
        """Exact undistorted-pixel -> belt-mm homography implied by the pose."""
        k = self.intrinsics.K
        h = k @ np.column_stack([self.rotation[:, 0], self.rotation[:, 1], self.translation])
        return Homography(np.linalg.inv(h))

    def camera_model(self) -> CameraModel:
        from dataclasses import replace

        return replace(self.intrinsics, belt=self.belt_homography())

    def project(self, belt_xy) -> np.ndarray:
        """Belt millimetres -> observed (distorted) pixels."""
        return project_board(self.intrinsics, self.rotation, self.translation, belt_xy)

    def backproject(self, pixels) -> np.ndarray:
        """Observed pixels -> belt millimetres by ray/plane intersection."""
        xy = self.intrinsics.to_normalized(self.intrinsics.undistort(pixels))
        rays = np.column_stack([xy, np.ones(len(xy))]) @ self.rotation  # R^T d, in belt frame
        centre = -self.rotation.T @ self.translation
        lam = -centre[2] / rays[:, 2]
        return centre[:2] + lam[:, None] * rays[:, :2]

    @cached_property
    def _belt_grid(self) -> np.ndarray:
        w, h = self.image_size
        out = np.empty((h, w, 2), dtype=np.float64)
        xs = np.arange(w, dtype=float)
        step = 256
        for r0 in range(0, h, step):
            rows = np.arange(r0, min(r0 + step, h), dtype=float)
            gx, gy = np.meshgrid(xs, rows)
            out[r0 : r0 + len(rows)] = self.backproject(np.column_stack([gx.ravel(), gy.ravel()])).reshape(
                len(rows), w, 2
            )
        return out

    def belt_grid(self, x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
        """Belt coordinates of every pixel centre in the inclusive box, shape (h, w, 2)."""
        return self._belt_grid[y0 : y1 + 1, x0 : x1 + 1]

    def check_belt_visible(self, belt_size: tuple[float, float]) -> None:
        bw, bh = belt_size
        edge = np.linspace(0, 1, 50)
        pts = np.vstack(
            [
                np.column_stack([edge * bw, np.zeros_like(edge)]),
                np.column_stack([edge * bw, np.full_like(edge, bh)]),
                np.column_stack([np.zeros_like(edge), edge * bh]),
                np.column_stack([np.full_like(edge, bw), edge * bh]),
            ]
        )
        px = self.project(pts)
        w, h = self.image_size
        if px.min() < 0 or px[:, 0].max() > w - 1 or px[:, 1].max() > h - 1:
            raise SynthError("belt is not fully inside the camera's field of view")


# --------------------------------------------------------------------------
# calibration views


def generate_calibration_views(
    camera: SynthCamera,
    n: int = 20,
    seed: int = 0,
    board: BoardSpec = BoardSpec(),
    noise_px: float = 0.0,
    group: int | None = None,
    belt_size: tuple[float, float] = BELT_SIZE_MM,
) -> dict:
    """Checkerboard corner correspondences for ``n`` random board poses.

    Exactly one view lies flat on the belt; the others are tilted 20-50
    degrees and lifted up to 300 mm towards the camera.
    """
    rng = np.random.default_rng(seed)
    corners = board.corners()
    centre = corners.mean(axis=0)
    w, h = camera.image_size
    flat_index = int(rng.integers(n))
    views = []
    for i in range(n):
        for _ in range(1000):
            theta = rng.uniform(0, 2 * np.pi)
            pos = rng.uniform([0.2 * belt_size[0], 0.2 * belt_size[1]], [0.8 * belt_size[0], 0.8 * belt_size[1]])
            if i == flat_index:
                r_board = _rot_z(theta)
                lift = 0.0
            else:
                phi = rng.uniform(0, 2 * np.pi)
                tilt = np.radians(rng.uniform(20, 50))
                r_board = _rot_axis([np.cos(phi), np.sin(phi), 0], tilt) @ _rot_z(theta)
                lift = rng.uniform(0, 300)
            # board -> belt frame; belt z points away from the camera
            t_board = np.array([pos[0], pos[1], -lift]) - r_board @ np.array([centre[0], centre[1], 0])
            rot = camera.rotation @ r_board
            trans = camera.rotation @ t_board + camera.translation
            pc = corners[:, :1] * rot[:, 0] + corners[:, 1:2] * rot[:, 1] + trans
            if pc[:, 2].min() <= 100:
                continue
            px = project_board(camera.intrinsics, rot, trans, corners)
            if px.min() < 5 or px[:, 0].max() > w - 6 or px[:, 1].max() > h - 6:
                continue
            break
        else:
            raise SynthError("could not place a calibration board inside the image")
        if noise_px:
            px = px + rng.normal(0, noise_px, px.shape)
        views.append(
            {
                "flat_on_belt": i == flat_index,
                "correspondences": [
                    {"image_xy": [float(a), float(b)], "board_xy": [float(c), float(d)]}
                    for (a, b), (c, d) in zip(px, corners)
                ],
            }
        )
    out = {
        "format": 1,
        "board": {"square_mm": board.square_mm, "cols": board.cols, "rows": board.rows},
        "image_size": [int(w), int(h)],
        "views": views,
    }
    if group is not None:
        out = {"group": int(group), **out}
    return out


# --------------------------------------------------------------------------
# fish model


@dataclass(frozen=True)
class SynthFish:
    """Fish on its own local frame: spine ``y = poly(x)`` for ``x`` in [0, extent], head at x=0."""

    coeffs: tuple[float, ...]  # ascending powers, mm
    extent: float  # mm along local x
    peak_half_width: float  # mm
    fork_depth: float = 0.0  # mm along the spine, 0 for an unforked tail
    fork_half_angle: float = np.radians(25)
    species: int = 0

    def __post_init__(self):
        if len(self.coeffs) > 5:
            raise ValueError("spine polynomial degree must be <= 4")
        if self.extent <= 0 or self.peak_half_width <= 0:
            raise ValueError("extent and width must be positive")
        tail = self.half_width(np.array([1.0]))[0]
        if self.fork_depth and self.fork_depth * np.tan(self.fork_half_angle) >= tail:
            raise ValueError("fork wedge is wider than the tail fin")

    @classmethod
    def random(cls, rng: np.random.Generator, length_range=LENGTH_RANGE_MM, fork_prob: float = 0.7) -> "SynthFish":
        target = rng.uniform(*length_range)
        sag = rng.uniform(-0.06, 0.06) * target
        s3 = rng.uniform(-0.03, 0.03) * target
        u = np.polynomial.Polynomial([-1, 2 / target])  # x -> [-1, 1] roughly
        shape = sag * (u**2 - 1) + s3 * (u**3 - u)
        coeffs = tuple(float(c) for c in shape.convert().coef)
        # rescale extent so the arc length hits the drawn target
        fish = cls(coeffs, target, 0.09 * target)
        extent = target * target / fish.true_length
        forked = rng.random() < fork_prob
        peak = rng.uniform(0.07, 0.1) * target
        depth = rng.uniform(0.04, 0.07) * target if forked else 0.0
        angle = np.radians(rng.uniform(15, 30))
        if depth:
            # keep the wedge inside the fin: the tail half-width is 0.55 * peak
            angle = min(angle, float(np.arctan(0.9 * 0.55 * peak / depth)))
        return cls(coeffs, extent, peak, fork_depth=depth, fork_half_angle=angle,
                   species=int(rng.integers(len(SPECIES))))

    @cached_property
    def _poly(self):
        p = np.polynomial.Polynomial(self.coeffs or (0.0,))
        return p, p.deriv(), p.deriv(2)

    def spine(self, x) -> np.ndarray:
        return self._poly[0](np.asarray(x, dtype=float))

    @cached_property
    def true_length(self) -> float:
        """Spine arc length by adaptive quadrature."""
        d = self._poly[1]
        val, _ = integrate.quad(lambda x: np.sqrt(1 + d(x) ** 2), 0, self.extent, epsabs=1e-12, epsrel=1e-13, limit=200)
        return float(val)

    def polyline_length(self, n: int = 200001) -> float:
        x = np.linspace(0, self.extent, n)
        return float(np.hypot(np.diff(x), np.diff(self.spine(x))).sum())

    @cached_property
    def _arc_table(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.linspace(0, self.extent, 4001)
        ds = np.sqrt(1 + self._poly[1](x) ** 2)
        s = np.concatenate([[0], np.cumsum(0.5 * (ds[1:] + ds[:-1]) * np.diff(x))])
        return x, s * (self.true_length / s[-1])

    def arc_position(self, x) -> np.ndarray:
        """Normalised arc position in [0, 1] of local abscissa ``x``."""
        tx, ts = self._arc_table
        return np.interp(x, tx, ts) / self.true_length

    def half_width(self, t) -> np.ndarray:
        """Half-width (mm) at normalised arc position ``t``: rounded head, tapering body, flared fin."""
        t = np.asarray(t, dtype=float)
        pk = self.peak_half_width
        head = pk * np.sqrt(np.clip(1 - ((0.2 - t) / 0.2) ** 2, 0, None))
        body = pk * (0.3 + 0.35 * (1 + np.cos(np.pi * (t - 0.2) / 0.55)))
        peduncle = np.full_like(t, 0.3 * pk)
        fin = pk * (0.3 + 0.25 * (t - 0.85) / 0.15)
        return np.select([t < 0.2, t < 0.75, t < 0.85], [head, body, peduncle], fin)

    def inside_local(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Point-in-fish test for local-frame coordinates."""
        X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
        p, dp, ddp = self._poly
        # The spine stays inside a cone of slope max|p'|, so the normal distance
        # is at least the vertical distance / sqrt(1 + slope^2): prune far pixels.
        reach = 1.05 * self.peak_half_width
        vertical = np.abs(Y - p(np.clip(X, 0, self.extent)))
        near = (X > -reach) & (X < self.extent + reach) & (vertical <= reach * np.sqrt(1 + self._max_slope**2))
        out = np.zeros(X.shape, dtype=bool)
        out[near] = self._inside_exact(X[near], Y[near])
        return out

    @cached_property
    def _max_slope(self) -> float:
        x = np.linspace(0, self.extent, 2001)
        return float(np.abs(self._poly[1](x)).max()) * 1.01 + 1e-9

    def _inside_exact(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        p, dp, ddp = (np.asarray(q.coef, dtype=float) for q in self._poly)
        x = X.copy()
        # Newton on the foot of the normal from (X, Y) to the spine; only
        # pixels whose foot is still moving are iterated again
        act = np.arange(x.size)
        for _ in range(12):
            xa, Xa, Ya = x[act], X[act], Y[act]
            y, d1, d2 = polyval(xa, p), polyval(xa, dp), polyval(xa, ddp)
            step = ((xa - Xa) + (y - Ya) * d1) / (1 + d1 * d1 + (y - Ya) * d2)
            x[act] = xa - step
            act = act[np.abs(step) > 1e-10]
            if not act.size:
                break
        foot_y = polyval(x, p)
        ex, ey = X - x, Y - foot_y
        dist = np.hypot(ex, ey)
        t = self.arc_position(x)
        ok = np.isfinite(dist) & (x >= 0) & (x <= self.extent)
        inside = ok & (dist <= self.half_width(t))
        if self.fork_depth:
            d1 = polyval(x, dp)
            lateral = (ey - d1 * ex) / np.sqrt(1 + d1 * d1)
            into = (t - 1) * self.true_length + self.fork_depth
            inside &= ~((into > 0) & (np.abs(lateral) < into * np.tan(self.fork_half_angle)))
        return inside

    def outline_local(self, n: int = 200) -> np.ndarray:
        """Conservative outline samples (spine +/- max width) for bounding-box purposes."""
        x = np.linspace(0, self.extent, n)
        y = self.spine(x)
        w = self.peak_half_width * 1.05
        return np.vstack([np.column_stack([x, y + w]), np.column_stack([x, y - w])])


@dataclass(frozen=True)
class Placement:
    """Rigid placement of a fish's local frame on the belt."""

    fish: SynthFish
    x: float
    y: float
    angle: float

    def to_belt(self, local: np.ndarray) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.column_stack([self.x + c * local[:, 0] - s * local[:, 1], self.y + s * local[:, 0] + c * local[:, 1]])

    def to_local(self, belt: np.ndarray) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        dx, dy = belt[..., 0] - self.x, belt[..., 1] - self.y
        return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)

    def spine_belt(self, n: int = 400) -> np.ndarray:
        x = np.linspace(0, self.fish.extent, n)
        return self.to_belt(np.column_stack([x, self.fish.spine(x)]))

    def within_belt(self, belt_size, margin: float = 5.0) -> bool:
        pts = self.to_belt(self.fish.outline_local())
        return bool(
            pts.min() >= margin and pts[:, 0].max() <= belt_size[0] - margin and pts[:, 1].max() <= belt_size[1] - margin
        )

    def clearance(self, other: "Placement") -> float:
        """Lower bound on the gap between two fish (mm)."""
        a, b = self.spine_belt(200), other.spine_belt(200)
        d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)).min()
        return float(d - 1.05 * (self.fish.peak_half_width + other.fish.peak_half_width))


def render_fish(camera: SynthCamera, placement: Placement) -> BinaryMask:
    """Rasterize one fish by testing every pixel centre against the fish region on the belt."""
    w, h = camera.image_size
    px = camera.project(placement.to_belt(placement.fish.outline_local()))
    x0 = max(int(np.floor(px[:, 0].min())) - 3, 0)
    y0 = max(int(np.floor(px[:, 1].min())) - 3, 0)
    x1 = min(int(np.ceil(px[:, 0].max())) + 3, w - 1)
    y1 = min(int(np.ceil(px[:, 1].max())) + 3, h - 1)
    if x1 < x0 or y1 < y0:
        return BinaryMask.empty(w, h)
    local = placement.to_local(camera.belt_grid(x0, y0, x1, y1))
    inside = placement.fish.inside_local(local[..., 0], local[..., 1])
    return BinaryMask(w, h, inside, (x0, y0)).tight()


# --------------------------------------------------------------------------
# scenes


@dataclass
class SynthSceneSpec:
    camera: SynthCamera
    fish: Sequence[SynthFish] | None = None
    n_fish: int = 5
    belt_size: tuple[float, float] = BELT_SIZE_MM
    occlusion: str = "none"  # "none" | "overlap"
    overlap_target: float = 0.3
    seed: int = 0
    placements: Sequence[Placement] | None = None
    image_id: int = 1
    group: int = 1
    set_name: str = "set1"
    fish_ids: Sequence[int] | None = None
    first_annotation_id: int = 1
    min_gap_mm: float = 10.0
    max_retries: int = 500


@dataclass
class TruthRow:
    image_id: int
    fish_id: int
    length_mm_true: float
    visible_fraction: float


@dataclass
class SynthScene:
    annotation: dict
    calibration: dict | None
    truth: list[TruthRow]
    placements: list[Placement]
    masks: dict[int, BinaryMask]  # fish_id -> visible mask


def _place_separated(spec: SynthSceneSpec, fish: Sequence[SynthFish], rng) -> list[Placement]:
    # longest fish first, and start over a few times if greedy placement gets stuck
    order = sorted(range(len(fish)), key=lambda i: -fish[i].true_length)
    for _ in range(LAYOUT_RESTARTS):
        placed: dict[int, Placement] = {}
        for i in order:
            for _ in range(spec.max_retries):
                p = Placement(fish[i], *rng.uniform(0, spec.belt_size), rng.uniform(0, 2 * np.pi))
                if not p.within_belt(spec.belt_size):
                    continue
                if all(p.clearance(q) >= spec.min_gap_mm for q in placed.values()):
                    placed[i] = p
                    break
            else:
                break
        else:
            return [placed[i] for i in range(len(fish))]
    raise SynthError(f"could not place fish {len(placed) + 1} of {len(fish)} without touching")


def _crossing(target: Placement, f: SynthFish, rng) -> Placement:
    tf = target.fish
    xs = rng.uniform(0.3, 0.7) * tf.extent
    p, dp = tf._poly[0], tf._poly[1]
    point = target.to_belt(np.array([[xs, p(xs)]]))[0]
    heading = target.angle + np.arctan(dp(xs)) + np.pi / 2 + rng.uniform(-1.2, 1.2)
    mid = rng.uniform(0.35, 0.65) * f.extent
    c, s = np.cos(heading), np.sin(heading)
    # put the occluder's spine point at `mid` onto the crossing point
    ly = f.spine(mid)
    return Placement(f, point[0] - (c * mid - s * ly), point[1] - (s * mid + c * ly), heading)


def generate_scene(spec: SynthSceneSpec, with_calibration: bool = False, calibration_seed: int | None = None) -> SynthScene:
    """Render one image of the belt and emit its annotation file and truth table."""
    rng = np.random.default_rng(spec.seed)
    spec.camera.check_belt_visible(spec.belt_size)
    fish = list(spec.fish) if spec.fish is not None else [SynthFish.random(rng) for _ in range(spec.n_fish)]
    ids = list(spec.fish_ids) if spec.fish_ids is not None else list(range(1, len(fish) + 1))
    if len(ids) != len(fish):
        raise ValueError("fish_ids and fish differ in length")

    if spec.placements is not None:
        placements = list(spec.placements)
        for p in placements:
            if not p.within_belt(spec.belt_size, margin=0.0):
                raise SynthError("fish extends beyond the belt")
        full = [render_fish(spec.camera, p) for p in placements]
    elif spec.occlusion == "none":
        placements = _place_separated(spec, fish, rng)
        full = [render_fish(spec.camera, p) for p in placements]
    elif spec.occlusion == "overlap":
        # alternate length ranks between the bottom layer and the occluders so every
        # occluder has a base fish of comparable size it can hide enough of
        order = sorted(range(len(fish)), key=lambda i: fish[i].true_length)
        order = order[0::2] + order[1::2]
        fish, ids = [fish[i] for i in order], [ids[i] for i in order]
        n_base = max(1, (len(fish) + 1) // 2)
        lo, hi = 0.5 * spec.overlap_target, min(0.95, 1.5 * spec.overlap_target)
        for _ in range(LAYOUT_RESTARTS):
            # a base layout can leave no room for some occluder; then lay it out afresh
            placements = _place_separated(spec, fish[:n_base], rng)
            full = [render_fish(spec.camera, p) for p in placements]
            for f in fish[n_base:]:
                for _ in range(spec.max_retries):
                    # any base fish may be the occludee; oblique crossings hide more of it
                    target_idx = int(rng.integers(n_base))
                    cand = _crossing(placements[target_idx], f, rng)
                    if not cand.within_belt(spec.belt_size):
                        continue
                    m = render_fish(spec.camera, cand)
                    tm = full[target_idx]
                    hidden = 1 - _minus(tm, [m]).area / tm.area
                    if lo <= hidden <= hi:
                        placements.append(cand)
                        full.append(m)
                        break
                else:
                    break
            else:
                break
        else:
            raise SynthError(
                f"overlap target {spec.overlap_target} unsatisfiable after {LAYOUT_RESTARTS} layouts "
                f"of {spec.max_retries} tries"
            )
    else:
        raise ValueError(f"unknown occlusion mode {spec.occlusion!r}")

    w, h = spec.camera.image_size
    image = {
        "id": spec.image_id,
        "file_name": f"group_{spec.group:02d}/{spec.set_name}/{spec.image_id:05d}.png",
        "width": w,
        "height": h,
        "attributes": {"group": spec.group, "set": spec.set_name},
    }
    annotations, truth, visible = [], [], {}
    ann_id = spec.first_annotation_id
    for i, (p, m, fid) in enumerate(zip(placements, full, ids)):
        vis = _minus(m, full[i + 1 :])  # later fish lie on top
        if not vis:
            continue
        visible[fid] = vis
        truth.append(TruthRow(spec.image_id, fid, p.fish.true_length, vis.area / m.area))
        for comp in _components(vis):
            x0, y0, x1, y1 = comp.bbox()
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": spec.image_id,
                    "category_id": p.fish.species + 1,
                    "segmentation": encode_rle(comp),
                    "area": comp.area,
                    "bbox": [x0, y0, x1 - x0 + 1, y1 - y0 + 1],
                    "iscrowd": 0,
                    "attributes": {"fish_id": fid, "length_mm": round_to_5mm(p.fish.true_length)},
                }
            )
            ann_id += 1
    ann_file = {
        "images": [image],
        "annotations": annotations,
        "categories": [{"id": i + 1, "name": n} for i, n in enumerate(SPECIES)],
    }
    calib = None
    if with_calibration:
        calib = generate_calibration_views(
            spec.camera, seed=spec.seed if calibration_seed is None else calibration_seed, group=spec.group,
            belt_size=spec.belt_size,
        )
    return SynthScene(ann_file, calib, truth, placements, visible)


def round_to_5mm(length: float) -> int:
    return int(5 * np.floor(length / 5 + 0.5))


def _minus(mask: BinaryMask, others: Sequence[BinaryMask]) -> BinaryMask:
    if not mask or not others:
        return mask
    x0, y0, x1, y1 = mask.bbox()
    px = mask.window(x0, y0, x1, y1).copy()
    for o in others:
        if o:
            px &= ~o.window(x0, y0, x1, y1)
    return BinaryMask(mask.width, mask.height, px, (x0, y0)).tight()


def _components(mask: BinaryMask) -> list[BinaryMask]:
    t = mask.tight()
    lab, n = ndimage.label(t.pixels, structure=np.ones((3, 3), dtype=bool))
    out = []
    for k in range(1, n + 1):
        comp = lab == k
        if comp.sum() >= MIN_COMPONENT_PX:
            out.append(BinaryMask(t.width, t.height, comp, t.origin).tight())
    if not out:  # keep the largest fragment even when tiny
        sizes = ndimage.sum(np.ones_like(lab), lab, range(1, n + 1))
        k = int(np.argmax(sizes)) + 1
        out.append(BinaryMask(t.width, t.height, lab == k, t.origin).tight())
    return out


# --------------------------------------------------------------------------
# datasets


def truth_csv(rows: Sequence[TruthRow]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["image_id", "fish_id", "length_mm_true", "visible_fraction"])
    for r in rows:
        wr.writerow([r.image_id, r.fish_id, repr(float(r.length_mm_true)), repr(round(float(r.visible_fraction), 6))])
    return buf.getvalue()


def read_truth_csv(path) -> list[TruthRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            TruthRow(int(r["image_id"]), int(r["fish_id"]), float(r["length_mm_true"]), float(r["visible_fraction"]))
            for r in csv.DictReader(fh)
        ]


@dataclass
class SynthDataset:
    annotation: dict
    calibrations: dict[int, dict]  # group -> calibration file
    cameras: dict[int, SynthCamera]
    truth: list[TruthRow]


def generate_dataset(
    groups: Sequence[int] = (1, 2),
    fish_per_group: int = 8,
    images_per_set: int = 2,
    seed: int = 0,
    k1: float = -0.05,
    k2: float = 0.0,
    tilt_deg: float = 0.5,
    overlap_target: float = 0.3,
    length_range: tuple[float, float] = LENGTH_RANGE_MM,
) -> SynthDataset:
    """Groups of fish photographed as set1 / set2 (separated halves) and all (overlapping).

    Every group gets its own slightly tilted camera and calibration file;
    fish IDs are unique across the dataset.
    """
    root = np.random.default_rng(seed)
    images, annotations, truth = [], [], []
    calibrations, cameras = {}, {}
    image_id, ann_id, next_fish = 1, 1, 1
    for g in groups:
        gseed = int(root.integers(2**31))
        rng = np.random.default_rng(gseed)
        cam = SynthCamera.default(k1=k1, k2=k2, tilt_deg=tilt_deg, seed=gseed)
        cameras[g] = cam
        calibrations[g] = generate_calibration_views(cam, seed=gseed + 1, group=g)
        population = [SynthFish.random(rng, length_range) for _ in range(fish_per_group)]
        ids = list(range(next_fish, next_fish + fish_per_group))
        next_fish += fish_per_group
        half = fish_per_group // 2
        subsets = {
            "set1": (population[:half], ids[:half], "none"),
            "set2": (population[half:], ids[half:], "none"),
            "all": (population, ids, "overlap"),
        }
        for set_name, (fish, fids, mode) in subsets.items():
            for _ in range(images_per_set):
                order = rng.permutation(len(fish))
                spec = SynthSceneSpec(
                    cam,
                    fish=[fish[i] for i in order],
                    fish_ids=[fids[i] for i in order],
                    occlusion=mode,
                    overlap_target=overlap_target,
                    seed=int(rng.integers(2**31)),
                    image_id=image_id,
                    group=g,
                    set_name=set_name,
                    first_annotation_id=ann_id,
                )
                scene = generate_scene(spec)
                images.extend(scene.annotation["images"])
                annotations.extend(scene.annotation["annotations"])
                truth.extend(scene.truth)
                ann_id += len(scene.annotation["annotations"])
                image_id += 1
    ann = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": i + 1, "name": n} for i, n in enumerate(SPECIES)],
    }
    return SynthDataset(ann, calibrations, cameras, truth)


def synthetic_predictions(annotation: dict, seed: int = 0, score_range=(0.8, 1.0)) -> list[dict]:
    """Predictions derived from ground truth: one per annotation, randomly scored and jittered by a pixel."""
    rng = np.random.default_rng(seed)
    sizes = {im["id"]: (im["width"], im["height"]) for im in annotation["images"]}
    out = []
    for a in annotation["annotations"]:
        w, h = sizes[a["image_id"]]
        m = rasterize(a["segmentation"], w, h)
        op = rng.integers(3)
        if op and m.area > 50:
            px = np.pad(m.tight().pixels, 1)
            px = ndimage.binary_dilation(px) if op == 1 else ndimage.binary_erosion(px)
            x0, y0 = m.tight().origin
            full = np.zeros((h, w), dtype=bool)
            ys, xs = np.nonzero(px)
            ys, xs = ys + y0 - 1, xs + x0 - 1
            keep = (xs >= 0) & (ys >= 0) & (xs < w) & (ys < h)
            full[ys[keep], xs[keep]] = True
            m = BinaryMask.from_array(full)
        out.append(
            {
                "image_id": a["image_id"],
                "category_id": a["category_id"],
                "segmentation": encode_rle(m),
                "score": round(float(rng.uniform(*score_range)), 6),
            }
        )
    return out


def write_dataset(ds: SynthDataset, out: Path, predictions: list[dict] | None = None) -> None:
    # serialise everything first so a failure leaves no partial tree behind
    files = {Path("annotations.json"): json.dumps(ds.annotation) + "\n"}
    for g, cal in sorted(ds.calibrations.items()):
        files[Path("calibration") / f"group_{g:02d}.json"] = json.dumps(cal, indent=1) + "\n"
    files[Path("truth.csv")] = truth_csv(ds.truth)
    if predictions is not None:
        files[Path("predictions.json")] = json.dumps(predictions) + "\n"
    out = Path(out)
    for rel, text in files.items():
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        (out / rel).write_text(text, encoding="utf-8")
