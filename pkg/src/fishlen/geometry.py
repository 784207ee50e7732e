"""Camera model, homographies and planar calibration.

Pixel coordinates are ``(x, y)`` with integer pixel centres. The belt plane
is reached by undistorting a pixel and applying the belt homography, which
maps undistorted pixel coordinates to millimetres on the conveyor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

DET_FLOOR = 1e-12
W_FLOOR = 1e-12
UNDISTORT_TOL_PX = 1e-8
UNDISTORT_MAX_ITER = 50
CAMERA_FORMAT = 1


class DegenerateConfigurationError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


class UndistortionError(ArithmeticError):
    pass


class PlaneAtInfinityError(ArithmeticError):
    pass


def _as_points(pts) -> np.ndarray:
    p = np.asarray(pts, dtype=float)
    if p.ndim == 1:
        p = p.reshape(1, 2)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"expected (N, 2) points, got shape {p.shape}")
    return p


# --------------------------------------------------------------------------
# homographies


@dataclass(frozen=True)
class Homography:
    matrix: np.ndarray
    residual_rms: float | None = field(default=None, compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float).reshape(3, 3)
        if abs(m[2, 2]) < 1e-15 * max(np.abs(m).max(), 1e-300):
            raise DegenerateConfigurationError("homography has a zero bottom-right entry")
        m = m / m[2, 2]
        if not np.all(np.isfinite(m)) or abs(np.linalg.det(m)) < DET_FLOOR:
            raise DegenerateConfigurationError(f"homography is singular (det={np.linalg.det(m):.3g})")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def scaling(cls, s: float) -> "Homography":
        return cls(np.diag([s, s, 1.0]))

    def apply(self, pts) -> np.ndarray:
        p = _as_points(pts)
        h = np.column_stack([p, np.ones(len(p))]) @ self.matrix.T
        w = h[:, 2]
        if np.any(np.abs(w) < W_FLOOR):
            bad = int(np.argmax(np.abs(w) < W_FLOOR))
            raise PlaneAtInfinityError(f"point {p[bad].tolist()} maps to the plane at infinity")
        return h[:, :2] / w[:, None]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)


def hartley_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d == 0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _transfer_residuals(m: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    h = np.column_stack([src, np.ones(len(src))]) @ m.T
    return (h[:, :2] / h[:, 2:3] - dst).ravel()


def estimate_homography(src, dst, refine: bool = False) -> Homography:
    """Normalized DLT from ``src -> dst`` correspondences.

    With ``refine`` the algebraic estimate is polished by Levenberg-Marquardt
    on the forward transfer error. The returned homography carries the RMS
    forward transfer residual.
    """
    src, dst = _as_points(src), _as_points(dst)
    if len(src) != len(dst):
        raise ValueError("src and dst must have the same length")
    if len(src) < 4:
        raise DegenerateConfigurationError(f"need at least 4 correspondences, got {len(src)}")
    ts, td = hartley_transform(src), hartley_transform(dst)
    s = np.column_stack([src, np.ones(len(src))]) @ ts.T
    d = np.column_stack([dst, np.ones(len(dst))]) @ td.T
    x, y = s[:, 0], s[:, 1]
    u, v = d[:, 0], d[:, 1]
    z, o = np.zeros(len(s)), np.ones(len(s))
    a = np.empty((2 * len(s), 9))
    a[0::2] = np.column_stack([-x, -y, -o, z, z, z, u * x, u * y, u])
    a[1::2] = np.column_stack([z, z, z, -x, -y, -o, v * x, v * y, v])
    _, sv, vt = np.linalg.svd(a)
    if sv[7] <= 1e-10 * sv[0]:
        raise DegenerateConfigurationError("design matrix is rank deficient (collinear or repeated points)")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(td) @ hn @ ts
    if abs(m[2, 2]) < 1e-15 * np.abs(m).max():
        raise DegenerateConfigurationError("homography has a zero bottom-right entry")
    m = m / m[2, 2]
    if refine:
        fit = least_squares(
            lambda p: _transfer_residuals(np.append(p, 1.0).reshape(3, 3), src, dst),
            m.ravel()[:8],
            method="lm",
            xtol=1e-15,
            ftol=1e-15,
        )
        m = np.append(fit.x, 1.0).reshape(3, 3)
    r = _transfer_residuals(m, src, dst).reshape(-1, 2)
    return Homography(m, residual_rms=float(np.sqrt((r**2).sum(axis=1).mean())))


# --------------------------------------------------------------------------
# camera model


def _distort_normalized(x, y, k1, k2, k3, p1, p2):
    r2 = x * x + y * y
    radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return xd, yd


def _distort_jacobian(x, y, k1, k2, k3, p1, p2):
    r2 = x * x + y * y
    radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
    dr = k1 + r2 * (2 * k2 + 3 * k3 * r2)
    jxx = radial + 2 * x * x * dr + 2 * p1 * y + 6 * p2 * x
    jxy = 2 * x * y * dr + 2 * p1 * x + 2 * p2 * y
    jyx = jxy
    jyy = radial + 2 * y * y * dr + 6 * p1 * y + 2 * p2 * x
    return jxx, jxy, jyx, jyy


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    belt: Homography | None = None  # undistorted pixels -> belt mm
    image_size: tuple[int, int] | None = None  # (width, height)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def pinhole(cls, scale: float = 1.0, belt: Homography | None = None) -> "CameraModel":
        """Distortion-free unit camera: pixels are undistorted as-is."""
        return cls(1.0, 1.0, 0.0, 0.0, belt=belt if belt is not None else Homography.scaling(scale))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def distortion(self) -> tuple[float, float, float, float, float]:
        return self.k1, self.k2, self.k3, self.p1, self.p2

    @property
    def has_distortion(self) -> bool:
        return any(v != 0 for v in self.distortion)

    def to_normalized(self, pts) -> np.ndarray:
        p = _as_points(pts)
        y = (p[:, 1] - self.cy) / self.fy
        x = (p[:, 0] - self.cx - self.skew * y) / self.fx
        return np.column_stack([x, y])

    def from_normalized(self, xy) -> np.ndarray:
        xy = _as_points(xy)
        return np.column_stack(
            [self.fx * xy[:, 0] + self.skew * xy[:, 1] + self.cx, self.fy * xy[:, 1] + self.cy]
        )

    def distort(self, pts) -> np.ndarray:
        """Map undistorted pixel coordinates to distorted (observed) ones."""
        xy = self.to_normalized(pts)
        xd, yd = _distort_normalized(xy[:, 0], xy[:, 1], *self.distortion)
        return self.from_normalized(np.column_stack([xd, yd]))

    def undistort(self, pts, tol: float = UNDISTORT_TOL_PX, max_iter: int = UNDISTORT_MAX_ITER) -> np.ndarray:
        """Invert the distortion by fixed-point iteration with a Newton fallback."""
        p = _as_points(pts)
        if not self.has_distortion:
            return p.copy()
        target = self.to_normalized(p)
        tx, ty = target[:, 0], target[:, 1]
        k = self.distortion
        x, y = tx.copy(), ty.copy()

        def err(x, y):
            xd, yd = _distort_normalized(x, y, *k)
            ex, ey = xd - tx, yd - ty
            return ex, ey, np.hypot(self.fx * ex + self.skew * ey, self.fy * ey)

        ex, ey, e = err(x, y)
        for _ in range(max_iter):
            todo = e >= tol
            if not todo.any():
                return self.from_normalized(np.column_stack([x, y]))
            # fixed point: x = (xd - tangential(x)) / radial(x)
            xs, ys = x[todo], y[todo]
            r2 = xs * xs + ys * ys
            radial = 1 + r2 * (k[0] + r2 * (k[1] + r2 * k[2]))
            dx = 2 * k[3] * xs * ys + k[4] * (r2 + 2 * xs * xs)
            dy = k[3] * (r2 + 2 * ys * ys) + 2 * k[4] * xs * ys
            x[todo] = (tx[todo] - dx) / radial
            y[todo] = (ty[todo] - dy) / radial
            ex, ey, e = err(x, y)
        for _ in range(max_iter):
            todo = (e >= tol) | ~np.isfinite(e)
            if not todo.any():
                break
            jxx, jxy, jyx, jyy = _distort_jacobian(x[todo], y[todo], *k)
            det = jxx * jyy - jxy * jyx
            x[todo] -= (jyy * ex[todo] - jxy * ey[todo]) / det
            y[todo] -= (-jyx * ex[todo] + jxx * ey[todo]) / det
            ex, ey, e = err(x, y)
        if np.any(~(e < tol)):
            bad = int(np.argmax(~(e < tol)))
            raise UndistortionError(
                f"undistortion of {p[bad].tolist()} did not converge (residual {e[bad]:.3g} px)"
            )
        return self.from_normalized(np.column_stack([x, y]))

    def to_belt(self, pts) -> np.ndarray:
        if self.belt is None:
            raise CalibrationError("camera has no belt-plane homography")
        return self.belt.apply(self.undistort(pts))

    def with_belt(self, belt: Homography) -> "CameraModel":
        return replace(self, belt=belt)

    def to_dict(self) -> dict:
        d = {
            "format": CAMERA_FORMAT,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "skew": self.skew,
            "k1": self.k1,
            "k2": self.k2,
            "k3": self.k3,
            "p1": self.p1,
            "p2": self.p2,
            "belt_homography": None if self.belt is None else self.belt.matrix.tolist(),
            "image_size": None if self.image_size is None else list(self.image_size),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        if d.get("format") != CAMERA_FORMAT:
            raise ValueError(f"unsupported camera format {d.get('format')!r}")
        belt = d.get("belt_homography")
        size = d.get("image_size")
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            skew=float(d.get("skew", 0.0)),
            **{k: float(d.get(k, 0.0)) for k in ("k1", "k2", "k3", "p1", "p2")},
            belt=None if belt is None else Homography(np.array(belt)),
            image_size=None if size is None else (int(size[0]), int(size[1])),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CameraModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def undistort_point(model: CameraModel, point) -> np.ndarray:
    return model.undistort(point)[0]


def pixel_to_belt(model: CameraModel, point) -> np.ndarray:
    """Belt-plane millimetres for one pixel coordinate."""
    return model.to_belt(point)[0]


def pixels_to_belt(model: CameraModel, pts) -> np.ndarray:
    return model.to_belt(pts)


# --------------------------------------------------------------------------
# planar calibration


@dataclass(frozen=True)
class BoardSpec:
    square_mm: float = 20.0
    cols: int = 13  # inner corners along x
    rows: int = 8

    def corners(self) -> np.ndarray:
        gx, gy = np.meshgrid(np.arange(self.cols), np.arange(self.rows))
        return np.column_stack([gx.ravel(), gy.ravel()]).astype(float) * self.square_mm


@dataclass(frozen=True)
class PlanarView:
    image_xy: np.ndarray
    board_xy: np.ndarray
    flat_on_belt: bool = False

    def __post_init__(self):
        img, brd = _as_points(self.image_xy), _as_points(self.board_xy)
        if len(img) != len(brd):
            raise ValueError("image and board point counts differ")
        if len(img) < 4:
            raise ValueError(f"a view needs at least 4 correspondences, got {len(img)}")
        c = brd - brd.mean(axis=0)
        sv = np.linalg.svd(c, compute_uv=False)
        if sv[1] <= 1e-9 * max(sv[0], 1e-300):
            raise DegenerateConfigurationError("board points are collinear")
        object.__setattr__(self, "image_xy", img)
        object.__setattr__(self, "board_xy", brd)

    def check_pitch(self, board: BoardSpec, tol: float = 1e-6) -> None:
        q = self.board_xy / board.square_mm
        if np.abs(q - np.round(q)).max() > tol:
            raise ValueError(f"board points are not on a {board.square_mm} mm grid")


@dataclass
class Calibration:
    camera: CameraModel
    rotations: list[np.ndarray]
    translations: list[np.ndarray]
    initial_rms: float  # closed-form initialization, px
    rms: float  # after refinement, px
    per_view_rms: list[float]


def _v(h: np.ndarray, i: int, j: int) -> np.ndarray:
    hi, hj = h[:, i], h[:, j]
    return np.array(
        [
            hi[0] * hj[0],
            hi[0] * hj[1] + hi[1] * hj[0],
            hi[1] * hj[1],
            hi[2] * hj[0] + hi[0] * hj[2],
            hi[2] * hj[1] + hi[1] * hj[2],
            hi[2] * hj[2],
        ]
    )


def closed_form_intrinsics(homographies: Sequence[np.ndarray], zero_skew: bool = True) -> np.ndarray:
    """Intrinsic matrix from board->image homographies via the image of the absolute conic."""
    rows = []
    for h in homographies:
        h = h / np.linalg.norm(h)
        rows.append(_v(h, 0, 1))
        rows.append(_v(h, 0, 0) - _v(h, 1, 1))
    if zero_skew:
        rows.append(np.array([0, 1.0, 0, 0, 0, 0]))
    v = np.array(rows)
    _, sv, vt = np.linalg.svd(v)
    if sv[-2] <= 1e-7 * sv[0]:
        raise CalibrationError("views are too close in orientation to determine the intrinsics")
    b11, b12, b22, b13, b23, b33 = vt[-1]
    if b11 < 0:
        b11, b12, b22, b13, b23, b33 = -b11, -b12, -b22, -b13, -b23, -b33
    den = b11 * b22 - b12 * b12
    if den <= 0:
        raise CalibrationError("absolute conic estimate is not positive definite")
    v0 = (b12 * b13 - b11 * b23) / den
    lam = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11
    if lam / b11 <= 0:
        raise CalibrationError("absolute conic estimate is not positive definite")
    alpha = np.sqrt(lam / b11)
    beta = np.sqrt(lam * b11 / den)
    gamma = -b12 * alpha * alpha * beta / lam
    u0 = gamma * v0 / beta - b13 * alpha * alpha / lam
    return np.array([[alpha, gamma, u0], [0, beta, v0], [0, 0, 1.0]])


def _extrinsics(k: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    kinv = np.linalg.inv(k)
    a = kinv @ h
    lam = 1.0 / np.linalg.norm(a[:, 0])
    if a[2, 2] * lam < 0:  # board must be in front of the camera
        lam = -lam
    r1, r2, t = lam * a[:, 0], lam * a[:, 1], lam * a[:, 2]
    r = np.column_stack([r1, r2, np.cross(r1, r2)])
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1, 1, -1]) @ vt
    return r, t


def project_board(camera: CameraModel, rotation: np.ndarray, translation: np.ndarray, board_xy) -> np.ndarray:
    """Observed pixel coordinates of planar board points under a view pose."""
    b = _as_points(board_xy)
    pc = b[:, :1] * rotation[:, 0] + b[:, 1:2] * rotation[:, 1] + translation
    xy = pc[:, :2] / pc[:, 2:3]
    xd, yd = _distort_normalized(xy[:, 0], xy[:, 1], *camera.distortion)
    return camera.from_normalized(np.column_stack([xd, yd]))


class _Layout:
    """Packing of calibration unknowns into the optimizer's flat vector."""

    def __init__(self, n_views: int, skew: bool, k3: bool, tangential: bool):
        self.names = ["fx", "fy", "cx", "cy"] + (["skew"] if skew else []) + ["k1", "k2"]
        self.names += (["k3"] if k3 else []) + (["p1", "p2"] if tangential else [])
        self.n_intr = len(self.names)
        self.n_views = n_views

    def pack(self, cam: CameraModel, rots, trans) -> np.ndarray:
        intr = [getattr(cam, n) for n in self.names]
        poses = [np.concatenate([Rotation.from_matrix(r).as_rotvec(), t]) for r, t in zip(rots, trans)]
        return np.concatenate([intr] + poses)

    def unpack(self, p: np.ndarray, base: CameraModel):
        cam = replace(base, **dict(zip(self.names, map(float, p[: self.n_intr]))))
        poses = p[self.n_intr :].reshape(self.n_views, 6)
        rots = Rotation.from_rotvec(poses[:, :3]).as_matrix()
        return cam, list(rots), [t.copy() for t in poses[:, 3:]]


def _residuals(p, layout: _Layout, base: CameraModel, views: Sequence[PlanarView]) -> np.ndarray:
    # unpacked inline (no dataclass) since this runs once per Jacobian column
    vals = dict(zip(layout.names, p[: layout.n_intr]))
    fx, fy, cx, cy = vals["fx"], vals["fy"], vals["cx"], vals["cy"]
    s = vals.get("skew", base.skew)
    dist = (vals["k1"], vals["k2"], vals.get("k3", base.k3), vals.get("p1", base.p1), vals.get("p2", base.p2))
    poses = p[layout.n_intr :].reshape(layout.n_views, 6)
    rots = Rotation.from_rotvec(poses[:, :3]).as_matrix()
    out = []
    for view, r, t in zip(views, rots, poses[:, 3:]):
        b = view.board_xy
        pc = b[:, :1] * r[:, 0] + b[:, 1:2] * r[:, 1] + t
        x, y = pc[:, 0] / pc[:, 2], pc[:, 1] / pc[:, 2]
        xd, yd = _distort_normalized(x, y, *dist)
        out.append(fx * xd + s * yd + cx - view.image_xy[:, 0])
        out.append(fy * yd + cy - view.image_xy[:, 1])
    return np.concatenate(out)


def _jacobian(p, layout: _Layout, base: CameraModel, views: Sequence[PlanarView]) -> np.ndarray:
    # Central differences. A view's residuals depend only on the intrinsics and
    # that view's pose, so the same pose coordinate of every view is stepped at once.
    sizes = [2 * len(v.board_xy) for v in views]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    jac = np.zeros((offs[-1], len(p)))
    step = 1e-6 * (1 + np.abs(p))
    for j in range(layout.n_intr):
        d = np.zeros_like(p)
        d[j] = step[j]
        jac[:, j] = (_residuals(p + d, layout, base, views) - _residuals(p - d, layout, base, views)) / (2 * step[j])
    for k in range(6):
        cols = layout.n_intr + 6 * np.arange(layout.n_views) + k
        d = np.zeros_like(p)
        d[cols] = step[cols]
        diff = _residuals(p + d, layout, base, views) - _residuals(p - d, layout, base, views)
        for v, c in enumerate(cols):
            jac[offs[v] : offs[v + 1], c] = diff[offs[v] : offs[v + 1]] / (2 * step[c])
    return jac


def _rms(res: np.ndarray) -> float:
    return float(np.sqrt(np.mean(res**2) * 2))


def _belt_homography(camera: CameraModel, views, rots, trans) -> Homography:
    flat = [i for i, v in enumerate(views) if v.flat_on_belt]
    if not flat:
        raise CalibrationError("no view is flagged flat_on_belt")
    r0, t0 = rots[flat[0]], trans[flat[0]]
    src, dst = [], []
    for i in flat:
        v = views[i]
        b = v.board_xy
        pc = b[:, :1] * rots[i][:, 0] + b[:, 1:2] * rots[i][:, 1] + trans[i]
        # express every flat board in the first flat board's frame
        in_first = (pc - t0) @ r0
        src.append(camera.undistort(v.image_xy))
        dst.append(in_first[:, :2])
    return estimate_homography(np.vstack(src), np.vstack(dst), refine=True)


def calibrate_planar(
    views: Sequence[PlanarView],
    estimate_skew: bool = False,
    estimate_k3: bool = False,
    estimate_tangential: bool = True,
    image_size: tuple[int, int] | None = None,
) -> Calibration:
    """Closed-form planar calibration refined by Levenberg-Marquardt.

    Intrinsics come from the board homographies; radial k1, k2 are then
    initialised linearly and everything (intrinsics, distortion, per-view
    poses) is refined jointly on reprojection error. The belt homography is
    fitted to the undistorted corners of the flat-on-belt view(s).
    """
    views = list(views)
    if len(views) < 3:
        raise CalibrationError(f"planar calibration needs at least 3 views, got {len(views)}")
    if not any(v.flat_on_belt for v in views):
        raise CalibrationError("no view is flagged flat_on_belt")
    all_img = np.vstack([v.image_xy for v in views])
    norm = hartley_transform(all_img)
    hs = [norm @ estimate_homography(v.board_xy, v.image_xy).matrix for v in views]
    k = np.linalg.inv(norm) @ closed_form_intrinsics(hs, zero_skew=not estimate_skew)
    k = k / k[2, 2]
    cam = CameraModel(k[0, 0], k[1, 1], k[0, 2], k[1, 2], skew=k[0, 1] if estimate_skew else 0.0, image_size=image_size)
    rots, trans = [], []
    for v in views:
        r, t = _extrinsics(cam.K, estimate_homography(v.board_xy, v.image_xy).matrix)
        rots.append(r)
        trans.append(t)

    layout = _Layout(len(views), estimate_skew, estimate_k3, estimate_tangential)
    p0 = layout.pack(cam, rots, trans)
    r0 = _residuals(p0, layout, cam, views)

    # linear radial initialisation: observed - ideal = (ideal - c) * (k1 r^2 + k2 r^4)
    a_rows, b_rows = [], []
    for v, r, t in zip(views, rots, trans):
        ideal = project_board(cam, r, t, v.board_xy)
        xy = cam.to_normalized(ideal)
        r2 = (xy**2).sum(axis=1)
        d = ideal - [cam.cx, cam.cy]
        a_rows.append(np.column_stack([d[:, 0] * r2, d[:, 0] * r2**2]))
        a_rows.append(np.column_stack([d[:, 1] * r2, d[:, 1] * r2**2]))
        b_rows.append(v.image_xy[:, 0] - ideal[:, 0])
        b_rows.append(v.image_xy[:, 1] - ideal[:, 1])
    kk = np.linalg.lstsq(np.vstack(a_rows), np.concatenate(b_rows), rcond=None)[0]
    with_k = replace(cam, k1=float(kk[0]), k2=float(kk[1]))
    p1 = layout.pack(with_k, rots, trans)
    r1 = _residuals(p1, layout, with_k, views)
    if _rms(r1) < _rms(r0):
        cam, p0, r0 = with_k, p1, r1
    initial_rms = _rms(r0)

    fit = least_squares(
        _residuals, p0, jac=_jacobian, args=(layout, cam, views), method="lm", x_scale="jac",
        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200,
    )
    p = fit.x if _rms(fit.fun) <= initial_rms else p0
    cam, rots, trans = layout.unpack(p, cam)
    res = _residuals(p, layout, cam, views).reshape(-1)
    per_view, i = [], 0
    for v in views:
        n = len(v.board_xy)
        per_view.append(_rms(np.concatenate([res[i : i + n], res[i + n : i + 2 * n]])))
        i += 2 * n
    cam = cam.with_belt(_belt_homography(cam, views, rots, trans))
    return Calibration(cam, rots, trans, initial_rms, _rms(res), per_view)


# --------------------------------------------------------------------------
# calibration file I/O


def parse_calibration(d: dict) -> tuple[BoardSpec, list[PlanarView]]:
    b = d.get("board", {})
    board = BoardSpec(float(b.get("square_mm", 20.0)), int(b.get("cols", 0)), int(b.get("rows", 0)))
    views = []
    for i, v in enumerate(d.get("views", [])):
        corr = v.get("correspondences", [])
        try:
            view = PlanarView(
                np.array([c["image_xy"] for c in corr], dtype=float),
                np.array([c["board_xy"] for c in corr], dtype=float),
                bool(v.get("flat_on_belt", False)),
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"view {i}: {exc}") from None
        view.check_pitch(board)
        views.append(view)
    return board, views


def load_calibration(path) -> tuple[dict, BoardSpec, list[PlanarView]]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    board, views = parse_calibration(d)
    return d, board, views
