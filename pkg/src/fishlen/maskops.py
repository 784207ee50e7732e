"""Binary mask primitives.

Masks are stored as a dense boolean raster cropped to a bounding box plus the
crop origin, so full-resolution (2464x2056) instance masks stay cheap. Pixel
centres sit at integer coordinates ``(x, y) = (column, row)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy import ndimage


class SegmentationError(ValueError):
    """Malformed polygon or run-length encoding."""


class EmptyMaskError(ValueError):
    pass


class IsotropicMaskError(ValueError):
    """The foreground covariance has no dominant direction."""

    def __init__(self, message: str, ratio: float):
        super().__init__(message)
        self.ratio = ratio


ISOTROPY_RATIO = 1.05

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    width: int
    height: int
    pixels: np.ndarray  # bool, cropped raster
    origin: tuple[int, int] = (0, 0)  # (x0, y0) of pixels[0, 0]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"mask dimensions must be positive, got {self.width}x{self.height}")
        px = np.asarray(self.pixels, dtype=bool)
        x0, y0 = self.origin
        if x0 < 0 or y0 < 0 or x0 + px.shape[1] > self.width or y0 + px.shape[0] > self.height:
            raise ValueError("cropped raster does not fit inside the mask dimensions")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "origin", (int(x0), int(y0)))

    @classmethod
    def from_array(cls, full: np.ndarray) -> "BinaryMask":
        full = np.asarray(full, dtype=bool)
        h, w = full.shape
        return cls(w, h, full).tight()

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(width, height, np.zeros((0, 0), dtype=bool))

    @classmethod
    def from_points(cls, xy: np.ndarray, width: int, height: int) -> "BinaryMask":
        xy = np.asarray(xy, dtype=np.int64).reshape(-1, 2)
        if len(xy) == 0:
            return cls.empty(width, height)
        x0, y0 = xy.min(axis=0)
        x1, y1 = xy.max(axis=0)
        px = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
        px[xy[:, 1] - y0, xy[:, 0] - x0] = True
        return cls(width, height, px, (int(x0), int(y0)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def area(self) -> int:
        return int(self.pixels.sum())

    def __bool__(self) -> bool:
        return bool(self.pixels.any())

    def bbox(self) -> tuple[int, int, int, int]:
        """Tight ``(x0, y0, x1, y1)`` with inclusive upper corner."""
        rows = np.flatnonzero(self.pixels.any(axis=1))
        cols = np.flatnonzero(self.pixels.any(axis=0))
        if len(rows) == 0:
            raise EmptyMaskError("empty mask has no bounding box")
        x0, y0 = self.origin
        return int(x0 + cols[0]), int(y0 + rows[0]), int(x0 + cols[-1]), int(y0 + rows[-1])

    def tight(self) -> "BinaryMask":
        if not self:
            return BinaryMask.empty(self.width, self.height)
        x0, y0, x1, y1 = self.bbox()
        ox, oy = self.origin
        px = self.pixels[y0 - oy : y1 - oy + 1, x0 - ox : x1 - ox + 1]
        return BinaryMask(self.width, self.height, px, (x0, y0))

    def full(self) -> np.ndarray:
        out = np.zeros((self.height, self.width), dtype=bool)
        x0, y0 = self.origin
        h, w = self.pixels.shape
        out[y0 : y0 + h, x0 : x0 + w] = self.pixels
        return out

    def coords(self) -> np.ndarray:
        """Foreground pixel centres as an ``(N, 2)`` array of ``(x, y)``."""
        rows, cols = np.nonzero(self.pixels)
        return np.column_stack([cols + self.origin[0], rows + self.origin[1]])

    def window(self, x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
        """Raster over the inclusive box, zero-filled outside the crop."""
        out = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
        ox, oy = self.origin
        h, w = self.pixels.shape
        ax0, ay0 = max(x0, ox), max(y0, oy)
        ax1, ay1 = min(x1, ox + w - 1), min(y1, oy + h - 1)
        if ax0 <= ax1 and ay0 <= ay1:
            out[ay0 - y0 : ay1 - y0 + 1, ax0 - x0 : ax1 - x0 + 1] = self.pixels[
                ay0 - oy : ay1 - oy + 1, ax0 - ox : ax1 - ox + 1
            ]
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        if self.shape != other.shape:
            return False
        a, b = self.tight(), other.tight()
        return a.origin == b.origin and a.pixels.shape == b.pixels.shape and bool(
            np.array_equal(a.pixels, b.pixels)
        )

    __hash__ = None  # type: ignore[assignment]


def _check_same_shape(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}")


def union(masks: Iterable[BinaryMask]) -> BinaryMask:
    masks = [m for m in masks]
    if not masks:
        raise ValueError("union of no masks")
    for m in masks[1:]:
        _check_same_shape(masks[0], m)
    nonempty = [m.tight() for m in masks if m]
    if not nonempty:
        return BinaryMask.empty(masks[0].width, masks[0].height)
    boxes = np.array([m.bbox() for m in nonempty])
    x0, y0 = boxes[:, :2].min(axis=0)
    x1, y1 = boxes[:, 2:].max(axis=0)
    px = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
    for m in nonempty:
        px |= m.window(x0, y0, x1, y1)
    return BinaryMask(masks[0].width, masks[0].height, px, (int(x0), int(y0)))


def count_components(mask: BinaryMask) -> int:
    """Number of 8-connected foreground components."""
    if not mask:
        return 0
    _, n = ndimage.label(mask.pixels, structure=_EIGHT)
    return int(n)


# --------------------------------------------------------------------------
# rasterization and run-length coding


def _fill_polygon(poly: Sequence[float], width: int, height: int) -> BinaryMask:
    pts = np.asarray(poly, dtype=float)
    if pts.ndim != 1 or len(pts) % 2 or len(pts) < 6:
        raise SegmentationError(f"polygon needs an even number (>= 6) of coordinates, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise SegmentationError("polygon has non-finite coordinates")
    xs, ys = pts[0::2], pts[1::2]
    # a pixel centre (px, py) is inside when an odd number of edges cross its row to the right
    r0 = max(int(np.ceil(ys.min())), 0)
    r1 = min(int(np.ceil(ys.max())) - 1, height - 1)
    if r1 < r0:
        return BinaryMask.empty(width, height)
    rows = np.arange(r0, r1 + 1, dtype=float)[:, None]
    xa, ya = xs[None, :], ys[None, :]
    xb, yb = np.roll(xs, -1)[None, :], np.roll(ys, -1)[None, :]
    crosses = (ya > rows) != (yb > rows)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = xa + (rows - ya) * (xb - xa) / (yb - ya)
    xint = np.where(crosses, xint, np.inf)
    xint.sort(axis=1)
    ncross = crosses.sum(axis=1)
    c0 = max(int(np.floor(xs.min())), 0)
    c1 = min(int(np.ceil(xs.max())), width - 1)
    if c1 < c0:
        return BinaryMask.empty(width, height)
    span = c1 - c0 + 1
    diff = np.zeros((len(rows), span + 1), dtype=np.int32)
    maxc = int(ncross.max()) if len(ncross) else 0
    for k in range(0, maxc, 2):
        valid = ncross > k
        lo = np.clip(np.ceil(xint[valid, k]) - c0, 0, span).astype(np.int64)
        hi = np.clip(np.ceil(xint[valid, k + 1]) - c0, 0, span).astype(np.int64)
        ridx = np.flatnonzero(valid)
        np.add.at(diff, (ridx, lo), 1)
        np.add.at(diff, (ridx, hi), -1)
    px = np.cumsum(diff[:, :-1], axis=1) > 0
    return BinaryMask(width, height, px, (c0, r0))


def _rle_string_to_counts(s: str) -> list[int]:
    counts: list[int] = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def _counts_to_rle_string(counts: Sequence[int]) -> str:
    out = []
    for i, x in enumerate(counts):
        x = int(x)
        if i > 2:
            x -= int(counts[i - 2])
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def _decode_rle(rle: dict, width: int, height: int) -> BinaryMask:
    try:
        h, w = (int(v) for v in rle["size"])
        counts = rle["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SegmentationError(f"run-length record needs 'size' and 'counts': {exc}") from None
    if (h, w) != (height, width):
        raise SegmentationError(f"run-length size {w}x{h} does not match image {width}x{height}")
    if isinstance(counts, str):
        counts = _rle_string_to_counts(counts)
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or np.any(counts < 0):
        raise SegmentationError("run-length counts must be non-negative integers")
    if counts.sum() != h * w:
        raise SegmentationError(f"run-length counts sum to {counts.sum()}, expected {h * w}")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    fg_starts, fg_lens = starts[1::2], counts[1::2]
    keep = fg_lens > 0
    fg_starts, fg_lens = fg_starts[keep], fg_lens[keep]
    total = int(fg_lens.sum())
    if total == 0:
        return BinaryMask.empty(width, height)
    # expand runs to linear column-major indices
    offs = np.repeat(fg_starts - np.concatenate([[0], np.cumsum(fg_lens)[:-1]]), fg_lens)
    idx = offs + np.arange(total)
    cols, rows = np.divmod(idx, h)
    return BinaryMask.from_points(np.column_stack([cols, rows]), width, height)


def encode_rle(mask: BinaryMask, compress: bool = False) -> dict:
    """COCO run-length encoding (column-major, counts start with background)."""
    h = mask.height
    t = mask.tight()
    if not t:
        counts = [h * mask.width]
    else:
        # column-major order of the crop is ascending linear index
        ccol, crow = np.nonzero(t.pixels.T)
        idx = (ccol + t.origin[0]) * h + (crow + t.origin[1])
        breaks = np.flatnonzero(np.diff(idx) != 1)
        run_starts = np.concatenate([[idx[0]], idx[breaks + 1]])
        run_ends = np.concatenate([idx[breaks], [idx[-1]]]) + 1
        bounds = np.empty(2 * len(run_starts) + 2, dtype=np.int64)
        bounds[0] = 0
        bounds[1:-1:2] = run_starts
        bounds[2:-1:2] = run_ends
        bounds[-1] = h * mask.width
        counts = np.diff(bounds).tolist()
        if counts[-1] == 0:
            counts.pop()
    return {"size": [h, mask.width], "counts": _counts_to_rle_string(counts) if compress else counts}


def rasterize(segmentation, width: int, height: int) -> BinaryMask:
    """Decode a polygon list, an RLE record, or a list mixing both; parts are unioned."""
    if isinstance(segmentation, dict):
        return _decode_rle(segmentation, width, height)
    if not isinstance(segmentation, (list, tuple)) or len(segmentation) == 0:
        raise SegmentationError(f"unsupported segmentation: {type(segmentation).__name__}")
    if all(isinstance(v, (int, float)) for v in segmentation):
        segmentation = [segmentation]  # a single bare polygon
    parts = []
    for part in segmentation:
        if isinstance(part, dict):
            parts.append(_decode_rle(part, width, height))
        elif isinstance(part, (list, tuple)):
            parts.append(_fill_polygon(part, width, height))
        else:
            raise SegmentationError(f"unsupported segmentation part: {type(part).__name__}")
    return union(parts)


# --------------------------------------------------------------------------
# thinning


@njit(cache=True, nogil=True)
def _removable(img, r, c, second):
    p2 = img[r - 1, c]
    p3 = img[r - 1, c + 1]
    p4 = img[r, c + 1]
    p5 = img[r + 1, c + 1]
    p6 = img[r + 1, c]
    p7 = img[r + 1, c - 1]
    p8 = img[r, c - 1]
    p9 = img[r - 1, c - 1]
    b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
    if b < 2 or b > 6:
        return False
    a = (
        (p2 == 0 and p3 == 1)
        + (p3 == 0 and p4 == 1)
        + (p4 == 0 and p5 == 1)
        + (p5 == 0 and p6 == 1)
        + (p6 == 0 and p7 == 1)
        + (p7 == 0 and p8 == 1)
        + (p8 == 0 and p9 == 1)
        + (p9 == 0 and p2 == 1)
    )
    if a != 1:
        return False
    if second:
        return p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
    return p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0


@njit(cache=True, nogil=True)
def _zhang_suen(img):
    # img: uint8 with a zero border; thinned in place.
    # Only pixels that touch background can ever be removed, so each pass visits
    # the current frontier instead of the whole raster. Returns the number removed.
    h, w = img.shape
    removed = 0
    nfg = 0
    for r in range(h):
        for c in range(w):
            nfg += img[r, c]
    cand = np.empty((nfg, 2), np.int64)
    nxt = np.empty((nfg, 2), np.int64)
    drop = np.empty((nfg, 2), np.int64)
    queued = np.zeros((h, w), np.uint8)
    n = 0
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            if img[r, c] and (
                img[r - 1, c - 1] == 0 or img[r - 1, c] == 0 or img[r - 1, c + 1] == 0
                or img[r, c - 1] == 0 or img[r, c + 1] == 0
                or img[r + 1, c - 1] == 0 or img[r + 1, c] == 0 or img[r + 1, c + 1] == 0
            ):
                cand[n, 0] = r
                cand[n, 1] = c
                queued[r, c] = 1
                n += 1
    while True:
        changed = False
        for second in (False, True):
            nd = 0
            for i in range(n):
                if _removable(img, cand[i, 0], cand[i, 1], second):
                    drop[nd, 0] = cand[i, 0]
                    drop[nd, 1] = cand[i, 1]
                    nd += 1
            if nd == 0:
                continue
            changed = True
            removed += nd
            for j in range(nd):
                img[drop[j, 0], drop[j, 1]] = 0
            m = 0
            for i in range(n):
                r = cand[i, 0]
                c = cand[i, 1]
                if img[r, c]:
                    nxt[m, 0] = r
                    nxt[m, 1] = c
                    m += 1
                else:
                    queued[r, c] = 0
            for j in range(nd):
                r = drop[j, 0]
                c = drop[j, 1]
                for dr in range(-1, 2):
                    for dc in range(-1, 2):
                        rr = r + dr
                        cc = c + dc
                        if img[rr, cc] and not queued[rr, cc]:
                            queued[rr, cc] = 1
                            nxt[m, 0] = rr
                            nxt[m, 1] = cc
                            m += 1
            cand, nxt = nxt, cand
            n = m
        if not changed:
            break
    return removed


@njit(cache=True, nogil=True)
def _in_block(img, r, c):
    for dr in (-1, 0):
        for dc in (-1, 0):
            if img[r + dr, c + dc] and img[r + dr, c + dc + 1] and img[r + dr + 1, c + dc] and img[r + dr + 1, c + dc + 1]:
                return True
    return False


@njit(cache=True, nogil=True)
def _thin_blocks(img, coords):
    # Sequentially delete simple, non-end pixels that sit in a 2x2
    # all-foreground block; ``coords`` lists the foreground in raster order.
    # Returns the number removed.
    removed = 0
    changed = True
    while changed:
        changed = False
        for i in range(len(coords)):
            r = coords[i, 0]
            c = coords[i, 1]
            if img[r, c] and _in_block(img, r, c) and _removable_simple(img, r, c):
                img[r, c] = 0
                removed += 1
                changed = True
    return removed


@njit(cache=True, nogil=True)
def _removable_simple(img, r, c):
    # Yokoi 8-connectivity number == 1: deleting the pixel changes neither
    # the foreground 8-components nor the background 4-components.
    x1 = 1 - np.int64(img[r, c + 1])
    x2 = 1 - np.int64(img[r - 1, c + 1])
    x3 = 1 - np.int64(img[r - 1, c])
    x4 = 1 - np.int64(img[r - 1, c - 1])
    x5 = 1 - np.int64(img[r, c - 1])
    x6 = 1 - np.int64(img[r + 1, c - 1])
    x7 = 1 - np.int64(img[r + 1, c])
    x8 = 1 - np.int64(img[r + 1, c + 1])
    n = 8 - (x1 + x2 + x3 + x4 + x5 + x6 + x7 + x8)
    if n < 2:
        return False
    c8 = (x1 - x1 * x2 * x3) + (x3 - x3 * x4 * x5) + (x5 - x5 * x6 * x7) + (x7 - x7 * x8 * x1)
    return c8 == 1


def _restore_vanished(img: np.ndarray, labels: np.ndarray, n: int) -> int:
    # Give every source component that thinned away completely one pixel back:
    # the one nearest its centroid (ties: first in raster order).
    kept = np.bincount(labels[img > 0], minlength=n + 1)
    lost = np.flatnonzero(kept[1:] == 0) + 1
    for k in lost:
        rows, cols = np.nonzero(labels == k)
        d = (rows - rows.mean()) ** 2 + (cols - cols.mean()) ** 2
        i = int(np.argmin(d))
        img[rows[i], cols[i]] = 1
    return len(lost)


@dataclass(frozen=True)
class Skeleton:
    width: int
    height: int
    points: np.ndarray  # (N, 2) integer (x, y)

    def __len__(self) -> int:
        return len(self.points)

    def to_mask(self) -> BinaryMask:
        return BinaryMask.from_points(self.points, self.width, self.height)


def skeletonize(mask: BinaryMask, rules_only: bool = False) -> Skeleton:
    """Zhang-Suen two-subiteration thinning, iterated to a fixed point.

    The classic rules erase some small components outright (an isolated 2x2
    square, two-pixel-thick diagonal strokes) and can leave 2x2 blocks behind.
    Unless ``rules_only`` is set, each vanished component gets one pixel back
    and leftover blocks are thinned by topology-preserving deletions, repeating
    until nothing changes. The result keeps the component count and is a fixed
    point of this function; a 2x2 block survives only where each of its pixels
    is a cut point (four branches meeting diagonally).
    """
    t = mask.tight()
    if not t:
        return Skeleton(mask.width, mask.height, np.zeros((0, 2), dtype=np.int64))
    img = np.pad(t.pixels, 1).astype(np.uint8)
    if rules_only:
        _zhang_suen(img)
    else:
        labels, n = ndimage.label(img, _EIGHT)
        _zhang_suen(img)
        while True:
            _restore_vanished(img, labels, n)
            if _thin_blocks(img, np.argwhere(img)) == 0 or _zhang_suen(img) == 0:
                break
    rows, cols = np.nonzero(img)
    pts = np.column_stack([cols - 1 + t.origin[0], rows - 1 + t.origin[1]]).astype(np.int64)
    return Skeleton(mask.width, mask.height, pts)


# --------------------------------------------------------------------------
# convex hull


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def monotone_chain(points) -> np.ndarray:
    """Strictly convex hull, counter-clockwise in (x, y) (positive signed area)."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).reshape(-1, 2).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


@dataclass(frozen=True)
class ConvexHull:
    vertices: np.ndarray  # (K, 2) counter-clockwise (x, y)

    def area(self) -> float:
        v = self.vertices
        if len(v) < 3:
            return 0.0
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        v = self.vertices
        if len(v) == 1:
            return np.all(np.abs(p - v[0]) <= tol, axis=1)
        if len(v) == 2:
            d = v[1] - v[0]
            rel = p - v[0]
            cr = d[0] * rel[:, 1] - d[1] * rel[:, 0]
            t = rel @ d / (d @ d)
            return (np.abs(cr) <= tol * np.hypot(*d)) & (t >= -tol) & (t <= 1 + tol)
        a = v
        b = np.roll(v, -1, axis=0)
        e = b - a
        cr = e[None, :, 0] * (p[:, None, 1] - a[None, :, 1]) - e[None, :, 1] * (p[:, None, 0] - a[None, :, 0])
        return np.all(cr >= -tol, axis=1)


def convex_hull(mask: BinaryMask) -> ConvexHull:
    t = mask.tight()
    if not t:
        raise EmptyMaskError("convex hull of an empty mask")
    px = t.pixels
    rows = np.flatnonzero(px.any(axis=1))
    first = px[rows].argmax(axis=1)
    last = px.shape[1] - 1 - px[rows, ::-1].argmax(axis=1)
    # hull of the per-row extremes equals the hull of all pixels
    xs = np.concatenate([first, last]) + t.origin[0]
    ys = np.concatenate([rows, rows]) + t.origin[1]
    return ConvexHull(monotone_chain(np.column_stack([xs, ys])))


# --------------------------------------------------------------------------
# moments and overlap


def centroid(mask: BinaryMask) -> np.ndarray:
    xy = mask.coords()
    if len(xy) == 0:
        raise EmptyMaskError("centroid of an empty mask")
    return xy.mean(axis=0)


def principal_axis(mask: BinaryMask) -> float:
    """Orientation of the dominant covariance eigenvector, in (-pi/2, pi/2].

    Angles follow image coordinates (x right, y down). Raises
    IsotropicMaskError when the eigenvalue ratio is below 1.05.
    """
    xy = mask.coords().astype(float)
    if len(xy) < 2:
        raise ValueError("principal axis needs at least 2 foreground pixels")
    d = xy - xy.mean(axis=0)
    cov = d.T @ d / len(d)
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 0:
        raise ValueError("foreground has zero second moments")
    ratio = evals[1] / evals[0] if evals[0] > 0 else np.inf
    if ratio < ISOTROPY_RATIO:
        raise IsotropicMaskError(f"eigenvalue ratio {ratio:.3f} below {ISOTROPY_RATIO}", ratio)
    vx, vy = evecs[:, 1]
    angle = np.arctan2(vy, vx)
    if angle <= -np.pi / 2:
        angle += np.pi
    elif angle > np.pi / 2:
        angle -= np.pi
    return float(angle)


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    _check_same_shape(a, b)
    ia, ib = a.area, b.area
    if ia == 0 and ib == 0:
        return 0.0
    if ia == 0 or ib == 0:
        return 0.0
    ta, tb = a.tight(), b.tight()
    ax0, ay0, ax1, ay1 = ta.bbox()
    bx0, by0, bx1, by1 = tb.bbox()
    x0, y0, x1, y1 = max(ax0, bx0), max(ay0, by0), min(ax1, bx1), min(ay1, by1)
    if x0 > x1 or y0 > y1:
        return 0.0
    inter = int(np.count_nonzero(ta.window(x0, y0, x1, y1) & tb.window(x0, y0, x1, y1)))
    return inter / (ia + ib - inter)
