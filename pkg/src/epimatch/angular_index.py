"""Angular interval index for exact epipolar-envelope queries.

Seen from the epipole, the disc of radius epsilon around a keypoint covers a
range of directions.  A line through the epipole passes within epsilon of the
keypoint exactly when its direction falls inside that range, so the envelope
test turns into a 1D stabbing query over intervals of [0, pi].  The intervals
live in a centred interval tree: each node keeps the intervals spanning its
split angle, and a query walks a single root-to-leaf path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import AmbiguousDirection, EpimatchError, InfiniteEpipole
from .geometry import Epipole, EpipolarLine, ImagePoint

PI = math.pi


def reduce_angle(raw: float) -> float:
    """Map an angle to [0, pi); lines through the epipole are undirected."""
    if not math.isfinite(raw):
        raise ValueError("angle must be finite")
    a = math.fmod(raw, PI)
    if a < 0.0:
        a += PI
    if a >= PI:
        a = 0.0
    return a


def _reduce_angles(raw: np.ndarray) -> np.ndarray:
    a = np.fmod(raw, PI)
    a = np.where(a < 0.0, a + PI, a)
    return np.where(a >= PI, 0.0, a)


@dataclass(frozen=True)
class AngularInterval:
    start: float
    end: float
    source: int

    def contains(self, alpha: float) -> bool:
        return self.start <= alpha <= self.end


def _epipole_xy(e: Epipole) -> tuple[float, float]:
    if not e.is_finite:
        raise InfiniteEpipole("angular intervals need a finite epipole")
    p = e.pixel
    return float(p[0]), float(p[1])


def keypoint_intervals(points, e: Epipole, epsilon):
    """Vectorised interval construction.

    Returns arrays (start, end, source, duplicated); keypoints whose interval
    crosses the 0/pi seam contribute two entries flagged as duplicated.
    """
    ex, ey = _epipole_xy(e)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    eps = np.broadcast_to(np.asarray(epsilon, dtype=float), (n,))
    if n and not np.all(eps > 0):
        raise ValueError("epsilon must be positive")
    dx = pts[:, 0] - ex
    dy = pts[:, 1] - ey
    r = np.hypot(dx, dy)
    full = r <= eps
    theta = _reduce_angles(np.arctan2(dy, dx))
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = np.arcsin(np.where(full, 0.0, eps / np.where(full, 1.0, r)))
    lo = theta - delta
    hi = theta + delta
    below = ~full & (lo < 0.0)
    above = ~full & ~below & (hi >= PI)
    plain = ~full & ~below & ~above

    idx = np.arange(n, dtype=np.int64)
    parts_s = [np.zeros(full.sum()), lo[plain], lo[below] + PI, np.zeros(below.sum()),
               lo[above], np.zeros(above.sum())]
    parts_e = [np.full(full.sum(), PI), hi[plain], np.full(below.sum(), PI), hi[below],
               np.full(above.sum(), PI), hi[above] - PI]
    parts_src = [idx[full], idx[plain], idx[below], idx[below], idx[above], idx[above]]
    parts_dup = [np.zeros(full.sum(), bool), np.zeros(plain.sum(), bool),
                 np.ones(below.sum(), bool), np.ones(below.sum(), bool),
                 np.ones(above.sum(), bool), np.ones(above.sum(), bool)]
    start = np.concatenate(parts_s)
    end = np.concatenate(parts_e)
    source = np.concatenate(parts_src)
    dup = np.concatenate(parts_dup)
    # canonical order: by source, seam pieces low-to-high
    order = np.lexsort((start, source))
    return start[order], end[order], source[order], dup[order]


def interval_for_keypoint(p, e: Epipole, epsilon: float, source: int = 0) -> list[AngularInterval]:
    """One or two intervals of directions (from e) passing within epsilon of p.

    >>> e = Epipole([0.0, 0.0, 1.0])
    >>> [round(v / math.pi, 6) for iv in interval_for_keypoint((0, 10), e, 5) for v in (iv.start, iv.end)]
    [0.333333, 0.666667]
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    s, t, _, _ = keypoint_intervals([p], e, epsilon)
    return [AngularInterval(float(a), float(b), source) for a, b in zip(s, t)]


def line_query_angle(l: EpipolarLine, e: Epipole, image_center) -> float:
    """Direction of an epipolar line, measured from e towards the line point
    nearest the image centre, reduced to [0, pi)."""
    ex, ey = _epipole_xy(e)
    cx, cy = float(image_center[0]), float(image_center[1])
    a, b, c = l.a, l.b, l.c
    s = (a * cx + b * cy + c) / (a * a + b * b)
    qx, qy = cx - a * s, cy - b * s
    if math.hypot(qx - ex, qy - ey) <= K.AMBIGUOUS_TOL:
        raise AmbiguousDirection(
            "reference point on the line coincides with the epipole; direction undefined"
        )
    return reduce_angle(math.atan2(qy - ey, qx - ex))


@dataclass(frozen=True)
class IndexNode:
    id: int
    split: float
    depth: int
    bucket: tuple[AngularInterval, ...]
    bucket_min_start: float
    bucket_max_end: float
    left: int | None
    right: int | None


class EpipolarIndex:
    """Immutable centred interval tree over the angular intervals of one image.

    Build with :func:`build_index`.  Queries never mutate the index; scratch
    space for de-duplication is allocated per call, so concurrent readers are
    safe.
    """

    def __init__(self, epipole: Epipole, epsilon, keypoint_count: int, intervals, tree):
        self.epipole = epipole
        self.epsilon = epsilon
        self.keypoint_count = keypoint_count
        start, end, source, dup = intervals
        (self.split, self.left, self.right, self.node_depth, self.bucket_min,
         self.bucket_max, self.bucket_offsets, s_ids, e_ids) = tree
        self.interval_start = start
        self.interval_end = end
        self.interval_source = source
        self.interval_duplicated = dup
        # start-ascending and end-descending views of every bucket
        self._s_ids = s_ids
        self._e_ids = e_ids
        self._s_start = start[s_ids]
        self._s_src = source[s_ids]
        self._s_dup = dup[s_ids]
        self._e_end = end[e_ids]
        self._e_src = source[e_ids]
        self._e_dup = dup[e_ids]
        for arr in vars(self).values():
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)
        self.epipole_xy = _epipole_xy(epipole)

    @property
    def interval_count(self) -> int:
        return int(self.interval_start.shape[0])

    @property
    def node_count(self) -> int:
        return int(self.split.shape[0])

    @property
    def depth(self) -> int:
        return int(self.node_depth.max()) + 1 if self.node_count else 0

    def tree_arrays(self):
        """Arrays in the argument order of the compiled stabbing kernel."""
        return (self.split, self.left, self.right, self.bucket_offsets, self.bucket_min,
                self.bucket_max, self._s_start, self._s_src, self._s_dup,
                self._e_end, self._e_src, self._e_dup)

    def query_counted(self, alpha: float) -> tuple[list[int], int, int]:
        """Stabbing query returning (sorted sources, nodes visited, bucket entries scanned)."""
        if not 0.0 <= alpha < PI:
            raise ValueError("query angle must lie in [0, pi)")
        seen = np.zeros(max(self.keypoint_count, 1), np.int64)
        out = np.empty(max(self.keypoint_count, 1), np.int64)
        counters = np.zeros(2, np.int64)
        k = K.stab(float(alpha), *self.tree_arrays(), seen, 1, out, 0, counters)
        return sorted(out[:k].tolist()), int(counters[0]), int(counters[1])

    def query(self, alpha: float) -> list[int]:
        return self.query_counted(alpha)[0]

    def nodes(self) -> list[IndexNode]:
        out = []
        for i in range(self.node_count):
            lo, hi = self.bucket_offsets[i], self.bucket_offsets[i + 1]
            ids = self._s_ids[lo:hi]
            bucket = tuple(
                AngularInterval(float(self.interval_start[j]), float(self.interval_end[j]),
                                int(self.interval_source[j]))
                for j in ids
            )
            out.append(IndexNode(
                id=i,
                split=float(self.split[i]),
                depth=int(self.node_depth[i]),
                bucket=bucket,
                bucket_min_start=float(self.bucket_min[i]),
                bucket_max_end=float(self.bucket_max[i]),
                left=int(self.left[i]) if self.left[i] >= 0 else None,
                right=int(self.right[i]) if self.right[i] >= 0 else None,
            ))
        return out

    def audit(self) -> None:
        """Walk the whole tree and check every structural invariant.

        Raises EpimatchError on the first violation.
        """
        def fail(msg):
            raise EpimatchError("index audit failed: " + msg)

        n_iv = self.interval_count
        if n_iv > 2 * self.keypoint_count:
            fail(f"{n_iv} intervals for {self.keypoint_count} keypoints")
        s, e = self.interval_start, self.interval_end
        if n_iv and (s.min() < 0 or e.max() > PI or np.any(s > e)):
            fail("interval outside [0, pi] or reversed")
        if n_iv and (self.interval_source.min() < 0 or self.interval_source.max() >= self.keypoint_count):
            fail("interval source out of range")
        if self.node_count == 0:
            if n_iv:
                fail("intervals present but the tree is empty")
            return
        if self.bucket_offsets[-1] != n_iv:
            fail("buckets do not hold every interval exactly once")
        counts = np.bincount(self._s_ids, minlength=n_iv)
        if np.any(counts != 1):
            fail("interval stored in zero or several buckets")

        nodes = self.nodes()
        # (node, lower bound, upper bound) on the angles of its subtree
        stack = [(0, -math.inf, math.inf, 0)]
        visited = 0
        while stack:
            i, lo, hi, d = stack.pop()
            visited += 1
            nd = nodes[i]
            c = nd.split
            if nd.depth != d:
                fail(f"node {i} depth {nd.depth} != {d}")
            if not nd.bucket:
                fail(f"node {i} has an empty bucket")
            if not lo < c < hi:
                fail(f"node {i} split {c} outside ({lo}, {hi})")
            for iv in nd.bucket:
                if not iv.start <= c <= iv.end:
                    fail(f"node {i} bucket interval {iv} does not span {c}")
                if not (iv.end < hi and iv.start > lo):
                    fail(f"node {i} interval {iv} escapes its subtree bounds")
            if nd.bucket_min_start != min(iv.start for iv in nd.bucket):
                fail(f"node {i} bucket_min_start is not the exact minimum")
            if nd.bucket_max_end != max(iv.end for iv in nd.bucket):
                fail(f"node {i} bucket_max_end is not the exact maximum")
            lo_ids = self._s_ids[self.bucket_offsets[i]:self.bucket_offsets[i + 1]]
            if np.any(np.diff(s[lo_ids]) < 0):
                fail(f"node {i} start view not sorted")
            e_ids = self._e_ids[self.bucket_offsets[i]:self.bucket_offsets[i + 1]]
            if np.any(np.diff(e[e_ids]) > 0) or set(e_ids.tolist()) != set(lo_ids.tolist()):
                fail(f"node {i} end view inconsistent")
            if nd.left is not None:
                stack.append((nd.left, lo, c, d + 1))
            if nd.right is not None:
                stack.append((nd.right, c, hi, d + 1))
        if visited != self.node_count:
            fail("tree has unreachable nodes")

    def to_dict(self) -> dict:
        """Structural summary for debugging dumps (JSON friendly)."""
        eps = self.epsilon
        return {
            "epipole": list(self.epipole_xy),
            "epsilon": float(eps) if np.ndim(eps) == 0 else [float(v) for v in eps],
            "keypoint_count": self.keypoint_count,
            "interval_count": self.interval_count,
            "node_count": self.node_count,
            "depth": self.depth,
            "nodes": [
                {
                    "id": i,
                    "split": float(self.split[i]),
                    "depth": int(self.node_depth[i]),
                    "bucket_size": int(self.bucket_offsets[i + 1] - self.bucket_offsets[i]),
                    "bucket_min_start": float(self.bucket_min[i]),
                    "bucket_max_end": float(self.bucket_max[i]),
                    "left": int(self.left[i]) if self.left[i] >= 0 else None,
                    "right": int(self.right[i]) if self.right[i] >= 0 else None,
                }
                for i in range(self.node_count)
            ],
        }


def build_index(keypoints, e: Epipole, epsilon) -> EpipolarIndex:
    """Build the angular index for image-2 keypoints (an (n, 2) array).

    epsilon is a scalar tolerance in pixels or one value per keypoint.  A
    different tolerance needs a new index.
    """
    pts = np.asarray(keypoints, dtype=float).reshape(-1, 2)
    if np.ndim(epsilon) == 0:
        eps = float(epsilon)
        if not eps > 0:
            raise ValueError("epsilon must be positive")
    else:
        eps = np.asarray(epsilon, dtype=float)
        if eps.shape != (pts.shape[0],):
            raise ValueError("per-keypoint epsilon must match the keypoint count")
        if np.any(~(eps > 0)):
            raise ValueError("epsilon must be positive")
    intervals = keypoint_intervals(pts, e, eps)
    tree = K.build_tree(intervals[0], intervals[1])
    return EpipolarIndex(e, eps, pts.shape[0], intervals, tree)


def query(index: EpipolarIndex, alpha: float) -> list[int]:
    """Sources of all intervals containing alpha, ascending and de-duplicated."""
    return index.query(alpha)
