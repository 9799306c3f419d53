"""Comparison candidate generators: brute force, grid-guided line sampling and
fixed angular-bin hashing.

Brute force is exact and doubles as the oracle for every candidate-set test.
The other two are approximate by construction: neither verifies distances at
retrieval time.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from .angular_index import _reduce_angles, reduce_angle
from .geometry import Epipole, EpipolarLine

DEFAULT_BINS = 256
DEFAULT_NEIGHBOR_WIDTH = 1

# Above this many cells the grid falls back to a sorted key table.
DENSE_CELL_LIMIT = 4_000_000


def envelope_mask(points, line, epsilon) -> np.ndarray:
    """Boolean mask of points within epsilon of the line (a, b, c)."""
    a, b, c = (float(v) for v in line)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.abs(a * pts[:, 0] + b * pts[:, 1] + c) / math.sqrt(a * a + b * b) <= epsilon


def brute_force_candidates(keypoints, l: EpipolarLine, epsilon) -> list[int]:
    """Every keypoint index with point-line distance <= epsilon, ascending."""
    if np.any(np.asarray(epsilon) <= 0):
        raise ValueError("epsilon must be positive")
    return np.flatnonzero(envelope_mask(keypoints, (l.a, l.b, l.c), epsilon)).tolist()


class GridIndex:
    """Uniform bucket grid over keypoint positions."""

    def __init__(self, keypoints, cell_size: float, width: float, height: float):
        if not cell_size > 0:
            raise ValueError("cell size must be positive")
        pts = np.ascontiguousarray(np.asarray(keypoints, dtype=float).reshape(-1, 2))
        self.points = pts
        self.cell_size = float(cell_size)
        self.width = float(width)
        self.height = float(height)
        n = pts.shape[0]
        cx = np.floor(pts[:, 0] / cell_size).astype(np.int64)
        cy = np.floor(pts[:, 1] / cell_size).astype(np.int64)
        self.cell_of = np.stack([cx, cy], axis=1)
        if n:
            self.gx0, self.gy0 = int(cx.min()), int(cy.min())
            self.ncx = int(cx.max()) - self.gx0 + 1
            self.ncy = int(cy.max()) - self.gy0 + 1
        else:
            self.gx0 = self.gy0 = 0
            self.ncx = self.ncy = 0
        flat = (cy - self.gy0) * self.ncx + (cx - self.gx0)
        order = np.argsort(flat, kind="stable")
        self.members = order.astype(np.int64)
        sorted_keys = flat[order]
        keys, first = np.unique(sorted_keys, return_index=True)
        self.keys = keys.astype(np.int64)
        self.key_offsets = np.append(first, n).astype(np.int64)
        ncell = self.ncx * self.ncy
        if 0 < ncell <= DENSE_CELL_LIMIT:
            counts = np.bincount(flat, minlength=ncell)
            self.dense_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        else:
            self.dense_offsets = np.empty(0, np.int64)

    @property
    def cells(self) -> dict[tuple[int, int], list[int]]:
        out = {}
        for key, lo, hi in zip(self.keys, self.key_offsets[:-1], self.key_offsets[1:]):
            gy, gx = divmod(int(key), self.ncx)
            out[(gx + self.gx0, gy + self.gy0)] = self.members[lo:hi].tolist()
        return out

    def clip_bounds(self, epsilon: float) -> tuple[float, float, float, float]:
        return (-epsilon, -epsilon, self.width + epsilon, self.height + epsilon)

    def kernel_args(self):
        return (self.cell_size, self.gx0, self.gy0, self.ncx, self.ncy, self.dense_offsets,
                self.keys, self.key_offsets, self.members)


def grid_candidates(index: GridIndex, l: EpipolarLine, epsilon: float) -> list[int]:
    """Keypoints in the 3x3 neighbourhoods of samples taken every cell along
    the line (clipped to the image grown by epsilon), ascending.
    """
    n = index.points.shape[0]
    if n == 0:
        return []
    seen = np.zeros(n, np.int64)
    out = np.empty(n, np.int64)
    k = K.grid_line(float(l.a), float(l.b), float(l.c), *index.kernel_args(),
                    *index.clip_bounds(float(epsilon)), seen, 1, out, 0)
    return sorted(out[:k].tolist())


class AngularHashIndex:
    """Keypoints bucketed by their direction from the epipole into B equal bins of [0, pi)."""

    def __init__(self, keypoints, e: Epipole, bin_count: int = DEFAULT_BINS,
                 neighbor_width: int = DEFAULT_NEIGHBOR_WIDTH):
        if bin_count < 1:
            raise ValueError("bin count must be at least 1")
        if neighbor_width < 0:
            raise ValueError("neighbour width must be non-negative")
        pts = np.asarray(keypoints, dtype=float).reshape(-1, 2)
        ex, ey = e.pixel
        self.epipole = e
        self.epipole_xy = (float(ex), float(ey))
        self.bin_count = int(bin_count)
        self.neighbor_width = int(neighbor_width)
        theta = _reduce_angles(np.arctan2(pts[:, 1] - ey, pts[:, 0] - ex))
        self.bin_of = np.minimum((theta * bin_count / math.pi).astype(np.int64), bin_count - 1)
        order = np.argsort(self.bin_of, kind="stable")
        self.order = order.astype(np.int64)
        counts = np.bincount(self.bin_of, minlength=bin_count)
        self.bin_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    @property
    def bins(self) -> list[list[int]]:
        return [self.order[lo:hi].tolist()
                for lo, hi in zip(self.bin_offsets[:-1], self.bin_offsets[1:])]

    def bins_for(self, alpha: float) -> list[int]:
        b = min(int(alpha * self.bin_count / math.pi), self.bin_count - 1)
        w = self.neighbor_width
        if 2 * w + 1 >= self.bin_count:
            return list(range(self.bin_count))
        return [(b + t) % self.bin_count for t in range(-w, w + 1)]


def hash_candidates(index: AngularHashIndex, alpha: float) -> list[int]:
    """Contents of bin(alpha) and its w neighbours on each side, ascending."""
    alpha = reduce_angle(alpha)
    out = [index.order[index.bin_offsets[b]:index.bin_offsets[b + 1]] for b in index.bins_for(alpha)]
    if not out:
        return []
    return np.sort(np.concatenate(out)).tolist()
