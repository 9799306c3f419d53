"""Descriptor matching restricted to geometric candidate sets.

The guided pipeline is: preprocess image 2 (epipole, index), then for every
image-1 keypoint compute its epipolar line, fetch candidates and keep the best
descriptor under the ratio test.  Queries are processed in blocks: a compiled
kernel fills a candidate buffer for a run of queries, a second kernel scores
those candidates, and the two stages are timed separately.  Blocks are fanned
out over a thread pool; kernels release the GIL.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .angular_index import build_index
from .baselines import DEFAULT_BINS, DEFAULT_NEIGHBOR_WIDTH, AngularHashIndex, GridIndex
from .errors import DimensionMismatch, EpimatchError, NoCandidates
from .geometry import FundamentalMatrix, ImagePoint, epipolar_lines, epipole_of

GUIDED_METHODS = ("angular", "brute", "grid", "hash")
METHODS = GUIDED_METHODS + ("unguided",)
FILTERS = ("ratio", "nearest")

QUERY_BLOCK = 4096
CANDIDATE_BLOCK = 1 << 20


@dataclass(frozen=True)
class Keypoint:
    position: ImagePoint
    response: float
    descriptor: np.ndarray


class KeypointSet:
    """Column storage for one image's keypoints."""

    def __init__(self, positions, descriptors, responses=None):
        pos = np.ascontiguousarray(np.asarray(positions, dtype=float).reshape(-1, 2))
        desc = np.asarray(descriptors, dtype=float)
        if desc.ndim == 1 and pos.shape[0] == 0:
            desc = desc.reshape(0, 0)
        if desc.ndim != 2 or desc.shape[0] != pos.shape[0]:
            raise DimensionMismatch("need one descriptor row per keypoint")
        resp = np.zeros(pos.shape[0]) if responses is None else np.asarray(responses, dtype=float)
        if resp.shape != (pos.shape[0],) or not np.all(np.isfinite(resp)):
            raise EpimatchError("responses must be finite, one per keypoint")
        if not np.all(np.isfinite(pos)):
            raise EpimatchError("keypoint positions must be finite")
        self.positions = pos
        self.descriptors = np.ascontiguousarray(desc)
        self.responses = resp

    @classmethod
    def from_keypoints(cls, keypoints: Sequence[Keypoint], dim: int | None = None):
        if not keypoints:
            return cls(np.empty((0, 2)), np.empty((0, dim or 0)))
        dims = {len(k.descriptor) for k in keypoints}
        if len(dims) != 1 or (dim is not None and dims != {dim}):
            raise DimensionMismatch("descriptor lengths differ within one image")
        return cls([k.position for k in keypoints], [k.descriptor for k in keypoints],
                   [k.response for k in keypoints])

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, i) -> Keypoint:
        return Keypoint(ImagePoint(*self.positions[i]), float(self.responses[i]),
                        self.descriptors[i])

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]


@dataclass(frozen=True)
class MatchConfig:
    epsilon: float = 50.0
    tau: float = 0.8
    filter: str = "ratio"
    method: str = "angular"
    bins: int = DEFAULT_BINS
    neighbor_width: int = DEFAULT_NEIGHBOR_WIDTH
    cell_size: float | None = None
    image_size: tuple[float, float] | None = None
    threads: int | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.filter not in FILTERS:
            raise ValueError(f"filter must be one of {FILTERS}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.bins < 1 or self.neighbor_width < 0:
            raise ValueError("bins must be >= 1 and neighbour width >= 0")
        if self.cell_size is not None and not self.cell_size > 0:
            raise ValueError("cell size must be positive")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class MatchPair:
    query_index: int
    train_index: int
    distance: float


@dataclass
class MatchTiming:
    """Stage times in milliseconds, summed over workers."""

    candidate_generation: float = 0.0
    descriptor_matching: float = 0.0
    index_build: float = 0.0
    skipped_queries: int = 0
    total_candidates: int = 0

    @property
    def total(self) -> float:
        return self.candidate_generation + self.descriptor_matching + self.index_build


# --------------------------------------------------------------------------
# scalar building blocks


def descriptor_distance(d1, d2) -> float:
    a = np.asarray(d1, dtype=float)
    b = np.asarray(d2, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"descriptor shapes {a.shape} and {b.shape} differ")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def best_two_in_candidates(query_descriptor, candidates, train_keypoints, query_index: int = 0):
    """Best match and second-best distance among the candidates.

    train_keypoints is a KeypointSet or a descriptor array.  Returns
    (MatchPair, second) where second is None for a single candidate; ties go
    to the lower train index.
    """
    cands = np.asarray(candidates, dtype=np.int64)
    if cands.size == 0:
        raise NoCandidates("empty candidate set")
    desc = train_keypoints.descriptors if isinstance(train_keypoints, KeypointSet) else np.asarray(train_keypoints, dtype=float)
    q = np.asarray(query_descriptor, dtype=float)
    if q.shape != desc.shape[1:]:
        raise DimensionMismatch("query descriptor length differs from train descriptors")
    d = np.sqrt(np.sum((desc[cands] - q) ** 2, axis=1))
    order = np.lexsort((cands, d))
    best = MatchPair(int(query_index), int(cands[order[0]]), float(d[order[0]]))
    second = float(d[order[1]]) if cands.size > 1 else None
    return best, second


def ratio_accept(best_distance: float, second_distance: float | None, tau: float) -> bool:
    if second_distance is None or math.isinf(second_distance):
        return True
    return best_distance < tau * second_distance


# --------------------------------------------------------------------------
# candidate generators


def _image_center(config: MatchConfig, p2: np.ndarray) -> tuple[float, float]:
    if config.image_size is not None:
        return config.image_size[0] / 2.0, config.image_size[1] / 2.0
    if p2.shape[0] == 0:
        return 0.0, 0.0
    lo, hi = p2.min(axis=0), p2.max(axis=0)
    return float(lo[0] + hi[0]) / 2.0, float(lo[1] + hi[1]) / 2.0


def _image_bounds(config: MatchConfig, p2: np.ndarray) -> tuple[float, float]:
    if config.image_size is not None:
        return float(config.image_size[0]), float(config.image_size[1])
    if p2.shape[0] == 0:
        return 0.0, 0.0
    return float(max(p2[:, 0].max(), 0.0)), float(max(p2[:, 1].max(), 0.0))


class CandidateGenerator:
    """Builds the per-method index over image-2 positions and hands out block kernels.

    ``recheck`` says whether the descriptor stage must drop candidates outside
    the envelope (approximate methods return unverified candidates).
    """

    def __init__(self, method: str, p2, f: FundamentalMatrix, epsilon, config: MatchConfig):
        if method not in GUIDED_METHODS:
            raise ValueError(f"no candidate generator for method {method!r}")
        self.method = method
        self.p2 = np.ascontiguousarray(np.asarray(p2, dtype=float).reshape(-1, 2))
        self.n = self.p2.shape[0]
        self.F = np.ascontiguousarray(f.f)
        self.fnorm = float(np.linalg.norm(self.F))
        self.eps = np.ascontiguousarray(np.broadcast_to(np.asarray(epsilon, dtype=float), (self.n,)))
        self.recheck = method in ("grid", "hash")
        self.center = _image_center(config, self.p2)
        t0 = time.perf_counter()
        if method == "angular":
            e = epipole_of(f)
            self.index = build_index(self.p2, e, epsilon)
            self.epipole = self.index.epipole_xy
        elif method == "hash":
            e = epipole_of(f)
            self.index = AngularHashIndex(self.p2, e, config.bins, config.neighbor_width)
            self.epipole = self.index.epipole_xy
        elif method == "grid":
            cell = config.cell_size if config.cell_size is not None else float(np.max(self.eps, initial=1.0))
            w, h = _image_bounds(config, self.p2)
            self.index = GridIndex(self.p2, cell, w, h)
            self.bounds = self.index.clip_bounds(float(np.max(self.eps, initial=0.0)))
        else:
            self.index = None
        self.build_ms = (time.perf_counter() - t0) * 1e3

    @property
    def capacity(self) -> int:
        return max(CANDIDATE_BLOCK, self.n)

    def worker(self) -> Callable:
        """A block kernel closure with its own scratch state: gen(qpts, i0, i1, out, offsets, status) -> i."""
        F, fnorm = self.F, self.fnorm
        if self.method == "brute":
            px = np.ascontiguousarray(self.p2[:, 0])
            py = np.ascontiguousarray(self.p2[:, 1])
            eps = self.eps

            def gen(qpts, i0, i1, out, offsets, status):
                return K.brute_block(F, fnorm, qpts, i0, i1, px, py, eps, out, offsets, status)
            return gen

        cx, cy = self.center
        if self.method == "hash":
            ix = self.index
            ex, ey = self.epipole

            def gen(qpts, i0, i1, out, offsets, status):
                return K.hash_block(F, fnorm, qpts, i0, i1, ex, ey, cx, cy, ix.order, ix.bin_offsets,
                                    ix.bin_count, ix.neighbor_width, out, offsets, status)
            return gen

        seen = np.zeros(max(self.n, 1), np.int64)
        state = [0]
        if self.method == "angular":
            tree = self.index.tree_arrays()
            ex, ey = self.epipole
            counters = np.zeros(2, np.int64)
            nkp = self.n

            def gen(qpts, i0, i1, out, offsets, status):
                i, state[0] = K.angular_block(F, fnorm, qpts, i0, i1, ex, ey, cx, cy, *tree, nkp,
                                              seen, state[0], out, offsets, status, counters)
                return i
            gen.counters = counters
            return gen

        grid_args = self.index.kernel_args()
        bounds = self.bounds

        def gen(qpts, i0, i1, out, offsets, status):
            i, state[0] = K.grid_block(F, fnorm, qpts, i0, i1, *grid_args, *bounds, seen, state[0],
                                       out, offsets, status)
            return i
        return gen

    def candidates_for(self, qpts) -> list[list[int]]:
        """Raw candidate lists (ascending) for each query point; no timing."""
        q = np.ascontiguousarray(np.asarray(qpts, dtype=float).reshape(-1, 2))
        out_lists: list[list[int]] = [[] for _ in range(q.shape[0])]

        # indexed writes: the untimed warm-up pass in stream() also calls this
        def collect(i0, nq, offsets, cands, status):
            for r in range(nq):
                out_lists[i0 + r] = sorted(cands[offsets[r]:offsets[r + 1]].tolist())

        stream(self, q, 0, q.shape[0], lambda: collect, threads=1)
        return out_lists


@dataclass
class StreamResult:
    candidate_s: float = 0.0
    consumer_s: float = 0.0
    total_candidates: int = 0
    skipped: int = 0
    block_times: list = field(default_factory=list)


def _chunks(i_start: int, i_end: int, parts: int) -> list[tuple[int, int]]:
    edges = np.linspace(i_start, i_end, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def stream(gen: CandidateGenerator, qpts: np.ndarray, i_start: int, i_end: int,
           consumer_factory: Callable, threads: int | None = 1, warmup: bool = True) -> StreamResult:
    """Run candidate generation over queries [i_start, i_end) block by block.

    consumer_factory() returns a per-worker callable
    ``consume(i0, nq, offsets, candidates, status)``.  Candidate and consumer
    time are accumulated per worker and summed.
    """
    threads = threads or os.cpu_count() or 1
    cap_q = QUERY_BLOCK
    cap = gen.capacity

    def run(lo: int, hi: int) -> StreamResult:
        g = gen.worker()
        consume = consumer_factory()
        out = np.empty(cap, np.int64)
        offsets = np.zeros(cap_q + 1, np.int64)
        status = np.zeros(cap_q, np.int64)
        res = StreamResult()
        if warmup and hi > lo:
            # untimed: loads compiled kernels, first-touches buffers
            j = g(qpts, lo, lo + 1, out, offsets, status)
            consume(lo, j - lo, offsets, out, status)
        i = lo
        while i < hi:
            t0 = time.perf_counter()
            j = g(qpts, i, min(hi, i + cap_q), out, offsets, status)
            t1 = time.perf_counter()
            consume(i, j - i, offsets, out, status)
            t2 = time.perf_counter()
            res.candidate_s += t1 - t0
            res.consumer_s += t2 - t1
            res.total_candidates += int(offsets[j - i])
            res.skipped += int(np.count_nonzero(status[: j - i]))
            i = j
        return res

    parts = _chunks(i_start, i_end, threads)
    if threads == 1 or len(parts) <= 1:
        results = [run(a, b) for a, b in parts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda ab: run(*ab), parts))
    total = StreamResult()
    for r in results:
        total.candidate_s += r.candidate_s
        total.consumer_s += r.consumer_s
        total.total_candidates += r.total_candidates
        total.skipped += r.skipped
    return total


def describe_consumer(gen: CandidateGenerator, desc1, desc2, qpts, results):
    """Factory of consumers writing best/second/pool per query into results arrays."""
    train, dist, second, pool = results

    def factory():
        def consume(i0, nq, offsets, cands, status):
            K.describe_block(desc1, desc2, qpts, gen.p2, gen.eps, gen.F, i0, nq, offsets, cands,
                             status, gen.recheck, train, dist, second, pool)
        return consume
    return factory


def count_consumer(gen: CandidateGenerator, qpts, hits, sizes):
    """Factory of consumers recording in-envelope hits and raw sizes per query."""

    def factory():
        def consume(i0, nq, offsets, cands, status):
            K.envelope_counts(qpts, gen.p2, gen.eps, gen.F, i0, nq, offsets, cands, status, hits, sizes)
        return consume
    return factory


def _accept(dist, second, train, config: MatchConfig) -> np.ndarray:
    ok = train >= 0
    if config.filter == "ratio":
        ok &= np.isinf(second) | (dist < config.tau * second)
    return ok


def _pairs(ok, train, dist) -> list[MatchPair]:
    idx = np.flatnonzero(ok)
    return [MatchPair(int(i), int(train[i]), float(dist[i])) for i in idx]


def _check_inputs(kp1: KeypointSet, kp2: KeypointSet):
    if len(kp1) and len(kp2) and kp1.dim != kp2.dim:
        raise DimensionMismatch(f"descriptor dimensions differ: {kp1.dim} vs {kp2.dim}")


def match_guided(kp1: KeypointSet, kp2: KeypointSet, f: FundamentalMatrix, config: MatchConfig):
    """Guided matching with the candidate strategy named by config.method.

    Returns (matches sorted by query index, MatchTiming).  Queries whose
    epipolar line is degenerate or whose direction is ambiguous are skipped and
    counted.
    """
    if config.method not in GUIDED_METHODS:
        raise ValueError(f"match_guided needs one of {GUIDED_METHODS}")
    _check_inputs(kp1, kp2)
    gen = CandidateGenerator(config.method, kp2.positions, f, config.epsilon, config)
    m = len(kp1)
    train = np.full(m, -1, np.int64)
    dist = np.full(m, np.inf)
    second = np.full(m, np.inf)
    pool = np.zeros(m, np.int64)
    if len(kp2) == 0 or m == 0:
        return [], MatchTiming(index_build=gen.build_ms)
    d1, d2 = kp1.descriptors, kp2.descriptors
    res = stream(gen, kp1.positions, 0, m,
                 describe_consumer(gen, d1, d2, kp1.positions, (train, dist, second, pool)),
                 threads=config.threads)
    ok = _accept(dist, second, train, config)
    timing = MatchTiming(
        candidate_generation=res.candidate_s * 1e3,
        descriptor_matching=res.consumer_s * 1e3,
        index_build=gen.build_ms,
        skipped_queries=res.skipped,
        total_candidates=res.total_candidates,
    )
    return _pairs(ok, train, dist), timing


def _top2_all(d1: np.ndarray, d2: np.ndarray, chunk: int = 1024):
    """Exact best / second-best L2 distances of every d1 row over all of d2."""
    m, n = d1.shape[0], d2.shape[0]
    train = np.full(m, -1, np.int64)
    best = np.full(m, np.inf)
    second = np.full(m, np.inf)
    if n == 0:
        return train, best, second
    n2 = np.einsum("ij,ij->i", d2, d2)
    keep = min(3, n)
    for lo in range(0, m, chunk):
        q = d1[lo:lo + chunk]
        sq = n2[None, :] - 2.0 * (q @ d2.T)
        top = np.argpartition(sq, keep - 1, axis=1)[:, :keep]
        # re-score the shortlist exactly to fix rounding in the expanded form
        exact = np.sqrt(np.sum((d2[top] - q[:, None, :]) ** 2, axis=2))
        order = np.lexsort((top, exact), axis=1)
        top = np.take_along_axis(top, order, 1)
        exact = np.take_along_axis(exact, order, 1)
        train[lo:lo + chunk] = top[:, 0]
        best[lo:lo + chunk] = exact[:, 0]
        if keep > 1:
            second[lo:lo + chunk] = exact[:, 1]
    return train, best, second


def match_unguided(kp1: KeypointSet, kp2: KeypointSet, f: FundamentalMatrix, config: MatchConfig):
    """Full descriptor matching over all of image 2, then an epipolar-envelope filter."""
    _check_inputs(kp1, kp2)
    t0 = time.perf_counter()
    train, best, second = _top2_all(kp1.descriptors, kp2.descriptors)
    ok = _accept(best, second, train, config)
    if ok.any():
        lines = epipolar_lines(f, kp1.positions)
        a, b, c = lines[:, 0], lines[:, 1], lines[:, 2]
        p = kp2.positions[np.where(train >= 0, train, 0)]
        nrm = np.hypot(a, b)
        scale = np.linalg.norm(f.f) * np.sqrt(np.sum(kp1.positions ** 2, axis=1) + 1.0)
        valid = nrm > K.DEGENERATE_LINE_TOL * scale
        eps = np.broadcast_to(np.asarray(config.epsilon, dtype=float), (len(kp2),))
        with np.errstate(divide="ignore", invalid="ignore"):
            inside = np.abs(a * p[:, 0] + b * p[:, 1] + c) / nrm <= eps[np.where(train >= 0, train, 0)]
        ok &= valid & inside
    elapsed = (time.perf_counter() - t0) * 1e3
    return _pairs(ok, train, best), MatchTiming(descriptor_matching=elapsed)


def match(kp1: KeypointSet, kp2: KeypointSet, f: FundamentalMatrix, config: MatchConfig):
    if config.method == "unguided":
        return match_unguided(kp1, kp2, f, config)
    return match_guided(kp1, kp2, f, config)
