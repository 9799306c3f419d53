import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from epimatch.angular_index import (
    EpipolarIndex,
    build_index,
    interval_for_keypoint,
    keypoint_intervals,
    line_query_angle,
    query,
    reduce_angle,
)
from epimatch.errors import AmbiguousDirection, EpimatchError, InfiniteEpipole
from epimatch.geometry import Epipole, EpipolarLine, point_line_distance

PI = math.pi
ORIGIN = Epipole([0.0, 0.0, 1.0])


def epipole(x, y):
    return Epipole([x, y, 1.0])


def line_through(ex, ey, angle):
    """Line through (ex, ey) with direction angle."""
    a, b = -math.sin(angle), math.cos(angle)
    return EpipolarLine(a, b, -(a * ex + b * ey))


def oracle(points, line, eps):
    """(inside set, boundary-band set) from direct distances."""
    d = np.abs(line.a * points[:, 0] + line.b * points[:, 1] + line.c) / math.hypot(line.a, line.b)
    eps = np.broadcast_to(eps, d.shape)
    band = np.abs(d - eps) <= 1e-6 * np.maximum(1.0, eps)
    return set(np.flatnonzero((d <= eps) & ~band).tolist()), set(np.flatnonzero(band).tolist())


def check_exact(index, points, line, eps, center):
    got = set(index.query(line_query_angle(line, index.epipole, center)))
    inside, band = oracle(points, line, eps)
    assert got - band == inside


# ---------------------------------------------------------------- reduce_angle


def test_reduce_angle_examples():
    assert reduce_angle(0.0) == 0.0
    assert reduce_angle(3 * PI / 2) == pytest.approx(PI / 2)
    assert reduce_angle(-PI / 6) == pytest.approx(5 * PI / 6)
    assert reduce_angle(PI) == 0.0


@given(st.floats(-1e6, 1e6))
def test_reduce_angle_range_and_congruence(raw):
    a = reduce_angle(raw)
    assert 0.0 <= a < PI
    k = (raw - a) / PI
    assert abs(k - round(k)) <= 1e-6 * max(1.0, abs(k))


def test_reduce_angle_rejects_non_finite():
    with pytest.raises(ValueError):
        reduce_angle(float("nan"))


# ---------------------------------------------------------------- intervals


def test_interval_single():
    (iv,) = interval_for_keypoint((0, 10), ORIGIN, 5)
    assert iv.start == pytest.approx(PI / 3) and iv.end == pytest.approx(2 * PI / 3)
    assert iv.source == 0


def test_interval_wraps_at_zero():
    ivs = interval_for_keypoint((10, 0), ORIGIN, 5, source=3)
    spans = sorted((iv.start, iv.end) for iv in ivs)
    assert spans[0] == pytest.approx((0.0, PI / 6))
    assert spans[1] == pytest.approx((5 * PI / 6, PI))
    assert {iv.source for iv in ivs} == {3}


def test_interval_wraps_at_pi():
    # theta just below pi: the upper end overflows and wraps to the low side
    ivs = interval_for_keypoint((-10, 0.5), ORIGIN, 5)
    spans = sorted((iv.start, iv.end) for iv in ivs)
    assert len(spans) == 2
    assert spans[0][0] == 0.0 and spans[1][1] == PI


def test_interval_near_epipole_is_full():
    (iv,) = interval_for_keypoint((3, 0), ORIGIN, 5)
    assert (iv.start, iv.end) == (0.0, PI)
    (iv,) = interval_for_keypoint((0, 0), ORIGIN, 1e-3)
    assert (iv.start, iv.end) == (0.0, PI)


def test_interval_needs_finite_epipole_and_positive_epsilon():
    with pytest.raises(InfiniteEpipole):
        interval_for_keypoint((1, 1), Epipole([1.0, 0.0, 0.0]), 5)
    with pytest.raises(ValueError):
        interval_for_keypoint((1, 1), ORIGIN, 0)


def test_vectorised_intervals_match_scalar():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-100, 100, (300, 2))
    start, end, src, dup = keypoint_intervals(pts, ORIGIN, 20.0)
    for j, p in enumerate(pts):
        ivs = interval_for_keypoint(p, ORIGIN, 20.0, source=j)
        mine = sorted(zip(start[src == j], end[src == j]))
        assert mine == sorted((iv.start, iv.end) for iv in ivs)
        assert dup[src == j].all() == (len(ivs) == 2)


# ---------------------------------------------------------------- query angle


def test_line_query_angle_examples():
    c = (10, 10)
    assert line_query_angle(EpipolarLine(0, 1, 0), ORIGIN, c) == 0.0
    assert line_query_angle(EpipolarLine(1, 0, 0), ORIGIN, c) == pytest.approx(PI / 2)
    assert line_query_angle(EpipolarLine(0, 1, -5), ORIGIN, c) == pytest.approx(math.atan2(5, 10))


def test_line_query_angle_ambiguous():
    # the centre projects onto the epipole itself
    with pytest.raises(AmbiguousDirection):
        line_query_angle(EpipolarLine(1, 1, 0), ORIGIN, (10, 10))


# ---------------------------------------------------------------- build / query


def test_empty_index():
    idx = build_index(np.empty((0, 2)), ORIGIN, 5.0)
    assert idx.interval_count == 0 and idx.node_count == 0
    assert query(idx, 0.0) == [] and query(idx, 1.0) == []
    idx.audit()


def test_single_keypoint_index():
    idx = build_index([(0, 10)], ORIGIN, 5.0)
    (root,) = idx.nodes()
    assert len(root.bucket) == 1
    assert root.bucket_min_start == pytest.approx(PI / 3)
    assert root.bucket_max_end == pytest.approx(2 * PI / 3)
    assert query(idx, PI / 2) == [0]
    assert query(idx, 0.1) == []


def test_single_wrapping_keypoint_index():
    idx = build_index([(10, 0)], ORIGIN, 5.0)
    assert idx.interval_count == 2
    bounds = [(n.bucket_min_start, n.bucket_max_end) for n in idx.nodes()]
    flat = [v for pair in sorted(bounds) for v in pair]
    assert flat == pytest.approx([0.0, PI / 6, 5 * PI / 6, PI])
    assert query(idx, 0.0) == [0]
    assert query(idx, 0.1) == [0]
    assert query(idx, 3.0) == [0]
    assert query(idx, 1.0) == []


def test_query_rejects_out_of_range_angle():
    idx = build_index([(0, 10)], ORIGIN, 5.0)
    with pytest.raises(ValueError):
        idx.query(PI)


def test_build_validates():
    with pytest.raises(InfiniteEpipole):
        build_index([(1, 1)], Epipole([1.0, 1.0, 0.0]), 5.0)
    with pytest.raises(ValueError):
        build_index([(1, 1)], ORIGIN, -1.0)
    with pytest.raises(ValueError):
        build_index([(1, 1), (2, 2)], ORIGIN, [1.0])


def test_large_index_structure():
    rng = np.random.default_rng(1)
    n = 10_000
    pts = rng.uniform([0, 0], [6048, 4032], (n, 2))
    idx = build_index(pts, epipole(3000.0, 2000.0), 50.0)
    assert n <= idx.interval_count <= 2 * n
    assert idx.depth <= 2 * math.log2(2 * n) + 4
    idx.audit()
    assert isinstance(idx, EpipolarIndex)


def test_audit_detects_corruption():
    rng = np.random.default_rng(2)
    idx = build_index(rng.uniform(0, 1000, (200, 2)), epipole(500.0, 500.0), 20.0)
    idx.audit()
    bmin = idx.bucket_min.copy()
    bmin[0] -= 0.01
    object.__setattr__(idx, "bucket_min", bmin)
    with pytest.raises(EpimatchError):
        idx.audit()


def test_random_queries_match_distance_oracle():
    rng = np.random.default_rng(3)
    ex, ey = 3000.0, 2000.0
    pts = rng.uniform([0, 0], [6048, 4032], (5000, 2))
    idx = build_index(pts, epipole(ex, ey), 50.0)
    for alpha in rng.uniform(0, PI, 500):
        line = line_through(ex, ey, alpha)
        got = set(query(idx, float(alpha)))
        inside, band = oracle(pts, line, 50.0)
        assert got - band == inside


def test_per_keypoint_epsilon():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 2000, (800, 2))
    eps = rng.uniform(1, 100, 800)
    idx = build_index(pts, epipole(1000.0, 1000.0), eps)
    for alpha in rng.uniform(0, PI, 100):
        check_exact(idx, pts, line_through(1000.0, 1000.0, alpha), eps, (1000.0, 400.0))


def test_query_result_is_sorted_and_unique():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-500, 500, (2000, 2))
    idx = build_index(pts, ORIGIN, 100.0)
    for alpha in rng.uniform(0, PI, 50):
        r = idx.query(float(alpha))
        assert r == sorted(set(r))


def test_to_dict_summary():
    idx = build_index(np.random.default_rng(6).uniform(0, 100, (50, 2)), epipole(50.0, 50.0), 5.0)
    doc = idx.to_dict()
    assert doc["node_count"] == len(doc["nodes"]) == idx.node_count
    assert sum(n["bucket_size"] for n in doc["nodes"]) == idx.interval_count
    assert doc["depth"] == idx.depth


# ---------------------------------------------------------------- properties

coords = st.floats(-5000, 5000, allow_nan=False)
epsilons = st.sampled_from([0.5, 5.0, 50.0, 200.0]) | st.floats(0.1, 500)


@st.composite
def scenes(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(0, 400))
    ex, ey = draw(coords), draw(coords)
    spread = draw(st.sampled_from([10.0, 300.0, 5000.0]))
    rng = np.random.default_rng(seed)
    offset = np.array([ex, ey]) if rng.integers(0, 2) else np.zeros(2)
    pts = rng.uniform(-spread, spread, (n, 2)) + offset
    return ex, ey, pts, draw(epsilons)


@given(scenes(), st.floats(0, 2 * PI), st.tuples(coords, coords))
def test_property_exactness(scene, angle, center):
    ex, ey, pts, eps = scene
    line = line_through(ex, ey, angle)
    q = np.array(center)
    s = (line.a * q[0] + line.b * q[1] + line.c)
    assume(math.hypot(q[0] - line.a * s - ex, q[1] - line.b * s - ey) > 1e-6)
    idx = build_index(pts, epipole(ex, ey), eps)
    check_exact(idx, pts, line, eps, center)


@given(scenes(), st.floats(-20, 20))
def test_property_pi_periodicity(scene, alpha):
    ex, ey, pts, eps = scene
    idx = build_index(pts, epipole(ex, ey), eps)
    assert idx.query(reduce_angle(alpha)) == idx.query(reduce_angle(alpha + PI))


@given(scenes(), st.floats(0.01, 10), st.floats(0, PI, exclude_max=True))
def test_property_monotone_in_epsilon(scene, grow, alpha):
    ex, ey, pts, eps = scene
    small = build_index(pts, epipole(ex, ey), eps)
    large = build_index(pts, epipole(ex, ey), eps * (1 + grow))
    assert set(small.query(alpha)) <= set(large.query(alpha))


@given(scenes(), st.floats(0, PI, exclude_max=True))
def test_property_near_epipole_always_returned(scene, alpha):
    ex, ey, pts, eps = scene
    idx = build_index(pts, epipole(ex, ey), eps)
    near = np.flatnonzero(np.hypot(pts[:, 0] - ex, pts[:, 1] - ey) <= eps)
    assert set(near.tolist()) <= set(idx.query(alpha))


@given(scenes(), st.floats(0, 2 * PI), st.floats(1e-6, 1e6) | st.floats(-1e6, -1e-6))
def test_property_line_scale_invariance(scene, angle, s):
    ex, ey, pts, eps = scene
    e = epipole(ex, ey)
    line = line_through(ex, ey, angle)
    center = (ex + 123.0, ey - 77.0)
    try:
        a1 = line_query_angle(line, e, center)
    except AmbiguousDirection:
        return
    a2 = line_query_angle(line.scaled(s), e, center)
    assert a1 == pytest.approx(a2, abs=1e-9) or abs(abs(a1 - a2) - PI) < 1e-9


@given(scenes())
def test_property_tree_audit(scene):
    ex, ey, pts, eps = scene
    build_index(pts, epipole(ex, ey), eps).audit()


def _straddles(idx, alpha):
    """Buckets on the query path whose [min, max] contains alpha, and the largest bucket."""
    nodes = idx.nodes()
    count, node = 0, (0 if nodes else None)
    while node is not None:
        nd = nodes[node]
        if nd.bucket_min_start <= alpha <= nd.bucket_max_end:
            count += 1
        if alpha < nd.split:
            node = nd.left
        elif alpha > nd.split:
            node = nd.right
        else:
            node = None
    return count, max((len(n.bucket) for n in nodes), default=0)


@given(scenes(), st.floats(0, PI, exclude_max=True))
def test_property_complexity_audit(scene, alpha):
    ex, ey, pts, eps = scene
    idx = build_index(pts, epipole(ex, ey), eps)
    result, visits, scanned = idx.query_counted(alpha)
    n = len(pts)
    assert visits <= 4 * math.log2(2 * n + 2)
    straddling, biggest = _straddles(idx, alpha)
    assert scanned <= straddling * biggest
    # early exit: at most one wasted entry per straddling bucket beyond the hits
    assert scanned <= 2 * idx.interval_count and scanned >= len(result)


def test_point_line_oracle_agrees_with_geometry():
    line = line_through(0.0, 0.0, 0.3)
    p = (4.0, 9.0)
    d = abs(line.a * p[0] + line.b * p[1] + line.c) / math.hypot(line.a, line.b)
    assert point_line_distance(line, p) == pytest.approx(d)
