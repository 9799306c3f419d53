"""Compiled inner loops shared by the candidate generators and matchers.

Every block kernel processes queries ``i0 <= i < i1`` into a caller-owned
output buffer and stops early when the buffer could overflow; it returns the
first unprocessed query index so the caller can drain the buffer and resume.
Per-query status codes: 0 ok, 1 degenerate line, 2 ambiguous direction.
"""

import math

import numpy as np
from numba import njit

OK = 0
DEGENERATE = 1
AMBIGUOUS = 2

DEGENERATE_LINE_TOL = 1e-12
AMBIGUOUS_TOL = 1e-9
PI = math.pi


@njit(cache=True, nogil=True)
def reduce_angle(raw):
    a = np.fmod(raw, PI)
    if a < 0.0:
        a += PI
    if a >= PI:
        a = 0.0
    return a


@njit(cache=True, nogil=True)
def line_coeffs(F, x, y):
    a = F[0, 0] * x + F[0, 1] * y + F[0, 2]
    b = F[1, 0] * x + F[1, 1] * y + F[1, 2]
    c = F[2, 0] * x + F[2, 1] * y + F[2, 2]
    return a, b, c


@njit(cache=True, nogil=True)
def is_degenerate(a, b, fnorm, x, y):
    return math.hypot(a, b) <= DEGENERATE_LINE_TOL * fnorm * math.sqrt(x * x + y * y + 1.0)


@njit(cache=True, nogil=True)
def query_angle(a, b, c, ex, ey, cx, cy):
    """Angle from the epipole to the line point closest to (cx, cy).

    Returns (alpha, ok); ok is False when that point is the epipole itself.
    """
    n2 = a * a + b * b
    s = (a * cx + b * cy + c) / n2
    qx = cx - a * s
    qy = cy - b * s
    dx = qx - ex
    dy = qy - ey
    if math.hypot(dx, dy) <= AMBIGUOUS_TOL:
        return 0.0, False
    return reduce_angle(math.atan2(dy, dx)), True


# --------------------------------------------------------------------------
# centred interval tree


@njit(cache=True)
def build_tree(start, end):
    m = start.shape[0]
    cap = max(m, 1)
    split = np.empty(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    depth = np.zeros(cap, np.int64)
    bmin = np.empty(cap)
    bmax = np.empty(cap)
    boff = np.zeros(cap + 1, np.int64)
    node_of = np.empty(m, np.int64)
    # kept in midpoint order: stable partitions preserve it within each range
    mid = 0.5 * (start + end)
    perm = np.argsort(mid, kind="mergesort")
    scratch = np.empty(m, np.int64)

    st_lo = np.empty(cap + 2, np.int64)
    st_hi = np.empty(cap + 2, np.int64)
    st_parent = np.empty(cap + 2, np.int64)
    st_side = np.empty(cap + 2, np.int64)
    st_depth = np.empty(cap + 2, np.int64)
    sp = 0
    if m > 0:
        st_lo[0] = 0
        st_hi[0] = m
        st_parent[0] = -1
        st_side[0] = 0
        st_depth[0] = 0
        sp = 1

    nn = 0
    while sp > 0:
        sp -= 1
        lo = st_lo[sp]
        hi = st_hi[sp]
        parent = st_parent[sp]
        side = st_side[sp]
        d = st_depth[sp]
        c = mid[perm[lo + (hi - lo - 1) // 2]]

        node = nn
        nn += 1
        nl = 0
        for i in range(lo, hi):
            j = perm[i]
            if end[j] < c:
                scratch[lo + nl] = j
                nl += 1
        b0 = lo + nl
        nb = 0
        lo_s = np.inf
        hi_e = -np.inf
        for i in range(lo, hi):
            j = perm[i]
            if start[j] <= c and end[j] >= c:
                scratch[b0 + nb] = j
                nb += 1
                node_of[j] = node
                lo_s = min(lo_s, start[j])
                hi_e = max(hi_e, end[j])
        r0 = b0 + nb
        nr = 0
        for i in range(lo, hi):
            j = perm[i]
            if start[j] > c:
                scratch[r0 + nr] = j
                nr += 1
        for i in range(lo, hi):
            perm[i] = scratch[i]

        split[node] = c
        depth[node] = d
        bmin[node] = lo_s
        bmax[node] = hi_e
        boff[node + 1] = nb
        if parent >= 0:
            if side == 0:
                left[parent] = node
            else:
                right[parent] = node

        if nr > 0:
            st_lo[sp] = r0
            st_hi[sp] = hi
            st_parent[sp] = node
            st_side[sp] = 1
            st_depth[sp] = d + 1
            sp += 1
        if nl > 0:
            st_lo[sp] = lo
            st_hi[sp] = lo + nl
            st_parent[sp] = node
            st_side[sp] = 0
            st_depth[sp] = d + 1
            sp += 1

    # bucket views: scatter two global sorts into per-node slots
    for v in range(nn):
        boff[v + 1] += boff[v]
    s_ids = np.empty(m, np.int64)
    e_ids = np.empty(m, np.int64)
    cur = boff[:nn].copy()
    for j in np.argsort(start, kind="mergesort"):
        v = node_of[j]
        s_ids[cur[v]] = j
        cur[v] += 1
    cur = boff[:nn].copy()
    for j in np.argsort(-end, kind="mergesort"):
        v = node_of[j]
        e_ids[cur[v]] = j
        cur[v] += 1

    return (
        split[:nn].copy(),
        left[:nn].copy(),
        right[:nn].copy(),
        depth[:nn].copy(),
        bmin[:nn].copy(),
        bmax[:nn].copy(),
        boff[: nn + 1].copy(),
        s_ids,
        e_ids,
    )


@njit(cache=True, nogil=True)
def stab(alpha, split, left, right, boff, bmin, bmax,
         s_start, s_src, s_dup, e_end, e_src, e_dup,
         seen, stamp, out, k, counters):
    """Append the sources of all intervals containing alpha to out[k:]."""
    node = 0 if split.shape[0] > 0 else -1
    while node >= 0:
        counters[0] += 1
        c = split[node]
        if bmin[node] <= alpha and alpha <= bmax[node]:
            lo = boff[node]
            hi = boff[node + 1]
            if alpha <= c:
                # every bucket interval ends at or after c >= alpha
                for i in range(lo, hi):
                    counters[1] += 1
                    if s_start[i] > alpha:
                        break
                    j = s_src[i]
                    if s_dup[i]:
                        if seen[j] == stamp:
                            continue
                        seen[j] = stamp
                    out[k] = j
                    k += 1
            else:
                # every bucket interval starts at or before c < alpha
                for i in range(lo, hi):
                    counters[1] += 1
                    if e_end[i] < alpha:
                        break
                    j = e_src[i]
                    if e_dup[i]:
                        if seen[j] == stamp:
                            continue
                        seen[j] = stamp
                    out[k] = j
                    k += 1
        if alpha < c:
            node = left[node]
        elif alpha > c:
            node = right[node]
        else:
            break
    return k


@njit(cache=True, nogil=True)
def angular_block(F, fnorm, qpts, i0, i1, ex, ey, cx, cy,
                  split, left, right, boff, bmin, bmax,
                  s_start, s_src, s_dup, e_end, e_src, e_dup,
                  nkp, seen, stamp, out, offsets, status, counters):
    k = 0
    offsets[0] = 0
    i = i0
    while i < i1:
        if k + nkp > out.shape[0]:
            break
        r = i - i0
        x = qpts[i, 0]
        y = qpts[i, 1]
        a, b, c = line_coeffs(F, x, y)
        st = OK
        if is_degenerate(a, b, fnorm, x, y):
            st = DEGENERATE
        else:
            alpha, ok = query_angle(a, b, c, ex, ey, cx, cy)
            if not ok:
                st = AMBIGUOUS
            else:
                stamp += 1
                k = stab(alpha, split, left, right, boff, bmin, bmax,
                         s_start, s_src, s_dup, e_end, e_src, e_dup,
                         seen, stamp, out, k, counters)
        status[r] = st
        offsets[r + 1] = k
        i += 1
    return i, stamp


# --------------------------------------------------------------------------
# baselines


@njit(cache=True, nogil=True)
def brute_block(F, fnorm, qpts, i0, i1, px, py, eps, out, offsets, status):
    n = px.shape[0]
    k = 0
    offsets[0] = 0
    i = i0
    while i < i1:
        if k + n > out.shape[0]:
            break
        r = i - i0
        x = qpts[i, 0]
        y = qpts[i, 1]
        a, b, c = line_coeffs(F, x, y)
        if is_degenerate(a, b, fnorm, x, y):
            status[r] = DEGENERATE
        else:
            status[r] = OK
            nrm = math.sqrt(a * a + b * b)
            for j in range(n):
                if abs(a * px[j] + b * py[j] + c) / nrm <= eps[j]:
                    out[k] = j
                    k += 1
        offsets[r + 1] = k
        i += 1
    return i


@njit(cache=True, nogil=True)
def hash_block(F, fnorm, qpts, i0, i1, ex, ey, cx, cy, order, bin_off, nbins, width,
               out, offsets, status):
    n = order.shape[0]
    span = 2 * width + 1
    k = 0
    offsets[0] = 0
    i = i0
    while i < i1:
        if k + n > out.shape[0]:
            break
        r = i - i0
        x = qpts[i, 0]
        y = qpts[i, 1]
        a, b, c = line_coeffs(F, x, y)
        st = OK
        if is_degenerate(a, b, fnorm, x, y):
            st = DEGENERATE
        else:
            alpha, ok = query_angle(a, b, c, ex, ey, cx, cy)
            if not ok:
                st = AMBIGUOUS
            else:
                center = int(alpha * nbins / PI)
                if center >= nbins:
                    center = nbins - 1
                if span >= nbins:
                    first = 0
                    count = nbins
                else:
                    first = center - width
                    count = span
                for t in range(count):
                    bb = (first + t) % nbins
                    for u in range(bin_off[bb], bin_off[bb + 1]):
                        out[k] = order[u]
                        k += 1
        status[r] = st
        offsets[r + 1] = k
        i += 1
    return i


@njit(cache=True, nogil=True)
def clip_line(a, b, c, xmin, ymin, xmax, ymax):
    """Clip an infinite line to a rectangle (Liang-Barsky style).

    Returns (ok, x0, y0, dx, dy, t0, t1) with unit direction (dx, dy).
    """
    nrm = math.sqrt(a * a + b * b)
    dx = b / nrm
    dy = -a / nrm
    x0 = -a * c / (nrm * nrm)
    y0 = -b * c / (nrm * nrm)
    t0 = -np.inf
    t1 = np.inf
    for axis in range(2):
        p = x0 if axis == 0 else y0
        d = dx if axis == 0 else dy
        lo = xmin if axis == 0 else ymin
        hi = xmax if axis == 0 else ymax
        if abs(d) < 1e-15:
            if p < lo or p > hi:
                return False, x0, y0, dx, dy, 0.0, 0.0
        else:
            ta = (lo - p) / d
            tb = (hi - p) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    if t0 > t1:
        return False, x0, y0, dx, dy, 0.0, 0.0
    return True, x0, y0, dx, dy, t0, t1


@njit(cache=True, nogil=True)
def grid_line(a, b, c, cell, gx0, gy0, ncx, ncy, dense_off, keys, key_off, members,
              xmin, ymin, xmax, ymax, seen, stamp, out, k):
    """Sample the clipped line every cell_size and gather 3x3 cell neighbourhoods into out[k:]."""
    dense = dense_off.shape[0] > 0
    ok, x0, y0, dx, dy, t0, t1 = clip_line(a, b, c, xmin, ymin, xmax, ymax)
    if not ok:
        return k
    nsteps = int(math.floor((t1 - t0) / cell))
    # regular samples plus the far end of the clipped segment
    nsamples = nsteps + 1
    if t1 > t0 + nsteps * cell:
        nsamples += 1
    for s in range(nsamples):
        t = t1 if s > nsteps else t0 + s * cell
        sx = x0 + t * dx
        sy = y0 + t * dy
        scx = int(math.floor(sx / cell))
        scy = int(math.floor(sy / cell))
        for oy in range(-1, 2):
            gy = scy + oy - gy0
            if gy < 0 or gy >= ncy:
                continue
            for ox in range(-1, 2):
                gx = scx + ox - gx0
                if gx < 0 or gx >= ncx:
                    continue
                key = gy * ncx + gx
                if dense:
                    lo = dense_off[key]
                    hi = dense_off[key + 1]
                else:
                    pos = np.searchsorted(keys, key)
                    if pos >= keys.shape[0] or keys[pos] != key:
                        continue
                    lo = key_off[pos]
                    hi = key_off[pos + 1]
                for u in range(lo, hi):
                    j = members[u]
                    if seen[j] != stamp:
                        seen[j] = stamp
                        out[k] = j
                        k += 1
    return k


@njit(cache=True, nogil=True)
def grid_block(F, fnorm, qpts, i0, i1, cell, gx0, gy0, ncx, ncy,
               dense_off, keys, key_off, members, xmin, ymin, xmax, ymax,
               seen, stamp, out, offsets, status):
    n = members.shape[0]
    k = 0
    offsets[0] = 0
    i = i0
    while i < i1:
        if k + n > out.shape[0]:
            break
        r = i - i0
        x = qpts[i, 0]
        y = qpts[i, 1]
        a, b, c = line_coeffs(F, x, y)
        if is_degenerate(a, b, fnorm, x, y):
            status[r] = DEGENERATE
        else:
            status[r] = OK
            stamp += 1
            k = grid_line(a, b, c, cell, gx0, gy0, ncx, ncy, dense_off, keys, key_off,
                          members, xmin, ymin, xmax, ymax, seen, stamp, out, k)
        offsets[r + 1] = k
        i += 1
    return i, stamp


# --------------------------------------------------------------------------
# consumers of candidate blocks


@njit(cache=True, nogil=True, fastmath={"reassoc", "contract", "nsz", "arcp"})
def _sqdist(desc1, i, desc2, j):
    acc = 0.0
    for t in range(desc1.shape[1]):
        diff = desc1[i, t] - desc2[j, t]
        acc += diff * diff
    return acc


@njit(cache=True, nogil=True)
def describe_block(desc1, desc2, qpts, p2, eps, F, i0, nq, offsets, cands, status,
                   recheck, out_train, out_dist, out_second, out_pool):
    """Best and second-best descriptor distance over each query's candidates.

    With recheck, candidates farther than their tolerance from the query's
    epipolar line are discarded first.  Ties go to the lower train index.
    """
    for r in range(nq):
        i = i0 + r
        out_train[i] = -1
        out_dist[i] = np.inf
        out_second[i] = np.inf
        out_pool[i] = 0
        if status[r] != OK:
            continue
        a = 0.0
        b = 0.0
        c = 0.0
        nrm = 1.0
        if recheck:
            a, b, c = line_coeffs(F, qpts[i, 0], qpts[i, 1])
            nrm = math.sqrt(a * a + b * b)
        best = np.inf
        second = np.inf
        best_j = -1
        pool = 0
        for u in range(offsets[r], offsets[r + 1]):
            j = cands[u]
            if recheck:
                if abs(a * p2[j, 0] + b * p2[j, 1] + c) / nrm > eps[j]:
                    continue
            pool += 1
            d = math.sqrt(_sqdist(desc1, i, desc2, j))
            if d < best or (d == best and j < best_j):
                second = best
                best = d
                best_j = j
            elif d < second:
                second = d
        out_train[i] = best_j
        out_dist[i] = best
        out_second[i] = second
        out_pool[i] = pool


@njit(cache=True, nogil=True)
def envelope_counts(qpts, p2, eps, F, i0, nq, offsets, cands, status, out_hits, out_size):
    """Per query: how many candidates lie inside the envelope, and how many were returned."""
    for r in range(nq):
        i = i0 + r
        lo = offsets[r]
        hi = offsets[r + 1]
        out_size[i] = hi - lo
        out_hits[i] = 0
        if status[r] != OK:
            continue
        a, b, c = line_coeffs(F, qpts[i, 0], qpts[i, 1])
        nrm = math.sqrt(a * a + b * b)
        h = 0
        for u in range(lo, hi):
            j = cands[u]
            if abs(a * p2[j, 0] + b * p2[j, 1] + c) / nrm <= eps[j]:
                h += 1
        out_hits[i] = h
