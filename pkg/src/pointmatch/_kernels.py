"""Numba inner loops shared by the similarity metrics and the grid search.

Every score in the package comes through the pair kernels below, whether a
caller compares two descriptors directly or the search sweeps thousands of
grid candidates, so scalar results and search scores are bit-identical by
construction. All kernels release the GIL so the slice-level thread pool in
the search gets real parallelism, and none of them mutate their inputs.

Numerical conventions (relied on by tests):
* accumulations in float64, inputs are float32 lookups;
* mutual information sums symmetric bin pairs together, which makes
  ``mi(a, b) == mi(b, a)`` exact in IEEE arithmetic, not just approximate;
* candidate loops keep the first maximum, so argmax tie-breaking is by
  ascending index order.
"""

from __future__ import annotations

import numpy as np
from numba import njit

METRIC_COSINE = 0
METRIC_EUCLIDEAN = 1
METRIC_MUTUAL_INFO = 2
METRIC_COMBINED = 3


@njit(nogil=True, cache=True)
def cosine_pair(av, bv):
    # Full vector dimension, zero-filled invalid entries included.
    dot = 0.0
    na = 0.0
    nb = 0.0
    for d in range(av.size):
        x = np.float64(av[d])
        y = np.float64(bv[d])
        dot += x * y
        na += x * x
        nb += y * y
    if na == 0.0 or nb == 0.0:
        return 0.0
    c = dot / (np.sqrt(na) * np.sqrt(nb))
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    return c


@njit(nogil=True, cache=True)
def euclidean_pair(av, bv):
    s = 0.0
    for d in range(av.size):
        diff = np.float64(av[d]) - np.float64(bv[d])
        s += diff * diff
    return -np.sqrt(s)


@njit(nogil=True, cache=True)
def mi_pair(av, avalid, bv, bvalid, bins):
    # Only dimensions valid on BOTH sides participate; each side is binned
    # by its own min/max over those dimensions (max lands in the last bin).
    n = 0
    amin = np.inf
    amax = -np.inf
    bmin = np.inf
    bmax = -np.inf
    for d in range(av.size):
        if avalid[d] and bvalid[d]:
            n += 1
            x = np.float64(av[d])
            y = np.float64(bv[d])
            if x < amin:
                amin = x
            if x > amax:
                amax = x
            if y < bmin:
                bmin = y
            if y > bmax:
                bmax = y
    if n < 2 or amax == amin or bmax == bmin:
        return 0.0

    kf = np.float64(bins)
    aspan = amax - amin
    bspan = bmax - bmin
    hist = np.zeros((bins, bins), dtype=np.int64)
    for d in range(av.size):
        if avalid[d] and bvalid[d]:
            ba = int((np.float64(av[d]) - amin) * kf / aspan)
            bb = int((np.float64(bv[d]) - bmin) * kf / bspan)
            if ba >= bins:
                ba = bins - 1
            if bb >= bins:
                bb = bins - 1
            hist[ba, bb] += 1

    inv_n = 1.0 / np.float64(n)
    px = np.zeros(bins, dtype=np.float64)
    py = np.zeros(bins, dtype=np.float64)
    for x in range(bins):
        for y in range(bins):
            px[x] += np.float64(hist[x, y]) * inv_n
            py[y] += np.float64(hist[x, y]) * inv_n

    # Summing each (x,y)/(y,x) pair before accumulating keeps the result
    # exactly symmetric under argument swap (addition is commutative).
    mi = 0.0
    for x in range(bins):
        for y in range(x, bins):
            t = 0.0
            cxy = hist[x, y]
            if cxy > 0:
                pxy = np.float64(cxy) * inv_n
                t = pxy * np.log(pxy / (px[x] * py[y]))
            if y > x:
                cyx = hist[y, x]
                if cyx > 0:
                    pyx = np.float64(cyx) * inv_n
                    t = t + pyx * np.log(pyx / (px[y] * py[x]))
            mi += t
    if mi < 0.0:
        mi = 0.0  # clamp -1e-12-scale round-off
    return mi


@njit(nogil=True, cache=True)
def combined_pair(av, avalid, bv, bvalid, bins, w_cos, w_mi):
    c = cosine_pair(av, bv)
    m = mi_pair(av, avalid, bv, bvalid, bins)
    return w_cos * c + w_mi * m / np.log(np.float64(bins))


@njit(nogil=True, cache=True)
def evaluate_plane(
    vol,
    nx,
    ny,
    nz,
    ci,
    cj,
    ck,
    off_i,
    off_j,
    off_k,
    off_flat,
    q_values,
    q_valid,
    metric,
    bins,
    w_cos,
    w_mi,
    out,
):
    """Score every candidate of one constant-z grid plane.

    Candidates are the cross product of voxel coordinates ``cj`` x ``ci``
    (y-major, x-fastest) at slice ``ck``; ``out`` receives ``len(cj) *
    len(ci)`` scores in that order. The candidate descriptor is gathered
    inline (value 0 / invalid outside the volume) and scored against the
    query descriptor with the selected pair kernel.
    """
    dim = off_i.size
    vals = np.empty(dim, dtype=np.float32)
    valid = np.empty(dim, dtype=np.bool_)
    idx = 0
    for jj in range(cj.size):
        j0 = cj[jj]
        for ii in range(ci.size):
            i0 = ci[ii]
            base = (ck * ny + j0) * nx + i0
            for d in range(dim):
                iv = i0 + off_i[d]
                jv = j0 + off_j[d]
                kv = ck + off_k[d]
                if 0 <= iv < nx and 0 <= jv < ny and 0 <= kv < nz:
                    vals[d] = vol[base + off_flat[d]]
                    valid[d] = True
                else:
                    vals[d] = 0.0
                    valid[d] = False
            if metric == METRIC_COSINE:
                s = cosine_pair(q_values, vals)
            elif metric == METRIC_EUCLIDEAN:
                s = euclidean_pair(q_values, vals)
            elif metric == METRIC_MUTUAL_INFO:
                s = mi_pair(q_values, q_valid, vals, valid, bins)
            else:
                s = combined_pair(q_values, q_valid, vals, valid, bins, w_cos, w_mi)
            out[idx] = s
            idx += 1
    return out


def warmup():
    """Force JIT compilation of all kernels (one-time, cached on disk)."""
    av = np.array([0.0, 1.0, 2.0, 3.0], dtype=np.float32)
    bv = np.array([3.0, 1.0, 0.0, 2.0], dtype=np.float32)
    mask = np.array([True, True, True, False])
    cosine_pair(av, bv)
    euclidean_pair(av, bv)
    mi_pair(av, mask, bv, mask, 4)
    combined_pair(av, mask, bv, mask, 4, 1.0, 1.0)
    vol = np.zeros(8, dtype=np.float32)
    zero = np.zeros(1, dtype=np.int64)
    out = np.empty(1, dtype=np.float64)
    evaluate_plane(
        vol, 2, 2, 2, zero, zero, 0, zero, zero, zero, zero,
        np.zeros(1, dtype=np.float32), np.ones(1, dtype=np.bool_),
        METRIC_COSINE, 4, 1.0, 1.0, out,
    )
