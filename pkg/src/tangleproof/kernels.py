"""Hot loops: the step kernel and the bulk reachability passes.

Every function here is written in the numba-compatible subset of Python so
that the same body serves as the un-jitted fallback.
"""

import numpy as np

from ._jit import jit

OK = 0
GROW = 1
INFEASIBLE = 2

NEVER = np.iinfo(np.int64).max // 4


@jit
def _category(cum, u):
    j = 0
    last = cum.shape[0] - 1
    while j < last and u >= cum[j]:
        j += 1
    return j


@jit
def _member(row, length, v):
    idx = np.searchsorted(row[:length], v)
    return idx < length and row[idx] == v


@jit
def step_kernel(n0, n1, U,
                cum_theta, h_vals, cum_eps, eps_vals, cum_k, k_vals,
                ov_mask, ov_theta, ov_eps, ov_k, ov_par, strict,
                theta, eps, npar, par, fsel,
                tip_arr, tip_pos, hist, hist_len, counts, out):
    """Advance arrivals ``n0 .. n1-1``.

    ``U`` holds the uniforms of those steps (row ``n - n0``). ``counts``
    carries (tip count, free count) across calls; ``hist`` is a ring of
    sorted tip rows indexed by state mod ring size. ``out[n]`` receives the
    pre-arrival (L, F, W) and the step's delta and completion count.

    Returns (status, step, parent).
    """
    R = hist.shape[0]
    cap = hist.shape[1]
    M = h_vals.shape[0]
    n_tips = counts[0]
    F = counts[1]
    for n in range(n0, n1):
        if n_tips + M + 1 > cap:
            counts[0] = n_tips
            counts[1] = F
            return GROW, n, -1
        out[n, 0] = n_tips
        out[n, 1] = F
        out[n, 2] = n_tips - F

        if ov_mask[n]:
            th = ov_theta[n]
            e = ov_eps[n]
            k = ov_k[n]
            r = (n - 1 - e) % R
            for j in range(k):
                p = ov_par[n, j]
                if p < 0 or p >= n:
                    counts[0] = n_tips
                    counts[1] = F
                    return INFEASIBLE, n, p
                if strict and not _member(hist[r], hist_len[r], p):
                    counts[0] = n_tips
                    counts[1] = F
                    return INFEASIBLE, n, p
                par[n, j] = p
        else:
            u = U[n - n0]
            th = h_vals[_category(cum_theta, u[0])]
            e = eps_vals[_category(cum_eps, u[1])]
            k = k_vals[_category(cum_k, u[2])]
            r = (n - 1 - e) % R
            lb = hist_len[r]
            for j in range(k):
                idx = np.int64(u[3 + j] * lb)
                if idx >= lb:
                    idx = lb - 1
                par[n, j] = hist[r, idx]
        theta[n] = th
        eps[n] = e
        npar[n] = k

        # delta: distinct parents that are free tips right now
        d = 0
        for j in range(k):
            p = par[n, j]
            dup = False
            for q in range(j):
                if par[n, q] == p:
                    dup = True
                    break
            if dup:
                continue
            if fsel[p] == NEVER:
                fsel[p] = n
                if tip_pos[p] >= 0:
                    d += 1
        F -= d

        c = 0
        for m in range(M):
            hm = h_vals[m]
            v = n - hm
            if v >= 1 and theta[v] == hm:
                c += 1
                tip_arr[n_tips] = v
                tip_pos[v] = n_tips
                n_tips += 1
                if fsel[v] == NEVER:
                    F += 1
                for j in range(npar[v]):
                    p = par[v, j]
                    pos = tip_pos[p]
                    if pos < 0:
                        continue
                    last = tip_arr[n_tips - 1]
                    tip_arr[pos] = last
                    tip_pos[last] = pos
                    tip_pos[p] = -1
                    n_tips -= 1
                    if fsel[p] == NEVER or fsel[p] > n:
                        F -= 1
        out[n, 3] = d
        out[n, 4] = c

        w = n % R
        hist[w, :n_tips] = np.sort(tip_arr[:n_tips])
        hist_len[w] = n_tips
    counts[0] = n_tips
    counts[1] = F
    return OK, n1, -1


@jit
def reached_by(parents, npar, upto, markers):
    """Bitmask of ``markers`` that reach each vertex ``0..upto``.

    Marks propagate from child to parents in decreasing id order, which is a
    valid topological order because parents always have smaller ids. Bit
    ``b`` of word ``b // 64`` corresponds to ``markers[b]``.
    """
    words = (markers.shape[0] + 63) // 64
    masks = np.zeros((upto + 1, max(words, 1)), dtype=np.uint64)
    for b in range(markers.shape[0]):
        masks[markers[b], b // 64] |= np.uint64(1) << np.uint64(b % 64)
    for v in range(upto, 0, -1):
        for j in range(npar[v]):
            p = parents[v, j]
            for w in range(words):
                masks[p, w] |= masks[v, w]
    return masks


@jit
def full_mask(count):
    words = (count + 63) // 64
    out = np.zeros(max(words, 1), dtype=np.uint64)
    for b in range(count):
        out[b // 64] |= np.uint64(1) << np.uint64(b % 64)
    return out


@jit
def root_distance(parents, npar, upto):
    """Directed distance from every vertex to the genesis vertex 0."""
    dist = np.zeros(upto + 1, dtype=np.int64)
    for v in range(1, upto + 1):
        best = NEVER
        for j in range(npar[v]):
            dp = dist[parents[v, j]]
            if dp < best:
                best = dp
        dist[v] = best + 1
    return dist
