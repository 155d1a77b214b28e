"""Compiled inner loops (numba).

Sequential acceptance covers both random sequential packing and the capped
birth-growth rule: point ``i`` (in arrival order) is accepted iff for every
previously accepted ``j``

    dist(i, j) > rho_i + min(rho_j + speed * (t_i - t_j), cutoff)

(``>=`` when ``closed_overlap`` is false, i.e. balls merely touching are
allowed, as in packing).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _blocked(dist2, thr, closed_overlap):
    if closed_overlap:
        return dist2 <= thr * thr
    return dist2 < thr * thr


@njit(cache=True)
def accept_direct(pos, order, rho, t, speed, cutoff, box, closed_overlap):
    """O(n * accepted) sequential acceptance. ``box > 0`` means torus of side box."""
    n, d = pos.shape
    accepted = np.zeros(n, np.bool_)
    acc = np.empty(n, np.int64)
    na = 0
    for a in range(n):
        i = order[a]
        ok = True
        for b in range(na):
            j = acc[b]
            dist2 = 0.0
            for c in range(d):
                dx = pos[i, c] - pos[j, c]
                if box > 0.0:
                    dx -= box * np.round(dx / box)
                dist2 += dx * dx
            reach = rho[j] + speed * (t[i] - t[j])
            if reach > cutoff:
                reach = cutoff
            if _blocked(dist2, rho[i] + reach, closed_overlap):
                ok = False
                break
        if ok:
            accepted[i] = True
            acc[na] = i
            na += 1
    return accepted


@njit(cache=True)
def accept_grid(pos, order, rho, t, speed, cutoff, L, nc, offsets, closed_overlap):
    """Torus sequential acceptance with a cell grid of ``nc`` cells per side.

    Requires ``L / nc`` at least the largest interaction distance and
    ``nc >= 3`` so the 3^d neighbor cells are distinct. Accepted points are
    kept in per-cell linked lists.
    """
    n, d = pos.shape
    side = L / nc
    ncell = nc**d
    head = np.full(ncell, -1, np.int64)
    nxt = np.full(n, -1, np.int64)
    cell = np.empty((n, d), np.int64)
    for i in range(n):
        for c in range(d):
            k = int(np.floor((pos[i, c] + 0.5 * L) / side))
            if k >= nc:
                k = nc - 1
            if k < 0:
                k = 0
            cell[i, c] = k
    accepted = np.zeros(n, np.bool_)
    n_off = offsets.shape[0]
    for a in range(n):
        i = order[a]
        ok = True
        for o in range(n_off):
            flat = 0
            for c in range(d):
                k = (cell[i, c] + offsets[o, c]) % nc
                flat = flat * nc + k
            j = head[flat]
            while j >= 0:
                dist2 = 0.0
                for c in range(d):
                    dx = pos[i, c] - pos[j, c]
                    dx -= L * np.round(dx / L)
                    dist2 += dx * dx
                reach = rho[j] + speed * (t[i] - t[j])
                if reach > cutoff:
                    reach = cutoff
                if _blocked(dist2, rho[i] + reach, closed_overlap):
                    ok = False
                    break
                j = nxt[j]
            if not ok:
                break
        if ok:
            accepted[i] = True
            flat = 0
            for c in range(d):
                flat = flat * nc + cell[i, c]
            nxt[i] = head[flat]
            head[flat] = i
    return accepted


@njit(cache=True)
def rasterize_coverage(pos, radius, L, ng):
    """Flag torus grid cells (``ng`` per side, centers at -L/2+(i+1/2)h) whose
    center lies strictly within ``radius[u]`` of some point ``u``."""
    n, d = pos.shape
    h = L / ng
    covered = np.zeros(ng**d, np.bool_)
    idx = np.zeros(d, np.int64)
    lo = np.zeros(d, np.int64)
    hi = np.zeros(d, np.int64)
    for u in range(n):
        r = radius[u]
        if r <= 0.0:
            continue
        for c in range(d):
            g = (pos[u, c] + 0.5 * L) / h - 0.5
            lo[c] = int(np.floor(g - r / h)) - 1
            hi[c] = int(np.ceil(g + r / h)) + 1
            if hi[c] - lo[c] + 1 > ng:
                lo[c] = 0
                hi[c] = ng - 1
        for c in range(d):
            idx[c] = lo[c]
        while True:
            dist2 = 0.0
            flat = 0
            for c in range(d):
                k = idx[c] % ng
                center = -0.5 * L + (k + 0.5) * h
                dx = center - pos[u, c]
                dx -= L * np.round(dx / L)
                dist2 += dx * dx
                flat = flat * ng + k
            if dist2 < r * r:
                covered[flat] = True
            # odometer increment
            c = d - 1
            while c >= 0:
                idx[c] += 1
                if idx[c] <= hi[c]:
                    break
                idx[c] = lo[c]
                c -= 1
            if c < 0:
                break
    return covered
