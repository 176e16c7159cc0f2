"""Brute-force reference implementations shared by the unit and acceptance tests."""

import numpy as np

from vitarc.posenc import RpeVariant


def union_find_partition(arr, connectivity, background=0):
    """Set of frozensets of foreground cells, grouped by a union-find pass."""
    h, w = arr.shape
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    cells = [(y, x) for y in range(h) for x in range(w) if arr[y, x] != background]
    for c in cells:
        parent[c] = c
    offs = [(0, 1), (1, 0)] + ([(1, 1), (1, -1)] if connectivity == 8 else [])
    for y, x in cells:
        for dy, dx in offs:
            n = (y + dy, x + dx)
            if n in parent:
                parent[find(n)] = find((y, x))
    groups = {}
    for c in cells:
        groups.setdefault(find(c), set()).add(c)
    return {frozenset(g) for g in groups.values()}


def partition_of(labels):
    groups = {}
    for (y, x), k in np.ndenumerate(labels):
        if k:
            groups.setdefault(k, set()).add((y, x))
    return {frozenset(g) for g in groups.values()}


def reference_bias(variant, cq, ck, iq, ik, groups):
    """Entry-by-entry bias, written directly from the direction rules."""
    n_heads = len(next(iter(groups.values())))
    out = np.zeros((n_heads, len(cq), len(ck)))
    for h in range(n_heads):
        s = {k: float(v[h]) for k, v in groups.items()}
        for i, ((qx, qy), qi) in enumerate(zip(cq, iq)):
            for j, ((kx, ky), ki) in enumerate(zip(ck, ik)):
                dx, dy = kx - qx, ky - qy
                dist = float(abs(dx) + abs(dy))
                if variant is RpeVariant.ALIBI_1D:
                    out[h, i, j] = -(s["alibi"] * float(abs(qi - ki)))
                elif variant is RpeVariant.TWO_DIR:
                    out[h, i, j] = -((s["before"] if ki <= qi else s["after"]) * dist)
                elif variant is RpeVariant.FOUR_DIAG:
                    if dx != 0 and dy != 0:
                        key = ("t" if dy < 0 else "d") + ("l" if dx < 0 else "r")
                    else:
                        precedes = ky < qy or (ky == qy and kx < qx)
                        key = "tl" if precedes else "dr"
                    out[h, i, j] = -(s[key] * dist)
                else:
                    sx = s["left"] if dx < 0 else s["right"]
                    sy = s["up"] if dy < 0 else s["down"]
                    out[h, i, j] = -(sx * float(abs(dx)) + sy * float(abs(dy)))
    return out
