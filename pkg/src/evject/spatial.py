"""Exact nearest-neighbor queries over integer voxel coordinates.

Coordinates are (N, 3) integer arrays in (x, y, z) column order. Distances
are squared Euclidean and recomputed in integer arithmetic, so results are
exact. Ties are broken by the lexicographically smallest (z, y, x).
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def zyx_key(coords, dims=None):
    """Scalar keys that sort like (z, y, x) tuples."""
    coords = np.asarray(coords, dtype=np.int64)
    if dims is None:
        span = coords.max(axis=0) + 1 if len(coords) else np.ones(3, dtype=np.int64)
    else:
        span = np.asarray(dims, dtype=np.int64)
    return (coords[:, 2] * span[1] + coords[:, 1]) * span[0] + coords[:, 0]


def zyx_order(coords):
    coords = np.asarray(coords)
    return np.lexsort((coords[:, 0], coords[:, 1], coords[:, 2]))


def squared_distances(a, b):
    d = np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64)
    return np.einsum("ij,ij->i", d, d)


def nearest_squared_distance(queries, candidates):
    """Squared distance from each query to its nearest candidate (no exclusion)."""
    queries = np.asarray(queries, dtype=np.int64)
    candidates = np.asarray(candidates, dtype=np.int64)
    if not len(queries):
        return np.zeros(0, dtype=np.int64)
    if not len(candidates):
        raise ValueError("no candidates")
    _, idx = cKDTree(candidates).query(queries, k=1)
    return squared_distances(queries, candidates[idx])


def nearest_index(queries, candidates, exclude_colocated=False, k_probe=8):
    """Index of the nearest candidate for every query, or -1 if none qualifies.

    With ``exclude_colocated`` a candidate at the query's own coordinates is
    never returned. Among equidistant candidates the smallest (z, y, x) wins.
    The ``k_probe`` nearest are resolved exactly in bulk; a query whose probe
    window may hide further ties falls back to a radius search.
    """
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    candidates = np.asarray(candidates, dtype=np.int64).reshape(-1, 3)
    result = np.full(len(queries), -1, dtype=np.int64)
    if not len(queries) or not len(candidates):
        return result
    tree = cKDTree(candidates)
    k = min(len(candidates), k_probe)
    _, idx = tree.query(queries, k=k)
    idx = np.asarray(idx).reshape(len(queries), k)
    diff = candidates[idx] - queries[:, None, :]
    d2 = np.einsum("qkc,qkc->qk", diff, diff)
    if exclude_colocated:
        d2 = np.where(d2 == 0, np.iinfo(np.int64).max, d2)
    best_d2 = d2.min(axis=1)
    valid = best_d2 < np.iinfo(np.int64).max
    c = candidates[idx]
    # lexicographic (d2, z, y, x) minimum over the probe window
    order = np.lexsort((c[..., 0], c[..., 1], c[..., 2], d2), axis=-1)
    pick = np.take_along_axis(idx, order[:, :1], axis=1)[:, 0]
    result[valid] = pick[valid]
    # the window is complete only if something beyond the tie distance was seen
    seen = np.where(d2 == np.iinfo(np.int64).max, -1, d2).max(axis=1)
    ambiguous = valid & (seen <= best_d2) & (k < len(candidates))
    ambiguous |= ~valid & (k < len(candidates))
    for qi in np.flatnonzero(ambiguous):
        result[qi] = _nearest_by_radius(tree, candidates, queries[qi], exclude_colocated)
    return result


def _nearest_by_radius(tree, candidates, q, exclude_colocated):
    radius = 1.0
    while True:
        near = np.asarray(tree.query_ball_point(q, radius), dtype=np.int64)
        if len(near):
            d2 = squared_distances(np.broadcast_to(q, (len(near), 3)), candidates[near])
            keep = d2 > 0 if exclude_colocated else np.ones(len(near), dtype=bool)
            if keep.any():
                near, d2 = near[keep], d2[keep]
                pool = near[d2 == d2.min()]
                # every candidate at this distance lies within the searched radius
                if np.sqrt(d2.min()) <= radius:
                    return int(pool[zyx_order(candidates[pool])[0]])
        if len(near) >= len(candidates) or radius > 1e7:
            return -1
        radius *= 2.0
