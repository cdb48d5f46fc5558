"""Event stream <-> polarized point cloud conversion.

A stream becomes a single point cloud by scaling timestamps onto a ``z``
axis (``z = t * tsf``), rounding to integers, collapsing same-polarity
duplicates and resolving co-located opposite polarities by nearest neighbor.
The two-cloud split/merge path mirrors the per-polarity coding baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evject.errors import ValidationError
from evject.events import EventStream
from evject.spatial import nearest_index, zyx_key, zyx_order


def round_half_up(values):
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5).astype(np.int64)


def temporal_extent(duration, tsf):
    """Number of z slices needed for timestamps in ``[0, duration]``."""
    return int(round_half_up(duration * tsf)) + 1


class PolarizedPointCloud:
    """Unique voxels ``coords`` (N, 3) in (x, y, z) order, each with polarity +1/-1.

    Points are kept in canonical (z, y, x) order so equal clouds compare equal.
    """

    __slots__ = ("coords", "polarity", "dims", "tsf")

    def __init__(self, coords, polarity, dims, tsf=1, check=True):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        polarity = np.asarray(polarity, dtype=np.int8).reshape(-1)
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValidationError(f"invalid cloud dims {dims}")
        if int(tsf) < 1:
            raise ValidationError("tsf must be a positive integer")
        if len(coords) != len(polarity):
            raise ValidationError("coords and polarity lengths differ")
        if check and len(coords):
            if coords.min() < 0 or np.any(coords.max(axis=0) >= np.asarray(dims)):
                raise ValidationError(f"point outside cloud dims {dims}")
            if not np.all((polarity == 1) | (polarity == -1)):
                raise ValidationError("polarity must be +1 or -1")
        order = zyx_order(coords) if len(coords) else np.zeros(0, dtype=np.int64)
        coords, polarity = coords[order], polarity[order]
        if check and len(coords) > 1:
            keys = zyx_key(coords, dims)
            if np.any(keys[1:] == keys[:-1]):
                raise ValidationError("duplicate point coordinates")
        self.coords = coords
        self.polarity = polarity
        self.dims = dims
        self.tsf = int(tsf)

    def __len__(self):
        return len(self.coords)

    def __eq__(self, other):
        if not isinstance(other, PolarizedPointCloud):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.tsf == other.tsf
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.polarity, other.polarity)
        )

    def __repr__(self):
        return f"PolarizedPointCloud(n={len(self)}, dims={self.dims}, tsf={self.tsf})"

    @property
    def n_pos(self):
        return int(np.count_nonzero(self.polarity == 1))

    @property
    def n_neg(self):
        return int(np.count_nonzero(self.polarity == -1))


@dataclass
class GeometryCloud:
    """A geometry-only voxel set (one polarity of a split cloud)."""

    coords: np.ndarray
    dims: tuple
    tsf: int = 1

    def __len__(self):
        return len(self.coords)


@dataclass(frozen=True)
class ConversionStats:
    n_input_events: int
    n_same_polarity_removed: int
    n_diff_polarity_resolved: int


def _resolve(coords, polarity, dims):
    """Collapse duplicate (coordinate, polarity) pairs and settle polarity conflicts.

    Returns the unique coordinates, their polarity, and the counts of removed
    same-polarity duplicates and resolved conflicts.
    """
    n = len(coords)
    if n == 0:
        return coords.reshape(0, 3), polarity.reshape(0), 0, 0
    keys = zyx_key(coords, dims)
    pair = keys * 2 + (polarity > 0)
    pair_u, first = np.unique(pair, return_index=True)
    n_same = n - len(pair_u)
    pc = coords[first]
    pp = polarity[first]
    ukey = pair_u // 2
    # consecutive entries with equal key are the two polarities of one voxel
    coords_u, start, counts = np.unique(ukey, return_index=True, return_counts=True)
    del coords_u
    cell = pc[start]
    pol = pp[start].copy()
    has_pos = np.zeros(len(start), dtype=bool)
    has_neg = np.zeros(len(start), dtype=bool)
    which = np.repeat(np.arange(len(start)), counts)
    has_pos[which[pp > 0]] = True
    has_neg[which[pp < 0]] = True
    conflict = np.flatnonzero(counts > 1)
    if len(conflict):
        nn = nearest_index(cell[conflict], cell, exclude_colocated=True)
        for ci, j in zip(conflict, nn):
            if j < 0 or has_pos[j]:
                # no other point, or the neighbor carries POS (alone or tied): POS wins
                pol[ci] = 1
            else:
                pol[ci] = -1
    return cell, pol, n_same, len(conflict)


def events_to_single_pc(stream, tsf):
    """Voxelize a stream into one polarized point cloud."""
    tsf = int(tsf)
    if tsf < 1:
        raise ValidationError("tsf must be a positive integer")
    dims = (stream.width, stream.height, temporal_extent(stream.duration, tsf))
    z = round_half_up(stream.t * tsf)
    coords = np.stack([stream.x, stream.y, z], axis=1) if len(stream) else np.zeros((0, 3), np.int64)
    cell, pol, n_same, n_conf = _resolve(coords, stream.p.astype(np.int8), dims)
    pc = PolarizedPointCloud(cell, pol, dims, tsf, check=False)
    stats = ConversionStats(len(stream), n_same, n_conf)
    return pc, stats


def single_pc_to_events(pc, label=None):
    """Rescale z back to time (``t = z / tsf``); events ordered by (t, y, x)."""
    c = pc.coords
    duration = (pc.dims[2] - 1) / pc.tsf
    t = c[:, 2] / pc.tsf
    return EventStream(c[:, 0], c[:, 1], np.minimum(t, duration), pc.polarity, pc.dims[0], pc.dims[1], duration, label)


def voxelize_stream(stream, tsf):
    """The stream as it survives conversion: on the 1/tsf grid, deduplicated."""
    pc, _ = events_to_single_pc(stream, tsf)
    return single_pc_to_events(pc, label=stream.label)


def split_polarity(pc):
    pos = pc.polarity > 0
    return (
        GeometryCloud(pc.coords[pos].copy(), pc.dims, pc.tsf),
        GeometryCloud(pc.coords[~pos].copy(), pc.dims, pc.tsf),
    )


def merge_polarity(pos_cloud, neg_cloud):
    """Label and unite two geometry clouds, resolving shared voxels by nearest neighbor."""
    if tuple(pos_cloud.dims) != tuple(neg_cloud.dims) or pos_cloud.tsf != neg_cloud.tsf:
        raise ValidationError("clouds differ in dims or tsf")
    coords = np.concatenate(
        [np.asarray(pos_cloud.coords, np.int64).reshape(-1, 3), np.asarray(neg_cloud.coords, np.int64).reshape(-1, 3)]
    )
    pol = np.concatenate(
        [np.ones(len(pos_cloud.coords), np.int8), -np.ones(len(neg_cloud.coords), np.int8)]
    )
    dims = tuple(pos_cloud.dims)
    if len(coords) and (coords.min() < 0 or np.any(coords.max(axis=0) >= np.asarray(dims))):
        raise ValidationError(f"point outside cloud dims {dims}")
    cell, p, _, _ = _resolve(coords, pol, dims)
    return PolarizedPointCloud(cell, p, dims, pos_cloud.tsf)
