"""Cubic two-channel blocks (occupancy, polarity) cut from a polarized cloud."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evject.conversion import PolarizedPointCloud
from evject.errors import ValidationError

BLOCK_SIZES = (16, 32, 64, 128, 256)


@dataclass
class VoxelBlock:
    """Dense ``size``³ grids indexed ``[z, y, x]`` relative to ``origin`` (x0, y0, z0).

    ``polarity`` is 1 for POS and 0 for NEG or empty voxels.
    """

    origin: tuple
    size: int
    occupancy: np.ndarray
    polarity: np.ndarray

    def __post_init__(self):
        shape = (self.size,) * 3
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        self.polarity = np.asarray(self.polarity, dtype=bool) & self.occupancy
        if self.occupancy.shape != shape or self.polarity.shape != shape:
            raise ValidationError(f"block grids must have shape {shape}")
        self.origin = tuple(int(v) for v in self.origin)

    @property
    def n_occupied(self):
        return int(np.count_nonzero(self.occupancy))

    @property
    def n_pos(self):
        return int(np.count_nonzero(self.polarity))

    @property
    def n_neg(self):
        return self.n_occupied - self.n_pos

    def local_points(self):
        """Occupied voxels as (x, y, z) local coordinates in (z, y, x) order, with ±1 polarity."""
        z, y, x = np.nonzero(self.occupancy)
        pol = np.where(self.polarity[z, y, x], 1, -1).astype(np.int8)
        return np.stack([x, y, z], axis=1).astype(np.int64), pol

    def global_points(self):
        local, pol = self.local_points()
        return local + np.asarray(self.origin, dtype=np.int64), pol

    def as_array(self, dtype=np.float32):
        """(2, size, size, size) channels: occupancy, polarity."""
        return np.stack([self.occupancy, self.polarity]).astype(dtype)

    @classmethod
    def from_points(cls, origin, size, local_coords, polarity):
        occ = np.zeros((size,) * 3, dtype=bool)
        pol = np.zeros((size,) * 3, dtype=bool)
        local_coords = np.asarray(local_coords, dtype=np.int64).reshape(-1, 3)
        if len(local_coords):
            x, y, z = local_coords.T
            occ[z, y, x] = True
            pol[z, y, x] = np.asarray(polarity) > 0
        return cls(origin, size, occ, pol)


def partition(pc, block_size):
    """Split a cloud into non-empty blocks ordered by origin (z0, y0, x0)."""
    if block_size not in BLOCK_SIZES:
        raise ValidationError(f"block_size must be one of {BLOCK_SIZES}")
    if not len(pc):
        return []
    cell = pc.coords // block_size
    order = np.lexsort((cell[:, 0], cell[:, 1], cell[:, 2]))
    cell, coords, pol = cell[order], pc.coords[order], pc.polarity[order]
    change = np.flatnonzero(np.any(cell[1:] != cell[:-1], axis=1)) + 1
    bounds = np.concatenate([[0], change, [len(cell)]])
    blocks = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        origin = cell[a] * block_size
        blocks.append(VoxelBlock.from_points(tuple(origin), block_size, coords[a:b] - origin, pol[a:b]))
    return blocks


def assemble(blocks, dims, tsf):
    """Inverse of :func:`partition`."""
    seen = set()
    coords, pols = [], []
    for block in blocks:
        if block.origin in seen:
            raise ValidationError(f"overlapping block origin {block.origin}")
        seen.add(block.origin)
        c, p = block.global_points()
        coords.append(c)
        pols.append(p)
    if not coords:
        return PolarizedPointCloud(np.zeros((0, 3), np.int64), np.zeros(0, np.int8), dims, tsf)
    coords = np.concatenate(coords)
    pols = np.concatenate(pols)
    if len(coords) and np.any(coords.max(axis=0) >= np.asarray(dims)):
        raise ValidationError(f"block points fall outside dims {tuple(dims)}")
    # blocks with distinct origins on one grid never share voxels unless sizes differ
    return PolarizedPointCloud(coords, pols, dims, tsf)


def filter_training_blocks(blocks, min_occ=500, max_occ=20000):
    return [b for b in blocks if min_occ <= b.n_occupied <= max_occ]


def stack_blocks(blocks, dtype=np.float32):
    """(N, 2, s, s, s) array of block channels."""
    return np.stack([b.as_array(dtype) for b in blocks]) if blocks else np.zeros((0, 2, 1, 1, 1), dtype)
