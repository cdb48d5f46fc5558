import numpy as np
import pytest

from evject.blocking import VoxelBlock, assemble, filter_training_blocks, partition, stack_blocks
from evject.conversion import PolarizedPointCloud
from evject.errors import ValidationError


def random_cloud(rng, dims, n):
    flat = rng.choice(int(np.prod(dims)), n, replace=False)
    x = flat % dims[0]
    y = (flat // dims[0]) % dims[1]
    z = flat // (dims[0] * dims[1])
    return PolarizedPointCloud(np.stack([x, y, z], 1), rng.choice([-1, 1], n), dims, 4)


def test_origin_and_local_coords():
    pc = PolarizedPointCloud([(300, 10, 5)], [1], (400, 20, 10))
    (b,) = partition(pc, 256)
    assert b.origin == (256, 0, 0)
    local, pol = b.local_points()
    assert local.tolist() == [[44, 10, 5]] and pol.tolist() == [1]


def test_single_block():
    rng = np.random.default_rng(0)
    assert len(partition(random_cloud(rng, (16, 16, 16), 50), 16)) == 1


def test_blocks_ordered_by_zyx_origin():
    pc = PolarizedPointCloud([(20, 0, 0), (0, 20, 0), (0, 0, 20), (0, 0, 0)], [1, 1, -1, 1], (40, 40, 40))
    assert [b.origin for b in partition(pc, 16)] == [(0, 0, 0), (16, 0, 0), (0, 16, 0), (0, 0, 16)]


@pytest.mark.parametrize("seed", range(100))
def test_round_trip(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(v) for v in rng.integers(1, 50, 3))
    n = int(rng.integers(0, min(300, int(np.prod(dims))) + 1))
    pc = random_cloud(rng, dims, n)
    assert assemble(partition(pc, 16), dims, 4) == pc


def test_assemble_errors():
    assert len(assemble([], (4, 4, 4), 1)) == 0
    b = VoxelBlock.from_points((0, 0, 0), 16, [(10, 0, 0)], [1])
    with pytest.raises(ValidationError):
        assemble([b], (8, 8, 8), 1)
    with pytest.raises(ValidationError):
        assemble([b, b], (16, 16, 16), 1)


def test_invalid_block_size():
    with pytest.raises(ValidationError):
        partition(PolarizedPointCloud([(0, 0, 0)], [1], (2, 2, 2)), 10)


def block_with(n):
    occ = np.zeros(64 ** 3, dtype=bool)
    occ[:n] = True
    return VoxelBlock((0, 0, 0), 64, occ.reshape((64,) * 3), np.zeros((64,) * 3, bool))


def test_filter_bounds():
    blocks = [block_with(499), block_with(500), block_with(20000), block_with(20001)]
    kept = filter_training_blocks(blocks)
    assert [b.n_occupied for b in kept] == [500, 20000]


def test_channels():
    b = VoxelBlock.from_points((0, 0, 0), 16, [(1, 2, 3), (4, 5, 6)], [1, -1])
    a = b.as_array()
    assert a.shape == (2, 16, 16, 16)
    assert a[0, 3, 2, 1] == 1 and a[1, 3, 2, 1] == 1
    assert a[0, 6, 5, 4] == 1 and a[1, 6, 5, 4] == 0
    assert a.sum() == 3
    assert b.n_pos == 1 and b.n_neg == 1
    assert stack_blocks([b, b]).shape == (2, 2, 16, 16, 16)
