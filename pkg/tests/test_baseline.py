import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evject.baseline import lossless_decode, lossless_encode
from evject.conversion import PolarizedPointCloud, events_to_single_pc
from evject.errors import CorruptionError, FormatError
from evject.events import ShapeClass, SyntheticConfig, generate_synthetic_sequence


def random_cloud(rng, dims, n, tsf=1):
    flat = rng.choice(int(np.prod(dims)), n, replace=False)
    c = np.stack([flat % dims[0], (flat // dims[0]) % dims[1], flat // (dims[0] * dims[1])], 1)
    return PolarizedPointCloud(c, rng.choice([-1, 1], n), dims, tsf)


def test_round_trip_random_clouds():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        dims = tuple(int(v) for v in rng.integers(1, 40, 3))
        n = int(rng.integers(0, min(60, int(np.prod(dims))) + 1))
        pc = random_cloud(rng, dims, n, int(rng.integers(1, 300)))
        back = lossless_decode(lossless_encode(pc))
        assert back == pc and back.dims == pc.dims and back.tsf == pc.tsf


def test_empty_cloud_is_header_only():
    pc = PolarizedPointCloud(np.zeros((0, 3)), [], (4, 5, 6), 7)
    data = lossless_encode(pc)
    assert len(data) == 4 + 1 + 12 + 4 + 8 + 4
    assert lossless_decode(data) == pc


@pytest.mark.parametrize("shape", list(ShapeClass))
def test_beats_raw_on_clustered_data(shape):
    s = generate_synthetic_sequence(SyntheticConfig(width=64, height=64, duration=0.5, shape_class=shape, seed=3))
    pc, _ = events_to_single_pc(s, 128)
    assert len(pc) >= 100
    raw_bits = len(pc) * (3 * 32 + 1)
    assert 8 * len(lossless_encode(pc)) < raw_bits


def test_deterministic_bytes():
    pc = random_cloud(np.random.default_rng(1), (20, 20, 20), 300)
    assert lossless_encode(pc) == lossless_encode(pc)


def test_truncation_and_corruption():
    pc = random_cloud(np.random.default_rng(2), (16, 16, 16), 200)
    data = lossless_encode(pc)
    for cut in (1, 2, 5, len(data) // 2):
        with pytest.raises(FormatError):
            lossless_decode(data[:-cut])
    bad = bytearray(data)
    bad[40] ^= 1
    with pytest.raises(CorruptionError):
        lossless_decode(bytes(bad))
    with pytest.raises(FormatError):
        lossless_decode(b"XXXX" + data[4:])


@settings(max_examples=60, deadline=None)
@given(st.sets(st.tuples(st.integers(0, 7), st.integers(0, 7), st.integers(0, 7)), max_size=80), st.randoms())
def test_round_trip_property(cells, r):
    cells = sorted(cells)
    pol = [r.choice([-1, 1]) for _ in cells]
    pc = PolarizedPointCloud(cells or np.zeros((0, 3)), pol, (8, 8, 8), 3)
    assert lossless_decode(lossless_encode(pc)) == pc
