import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_single_pc
from evject.conversion import (
    GeometryCloud,
    PolarizedPointCloud,
    events_to_single_pc,
    merge_polarity,
    single_pc_to_events,
    split_polarity,
    temporal_extent,
)
from evject.errors import ValidationError
from evject.events import POS, Event, EventStream


def stream_of(rows, width=8, height=8, duration=4.0):
    if not rows:
        return EventStream.empty(width, height, duration)
    x, y, t, p = zip(*rows)
    return EventStream(x, y, t, p, width, height, duration)


def as_dict(pc):
    return {tuple(int(v) for v in c): int(p) for c, p in zip(pc.coords, pc.polarity)}


def test_time_scaling():
    pc, st_ = events_to_single_pc(stream_of([(3, 4, 2.0, 1)]), 128)
    assert as_dict(pc) == {(3, 4, 256): 1}
    assert pc.dims == (8, 8, temporal_extent(4.0, 128)) == (8, 8, 513)
    assert st_.n_input_events == 1


def test_same_polarity_dedup():
    pc, st_ = events_to_single_pc(stream_of([(3, 4, 2.0, 1), (3, 4, 2.001, 1)]), 128)
    assert as_dict(pc) == {(3, 4, 256): 1}
    assert st_.n_same_polarity_removed == 1 and st_.n_diff_polarity_resolved == 0


def test_conflict_takes_neighbor_polarity():
    rows = [(0, 0, 0.0, 1), (0, 0, 0.0, -1), (0, 2, 0.0, -1)]
    pc, st_ = events_to_single_pc(stream_of(rows), 1)
    assert as_dict(pc) == {(0, 0, 0): -1, (0, 2, 0): -1}
    assert st_.n_diff_polarity_resolved == 1
    assert as_dict(pc) == brute_single_pc(rows, 1)


def test_lone_conflict_goes_pos():
    pc, _ = events_to_single_pc(stream_of([(1, 1, 0.0, -1), (1, 1, 0.0, 1)]), 1)
    assert as_dict(pc) == {(1, 1, 0): 1}


def test_tie_break_smallest_zyx():
    # (2,1,0) and (0,1,0) both at distance 1 from (1,1,0); (0,1,0) is smaller in (z,y,x)
    rows = [(1, 1, 0.0, 1), (1, 1, 0.0, -1), (2, 1, 0.0, 1), (0, 1, 0.0, -1)]
    pc, _ = events_to_single_pc(stream_of(rows), 1)
    assert as_dict(pc)[(1, 1, 0)] == -1


def test_neighbor_itself_in_conflict_counts_as_pos():
    rows = [(0, 0, 0.0, 1), (0, 0, 0.0, -1), (0, 3, 0.0, -1), (0, 1, 0.0, 1), (0, 1, 0.0, -1)]
    pc, _ = events_to_single_pc(stream_of(rows), 1)
    assert as_dict(pc) == brute_single_pc(rows, 1)
    assert as_dict(pc)[(0, 0, 0)] == 1


@pytest.mark.parametrize("seed", range(40))
def test_conversion_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 120))
    rows = [
        (int(rng.integers(0, 5)), int(rng.integers(0, 5)), float(rng.uniform(0, 2)), int(rng.choice([-1, 1])))
        for _ in range(n)
    ]
    pc, st_ = events_to_single_pc(stream_of(rows, 5, 5, 2.0), 2)
    ref = brute_single_pc(rows, 2)
    assert as_dict(pc) == ref
    assert len(pc) == len(ref)


def test_inverse_scaling():
    pc = PolarizedPointCloud([(3, 4, 256)], [1], (8, 8, 513), 128)
    s = single_pc_to_events(pc)
    assert s[0] == Event(3, 4, 2.0, POS)
    assert s.duration == 4.0


def test_empty_cloud_round_trip():
    pc, _ = events_to_single_pc(EventStream.empty(8, 8, 1.0), 16)
    assert len(pc) == 0
    assert len(single_pc_to_events(pc)) == 0


def test_round_trip_on_grid_is_exact():
    rng = np.random.default_rng(5)
    z = rng.choice(129, 50, replace=False)
    s = EventStream(rng.integers(0, 8, 50), rng.integers(0, 8, 50), z / 128, rng.choice([-1, 1], 50), 8, 8, 1.0)
    pc, _ = events_to_single_pc(s, 128)
    back = single_pc_to_events(pc)
    again, _ = events_to_single_pc(back, 128)
    assert again == pc


def test_split_and_merge():
    pc = PolarizedPointCloud([(0, 0, 0), (1, 0, 0)], [1, -1], (4, 4, 4))
    pos, neg = split_polarity(pc)
    assert pos.coords.tolist() == [[0, 0, 0]] and neg.coords.tolist() == [[1, 0, 0]]
    assert merge_polarity(pos, neg) == pc
    allpos = PolarizedPointCloud([(0, 0, 0), (1, 0, 0)], [1, 1], (4, 4, 4))
    assert len(split_polarity(allpos)[1]) == 0


def test_merge_conflict_rules():
    dims = (4, 4, 4)
    m = merge_polarity(GeometryCloud(np.array([[0, 0, 0]]), dims), GeometryCloud(np.array([[0, 0, 0], [2, 0, 0]]), dims))
    assert as_dict(m) == {(0, 0, 0): -1, (2, 0, 0): -1}
    m = merge_polarity(GeometryCloud(np.array([[0, 0, 0]]), dims), GeometryCloud(np.array([[0, 0, 0]]), dims))
    assert as_dict(m) == {(0, 0, 0): 1}
    with pytest.raises(ValidationError):
        merge_polarity(GeometryCloud(np.zeros((0, 3)), dims), GeometryCloud(np.zeros((0, 3)), (4, 4, 5)))


def test_cloud_validation():
    with pytest.raises(ValidationError):
        PolarizedPointCloud([(0, 0, 0), (0, 0, 0)], [1, 1], (2, 2, 2))
    with pytest.raises(ValidationError):
        PolarizedPointCloud([(2, 0, 0)], [1], (2, 2, 2))
    with pytest.raises(ValidationError):
        events_to_single_pc(EventStream.empty(2, 2, 1.0), 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3), st.sampled_from([-1, 1])),
                max_size=40))
def test_split_merge_property(rows):
    cells = {}
    for x, y, z, p in rows:
        cells[(x, y, z)] = p
    pc = PolarizedPointCloud(list(cells) or np.zeros((0, 3)), list(cells.values()), (4, 4, 4))
    assert merge_polarity(*split_polarity(pc)) == pc
