import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from framefold.cube import (
    ChannelGroup, ParameterError, ShapeError, VideoSequence, extract_groups,
    merge_groups, plan_groups, stack, unstack,
)


def enumerate_windows(total, s, o):
    """Brute-force window enumeration: slide by s - o until the cube is covered."""
    windows = [(0, s)]
    while windows[-1][1] < total:
        start = windows[-1][0] + (s - o)
        windows.append((start, start + s))
    return windows


def random_seq(rng, n, h=5, w=4):
    return VideoSequence([rng.random((h, w, 3)) for _ in range(n)])


def test_stack_shapes_and_order():
    rng = np.random.default_rng(0)
    cube = stack(random_seq(rng, 7, 64, 64))
    assert cube.channels.shape == (21, 64, 64)

    one = random_seq(rng, 1, 6, 6)
    assert np.array_equal(stack(one).channels, one.frames[0].transpose(2, 0, 1))

    seq = VideoSequence([np.zeros((4, 4, 3)), np.ones((4, 4, 3))])
    ch = stack(seq).channels
    assert np.all(ch[0:3] == 0.0) and np.all(ch[3:6] == 1.0)


def test_stack_rejects_mismatched_frames():
    with pytest.raises(ShapeError):
        VideoSequence([np.zeros((4, 4, 3)), np.zeros((4, 5, 3))])


@pytest.mark.parametrize("total,expected", [
    (21, [(0, 9), (6, 15), (12, 21)]),
    (9, [(0, 9)]),
    (27, [(0, 9), (6, 15), (12, 21), (18, 27)]),
    (24, [(0, 9), (6, 15), (12, 21), (18, 27)]),
])
def test_plan_examples(total, expected):
    plan = plan_groups(total, 9, 3)
    assert list(plan.group_ranges) == expected == enumerate_windows(total, 9, 3)
    assert plan.group_count == len(expected)
    assert plan.pad_channels == expected[-1][1] - total


def test_plan_encode_counts_21():
    plan = plan_groups(21, 9, 3)
    twice = set(range(6, 9)) | set(range(12, 15))
    assert plan.encode_counts == tuple(2 if i in twice else 1 for i in range(21))


def test_plan_errors():
    with pytest.raises(ParameterError):
        plan_groups(21, 9, 9)
    with pytest.raises(ParameterError):
        plan_groups(21, 6, 9)
    with pytest.raises(ShapeError):
        plan_groups(2, 9, 3)


def test_extract_examples():
    rng = np.random.default_rng(1)
    cube = stack(random_seq(rng, 7))
    plan = plan_groups(21, 9, 3)
    groups = extract_groups(cube, plan)
    assert len(groups) == 3 and all(g.data.shape == (9, 5, 4) for g in groups)
    assert np.array_equal(groups[1].data[0:3], cube.channels[6:9])
    assert np.array_equal(groups[0].data[6:9], cube.channels[6:9])
    assert groups[1].frame_indices == (2, 3, 4)

    single = extract_groups(stack(random_seq(rng, 3)), plan_groups(9, 9, 3))
    assert len(single) == 1

    padded_cube = stack(random_seq(rng, 8))
    pplan = plan_groups(24, 9, 3)
    last = extract_groups(padded_cube, pplan)[-1]
    assert np.array_equal(last.data[-3:], padded_cube.channels[-3:])
    assert last.frame_indices == (6, 7)

    with pytest.raises(ShapeError):
        extract_groups(padded_cube, plan)


def test_merge_examples():
    plan = plan_groups(21, 9, 3)
    g0 = np.full((9, 2, 2), 0.7)
    g1 = np.full((9, 2, 2), 0.7)
    g2 = np.full((9, 2, 2), 0.7)
    g0[6:9] = 0.4
    g1[0:3] = 0.6
    merged = merge_groups([g0, g1, g2], plan).channels
    assert merged[6:9] == pytest.approx(0.5)
    assert np.all(merged[0:6] == 0.7)
    with pytest.raises(ShapeError):
        merge_groups([g0, g1], plan)


def test_merge_at_other_resolution():
    plan = plan_groups(21, 9, 3)
    groups = [np.full((9, 8, 8), float(k)) for k in range(3)]
    cube = merge_groups(groups, plan)
    assert cube.channels.shape == (21, 8, 8)
    assert cube.channels[7, 0, 0] == 0.5


def test_unstack():
    rng = np.random.default_rng(2)
    seq = random_seq(rng, 7)
    back = unstack(stack(seq))
    assert len(back) == 7
    assert all(np.array_equal(a, b) for a, b in zip(seq.frames, back.frames))
    one = unstack(np.ones((3, 2, 2)))
    assert len(one) == 1
    with pytest.raises(ShapeError):
        unstack(np.ones((4, 2, 2)))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 30), s=st.sampled_from([3, 6, 9, 12, 18]), o_frac=st.integers(0, 5),
       dtype=st.sampled_from([np.float32, np.float64]), seed=st.integers(0, 2**31))
def test_round_trip_property(n, s, o_frac, dtype, seed):
    o = min(3 * o_frac, s - 3)
    rng = np.random.default_rng(seed)
    seq = VideoSequence([rng.random((3, 4, 3)).astype(dtype) for _ in range(n)])
    cube = stack(seq)
    plan = plan_groups(cube.channels.shape[0], s, o)
    back = unstack(merge_groups(extract_groups(cube, plan), plan))
    assert all(np.array_equal(a, b) for a, b in zip(seq.frames, back.frames))


@settings(max_examples=50, deadline=None)
@given(total=st.integers(3, 120), s=st.integers(2, 20), o=st.integers(0, 19),
       v=st.floats(-10, 10, allow_nan=False))
def test_coverage_and_averaging_linearity(total, s, o, v):
    if o >= s:
        return
    plan = plan_groups(total, s, o)
    assert plan.group_ranges == tuple(enumerate_windows(total, s, o))
    for (a0, a1), (b0, _) in zip(plan.group_ranges, plan.group_ranges[1:]):
        assert a1 - b0 == o
    assert all(c >= 1 for c in plan.encode_counts)
    groups = [ChannelGroup(np.full((s, 1, 1), v), k, ()) for k in range(plan.group_count)]
    assert np.all(merge_groups(groups, plan).channels == v)
