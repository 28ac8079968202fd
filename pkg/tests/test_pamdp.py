import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tart.pamdp import (ActionError, ActionSpec, HybridAction, Transition, extract_segments,
                        flatten_action, load_trajectory, save_trajectory, validate_action)


@pytest.fixture
def spec2():
    return ActionSpec.uniform(2, [1, 1])


def _traj(n, events=(), dones=()):
    out = []
    for t in range(n):
        a = HybridAction.make(1 if t in events else 0, [0.0])
        out.append(Transition(np.array([float(t)]), a, -0.01, np.array([t + 1.0]), t in dones))
    return out


def test_validate_in_bounds_identity(spec2):
    a, clipped = validate_action(spec2, HybridAction.make(1, [0.5]))
    assert a == HybridAction.make(1, [0.5])
    assert not clipped


def test_validate_clips_to_upper_bound(spec2):
    a, clipped = validate_action(spec2, HybridAction.make(1, [1.7]))
    assert a.params == (1.0,)
    assert clipped


def test_validate_rejects_bad_index(spec2):
    with pytest.raises(ActionError):
        validate_action(spec2, HybridAction.make(5, [0.0]))


def test_validate_rejects_length_mismatch(spec2):
    with pytest.raises(ActionError):
        validate_action(spec2, HybridAction.make(0, [0.0, 0.1]))


def test_action_spec_invariants():
    with pytest.raises(ValueError):
        ActionSpec.uniform(0, [])
    with pytest.raises(ValueError):
        ActionSpec(1, (1,), (((1.0, 1.0),),))
    with pytest.raises(ValueError):
        ActionSpec(1, (-1,), ((),))


@given(st.integers(0, 1), st.floats(-5, 5, allow_nan=False))
def test_validate_idempotent(k, p):
    spec = ActionSpec.uniform(2, [1, 1])
    once, _ = validate_action(spec, HybridAction.make(k, [p]))
    twice, clipped = validate_action(spec, once)
    assert once == twice
    assert not clipped


@pytest.mark.parametrize("dims,a,expected", [
    ([1, 1], (0, [0.3]), [1, 0, 0.3]),
    ([1, 1], (1, [-0.2]), [0, 1, -0.2]),
    ([2, 1], (1, [0.5]), [0, 1, 0.5, 0.0]),
])
def test_flatten_examples(dims, a, expected):
    spec = ActionSpec.uniform(2, dims)
    np.testing.assert_array_equal(flatten_action(spec, HybridAction.make(*a)), expected)


_spec_21 = ActionSpec.uniform(3, [2, 0, 1])
_actions = st.integers(0, 2).flatmap(
    lambda k: st.lists(st.floats(-1, 1, allow_nan=False), min_size=_spec_21.param_dims[k],
                       max_size=_spec_21.param_dims[k]).map(lambda p: HybridAction.make(k, p)))


@given(_actions, _actions)
def test_flatten_injective(a, b):
    fa, fb = flatten_action(_spec_21, a), flatten_action(_spec_21, b)
    assert len(fa) == _spec_21.flat_dim
    assert (a == b) == bool(np.array_equal(fa, fb))


def test_segment_basic():
    segs = extract_segments(_traj(10, events={4}), 3, {1})
    assert len(segs) == 1
    s = segs[0]
    assert s.anchor_t == 4
    assert [float(w[0][0]) for w in s.window] == [5.0, 6.0, 7.0]
    assert s.anchor_context[1].discrete == 1


def test_segment_boundary_exclusion():
    assert extract_segments(_traj(10, events={8}), 3, {1}) == []


def test_segment_no_cross_episode():
    assert extract_segments(_traj(10, events={5}, dones={6}), 3, {1}) == []


def test_segment_horizon_validation():
    with pytest.raises(ValueError):
        extract_segments(_traj(3), 0, {1})


def _brute_count(events, dones, n, H):
    count = 0
    for t in range(n):
        if t not in events or t + H >= n:
            continue
        if any(s in dones for s in range(t, t + H)):
            continue
        count += 1
    return count


@settings(max_examples=200)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(
    st.just(n), st.sets(st.integers(0, n - 1)), st.sets(st.integers(0, n - 1)), st.integers(1, 6))))
def test_segment_count_matches_brute_force(args):
    n, events, dones, H = args
    segs = extract_segments(_traj(n, events, dones), H, {1})
    assert len(segs) == _brute_count(events, dones, n, H)
    for s in segs:
        assert len(s.window) == H


def test_trajectory_round_trip(tmp_path):
    traj = _traj(5, events={2}, dones={4})
    traj[1].info["budget_left"] = 3
    p = tmp_path / "traj.jsonl"
    save_trajectory(p, traj)
    lines = p.read_text().splitlines()
    assert len(lines) == 5
    assert lines[0].startswith('{"state"')
    back = load_trajectory(p)
    for x, y in zip(traj, back):
        np.testing.assert_array_equal(x.state, y.state)
        assert x.action == y.action and x.done == y.done and x.reward == y.reward
    assert back[1].info["budget_left"] == 3


def test_transition_rejects_non_finite_reward():
    with pytest.raises(ValueError):
        Transition(np.zeros(1), HybridAction.make(0, [0.0]), float("nan"), np.zeros(1), False)
