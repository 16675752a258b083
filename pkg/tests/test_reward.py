import itertools
import math

import pytest
from hypothesis import example, given, strategies as st

from dtqncc.agent.actions import ActionSpace
from dtqncc.reward import (ExpFlag, Kind, RewardParams, alpha, breakdown, connection_reward, rtt_penalty,
                           subflow_reward, threshold, tput_reward, update_expflag)

HAND = RewardParams(beta=10_000, g=0.1, d_floor_us=5000, sigma_us=1000)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def test_threshold_at_floor():
    assert rel(threshold(5000, HAND), 2.0) <= 1e-9


def test_threshold_quantizes_excess_delay():
    assert rel(threshold(7500, HAND), 1.6) <= 1e-9


def test_threshold_without_growth_ignores_floor():
    p = RewardParams(beta=10_000, g=0.0, d_floor_us=1234, sigma_us=77)
    for d in (3000, 5000, 9000):
        assert rel(threshold(d, p), 10_000 / d) <= 1e-9


def test_threshold_rejects_nonpositive_dmin():
    with pytest.raises(ValueError):
        threshold(0, HAND)


def test_alpha_is_exactly_half_at_threshold():
    # ratio 10000/5000 = 2.0 = T exactly.
    assert alpha(10_000, 5000, HAND) == 0.5


def test_alpha_hand_value():
    p = RewardParams(beta=10_000, g=0.0, d_floor_us=5000, kappa=2.0)
    # ratio 2.5, T 2.0
    assert rel(alpha(12_500, 5000, p), 1 / (1 + math.exp(-1))) <= 1e-9
    assert rel(alpha(12_500, 5000, p), 0.7310585786300049) <= 1e-9


def test_alpha_saturates_for_steep_sigmoid():
    p = RewardParams(beta=10_000, g=0.0, d_floor_us=5000, kappa=1e6)
    assert alpha(12_500, 5000, p) == 1.0
    assert 0.0 <= alpha(5000, 5000, p) < 1e-300


def test_rtt_penalty_examples():
    p = RewardParams(beta=10_000, g=0.0, d_floor_us=5000, w_d=1.0)
    assert rtt_penalty(10_000, 5000, p) == 0.0
    assert rel(rtt_penalty(12_000, 5000, p), -0.4) <= 1e-9
    assert rtt_penalty(6000, 5000, p) > 0


def test_rtt_penalty_clamp_option():
    p = RewardParams(beta=10_000, g=0.0, d_floor_us=5000, w_d=1.0, clamp_penalty=True)
    assert rtt_penalty(6000, 5000, p) == 0.0


def test_tput_reward_examples():
    p = RewardParams(w_rho=1.0)
    assert tput_reward(0.0, p) == 0.0
    assert rel(tput_reward(0.8, p), 0.8) <= 1e-9
    assert tput_reward(0.3, p) < tput_reward(0.31, p)
    with pytest.raises(ValueError):
        tput_reward(-0.1, p)


def _normal(**kw):
    base = dict(d_bar_us=10_000, d_min_us=5000, rho_bar=0.5, delta=0, cwnd_target=20, cwnd_min=4,
                cwnd_max=100, expflag=0, params=HAND)
    base.update(kw)
    return subflow_reward(**base)


def test_reward_at_cwnd_max_is_minus_one():
    r = _normal(delta=2, cwnd_target=100)
    assert (r.kind, r.value) == (Kind.BOUNDARY, -1.0)


def test_reward_following_expflag_is_plus_one():
    r = _normal(delta=2, expflag=1)
    assert (r.kind, r.value) == (Kind.BOUNDARY, 1.0)


def test_reward_ignoring_expflag_is_minus_one():
    assert _normal(delta=0, expflag=1).value == -1.0
    assert _normal(delta=-1, expflag=1).value == -1.0


def test_normal_reward_blend_hand_value():
    # kappa -> 0 gives alpha -> 1/2; excess 0.8 with w_d 0.5 gives P_D = -0.4; rho 0.8.
    p = RewardParams(beta=10_000, g=0.0, d_floor_us=5000, kappa=1e-12, w_d=0.5, clip_normal=False)
    r = _normal(d_bar_us=14_000, rho_bar=0.8, params=p)
    assert r.kind is Kind.NORMAL
    assert rel(r.alpha, 0.5) <= 1e-9
    assert rel(r.p_d, -0.4) <= 1e-9
    assert rel(r.value, 0.2) <= 1e-9
    assert r.value == r.alpha * r.p_d + (1 - r.alpha) * r.r_rho


def test_expflag_examples():
    assert update_expflag([False] * 6, 6) == 1
    assert update_expflag([False] * 4 + [True, False], 6) == 0
    assert update_expflag([False] * 5, 6) == 0
    f = ExpFlag(6)
    for _ in range(6):
        f.step(False)
    assert f.flag == 1
    assert f.step(True) == 0


def test_connection_reward_examples():
    assert rel(connection_reward([0.2, 0.3]), 0.5) <= 1e-9
    assert connection_reward([-1.0, 1.0]) == 0.0
    assert connection_reward([0.7]) == 0.7
    b = breakdown([_normal(), _normal(delta=2, expflag=1)])
    assert b.total == b.subflows[0].value + 1.0


def _expected_kind(target, cmin, cmax, flag, delta):
    if target <= cmin or target >= cmax:
        return -1.0
    if flag:
        return 1.0 if delta > 0 else -1.0
    return None


def test_boundary_precedence_over_action_grid():
    space = ActionSpace(2, 2, 2)
    cmin, cmax = 4, 40
    starts = {"at_min": [cmin + 2, cmin + 2], "interior": [20, 20], "at_max": [cmax - 2, cmax - 2]}
    checked = 0
    for (label, start), flag, idx in itertools.product(starts.items(), (0, 1), range(space.size)):
        deltas = space.deltas(idx)
        targets = space.apply(start, idx, [cmin] * 2, [cmax] * 2)
        for i in range(2):
            r = _normal(delta=deltas[i], cwnd_target=targets[i], cwnd_min=cmin, cwnd_max=cmax, expflag=flag)
            want = _expected_kind(targets[i], cmin, cmax, flag, deltas[i])
            if want is None:
                assert r.kind is Kind.NORMAL
                assert -1.0 <= r.value <= 1.0
            else:
                assert r.kind is Kind.BOUNDARY and r.value == want, (label, flag, idx, i)
            checked += 1
    assert checked == 3 * 2 * 25 * 2


def test_params_validation():
    for bad in ({"beta": 0}, {"sigma_us": 0}, {"kappa": -1}, {"w_d": 0}, {"w_rho": 0}, {"expflag_period": 0}):
        with pytest.raises(ValueError):
            RewardParams(**bad)


# -- properties ---------------------------------------------------------------

rtt = st.floats(1000, 200_000)


@given(d_min=rtt, r1=st.floats(1.0, 10.0), r2=st.floats(1.0, 10.0))
def test_alpha_in_open_interval_and_monotone(d_min, r1, r2):
    p = RewardParams(d_floor_us=d_min * 0.9)
    lo, hi = sorted((r1, r2))
    a_lo, a_hi = alpha(lo * d_min, d_min, p), alpha(hi * d_min, d_min, p)
    assert 0.0 < a_lo < 1.0 and 0.0 < a_hi < 1.0
    assert a_lo <= a_hi


@given(d_min=rtt, r=st.floats(1.0, 10.0), bump=st.floats(1e-3, 5.0))
def test_penalty_strictly_decreasing(d_min, r, bump):
    p = RewardParams(d_floor_us=d_min)
    assert rtt_penalty((r + bump) * d_min, d_min, p) < rtt_penalty(r * d_min, d_min, p)


# Offsets stay off the grid points, where float rounding of d_f + k*sigma - d_f can land below k.
@given(d_f=st.floats(1000, 50_000), k=st.integers(0, 20), a=st.floats(1e-6, 0.999), b=st.floats(1e-6, 0.999))
@example(d_f=12768.909386535848, k=20, a=0.5, b=1e-6)
def test_threshold_piecewise_constant_between_grid_points(d_f, k, a, b):
    p = RewardParams(d_floor_us=d_f, g=0.05, sigma_us=1000)
    d1 = d_f + (k + a) * 1000
    d2 = d_f + (k + b) * 1000
    # Same sigma level: the numerator is shared; only the 1/D_min factor differs.
    assert rel(threshold(d1, p) * d1, threshold(d2, p) * d2) <= 1e-9


@given(d_min=rtt, ratio=st.floats(1.0, 10.0), rho=st.floats(0.0, 1.0), delta=st.integers(-2, 2),
       target=st.integers(4, 100), flag=st.integers(0, 1))
def test_reward_within_unit_interval(d_min, ratio, rho, delta, target, flag):
    r = subflow_reward(ratio * d_min, d_min, rho, delta, target, 4, 100, flag, RewardParams(), d_floor_us=d_min)
    assert -1.0 <= r.value <= 1.0
    assert math.isfinite(r.value)
