import itertools

import numpy as np
import pytest

from consec_rm.core import GeneratorSpec, Interval, SlotState, generate, make_instance
from consec_rm.oracle import (TooLarge, ddp, ddp_accept_table, ddp_policy_act, exact_online_choice,
                              exact_online_reject, naive_dp, naive_value_table, reachable_states)


def single(requests, N=2):
    return make_instance("reject", N, requests)


# -- independent brute force: expectimax over explicit histories ---------------


def brute_reject(inst):
    """Best policy found by enumerating every accept/assign decision per history."""

    def go(t, states):
        if t > inst.T:
            return 0.0
        rq = inst.requests[t - 1]
        iv = set(range(rq.l, rq.r + 1))
        best = go(t + 1, states)
        for j, free in enumerate(states):
            if iv <= free:
                nxt = states[:j] + (free - iv,) + states[j + 1:]
                best = max(best, rq.w[j] + go(t + 1, nxt))
        return (1 - rq.p) * go(t + 1, states) + rq.p * best

    return go(1, tuple(frozenset(range(1, inst.N + 1)) for _ in range(inst.M)))


def brute_choice(inst):
    """Best assortment policy by enumerating every offered set per history."""

    def go(t, states):
        if t > inst.T:
            return 0.0
        rq = inst.requests[t - 1]
        iv = set(range(rq.l, rq.r + 1))
        stay = go(t + 1, states)
        ok = [j for j in range(inst.M) if iv <= states[j] and rq.v[j] > 0]
        best = stay
        for k in range(1, len(ok) + 1):
            for S in itertools.combinations(ok, k):
                den = rq.v0 + sum(rq.v[j] for j in S)
                val = rq.v0 / den * stay
                for j in S:
                    nxt = states[:j] + (states[j] - iv,) + states[j + 1:]
                    val += rq.v[j] / den * (rq.w[j] + go(t + 1, nxt))
                best = max(best, val)
        return (1 - rq.p) * stay + rq.p * best

    return go(1, tuple(frozenset(range(1, inst.N + 1)) for _ in range(inst.M)))


# -- naive DP ---------------------------------------------------------------


def test_naive_single_accept():
    assert naive_dp(single([{"p": 1, "l": 1, "r": 1, "w": 5}])).value == 5.0


def test_naive_empty_horizon():
    assert naive_dp(single([])).value == 0.0


def test_naive_two_period_example():
    inst = single([{"p": 1, "l": 1, "r": 2, "w": 3}, {"p": 1, "l": 1, "r": 1, "w": 2}])
    assert naive_dp(inst).value == 3.0


def test_naive_cap():
    inst = generate(0, GeneratorSpec(M=(1, 1), N=(5, 5), T=(2, 2)))
    with pytest.raises(TooLarge):
        naive_dp(inst, cap=4)


# -- decomposed DP --------------------------------------------------------------


def test_ddp_two_period_example():
    inst = single([{"p": 1, "l": 1, "r": 2, "w": 3}, {"p": 1, "l": 1, "r": 1, "w": 2}])
    assert ddp(inst).value(1, Interval(1, 2)) == 3.0


def test_ddp_terminal_row_is_zero():
    inst = generate(4, GeneratorSpec(M=(1, 1), N=(5, 5), T=(6, 6)))
    assert not ddp(inst).values[inst.T + 1].any()


def test_ddp_interval_that_never_fits():
    inst = single([{"p": 1, "l": 1, "r": 3, "w": 9}, {"p": 0.5, "l": 2, "r": 4, "w": 9}], N=4)
    assert ddp(inst).value(1, Interval(1, 2)) == 0.0
    assert ddp(inst).value(1, Interval(4, 4)) == 0.0


@pytest.mark.parametrize("seed", range(30))
def test_decomposition_on_reachable_states(seed):
    inst = generate(seed, GeneratorSpec(M=(1, 1), N=(1, 6), T=(1, 8)))
    G = naive_value_table(inst)
    F = ddp(inst)
    for t, states in enumerate(reachable_states(inst)):
        for s in states:
            assert abs(G[t, s] - F.state_value(t, SlotState.from_mask(s, inst.N))) <= 1e-9


def test_ddp_policy_decisions():
    last = single([{"p": 1, "l": 1, "r": 1, "w": 4}])
    table = ddp(last)
    full = SlotState.full(2)
    assert ddp_policy_act(table, 1, full, True, last.requests[0])
    assert not ddp_policy_act(table, 1, full, False, last.requests[0])
    # a worthless request that would block a later sale is declined
    inst = single([{"p": 1, "l": 1, "r": 2, "w": 0}, {"p": 1, "l": 1, "r": 1, "w": 5}])
    table = ddp(inst)
    assert not ddp_policy_act(table, 1, full, True, inst.requests[0])
    acc = ddp_accept_table(inst, table)
    assert acc.shape == (3, 4) and not acc[1, 0b11] and acc[2, 0b11]


# -- exact online optima ---------------------------------------------------------


def test_exact_reject_one_request_two_copies():
    inst = make_instance("reject", 2, [{"p": 0.6, "l": 1, "r": 2, "w": [3, 7]}])
    assert exact_online_reject(inst).value == pytest.approx(0.6 * 7, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_exact_reject_matches_naive_for_one_resource(seed):
    inst = generate(seed, GeneratorSpec(M=(1, 1), N=(1, 5), T=(1, 6)))
    assert exact_online_reject(inst).value == pytest.approx(naive_dp(inst).value, abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_exact_reject_matches_brute_force(seed):
    inst = generate(seed, GeneratorSpec(M=(2, 2), N=(2, 2), T=(3, 3)))
    assert exact_online_reject(inst).value == pytest.approx(brute_reject(inst), abs=1e-12)


def test_exact_choice_single_bam():
    inst = make_instance("choice", 1, [{"p": 1, "l": 1, "r": 1, "w": 4, "v": 1, "v0": 1}])
    assert exact_online_choice(inst).value == pytest.approx(2.0, abs=1e-12)


def test_exact_choice_nothing_offerable():
    inst = make_instance("choice", 2, [{"p": 1, "l": 1, "r": 1, "w": [4, 4], "v": [0, 0], "v0": 1}] * 2)
    assert exact_online_choice(inst).value == 0.0


@pytest.mark.parametrize("seed", range(6))
def test_exact_choice_matches_brute_force(seed):
    inst = generate(seed, GeneratorSpec(scenario="choice", M=(2, 2), N=(2, 2), T=(2, 2)))
    assert exact_online_choice(inst).value == pytest.approx(brute_choice(inst), abs=1e-12)


def test_frozen_oracle_values():
    # computed once with the implementation above and checked against the brute force
    inst = generate(11, GeneratorSpec(M=(2, 2), N=(3, 3), T=(4, 4)))
    assert exact_online_reject(inst).value == pytest.approx(FROZEN["reject"], abs=1e-9)
    inst = generate(11, GeneratorSpec(scenario="choice", M=(2, 2), N=(3, 3), T=(3, 3)))
    assert exact_online_choice(inst).value == pytest.approx(FROZEN["choice"], abs=1e-9)


def test_caps():
    inst = generate(0, GeneratorSpec(M=(4, 4), N=(4, 4), T=(2, 2)))
    with pytest.raises(TooLarge):
        exact_online_reject(inst)


def test_reachable_states_start_full():
    inst = generate(2, GeneratorSpec(M=(1, 1), N=(4, 4), T=(3, 3)))
    r = reachable_states(inst)
    assert r[1] == {0b1111}
    assert all(r[t] <= r[t + 1] for t in range(1, inst.T + 1))
    assert np.all([s <= 0b1111 for s in r[inst.T + 1]])


FROZEN = {"reject": 9.046945713681238, "choice": 4.962818398699834}
