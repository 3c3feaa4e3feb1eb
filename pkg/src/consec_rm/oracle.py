"""Exact dynamic programs used as ground truth.

All state spaces are integer bitmasks (slot ``i`` of resource ``j`` lives in
bit ``(j - 1) * N + i - 1``), and value functions are numpy arrays indexed by
mask so each backward step is a handful of vector operations.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .core import (
    ConsecError,
    Instance,
    Interval,
    RequestType,
    SlotState,
    WrongScenario,
    containing_sequence,
    split_effect,
)

TOL = 1e-9


class TooLarge(ConsecError):
    pass


class WrongShape(ConsecError):
    pass


class ZeroDenominator(ConsecError):
    pass


@dataclass(frozen=True)
class ExactValue:
    value: float
    states_visited: int


def _require_reject(instance: Instance):
    if instance.is_choice:
        raise WrongScenario("expected a reject-or-accept instance")


def _require_single(instance: Instance):
    _require_reject(instance)
    if instance.M != 1:
        raise WrongShape(f"expected M = 1, got M = {instance.M}")


def naive_value_table(instance: Instance, cap: int = 16) -> np.ndarray:
    """``G[t, s]`` for ``t = 1..T+1`` over all ``2**N`` single-resource states.

    Row 0 is unused so that row ``t`` is period ``t``.
    """
    _require_single(instance)
    N, T = instance.N, instance.T
    if N > cap:
        raise TooLarge(f"N = {N} exceeds the naive DP cap {cap}")
    states = np.arange(1 << N)
    G = np.zeros((T + 2, 1 << N))
    for t in range(T, 0, -1):
        rq = instance.requests[t - 1]
        nxt = G[t + 1]
        m = rq.interval.mask()
        fits = (states & m) == m
        accept = rq.w[0] + nxt[states ^ m]
        G[t] = np.where(fits, (1 - rq.p) * nxt + rq.p * np.maximum(accept, nxt), nxt)
    return G


def naive_dp(instance: Instance, cap: int = 16) -> ExactValue:
    """Single-resource optimum by backward recursion over every slot state."""
    G = naive_value_table(instance, cap)
    full = (1 << instance.N) - 1
    return ExactValue(float(G[1, full]), (1 << instance.N) * instance.T)


@dataclass(frozen=True)
class DdpTable:
    """``values[t, a, b]`` is the optimal revenue from maximal sequence ``[a,b]`` at period ``t``.

    Indices are 1-based with ``t`` in ``1..T+1``; entries with ``a > b`` (and
    the padding row/column) stay zero, which encodes the empty interval.
    """

    values: np.ndarray
    N: int
    T: int

    def value(self, t: int, iv: Interval) -> float:
        if iv.empty:
            return 0.0
        return float(self.values[t, iv.lo, iv.hi])

    def state_value(self, t: int, state: SlotState) -> float:
        from .core import maximal_sequences

        return sum(self.value(t, seq) for seq in maximal_sequences(state))


def ddp(instance: Instance) -> DdpTable:
    """Decomposed recursion over (period, maximal sequence) in O(T N^2)."""
    _require_single(instance)
    N, T = instance.N, instance.T
    F = np.zeros((T + 2, N + 2, N + 2))
    for t in range(T, 0, -1):
        rq = instance.requests[t - 1]
        nxt = F[t + 1]
        cur = nxt.copy()
        l, r = rq.l, rq.r
        for a in range(1, l + 1):
            for b in range(r, N + 1):
                # split fragments [a, l-1] and [r+1, b]; empty ones index zero padding
                left = nxt[a, l - 1] if a <= l - 1 else 0.0
                right = nxt[r + 1, b] if r + 1 <= b else 0.0
                keep = nxt[a, b]
                cur[a, b] = (1 - rq.p) * keep + rq.p * max(rq.w[0] + left + right, keep)
        F[t] = cur
    return DdpTable(F, N, T)


def ddp_policy_act(
    table: DdpTable, t: int, state: SlotState, arrived: bool, request: RequestType
) -> bool:
    """Accept (``True``) iff selling now is worth at least keeping the sequence intact."""
    if not arrived:
        return False
    seq = containing_sequence(state, request.interval)
    if seq is None:
        return False
    left, right = split_effect(seq, request.interval)
    sell = request.w[0] + table.value(t + 1, left) + table.value(t + 1, right)
    return sell >= table.value(t + 1, seq)


def ddp_accept_table(instance: Instance, table: DdpTable) -> np.ndarray:
    """``accept[t, s]``: decision of :func:`ddp_policy_act` for an arrived request."""
    N, T = instance.N, instance.T
    out = np.zeros((T + 1, 1 << N), dtype=bool)
    for t in range(1, T + 1):
        rq = instance.requests[t - 1]
        for s in range(1 << N):
            out[t, s] = ddp_policy_act(table, t, SlotState.from_mask(s, N), True, rq)
    return out


def _joint_masks(instance: Instance) -> list[list[int]]:
    """Per period, the request mask shifted into each resource's block."""
    N = instance.N
    return [
        [rq.interval.mask() << (j * N) for j in range(instance.M)]
        for rq in instance.requests
    ]


def exact_online_reject(instance: Instance, cap: int = 12) -> ExactValue:
    """Optimal online revenue over joint states of all resources."""
    _require_reject(instance)
    M, N, T = instance.M, instance.N, instance.T
    if M * N > cap:
        raise TooLarge(f"M*N = {M * N} exceeds cap {cap}")
    states = np.arange(1 << (M * N))
    G = np.zeros(1 << (M * N))
    masks = _joint_masks(instance)
    for t in range(T, 0, -1):
        rq = instance.requests[t - 1]
        best = G.copy()
        for j in range(M):
            m = masks[t - 1][j]
            fits = (states & m) == m
            best = np.where(fits, np.maximum(best, rq.w[j] + G[states ^ m]), best)
        G = (1 - rq.p) * G + rq.p * best
    return ExactValue(float(G[-1]), (1 << (M * N)) * T)


def exact_online_choice(instance: Instance, cap: int = 12, max_m: int = 4) -> ExactValue:
    """Optimal assortment policy over joint states.

    Each period's action is a subset of resources that fit the request and
    have positive attraction; the customer then picks by attraction weights.
    """
    if not instance.is_choice:
        raise WrongScenario("expected a choice-based instance")
    M, N, T = instance.M, instance.N, instance.T
    if M > max_m or M * N > cap:
        raise TooLarge(f"M = {M}, M*N = {M * N} exceed caps ({max_m}, {cap})")
    states = np.arange(1 << (M * N))
    G = np.zeros(1 << (M * N))
    masks = _joint_masks(instance)
    for t in range(T, 0, -1):
        rq = instance.requests[t - 1]
        offerable = [j for j in range(M) if rq.v[j] > 0]
        fits = {j: (states & masks[t - 1][j]) == masks[t - 1][j] for j in offerable}
        after = {j: rq.w[j] + G[states ^ masks[t - 1][j]] for j in offerable}
        best = G.copy()
        for k in range(1, len(offerable) + 1):
            for S in combinations(offerable, k):
                denom = rq.v0 + sum(rq.v[j] for j in S)
                if denom <= 0:
                    raise ZeroDenominator(f"period {t}: assortment {S} has zero total attraction")
                val = (rq.v0 / denom) * G
                ok = np.ones_like(states, dtype=bool)
                for j in S:
                    val = val + (rq.v[j] / denom) * after[j]
                    ok &= fits[j]
                best = np.where(ok, np.maximum(best, val), best)
        G = (1 - rq.p) * G + rq.p * best
    return ExactValue(float(G[-1]), (1 << (M * N)) * T)


def reachable_states(instance: Instance) -> list[set[int]]:
    """Single-resource masks reachable at the start of each period ``1..T+1``."""
    N = instance.N
    out = [set()] * (instance.T + 2)
    cur = {(1 << N) - 1}
    out[1] = set(cur)
    for t in range(1, instance.T + 1):
        m = instance.requests[t - 1].interval.mask()
        nxt = set(cur)
        if instance.requests[t - 1].p > 0:
            nxt |= {s ^ m for s in cur if s & m == m}
        cur = nxt
        out[t + 1] = set(cur)
    return out
