"""Proposal/allocation policy for the reject-or-accept scenario.

Each resource keeps a *virtual* status next to its real one. At period ``t``
a resource whose virtual status has a maximal sequence ``[a,b]`` containing
the request proposes with probability ``y/(x p)`` taken from the fluid
solution at ``(j, t, [a,b])``. The highest-reward proposer gets the request if
it arrives; every other proposer shrinks its virtual status with probability
``p_t`` on its own coin. Resource indices are 1-based throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Instance, SlotState, allocate, containing_sequence
from .fluid import FluidSolution, check_matches
from .streams import DOWNDATE, PROPOSE, KeyedStream

log = logging.getLogger(__name__)

DEGENERATE = 1e-12


def proposal_ratios(instance: Instance, fluid: FluidSolution) -> np.ndarray:
    """``ratio[j-1, t-1, k]``: proposal probability when interval ``k`` holds the request.

    The numerator is ``y`` for the LP and ``y0 + y`` for the SBLP. Cells with
    ``x p <= 1e-12`` get probability zero.
    """
    check_matches(instance, fluid)
    p = np.array([rq.p for rq in instance.requests])
    num = fluid.y + fluid.y0 if fluid.is_sblp else fluid.y.copy()
    den = fluid.x * p[None, :, None]
    live = den > DEGENERATE
    ratio = np.zeros_like(num)
    np.divide(num, den, out=ratio, where=live)
    over = float((ratio - 1.0).max(initial=0.0))
    if over > 1e-6:
        log.warning("proposal ratio exceeds 1 by %.3g; clamping (solver precision)", over)
    return np.clip(ratio, 0.0, 1.0)


@dataclass(frozen=True)
class VirtualLedger:
    virtual: tuple[SlotState, ...]
    real: tuple[SlotState, ...]
    period: int

    def lower_bound_ok(self) -> bool:
        return all(v <= r for v, r in zip(self.virtual, self.real))


@dataclass(frozen=True)
class StepOutcome:
    proposals: frozenset[int]
    chosen: int | None
    allocated: bool
    revenue: float


class RejectPolicy:
    """Stateful policy for one episode; call :meth:`step` once per period in order."""

    def __init__(self, instance: Instance, fluid: FluidSolution):
        self.instance = instance
        self.fluid = fluid
        self.ratios = proposal_ratios(instance, fluid)
        self._pos = {iv: k for k, iv in enumerate(fluid.intervals)}
        full = SlotState.full(instance.N)
        self.virtual = [full] * instance.M
        self.real = [full] * instance.M
        self.period = 1

    @property
    def ledger(self) -> VirtualLedger:
        return VirtualLedger(tuple(self.virtual), tuple(self.real), self.period)

    def proposal_probability(self, j: int, t: int) -> float:
        rq = self.instance.requests[t - 1]
        seq = containing_sequence(self.virtual[j - 1], rq.interval)
        if seq is None:
            return 0.0
        return float(self.ratios[j - 1, t - 1, self._pos[seq]])

    def proposal_stage(self, t: int, rng: KeyedStream) -> frozenset[int]:
        if t != self.period:
            raise ValueError(f"policy is at period {self.period}, not {t}")
        return frozenset(
            j for j in range(1, self.instance.M + 1)
            if rng.uniform(t, j, PROPOSE) < self.proposal_probability(j, t)
        )

    def allocation_stage(self, t: int, proposals, arrived: bool, rng: KeyedStream) -> StepOutcome:
        rq = self.instance.requests[t - 1]
        iv = rq.interval
        chosen = None
        for j in sorted(proposals):
            if chosen is None or rq.w[j - 1] > rq.w[chosen - 1]:
                chosen = j
        allocated = chosen is not None and arrived
        revenue = 0.0
        if allocated:
            self.real[chosen - 1] = allocate(self.real[chosen - 1], iv)
            self.virtual[chosen - 1] = allocate(self.virtual[chosen - 1], iv)
            revenue = rq.w[chosen - 1]
        for j in sorted(proposals):
            if j != chosen and rng.uniform(t, j, DOWNDATE) < rq.p:
                self.virtual[j - 1] = allocate(self.virtual[j - 1], iv)
        self.period = t + 1
        return StepOutcome(frozenset(proposals), chosen, allocated, revenue)

    def step(self, t: int, arrived: bool, rng: KeyedStream) -> StepOutcome:
        return self.allocation_stage(t, self.proposal_stage(t, rng), arrived, rng)


def init(instance: Instance, fluid: FluidSolution) -> RejectPolicy:
    return RejectPolicy(instance, fluid)
