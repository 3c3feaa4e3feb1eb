"""Assortment policy for the choice scenario, plus the coupling sampler it relies on.

Per period: resources propose as in the reject-or-accept policy (with the
SBLP ratio ``(y0 + y) / (x p)``), each proposer is kept in the offered set
with probability ``gamma``, the customer picks by attraction weights, and the
set of virtual statuses to shrink is drawn by :func:`random_coupler` so that
resource ``j`` shrinks with probability ``q_j`` independently of the others
while the customer's pick always shrinks.

Randomness enters every function here as explicit uniforms, so the same
logic serves the scalar replay path and the vectorized simulator.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

from .core import ConsecError, Instance, RequestType, SlotState, allocate, containing_sequence
from .fluid import FluidSolution
from .oracle import TooLarge, ZeroDenominator
from .policy_reject import VirtualLedger, proposal_ratios
from .streams import ASSORT, COUPLER, CUSTOMER, PROPOSE, KeyedStream

GAMMA = 0.25
EPS = 1e-12
OUTSIDE = 0


class BadGamma(ConsecError):
    pass


class ZeroAttraction(ConsecError):
    pass


@dataclass(frozen=True)
class CouplerInput:
    """Target marginals ``q``, choice distribution ``q_prime`` and realized pick ``j_tilde``.

    ``j_tilde = 0`` means the outside option (or no arrival).
    """

    q: tuple[float, ...]
    q_prime: tuple[float, ...]
    j_tilde: int = OUTSIDE

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        object.__setattr__(self, "q_prime", tuple(float(v) for v in self.q_prime))
        if len(self.q) != len(self.q_prime):
            raise ValueError("q and q_prime differ in length")
        if not 0 <= self.j_tilde <= len(self.q):
            raise ValueError(f"j_tilde {self.j_tilde} outside 0..{len(self.q)}")

    def regular_violation(self) -> float:
        """Largest excess of ``q'_j / (1 - sum_{j' > j} q'_j')`` over ``q_j``; <= 0 when regular."""
        worst = -1.0
        suffix = 0.0
        for j in range(len(self.q), 0, -1):
            qp = self.q_prime[j - 1]
            denom = 1.0 - suffix
            if denom <= EPS:
                if qp > 0:
                    return float("inf")
            else:
                worst = max(worst, qp / denom - self.q[j - 1])
            suffix += qp
        return worst

    def valid(self, tol: float = EPS) -> bool:
        in_range = all(0.0 <= v <= 1.0 for v in self.q + self.q_prime)
        return in_range and sum(self.q_prime) <= 1.0 + tol and self.regular_violation() <= tol


def _upper_branch(q_j: float, qp_j: float, suffix: float, j: int) -> float:
    denom = 1.0 - suffix
    if denom <= EPS:
        raise ZeroDenominator(f"resource {j}: remaining choice mass {denom:.3g}")
    z = qp_j / denom
    if z >= 1.0 - EPS:
        raise ZeroDenominator(f"resource {j}: transition probability {z:.3g} too close to 1")
    return min(1.0, max(0.0, (q_j - z) / (1.0 - z)))


def random_coupler(inp: CouplerInput, u: Sequence[float]) -> frozenset[int]:
    """Sample the update set from resource ``M`` down to ``1``.

    ``u[j - 1]`` is the uniform draw for resource ``j``. Above the realized
    pick a resource enters with the residual probability that keeps its
    overall marginal at ``q_j``; the pick itself always enters; below it,
    each resource enters with probability ``q_j``.
    """
    out = []
    suffix = 0.0
    jt = inp.j_tilde
    for j in range(len(inp.q), 0, -1):
        q_j, qp_j = inp.q[j - 1], inp.q_prime[j - 1]
        if j > jt:
            if u[j - 1] < _upper_branch(q_j, qp_j, suffix, j):
                out.append(j)
        elif j == jt:
            out.append(j)
        elif u[j - 1] < q_j:
            out.append(j)
        suffix += qp_j
    return frozenset(out)


def coupler_exact_distribution(q: Sequence[float], q_prime: Sequence[float]) -> dict[frozenset[int], float]:
    """Output law of :func:`random_coupler` when ``j_tilde`` is drawn from ``q_prime``.

    Given ``j_tilde`` every inclusion is an independent coin, so the law is a
    mixture over ``j_tilde in 0..M`` of Bernoulli products.
    """
    M = len(q)
    if M > 12:
        raise TooLarge(f"M = {M} exceeds 12")
    pick = [1.0 - sum(q_prime)] + list(q_prime)
    dist = {frozenset(s): 0.0 for k in range(M + 1) for s in itertools.combinations(range(1, M + 1), k)}
    for jt in range(M + 1):
        if pick[jt] <= 0.0:
            continue
        incl = [0.0] * (M + 1)
        suffix = 0.0
        for j in range(M, 0, -1):
            if j > jt:
                incl[j] = _upper_branch(q[j - 1], q_prime[j - 1], suffix, j)
            elif j == jt:
                incl[j] = 1.0
            else:
                incl[j] = q[j - 1]
            suffix += q_prime[j - 1]
        for subset in dist:
            prob = pick[jt]
            for j in range(1, M + 1):
                prob *= incl[j] if j in subset else 1.0 - incl[j]
            dist[subset] += prob
    return dist


def bernoulli_product(q: Sequence[float]) -> dict[frozenset[int], float]:
    M = len(q)
    out = {}
    for k in range(M + 1):
        for s in itertools.combinations(range(1, M + 1), k):
            prob = 1.0
            for j in range(1, M + 1):
                prob *= q[j - 1] if j in s else 1.0 - q[j - 1]
            out[frozenset(s)] = prob
    return out


def build_assortment(proposals, gamma: float, u: Sequence[float]) -> frozenset[int]:
    """Keep each proposer ``j`` iff ``u[j - 1] < gamma``."""
    if not 0.0 <= gamma <= 1.0:
        raise BadGamma(f"gamma must lie in [0,1], got {gamma}")
    return frozenset(j for j in proposals if u[j - 1] < gamma)


def simulate_choice(assortment, request: RequestType, arrived: bool, u: float) -> int:
    """Customer's pick from ``assortment`` (``0`` = outside option) for uniform ``u``."""
    for j in assortment:
        if request.v[j - 1] <= 0:
            raise ZeroAttraction(f"resource {j} has zero attraction")
    if not arrived or not assortment:
        return OUTSIDE
    order = sorted(assortment)
    denom = request.v0
    for j in order:
        denom += request.v[j - 1]
    threshold = u * denom
    cum = 0.0
    for j in order:
        cum += request.v[j - 1]
        if threshold < cum:
            return j
    return order[-1] if request.v0 == 0 else OUTSIDE


def choice_vectors(request: RequestType, M: int, proposals, assortment) -> tuple[list[float], list[float]]:
    """Coupler inputs: ``q`` from the proposers and ``q'`` from the offered set."""
    p, v, v0 = request.p, request.v, request.v0
    q = [p * v[j - 1] / (v0 + v[j - 1]) if j in proposals and v[j - 1] > 0 else 0.0 for j in range(1, M + 1)]
    denom = v0
    for j in sorted(assortment):
        denom += v[j - 1]
    qp = [p * v[j - 1] / denom if j in assortment else 0.0 for j in range(1, M + 1)]
    return q, qp


@dataclass(frozen=True)
class ChoiceStepOutcome:
    proposals: frozenset[int]
    assortment: frozenset[int]
    chosen: int
    update_set: frozenset[int]
    revenue: float
    regular: bool = True
    feasible: bool = True


class ChoicePolicy:
    """Stateful policy for one episode of a choice instance."""

    def __init__(self, instance: Instance, fluid: FluidSolution, gamma: float = GAMMA):
        if not 0.0 <= gamma <= 1.0:
            raise BadGamma(f"gamma must lie in [0,1], got {gamma}")
        self.instance = instance
        self.fluid = fluid
        self.gamma = gamma
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

    def step(self, t: int, arrived: bool, rng: KeyedStream) -> ChoiceStepOutcome:
        inst = self.instance
        rq = inst.requests[t - 1]
        iv = rq.interval
        proposals = self.proposal_stage(t, rng)
        assortment = build_assortment(proposals, self.gamma, rng.uniforms(t, inst.M, ASSORT))
        feasible = all(
            containing_sequence(self.real[j - 1], iv) is not None for j in assortment
        )
        chosen = simulate_choice(assortment, rq, arrived, rng.uniform(t, 0, CUSTOMER))
        q, qp = choice_vectors(rq, inst.M, proposals, assortment)
        coupler = CouplerInput(q, qp, chosen)
        regular = coupler.regular_violation() <= EPS
        update = random_coupler(coupler, rng.uniforms(t, inst.M, COUPLER))
        for j in sorted(update):
            self.virtual[j - 1] = allocate(self.virtual[j - 1], iv)
        revenue = 0.0
        if chosen != OUTSIDE:
            self.real[chosen - 1] = allocate(self.real[chosen - 1], iv)
            revenue = rq.w[chosen - 1]
        self.period = t + 1
        return ChoiceStepOutcome(proposals, assortment, chosen, update, revenue, regular, feasible)


def init(instance: Instance, fluid: FluidSolution, gamma: float = GAMMA) -> ChoicePolicy:
    return ChoicePolicy(instance, fluid, gamma)
