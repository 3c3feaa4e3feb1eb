"""Problem instances, slot states, maximal-sequence algebra and instance I/O.

Slot indices are 1-based on every public interface. A slot state of ``N``
slots is also available as an integer bitmask where slot ``i`` lives in bit
``i - 1``; the simulation engine works on masks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class ConsecError(Exception):
    """Base class for errors raised by this package."""


class OccupiedSlot(ConsecError):
    pass


class NotContained(ConsecError):
    pass


class WrongScenario(ConsecError):
    pass


class BadSpec(ConsecError):
    pass


class InvalidInstance(ConsecError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{v.path}: {v.message}" for v in self.violations[:5])
        super().__init__(f"{len(self.violations)} violation(s): {lines}")


class Scenario(str, Enum):
    REJECT = "reject"
    CHOICE = "choice"


@dataclass(frozen=True, order=True)
class Interval:
    """Closed slot interval ``[lo, hi]``. Any ``lo > hi`` collapses to ``EMPTY``."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi and (self.lo, self.hi) != (1, 0):
            object.__setattr__(self, "lo", 1)
            object.__setattr__(self, "hi", 0)

    @property
    def empty(self) -> bool:
        return self.lo > self.hi

    def __len__(self) -> int:
        return 0 if self.empty else self.hi - self.lo + 1

    def contains(self, other: "Interval") -> bool:
        if other.empty:
            return True
        if self.empty:
            return False
        return self.lo <= other.lo and other.hi <= self.hi

    def mask(self) -> int:
        if self.empty:
            return 0
        return ((1 << (self.hi - self.lo + 1)) - 1) << (self.lo - 1)

    def __str__(self) -> str:
        return "[]" if self.empty else f"[{self.lo},{self.hi}]"


EMPTY = Interval(1, 0)


def all_intervals(n: int) -> list[Interval]:
    """Every non-empty ``[a, b]`` with ``1 <= a <= b <= n`` in lexicographic order."""
    return [Interval(a, b) for a in range(1, n + 1) for b in range(a, n + 1)]


def interval_index(n: int) -> dict[Interval, int]:
    return {iv: k for k, iv in enumerate(all_intervals(n))}


@dataclass(frozen=True)
class SlotState:
    """Availability vector of one resource; ``bits[i - 1]`` is slot ``i``."""

    bits: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(bool(b) for b in self.bits))

    @classmethod
    def full(cls, n: int) -> "SlotState":
        return cls((True,) * n)

    @classmethod
    def parse(cls, text: str) -> "SlotState":
        if not text or set(text) - {"0", "1"}:
            raise ValueError(f"slot state must be a non-empty 0/1 string, got {text!r}")
        return cls(tuple(c == "1" for c in text))

    @classmethod
    def from_mask(cls, mask: int, n: int) -> "SlotState":
        return cls(tuple(bool((mask >> i) & 1) for i in range(n)))

    @property
    def n(self) -> int:
        return len(self.bits)

    def mask(self) -> int:
        return sum(1 << i for i, b in enumerate(self.bits) if b)

    def available(self, slot: int) -> bool:
        # sentinels 0 and N+1 are never available
        return 1 <= slot <= self.n and self.bits[slot - 1]

    def __le__(self, other: "SlotState") -> bool:
        return all(a <= b for a, b in zip(self.bits, other.bits))

    def __str__(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


def maximal_sequences(state: SlotState) -> list[Interval]:
    """Runs of available slots bounded by unavailable slots or the boundary."""
    out = []
    start = None
    for i, bit in enumerate(state.bits, start=1):
        if bit and start is None:
            start = i
        elif not bit and start is not None:
            out.append(Interval(start, i - 1))
            start = None
    if start is not None:
        out.append(Interval(start, state.n))
    return out


def containing_sequence(state: SlotState, iv: Interval) -> Interval | None:
    for seq in maximal_sequences(state):
        if seq.contains(iv):
            return seq
    return None


def allocate(state: SlotState, iv: Interval) -> SlotState:
    """Mark the slots of ``iv`` unavailable; every one of them must be free."""
    if iv.empty:
        return state
    if iv.lo < 1 or iv.hi > state.n:
        raise OccupiedSlot(f"{iv} lies outside [1,{state.n}]")
    busy = [i for i in range(iv.lo, iv.hi + 1) if not state.bits[i - 1]]
    if busy:
        raise OccupiedSlot(f"slots {busy} of {iv} already unavailable in {state}")
    bits = list(state.bits)
    for i in range(iv.lo, iv.hi + 1):
        bits[i - 1] = False
    return SlotState(tuple(bits))


def split_effect(seq: Interval, iv: Interval) -> tuple[Interval, Interval]:
    """Fragments left of and right of ``iv`` after removing it from ``seq``."""
    if iv.empty or not seq.contains(iv):
        raise NotContained(f"{iv} is not contained in {seq}")
    return Interval(seq.lo, iv.lo - 1), Interval(iv.hi + 1, seq.hi)


@dataclass(frozen=True)
class RequestType:
    """One period's request: arrival probability, demanded slots, rewards.

    ``v`` and ``v0`` are the attraction values of the choice scenario and stay
    ``None`` for reject-or-accept instances.
    """

    p: float
    l: int
    r: int
    w: tuple[float, ...]
    v: tuple[float, ...] | None = None
    v0: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(x) for x in self.w))
        if self.v is not None:
            object.__setattr__(self, "v", tuple(float(x) for x in self.v))
        if self.v0 is not None:
            object.__setattr__(self, "v0", float(self.v0))

    @property
    def interval(self) -> Interval:
        return Interval(self.l, self.r)


@dataclass(frozen=True)
class Instance:
    scenario: Scenario
    M: int
    N: int
    T: int
    requests: tuple[RequestType, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "requests", tuple(self.requests))

    @property
    def is_choice(self) -> bool:
        return self.scenario is Scenario.CHOICE

    def revenue_cap(self) -> float:
        """Sum over periods of ``p_t * max_j w_tj``; bounds every policy's mean revenue."""
        return float(sum(rq.p * max(rq.w, default=0.0) for rq in self.requests))


@dataclass(frozen=True)
class Violation:
    path: str
    message: str


def _bad_number(x) -> bool:
    return not isinstance(x, (int, float)) or isinstance(x, bool) or not math.isfinite(x)


def validate(instance: Instance) -> list[Violation]:
    """Every invariant violation of ``instance``; an empty list means valid."""
    out: list[Violation] = []
    inst = instance
    if not isinstance(inst.M, int) or inst.M < 1:
        out.append(Violation("M", f"must be an integer >= 1, got {inst.M!r}"))
    if not isinstance(inst.N, int) or inst.N < 1:
        out.append(Violation("N", f"must be an integer >= 1, got {inst.N!r}"))
    if not isinstance(inst.T, int) or inst.T < 0:
        out.append(Violation("T", f"must be an integer >= 0, got {inst.T!r}"))
    if len(inst.requests) != inst.T:
        out.append(Violation("requests", f"length {len(inst.requests)} != T={inst.T}"))
    choice = inst.is_choice
    for t, rq in enumerate(inst.requests, start=1):
        at = f"requests[{t}]"
        if _bad_number(rq.p) or not 0.0 <= rq.p <= 1.0:
            out.append(Violation(f"{at}.p", f"must lie in [0,1], got {rq.p!r}"))
        if rq.l > rq.r:
            out.append(Violation(f"{at}.interval", f"lo > hi in [{rq.l},{rq.r}]"))
        elif rq.l < 1 or (isinstance(inst.N, int) and rq.r > inst.N):
            out.append(Violation(f"{at}.interval", f"[{rq.l},{rq.r}] not within [1,{inst.N}]"))
        if len(rq.w) != inst.M:
            out.append(Violation(f"{at}.w", f"length {len(rq.w)} != M={inst.M}"))
        for j, wj in enumerate(rq.w, start=1):
            if _bad_number(wj) or wj < 0:
                out.append(Violation(f"{at}.w[{j}]", f"must be finite and >= 0, got {wj!r}"))
        if choice:
            if rq.v is None or rq.v0 is None:
                out.append(Violation(f"{at}.v", "choice requests need v and v0"))
                continue
            if len(rq.v) != inst.M:
                out.append(Violation(f"{at}.v", f"length {len(rq.v)} != M={inst.M}"))
            for j, vj in enumerate(rq.v, start=1):
                if _bad_number(vj) or vj < 0:
                    out.append(Violation(f"{at}.v[{j}]", f"must be finite and >= 0, got {vj!r}"))
            if _bad_number(rq.v0) or rq.v0 < 0:
                out.append(Violation(f"{at}.v0", f"must be finite and >= 0, got {rq.v0!r}"))
        elif rq.v is not None or rq.v0 is not None:
            out.append(Violation(f"{at}.v", "reject-or-accept requests carry no attractions"))
    return out


def ensure_valid(instance: Instance) -> Instance:
    violations = validate(instance)
    if violations:
        raise InvalidInstance(violations)
    return instance


def reduce_to_choice(instance: Instance) -> Instance:
    """Choice instance with unit attractions and a zero outside option."""
    if instance.is_choice:
        raise WrongScenario("instance is already choice-based")
    requests = tuple(
        RequestType(p=rq.p, l=rq.l, r=rq.r, w=rq.w, v=(1.0,) * instance.M, v0=0.0)
        for rq in instance.requests
    )
    return Instance(Scenario.CHOICE, instance.M, instance.N, instance.T, requests)


# -- serialization -----------------------------------------------------------

_REQ_KEYS = {"p", "l", "r", "w", "v", "v0"}
_TOP_KEYS = {"scenario", "M", "N", "T", "requests"}


def instance_to_dict(instance: Instance) -> dict:
    reqs = []
    for rq in instance.requests:
        d = {"p": rq.p, "l": rq.l, "r": rq.r, "w": list(rq.w)}
        if instance.is_choice:
            d["v"] = list(rq.v)
            d["v0"] = rq.v0
        reqs.append(d)
    return {
        "scenario": instance.scenario.value,
        "M": instance.M,
        "N": instance.N,
        "T": instance.T,
        "requests": reqs,
    }


def instance_from_dict(data: dict) -> Instance:
    """Parse the JSON object form; unknown or missing fields raise ``ValueError``.

    Values are not range-checked here; call :func:`validate` for that.
    """
    extra = set(data) - _TOP_KEYS
    if extra:
        raise ValueError(f"unknown instance fields: {sorted(extra)}")
    missing = _TOP_KEYS - set(data)
    if missing:
        raise ValueError(f"missing instance fields: {sorted(missing)}")
    scenario = Scenario(data["scenario"])
    requests = []
    for t, rd in enumerate(data["requests"], start=1):
        extra = set(rd) - _REQ_KEYS
        if extra:
            raise ValueError(f"requests[{t}]: unknown fields {sorted(extra)}")
        need = {"p", "l", "r", "w"} | ({"v", "v0"} if scenario is Scenario.CHOICE else set())
        if need - set(rd):
            raise ValueError(f"requests[{t}]: missing fields {sorted(need - set(rd))}")
        requests.append(
            RequestType(
                p=float(rd["p"]),
                l=int(rd["l"]),
                r=int(rd["r"]),
                w=tuple(rd["w"]),
                v=tuple(rd["v"]) if "v" in rd else None,
                v0=rd.get("v0"),
            )
        )
    return Instance(scenario, int(data["M"]), int(data["N"]), int(data["T"]), tuple(requests))


def dumps_instance(instance: Instance) -> str:
    return json.dumps(instance_to_dict(instance), indent=1)


def loads_instance(text: str) -> Instance:
    return instance_from_dict(json.loads(text))


def load_instance(path) -> Instance:
    with open(path, encoding="utf-8") as fh:
        return ensure_valid(loads_instance(fh.read()))


def save_instance(instance: Instance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_instance(instance))
        fh.write("\n")


# -- generation --------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    """Ranges for random instances. Integer ranges are inclusive on both ends.

    Rewards are uniform on ``w_range``; each attraction is zero with
    probability ``zero_v_prob`` and otherwise uniform on ``v_range``. The
    outside attraction is uniform on ``v0_range``.
    """

    scenario: Scenario = Scenario.REJECT
    M: tuple[int, int] = (2, 2)
    N: tuple[int, int] = (4, 4)
    T: tuple[int, int] = (6, 6)
    p_range: tuple[float, float] = (0.3, 1.0)
    w_range: tuple[float, float] = (1.0, 10.0)
    v_range: tuple[float, float] = (0.1, 5.0)
    v0_range: tuple[float, float] = (0.1, 5.0)
    zero_v_prob: float = 0.1


def _check_range(name, rng, lo_bound=None, hi_bound=None):
    lo, hi = rng
    if lo > hi:
        raise BadSpec(f"{name}: empty range [{lo}, {hi}]")
    if lo_bound is not None and lo < lo_bound:
        raise BadSpec(f"{name}: lower end {lo} below {lo_bound}")
    if hi_bound is not None and hi > hi_bound:
        raise BadSpec(f"{name}: upper end {hi} above {hi_bound}")


def generate(seed: int, spec: GeneratorSpec = GeneratorSpec()) -> Instance:
    """Random instance, a pure function of ``(seed, spec)``."""
    _check_range("M", spec.M, 1)
    _check_range("N", spec.N, 1)
    _check_range("T", spec.T, 0)
    _check_range("p_range", spec.p_range, 0.0, 1.0)
    _check_range("w_range", spec.w_range, 0.0)
    _check_range("v_range", spec.v_range, 0.0)
    _check_range("v0_range", spec.v0_range, 0.0)
    if not 0.0 <= spec.zero_v_prob <= 1.0:
        raise BadSpec(f"zero_v_prob must lie in [0,1], got {spec.zero_v_prob}")

    rng = np.random.default_rng(seed)
    M = int(rng.integers(spec.M[0], spec.M[1] + 1))
    N = int(rng.integers(spec.N[0], spec.N[1] + 1))
    T = int(rng.integers(spec.T[0], spec.T[1] + 1))
    choice = Scenario(spec.scenario) is Scenario.CHOICE
    intervals = all_intervals(N)
    requests = []
    for _ in range(T):
        p = float(rng.uniform(*spec.p_range))
        iv = intervals[int(rng.integers(len(intervals)))]
        w = tuple(float(x) for x in rng.uniform(*spec.w_range, size=M))
        v = v0 = None
        if choice:
            raw = rng.uniform(*spec.v_range, size=M)
            zero = rng.random(M) < spec.zero_v_prob
            v = tuple(0.0 if z else float(x) for x, z in zip(raw, zero))
            v0 = float(rng.uniform(*spec.v0_range))
        requests.append(RequestType(p=p, l=iv.lo, r=iv.hi, w=w, v=v, v0=v0))
    return Instance(spec.scenario, M, N, T, tuple(requests))


def make_instance(
    scenario: str | Scenario,
    N: int,
    requests: Iterable[dict],
    M: int | None = None,
) -> Instance:
    """Small convenience constructor used by tests and examples.

    Each request dict holds ``p``, ``l``, ``r``, ``w`` (list or scalar) and for
    the choice scenario ``v`` and ``v0``.
    """
    reqs = []
    for d in requests:
        w = d["w"] if isinstance(d["w"], Sequence) else [d["w"]]
        v = d.get("v")
        if v is not None and not isinstance(v, Sequence):
            v = [v]
        reqs.append(RequestType(p=d["p"], l=d["l"], r=d["r"], w=tuple(w),
                                v=None if v is None else tuple(v), v0=d.get("v0")))
    if M is None:
        M = len(reqs[0].w) if reqs else 1
    inst = Instance(Scenario(scenario), M, N, len(reqs), tuple(reqs))
    return ensure_valid(inst)
