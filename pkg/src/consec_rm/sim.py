"""Monte Carlo evaluation of the policies.

Two paths produce the same numbers. :func:`run_episode` replays one episode
through the scalar policy objects and returns a trace; :func:`evaluate` runs
thousands of episodes at once on integer slot masks with numpy. Both draw
every random number from :mod:`consec_rm.streams`, so episode ``e`` of a
batch is identical to ``run_episode(..., episode=e)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import ConsecError, Instance, OccupiedSlot, SlotState, all_intervals, maximal_sequences
from .fluid import FluidSolution, check_matches, solve_fluid
from .oracle import TooLarge, ZeroDenominator, ddp, ddp_accept_table, ddp_policy_act, naive_dp
from .policy_choice import GAMMA, ChoicePolicy
from .policy_reject import RejectPolicy, proposal_ratios
from .streams import (ARRIVAL, ASSORT, COUPLER, CUSTOMER, DOWNDATE, PROPOSE, KeyedStream,
                      keyed_uniform)

RATIO_REJECT = 1.0 - 1.0 / math.e
RATIO_CHOICE = 0.125
MAX_BATCH_N = 16
EPS = 1e-12

VIOLATION_KEYS = ("lower_bound", "occupied_slot", "coupler_condition", "coupler_error", "infeasible_offer")


class LpNotOptimal(ConsecError):
    pass


def _policy_kind(instance: Instance, kind: str) -> str:
    kinds = {"reject", "choice", "ddp"}
    if kind not in kinds:
        raise ValueError(f"policy kind must be one of {sorted(kinds)}")
    if (kind == "choice") != instance.is_choice:
        raise ValueError(f"policy {kind!r} does not fit a {instance.scenario.value} instance")
    if kind == "ddp" and instance.M != 1:
        raise ValueError("the ddp policy needs a single-resource instance")
    return kind


# -- scalar replay ------------------------------------------------------------


@dataclass
class EpisodeResult:
    revenue: float
    trace: list[dict]
    violations: dict[str, int]


def run_episode(
    instance: Instance,
    fluid: FluidSolution | None,
    kind: str,
    seed: int,
    episode: int = 0,
    gamma: float = GAMMA,
) -> EpisodeResult:
    """Play one episode step by step, recording a trace line per period."""
    kind = _policy_kind(instance, kind)
    rng = KeyedStream(seed, episode)
    violations = dict.fromkeys(VIOLATION_KEYS, 0)
    trace: list[dict] = []
    revenue = 0.0
    if kind == "ddp":
        table = ddp(instance)
        state = SlotState.full(instance.N)
        for t, rq in enumerate(instance.requests, start=1):
            arrived = rng.uniform(t, 0, ARRIVAL) < rq.p
            accept = ddp_policy_act(table, t, state, arrived, rq)
            gained = 0.0
            if accept:
                state = _allocate_counted(state, rq.interval, violations)
                gained = rq.w[0]
                revenue += gained
            trace.append({"t": t, "arrived": arrived, "accepted": accept, "revenue": gained})
        return EpisodeResult(revenue, trace, violations)

    policy = ChoicePolicy(instance, fluid, gamma) if kind == "choice" else RejectPolicy(instance, fluid)
    for t, rq in enumerate(instance.requests, start=1):
        arrived = rng.uniform(t, 0, ARRIVAL) < rq.p
        try:
            out = policy.step(t, arrived, rng)
        except OccupiedSlot:
            violations["occupied_slot"] += 1
            policy.period = t + 1
            trace.append({"t": t, "arrived": arrived, "error": "occupied_slot"})
            continue
        except ZeroDenominator:
            violations["coupler_error"] += 1
            policy.period = t + 1
            trace.append({"t": t, "arrived": arrived, "error": "coupler_error"})
            continue
        if not policy.ledger.lower_bound_ok():
            violations["lower_bound"] += 1
        revenue += out.revenue
        if kind == "choice":
            violations["coupler_condition"] += 0 if out.regular else 1
            violations["infeasible_offer"] += 0 if out.feasible else 1
            trace.append({"t": t, "arrived": arrived, "proposals": sorted(out.proposals),
                          "assortment": sorted(out.assortment), "j_star": out.chosen,
                          "Q": sorted(out.update_set), "revenue": out.revenue})
        else:
            trace.append({"t": t, "arrived": arrived, "proposals": sorted(out.proposals),
                          "j_star": out.chosen or 0, "allocated": out.allocated,
                          "revenue": out.revenue})
    return EpisodeResult(revenue, trace, violations)


def _allocate_counted(state, iv, violations):
    from .core import allocate

    try:
        return allocate(state, iv)
    except OccupiedSlot:
        violations["occupied_slot"] += 1
        return state


def trace_lines(result: EpisodeResult) -> str:
    return "".join(json.dumps(row) + "\n" for row in result.trace)


# -- batch engine -------------------------------------------------------------


class _Tables:
    """Mask lookups shared by all episodes of one instance."""

    def __init__(self, instance: Instance):
        N = instance.N
        if N > MAX_BATCH_N:
            raise TooLarge(f"batch simulation supports N <= {MAX_BATCH_N}, got {N}")
        self.intervals = all_intervals(N)
        pos = {iv: k for k, iv in enumerate(self.intervals)}
        K = len(self.intervals)
        size = 1 << N
        self.indicator = np.zeros((size, K), dtype=np.int64)
        seqs = []
        for s in range(size):
            ms = maximal_sequences(SlotState.from_mask(s, N))
            seqs.append(ms)
            for iv in ms:
                self.indicator[s, pos[iv]] = 1
        self.req_mask = [rq.interval.mask() for rq in instance.requests]
        cache: dict[tuple[int, int], np.ndarray] = {}
        self.containing = []
        for rq in instance.requests:
            key = (rq.l, rq.r)
            if key not in cache:
                look = np.full(size, -1, dtype=np.int64)
                for s, ms in enumerate(seqs):
                    for iv in ms:
                        if iv.contains(rq.interval):
                            look[s] = pos[iv]
                cache[key] = look
            self.containing.append(cache[key])


@dataclass
class BatchResult:
    revenues: np.ndarray
    violations: dict[str, int]
    marginal_counts: np.ndarray | None = None  # (M, T, K)
    pair_counts: dict | None = None  # (j, k) -> (T, K, K)


def _record(tables, virt, counts, pairs, t):
    size = tables.indicator.shape[0]
    M = virt.shape[1]
    for j in range(M):
        hist = np.bincount(virt[:, j], minlength=size)
        counts[j, t - 1] += hist @ tables.indicator
    if pairs is not None:
        for (j, k), arr in pairs.items():
            joint = np.bincount(virt[:, j] * size + virt[:, k], minlength=size * size).reshape(size, size)
            arr[t - 1] += tables.indicator.T @ joint @ tables.indicator


def simulate_batch(
    instance: Instance,
    fluid: FluidSolution | None,
    kind: str,
    seed: int,
    episodes: np.ndarray,
    gamma: float = GAMMA,
    track_pairs: bool = False,
    tables: _Tables | None = None,
) -> BatchResult:
    """Run the given episode numbers side by side and return per-episode revenue."""
    kind = _policy_kind(instance, kind)
    tables = tables or _Tables(instance)
    E = len(episodes)
    M, T = instance.M, instance.T
    K = len(tables.intervals)
    full = (1 << instance.N) - 1
    virt = np.full((E, M), full, dtype=np.int64)
    real = np.full((E, M), full, dtype=np.int64)
    rev = np.zeros(E)
    viol = dict.fromkeys(VIOLATION_KEYS, 0)
    counts = np.zeros((M, T, K), dtype=np.int64) if kind != "ddp" else None
    pairs = None
    if track_pairs and kind != "ddp":
        pairs = {(j, k): np.zeros((T, K, K), dtype=np.int64) for j in range(M) for k in range(j + 1, M)}
    cols = np.arange(M)

    if kind == "ddp":
        accept = ddp_accept_table(instance, ddp(instance))
    else:
        ratios = proposal_ratios(instance, fluid)

    for t, rq in enumerate(instance.requests, start=1):
        m = tables.req_mask[t - 1]
        arrived = keyed_uniform(seed, episodes, t, 0, ARRIVAL) < rq.p
        if kind == "ddp":
            take = arrived & accept[t][real[:, 0]]
            real[:, 0] = np.where(take, real[:, 0] ^ m, real[:, 0])
            rev = np.where(take, rev + rq.w[0], rev)
            continue

        _record(tables, virt, counts, pairs, t)
        k = tables.containing[t - 1][virt]
        prob = np.where(k >= 0, ratios[cols[None, :], t - 1, np.maximum(k, 0)], 0.0)
        u_prop = np.stack([keyed_uniform(seed, episodes, t, j, PROPOSE) for j in range(1, M + 1)], axis=1)
        proposed = u_prop < prob
        w = np.asarray(rq.w)

        if kind == "reject":
            score = np.where(proposed, w[None, :], -np.inf)
            jstar = np.argmax(score, axis=1)
            anyp = proposed.any(axis=1)
            is_star = (cols[None, :] == jstar[:, None]) & anyp[:, None]
            alloc = anyp & arrived
            u_down = np.stack([keyed_uniform(seed, episodes, t, j, DOWNDATE) for j in range(1, M + 1)], axis=1)
            update = (is_star & arrived[:, None]) | (proposed & ~is_star & (u_down < rq.p))
            chosen = np.where(alloc, jstar + 1, 0)
        else:
            v = np.asarray(rq.v)
            u_as = np.stack([keyed_uniform(seed, episodes, t, j, ASSORT) for j in range(1, M + 1)], axis=1)
            offered = proposed & (u_as < gamma)
            denom = np.full(E, rq.v0)
            for j in range(M):
                denom = denom + np.where(offered[:, j], v[j], 0.0)
            threshold = keyed_uniform(seed, episodes, t, 0, CUSTOMER) * denom
            chosen = np.zeros(E, dtype=np.int64)
            cum = np.zeros(E)
            for j in range(M):
                cum = cum + np.where(offered[:, j], v[j], 0.0)
                hit = (chosen == 0) & offered[:, j] & (threshold < cum)
                chosen = np.where(hit, j + 1, chosen)
            if rq.v0 == 0:
                # rounding fallback mirrors the scalar path: last offered resource
                last = np.where(offered.any(axis=1), M - np.argmax(offered[:, ::-1], axis=1), 0)
                chosen = np.where((chosen == 0) & offered.any(axis=1), last, chosen)
            chosen = np.where(arrived, chosen, 0)

            q = np.zeros((E, M))
            qp = np.zeros((E, M))
            for j in range(M):
                if v[j] > 0:
                    q[:, j] = np.where(proposed[:, j], rq.p * v[j] / (rq.v0 + v[j]), 0.0)
                with np.errstate(divide="ignore", invalid="ignore"):
                    qp[:, j] = np.where(offered[:, j], rq.p * v[j] / denom, 0.0)
            u_cp = np.stack([keyed_uniform(seed, episodes, t, j, COUPLER) for j in range(1, M + 1)], axis=1)
            update = np.zeros((E, M), dtype=bool)
            suffix = np.zeros(E)
            regular_bad = np.zeros(E, dtype=bool)
            err = np.zeros(E, dtype=bool)
            with np.errstate(divide="ignore", invalid="ignore"):
                for j in range(M - 1, -1, -1):
                    rest = 1.0 - suffix
                    z = qp[:, j] / rest
                    regular_bad |= np.where(rest > EPS, z - q[:, j] > EPS, qp[:, j] > 0)
                    upper = chosen < j + 1
                    err |= upper & ((rest <= EPS) | (z >= 1.0 - EPS))
                    hi = np.clip((q[:, j] - z) / (1.0 - z), 0.0, 1.0)
                    update[:, j] = np.where(upper, u_cp[:, j] < hi,
                                            np.where(chosen == j + 1, True, u_cp[:, j] < q[:, j]))
                    suffix = suffix + qp[:, j]
            viol["coupler_condition"] += int(regular_bad.sum())
            viol["coupler_error"] += int(err.sum())
            fits_real = (real & m) == m
            viol["infeasible_offer"] += int((offered & ~fits_real).any(axis=1).sum())
            # a coupler error aborts the step, as in the scalar path
            update &= ~err[:, None]
            alloc = (chosen > 0) & ~err
            jstar = np.maximum(chosen - 1, 0)

        # virtual updates must hit fully available slots
        hit = update & ((virt & m) != m)
        viol["occupied_slot"] += int(hit.sum())
        virt = np.where(update & ~hit, virt ^ m, virt)
        rows = np.nonzero(alloc)[0]
        if rows.size:
            cur = real[rows, jstar[rows]]
            ok = (cur & m) == m
            viol["occupied_slot"] += int((~ok).sum())
            real[rows[ok], jstar[rows[ok]]] = cur[ok] ^ m
            gain = np.zeros(E)
            gain[rows] = w[jstar[rows]]
            rev = np.where(alloc, rev + gain, rev)
        viol["lower_bound"] += int(((virt & ~real) != 0).any(axis=1).sum())

    return BatchResult(rev, viol, counts, pairs)


# -- reports ------------------------------------------------------------------


@dataclass
class SimReport:
    kind: str
    episodes: int
    base_seed: int
    mean_revenue: float
    std_error: float
    lp_bound: float
    bound_kind: str
    ratio_target: float
    ratio_lhs: float
    verdict: str
    invariant_violations: dict[str, int]
    marginal_table: list[dict] = field(default_factory=list)
    pair_table: list[dict] = field(default_factory=list)

    def to_dict(self, tables: bool = False) -> dict:
        d = asdict(self)
        if not tables:
            d.pop("marginal_table")
            d.pop("pair_table")
        return d

    def to_json(self, tables: bool = False) -> str:
        return json.dumps(self.to_dict(tables), sort_keys=True, indent=1)

    def marginal_csv(self) -> str:
        buf = io.StringIO()
        cols = ["j", "t", "a", "b", "x", "empirical", "z"]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.marginal_table:
            writer.writerow({c: row[c] for c in cols})
        return buf.getvalue()


def _z(emp, x, n):
    sd = math.sqrt(x * (1 - x) / n)
    if sd == 0:
        return 0.0 if emp == x else math.inf
    return (emp - x) / sd


def evaluate(
    instance: Instance,
    kind: str,
    episodes: int = 10_000,
    base_seed: int = 0,
    gamma: float = GAMMA,
    fluid: FluidSolution | None = None,
    solver="auto",
    track_pairs: bool = False,
    chunk: int = 25_000,
) -> SimReport:
    """Solve the matching fluid model once and run ``episodes`` independent episodes.

    For ``kind="ddp"`` the bound is the exact single-resource optimum and the
    verdict is two-sided: the mean must lie within three standard errors of it.
    """
    kind = _policy_kind(instance, kind)
    if episodes < 100:
        raise ValueError("evaluate needs at least 100 episodes")
    if kind == "ddp":
        bound, bound_kind, target = naive_dp(instance).value, "DP", 1.0
    else:
        if fluid is None:
            try:
                fluid = solve_fluid(instance, solver)
            except ConsecError as exc:
                raise LpNotOptimal(str(exc)) from exc
        check_matches(instance, fluid)
        bound = fluid.objective
        bound_kind = "SBLP" if kind == "choice" else "LP"
        target = RATIO_CHOICE if kind == "choice" else RATIO_REJECT

    tables = _Tables(instance)
    revs = []
    viol = dict.fromkeys(VIOLATION_KEYS, 0)
    counts = None
    pairs = None
    for start in range(0, episodes, chunk):
        eps = np.arange(start, min(start + chunk, episodes), dtype=np.uint64)
        res = simulate_batch(instance, fluid, kind, base_seed, eps, gamma, track_pairs, tables)
        revs.append(res.revenues)
        for key, val in res.violations.items():
            viol[key] += val
        if res.marginal_counts is not None:
            counts = res.marginal_counts if counts is None else counts + res.marginal_counts
        if res.pair_counts is not None:
            if pairs is None:
                pairs = res.pair_counts
            else:
                for key in pairs:
                    pairs[key] = pairs[key] + res.pair_counts[key]
    rev = np.concatenate(revs)
    mean = float(rev.mean())
    se = float(rev.std(ddof=1) / math.sqrt(episodes))
    lhs = mean - 3 * se
    clean = all(v == 0 for v in viol.values())
    if kind == "ddp":
        ok = abs(mean - bound) <= 3 * se + 1e-9
    else:
        ok = lhs >= target * bound
    report = SimReport(kind, episodes, base_seed, mean, se, float(bound), bound_kind, target, lhs,
                       "pass" if ok and clean else "fail", viol)
    if counts is not None:
        report.marginal_table = _marginal_rows(fluid, counts, episodes)
    if pairs is not None:
        report.pair_table = _pair_rows(fluid, counts, pairs, episodes)
    return report


def _marginal_rows(fluid, counts, n):
    rows = []
    M, T, K = counts.shape
    for j in range(M):
        for t in range(T):
            for k, iv in enumerate(fluid.intervals):
                x = float(fluid.x[j, t, k])
                emp = counts[j, t, k] / n
                rows.append({"j": j + 1, "t": t + 1, "a": iv.lo, "b": iv.hi, "x": x,
                             "empirical": float(emp), "z": _z(emp, min(max(x, 0.0), 1.0), n)})
    return rows


def _pair_rows(fluid, counts, pairs, n):
    rows = []
    for (j, k), arr in sorted(pairs.items()):
        T, K, _ = arr.shape
        for t in range(T):
            for a in range(K):
                mj = counts[j, t, a] / n
                if not 0 < mj < 1:
                    continue
                for c in range(K):
                    mk = counts[k, t, c] / n
                    if not 0 < mk < 1:
                        continue
                    prod = mj * mk
                    joint = arr[t, a, c] / n
                    se = math.sqrt(prod * (1 - prod) / n)
                    iv_a, iv_c = fluid.intervals[a], fluid.intervals[c]
                    rows.append({"j": j + 1, "k": k + 1, "t": t + 1, "seq_j": str(iv_a), "seq_k": str(iv_c),
                                 "joint": float(joint), "product": float(prod), "z": (joint - prod) / se})
    return rows


@dataclass
class GateResult:
    passed: bool
    checked: int
    within: int
    exact_failures: int
    worst: list[dict]

    def to_dict(self) -> dict:
        return asdict(self)


def marginal_gate(report: SimReport, sigmas: float = 4.0, pass_rate: float = 0.99,
                  edge: float = 1e-9) -> GateResult:
    """Compare empirical maximal-sequence frequencies with the fluid ``x``.

    Cells with ``x`` in ``(0, 1)`` pass when within ``sigmas`` binomial
    standard deviations; at least ``pass_rate`` of them must. Cells with
    ``x = 0`` or ``x = 1`` (to within ``edge``) must match exactly.
    """
    if report.episodes < 10_000:
        raise ValueError("the marginal gate needs at least 10^4 episodes")
    interior = [r for r in report.marginal_table if edge < r["x"] < 1 - edge]
    exact_bad = [r for r in report.marginal_table
                 if (r["x"] <= edge and r["empirical"] != 0.0)
                 or (r["x"] >= 1 - edge and r["empirical"] != 1.0)]
    within = sum(1 for r in interior if abs(r["z"]) <= sigmas)
    rate = within / len(interior) if interior else 1.0
    worst = sorted(interior, key=lambda r: -abs(r["z"]))[:10]
    return GateResult(rate >= pass_rate and not exact_bad, len(interior), within, len(exact_bad), worst)


def independence_gate(report: SimReport, sigmas: float = 4.0) -> GateResult:
    rows = report.pair_table
    within = sum(1 for r in rows if abs(r["z"]) <= sigmas)
    worst = sorted(rows, key=lambda r: -abs(r["z"]))[:10]
    return GateResult(within == len(rows), len(rows), within, 0, worst)
