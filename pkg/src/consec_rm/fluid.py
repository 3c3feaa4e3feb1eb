"""Fluid relaxations over (resource, period, maximal sequence) probabilities.

``build_lp`` gives the relaxation for the reject-or-accept scenario and
``build_sblp`` the sales-based one for the choice scenario. Both create a
variable for every interval ``[a,b]`` (no reachability pruning) in
lexicographic ``(j, t, a, b)`` order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ConsecError, Instance, Interval, WrongScenario, all_intervals
from .lpsolve import LpModel, LpSolution, Solver, Var, solve

TOL = 1e-7


class NotOptimal(ConsecError):
    pass


class InvariantBreach(ConsecError):
    def __init__(self, what: str, magnitude: float):
        self.what = what
        self.magnitude = magnitude
        super().__init__(f"{what}: violation {magnitude:.3g}")


class Mismatch(ConsecError):
    pass


@dataclass
class FluidModel:
    instance: Instance
    model: LpModel
    intervals: list[Interval]
    x: list[list[list[Var]]]
    y: list[list[list[Var]]]
    y0: list[list[list[Var]]] | None = None
    y_out: list[Var] | None = None


def _declare(model, prefix, M, T, intervals):
    return [
        [[model.add_var(f"{prefix}_{j}_{t}_{iv.lo}_{iv.hi}") for iv in intervals]
         for t in range(1, T + 1)]
        for j in range(1, M + 1)
    ]


def _common_rows(fm: FluidModel, online_terms, feasible):
    """Online, Feasibility, Balance and Boundary rows shared by both models."""
    inst, model, ivs = fm.instance, fm.model, fm.intervals
    N = inst.N
    full = Interval(1, N)
    pos = {iv: k for k, iv in enumerate(ivs)}
    for j in range(inst.M):
        for t in range(1, inst.T + 1):
            rq = inst.requests[t - 1]
            for k, iv in enumerate(ivs):
                tag = f"{j + 1}_{t}_{iv.lo}_{iv.hi}"
                sold = online_terms(j, t, k)
                model.add_constraint(sold + [(fm.x[j][t - 1][k], -rq.p)], "<=", 0.0, f"online_{tag}")
                model.add_constraint(sold, "<=", 1.0 if feasible(j, t, iv) else 0.0, f"feas_{tag}")
                if t == 1:
                    model.add_constraint([(fm.x[j][0][k], 1.0)], "=", 1.0 if iv == full else 0.0,
                                         f"boundary_{tag}")
                    continue
                prev = inst.requests[t - 2]
                l, r = prev.l, prev.r
                terms = [(fm.x[j][t - 1][k], 1.0), (fm.x[j][t - 2][k], -1.0),
                         (fm.y[j][t - 2][k], 1.0)]
                # left fragment [a, l-1] of a sold [a, b'] with r <= b' <= N
                if iv.hi + 1 == l:
                    for b2 in range(max(r, iv.lo), N + 1):
                        terms.append((fm.y[j][t - 2][pos[Interval(iv.lo, b2)]], -1.0))
                # right fragment [r+1, b] of a sold [a', b] with 1 <= a' <= l
                if r == iv.lo - 1:
                    for a2 in range(1, min(l, iv.hi) + 1):
                        terms.append((fm.y[j][t - 2][pos[Interval(a2, iv.hi)]], -1.0))
                model.add_constraint(terms, "=", 0.0, f"balance_{tag}")


def build_lp(instance: Instance) -> FluidModel:
    if instance.is_choice:
        raise WrongScenario("build_lp needs a reject-or-accept instance")
    M, T = instance.M, instance.T
    ivs = all_intervals(instance.N)
    model = LpModel("LP")
    fm = FluidModel(instance, model, ivs, _declare(model, "x", M, T, ivs), _declare(model, "y", M, T, ivs))

    def feasible(j, t, iv):
        return iv.contains(instance.requests[t - 1].interval)

    _common_rows(fm, lambda j, t, k: [(fm.y[j][t - 1][k], 1.0)], feasible)
    for t in range(1, T + 1):
        terms = [(fm.y[j][t - 1][k], 1.0) for j in range(M) for k in range(len(ivs))]
        model.add_constraint(terms, "<=", instance.requests[t - 1].p, f"capacity_{t}")
    model.set_objective(
        [(fm.y[j][t - 1][k], instance.requests[t - 1].w[j])
         for j in range(M) for t in range(1, T + 1) for k in range(len(ivs))]
    )
    return fm


def build_sblp(instance: Instance) -> FluidModel:
    if not instance.is_choice:
        raise WrongScenario("build_sblp needs a choice-based instance")
    M, T = instance.M, instance.T
    ivs = all_intervals(instance.N)
    model = LpModel("SBLP")
    fm = FluidModel(instance, model, ivs, _declare(model, "x", M, T, ivs), _declare(model, "y", M, T, ivs),
                    _declare(model, "yo", M, T, ivs))
    fm.y_out = [model.add_var(f"yout_{t}") for t in range(1, T + 1)]

    def feasible(j, t, iv):
        rq = instance.requests[t - 1]
        return iv.contains(rq.interval) and rq.v[j] > 0

    _common_rows(fm, lambda j, t, k: [(fm.y0[j][t - 1][k], 1.0), (fm.y[j][t - 1][k], 1.0)], feasible)
    K = len(ivs)
    for t in range(1, T + 1):
        rq = instance.requests[t - 1]
        terms = [(fm.y_out[t - 1], 1.0)] + [(fm.y[j][t - 1][k], 1.0) for j in range(M) for k in range(K)]
        model.add_constraint(terms, "=", rq.p, f"capacity_{t}")
        for j in range(M):
            for k, iv in enumerate(ivs):
                model.add_constraint([(fm.y[j][t - 1][k], rq.v0), (fm.y0[j][t - 1][k], -rq.v[j])], "=", 0.0,
                                     f"scale_{j + 1}_{t}_{iv.lo}_{iv.hi}")
            model.add_constraint([(fm.y0[j][t - 1][k], 1.0) for k in range(K)] + [(fm.y_out[t - 1], -1.0)],
                                 "<=", 0.0, f"optout_{j + 1}_{t}")
    model.set_objective(
        [(fm.y[j][t - 1][k], instance.requests[t - 1].w[j])
         for j in range(M) for t in range(1, T + 1) for k in range(K)]
    )
    return fm


@dataclass
class FluidSolution:
    """Optimal fluid values as arrays indexed ``[j - 1, t - 1, k]``.

    ``k`` indexes :attr:`intervals` (lexicographic ``[a, b]``).
    """

    intervals: list[Interval]
    x: np.ndarray
    y: np.ndarray
    objective: float
    y0: np.ndarray | None = None
    y_out: np.ndarray | None = None
    clamped: float = 0.0

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.x.shape

    @property
    def is_sblp(self) -> bool:
        return self.y0 is not None

    def index(self, iv: Interval) -> int:
        return self.intervals.index(iv)

    def to_dict(self) -> dict:
        def keyed(arr):
            M, T, _ = arr.shape
            return {f"{j + 1}:{t + 1}:{iv.lo}:{iv.hi}": float(arr[j, t, k])
                    for j in range(M) for t in range(T) for k, iv in enumerate(self.intervals)}

        d = {"N": self.intervals[-1].hi if self.intervals else 0, "M": self.x.shape[0],
             "T": self.x.shape[1], "objective": self.objective, "x": keyed(self.x), "y": keyed(self.y)}
        if self.is_sblp:
            d["y0"] = keyed(self.y0)
            d["y_out"] = {str(t + 1): float(v) for t, v in enumerate(self.y_out)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FluidSolution":
        M, N, T = int(d["M"]), int(d["N"]), int(d["T"])
        ivs = all_intervals(N)
        pos = {(iv.lo, iv.hi): k for k, iv in enumerate(ivs)}

        def unkey(m):
            arr = np.zeros((M, T, len(ivs)))
            for key, val in m.items():
                j, t, a, b = (int(s) for s in key.split(":"))
                arr[j - 1, t - 1, pos[(a, b)]] = val
            return arr

        y0 = unkey(d["y0"]) if "y0" in d else None
        y_out = np.array([d["y_out"][str(t + 1)] for t in range(T)]) if "y_out" in d else None
        return cls(ivs, unkey(d["x"]), unkey(d["y"]), float(d["objective"]), y0, y_out)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def extract(fm: FluidModel, solution: LpSolution) -> FluidSolution:
    """Map solver output back to arrays, clamp into [0, 1] and verify invariants."""
    if not solution.optimal:
        raise NotOptimal(f"solver status {solution.status.value}")
    inst = fm.instance
    M, T, K = inst.M, inst.T, len(fm.intervals)
    vals = solution.values

    def grab(handles):
        arr = np.zeros((M, T, K))
        for j in range(M):
            for t in range(T):
                for k in range(K):
                    arr[j, t, k] = vals[handles[j][t][k].index]
        return arr

    raw = {"x": grab(fm.x), "y": grab(fm.y)}
    if fm.y0 is not None:
        raw["y0"] = grab(fm.y0)
        raw["y_out"] = np.array([vals[v.index] for v in fm.y_out])
    clamped = 0.0
    out = {}
    for name, arr in raw.items():
        c = np.clip(arr, 0.0, 1.0)
        if arr.size:
            clamped = max(clamped, float(np.abs(c - arr).max()))
        out[name] = c
    if clamped > TOL:
        raise InvariantBreach("values outside [0, 1]", clamped)

    sol = FluidSolution(fm.intervals, out["x"], out["y"], float(solution.objective),
                        out.get("y0"), out.get("y_out"), clamped)
    worst, what = fluid_residuals(inst, sol)
    if worst > TOL:
        raise InvariantBreach(what, worst)
    return sol


def fluid_residuals(inst: Instance, sol: FluidSolution) -> tuple[float, str]:
    """Worst invariant residual of ``sol`` and the name of the offending family."""
    checks: list[tuple[float, str]] = [(0.0, "none")]
    if sol.x.size == 0:
        return 0.0, "none"
    p = np.array([rq.p for rq in inst.requests])
    sold = sol.y + (sol.y0 if sol.is_sblp else 0.0)
    checks.append((float((sold - sol.x * p[None, :, None]).max()), "online"))
    total = sol.y.sum(axis=(0, 2))
    if sol.is_sblp:
        checks.append((float(np.abs(total + sol.y_out - p).max()), "capacity"))
        v = np.array([rq.v for rq in inst.requests]).T  # (M, T)
        v0 = np.array([rq.v0 for rq in inst.requests])
        scale = v0[None, :, None] * sol.y - v[:, :, None] * sol.y0
        checks.append((float(np.abs(scale).max()), "scale"))
        checks.append((float((sol.y0.sum(axis=2) - sol.y_out[None, :]).max()), "opt-out"))
    else:
        checks.append((float((total - p).max()), "capacity"))
    boundary = np.zeros(len(sol.intervals))
    boundary[-1 if inst.N == 1 else sol.intervals.index(Interval(1, inst.N))] = 1.0
    checks.append((float(np.abs(sol.x[:, 0, :] - boundary[None, :]).max()), "boundary"))
    return max(checks)


def solve_fluid(instance: Instance, solver: str | Solver | None = "auto") -> FluidSolution:
    """Build the relaxation matching the instance's scenario, solve and extract."""
    fm = build_sblp(instance) if instance.is_choice else build_lp(instance)
    return extract(fm, solve(fm.model, solver))


def check_matches(instance: Instance, fluid: FluidSolution) -> None:
    if fluid.x.shape != (instance.M, instance.T, instance.N * (instance.N + 1) // 2):
        raise Mismatch(f"fluid shape {fluid.x.shape} does not fit M={instance.M}, T={instance.T}, N={instance.N}")
    if fluid.is_sblp != instance.is_choice:
        raise Mismatch("fluid model kind does not match the instance scenario")
