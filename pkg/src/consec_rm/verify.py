"""Verification batteries.

Each suite draws its instances from seeds derived from one base seed, runs
the relevant oracle or simulation check, and returns a plain dict. Reports
contain no timings or other run-dependent fields, so serializing one with
:func:`dumps_report` gives the same bytes on every rerun.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .core import GeneratorSpec, Instance, SlotState, generate, reduce_to_choice
from .fluid import solve_fluid
from .oracle import (ddp, exact_online_choice, exact_online_reject, naive_value_table,
                     reachable_states)
from .policy_choice import CouplerInput, bernoulli_product, coupler_exact_distribution, random_coupler
from .sim import evaluate, independence_gate, marginal_gate

DECOMP_TOL = 1e-9
DOMINANCE_TOL = 1e-6
EXACT_TOL = 1e-12
REDUCTION_TOL = 1e-9


def instance_seed(seed: int, suite: str, i: int) -> int:
    """Per-suite, per-trial generator seed."""
    tag = sum((k + 1) * ord(c) for k, c in enumerate(suite))
    return (seed * 1_000_003 + tag * 10_007 + i) % (2**63)


def _instances(seed, suite, n, scenario, M, N, T):
    spec = GeneratorSpec(scenario=scenario, M=M, N=N, T=T)
    return [generate(instance_seed(seed, suite, i), spec) for i in range(n)]


def _shape(inst: Instance) -> dict:
    return {"M": inst.M, "N": inst.N, "T": inst.T}


# -- oracle suites ------------------------------------------------------------


def decomposability(trials: int = 100, seed: int = 0) -> dict:
    """Naive value equals the sum of interval values on every reachable state."""
    worst = 0.0
    checked = 0
    cases = []
    for i, inst in enumerate(_instances(seed, "decomposability", trials, "reject", (1, 1), (1, 6), (1, 8))):
        G = naive_value_table(inst)
        F = ddp(inst)
        err = 0.0
        reach = reachable_states(inst)
        for t in range(1, inst.T + 2):
            for s in sorted(reach[t]):
                err = max(err, float(abs(G[t, s] - F.state_value(t, SlotState.from_mask(s, inst.N)))))
                checked += 1
        worst = max(worst, err)
        cases.append({"trial": i, **_shape(inst), "max_abs_error": err})
    return {"suite": "decomposability", "seed": seed, "trials": trials, "tolerance": DECOMP_TOL,
            "states_checked": checked, "max_abs_error": worst, "passed": worst <= DECOMP_TOL, "cases": cases}


def ddp_optimality(trials: int = 20, seed: int = 0, episodes: int = 10_000) -> dict:
    """Simulated decomposed-DP policy revenue sits within three standard errors of the optimum."""
    cases = []
    for i, inst in enumerate(_instances(seed, "ddp-optimality", trials, "reject", (1, 1), (2, 6), (2, 8))):
        rep = evaluate(inst, "ddp", episodes, base_seed=instance_seed(seed, "ddp-sim", i))
        cases.append({"trial": i, **_shape(inst), "mean": rep.mean_revenue, "std_error": rep.std_error,
                      "optimum": rep.lp_bound, "passed": rep.verdict == "pass"})
    return {"suite": "ddp-optimality", "seed": seed, "trials": trials, "episodes": episodes,
            "passed": all(c["passed"] for c in cases), "cases": cases}


def lp_dominance(trials: int = 50, seed: int = 0, solver="auto") -> dict:
    cases = []
    for i, inst in enumerate(_instances(seed, "lp-dominance", trials, "reject", (1, 2), (1, 4), (1, 5))):
        lp = solve_fluid(inst, solver).objective
        opt = exact_online_reject(inst).value
        cases.append({"trial": i, **_shape(inst), "lp": lp, "online_opt": opt, "gap": lp - opt,
                      "passed": lp >= opt - DOMINANCE_TOL})
    return {"suite": "lp-dominance", "seed": seed, "trials": trials, "tolerance": DOMINANCE_TOL,
            "min_gap": min(c["gap"] for c in cases), "passed": all(c["passed"] for c in cases), "cases": cases}


def sblp_dominance(trials: int = 30, seed: int = 0, solver="auto") -> dict:
    cases = []
    for i, inst in enumerate(_instances(seed, "sblp-dominance", trials, "choice", (1, 2), (1, 3), (1, 4))):
        lp = solve_fluid(inst, solver).objective
        opt = exact_online_choice(inst).value
        cases.append({"trial": i, **_shape(inst), "sblp": lp, "online_opt": opt, "gap": lp - opt,
                      "passed": lp >= opt - DOMINANCE_TOL})
    return {"suite": "sblp-dominance", "seed": seed, "trials": trials, "tolerance": DOMINANCE_TOL,
            "min_gap": min(c["gap"] for c in cases), "passed": all(c["passed"] for c in cases), "cases": cases}


def reduction_equivalence(trials: int = 20, seed: int = 0, episodes: int = 10_000) -> dict:
    """Unit attractions with no outside option turn a reject instance into an equivalent choice one."""
    cases = []
    for i, inst in enumerate(_instances(seed, "lemma1-reduction", trials, "reject", (1, 2), (1, 3), (1, 4))):
        red = reduce_to_choice(inst)
        a = exact_online_reject(inst).value
        b = exact_online_choice(red).value
        rep = evaluate(red, "choice", episodes, base_seed=instance_seed(seed, "reduction-sim", i))
        ok = abs(a - b) <= REDUCTION_TOL and rep.verdict == "pass"
        cases.append({"trial": i, **_shape(inst), "reject_opt": a, "choice_opt": b, "abs_diff": abs(a - b),
                      "policy_mean": rep.mean_revenue, "ratio_lhs": rep.ratio_lhs, "sblp": rep.lp_bound,
                      "verdict": rep.verdict, "passed": ok})
    return {"suite": "lemma1-reduction", "seed": seed, "trials": trials, "episodes": episodes,
            "tolerance": REDUCTION_TOL, "passed": all(c["passed"] for c in cases), "cases": cases}


# -- simulation suites --------------------------------------------------------


def _sim_case(inst, kind, episodes, base_seed):
    rep = evaluate(inst, kind, episodes, base_seed=base_seed)
    return rep, {**_shape(inst), "policy": kind, "mean": rep.mean_revenue, "std_error": rep.std_error,
                 "bound": rep.lp_bound, "target": rep.ratio_target, "ratio_lhs": rep.ratio_lhs,
                 "violations": rep.invariant_violations, "passed": rep.verdict == "pass"}


def ratio_gates(trials: int = 10, seed: int = 0, episodes: int = 10_000) -> dict:
    cases = []
    for scenario in ("reject", "choice"):
        suite = f"ratio-gates-{scenario}"
        for i, inst in enumerate(_instances(seed, suite, trials, scenario, (1, 5), (2, 6), (5, 20))):
            _, case = _sim_case(inst, scenario, episodes, instance_seed(seed, suite + "-sim", i))
            cases.append({"trial": i, **case})
    return {"suite": "ratio-gates", "seed": seed, "trials": trials, "episodes": episodes,
            "passed": all(c["passed"] for c in cases), "cases": cases}


def designated_instances(seed: int = 0) -> dict[str, list[Instance]]:
    """Five small-to-medium instances per scenario for marginals, two tiny ones for independence."""
    out = {}
    for scenario in ("reject", "choice"):
        out[scenario] = _instances(seed, f"marginal-{scenario}", 5, scenario, (2, 3), (3, 5), (4, 10))
        out[f"{scenario}-tiny"] = _instances(seed, f"pairs-{scenario}", 2, scenario, (2, 2), (2, 3), (3, 4))
    return out


def marginal_suite(seed: int = 0, episodes: int = 100_000) -> dict:
    """Lower-bound, occupancy, marginal-frequency and pairwise-independence checks."""
    cases = []
    designated = designated_instances(seed)
    for scenario in ("reject", "choice"):
        for i, inst in enumerate(designated[scenario]):
            rep = evaluate(inst, scenario, episodes, base_seed=instance_seed(seed, f"marginal-sim-{scenario}", i))
            gate = marginal_gate(rep)
            clean = all(v == 0 for v in rep.invariant_violations.values())
            cases.append({"check": "marginal", "policy": scenario, "trial": i, **_shape(inst),
                          "cells": gate.checked, "within": gate.within, "exact_failures": gate.exact_failures,
                          "worst": gate.worst[:3], "violations": rep.invariant_violations,
                          "passed": gate.passed and clean})
        for i, inst in enumerate(designated[f"{scenario}-tiny"]):
            rep = evaluate(inst, scenario, episodes, base_seed=instance_seed(seed, f"pairs-sim-{scenario}", i),
                           track_pairs=True)
            gate = independence_gate(rep)
            clean = all(v == 0 for v in rep.invariant_violations.values())
            cases.append({"check": "independence", "policy": scenario, "trial": i, **_shape(inst),
                          "pairs": gate.checked, "within": gate.within, "worst": gate.worst[:3],
                          "violations": rep.invariant_violations, "passed": gate.passed and clean})
    return {"suite": "marginal-gate", "seed": seed, "episodes": episodes,
            "passed": all(c["passed"] for c in cases), "cases": cases}


# -- coupler ------------------------------------------------------------------


def random_valid_input(rng: np.random.Generator, M: int) -> tuple[list[float], list[float]]:
    """Draw ``(q, q')`` meeting the regularity condition."""
    mass = rng.uniform(0.0, 0.95)
    qp = [float(v) for v in rng.dirichlet(np.ones(M + 1))[:M] * mass]
    for j in range(M):
        if rng.random() < 0.15:
            qp[j] = 0.0
    q = [0.0] * M
    suffix = 0.0
    for j in range(M - 1, -1, -1):
        z = qp[j] / (1.0 - suffix)
        q[j] = float(z + rng.uniform() * (1.0 - z))
        suffix += qp[j]
    return q, qp


def _draw_pick(rng, qp):
    u = rng.random()
    cum = 0.0
    for j, v in enumerate(qp, start=1):
        cum += v
        if u < cum:
            return j
    return 0


def coupler_suite(seed: int = 0, inclusion_calls: int = 100_000, exact_draws: int = 1000,
                  mc_configs: int = 10, mc_calls: int = 100_000) -> dict:
    rng = np.random.default_rng(instance_seed(seed, "coupler", 0))

    misses = 0
    for _ in range(inclusion_calls):
        M = int(rng.integers(1, 6))
        q, qp = random_valid_input(rng, M)
        jt = int(rng.integers(1, M + 1))
        if jt not in random_coupler(CouplerInput(q, qp, jt), rng.random(M)):
            misses += 1
    inclusion = {"calls": inclusion_calls, "misses": misses, "passed": misses == 0}

    worst = 0.0
    for _ in range(exact_draws):
        M = int(rng.integers(1, 4))
        q, qp = random_valid_input(rng, M)
        got = coupler_exact_distribution(q, qp)
        want = bernoulli_product(q)
        worst = max(worst, float(max(abs(got[s] - want[s]) for s in want)))
    exact = {"draws": exact_draws, "max_abs_error": worst, "tolerance": EXACT_TOL, "passed": worst <= EXACT_TOL}

    configs = []
    for c in range(mc_configs):
        M = 1 + c % 4
        q, qp = random_valid_input(rng, M)
        hits = np.zeros(M, dtype=np.int64)
        for _ in range(mc_calls):
            jt = _draw_pick(rng, qp)
            for j in random_coupler(CouplerInput(q, qp, jt), rng.random(M)):
                hits[j - 1] += 1
        z = [_zscore(hits[j] / mc_calls, q[j], mc_calls) for j in range(M)]
        configs.append({"q": q, "q_prime": qp, "frequency": [float(v) for v in hits / mc_calls], "z": z,
                        "passed": all(abs(v) <= 4.0 for v in z)})
    mc = {"calls": mc_calls, "configs": configs, "passed": all(c["passed"] for c in configs)}
    return {"suite": "coupler-exact", "seed": seed, "inclusion": inclusion, "exact": exact,
            "monte_carlo": mc, "passed": inclusion["passed"] and exact["passed"] and mc["passed"]}


def _zscore(freq, p, n):
    sd = math.sqrt(p * (1 - p) / n)
    if sd == 0:
        return 0.0 if freq == p else math.inf
    return float((freq - p) / sd)


# -- dispatch -----------------------------------------------------------------

SUITES = {
    "decomposability": lambda seed, trials, episodes: decomposability(trials or 100, seed),
    "ddp-optimality": lambda seed, trials, episodes: ddp_optimality(trials or 20, seed, episodes or 10_000),
    "lp-dominance": lambda seed, trials, episodes: lp_dominance(trials or 50, seed),
    "sblp-dominance": lambda seed, trials, episodes: sblp_dominance(trials or 30, seed),
    "coupler-exact": lambda seed, trials, episodes: coupler_suite(seed, exact_draws=trials or 1000),
    "marginal-gate": lambda seed, trials, episodes: marginal_suite(seed, episodes or 100_000),
    "ratio-gates": lambda seed, trials, episodes: ratio_gates(trials or 10, seed, episodes or 10_000),
    "lemma1-reduction": lambda seed, trials, episodes: reduction_equivalence(trials or 20, seed, episodes or 10_000),
}


def run_suite(name: str, seed: int = 0, trials: int | None = None, episodes: int | None = None) -> dict:
    """Run one suite by name, or every suite for ``"all"``.

    ``trials`` and ``episodes`` override each suite's default when given.
    """
    if name == "all":
        reports = [SUITES[k](seed, trials, episodes) for k in SUITES]
        return {"suite": "all", "seed": seed, "passed": all(r["passed"] for r in reports), "suites": reports}
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES) + ['all']}")
    return SUITES[name](seed, trials, episodes)


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1, default=_jsonable) + "\n"


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
