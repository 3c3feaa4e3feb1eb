import csv
import io
import json

import numpy as np
import pytest

from consec_rm.core import GeneratorSpec, generate, make_instance
from consec_rm.fluid import solve_fluid
from consec_rm.oracle import TooLarge, naive_dp
from consec_rm.sim import (RATIO_CHOICE, RATIO_REJECT, evaluate, independence_gate, marginal_gate,
                           run_episode, simulate_batch, trace_lines)


@pytest.mark.parametrize("scenario", ["reject", "choice"])
@pytest.mark.parametrize("seed", range(4))
def test_batch_equals_scalar_replay(scenario, seed):
    inst = generate(seed, GeneratorSpec(scenario=scenario, M=(1, 4), N=(2, 5), T=(3, 9)))
    fl = solve_fluid(inst)
    eps = np.arange(150, dtype=np.uint64)
    batch = simulate_batch(inst, fl, scenario, 11, eps)
    for e in range(150):
        assert run_episode(inst, fl, scenario, 11, e).revenue == batch.revenues[e]


def test_batch_equals_scalar_for_ddp():
    inst = generate(5, GeneratorSpec(M=(1, 1), N=(4, 4), T=(8, 8)))
    batch = simulate_batch(inst, None, "ddp", 2, np.arange(100, dtype=np.uint64))
    for e in range(100):
        assert run_episode(inst, None, "ddp", 2, e).revenue == batch.revenues[e]


def test_zero_arrivals():
    inst = make_instance("reject", 3, [{"p": 0.0, "l": 1, "r": 2, "w": [4, 5]}] * 4, M=2)
    rep = evaluate(inst, "reject", 200)
    assert rep.mean_revenue == 0.0 and rep.std_error == 0.0
    res = run_episode(inst, solve_fluid(inst), "reject", 0)
    assert res.revenue == 0.0 and not any(row["allocated"] for row in res.trace)


def test_single_period_sure_sale():
    inst = make_instance("reject", 1, [{"p": 1.0, "l": 1, "r": 1, "w": 6.5}])
    assert run_episode(inst, solve_fluid(inst), "reject", 3).revenue == 6.5
    assert evaluate(inst, "ddp", 100).mean_revenue == 6.5


def test_traces_are_deterministic():
    inst = generate(2, GeneratorSpec(scenario="choice", M=(3, 3), N=(4, 4), T=(6, 6)))
    fl = solve_fluid(inst)
    a = trace_lines(run_episode(inst, fl, "choice", 5, 7))
    assert a == trace_lines(run_episode(inst, fl, "choice", 5, 7))
    row = json.loads(a.splitlines()[0])
    assert set(row) == {"t", "arrived", "proposals", "assortment", "j_star", "Q", "revenue"}


def test_reject_trace_fields():
    inst = generate(2, GeneratorSpec(M=(2, 2), N=(3, 3), T=(3, 3)))
    row = run_episode(inst, solve_fluid(inst), "reject", 0).trace[0]
    assert set(row) == {"t", "arrived", "proposals", "j_star", "allocated", "revenue"}


@pytest.mark.parametrize("scenario", ["reject", "choice"])
def test_report_contents(scenario):
    inst = generate(8, GeneratorSpec(scenario=scenario, M=(2, 3), N=(3, 4), T=(4, 8)))
    rep = evaluate(inst, scenario, 2000, base_seed=4)
    assert 0.0 <= rep.mean_revenue <= inst.revenue_cap()
    assert rep.ratio_lhs == pytest.approx(rep.mean_revenue - 3 * rep.std_error)
    assert rep.ratio_target == (RATIO_CHOICE if scenario == "choice" else RATIO_REJECT)
    assert all(v == 0 for v in rep.invariant_violations.values())
    assert rep.verdict == ("pass" if rep.ratio_lhs >= rep.ratio_target * rep.lp_bound else "fail")
    d = json.loads(rep.to_json())
    assert d["verdict"] == rep.verdict and "marginal_table" not in d
    rows = list(csv.DictReader(io.StringIO(rep.marginal_csv())))
    assert len(rows) == inst.M * inst.T * inst.N * (inst.N + 1) // 2


def test_reproducible_reports():
    inst = generate(1, GeneratorSpec(scenario="choice", M=(2, 2), N=(3, 3), T=(5, 5)))
    a = evaluate(inst, "choice", 3000, base_seed=9)
    b = evaluate(inst, "choice", 3000, base_seed=9)
    assert a.to_json(tables=True) == b.to_json(tables=True)
    c = evaluate(inst, "choice", 3000, base_seed=9, chunk=700)
    assert c.to_json(tables=True) == a.to_json(tables=True)


def test_first_period_cells_are_exact():
    inst = generate(6, GeneratorSpec(M=(2, 2), N=(3, 3), T=(4, 4)))
    rep = evaluate(inst, "reject", 10_000)
    first = [r for r in rep.marginal_table if r["t"] == 1]
    for r in first:
        want = 1.0 if (r["a"], r["b"]) == (1, 3) else 0.0
        assert r["x"] == want and r["empirical"] == want
    gate = marginal_gate(rep)
    assert gate.passed and gate.exact_failures == 0 and len(gate.worst) <= 10


def test_marginal_gate_needs_many_episodes():
    inst = generate(6, GeneratorSpec(M=(2, 2), N=(3, 3), T=(4, 4)))
    with pytest.raises(ValueError):
        marginal_gate(evaluate(inst, "reject", 500))


def test_independence_gate_on_tiny_instance():
    inst = generate(4, GeneratorSpec(M=(2, 2), N=(2, 2), T=(3, 3)))
    rep = evaluate(inst, "reject", 20_000, track_pairs=True)
    gate = independence_gate(rep)
    assert gate.passed and gate.checked == len(rep.pair_table)


def test_ddp_matches_optimum():
    inst = generate(3, GeneratorSpec(M=(1, 1), N=(5, 5), T=(8, 8)))
    rep = evaluate(inst, "ddp", 10_000)
    assert rep.lp_bound == naive_dp(inst).value
    assert abs(rep.mean_revenue - rep.lp_bound) <= 3 * rep.std_error
    assert rep.verdict == "pass"


def test_argument_checks():
    inst = generate(0, GeneratorSpec(M=(2, 2)))
    with pytest.raises(ValueError):
        evaluate(inst, "reject", 50)
    with pytest.raises(ValueError):
        evaluate(inst, "choice", 200)
    with pytest.raises(ValueError):
        evaluate(inst, "ddp", 200)
    big = make_instance("reject", 17, [{"p": 1, "l": 1, "r": 1, "w": 1}])
    with pytest.raises(TooLarge):
        evaluate(big, "reject", 100)


def test_lower_sale_rate_than_fluid_on_hard_instance():
    # a request that fits only when the earlier one was refused
    inst = make_instance("reject", 2, [{"p": 0.5, "l": 1, "r": 2, "w": 1.0}, {"p": 1.0, "l": 1, "r": 1, "w": 1.0}])
    rep = evaluate(inst, "reject", 10_000)
    assert rep.mean_revenue <= rep.lp_bound + 3 * rep.std_error
    assert rep.verdict == "pass"
    k = [r for r in rep.marginal_table if r["t"] == 2 and (r["a"], r["b"]) == (1, 2)][0]
    assert abs(k["z"]) <= 4
