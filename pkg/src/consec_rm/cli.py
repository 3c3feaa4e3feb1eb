"""Command-line interface: ``consec-rm <subcommand> [flags]``.

Exit status is 0 on success, 1 when a gate or verdict fails, 2 on usage,
input or IO errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys

import numpy as np

from .core import ConsecError, GeneratorSpec, SlotState, dumps_instance, generate, load_instance
from .fluid import build_lp, build_sblp, extract
from .lpsolve import solve, to_lp_text
from .oracle import ddp, exact_online_choice, exact_online_reject, naive_dp
from .policy_choice import (GAMMA, CouplerInput, bernoulli_product, coupler_exact_distribution,
                            random_coupler)
from .sim import evaluate, run_episode, trace_lines
from .verify import SUITES, dumps_report, run_suite

log = logging.getLogger("consec_rm")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_range(text: str) -> tuple[int, int]:
    """``"4"`` or ``"2,5"`` (inclusive)."""
    parts = [int(s) for s in text.split(",")]
    if len(parts) == 1:
        return parts[0], parts[0]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected N or LO,HI, got {text!r}")
    return parts[0], parts[1]


def _float_range(text: str) -> tuple[float, float]:
    parts = [float(s) for s in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return parts[0], parts[1]


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _default_seed() -> int:
    raw = os.environ.get("CONSEC_RM_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"CONSEC_RM_SEED must be an integer, got {raw!r}")


def build_parser(default_seed: int = 0) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=default_seed,
                        help="base seed (default: $CONSEC_RM_SEED or 0)")
    common.add_argument("--out", help="write the result here instead of stdout")
    common.add_argument("--format", choices=["json", "csv"], default="json")

    parser = argparse.ArgumentParser(
        prog="consec-rm",
        description="Consecutive-slot revenue management: instances, fluid bounds, oracles and policies.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a random instance")
    g.add_argument("--M", type=_int_range, default=(2, 2))
    g.add_argument("--N", type=_int_range, default=(4, 4))
    g.add_argument("--T", type=_int_range, default=(6, 6))
    g.add_argument("--scenario", choices=["reject", "choice"], default="reject")
    g.add_argument("--p-range", type=_float_range, default=(0.3, 1.0))
    g.add_argument("--w-range", type=_float_range, default=(1.0, 10.0))
    g.add_argument("--v-range", type=_float_range, default=(0.1, 5.0))
    g.add_argument("--v0-range", type=_float_range, default=(0.1, 5.0))
    g.add_argument("--zero-v-prob", type=float, default=0.1)

    for name, what in (("lp", "reject-or-accept fluid LP"), ("sblp", "sales-based LP")):
        s = sub.add_parser(name, parents=[common], help=f"build and solve the {what}")
        s.add_argument("--instance", required=True)
        s.add_argument("--dump-model", help="also write the model in CPLEX LP format")
        s.add_argument("--solver", choices=["auto", "simplex", "highs"], default="auto")

    o = sub.add_parser("oracle", parents=[common], help="exact optimal values")
    o.add_argument("--instance", required=True)
    o.add_argument("--kind", choices=["naive", "ddp", "exact-reject", "exact-choice"], required=True)

    m = sub.add_parser("simulate", parents=[common], help="Monte Carlo policy evaluation")
    m.add_argument("--instance", required=True)
    m.add_argument("--policy", choices=["reject", "choice", "ddp"], required=True)
    m.add_argument("--episodes", type=int, default=10_000)
    m.add_argument("--gamma", type=float, default=GAMMA)
    m.add_argument("--solver", choices=["auto", "simplex", "highs"], default="auto")
    m.add_argument("--trace", help="write the JSON-lines trace of episode 0 here")

    v = sub.add_parser("verify", parents=[common], help="run a verification battery")
    v.add_argument("--suite", choices=sorted(SUITES) + ["all"], default="all")
    v.add_argument("--trials", type=int)
    v.add_argument("--episodes", type=int)

    c = sub.add_parser("coupler-test", parents=[common], help="probe the coupling sampler")
    c.add_argument("--q", type=_floats, required=True)
    c.add_argument("--q-prime", type=_floats, required=True)
    c.add_argument("--trials", type=int, default=100_000)
    c.add_argument("--exact", action="store_true", help="also compare the exact law with the product")
    return parser


# -- handlers -----------------------------------------------------------------


def _no_csv(args):
    if args.format == "csv":
        raise UsageError(f"{args.command} has no flat table; use --format json")


def cmd_gen(args):
    _no_csv(args)
    spec = GeneratorSpec(scenario=args.scenario, M=args.M, N=args.N, T=args.T, p_range=args.p_range,
                         w_range=args.w_range, v_range=args.v_range, v0_range=args.v0_range,
                         zero_v_prob=args.zero_v_prob)
    return dumps_instance(generate(args.seed, spec)) + "\n", EXIT_OK


def cmd_fluid(args):
    inst = load_instance(args.instance)
    if (args.command == "sblp") != inst.is_choice:
        raise UsageError(f"{args.command} needs a {'choice' if args.command == 'sblp' else 'reject'} instance")
    fm = build_sblp(inst) if inst.is_choice else build_lp(inst)
    if args.dump_model:
        with open(args.dump_model, "w") as fh:
            fh.write(to_lp_text(fm.model))
    raw = solve(fm.model, args.solver)
    sol = extract(fm, raw)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        arrays = [("x", sol.x), ("y", sol.y)] + ([("y0", sol.y0)] if sol.is_sblp else [])
        w.writerow(["j", "t", "a", "b"] + [n for n, _ in arrays])
        M, T, _ = sol.x.shape
        for j in range(M):
            for t in range(T):
                for k, iv in enumerate(sol.intervals):
                    w.writerow([j + 1, t + 1, iv.lo, iv.hi] + [repr(float(a[j, t, k])) for _, a in arrays])
        return buf.getvalue(), EXIT_OK
    d = {"solver": raw.solver, "status": raw.status.value, "iterations": raw.iterations,
         "num_vars": fm.model.num_vars, "num_constraints": fm.model.num_constraints, **sol.to_dict()}
    return json.dumps(d, sort_keys=True, indent=1) + "\n", EXIT_OK


def cmd_oracle(args):
    _no_csv(args)
    inst = load_instance(args.instance)
    if args.kind == "naive":
        res = naive_dp(inst)
        value, visited = res.value, res.states_visited
    elif args.kind == "ddp":
        table = ddp(inst)
        value, visited = table.state_value(1, SlotState.full(inst.N)), inst.T * inst.N * (inst.N + 1) // 2
    elif args.kind == "exact-reject":
        res = exact_online_reject(inst)
        value, visited = res.value, res.states_visited
    else:
        res = exact_online_choice(inst)
        value, visited = res.value, res.states_visited
    d = {"kind": args.kind, "value": value, "states_visited": visited}
    return json.dumps(d, sort_keys=True, indent=1) + "\n", EXIT_OK


def cmd_simulate(args):
    inst = load_instance(args.instance)
    if args.episodes < 100:
        raise UsageError("--episodes must be at least 100")
    rep = evaluate(inst, args.policy, args.episodes, base_seed=args.seed, gamma=args.gamma, solver=args.solver)
    if args.trace:
        from .fluid import solve_fluid

        fluid = None if args.policy == "ddp" else solve_fluid(inst, args.solver)
        with open(args.trace, "w") as fh:
            fh.write(trace_lines(run_episode(inst, fluid, args.policy, args.seed, 0, args.gamma)))
    code = EXIT_OK if rep.verdict == "pass" else EXIT_FAIL
    if args.format == "csv":
        if args.policy == "ddp":
            raise UsageError("the ddp policy has no marginal table")
        return rep.marginal_csv(), code
    return rep.to_json() + "\n", code


def cmd_verify(args):
    _no_csv(args)
    report = run_suite(args.suite, args.seed, args.trials, args.episodes)
    return dumps_report(report), EXIT_OK if report["passed"] else EXIT_FAIL


def coupler_test(q, qp, trials: int, seed: int, exact: bool = False) -> dict:
    """Empirical inclusion frequencies of the sampler with ``j_tilde`` drawn from ``q'``."""
    M = len(q)
    inp = CouplerInput(q, qp, 0)
    if not all(0.0 <= x <= 1.0 for x in q + qp) or sum(qp) > 1.0 + 1e-12:
        raise UsageError("entries must lie in [0,1] and q' must sum to at most 1")
    rng = np.random.default_rng(seed)
    hits = np.zeros(M, dtype=np.int64)
    cum = np.cumsum(qp)
    for _ in range(trials):
        u = rng.random()
        jt = int(np.searchsorted(cum, u, side="right")) + 1
        jt = 0 if jt > M else jt
        for j in random_coupler(CouplerInput(q, qp, jt), rng.random(M)):
            hits[j - 1] += 1
    rows = []
    for j in range(M):
        freq = hits[j] / trials
        sd = math.sqrt(q[j] * (1 - q[j]) / trials)
        z = 0.0 if sd == 0 and freq == q[j] else (math.inf if sd == 0 else (freq - q[j]) / sd)
        rows.append({"j": j + 1, "q": q[j], "frequency": float(freq), "z": float(z)})
    out = {"trials": trials, "seed": seed, "regular_violation": inp.regular_violation(),
           "resources": rows, "passed": all(abs(r["z"]) <= 4.0 for r in rows)}
    if exact:
        got = coupler_exact_distribution(q, qp)
        want = bernoulli_product(q)
        err = max(abs(got[s] - want[s]) for s in want)
        out["exact_max_abs_error"] = err
        out["passed"] = out["passed"] and err <= 1e-12
    return out


def cmd_coupler(args):
    if len(args.q) != len(args.q_prime):
        raise UsageError("--q and --q-prime need the same length")
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    res = coupler_test(args.q, args.q_prime, args.trials, args.seed, args.exact)
    code = EXIT_OK if res["passed"] else EXIT_FAIL
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["j", "q", "frequency", "z"], lineterminator="\n")
        w.writeheader()
        w.writerows(res["resources"])
        return buf.getvalue(), code
    return json.dumps(res, sort_keys=True, indent=1) + "\n", code


HANDLERS = {"gen": cmd_gen, "lp": cmd_fluid, "sblp": cmd_fluid, "oracle": cmd_oracle,
            "simulate": cmd_simulate, "verify": cmd_verify, "coupler-test": cmd_coupler}


def main(argv=None) -> int:
    try:
        parser = build_parser(_default_seed())
    except UsageError as exc:
        print(f"consec-rm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text, code = HANDLERS[args.command](args)
    except (UsageError, OSError, ValueError, KeyError, ConsecError) as exc:
        # json.JSONDecodeError is a ValueError
        print(f"consec-rm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except OSError as exc:
        print(f"consec-rm: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return code


if __name__ == "__main__":
    sys.exit(main())
