import numpy as np
import pytest

from consec_rm.core import GeneratorSpec, Interval, SlotState, generate, make_instance
from consec_rm.fluid import FluidSolution, solve_fluid
from consec_rm.policy_reject import RejectPolicy, init, proposal_ratios
from consec_rm.streams import KeyedStream


class Scripted:
    """Stream stub returning fixed draws per purpose."""

    def __init__(self, value=0.0):
        self.value = value

    def uniform(self, t, j, purpose):
        return self.value

    def uniforms(self, t, m, purpose):
        return [self.value] * m


def fixed_fluid(inst, ratio):
    """Fluid arrays with ``y = ratio * x * p`` on every feasible interval."""
    from consec_rm.core import all_intervals

    ivs = all_intervals(inst.N)
    M, T, K = inst.M, inst.T, len(ivs)
    x = np.ones((M, T, K))
    p = np.array([rq.p for rq in inst.requests])
    y = ratio * x * p[None, :, None]
    return FluidSolution(ivs, x, y, 0.0)


def two_copies(w=(7.0, 7.0)):
    return make_instance("reject", 3, [{"p": 1.0, "l": 1, "r": 2, "w": list(w)}], M=2)


def test_init_state():
    inst = generate(0, GeneratorSpec(M=(3, 3), N=(4, 4), T=(3, 3)))
    pol = init(inst, solve_fluid(inst))
    assert pol.virtual == pol.real == [SlotState.full(4)] * 3
    assert pol.period == 1 and pol.ledger.lower_bound_ok()


def test_proposal_probability_extremes():
    inst = two_copies()
    assert RejectPolicy(inst, fixed_fluid(inst, 1.0)).proposal_probability(1, 1) == 1.0
    assert RejectPolicy(inst, fixed_fluid(inst, 0.0)).proposal_probability(2, 1) == 0.0


def test_degenerate_cells_get_zero():
    inst = two_copies()
    fl = fixed_fluid(inst, 1.0)
    fl.x[:] = 0.0
    assert np.all(proposal_ratios(inst, fl) == 0.0)


def test_no_proposals_no_change():
    inst = two_copies()
    pol = RejectPolicy(inst, fixed_fluid(inst, 1.0))
    out = pol.allocation_stage(1, frozenset(), True, Scripted())
    assert out.revenue == 0.0 and out.chosen is None
    assert pol.real == pol.virtual == [SlotState.full(3)] * 2


def test_single_proposer_gets_request():
    inst = two_copies((1.0, 7.0))
    pol = RejectPolicy(inst, fixed_fluid(inst, 1.0))
    out = pol.allocation_stage(1, frozenset({2}), True, Scripted())
    assert out.revenue == 7.0 and out.allocated
    assert str(pol.real[1]) == str(pol.virtual[1]) == "001"
    assert str(pol.real[0]) == "111"


def test_tie_goes_to_lowest_index():
    inst = two_copies()
    pol = RejectPolicy(inst, fixed_fluid(inst, 1.0))
    out = pol.allocation_stage(1, frozenset({1, 2}), True, Scripted(0.0))
    assert out.chosen == 1
    # the other proposer downdates its virtual status on a p_t = 1 coin
    assert str(pol.virtual[1]) == "001" and str(pol.real[1]) == "111"


def test_unarrived_request_still_downdates_proposers():
    inst = two_copies()
    pol = RejectPolicy(inst, fixed_fluid(inst, 1.0))
    out = pol.allocation_stage(1, frozenset({1, 2}), False, Scripted(0.0))
    assert not out.allocated and out.revenue == 0.0
    assert str(pol.virtual[0]) == "111" and str(pol.virtual[1]) == "001"
    assert pol.real == [SlotState.full(3)] * 2


def test_period_order_enforced():
    inst = two_copies()
    pol = RejectPolicy(inst, fixed_fluid(inst, 1.0))
    with pytest.raises(ValueError):
        pol.proposal_stage(2, KeyedStream(0))


@pytest.mark.parametrize("seed", range(5))
def test_virtual_never_exceeds_real(seed):
    inst = generate(seed, GeneratorSpec(M=(2, 4), N=(3, 5), T=(5, 10)))
    fl = solve_fluid(inst)
    for e in range(30):
        pol = RejectPolicy(inst, fl)
        rng = KeyedStream(seed, e)
        for t in range(1, inst.T + 1):
            pol.step(t, rng.uniform(t, 0, 0) < inst.requests[t - 1].p, rng)
            assert pol.ledger.lower_bound_ok()


def test_proposal_marginal_matches_fluid():
    # at t = 1 the virtual state is full, so j proposes w.p. y/(x p) on [1, N]
    inst = generate(3, GeneratorSpec(M=(2, 2), N=(3, 3), T=(3, 3)))
    fl = solve_fluid(inst)
    k = fl.index(Interval(1, 3))
    n = 20_000
    hits = np.zeros(2)
    for e in range(n):
        pol = RejectPolicy(inst, fl)
        for j in pol.proposal_stage(1, KeyedStream(1, e)):
            hits[j - 1] += 1
    want = fl.y[:, 0, k] / (fl.x[:, 0, k] * inst.requests[0].p)
    sd = np.sqrt(want * (1 - want) / n) + 1e-12
    assert np.all(np.abs(hits / n - want) <= 4 * sd)
