import numpy as np
import pytest
from hypothesis import given, strategies as st

from v2xsim.core import MS, US, ConfigError
from v2xsim.nrv2x import (DualRatPolicy, GateDecision, HarqParams, Numerology, PreemptionIndication, Radio,
                          SlotGrant, choose_victim, dmrs_symbols, dual_rat_gate, harq_cycle, mode2d_schedule,
                          nr_grid, receiver_busy_ns, sensing_window_ms, slot_timing)
from v2xsim.runner import simulate

from _builders import dual_config, nr_config, preemption_trial


@pytest.mark.parametrize("mu,slot_us,scs", [(0, 1000, 15), (1, 500, 30), (2, 250, 60)])
def test_numerology_slots(mu, slot_us, scs):
    n = Numerology(mu)
    assert n.slot_ns == slot_us * US
    assert n.scs_khz == scs


def test_numerology_bounds():
    with pytest.raises(ConfigError):
        Numerology(3)


@given(st.integers(0, 13), st.integers(1, 14), st.sampled_from([0, 1, 2]))
def test_mini_slot_inside_slot(start, count, mu):
    if start + count > 14:
        with pytest.raises(ConfigError):
            SlotGrant.mini(start, count)
        return
    num = Numerology(mu)
    t0, dur = slot_timing(num, SlotGrant.mini(start, count, slot=3))
    assert 3 * num.slot_ns <= t0 and t0 + dur <= 4 * num.slot_ns
    assert dur > 0


def test_mini_slot_starts_on_symbol_boundary():
    num = Numerology(0)
    t0, _ = slot_timing(num, SlotGrant.mini(7, 2))
    assert t0 == num.slot_ns // 2


def test_multi_slot_duration():
    num = Numerology(1)
    assert slot_timing(num, SlotGrant.multi(3, slot=2)) == (2 * num.slot_ns, 3 * num.slot_ns)


def test_dmrs_and_grid():
    assert [dmrs_symbols(m) for m in (0, 1, 2)] == [4, 3, 2]
    g = nr_grid(2)
    assert g.slot_ns == 250 * US and g.ctrl_symbols == 2


def test_sensing_window_shrinks_with_speed():
    assert sensing_window_ms(0) == 1000
    assert sensing_window_ms(70 / 3.6) > sensing_window_ms(250 / 3.6) >= 200


def test_unaddressed_receiver_decodes_control_only():
    num = Numerology(0)
    assert receiver_busy_ns(num, False) < receiver_busy_ns(num, True) == num.slot_ns


# -- mode 2(d) ---------------------------------------------------------------

@given(st.lists(st.integers(0, 3), min_size=1, max_size=12), st.integers(1, 30), st.integers(0, 99))
def test_mode2d_grants_pairwise_distinct(demand_list, pool_size, seed):
    members = list(range(len(demand_list)))
    demands = dict(zip(members, demand_list))
    pool = [(s, 0) for s in range(pool_size)]
    res = mode2d_schedule(0, members, demands, pool, rng=np.random.default_rng(seed))
    cells = [c for g in res.grants.values() for c in g]
    assert len(cells) == len(set(cells))
    for m, g in res.grants.items():
        assert len(g) == demands[m]
    assert set(res.grants) | set(res.deferred) == {m for m in members if demands[m] > 0}


def test_mode2d_defers_lowest_priority():
    res = mode2d_schedule(0, [0, 1, 2], {0: 1, 1: 1, 2: 1}, [(0, 0), (1, 0)], {0: 1, 1: 5, 2: 3})
    assert res.deferred == [0]


def test_mode2d_run_has_no_intra_group_collisions():
    cfg = nr_config(0, **{"nr.mode2d.groups": 4, "nr.mode2d.group_size": 4,
                          "node_classes.0.traffic.size_bytes": 100,
                          "node_classes.0.traffic.size_range": [100, 100]})
    rep = simulate(cfg, 1)
    grouped = [e for e in rep.systems["nr"].tx_log if e[4] >= 0]
    assert grouped
    assert rep.results.counters.get("mode2d_intra_collisions", 0) == 0


# -- HARQ --------------------------------------------------------------------

def test_harq_gain_capped():
    h = HarqParams(gain_per_copy_db=3, gain_cap_db=8)
    assert [h.combining_gain(i) for i in (1, 2, 3, 4)] == [0, 3, 6, 8]


def test_harq_stops_on_all_ack():
    calls = []
    out = harq_cycle([1, 2], lambda c, r, g: calls.append((c, r)) or True, HarqParams())
    assert out.transmissions == 1 and out.acks == 2 and not out.residual_loss


def test_harq_caps_total_transmissions():
    out = harq_cycle([1], lambda c, r, g: False, HarqParams(max_tx=3))
    assert out.transmissions == 3 and out.nacks == 3 and out.residual_loss


def test_harq_lost_feedback_is_nack():
    out = harq_cycle([1], lambda c, r, g: True, HarqParams(max_tx=2), feedback_ok=lambda c, r: c > 1)
    assert out.transmissions == 2 and out.acks == 1 and out.nacks == 1 and not out.residual_loss


def test_harq_disabled_single_shot():
    out = harq_cycle([1], lambda c, r, g: False, HarqParams(enabled=False))
    assert out.transmissions == 1


def test_psfch_slot_alignment():
    h = HarqParams(psfch_period=4, psfch_gap_slots=2)
    assert h.psfch_slot(5) == 8 and h.psfch_slot(6) == 8


# -- pre-emption -------------------------------------------------------------

def test_preemption_needs_strictly_higher_priority():
    with pytest.raises(ConfigError):
        PreemptionIndication(1, 2, 0, 0, 0)
    assert choose_victim([(5, 0, 2, 3)], 3, 1, free_exists=False) is None


def test_preemption_prefers_lowest_priority_then_earliest():
    rows = [(5, 0, 2, 2), (7, 1, 3, 1), (6, 0, 4, 1)]
    pi = choose_victim(rows, 5, 1, free_exists=False)
    assert (pi.victim, pi.slot) == (4, 6)
    assert choose_victim(rows, 5, 1, free_exists=True) is None


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_preemption_trial(seed):
    assert preemption_trial(seed, True)
    assert not preemption_trial(seed, False)


# -- dual radio --------------------------------------------------------------

@given(st.integers(0, 10**9))
def test_tdm_gate_exclusive(t):
    p = DualRatPolicy("TDM", 20.0, 0.5)
    a, _ = dual_rat_gate(p, Radio.CV2X, t)
    b, _ = dual_rat_gate(p, Radio.NRV2X, t)
    assert (a is GateDecision.DENY) != (b is GateDecision.DENY)


def test_fdm_power_split():
    p = DualRatPolicy("FDM", split_db=(-3.0, -3.0))
    d, pw = dual_rat_gate(p, Radio.NRV2X, 0)
    assert d is GateDecision.PERMIT and pw == 20.0
    with pytest.raises(ConfigError):
        DualRatPolicy("FDM", split_db=(0.0, -3.0))


def test_permits_whole_interval():
    p = DualRatPolicy("TDM", 20.0, 0.5)
    assert p.permits(Radio.CV2X, 9 * MS, 10 * MS)
    assert not p.permits(Radio.CV2X, 9 * MS, 11 * MS)


def test_dual_rat_run_radios_disjoint():
    rep = simulate(dual_config(), 1)
    dual = set(rep.classes["dual"])
    by_node: dict[int, list] = {}
    for start, end, rat, tx, _ in rep.medium.log:
        if tx in dual:
            by_node.setdefault(tx, []).append((start, end, rat))
    assert by_node
    assert any(len({r for _, _, r in v}) == 2 for v in by_node.values())
    for recs in by_node.values():
        recs.sort()
        for a, b in zip(recs, recs[1:]):
            if a[2] != b[2]:
                assert a[1] <= b[0]
