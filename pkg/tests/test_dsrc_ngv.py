import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from v2xsim.core import MS, S, US, ConfigError, Engine, PolicyError, RngFactory
from v2xsim.dsrc import CsmaStation, DropHeadQueue, EdcaParams, Phase, frame_duration
from v2xsim.ngv import (CapabilityMode, CapabilityState, CombiningGainTable, FrameFormat, NgvParams, RxClass,
                        build_frame, burst_schedule, retransmission_count, update_capability)


def test_frame_duration_300b_qpsk():
    assert frame_duration(300, "QPSK-1/2") == 448 * US


def test_frame_duration_empty_payload():
    assert frame_duration(0, "QPSK-1/2") == 48 * US


def test_frame_duration_rejects_bad_input():
    with pytest.raises(ConfigError):
        frame_duration(300, "QPSK-9/10")
    with pytest.raises(ConfigError):
        frame_duration(4096)


@given(st.integers(0, 4094))
def test_frame_duration_monotone(n):
    assert frame_duration(n + 1) >= frame_duration(n)


def test_aifs_is_sifs_plus_aifsn_slots():
    p = EdcaParams(aifsn=3)
    assert p.aifs_ns == 32 * US + 3 * 13 * US


def _station(cw=15, seed=0, log=None):
    eng = Engine()
    fired = log if log is not None else []
    st_ = CsmaStation(eng, 0, EdcaParams(cw=cw), np.random.default_rng(seed), lambda s: fired.append(eng.now))
    return eng, st_, fired


def test_zero_backoff_fires_exactly_after_aifs():
    eng, s, fired = _station(cw=0)
    eng.schedule(5 * US, s.request)
    eng.run_until(1 * MS)
    assert fired == [5 * US + EdcaParams().aifs_ns]


def test_backoff_frozen_while_busy():
    eng, s, fired = _station(cw=0)
    s.counter = 0
    s.rng = np.random.default_rng(1)
    s.p = EdcaParams(cw=15)
    s.cw = 15
    s.request()
    drawn = s.counter
    aifs = s.p.aifs_ns
    # busy right after AIFS + 1 slot, for 1 ms
    t_busy = aifs + s.p.slot_ns + 1
    eng.schedule(t_busy, s.medium_busy, t_busy)
    eng.schedule(t_busy + MS, s.medium_idle, t_busy + MS)
    eng.run_until(t_busy + MS // 2)
    frozen = s.counter
    assert frozen == max(drawn - 1, 0) or drawn == 0
    eng.run_until(10 * MS)
    if drawn > 1:
        assert fired == [t_busy + MS + aifs + frozen * s.p.slot_ns]


def test_no_exponential_backoff_draws_identical_distribution():
    eng, s, fired = _station(cw=15, seed=3)
    for k in range(4000):
        s.request()
        s.done(success=False)
        s.phase = Phase.IDLE
    d = np.array(s.backoff_draws)
    first, later = d[::2], d[1::2]
    assert stats.ks_2samp(first, later).pvalue > 0.01
    assert d.min() == 0 and d.max() == 15
    assert s.cw == 15


def test_drop_head_queue():
    q = DropHeadQueue(2)
    assert q.push(1) is None and q.push(2) is None
    assert q.push(3) == 1 and q.dropped == 1
    assert q.pop() == 2


# --- 802.11bd ---------------------------------------------------------------

def test_legacy_frame_matches_11p_duration():
    f = build_frame(300, FrameFormat.LEGACY_11P)
    assert f.duration == 448 * US and f.ngv is None


def test_interop_append_high_mcs_shorter_than_double():
    f = build_frame(300, FrameFormat.INTEROP_APPEND, mcs_ngv="64QAM-2/3")
    assert f.duration < 2 * frame_duration(300)
    assert f.decodable_mcs(RxClass.P11) == "QPSK-1/2"
    assert f.decodable_mcs(RxClass.BD11) == "64QAM-2/3"


def test_parity_zero_overhead_degenerates_to_legacy():
    f = build_frame(300, FrameFormat.PARITY_APPEND, params=NgvParams(parity_overhead=0.0))
    assert f.duration == frame_duration(300)


def test_parity_tail_quarter_of_data_symbols():
    f = build_frame(300, FrameFormat.PARITY_APPEND)
    assert f.parity.duration == 13 * 8 * US       # ceil(0.25 * 51)


def test_ngv_only_never_decodable_by_11p():
    f = build_frame(300, FrameFormat.NGV_ONLY)
    assert f.decodable_mcs(RxClass.P11) is None


def test_ngv_only_forbidden_with_legacy_neighbours():
    with pytest.raises(PolicyError):
        build_frame(300, FrameFormat.NGV_ONLY, capability=CapabilityMode.LEGACY_COMPATIBLE)


def test_high_mcs_needs_midambles():
    with pytest.raises(PolicyError):
        build_frame(300, FrameFormat.NGV_ONLY, mcs_ngv="64QAM-2/3", params=NgvParams(midambles=False))


def test_midamble_every_eight_symbols():
    with_m = build_frame(300, FrameFormat.NGV_ONLY, params=NgvParams(midambles=True)).ngv.duration
    without = build_frame(300, FrameFormat.NGV_ONLY, params=NgvParams(midambles=False)).ngv.duration
    n = without // (8 * US)
    assert with_m - without == ((n - 1) // 8) * 8 * US


def test_downclock_scales_symbol_time():
    assert [NgvParams(downclock=k).symbol_ns for k in (2, 4, 8)] == [8 * US, 16 * US, 32 * US]


@pytest.mark.parametrize("cbr,k", [(0.0, 3), (0.45, 2), (0.9, 1), (0.3, 2), (0.6, 1)])
def test_retransmission_count(cbr, k):
    assert retransmission_count(cbr) == k


@given(st.floats(0, 1), st.floats(0, 1))
def test_retransmission_count_antitone(a, b):
    lo, hi = sorted((a, b))
    assert retransmission_count(hi) <= retransmission_count(lo)


def test_burst_copies_sifs_apart():
    spans = burst_schedule(0, [448 * US, 448 * US])
    assert spans[1][0] == spans[0][1] + 32 * US


def test_gain_table_defaults_within_quoted_ranges():
    g = CombiningGainTable()
    f = build_frame(300, FrameFormat.LEGACY_11P)
    for k in (2, 3):
        assert 3.0 <= g.gain_db(f, k, RxClass.BD11) <= 8.0
        assert 0.5 <= g.gain_db(f, k, RxClass.P11) <= 1.7
    par = build_frame(300, FrameFormat.PARITY_APPEND)
    assert 1.0 <= g.gain_db(par, 1, RxClass.BD11) <= 3.0
    assert g.gain_db(par, 1, RxClass.P11) == 0.0


@pytest.mark.parametrize("mcs,gain", [("BPSK-1/2", 4.0), ("BPSK-3/4", 0.6), ("QPSK-1/2", 2.0)])
def test_dcm_gains(mcs, gain):
    f = build_frame(300, FrameFormat.NGV_ONLY, mcs_ngv=mcs, dcm=True)
    assert CombiningGainTable().gain_db(f, 1, RxClass.BD11) == gain


def test_gains_do_not_stack():
    par = build_frame(300, FrameFormat.PARITY_APPEND)
    assert CombiningGainTable().gain_db(par, 3, RxClass.BD11) == 8.0


def test_capability_timeout():
    st_ = CapabilityState()
    assert st_.mode(5 * S) is CapabilityMode.NGV_NATIVE
    legacy = build_frame(300, FrameFormat.LEGACY_11P, ngv_origin=False)
    update_capability(st_, legacy, 1 * S)
    assert st_.mode(1 * S + 4_900 * MS) is CapabilityMode.LEGACY_COMPATIBLE
    assert st_.mode(6 * S) is CapabilityMode.NGV_NATIVE


def test_ngv_marked_frame_leaves_timer_alone():
    st_ = CapabilityState()
    update_capability(st_, build_frame(300, FrameFormat.LEGACY_11P), 1 * S)
    assert st_.deadline == -1 and st_.mode(1 * S) is CapabilityMode.NGV_NATIVE
