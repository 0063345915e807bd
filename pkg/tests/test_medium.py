import math

import numpy as np
import pytest

from v2xsim.core import ConfigError, Engine
from v2xsim.medium import CcaGroup, Medium, RadioParams, TxRecord
from v2xsim.radio import AcirTable, ChannelDef, Span, path_loss_db
from v2xsim.scenario import NodeSet

CH = ChannelDef.its(178)


def _line(xs):
    n = len(xs)
    return NodeSet(list(xs), [0.0] * n, [0.0] * n, [0.0] * n, ["probe"] * n, [f"n{i}" for i in range(n)],
                   period_x=None, period_y=None)


def _rec(med, rid, tx, start, end, ch=CH, power=23.0, span=None):
    return TxRecord(rid, tx, "cv2x", ch, span or Span.of(ch), power, start, end)


def test_equal_power_interferer_gives_zero_db():
    eng = Engine()
    med = Medium(eng, _line([0.0, 100.0, 200.0]))
    want = med.begin(_rec(med, 1, 0, 0, 1000))
    med.begin(_rec(med, 2, 2, 0, 1000))
    noise = med.noise_mw(10.0) * 1e-12   # negligible
    sinr = med.frame_sinr_db(want, np.array([1]), want.span, CH, noise)
    assert sinr[0] == pytest.approx(0.0, abs=1e-6)


def test_half_overlap_halves_interference_energy():
    eng = Engine()
    med = Medium(eng, _line([0.0, 100.0, 200.0]))
    want = med.begin(_rec(med, 1, 0, 0, 1000))
    other = med.begin(_rec(med, 2, 2, 500, 1500))
    i = med.mean_interference_mw(want, np.array([1]), want.span, CH)[0]
    full = 10 ** (other.base_dbm[1] / 10)
    assert i == pytest.approx(full / 2)


def test_capacity_averaging_is_optimistic_for_partial_overlap():
    nodes = _line([0.0, 100.0, 105.0])
    out = {}
    for mode in ("energy", "capacity"):
        med = Medium(Engine(), nodes, RadioParams(sinr_averaging=mode))
        want = med.begin(_rec(med, 1, 0, 0, 1000))
        med.begin(_rec(med, 2, 2, 0, 300))
        out[mode] = med.frame_sinr_db(want, np.array([1]), want.span, CH, med.noise_mw(10.0))[0]
    assert out["capacity"] > out["energy"]
    with pytest.raises(ConfigError):
        RadioParams(sinr_averaging="peak")


def test_capped_averaging_clips_each_segment():
    nodes = _line([0.0, 100.0, 105.0])

    def frame(mode, cap=None):
        med = Medium(Engine(), nodes, RadioParams(sinr_averaging=mode))
        want = med.begin(_rec(med, 1, 0, 0, 1000))
        med.begin(_rec(med, 2, 2, 0, 300))
        return med.frame_sinr_db(want, np.array([1]), want.span, CH, med.noise_mw(10.0), cap_db=cap)[0]

    assert frame("capped") == pytest.approx(frame("capacity"))
    # a cap below both segment SINRs pins the result at the cap
    assert frame("capped", cap=-50.0) == pytest.approx(-50.0, abs=1e-9)
    # a cap between the segments lowers the clean part only
    clean = frame("capped", cap=200.0)
    mid = frame("capped", cap=10.0)
    assert frame("energy") < mid < clean


def test_adjacent_infinite_acir_leaves_sinr_unchanged():
    eng = Engine()
    nodes = _line([0.0, 100.0, 120.0])
    med = Medium(eng, nodes, RadioParams(acir=AcirTable({0.0: 0.0})))
    want = med.begin(_rec(med, 1, 0, 0, 1000))
    far = ChannelDef.its(184)
    med.begin(_rec(med, 2, 2, 0, 1000, ch=far))
    n = med.noise_mw(10.0)
    s = med.frame_sinr_db(want, np.array([1]), want.span, CH, n)[0]
    assert s == pytest.approx(want.base_dbm[1] - 10 * math.log10(n))


def test_more_separation_never_lowers_sinr():
    nodes = _line([0.0, 100.0, 110.0])
    vals = []
    for ch in (178, 180, 182):
        med = Medium(Engine(), nodes)
        want = med.begin(_rec(med, 1, 0, 0, 1000))
        med.begin(_rec(med, 2, 2, 0, 1000, ch=ChannelDef.its(ch)))
        vals.append(med.frame_sinr_db(want, np.array([1]), want.span, CH, med.noise_mw(10))[0])
    assert vals[0] <= vals[1] <= vals[2]


def test_base_power_uses_path_loss():
    med = Medium(Engine(), _line([0.0, 100.0]))
    p = med.base_power(0, 23.0, 0)
    assert p[1] == pytest.approx(23.0 - path_loss_db(100.0, 5.9))
    assert p[0] == -np.inf


def test_cca_busy_and_threshold_monotone():
    eng = Engine()
    nodes = _line([0.0, 100.0])
    med = Medium(eng, nodes)
    rec = med.begin(_rec(med, 1, 0, 0, 1000))
    level = med.sensed_dbm(1, CH, 10)
    assert med.cca_busy(1, CH, level, 10)          # boundary inclusive
    assert not med.cca_busy(1, CH, level + 0.1, 10)
    assert med.cca_busy(1, CH, -82.0, 10) >= med.cca_busy(1, CH, -65.0, 10)
    med.finish(rec)
    assert not med.cca_busy(1, CH, -120.0, 2000)


def test_cca_group_tracks_busy_time_and_callbacks():
    eng = Engine()
    med = Medium(eng, _line([0.0, 50.0, 5000.0]))
    events = []
    g = med.add_group(CcaGroup(np.array([1, 2]), -85.0, CH, lambda idx, b, t: events.append((list(idx), b, t))))
    rec = _rec(med, 1, 0, 100, 600)
    eng.schedule(100, med.begin, rec)
    eng.schedule(600, med.finish, rec)
    eng.run_until(1000)
    assert events == [([0], True, 100), ([0], False, 600)]
    assert g.busy_time(0, 1000) == 500 and g.busy_time(1, 1000) == 0


def test_transmission_only_interferes_during_its_interval():
    eng = Engine()
    med = Medium(eng, _line([0.0, 100.0, 200.0]))
    want = med.begin(_rec(med, 1, 0, 0, 1000))
    i = med.mean_interference_mw(want, np.array([1]), want.span, CH)
    assert i[0] == 0.0


def test_record_validation():
    with pytest.raises(ConfigError):
        TxRecord(1, 0, "x", CH, Span.of(CH), 23.0, 10, 10)
    with pytest.raises(ConfigError):
        TxRecord(1, 0, "x", CH, Span.of(CH), 40.0, 0, 10)
