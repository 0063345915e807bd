import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xsim.core import ConfigError, RngFactory
from v2xsim.radio import (AcirTable, ChannelDef, PerCurve, PerTable, Span, breakpoint_m, cca_busy,
                          coupling_db, decide_reception, noise_dbm, path_loss_db, sinr_db,
                          threshold_ramp)

FC = 5.9


def test_near_formula_at_100m():
    # heights chosen so 100 m lies below the breakpoint; the near branch has no height term.
    # Independent evaluation: 45.4 + 41.0 + 1.4376 = 87.84 dB (frozen).
    assert breakpoint_m(FC, 1.5, 1.5) > 100
    oracle = 22.7 * 2 + 41.0 + 20 * math.log10(1.18)
    assert oracle == pytest.approx(87.84, abs=0.005)
    assert path_loss_db(100.0, FC, h_tx=1.5, h_rx=1.5) == pytest.approx(87.84, abs=0.01)


def test_default_breakpoint_and_far_branch():
    assert breakpoint_m(FC) == pytest.approx(4 * 0.25 * 5.9e9 / 299_792_458.0)
    far = 40 * 2 + 9.45 - 2 * 17.3 * math.log10(0.5) + 2.7 * math.log10(FC / 5.0)
    assert path_loss_db(100.0, FC) == pytest.approx(far)


def test_doubling_below_breakpoint_adds_6_83_db():
    assert path_loss_db(20.0, FC, h_tx=1.5, h_rx=1.5) - path_loss_db(10.0, FC, h_tx=1.5, h_rx=1.5) \
        == pytest.approx(6.83, abs=0.01)


@given(st.floats(1.0, 5000.0), st.floats(1.0, 5000.0))
def test_path_loss_monotone(a, b):
    lo, hi = sorted((a, b))
    assert path_loss_db(hi, FC) >= path_loss_db(lo, FC) - 1e-9


def test_distance_clamped_at_one_metre():
    assert path_loss_db(0.1, FC) == path_loss_db(1.0, FC)


def test_nlos_adds_excess():
    assert path_loss_db(50.0, FC, los=False) - path_loss_db(50.0, FC) == pytest.approx(20.0)


def test_noise_floor_10mhz():
    assert noise_dbm(10.0) == pytest.approx(-95.0, abs=0.01)


def test_sinr_arithmetic():
    assert sinr_db(-90.0, 0.0, noise_dbm(10.0)) == pytest.approx(5.0, abs=0.01)
    s = 10 ** (-60 / 10)
    assert sinr_db(-60.0, s, -200.0) == pytest.approx(0.0, abs=1e-6)


@given(st.floats(-100, -40), st.lists(st.floats(0, 1e-6), max_size=5), st.floats(0, 1e-6))
def test_adding_interferer_never_raises_sinr(sig, inter, extra):
    base = sinr_db(sig, sum(inter), -95.0)
    assert sinr_db(sig, sum(inter) + extra, -95.0) <= base + 1e-12


def test_acir_monotone_and_infinite_beyond_table():
    t = AcirTable()
    assert t.attenuation_db(0) == 0 and t.attenuation_db(10) == 25 and t.attenuation_db(20) == 40
    assert math.isinf(t.attenuation_db(30))
    with pytest.raises(ConfigError):
        AcirTable({0.0: 0.0, 10.0: 30.0, 20.0: 20.0})


def test_coupling_adjacent_decreases_with_separation():
    acir = AcirTable()
    wifi = ChannelDef.its(177, 20.0)
    near, far = ChannelDef.its(180), ChannelDef.its(182)
    c_near = coupling_db(Span.of(wifi), wifi, Span.of(near), near, acir)
    c_far = coupling_db(Span.of(wifi), wifi, Span.of(far), far, acir)
    assert c_near > c_far
    assert math.isinf(coupling_db(Span.of(wifi), wifi, Span.of(far), far, AcirTable({0.0: 0.0})))


def test_co_channel_in_band_share():
    wifi = ChannelDef.its(177, 20.0)
    lte = ChannelDef.its(178)
    assert coupling_db(Span.of(wifi), wifi, Span.of(lte), lte, AcirTable()) == pytest.approx(-3.0103, abs=1e-3)


def test_cca_boundary_inclusive():
    assert cca_busy(10 ** (-8.2), -82.0)
    assert not cca_busy(0.0, -82.0)


def test_per_curve_limits():
    c = threshold_ramp(("x", "QPSK-1/2"), 5.0)
    assert c(100.0) == 0.0 and c(-100.0) == 1.0
    assert c.sinr_at_per(0.5) == pytest.approx(5.0)


def test_decide_reception_far_above_is_success():
    rng = RngFactory(0).stream(0, "rx")
    c = threshold_ramp(("x", "y"), 5.0)
    assert all(decide_reception(40.0, c, 0.0, rng) for _ in range(100))


def test_decide_reception_matches_curve_monte_carlo():
    c = PerCurve(("x", "y"), (3.0, 5.0, 7.0), (0.6, 0.1, 0.0))
    rng = RngFactory(1).stream(0, "rx")
    ok = decide_reception(np.full(10**5, 5.0), c, 0.0, rng)
    assert abs((1 - ok.mean()) - 0.10) < 0.005


def test_zero_gain_is_identity():
    c = PerCurve(("x", "y"), (3.0, 5.0, 7.0), (0.6, 0.1, 0.0))
    a = decide_reception(np.full(1000, 4.0), c, 0.0, RngFactory(2).stream(0, "rx"))
    b = RngFactory(2).stream(0, "rx").random(1000) >= c(np.full(1000, 4.0))
    assert np.array_equal(a, b)


def test_per_table_csv(tmp_path):
    p = tmp_path / "per.csv"
    p.write_text("rat,mcs,sinr_db,per\ncv2x,QPSK-1/2,0,1\ncv2x,QPSK-1/2,4,0.1\ncv2x,QPSK-1/2,6,0\n")
    t = PerTable.from_csv(p)
    assert t.get("cv2x", "QPSK-1/2")(4.0) == pytest.approx(0.1)
    # unknown rat falls back to the threshold ramp for the MCS
    assert t.get("11p", "QPSK-1/2")(5.0) == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        t.get("11p", "256QAM-5/6")


def test_bad_curves_rejected():
    with pytest.raises(ConfigError):
        PerCurve(("x",), (1.0, 0.5), (1.0, 0.0))
    with pytest.raises(ConfigError):
        PerCurve(("x",), (0.0, 1.0), (0.0, 1.0))
