import numpy as np
import pytest
from scipy.stats import binomtest

from v2xsim.linklevel import LinkPoint, distance_for_snr, measure, snr_at_per, sweep, with_gain
from v2xsim.medium import RadioParams
from v2xsim.ngv import CombiningGainTable, RxClass
from v2xsim.radio import PerTable, noise_dbm, path_loss_db


def test_distance_inverts_path_loss():
    p = RadioParams()
    d = distance_for_snr(10.0, 23.0, 10.0, p)
    snr = 23.0 - float(path_loss_db(d, p.fc_ghz, True, p.h_tx_m, p.h_rx_m)) - noise_dbm(10.0, p.noise_figure_db)
    assert snr == pytest.approx(10.0, abs=1e-6)


def test_snr_at_per_interpolates():
    pts = [LinkPoint(0, 100, 50), LinkPoint(1, 100, 10), LinkPoint(2, 100, 0)]
    assert snr_at_per(pts, 0.3) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        snr_at_per(pts[:1], 0.1)


def test_with_gain_sets_both_classes():
    t = with_gain(CombiningGainTable(), 2, 4.5)
    assert t.retx_11bd[2] == t.retx_11p[2] == 4.5
    assert t.retx_11bd[3] == 8.0


def test_extremes():
    assert measure(12.0, packets=200).per == 0.0
    assert measure(0.0, packets=200).per == 1.0


def test_gain_shifts_per_curve():
    g = 2.0
    snrs = np.arange(2.0, 8.01, 1.0)
    base = sweep(snrs, seed=10, k=2, packets=600, gains=with_gain(CombiningGainTable(), 2, 0.0))
    shifted = sweep(snrs, seed=20, k=2, packets=600, gains=with_gain(CombiningGainTable(), 2, g))
    shift = snr_at_per(base, 0.1) - snr_at_per(shifted, 0.1)
    assert shift == pytest.approx(g, abs=0.4)


def test_legacy_copies_are_independent():
    p = float(PerTable().get("11p", "QPSK-1/2")(5.0))
    triple = measure(5.0, rx_class=RxClass.P11, k=3, packets=800, seed=4)
    ci = binomtest(triple.failures, triple.packets).proportion_ci(0.99)
    assert ci.low <= p ** 3 <= ci.high
