import numpy as np
import pytest

from v2xsim.core import MS, US, ConfigError, Engine, RngFactory
from v2xsim.medium import Medium, RadioParams
from v2xsim.radio import PerTable
from v2xsim.scenario import NodeSet
from v2xsim.wifi import Mitigation, WifiBss, WifiConfig, apply_mitigation, place_clients


def _bss(cfg: WifiConfig, seconds: float = 0.5, ack_override=None, seed: int = 0) -> WifiBss:
    pts = [(0.0, 0.0)] + place_clients((0.0, 0.0), cfg.clients, cfg.client_distance_m)
    n = len(pts)
    nodes = NodeSet([p[0] for p in pts], [p[1] for p in pts], np.zeros(n), np.zeros(n),
                    ["ap"] + ["wifi-client"] * (n - 1), ["ap"] + [f"c{i}" for i in range(n - 1)],
                    period_x=None, period_y=None)
    engine = Engine()
    medium = Medium(engine, nodes, RadioParams())
    bss = WifiBss(engine, medium, RngFactory(seed), cfg, 0, list(range(1, n)), PerTable(),
                  ack_override=ack_override)
    bss.start()
    engine.run_until(int(seconds * 1e9))
    return bss


def test_ampdu_holds_medium_for_cap():
    bss = _bss(WifiConfig(), 0.2)
    assert bss.hold_ns and all(h == 4 * MS for h in bss.hold_ns)


def test_no_aggregation_single_mpdu():
    cfg = WifiConfig(aggregation=False)
    # 1500 B at 24 Mb/s: 500 us of data rounded to 4 us symbols, plus 20 us preamble
    assert cfg.mpdu_airtime_ns() == 520 * US
    bss = _bss(cfg, 0.1)
    assert set(bss.hold_ns) == {520 * US}


def test_ack_airtime():
    # 134 bits at 96 bits per symbol -> 2 symbols
    assert WifiConfig().ack_airtime_ns() == 28 * US


def test_cw_doubles_on_failure_and_resets():
    fails = {0, 1, 2}
    bss = _bss(WifiConfig(), 0.1, ack_override=lambda n: n - 1 not in fails)
    assert bss.cw_trace[:5] == [15, 31, 63, 127, 15]


def test_cw_capped():
    bss = _bss(WifiConfig(), 0.5, ack_override=lambda n: False)
    assert max(bss.cw_trace) == 1023


def test_clean_link_succeeds():
    bss = _bss(WifiConfig(), 0.3)
    assert bss.failures == 0 and bss.successes > 0


def test_aifs900_reduces_access_rate():
    base = _bss(WifiConfig(aggregation=False), 0.3)
    slow = _bss(apply_mitigation(WifiConfig(aggregation=False), "Aifs900"), 0.3)
    assert slow.station.accesses < base.station.accesses


@pytest.mark.parametrize("m,agg,aifs,cca", [
    ("NoCoex", True, 34.0, -80.0),
    ("DisableAggregation", False, 34.0, -80.0),
    ("Aifs900", True, 900.0, -80.0),
    ("ReducedSensitivity", True, 34.0, -82.0),
    ("Combined", False, 900.0, -82.0),
])
def test_mitigation_mapping(m, agg, aifs, cca):
    c = apply_mitigation(WifiConfig(), Mitigation(m))
    assert (c.aggregation, c.aifs_us, c.cca_dbm) == (agg, aifs, cca)


def test_config_checks():
    with pytest.raises(ConfigError):
        WifiConfig(clients=0)
    with pytest.raises(ConfigError):
        WifiConfig(cw_min=31, cw_max=15)
    with pytest.raises(ValueError):
        apply_mitigation(WifiConfig(), "Bogus")
