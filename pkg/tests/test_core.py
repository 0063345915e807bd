import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xsim.core import (MS, US, Bernoulli, ConfigError, Engine, Exponential, RngFactory, Uniform,
                         draw, ms, us)


def test_timing_constants_are_exact_integers():
    assert us(32) == 32_000
    assert us(13) == 13_000
    assert ms(1) == MS
    assert us(8) == 8 * US


def test_same_time_event_fires_before_later_events():
    eng = Engine()
    order = []
    eng.schedule(5, order.append, "late")
    eng.schedule(0, order.append, "now")
    eng.run_until(10)
    assert order == ["now", "late"]


def test_equal_time_ties_dispatch_in_issue_order():
    eng = Engine()
    order = []
    for k in range(8):
        eng.schedule(100, order.append, k)
    eng.run_until(100)
    assert order == list(range(8))


def test_scheduling_in_the_past_is_a_config_error():
    eng = Engine()
    eng.run_until(50)
    with pytest.raises(ConfigError):
        eng.schedule(10, lambda: None)


def test_run_until_on_empty_queue_advances_clock():
    eng = Engine()
    assert eng.run_until(10**9) == 0
    assert eng.now == 10**9


def test_run_until_dispatches_events_up_to_and_including_t_end():
    eng = Engine()
    for t in (1, 2, 3):
        eng.schedule(us(t), lambda: None)
    assert eng.run_until(us(2)) == 2
    assert eng.now == us(2)


def test_many_random_events_dispatch_in_sorted_order():
    rng = np.random.default_rng(0)
    times = rng.integers(0, 10**9, size=10**5)
    eng = Engine()
    seen = []
    for t in times:
        eng.schedule(int(t), seen.append, int(t))
    eng.run_until(10**9)
    assert seen == sorted(times.tolist())


@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=200))
def test_dispatch_clock_is_monotone(times):
    eng = Engine()
    stamps = []
    for t in times:
        eng.schedule(t, lambda: stamps.append(eng.now))
    eng.run_until(10**6)
    assert stamps == sorted(stamps)
    assert len(stamps) == len(times)


def _traced_run(seed):
    buf = io.StringIO()
    eng = Engine(trace=buf)
    rng = RngFactory(seed).stream(3, "traffic")

    def tick(k):
        if k < 200:
            eng.schedule_in(int(rng.integers(1, 1000)), tick, k + 1, target=3, kind="tick")

    eng.schedule(0, tick, 0, target=3, kind="tick")
    eng.run_until(10**7)
    return buf.getvalue()


def test_trace_replay_is_byte_identical():
    a, b = _traced_run(11), _traced_run(11)
    assert a == b
    assert a.splitlines()[0] == "0,0,3,tick"
    assert _traced_run(12) != a


def test_cancelled_events_do_not_fire():
    eng = Engine()
    hits = []
    ev = eng.schedule(10, hits.append, 1)
    Engine.cancel(ev)
    eng.run_until(20)
    assert hits == []


def test_streams_are_reproducible_and_distinct():
    f1, f2 = RngFactory(5), RngFactory(5)
    a = f1.stream(0, "backoff").random(16)
    assert np.array_equal(a, f2.stream(0, "backoff").random(16))
    assert not np.array_equal(a, RngFactory(5).stream(1, "backoff").random(16))
    assert not np.array_equal(a, RngFactory(5).stream(0, "traffic").random(16))


def test_adding_a_node_does_not_perturb_other_streams():
    f1 = RngFactory(9)
    a = f1.stream(2, "x").random(8)
    f2 = RngFactory(9)
    f2.stream(7, "x").random(100)
    assert np.array_equal(a, f2.stream(2, "x").random(8))


def test_bernoulli_one_always_returns_one():
    rng = RngFactory(1).stream(0, "b")
    assert all(draw(rng, Bernoulli(1.0)) == 1 for _ in range(100))


def test_exponential_sample_mean_within_one_percent():
    rng = RngFactory(1).stream(0, "e")
    xs = [draw(rng, Exponential(50.0)) for _ in range(10**5)]
    assert abs(np.mean(xs) - 50.0) / 50.0 < 0.01


def test_integer_uniform_support():
    rng = RngFactory(1).stream(0, "u")
    xs = {draw(rng, Uniform(5, 15, integer=True)) for _ in range(5000)}
    assert xs == set(range(5, 16))


@pytest.mark.parametrize("bad", [lambda: Exponential(0), lambda: Exponential(-1), lambda: Bernoulli(1.5),
                                 lambda: Bernoulli(-0.1), lambda: Uniform(3, 2)])
def test_invalid_distribution_parameters(bad):
    with pytest.raises(ConfigError):
        bad()


def test_seed_must_be_64_bit_unsigned():
    with pytest.raises(ConfigError):
        RngFactory(-1)
