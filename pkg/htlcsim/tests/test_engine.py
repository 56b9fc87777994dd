from collections import Counter
import time

import numpy as np
import pytest
from scipy.stats import binomtest

from htlcsim.engine import (
    Cooperation,
    Event,
    EventKind,
    EventQueue,
    SimConfig,
    Simulation,
    run,
    sample_uncooperative,
)
from htlcsim.model import (
    Channel,
    ChannelEndpoint,
    FailReason,
    Network,
    Payment,
    PaymentResult,
    Peer,
)
from htlcsim.netgen import GenerationParams, generate
from htlcsim.stats import Outcome, classify

LATENCY = 50
fixed_latency = dict(latency_min=LATENCY, latency_max=LATENCY)


def mk_network(edges):
    """A network from ``(peer1, peer2, balance1, balance2)`` tuples."""
    channels = [
        Channel(i, a, b, x + y, ChannelEndpoint(a, balance=x), ChannelEndpoint(b, balance=y))
        for i, (a, b, x, y) in enumerate(edges)
    ]
    n_peers = 1 + max(max(c.peer1, c.peer2) for c in channels)
    peers = [
        Peer(i, [c.id for c in channels if i in (c.peer1, c.peer2)])
        for i in range(n_peers)
    ]
    return Network.from_lists(peers, channels)


def line3(balance1=500_000):
    """0 -- 1 -- 2, with ``balance1`` on peer 1's side of the second channel."""
    return mk_network([(0, 1, 500_000, 500_000), (1, 2, balance1, 1_000_000 - balance1)])


def pay(sender, receiver, amount=100_000, start_time=0, payment_id=0):
    return Payment(payment_id, sender, receiver, amount, start_time)


# ------------------------------------------------------------- event queue


def test_event_queue_orders_by_time_then_insertion():
    q = EventQueue()
    q.push(Event(5, EventKind.find_route, payment_id=1))
    q.push(Event(5, EventKind.send_payment, payment_id=2))
    q.push(Event(1, EventKind.find_route, payment_id=3))
    assert q.peek_time() == 1
    assert [q.pop().payment_id for _ in range(3)] == [3, 1, 2]
    assert not q
    with pytest.raises(IndexError):
        q.pop()


def test_event_queue_refuses_the_past():
    q = EventQueue()
    q.push(Event(10, EventKind.find_route, 0))
    q.pop()
    with pytest.raises(ValueError):
        q.push(Event(9, EventKind.find_route, 0))
    q.push(Event(10, EventKind.find_route, 0))


# ------------------------------------------------------------- cooperation


def test_sample_uncooperative_degenerate_cases():
    rng = np.random.default_rng(0)
    assert {sample_uncooperative(SimConfig(), rng) for _ in range(100)} == {
        Cooperation.cooperative
    }
    always_before = SimConfig(p_uncoop_before=1.0)
    assert {sample_uncooperative(always_before, rng) for _ in range(100)} == {
        Cooperation.uncoop_before
    }


def test_sample_uncooperative_frequencies():
    n, p_before, p_after = 100_000, 0.1, 0.05
    config = SimConfig(p_uncoop_before=p_before, p_uncoop_after=p_after)
    rng = np.random.default_rng(1)
    counts = Counter(sample_uncooperative(config, rng) for _ in range(n))
    for kind, p in [(Cooperation.uncoop_before, p_before), (Cooperation.uncoop_after, p_after)]:
        assert abs(counts[kind] - n * p) <= 3 * np.sqrt(n * p * (1 - p))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(latency_min=10, latency_max=5),
        dict(payment_timeout=0),
        dict(p_uncoop_before=0.7, p_uncoop_after=0.7),
        dict(p_uncoop_after=-0.1),
        dict(final_timelock=0),
    ],
)
def test_invalid_sim_config(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


# ------------------------------------------------------------- hand traces


def test_no_payments():
    network = line3()
    before = network.snapshot_balances()
    assert run(network, []) == []
    assert network.snapshot_balances() == before


def test_direct_payment_takes_two_latencies():
    network = mk_network([(0, 1, 500_000, 500_000)])
    [record] = run(network, [pay(0, 1, start_time=7)], SimConfig(**fixed_latency))
    assert record.result == PaymentResult.success
    assert record.fail_reason == FailReason.none
    assert record.end_time - record.start_time == 2 * LATENCY
    assert record.route == (0,)
    assert record.attempts == 1
    assert network.snapshot_balances() == {0: (400_000, 600_000)}


def test_direct_payment_with_too_little_balance_has_no_route():
    network = mk_network([(0, 1, 50_000, 950_000)])
    [record] = run(network, [pay(0, 1)], SimConfig(**fixed_latency))
    assert (record.result, record.fail_reason) == (PaymentResult.fail, FailReason.no_route)
    assert record.attempts == 1
    assert record.end_time == 0


def test_two_hop_payment_trace_and_fee():
    network = line3()
    sim = Simulation(network, [pay(0, 2)], SimConfig(**fixed_latency), trace=True)
    [record] = sim.run()
    assert record.result == PaymentResult.success
    assert record.route == (0, 1)
    assert [(e.time, e.kind, e.hop_index) for e in sim.trace] == [
        (0, EventKind.find_route, 0),
        (0, EventKind.send_payment, 0),
        (50, EventKind.forward_payment, 1),
        (100, EventKind.receive_payment, 1),
        (150, EventKind.forward_success, 1),
        (200, EventKind.receive_success, 0),
    ]
    # the sender pays amount + fee, the receiver gets the amount, peer 1 keeps the fee
    assert network.snapshot_balances() == {
        0: (500_000 - 100_101, 500_000 + 100_101),
        1: (500_000 - 100_000, 500_000 + 100_000),
    }
    assert sim.route_searches == 1
    assert sim.events_processed == 6


def test_unbalanced_intermediate_hop_fails_and_refunds():
    network = line3(balance1=10_000)
    before = network.snapshot_balances()
    sim = Simulation(network, [pay(0, 2)], SimConfig(**fixed_latency), trace=True)
    [record] = sim.run()
    assert (record.result, record.fail_reason) == (PaymentResult.fail, FailReason.unbalanced)
    assert not record.uncooperative_encountered
    assert record.attempts == 2
    assert record.end_time == 100
    assert network.snapshot_balances() == before
    assert [e.kind for e in sim.trace] == [
        EventKind.find_route,
        EventKind.send_payment,
        EventKind.forward_payment,
        EventKind.receive_fail,
        EventKind.find_route,
    ]


def test_reattempt_avoids_the_blacklisted_channel():
    network = mk_network(
        [
            (0, 1, 500_000, 500_000),
            (1, 3, 10, 999_990),  # too little balance on peer 1's side
            (0, 2, 500_000, 500_000),
            (2, 3, 500_000, 500_000),
        ]
    )
    [record] = run(network, [pay(0, 3)], SimConfig(**fixed_latency))
    assert record.result == PaymentResult.success
    assert record.attempts == 2
    assert record.route == (2, 3)
    assert record.end_time == 300
    # the first attempt left no trace on the channels it touched
    assert network.channels[0].endpoint1.balance == 500_000
    assert network.channels[0].is_conserved()


def test_reattempt_after_the_timeout_fails_with_timeout():
    network = line3(balance1=10_000)
    config = SimConfig(payment_timeout=60, **fixed_latency)
    [record] = run(network, [pay(0, 2)], config)
    assert (record.result, record.fail_reason) == (PaymentResult.fail, FailReason.timeout)
    assert record.end_time == 100


def test_uncooperative_intermediary_is_blacklisted():
    network = line3()
    before = network.snapshot_balances()
    config = SimConfig(p_uncoop_before=1.0, **fixed_latency)
    [record] = run(network, [pay(0, 2)], config)
    assert (record.result, record.fail_reason) == (
        PaymentResult.fail,
        FailReason.uncooperative,
    )
    assert record.uncooperative_encountered
    assert network.snapshot_balances() == before


def test_uncooperative_receiver():
    network = mk_network([(0, 1, 500_000, 500_000)])
    config = SimConfig(p_uncoop_before=1.0, **fixed_latency)
    sim = Simulation(network, [pay(0, 1)], config, trace=True)
    [record] = sim.run()
    assert (record.result, record.fail_reason) == (
        PaymentResult.fail,
        FailReason.uncooperative,
    )
    assert record.uncooperative_encountered
    assert [e.kind for e in sim.trace] == [
        EventKind.find_route,
        EventKind.send_payment,
        EventKind.receive_payment,
        EventKind.receive_fail,
        EventKind.find_route,
    ]
    assert network.snapshot_balances() == {0: (500_000, 500_000)}


def test_receiver_ignores_uncooperative_after():
    network = mk_network([(0, 1, 500_000, 500_000)])
    [record] = run(network, [pay(0, 1)], SimConfig(p_uncoop_after=1.0, **fixed_latency))
    assert record.result == PaymentResult.success


def test_uncooperative_after_delays_the_fail_by_the_timelock():
    network = line3()
    before = network.snapshot_balances()
    config = SimConfig(
        p_uncoop_after=1.0,
        validity_window=10**12,
        payment_timeout=10**12,
        **fixed_latency,
    )
    sim = Simulation(network, [pay(0, 2)], config, trace=True)
    [record] = sim.run()

    [fail_event] = [e for e in sim.trace if e.kind == EventKind.forward_fail]
    established_at = LATENCY  # peer 1 establishes the second hop on forward_payment
    assert fail_event.time == established_at + 144 * config.block_interval
    assert fail_event.closes_channel
    assert network.channels[1].closed
    assert not network.channels[0].closed
    assert (record.result, record.fail_reason) == (
        PaymentResult.fail,
        FailReason.uncooperative,
    )
    assert record.end_time == fail_event.time + LATENCY
    assert network.snapshot_balances() == before


def test_uncooperative_after_beyond_the_validity_window_is_unknown():
    network = line3()
    before = network.snapshot_balances()
    config = SimConfig(p_uncoop_after=1.0, **fixed_latency)
    [record] = run(network, [pay(0, 2)], config)
    assert record.result == PaymentResult.unknown
    assert record.end_time is None
    assert record.uncooperative_encountered
    assert network.channels[1].closed
    assert not network.channels[0].closed
    assert network.channels[0].locked_amount() == network.channels[1].locked_amount() == 0
    assert network.snapshot_balances() == before
    assert network.total_funds() == network.total_capacity()


def test_payment_takes_a_dearer_route_when_fees_do_not_fit_the_cheapest():
    network = mk_network(
        [
            (0, 1, 100_000, 900_000),
            (1, 3, 500_000, 500_000),
            (0, 2, 500_000, 500_000),
            (2, 3, 500_000, 500_000),
        ]
    )
    network.channels[3].endpoint1.base_fee = 5_000
    [record] = run(network, [pay(0, 3)], SimConfig(**fixed_latency))
    assert (record.result, record.attempts, record.route) == (PaymentResult.success, 1, (2, 3))
    assert network.snapshot_balances()[2] == (500_000 - 100_105, 500_000 + 100_105)


def test_concurrent_payments_can_fail_locally_at_send():
    network = mk_network([(0, 1, 150_000, 850_000)])
    payments = [pay(0, 1, payment_id=0), pay(0, 1, payment_id=1)]
    config = SimConfig(processing_latency=10, **fixed_latency)
    first, second = run(network, payments, config)
    assert first.result == PaymentResult.success
    assert (second.result, second.fail_reason) == (
        PaymentResult.fail,
        FailReason.unbalanced,
    )
    assert second.end_time == 20


def test_payments_must_be_sorted():
    network = mk_network([(0, 1, 500_000, 500_000)])
    payments = [pay(0, 1, start_time=10, payment_id=0), pay(1, 0, start_time=5, payment_id=1)]
    with pytest.raises(ValueError):
        run(network, payments)


# ------------------------------------------------------------- properties


def simulate(seed, n_peers=100, n_payments=1000, p_uncoop=0.0, amount_factor=1, **kw):
    params = GenerationParams(n_peers=n_peers, n_payments=n_payments, seed=seed)
    network, payments = generate(params)
    for p in payments:
        p.amount *= amount_factor
    config = SimConfig(p_uncoop_before=p_uncoop, p_uncoop_after=p_uncoop, seed=seed)
    sim = Simulation(network, payments, config, **kw)
    return sim, sim.run()


@pytest.mark.parametrize("seed", range(200))
def test_failed_payments_are_atomic_and_funds_are_conserved(seed):
    params = GenerationParams(n_peers=100, n_payments=1000, seed=seed)
    network, payments = generate(params)
    total = network.total_funds()
    config = SimConfig(p_uncoop_before=0.05, p_uncoop_after=0.05, seed=seed)
    sim = Simulation(network, payments, config, record_deltas=True, trace=True)
    records = sim.run()

    assert network.total_funds() == total
    network.check_conservation()
    times = [e.time for e in sim.trace]
    assert times == sorted(times)
    for r in records:
        outcome = classify(r)  # raises on pending payments
        deltas = sim.deltas.get(r.id, {})
        if r.result == PaymentResult.fail:
            assert r.fail_reason != FailReason.none
            assert all(d == 0 for d in deltas.values()), (r, deltas)
        elif outcome == Outcome.success:
            assert r.end_time >= r.start_time
            assert r.attempts >= 1 and r.route_length >= 1
            assert deltas[(r.route[-1], r.receiver)] == r.amount
            assert deltas[(r.route[0], r.sender)] <= -r.amount
        else:
            assert r.end_time is None


def test_runs_are_deterministic():
    _, records1 = simulate(seed=3, p_uncoop=0.05)
    _, records2 = simulate(seed=3, p_uncoop=0.05)
    assert records1 == records2


def _fraction(records, outcomes):
    return sum(classify(r) in outcomes for r in records) / len(records)


def _sign_test(holds):
    return binomtest(sum(holds), len(holds), alternative="greater").pvalue < 0.05


def test_larger_amounts_do_not_fail_less():
    capacity_failures = {Outcome.fail_unbalanced, Outcome.fail_no_route}
    holds = []
    for seed in range(10):
        _, base = simulate(seed, n_payments=500)
        _, larger = simulate(seed, n_payments=500, amount_factor=10)
        holds.append(
            _fraction(larger, capacity_failures) >= _fraction(base, capacity_failures)
        )
    assert _sign_test(holds)


def test_uncooperative_peers_do_not_fail_less_for_uncooperativeness():
    holds = []
    for seed in range(10):
        _, base = simulate(seed, n_payments=500)
        params = GenerationParams(n_peers=100, n_payments=500, seed=seed)
        network, payments = generate(params)
        config = SimConfig(p_uncoop_before=0.2, seed=seed)
        uncoop = run(network, payments, config)
        holds.append(
            _fraction(uncoop, {Outcome.fail_uncooperative})
            >= _fraction(base, {Outcome.fail_uncooperative})
        )
    assert _sign_test(holds)


def test_time_per_route_search_does_not_grow_with_the_payment_count():
    params = GenerationParams(n_peers=1000, n_payments=5000, seed=11)
    time_per_search = []
    for n_payments in (500, 5000):
        network, payments = generate(params)
        sim = Simulation(network, payments[:n_payments], SimConfig(seed=11))
        tic = time.perf_counter()
        sim.run()
        time_per_search.append((time.perf_counter() - tic) / sim.route_searches)
    assert sim.route_searches >= 5000
    small, large = time_per_search
    assert max(small, large) / min(small, large) < 3
