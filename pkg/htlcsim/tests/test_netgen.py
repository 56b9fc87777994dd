from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from htlcsim.model import Channel, Peer
from htlcsim.netgen import (
    HUB_ANCHOR,
    GenerationParams,
    generate,
    generate_endpoints,
    generate_network,
    generate_payments,
    generate_topology,
    gini,
    initiated_channel_counts,
    lognormal_sigma_for_gini,
    sample_capacities,
    split_balance,
)


def test_topology_is_well_formed():
    params = GenerationParams(n_peers=200, avg_channels_per_peer=3.0, seed=1)
    peers, channels = generate_topology(params)
    initiated = Counter(c.peer1 for c in channels)
    assert all(initiated[p.id] >= 1 for p in peers)
    assert all(c.peer1 != c.peer2 for c in channels)
    assert [c.id for c in channels] == list(range(len(channels)))
    for p in peers:
        assert p.open_channel_ids == sorted(p.open_channel_ids)
        for channel_id in p.open_channel_ids:
            assert p.id in (channels[channel_id].peer1, channels[channel_id].peer2)
    assert sum(len(p.open_channel_ids) for p in peers) == 2 * len(channels)


@pytest.mark.parametrize("avg", [0.5, 1.0, 2.0, 3.5])
def test_mean_initiated_channels_per_peer_is_the_average(avg):
    params = GenerationParams(n_peers=10_000, avg_channels_per_peer=avg, seed=4)
    peers, channels = generate_topology(params)
    assert abs(len(channels) / len(peers) - avg) <= 0.05 * avg
    if avg >= 1:
        initiated = Counter(c.peer1 for c in channels)
        assert all(initiated[p.id] >= 1 for p in peers)


def test_two_peers_with_one_channel_each_are_joined_by_their_only_pair():
    params = GenerationParams(n_peers=2, avg_channels_per_peer=1.0, seed=0)
    _, channels = generate_topology(params)
    assert [(c.peer1, c.peer2) for c in channels] == [(0, 1), (1, 0)]
    assert initiated_channel_counts(2, 1.0, 0).tolist() == [1, 1]


def test_zero_topology_sigma_makes_a_hub():
    params = GenerationParams(n_peers=5_000, topology_sigma=0.0, seed=2)
    _, channels = generate_topology(params)
    at_hub = sum(HUB_ANCHOR in (c.peer1, c.peer2) for c in channels)
    assert at_hub / len(channels) >= 0.99


def test_wide_topology_sigma_picks_counterparties_uniformly():
    n_peers = 50
    n_passed = 0
    for seed in range(10):
        params = GenerationParams(
            n_peers=n_peers, avg_channels_per_peer=40.0, topology_sigma=1e7, seed=seed
        )
        _, channels = generate_topology(params)
        counts = Counter(c.peer2 for c in channels)
        observed = [counts[j] for j in range(n_peers)]
        n_passed += chisquare(observed).pvalue > 0.05
    # about 5% of the seeds are expected to fail a 5% test
    assert n_passed >= 8


def test_gini():
    assert gini([3, 3, 3]) == 0.0
    assert gini([0, 0, 0, 0, 1]) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        gini([])
    with pytest.raises(ValueError):
        gini([0, 0])


@pytest.mark.parametrize("target", [0.2, 0.5, 0.8])
def test_capacities_have_the_target_gini_and_mean(target):
    rng = np.random.default_rng(int(target * 10))
    capacities = sample_capacities(1_000_000, 1_000_000, target, rng)
    assert capacities.dtype.kind == "i"
    assert capacities.min() >= 1
    assert abs(gini(capacities) - target) <= 0.02
    assert abs(capacities.mean() / 1_000_000 - 1) <= 0.02


def test_zero_gini_gives_equal_capacities():
    assert lognormal_sigma_for_gini(0.0) == 0.0
    capacities = sample_capacities(100, 12_345, 0.0, np.random.default_rng(0))
    assert set(capacities.tolist()) == {12_345}
    with pytest.raises(ValueError):
        lognormal_sigma_for_gini(1.0)


def test_split_balance_conserves_capacity():
    for capacity in (1, 2, 999, 1_000_000):
        for fraction in (0.0, 0.3, 0.5, 0.999, 1.0):
            b1, b2 = split_balance(capacity, fraction)
            assert b1 >= 0 and b2 >= 0 and b1 + b2 == capacity


def test_balance_splits_are_uniform():
    params = GenerationParams()
    channels = [
        Channel(i, 0, 1, 1_000_000, params.endpoint(0), params.endpoint(1))
        for i in range(100_000)
    ]
    generate_endpoints(channels, params, np.random.default_rng(6))
    shares = [c.endpoint1.balance / c.capacity for c in channels]
    assert abs(np.mean(shares) - 0.5) <= 0.005
    assert min(shares) >= 0 and max(shares) <= 1


def test_generated_network_is_conserved_and_uses_the_policy():
    params = GenerationParams(n_peers=300, base_fee=7, proportional_fee=11, seed=5)
    network = generate_network(params)
    assert sorted(network.peers) == list(range(300))
    network.check_conservation()
    assert network.total_funds() == network.total_capacity()
    for c in network.channels.values():
        assert (c.endpoint1.owner, c.endpoint2.owner) == (c.peer1, c.peer2)
        assert c.endpoint1.base_fee == 7 and c.endpoint2.proportional_fee == 11
        assert not c.closed and not c.pending_htlcs


def test_payments():
    params = GenerationParams(n_peers=50, n_payments=20_000, payment_rate=20.0, seed=9)
    network, payments = generate(params)
    assert [p.id for p in payments] == list(range(20_000))
    starts = [p.start_time for p in payments]
    assert starts == sorted(starts)
    # 20 payments per second: the last one starts near 1000 s
    assert abs(starts[-1] / 1_000_000 - 1) < 0.05
    for p in payments:
        assert p.sender != p.receiver
        assert p.sender in network.peers and p.receiver in network.peers
        assert p.amount > 0
        mantissa = p.amount
        while mantissa % 10 == 0:
            mantissa //= 10
        assert 1 <= mantissa <= 9


def test_same_recipient_fraction():
    params = GenerationParams(n_peers=30, n_payments=500, same_recipient_fraction=1.0)
    _, payments = generate(params)
    assert len({p.receiver for p in payments}) == 1

    params = GenerationParams(n_peers=30, n_payments=2_000, same_recipient_fraction=0.5)
    _, payments = generate(params)
    top_share = Counter(p.receiver for p in payments).most_common(1)[0][1] / 2_000
    assert 0.45 < top_share < 0.6


def test_wider_amount_sigma_gives_larger_amounts():
    peers = [Peer(i) for i in range(10)]
    medians = []
    for sigma in (1.0, 2.0, 3.0):
        params = GenerationParams(n_peers=10, n_payments=100_000, amount_sigma=sigma, seed=1)
        payments = generate_payments(params, peers, np.random.default_rng(2))
        medians.append(np.median([p.amount for p in payments]))
    assert medians == sorted(set(medians))


def test_zero_amount_sigma_gives_single_digit_amounts():
    params = GenerationParams(n_peers=10, n_payments=200, amount_sigma=0.0)
    _, payments = generate(params)
    assert {p.amount for p in payments} <= set(range(1, 10))


def test_generation_is_deterministic_and_streams_are_independent():
    params = GenerationParams(n_peers=80, n_payments=100, seed=11)
    net1, payments1 = generate(params)
    net2, payments2 = generate(params)
    assert net1 == net2
    assert [p.to_record() for p in payments1] == [p.to_record() for p in payments2]

    # payment parameters do not move the network
    other = GenerationParams(n_peers=80, n_payments=300, payment_rate=1.0, seed=11)
    net3, _ = generate(other)
    assert net3 == net1

    net4, _ = generate(GenerationParams(n_peers=80, n_payments=100, seed=12))
    assert net4 != net1


def test_generate_payments_needs_two_peers():
    params = GenerationParams(n_peers=2, n_payments=3)
    peers, _ = generate_topology(params)
    with pytest.raises(ValueError):
        generate_payments(params, peers[:1])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_peers=1),
        dict(capacity_gini=1.0),
        dict(p_uncoop_before=0.6, p_uncoop_after=0.6),
        dict(same_recipient_fraction=1.5),
        dict(payment_rate=0.0),
        dict(topology_sigma=-1.0),
    ],
)
def test_invalid_generation_params(kwargs):
    with pytest.raises(ValueError):
        GenerationParams(**kwargs)
