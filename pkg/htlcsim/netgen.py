"""Pre-processing: generate a random channel network and payment script from a few parameters.

All randomness flows from ``GenerationParams.seed``: four independent streams
are spawned from it (topology, capacities, balance splits, payments), so
changing, say, the payment parameters leaves the generated network untouched.

>>> network, payments = generate(GenerationParams(n_peers=20, n_payments=5, seed=3))
>>> len(network.peers), len(payments)
(20, 5)
>>> network.total_funds() == network.total_capacity()
True
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from htlcsim.model import (
    Channel,
    ChannelEndpoint,
    Network,
    Payment,
    Peer,
)
from htlcsim.util import mk_conditional_logger

Seed = Union[int, np.random.Generator, np.random.SeedSequence, None]

HUB_ANCHOR = 0  # the peer a zero-width topology gaussian connects everybody to
MAX_COUNTERPARTY_DRAWS = 100
MAX_AMOUNT_EXPONENT = 15


@dataclass
class GenerationParams:
    """Statistical description of a network and of the payments to play on it.

    :param n_peers: Number of peers
    :param avg_channels_per_peer: Mean number of channels each peer initiates
    :param topology_sigma: Width of the gaussian choosing counterparties (0 makes a hub)
    :param p_uncoop_before: Probability a peer is uncooperative before establishing an HTLC
    :param p_uncoop_after: Probability a peer is uncooperative after establishing an HTLC
        (both are sampled at simulation time, they change nothing in the generated files)
    :param avg_channel_capacity: Mean channel capacity, in satoshi
    :param capacity_gini: Gini index of channel capacities
    :param payment_rate: Payments per second
    :param n_payments: Number of payments
    :param amount_sigma: Width of the gaussian whose tail gives amount orders of magnitude
    :param same_recipient_fraction: Fraction of payments sent to one designated peer
    :param seed: Seed of every random draw
    """

    n_peers: int = 100
    avg_channels_per_peer: float = 2.0
    topology_sigma: float = 10.0
    p_uncoop_before: float = 0.0
    p_uncoop_after: float = 0.0
    avg_channel_capacity: int = 1_000_000
    capacity_gini: float = 0.5
    payment_rate: float = 10.0
    n_payments: int = 1000
    amount_sigma: float = 2.0
    same_recipient_fraction: float = 0.0
    seed: int = 42
    # endpoint policy given to every generated endpoint
    base_fee: int = 1000
    proportional_fee: int = 1000
    timelock_delta: int = 144
    min_htlc: int = 1

    def __post_init__(self):
        if self.n_peers < 2:
            raise ValueError(f"need at least 2 peers, got {self.n_peers}")
        if self.n_payments < 0:
            raise ValueError(f"n_payments must be >= 0, got {self.n_payments}")
        if self.avg_channels_per_peer <= 0:
            raise ValueError("avg_channels_per_peer must be positive")
        if self.topology_sigma < 0 or self.amount_sigma < 0:
            raise ValueError("gaussian widths must be non-negative")
        for name in ("p_uncoop_before", "p_uncoop_after", "same_recipient_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        if self.p_uncoop_before + self.p_uncoop_after > 1:
            raise ValueError("p_uncoop_before + p_uncoop_after cannot exceed 1")
        if not 0 <= self.capacity_gini < 1:
            raise ValueError(f"capacity_gini must be in [0, 1), got {self.capacity_gini}")
        if self.avg_channel_capacity <= 0:
            raise ValueError("avg_channel_capacity must be positive")
        if self.payment_rate <= 0:
            raise ValueError("payment_rate must be positive")

    def endpoint(self, owner: int, balance: int = 0) -> ChannelEndpoint:
        return ChannelEndpoint(
            owner=owner,
            balance=balance,
            base_fee=self.base_fee,
            proportional_fee=self.proportional_fee,
            timelock_delta=self.timelock_delta,
            min_htlc=self.min_htlc,
        )


def _rng(seed: Seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def spawn_streams(seed: int, n: int = 4) -> List[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ------------------------------------------------------------------ topology


def _counterparty(i: int, n_peers: int, sigma: float, rng: np.random.Generator) -> int:
    for _ in range(MAX_COUNTERPARTY_DRAWS):
        x = rng.normal(0.0, sigma) if sigma > 0 else 0.0
        j = (HUB_ANCHOR + int(math.floor(abs(x) + 0.5))) % n_peers
        if j != i:
            return j
    # only the anchor of a (near) zero-width gaussian ends up here
    j = int(rng.integers(n_peers - 1))
    return j if j < i else j + 1


def initiated_channel_counts(n: int, avg: float, rng: Seed = None) -> np.ndarray:
    """How many channels each of ``n`` peers initiates, with mean ``avg``.

    ``1 + Poisson(avg - 1)`` when ``avg >= 1``, so every peer initiates at least one;
    ``Poisson(avg)`` below that, where some peers must initiate none.

    >>> initiated_channel_counts(4, 1.0, 0).tolist()
    [1, 1, 1, 1]
    """
    rng = _rng(rng)
    if avg >= 1:
        return 1 + rng.poisson(avg - 1, size=n)
    return rng.poisson(avg, size=n)


def generate_topology(
    params: GenerationParams, rng: Seed = None
) -> Tuple[List[Peer], List[Channel]]:
    """Peers and channels, with zero capacities and balances.

    Each peer ``i`` initiates ``initiated_channel_counts`` channels, with mean
    ``avg_channels_per_peer``; each counterparty is ``round(|x|) mod n_peers`` with
    ``x ~ Normal(0, topology_sigma)``, redrawn on self-loops. Parallel channels between
    the same pair are kept.
    """
    rng = _rng(params.seed if rng is None else rng)
    n = params.n_peers
    peers = [Peer(i) for i in range(n)]
    n_initiated = initiated_channel_counts(n, params.avg_channels_per_peer, rng)
    channels = []
    for i in range(n):
        for _ in range(int(n_initiated[i])):
            j = _counterparty(i, n, params.topology_sigma, rng)
            channel = Channel(
                id=len(channels),
                peer1=i,
                peer2=j,
                capacity=0,
                endpoint1=params.endpoint(i),
                endpoint2=params.endpoint(j),
            )
            channels.append(channel)
            peers[i].open_channel_ids.append(channel.id)
            peers[j].open_channel_ids.append(channel.id)
    return peers, channels


# ---------------------------------------------------------------- capacities


def gini(values: Sequence[float]) -> float:
    """Gini index: the sum of all pairwise ``|x_i - x_j|`` over ``2 n^2 mean(x)``.

    >>> gini([5, 5, 5, 5])
    0.0
    >>> gini([1, 2, 3, 4])
    0.25
    >>> gini([0, 0, 0, 10])
    0.75
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("gini of an empty list is undefined")
    if np.any(x < 0):
        raise ValueError("gini needs non-negative values")
    total = x.sum()
    if total == 0:
        raise ValueError("gini of all-zero values is undefined")
    # sum_i sum_j |x_i - x_j| == 2 * sum_i (2i - n - 1) x_(i), with sorted x and 1-based i
    coefficients = 2 * np.arange(1, n + 1) - n - 1
    return float(np.dot(coefficients, x) / (n * total))


def lognormal_sigma_for_gini(g: float) -> float:
    """The log-normal shape whose Gini index is ``g`` (Gini = 2 Phi(sigma / sqrt 2) - 1).

    >>> round(lognormal_sigma_for_gini(0.5), 4)
    0.9539
    """
    if not 0 <= g < 1:
        raise ValueError(f"gini must be in [0, 1), got {g}")
    return float(math.sqrt(2) * norm.ppf((g + 1) / 2))


def sample_capacities(
    n: int, avg_capacity: float, g: float, rng: Seed = None
) -> np.ndarray:
    """``n`` integer capacities with mean ``avg_capacity`` and Gini index ``g`` (log-normal)."""
    rng = _rng(rng)
    sigma = lognormal_sigma_for_gini(g)
    mu = math.log(avg_capacity) - sigma**2 / 2
    capacities = np.rint(rng.lognormal(mu, sigma, size=n)).astype(np.int64)
    return np.maximum(capacities, 1)


def generate_capacities(
    channels: List[Channel], avg_capacity: float, g: float, rng: Seed = None
) -> List[Channel]:
    capacities = sample_capacities(len(channels), avg_capacity, g, rng)
    for channel, capacity in zip(channels, capacities):
        channel.capacity = int(capacity)
    return channels


# ----------------------------------------------------------------- endpoints


def split_balance(capacity: int, fraction: float) -> Tuple[int, int]:
    """Balances of (endpoint1, endpoint2) when endpoint1 holds ``fraction`` of ``capacity``.

    >>> split_balance(1_000_000, 0.5)
    (500000, 500000)
    >>> split_balance(1_000_000, 0.0)
    (0, 1000000)
    """
    balance1 = min(capacity, max(0, int(round(capacity * fraction))))
    return balance1, capacity - balance1


def generate_endpoints(
    channels: List[Channel], params: GenerationParams, rng: Seed = None
) -> List[Channel]:
    """Split each capacity between the two endpoints by a uniform fraction; set default policies."""
    rng = _rng(rng)
    fractions = rng.uniform(0.0, 1.0, size=len(channels))
    for channel, fraction in zip(channels, fractions):
        balance1, balance2 = split_balance(channel.capacity, float(fraction))
        channel.endpoint1 = params.endpoint(channel.peer1, balance1)
        channel.endpoint2 = params.endpoint(channel.peer2, balance2)
    return channels


# ------------------------------------------------------------------ payments


def generate_payments(
    params: GenerationParams, peers: Sequence[Peer], rng: Seed = None
) -> List[Payment]:
    """The payment script, sorted by start time (integer milliseconds).

    Inter-arrival times are exponential with rate ``payment_rate``; amounts are
    ``m * 10**e`` satoshi with ``m`` uniform in ``[1, 10)`` and ``e = floor(|x|)``,
    ``x ~ Normal(0, amount_sigma)``.
    """
    rng = _rng(rng)
    n_peers, n = len(peers), params.n_payments
    if n_peers < 2:
        raise ValueError("need at least 2 peers to generate payments")
    peer_ids = np.array([p.id for p in peers])
    mean_gap_ms = 1000.0 / params.payment_rate

    start_times = np.floor(np.cumsum(rng.exponential(mean_gap_ms, size=n))).astype(np.int64)
    designated = int(rng.integers(n_peers))
    to_designated = rng.random(size=n) < params.same_recipient_fraction
    senders = rng.integers(n_peers, size=n)
    receivers = rng.integers(n_peers - 1, size=n)
    senders_to_designated = rng.integers(n_peers - 1, size=n)
    exponents = np.floor(np.abs(rng.normal(0.0, 1.0, size=n) * params.amount_sigma))
    exponents = np.minimum(exponents, MAX_AMOUNT_EXPONENT).astype(np.int64)
    mantissas = rng.integers(1, 10, size=n)

    payments = []
    for k in range(n):
        if to_designated[k]:
            s = int(senders_to_designated[k])
            sender, receiver = (s if s < designated else s + 1), designated
        else:
            sender, r = int(senders[k]), int(receivers[k])
            receiver = r if r < sender else r + 1
        payments.append(
            Payment(
                id=k,
                sender=int(peer_ids[sender]),
                receiver=int(peer_ids[receiver]),
                amount=int(mantissas[k]) * 10 ** int(exponents[k]),
                start_time=int(start_times[k]),
            )
        )
    return payments


# ------------------------------------------------------------------- compose


def generate_network(
    params: GenerationParams, *, verbose: bool = False
) -> Network:
    topology_rng, capacity_rng, split_rng, _ = spawn_streams(params.seed)
    return _generate_network(params, topology_rng, capacity_rng, split_rng, verbose)


def _generate_network(params, topology_rng, capacity_rng, split_rng, verbose):
    _clog = mk_conditional_logger(verbose, print)
    peers, channels = generate_topology(params, topology_rng)
    generate_capacities(
        channels, params.avg_channel_capacity, params.capacity_gini, capacity_rng
    )
    generate_endpoints(channels, params, split_rng)
    n = len(peers)
    _clog(
        f"generated {n} peers and {len(channels)} channels: "
        f"{len(channels) / n:.3f} initiated and {2 * len(channels) / n:.3f} "
        f"incident channels per peer on average"
    )
    return Network.from_lists(peers, channels)


def generate(
    params: GenerationParams, *, verbose: bool = False
) -> Tuple[Network, List[Payment]]:
    """The network and the payment script described by ``params``."""
    topology_rng, capacity_rng, split_rng, payment_rng = spawn_streams(params.seed)
    network = _generate_network(params, topology_rng, capacity_rng, split_rng, verbose)
    payments = generate_payments(
        params, [network.peers[i] for i in sorted(network.peers)], payment_rng
    )
    mk_conditional_logger(verbose, print)(
        f"generated {len(payments)} payments over "
        f"{payments[-1].start_time / 1000 if payments else 0:.1f} s"
    )
    return network, payments
