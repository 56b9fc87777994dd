"""Source routing: find the cheapest path from sender to receiver, then price it hop by hop.

The distance of traversing a channel is charged by the peer that forwards
across it, so the sender's own first hop is free: it pays itself no fee and
adds no timelock. ``find_path`` runs Dijkstra from the sender with edge costs
evaluated at the payment amount; ``new_route`` then walks the path from the
receiver back to the sender accumulating exact fees and timelocks.

>>> from htlcsim.model import Channel, ChannelEndpoint, Network, Peer
>>> ep = lambda owner: ChannelEndpoint(owner, balance=500_000)
>>> channels = [Channel(i, i, i + 1, 1_000_000, ep(i), ep(i + 1)) for i in range(3)]
>>> peers = [Peer(i, [c.id for c in channels if i in (c.peer1, c.peer2)]) for i in range(4)]
>>> net = Network.from_lists(peers, channels)
>>> route = new_route(find_path(0, 3, 100_000, net), 100_000, net, 144, source=0)
>>> [hop.forward_amount for hop in route]
[100203, 100101, 100000]
>>> [hop.cumulative_timelock for hop in route]
[432, 288, 144]
"""

import heapq
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

from htlcsim.model import (
    Blacklist,
    Channel,
    ChannelEndpoint,
    ChannelId,
    Msat,
    Network,
    Payment,
    PeerId,
    Route,
    RouteHop,
    Satoshi,
    endpoint_for_direction,
)

DFLT_FINAL_TIMELOCK = 144  # blocks
DFLT_MAX_EXPANSIONS = 20_000  # partial paths tried when the cheapest path is not viable
MSAT_PER_SAT = 1000
PPM = 1_000_000

Path = List[ChannelId]


@dataclass(frozen=True)
class DistanceWeights:
    fee_weight: float = 1.0  # per msat
    timelock_weight: float = 10.0  # per block

    def __post_init__(self):
        if self.fee_weight < 0 or self.timelock_weight < 0:
            raise ValueError(f"distance weights must be non-negative: {self}")
        if self.fee_weight == 0 and self.timelock_weight == 0:
            raise ValueError("fee_weight and timelock_weight cannot both be zero")


def fee(endpoint: ChannelEndpoint, amount: Satoshi) -> Msat:
    """The fee, in msat, that ``endpoint`` withholds to forward ``amount`` satoshi.

    >>> fee(ChannelEndpoint(0, base_fee=1000, proportional_fee=100), 1_000_000)
    101000
    """
    if amount < 0:
        raise ValueError(f"cannot compute a fee for a negative amount: {amount}")
    return endpoint.base_fee + endpoint.proportional_fee * amount * MSAT_PER_SAT // PPM


def msat_to_sat_ceil(msat: Msat) -> Satoshi:
    return -(-msat // MSAT_PER_SAT)


def edge_distance(
    endpoint: ChannelEndpoint, amount: Satoshi, weights: DistanceWeights
) -> float:
    """Grows with both the fee and the timelock delta of the forwarding endpoint.

    >>> ep = ChannelEndpoint(0, base_fee=1000, proportional_fee=1000, timelock_delta=144)
    >>> edge_distance(ep, 100_000, DistanceWeights(1, 10))
    102440
    """
    return (
        weights.fee_weight * fee(endpoint, amount)
        + weights.timelock_weight * endpoint.timelock_delta
    )


def is_hop_viable(
    channel: Channel, from_peer: PeerId, amount: Satoshi, *, is_first_hop: bool
) -> bool:
    """Whether ``channel`` can carry ``amount`` out of ``from_peer``.

    The sender knows its own balance; for remote channels only the capacity is public.
    """
    endpoint = endpoint_for_direction(channel, from_peer)
    bound = endpoint.balance if is_first_hop else channel.capacity
    return amount <= bound and amount >= endpoint.min_htlc


def _usable(channel: Channel, to_peer: PeerId, blacklist: Optional[Blacklist]) -> bool:
    if channel.closed:
        return False
    if blacklist is None:
        return True
    return (
        channel.id not in blacklist.excluded_channel_ids
        and to_peer not in blacklist.excluded_peer_ids
    )


def may_carry(
    channel: Channel, from_peer: PeerId, amount: Satoshi, *, is_first_hop: bool
) -> bool:
    """The part of ``is_hop_viable`` that still holds once fees are added to ``amount``.

    A hop of a route forwards at least the payment amount, so a channel that cannot
    carry the bare amount cannot carry the route's amount either.
    """
    endpoint = endpoint_for_direction(channel, from_peer)
    bound = endpoint.balance if is_first_hop else channel.capacity
    return amount <= bound


def _excluded_ends(source, target, blacklist):
    return blacklist is not None and (
        target in blacklist.excluded_peer_ids or source in blacklist.excluded_peer_ids
    )


def _dijkstra(source, target, amount, network, blacklist, weights, can_carry):
    best = {}
    heap = [(0.0, 0, (), source)]
    while heap:
        dist, hops, path, peer = heapq.heappop(heap)
        if peer in best:
            continue
        best[peer] = path
        if peer == target:
            return list(path)
        for channel in network.channels_of(peer):
            to_peer = channel.other_peer(peer)
            if to_peer in best or not _usable(channel, to_peer, blacklist):
                continue
            is_first_hop = peer == source
            if not can_carry(channel, peer, amount, is_first_hop=is_first_hop):
                continue
            cost = 0.0
            if not is_first_hop:
                cost = edge_distance(endpoint_for_direction(channel, peer), amount, weights)
            heapq.heappush(
                heap, (dist + cost, hops + 1, path + (channel.id,), to_peer)
            )
    return None


def find_path(
    source: PeerId,
    target: PeerId,
    amount: Satoshi,
    network: Network,
    blacklist: Optional[Blacklist] = None,
    weights: DistanceWeights = DistanceWeights(),
) -> Optional[Path]:
    """Dijkstra over usable, viable channels. Returns channel ids from source to target.

    Labels are ``(distance, hops, channel ids)`` compared lexicographically, so
    ties go to fewer hops and then to the smallest first differing channel id.
    """
    if source == target:
        raise ValueError(f"source and target are the same peer: {source}")
    if _excluded_ends(source, target, blacklist):
        return None
    return _dijkstra(source, target, amount, network, blacklist, weights, is_hop_viable)


def iter_paths(
    source: PeerId,
    target: PeerId,
    amount: Satoshi,
    network: Network,
    blacklist: Optional[Blacklist] = None,
    weights: DistanceWeights = DistanceWeights(),
    *,
    max_expansions: Optional[int] = None,
) -> Iterator[Path]:
    """Simple paths from source to target that ``may_carry`` ``amount``, best label first.

    Best-first search over partial paths: a label only grows when a path is extended,
    so complete paths come out in the order ``find_path`` ranks them.
    Stops after ``max_expansions`` partial paths (None: never).
    """
    if source == target:
        raise ValueError(f"source and target are the same peer: {source}")
    if _excluded_ends(source, target, blacklist):
        return
    heap = [(0.0, 0, (), source, frozenset({source}))]
    n_expanded = 0
    while heap:
        dist, hops, path, peer, visited = heapq.heappop(heap)
        if peer == target:
            yield list(path)
            continue
        if max_expansions is not None and n_expanded >= max_expansions:
            return
        n_expanded += 1
        for channel in network.channels_of(peer):
            to_peer = channel.other_peer(peer)
            if to_peer in visited or not _usable(channel, to_peer, blacklist):
                continue
            is_first_hop = peer == source
            if not may_carry(channel, peer, amount, is_first_hop=is_first_hop):
                continue
            cost = 0.0
            if not is_first_hop:
                cost = edge_distance(endpoint_for_direction(channel, peer), amount, weights)
            heapq.heappush(
                heap,
                (dist + cost, hops + 1, path + (channel.id,), to_peer, visited | {to_peer}),
            )


def path_peers(path: Sequence[ChannelId], source: PeerId, network: Network) -> List[PeerId]:
    """The peers visited along ``path``, starting at ``source``."""
    peers = [source]
    for channel_id in path:
        peers.append(network.channels[channel_id].other_peer(peers[-1]))
    return peers


def path_distance(
    path: Sequence[ChannelId],
    source: PeerId,
    amount: Satoshi,
    network: Network,
    weights: DistanceWeights = DistanceWeights(),
) -> float:
    """The total distance ``find_path`` minimises (summed from sender to receiver)."""
    peers = path_peers(path, source, network)
    dist = 0.0
    for i, channel_id in enumerate(path):
        if i == 0:
            continue
        endpoint = endpoint_for_direction(network.channels[channel_id], peers[i])
        dist += edge_distance(endpoint, amount, weights)
    return dist


def new_route(
    path: Optional[Sequence[ChannelId]],
    amount: Satoshi,
    network: Network,
    final_timelock: int = DFLT_FINAL_TIMELOCK,
    *,
    source: PeerId,
) -> Optional[Route]:
    """Turn a path out of ``source`` into a route, or return None if some hop cannot carry
    its amount.

    Walking from the receiver back, the last hop carries exactly ``amount`` with
    ``final_timelock``; each earlier hop adds the (ceil-to-satoshi) fee and the
    timelock delta of the peer forwarding the next hop.
    """
    if not path:
        return None
    peers = path_peers(path, source, network)
    channels = [network.channels[channel_id] for channel_id in path]

    hops = [None] * len(path)
    forward_amount, cumulative_timelock = amount, final_timelock
    for i in reversed(range(len(path))):
        if i < len(path) - 1:
            forwarding = endpoint_for_direction(channels[i + 1], peers[i + 1])
            forward_amount += msat_to_sat_ceil(fee(forwarding, forward_amount))
            cumulative_timelock += forwarding.timelock_delta
        if not is_hop_viable(channels[i], peers[i], forward_amount, is_first_hop=i == 0):
            return None
        hops[i] = RouteHop(
            channel_id=path[i],
            from_peer=peers[i],
            to_peer=peers[i + 1],
            forward_amount=forward_amount,
            cumulative_timelock=cumulative_timelock,
        )
    return Route(hops)


def find_route(
    payment: Payment,
    network: Network,
    blacklist: Optional[Blacklist] = None,
    weights: DistanceWeights = DistanceWeights(),
    final_timelock: int = DFLT_FINAL_TIMELOCK,
    *,
    max_expansions: Optional[int] = DFLT_MAX_EXPANSIONS,
) -> Optional[Route]:
    """The best path whose route is viable, or None: the payment cannot be sent.

    Dijkstra first, with the checks that fees cannot undo (``may_carry``). When the
    fees of that path make one of its hops unviable, the next best paths are tried
    in order until one prices into a viable route.
    """
    sender, receiver, amount = payment.sender, payment.receiver, payment.amount
    if _excluded_ends(sender, receiver, blacklist):
        return None
    path = _dijkstra(sender, receiver, amount, network, blacklist, weights, may_carry)
    if path is None:
        return None
    route = new_route(path, amount, network, final_timelock, source=sender)
    if route is not None:
        return route
    candidates = iter_paths(
        sender,
        receiver,
        amount,
        network,
        blacklist,
        weights,
        max_expansions=max_expansions,
    )
    for path in candidates:
        route = new_route(path, amount, network, final_timelock, source=sender)
        if route is not None:
            return route
    return None
