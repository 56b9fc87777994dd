"""Domain types of the HTLC network: peers, channels, endpoints, payments and routes.

Amounts are integer satoshi, fees are integer millisatoshi (msat) and
proportional fees are in parts-per-million (ppm) of the forwarded amount.

A channel holds the funds of both its endpoints plus the funds locked in its
pending HTLCs, so that at every event boundary

    endpoint1.balance + endpoint2.balance + sum(pending HTLC amounts) == capacity

>>> ch = Channel(0, peer1=3, peer2=7, capacity=100_000,
...              endpoint1=ChannelEndpoint(owner=3, balance=40_000),
...              endpoint2=ChannelEndpoint(owner=7, balance=60_000))
>>> establish_htlc(ch, from_peer=7, amount=10_000, payment_id=1)
>>> ch.endpoint1.balance, ch.endpoint2.balance, ch.locked_amount()
(40000, 50000, 10000)
>>> apply_hop_settlement(ch, from_peer=7, amount=10_000)
>>> ch.endpoint1.balance, ch.endpoint2.balance, ch.locked_amount()
(50000, 50000, 0)
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Set, Tuple, FrozenSet

PeerId = int
ChannelId = int
Satoshi = int
Msat = int
Millis = int  # simulated milliseconds


class HTLCStateError(ValueError):
    """The HTLC mechanics were asked to do something the channel state forbids."""


class PaymentResult(str, Enum):
    pending = "pending"
    success = "success"
    fail = "fail"
    unknown = "unknown"


class FailReason(str, Enum):
    none = "none"
    no_route = "no_route"
    unbalanced = "unbalanced"
    uncooperative = "uncooperative"
    timeout = "timeout"


@dataclass
class Peer:
    id: PeerId
    open_channel_ids: List[ChannelId] = field(default_factory=list)

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"peer id must be non-negative, was {self.id}")


@dataclass
class ChannelEndpoint:
    """How ``owner`` behaves in one direction of a channel: its balance and policy."""

    owner: PeerId
    balance: Satoshi = 0
    base_fee: Msat = 1000
    proportional_fee: int = 1000  # ppm
    timelock_delta: int = 144  # blocks
    min_htlc: Satoshi = 1

    def __post_init__(self):
        if self.balance < 0:
            raise ValueError(f"endpoint balance must be >= 0, was {self.balance}")
        if self.timelock_delta < 1:
            raise ValueError(
                f"timelock_delta must be >= 1 block, was {self.timelock_delta}"
            )
        if self.base_fee < 0 or self.proportional_fee < 0 or self.min_htlc < 0:
            raise ValueError(f"fees and min_htlc must be non-negative: {self}")


@dataclass
class PendingHTLC:
    """Funds locked on a channel: already debited from the ``from_peer`` side."""

    payment_id: int
    channel_id: ChannelId
    from_peer: PeerId
    amount: Satoshi


@dataclass
class Channel:
    id: ChannelId
    peer1: PeerId
    peer2: PeerId
    capacity: Satoshi
    endpoint1: ChannelEndpoint  # direction peer1 -> peer2
    endpoint2: ChannelEndpoint  # direction peer2 -> peer1
    closed: bool = False
    pending_htlcs: List[PendingHTLC] = field(default_factory=list)

    def __post_init__(self):
        if self.peer1 == self.peer2:
            raise ValueError(f"channel {self.id} connects peer {self.peer1} to itself")
        if self.capacity < 0:
            raise ValueError(f"channel {self.id} has negative capacity")

    def other_peer(self, peer: PeerId) -> PeerId:
        if peer == self.peer1:
            return self.peer2
        elif peer == self.peer2:
            return self.peer1
        raise HTLCStateError(f"peer {peer} is not an endpoint of channel {self.id}")

    def locked_amount(self) -> Satoshi:
        return sum(htlc.amount for htlc in self.pending_htlcs)

    def is_conserved(self) -> bool:
        return (
            self.endpoint1.balance + self.endpoint2.balance + self.locked_amount()
            == self.capacity
        )

    def close(self):
        self.closed = True


def endpoint_for_direction(channel: Channel, from_peer: PeerId) -> ChannelEndpoint:
    """The endpoint that spends when funds move from ``from_peer`` across ``channel``.

    >>> ch = Channel(0, 3, 7, 2, ChannelEndpoint(3, 1), ChannelEndpoint(7, 1))
    >>> endpoint_for_direction(ch, 7).owner
    7
    """
    if from_peer == channel.peer1:
        return channel.endpoint1
    elif from_peer == channel.peer2:
        return channel.endpoint2
    raise HTLCStateError(
        f"peer {from_peer} is not an endpoint of channel {channel.id} "
        f"({channel.peer1}, {channel.peer2})"
    )


def establish_htlc(
    channel: Channel, from_peer: PeerId, amount: Satoshi, payment_id: int
) -> None:
    """Debit ``amount`` from the ``from_peer`` side and lock it in a pending HTLC."""
    endpoint = endpoint_for_direction(channel, from_peer)
    if amount > endpoint.balance:
        raise HTLCStateError(
            f"channel {channel.id}: balance {endpoint.balance} of peer {from_peer} "
            f"cannot lock {amount}"
        )
    endpoint.balance -= amount
    channel.pending_htlcs.append(
        PendingHTLC(payment_id, channel.id, from_peer, amount)
    )


def find_pending_htlc(
    channel: Channel,
    from_peer: PeerId,
    *,
    payment_id: Optional[int] = None,
    amount: Optional[Satoshi] = None,
) -> Optional[PendingHTLC]:
    for htlc in channel.pending_htlcs:
        if (
            htlc.from_peer == from_peer
            and (payment_id is None or htlc.payment_id == payment_id)
            and (amount is None or htlc.amount == amount)
        ):
            return htlc
    return None


def apply_hop_settlement(
    channel: Channel,
    from_peer: PeerId,
    amount: Satoshi,
    *,
    payment_id: Optional[int] = None,
) -> None:
    """Settle the pending HTLC of ``amount`` sent by ``from_peer``: the other side is credited.

    The amount was debited when the HTLC was established, so only the credit
    happens here. Settling zero is a no-op.
    """
    if amount == 0 and find_pending_htlc(channel, from_peer, amount=0) is None:
        return
    htlc = find_pending_htlc(channel, from_peer, payment_id=payment_id, amount=amount)
    if htlc is None:
        raise HTLCStateError(
            f"channel {channel.id}: no pending HTLC of {amount} from peer {from_peer}"
        )
    channel.pending_htlcs.remove(htlc)
    endpoint_for_direction(channel, channel.other_peer(from_peer)).balance += amount


def refund_htlc(channel: Channel, from_peer: PeerId, payment_id: int) -> Satoshi:
    """Release the HTLC of ``payment_id`` back to ``from_peer``. Returns the refunded amount."""
    htlc = find_pending_htlc(channel, from_peer, payment_id=payment_id)
    if htlc is None:
        raise HTLCStateError(
            f"channel {channel.id}: no pending HTLC of payment {payment_id} "
            f"from peer {from_peer}"
        )
    channel.pending_htlcs.remove(htlc)
    endpoint_for_direction(channel, from_peer).balance += htlc.amount
    return htlc.amount


@dataclass(frozen=True)
class RouteHop:
    channel_id: ChannelId
    from_peer: PeerId
    to_peer: PeerId
    forward_amount: Satoshi  # entering this hop, downstream fees included
    cumulative_timelock: int  # blocks


@dataclass
class Route:
    hops: List[RouteHop]

    def __len__(self):
        return len(self.hops)

    def __iter__(self) -> Iterator[RouteHop]:
        return iter(self.hops)

    def __getitem__(self, i) -> RouteHop:
        return self.hops[i]

    @property
    def channel_ids(self) -> Tuple[ChannelId, ...]:
        return tuple(hop.channel_id for hop in self.hops)

    @property
    def total_amount(self) -> Satoshi:
        """What the sender locks on its first hop."""
        return self.hops[0].forward_amount

    @property
    def total_fee(self) -> Satoshi:
        return self.hops[0].forward_amount - self.hops[-1].forward_amount


@dataclass
class Blacklist:
    """Channels and peers a payment's route searches must avoid.

    Peers in ``protected`` (the payment's sender and receiver) are never excluded.

    >>> b = Blacklist(protected=frozenset({0, 9}))
    >>> b.exclude_peer(9); b.exclude_peer(4); b.exclude_channel(12)
    >>> sorted(b.excluded_peer_ids), sorted(b.excluded_channel_ids)
    ([4], [12])
    """

    excluded_channel_ids: Set[ChannelId] = field(default_factory=set)
    excluded_peer_ids: Set[PeerId] = field(default_factory=set)
    protected: FrozenSet[PeerId] = frozenset()

    def exclude_channel(self, channel_id: ChannelId):
        self.excluded_channel_ids.add(channel_id)

    def exclude_peer(self, peer_id: PeerId):
        if peer_id not in self.protected:
            self.excluded_peer_ids.add(peer_id)

    def is_empty(self) -> bool:
        return not (self.excluded_channel_ids or self.excluded_peer_ids)


@dataclass(frozen=True)
class PaymentRecord:
    """The per-payment output row of a simulation."""

    id: int
    sender: PeerId
    receiver: PeerId
    amount: Satoshi
    start_time: Millis
    end_time: Optional[Millis]
    result: PaymentResult
    fail_reason: FailReason
    attempts: int
    uncooperative_encountered: bool
    route: Tuple[ChannelId, ...] = ()

    @property
    def route_length(self) -> int:
        return len(self.route)


@dataclass
class Payment:
    id: int
    sender: PeerId
    receiver: PeerId
    amount: Satoshi
    start_time: Millis
    end_time: Optional[Millis] = None
    result: PaymentResult = PaymentResult.pending
    fail_reason: FailReason = FailReason.none
    attempts: int = 0
    encountered_uncooperative: bool = False
    route: Optional[Route] = None
    blacklist: Optional[Blacklist] = None

    def __post_init__(self):
        if self.sender == self.receiver:
            raise ValueError(f"payment {self.id} is sent by peer {self.sender} to itself")
        if self.amount <= 0:
            raise ValueError(f"payment {self.id} amount must be > 0, was {self.amount}")
        if self.start_time < 0:
            raise ValueError(f"payment {self.id} has a negative start time")

    @property
    def is_pending(self) -> bool:
        return self.result == PaymentResult.pending

    def ensure_blacklist(self) -> Blacklist:
        if self.blacklist is None:
            self.blacklist = Blacklist(protected=frozenset({self.sender, self.receiver}))
        return self.blacklist

    def to_record(self) -> PaymentRecord:
        return PaymentRecord(
            id=self.id,
            sender=self.sender,
            receiver=self.receiver,
            amount=self.amount,
            start_time=self.start_time,
            end_time=self.end_time,
            result=self.result,
            fail_reason=self.fail_reason,
            attempts=self.attempts,
            uncooperative_encountered=self.encountered_uncooperative,
            route=self.route.channel_ids if self.route is not None else (),
        )


@dataclass
class Network:
    """The channel graph: peers and channels keyed by id."""

    peers: Dict[PeerId, Peer] = field(default_factory=dict)
    channels: Dict[ChannelId, Channel] = field(default_factory=dict)

    @classmethod
    def from_lists(cls, peers: List[Peer], channels: List[Channel]) -> "Network":
        return cls({p.id: p for p in peers}, {c.id: c for c in channels})

    def channels_of(self, peer: PeerId) -> Iterator[Channel]:
        for channel_id in self.peers[peer].open_channel_ids:
            yield self.channels[channel_id]

    def total_funds(self) -> Satoshi:
        """All satoshi in the network, spendable or locked in HTLCs."""
        return sum(
            c.endpoint1.balance + c.endpoint2.balance + c.locked_amount()
            for c in self.channels.values()
        )

    def total_capacity(self) -> Satoshi:
        return sum(c.capacity for c in self.channels.values())

    def check_conservation(self):
        for c in self.channels.values():
            if not c.is_conserved():
                raise HTLCStateError(
                    f"channel {c.id}: balances {c.endpoint1.balance} + "
                    f"{c.endpoint2.balance} + locked {c.locked_amount()} "
                    f"!= capacity {c.capacity}"
                )

    def snapshot_balances(self) -> Dict[ChannelId, Tuple[Satoshi, Satoshi]]:
        return {
            c.id: (c.endpoint1.balance, c.endpoint2.balance)
            for c in self.channels.values()
        }
