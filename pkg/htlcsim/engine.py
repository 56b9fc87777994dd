"""Discrete-event execution of payments over the channel graph.

Every payment starts with a ``find_route`` event at its start time. From there
events follow the HTLC message flow between the peers of the route:

::

    find_route -> send_payment -> forward_payment* -> receive_payment
                                                        |         \\
                    receive_success <- forward_success*          forward_fail* -> receive_fail
                                                                                    |
                                                                       find_route (re-attempt)

``hop_index`` of an event is the index of the route hop it concerns, with
``route[i]`` going from ``route[i].from_peer`` to ``route[i].to_peer``:

- ``forward_payment(i)`` runs at ``route[i].from_peer``, whose incoming HTLC on
  hop ``i - 1`` is pending, and establishes hop ``i``.
- ``receive_payment(n - 1)`` runs at the receiver and settles the last hop.
- ``forward_success(i)`` runs at ``route[i].from_peer`` once hop ``i`` is settled,
  and settles hop ``i - 1``.
- ``forward_fail(i)`` runs at ``route[i].from_peer`` and refunds hop ``i``.
- ``receive_fail`` refunds hop 0 (if it was established) and re-attempts.

An HTLC debits its sender when established and credits the next peer when
settled, so a forwarding peer keeps the difference between what it receives
and what it forwards: its fee.

A payment still pending past its validity window is marked unknown and makes no
further progress, but the HTLCs it has locked are still failed back (and a channel
to an uncooperative peer still closed) as their events come due.
"""

import heapq
import itertools
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional

import numpy as np

from htlcsim.model import (
    ChannelId,
    FailReason,
    Millis,
    Network,
    Payment,
    PaymentRecord,
    PaymentResult,
    PeerId,
    PendingHTLC,
    RouteHop,
    apply_hop_settlement,
    endpoint_for_direction,
    establish_htlc,
    find_pending_htlc,
    refund_htlc,
)
from htlcsim.routing import DFLT_FINAL_TIMELOCK, DistanceWeights, find_route
from htlcsim.util import mk_conditional_logger

__all__ = [
    "EventKind",
    "Event",
    "EventQueue",
    "SimConfig",
    "PendingHTLC",
    "Cooperation",
    "sample_uncooperative",
    "Simulation",
    "run",
]


class EventKind(str, Enum):
    find_route = "find_route"
    send_payment = "send_payment"
    forward_payment = "forward_payment"
    receive_payment = "receive_payment"
    forward_success = "forward_success"
    forward_fail = "forward_fail"
    receive_success = "receive_success"
    receive_fail = "receive_fail"


# events that settle or refund HTLCs already established
RESOLVING_KINDS = frozenset(
    {
        EventKind.forward_success,
        EventKind.forward_fail,
        EventKind.receive_success,
        EventKind.receive_fail,
    }
)


@dataclass(frozen=True)
class Event:
    time: Millis
    kind: EventKind
    payment_id: int
    hop_index: int = 0
    closes_channel: bool = False  # a fail delayed by an uncooperative peer


class EventQueue:
    """Events sorted by time, first-in first-out among equal times.

    >>> q = EventQueue()
    >>> for t in (10, 1, 10, 5):
    ...     q.push(Event(t, EventKind.find_route, payment_id=t))
    >>> [q.pop().time for _ in range(len(q))]
    [1, 5, 10, 10]
    """

    def __init__(self):
        self._heap = []
        self._event_ids = itertools.count()
        self.last_time = 0

    def __len__(self):
        return len(self._heap)

    def __bool__(self):
        return bool(self._heap)

    def push(self, event: Event):
        if event.time < self.last_time:
            raise ValueError(
                f"cannot enqueue {event} in the past (clock is at {self.last_time})"
            )
        heapq.heappush(self._heap, (event.time, next(self._event_ids), event))

    def peek_time(self) -> Millis:
        if not self._heap:
            raise IndexError("peek_time() on an empty event queue")
        return self._heap[0][0]

    def pop(self) -> Event:
        if not self._heap:
            raise IndexError("pop() from an empty event queue")
        time, _, event = heapq.heappop(self._heap)
        self.last_time = time
        return event


@dataclass
class SimConfig:
    latency_min: Millis = 10
    latency_max: Millis = 100
    processing_latency: Millis = 0
    payment_timeout: Millis = 60_000
    block_interval: Millis = 600_000
    validity_window: Millis = 900_000
    p_uncoop_before: float = 0.0
    p_uncoop_after: float = 0.0
    weights: DistanceWeights = field(default_factory=DistanceWeights)
    final_timelock: int = DFLT_FINAL_TIMELOCK
    seed: int = 42

    def __post_init__(self):
        if not 0 <= self.latency_min <= self.latency_max:
            raise ValueError(
                f"need 0 <= latency_min <= latency_max, "
                f"got {self.latency_min}, {self.latency_max}"
            )
        if self.processing_latency < 0:
            raise ValueError("processing_latency must be non-negative")
        if self.payment_timeout <= 0:
            raise ValueError(f"payment_timeout must be > 0, was {self.payment_timeout}")
        if self.block_interval <= 0 or self.validity_window <= 0:
            raise ValueError("block_interval and validity_window must be > 0")
        for name in ("p_uncoop_before", "p_uncoop_after"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability, was {getattr(self, name)}")
        if self.p_uncoop_before + self.p_uncoop_after > 1:
            raise ValueError(
                "p_uncoop_before + p_uncoop_after cannot exceed 1, "
                f"was {self.p_uncoop_before + self.p_uncoop_after}"
            )
        if self.final_timelock < 1:
            raise ValueError("final_timelock must be at least one block")


class Cooperation(str, Enum):
    cooperative = "cooperative"
    uncoop_before = "uncoop_before"
    uncoop_after = "uncoop_after"


def sample_uncooperative(config: SimConfig, rng: np.random.Generator) -> Cooperation:
    """Draw how a peer behaves for one HTLC it is asked to handle.

    >>> rng = np.random.default_rng(0)
    >>> sample_uncooperative(SimConfig(p_uncoop_before=1.0), rng).value
    'uncoop_before'
    """
    u = rng.random()
    if u < config.p_uncoop_before:
        return Cooperation.uncoop_before
    if u < config.p_uncoop_before + config.p_uncoop_after:
        return Cooperation.uncoop_after
    return Cooperation.cooperative


@dataclass
class AttemptFailure:
    """Why the last attempt of a payment failed, and what to blacklist for the next."""

    reason: FailReason
    channel_id: Optional[ChannelId] = None
    peer_id: Optional[PeerId] = None


class Simulation:
    """One simulation run: owns the graph it mutates, the clock and the event queue.

    :param network: The channel graph (mutated in place)
    :param payments: Payments to execute, sorted by start time
    :param config: Latencies, timeouts, uncooperative probabilities, routing weights, seed
    :param trace: Keep the list of processed events in ``self.trace``
    :param record_deltas: Keep, per payment, the net balance change of every
        endpoint it touched in ``self.deltas``
    """

    def __init__(
        self,
        network: Network,
        payments: Iterable[Payment],
        config: SimConfig = None,
        *,
        trace: bool = False,
        record_deltas: bool = False,
        verbose: bool = False,
    ):
        self.network = network
        self.payments: Dict[int, Payment] = {p.id: p for p in payments}
        self.config = config or SimConfig()
        # a receiver holds the preimage: refusing before or after locking looks the same
        self._receiver_config = replace(self.config, p_uncoop_after=0.0)
        self.rng = np.random.default_rng(self.config.seed)
        self.queue = EventQueue()
        self.now: Millis = 0
        self.failures: Dict[int, AttemptFailure] = {}
        self.events_processed = 0
        self.route_searches = 0
        self.trace: Optional[List[Event]] = [] if trace else None
        self.deltas: Optional[Dict[int, Counter]] = (
            defaultdict(Counter) if record_deltas else None
        )
        self._log = mk_conditional_logger(verbose, print)
        self._handlers = {
            EventKind.find_route: self.handle_find_route,
            EventKind.send_payment: self.handle_send_payment,
            EventKind.forward_payment: self.handle_forward_payment,
            EventKind.receive_payment: self.handle_receive_payment,
            EventKind.forward_success: self.handle_forward_success,
            EventKind.forward_fail: self.handle_forward_fail,
            EventKind.receive_success: self.handle_receive_success,
            EventKind.receive_fail: self.handle_receive_fail,
        }

    # ------------------------------------------------------------------ loop

    def run(self) -> List[PaymentRecord]:
        previous_start = None
        for payment in self.payments.values():
            if previous_start is not None and payment.start_time < previous_start:
                raise ValueError(
                    f"payments must be sorted by start time (payment {payment.id})"
                )
            previous_start = payment.start_time
            self.queue.push(Event(payment.start_time, EventKind.find_route, payment.id))

        while self.queue:
            event = self.queue.pop()
            self.now = event.time
            payment = self.payments[event.payment_id]
            if payment.is_pending and self.now > payment.start_time + self.config.validity_window:
                self._finalize(payment, PaymentResult.unknown)
            if self.trace is not None:
                self.trace.append(event)
            self.events_processed += 1
            if payment.is_pending or event.kind in RESOLVING_KINDS:
                self._handlers[event.kind](payment, event)
            else:
                self._release(payment, event)

        for payment in self.payments.values():
            if payment.is_pending:
                self._finalize(payment, PaymentResult.unknown)

        self._log(
            f"simulated {len(self.payments)} payments: {self.events_processed} events, "
            f"{self.route_searches} route searches, clock at {self.now} ms"
        )
        return [p.to_record() for p in self.payments.values()]

    def _schedule(self, delay: Millis, kind: EventKind, payment: Payment, hop_index=0, **kw):
        self.queue.push(Event(self.now + delay, kind, payment.id, hop_index, **kw))

    def _latency(self) -> Millis:
        return int(self.rng.integers(self.config.latency_min, self.config.latency_max + 1))

    def _finalize(self, payment: Payment, result: PaymentResult, reason=FailReason.none):
        payment.result = result
        payment.fail_reason = reason
        if result != PaymentResult.unknown:
            payment.end_time = self.now
        payment.blacklist = None
        self.failures.pop(payment.id, None)

    def _record(self, payment_id: int, channel_id: ChannelId, owner: PeerId, amount: int):
        if self.deltas is not None:
            self.deltas[payment_id][(channel_id, owner)] += amount

    # ------------------------------------------------------------ htlc steps

    def _establish(self, payment: Payment, hop: RouteHop):
        channel = self.network.channels[hop.channel_id]
        establish_htlc(channel, hop.from_peer, hop.forward_amount, payment.id)
        self._record(payment.id, hop.channel_id, hop.from_peer, -hop.forward_amount)

    def _settle(self, payment: Payment, hop: RouteHop):
        channel = self.network.channels[hop.channel_id]
        apply_hop_settlement(
            channel, hop.from_peer, hop.forward_amount, payment_id=payment.id
        )
        self._record(payment.id, hop.channel_id, hop.to_peer, hop.forward_amount)

    def _refund(self, payment: Payment, hop: RouteHop):
        channel = self.network.channels[hop.channel_id]
        if find_pending_htlc(channel, hop.from_peer, payment_id=payment.id) is None:
            return
        amount = refund_htlc(channel, hop.from_peer, payment.id)
        self._record(payment.id, hop.channel_id, hop.from_peer, amount)

    def _mark_uncooperative(self, payment: Payment, peer: PeerId):
        payment.encountered_uncooperative = True
        self.failures[payment.id] = AttemptFailure(FailReason.uncooperative, peer_id=peer)

    def _can_forward(self, hop: RouteHop) -> bool:
        endpoint = endpoint_for_direction(
            self.network.channels[hop.channel_id], hop.from_peer
        )
        return endpoint.balance >= hop.forward_amount >= endpoint.min_htlc

    def _fail_back(self, payment: Payment, hop_index: int, delay: Millis, **kw):
        """Send a failure for the HTLC of hop ``hop_index`` to the peer that offered it."""
        kind = EventKind.forward_fail if hop_index > 0 else EventKind.receive_fail
        self._schedule(delay, kind, payment, hop_index, **kw)

    def _release(self, payment: Payment, event: Event):
        """An unknown payment makes no progress: fail back the HTLCs it has locked."""
        if event.kind == EventKind.forward_payment:
            self._fail_back(payment, event.hop_index - 1, self._latency())
        elif event.kind == EventKind.receive_payment:
            self._fail_back(payment, event.hop_index, self._latency())

    def _next_add(self, payment: Payment, hop_index: int):
        """The HTLC of hop ``hop_index`` is established: deliver it to the next peer."""
        if hop_index + 1 < len(payment.route):
            kind, next_index = EventKind.forward_payment, hop_index + 1
        else:
            kind, next_index = EventKind.receive_payment, hop_index
        self._schedule(self._latency(), kind, payment, next_index)

    # -------------------------------------------------------------- handlers

    def handle_find_route(self, payment: Payment, event: Event):
        if self.now - payment.start_time > self.config.payment_timeout:
            self._finalize(payment, PaymentResult.fail, FailReason.timeout)
            return
        payment.attempts += 1
        blacklist = payment.ensure_blacklist()
        self.route_searches += 1
        route = find_route(
            payment,
            self.network,
            blacklist,
            self.config.weights,
            self.config.final_timelock,
        )
        if route is None:
            failure = self.failures.get(payment.id)
            if failure is None or (payment.attempts == 1 and blacklist.is_empty()):
                reason = FailReason.no_route
            else:
                reason = failure.reason
            self._finalize(payment, PaymentResult.fail, reason)
            return
        payment.route = route
        self._schedule(self.config.processing_latency, EventKind.send_payment, payment)

    def handle_send_payment(self, payment: Payment, event: Event):
        first = payment.route[0]
        if not self._can_forward(first):
            self.failures[payment.id] = AttemptFailure(
                FailReason.unbalanced, channel_id=first.channel_id
            )
            self._schedule(0, EventKind.receive_fail, payment)
            return
        self._establish(payment, first)
        self._next_add(payment, 0)

    def handle_forward_payment(self, payment: Payment, event: Event):
        i = event.hop_index
        hop = payment.route[i]
        behaviour = sample_uncooperative(self.config, self.rng)
        if behaviour == Cooperation.uncoop_before:
            self._mark_uncooperative(payment, hop.from_peer)
            self._fail_back(payment, i - 1, self._latency())
        elif not self._can_forward(hop):
            self.failures[payment.id] = AttemptFailure(
                FailReason.unbalanced, channel_id=hop.channel_id
            )
            self._fail_back(payment, i - 1, self._latency())
        elif behaviour == Cooperation.uncoop_after:
            # funds stay locked until the timelock expires, then the channel is closed
            self._mark_uncooperative(payment, hop.from_peer)
            self._establish(payment, hop)
            delay = hop.cumulative_timelock * self.config.block_interval
            self._fail_back(payment, i, delay, closes_channel=True)
        else:
            self._establish(payment, hop)
            self._next_add(payment, i)

    def handle_receive_payment(self, payment: Payment, event: Event):
        i = event.hop_index
        last = payment.route[i]
        behaviour = sample_uncooperative(self._receiver_config, self.rng)
        if behaviour != Cooperation.cooperative:
            # the receiver cannot be blacklisted, the channel leading to it can
            payment.encountered_uncooperative = True
            self.failures[payment.id] = AttemptFailure(
                FailReason.uncooperative, channel_id=last.channel_id
            )
            self._fail_back(payment, i, self._latency())
            return
        self._settle(payment, last)
        kind = EventKind.forward_success if i > 0 else EventKind.receive_success
        self._schedule(self._latency(), kind, payment, i)

    def handle_forward_success(self, payment: Payment, event: Event):
        i = event.hop_index
        self._settle(payment, payment.route[i - 1])
        kind = EventKind.forward_success if i - 1 > 0 else EventKind.receive_success
        self._schedule(self._latency(), kind, payment, i - 1)

    def handle_forward_fail(self, payment: Payment, event: Event):
        i = event.hop_index
        hop = payment.route[i]
        self._refund(payment, hop)
        if event.closes_channel:
            self.network.channels[hop.channel_id].close()
        self._fail_back(payment, i - 1, self._latency())

    def handle_receive_success(self, payment: Payment, event: Event):
        if payment.is_pending:
            self._finalize(payment, PaymentResult.success)

    def handle_receive_fail(self, payment: Payment, event: Event):
        self._refund(payment, payment.route[0])
        if not payment.is_pending:
            return
        failure = self.failures.get(payment.id)
        blacklist = payment.ensure_blacklist()
        if failure is not None:
            if failure.channel_id is not None:
                blacklist.exclude_channel(failure.channel_id)
            if failure.peer_id is not None:
                blacklist.exclude_peer(failure.peer_id)
        self._schedule(self.config.processing_latency, EventKind.find_route, payment)


def run(
    network: Network,
    payments: Iterable[Payment],
    config: SimConfig = None,
    *,
    verbose: bool = False,
) -> List[PaymentRecord]:
    """Execute ``payments`` on ``network`` (mutated to its final state) and return their records."""
    return Simulation(network, payments, config, verbose=verbose).run()
