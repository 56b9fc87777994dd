"""Reading and writing the files of the workflow.

Inputs of the simulation phase, in one directory:

- ``peers.csv``: ``id``
- ``channels.csv``: ``id,peer1,peer2,capacity``
- ``endpoints.csv``: ``channel_id,owner_peer,balance,base_fee_msat,prop_fee_ppm,timelock_delta,min_htlc``
- ``payments.csv``: ``id,sender,receiver,amount,start_time_ms``

Outputs:

- ``raw-per-payment-data.csv``: one row per payment, see ``RAW_PAYMENT_DATA_COLUMNS``
- ``payments-statistics.json``: the measures of ``stats.batch_means`` and the configuration

All files are UTF-8, comma separated, with a header line. Integer fields are
plain digits. Rows are written in id order so that writes are deterministic.
"""

import csv
import json
import math
import os
import re
from dataclasses import fields
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from htlcsim import (
    CHANNELS_FILE,
    ENDPOINTS_FILE,
    PAYMENTS_FILE,
    PEERS_FILE,
)
from htlcsim.model import (
    Channel,
    ChannelEndpoint,
    FailReason,
    Network,
    Payment,
    PaymentRecord,
    PaymentResult,
    Peer,
)
from htlcsim.stats import MeasureStats, SimStatistics

PEERS_COLUMNS = ("id",)
CHANNELS_COLUMNS = ("id", "peer1", "peer2", "capacity")
ENDPOINTS_COLUMNS = (
    "channel_id",
    "owner_peer",
    "balance",
    "base_fee_msat",
    "prop_fee_ppm",
    "timelock_delta",
    "min_htlc",
)
PAYMENTS_COLUMNS = ("id", "sender", "receiver", "amount", "start_time_ms")
RAW_PAYMENT_DATA_COLUMNS = PAYMENTS_COLUMNS + (
    "end_time_ms",
    "result",
    "fail_reason",
    "attempts",
    "uncooperative_encountered",
    "route",
)
ROUTE_SEP = "-"

_digits = re.compile(r"^[0-9]+$")


class SchemaError(ValueError):
    """A file does not follow its schema. Names the file, line and column at fault.

    >>> str(SchemaError("peers.csv", 3, "id", "duplicate id 1"))
    "peers.csv:3: column 'id': duplicate id 1"
    """

    def __init__(self, path: str, line: Optional[int], column: Optional[str], msg: str):
        self.path, self.line, self.column, self.msg = path, line, column, msg
        where = path if line is None else f"{path}:{line}"
        if column is not None:
            where += f": column '{column}'"
        super().__init__(f"{where}: {msg}")


# --------------------------------------------------------------- primitives


def _rows(path: str, columns: Sequence[str]) -> Iterator[Tuple[int, dict]]:
    """Yield ``(line_number, row)`` of a csv file whose header must be ``columns``."""
    if not os.path.isfile(path):
        raise SchemaError(path, None, None, "no such file")
    with open(path, newline="", encoding="utf-8") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != tuple(columns):
            raise SchemaError(
                path, 1, None, f"header should be {','.join(columns)}, was {header}"
            )
        for row in reader:
            if not row:
                continue
            if len(row) != len(columns):
                raise SchemaError(
                    path,
                    reader.line_num,
                    None,
                    f"expected {len(columns)} fields, got {len(row)}",
                )
            yield reader.line_num, dict(zip(columns, row))


def _int(path: str, line: int, row: Mapping, column: str) -> int:
    value = row[column].strip()
    if not _digits.match(value):
        raise SchemaError(
            path, line, column, f"expected a non-negative integer, got {value!r}"
        )
    return int(value)


def _optional_int(path: str, line: int, row: Mapping, column: str) -> Optional[int]:
    if row[column].strip() == "":
        return None
    return _int(path, line, row, column)


def _bool(path: str, line: int, row: Mapping, column: str) -> bool:
    value = row[column].strip()
    if value not in ("true", "false"):
        raise SchemaError(path, line, column, f"expected true or false, got {value!r}")
    return value == "true"


def _enum(path, line, row, column, enum_type):
    value = row[column].strip()
    try:
        return enum_type(value)
    except ValueError:
        choices = ", ".join(e.value for e in enum_type)
        raise SchemaError(
            path, line, column, f"expected one of {choices}, got {value!r}"
        ) from None


def _write_rows(path: str, columns: Sequence[str], rows: Iterator[Sequence]):
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def _no_duplicate(path, line, column, seen: set, key):
    if key in seen:
        raise SchemaError(path, line, column, f"duplicate id {key}")
    seen.add(key)


# -------------------------------------------------------------------- peers


def read_peers(path: str) -> List[Peer]:
    peers, seen = [], set()
    for line, row in _rows(path, PEERS_COLUMNS):
        peer_id = _int(path, line, row, "id")
        _no_duplicate(path, line, "id", seen, peer_id)
        peers.append(Peer(peer_id))
    return peers


def write_peers(peers: Sequence[Peer], path: str):
    _write_rows(path, PEERS_COLUMNS, ((p.id,) for p in sorted(peers, key=_id)))


# ----------------------------------------------------------------- channels


def read_channels(path: str, peer_ids: Optional[set] = None) -> List[Tuple[int, Channel]]:
    """Channels (with empty endpoints) and the line each was read from."""
    channels, seen = [], set()
    for line, row in _rows(path, CHANNELS_COLUMNS):
        channel_id = _int(path, line, row, "id")
        _no_duplicate(path, line, "id", seen, channel_id)
        peer1 = _int(path, line, row, "peer1")
        peer2 = _int(path, line, row, "peer2")
        for column, peer in (("peer1", peer1), ("peer2", peer2)):
            if peer_ids is not None and peer not in peer_ids:
                raise SchemaError(path, line, column, f"unknown peer {peer}")
        if peer1 == peer2:
            raise SchemaError(path, line, "peer2", f"channel connects peer {peer1} to itself")
        capacity = _int(path, line, row, "capacity")
        channel = Channel(
            channel_id,
            peer1,
            peer2,
            capacity,
            endpoint1=ChannelEndpoint(peer1),
            endpoint2=ChannelEndpoint(peer2),
        )
        channels.append((line, channel))
    return channels


def write_channels(channels: Sequence[Channel], path: str):
    rows = ((c.id, c.peer1, c.peer2, c.capacity) for c in sorted(channels, key=_id))
    _write_rows(path, CHANNELS_COLUMNS, rows)


# ---------------------------------------------------------------- endpoints


def read_endpoints(
    path: str, channels: Mapping[int, Channel]
) -> Dict[Tuple[int, int], Tuple[int, ChannelEndpoint]]:
    """Line and endpoint of every row, keyed by ``(channel_id, owner_peer)``."""
    endpoints = {}
    for line, row in _rows(path, ENDPOINTS_COLUMNS):
        channel_id = _int(path, line, row, "channel_id")
        if channel_id not in channels:
            raise SchemaError(path, line, "channel_id", f"unknown channel {channel_id}")
        owner = _int(path, line, row, "owner_peer")
        channel = channels[channel_id]
        if owner not in (channel.peer1, channel.peer2):
            raise SchemaError(
                path,
                line,
                "owner_peer",
                f"peer {owner} is not an endpoint of channel {channel_id}",
            )
        if (channel_id, owner) in endpoints:
            raise SchemaError(
                path,
                line,
                "owner_peer",
                f"second endpoint of peer {owner} on channel {channel_id}",
            )
        timelock_delta = _int(path, line, row, "timelock_delta")
        if timelock_delta < 1:
            raise SchemaError(path, line, "timelock_delta", "must be at least 1 block")
        endpoints[channel_id, owner] = line, ChannelEndpoint(
            owner=owner,
            balance=_int(path, line, row, "balance"),
            base_fee=_int(path, line, row, "base_fee_msat"),
            proportional_fee=_int(path, line, row, "prop_fee_ppm"),
            timelock_delta=timelock_delta,
            min_htlc=_int(path, line, row, "min_htlc"),
        )
    return endpoints


def write_endpoints(channels: Sequence[Channel], path: str):
    def rows():
        for c in sorted(channels, key=_id):
            for e in (c.endpoint1, c.endpoint2):
                yield (
                    c.id,
                    e.owner,
                    e.balance,
                    e.base_fee,
                    e.proportional_fee,
                    e.timelock_delta,
                    e.min_htlc,
                )

    _write_rows(path, ENDPOINTS_COLUMNS, rows())


# ------------------------------------------------------------------ network


def read_network(dirpath: str) -> Network:
    """The channel graph of ``dirpath``, validated: peer ids are ``0..n-1``, every
    reference resolves, and every channel has two endpoints whose balances add up
    to its capacity."""
    peers_path = os.path.join(dirpath, PEERS_FILE)
    channels_path = os.path.join(dirpath, CHANNELS_FILE)
    endpoints_path = os.path.join(dirpath, ENDPOINTS_FILE)

    peers = {p.id: p for p in read_peers(peers_path)}
    if sorted(peers) != list(range(len(peers))):
        missing = min(set(range(len(peers))) - set(peers))
        raise SchemaError(
            peers_path,
            None,
            "id",
            f"peer ids must be 0..{len(peers) - 1}, {missing} is missing",
        )

    lines_and_channels = read_channels(channels_path, set(peers))
    channels = {c.id: c for _, c in lines_and_channels}
    endpoints = read_endpoints(endpoints_path, channels)

    for line, channel in lines_and_channels:
        endpoint_lines = []
        for attr, owner in (("endpoint1", channel.peer1), ("endpoint2", channel.peer2)):
            if (channel.id, owner) not in endpoints:
                raise SchemaError(
                    channels_path,
                    line,
                    "id",
                    f"channel {channel.id} has no endpoint for peer {owner} "
                    f"in {ENDPOINTS_FILE}",
                )
            endpoint_line, endpoint = endpoints[channel.id, owner]
            endpoint_lines.append(endpoint_line)
            setattr(channel, attr, endpoint)
        balances = channel.endpoint1.balance + channel.endpoint2.balance
        if balances != channel.capacity:
            raise SchemaError(
                endpoints_path,
                max(endpoint_lines),
                "balance",
                f"balances of channel {channel.id} add up to {balances}, "
                f"not to its capacity {channel.capacity} (line {line} of {CHANNELS_FILE})",
            )
        peers[channel.peer1].open_channel_ids.append(channel.id)
        peers[channel.peer2].open_channel_ids.append(channel.id)

    return Network(dict(sorted(peers.items())), channels)


def write_network(network: Network, dirpath: str):
    write_peers(list(network.peers.values()), os.path.join(dirpath, PEERS_FILE))
    channels = list(network.channels.values())
    write_channels(channels, os.path.join(dirpath, CHANNELS_FILE))
    write_endpoints(channels, os.path.join(dirpath, ENDPOINTS_FILE))


# ----------------------------------------------------------------- payments


def read_payments(path: str, peer_ids: Optional[set] = None) -> List[Payment]:
    """The payment script, which must be ordered by start time."""
    payments, seen, last_start = [], set(), 0
    for line, row in _rows(path, PAYMENTS_COLUMNS):
        payment_id = _int(path, line, row, "id")
        _no_duplicate(path, line, "id", seen, payment_id)
        sender = _int(path, line, row, "sender")
        receiver = _int(path, line, row, "receiver")
        for column, peer in (("sender", sender), ("receiver", receiver)):
            if peer_ids is not None and peer not in peer_ids:
                raise SchemaError(path, line, column, f"unknown peer {peer}")
        if sender == receiver:
            raise SchemaError(path, line, "receiver", "a payment needs two distinct peers")
        amount = _int(path, line, row, "amount")
        if amount == 0:
            raise SchemaError(path, line, "amount", "amount must be positive")
        start_time = _int(path, line, row, "start_time_ms")
        if start_time < last_start:
            raise SchemaError(
                path, line, "start_time_ms", "payments must be ordered by start time"
            )
        last_start = start_time
        payments.append(Payment(payment_id, sender, receiver, amount, start_time))
    return payments


def write_payments(payments: Sequence[Payment], path: str):
    rows = (
        (p.id, p.sender, p.receiver, p.amount, p.start_time)
        for p in sorted(payments, key=lambda p: (p.start_time, p.id))
    )
    _write_rows(path, PAYMENTS_COLUMNS, rows)


# ------------------------------------------------------- raw per-payment data


def _format_bool(x: bool) -> str:
    return "true" if x else "false"


def write_raw_payment_data(records: Sequence[PaymentRecord], path: str):
    def rows():
        for r in sorted(records, key=lambda r: (r.start_time, r.id)):
            yield (
                r.id,
                r.sender,
                r.receiver,
                r.amount,
                r.start_time,
                "" if r.end_time is None else r.end_time,
                r.result.value,
                r.fail_reason.value,
                r.attempts,
                _format_bool(r.uncooperative_encountered),
                ROUTE_SEP.join(map(str, r.route)),
            )

    _write_rows(path, RAW_PAYMENT_DATA_COLUMNS, rows())


def _route(path, line, row) -> Tuple[int, ...]:
    value = row["route"].strip()
    if not value:
        return ()
    ids = value.split(ROUTE_SEP)
    if not all(_digits.match(x) for x in ids):
        raise SchemaError(
            path,
            line,
            "route",
            f"expected {ROUTE_SEP!r}-separated channel ids, got {value!r}",
        )
    return tuple(map(int, ids))


def read_raw_payment_data(path: str) -> List[PaymentRecord]:
    records, seen = [], set()
    for line, row in _rows(path, RAW_PAYMENT_DATA_COLUMNS):
        payment_id = _int(path, line, row, "id")
        _no_duplicate(path, line, "id", seen, payment_id)
        records.append(
            PaymentRecord(
                id=payment_id,
                sender=_int(path, line, row, "sender"),
                receiver=_int(path, line, row, "receiver"),
                amount=_int(path, line, row, "amount"),
                start_time=_int(path, line, row, "start_time_ms"),
                end_time=_optional_int(path, line, row, "end_time_ms"),
                result=_enum(path, line, row, "result", PaymentResult),
                fail_reason=_enum(path, line, row, "fail_reason", FailReason),
                attempts=_int(path, line, row, "attempts"),
                uncooperative_encountered=_bool(
                    path, line, row, "uncooperative_encountered"
                ),
                route=_route(path, line, row),
            )
        )
    return records


# --------------------------------------------------------------- statistics


def _nan_to_none(d: Mapping) -> dict:
    return {
        k: None if isinstance(v, float) and math.isnan(v) else v for k, v in d.items()
    }


def _none_to_nan(d: Mapping) -> dict:
    return {k: math.nan if v is None else v for k, v in d.items()}


def write_statistics(
    statistics: SimStatistics, path: str, config: Optional[Mapping] = None
):
    """Write the measures (undefined values as ``null``) and echo ``config``."""
    doc = {name: _nan_to_none(m) for name, m in statistics.to_dict().items()}
    doc["config"] = dict(sorted((config or {}).items()))
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(doc, fp, indent=2, allow_nan=False)
        fp.write("\n")


def read_statistics(path: str) -> SimStatistics:
    with open(path, encoding="utf-8") as fp:
        doc = json.load(fp)
    try:
        return SimStatistics(
            **{
                name: MeasureStats(**_none_to_nan(doc[name]))
                for name in (f.name for f in fields(SimStatistics))
            }
        )
    except (KeyError, TypeError) as e:
        raise SchemaError(path, None, None, f"not a statistics document: {e}") from None


def _id(x):
    return x.id
