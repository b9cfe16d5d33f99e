"""Pairing of HTTP requests with responses by TCP seq/ack arithmetic.

A request and its response match when their 4-tuples are mirror images and
the response's sequence number equals the request's acknowledgment number.
Pending messages wait in a hash table keyed by :func:`hash_transaction`; a
capture-time garbage collector flushes cells that stay idle too long.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .hashing import MissingAck, hash_transaction
from .packet import (
    NANOS_PER_SECOND,
    CaptureTimestamp,
    HttpMessage,
    MessageKind,
    ip_to_str,
)

DEFAULT_TABLE_SIZE = 1 << 20


@dataclass(frozen=True, slots=True)
class TransactionRecord:
    """One output line: a request paired with its response, or half of one.

    The client side is the request's source; for a response-only record it is
    the response's destination. ``response_time`` is in nanoseconds.
    """

    client_ip: str
    client_port: int
    server_ip: str
    server_port: int
    request_ts: Optional[CaptureTimestamp]
    response_ts: Optional[CaptureTimestamp]
    response_time: Optional[int]
    response_message: Optional[str]
    response_code: Optional[int]
    method: Optional[str]
    agent: Optional[str]
    host: Optional[str]
    uri: Optional[str]
    match_number: int

    @classmethod
    def from_messages(cls, request: Optional[HttpMessage] = None,
                      response: Optional[HttpMessage] = None) -> "TransactionRecord":
        if request is not None:
            p = request.pkt
            client_ip, client_port, server_ip, server_port = p.src_ip, p.src_port, p.dst_ip, p.dst_port
            match_number = p.ack
        elif response is not None:
            p = response.pkt
            client_ip, client_port, server_ip, server_port = p.dst_ip, p.dst_port, p.src_ip, p.src_port
            match_number = p.seq
        else:
            raise ValueError("a record needs at least one message")
        req_ts = request.pkt.ts if request is not None else None
        resp_ts = response.pkt.ts if response is not None else None
        return cls(
            ip_to_str(client_ip), client_port, ip_to_str(server_ip), server_port,
            req_ts, resp_ts,
            resp_ts - req_ts if req_ts is not None and resp_ts is not None else None,
            response.status_message if response is not None else None,
            response.status_code if response is not None else None,
            request.method if request is not None else None,
            request.agent if request is not None else None,
            request.host if request is not None else None,
            request.uri if request is not None else None,
            match_number,
        )

    @property
    def matched(self) -> bool:
        return self.request_ts is not None and self.response_ts is not None

    @property
    def dedup_key(self) -> tuple:
        return (self.client_ip, self.client_port, self.server_ip, self.server_port, self.match_number)


@dataclass(frozen=True)
class GcPolicy:
    """Capture-time garbage collection settings, in nanoseconds."""

    idle_timeout: int = 60 * NANOS_PER_SECOND
    sweep_period: int = 1 * NANOS_PER_SECOND

    def __post_init__(self):
        if self.idle_timeout <= 0 or self.sweep_period <= 0:
            raise ValueError("idle_timeout and sweep_period must be positive")

    @classmethod
    def from_seconds(cls, idle_timeout: float = 60.0, sweep_period: float = 1.0) -> "GcPolicy":
        return cls(round(idle_timeout * NANOS_PER_SECOND), round(sweep_period * NANOS_PER_SECOND))


def match_condition(req: HttpMessage, resp: HttpMessage) -> bool:
    q, s = req.pkt, resp.pkt
    return (q.src_ip == s.dst_ip and q.src_port == s.dst_port
            and q.dst_ip == s.src_ip and q.dst_port == s.src_port
            and s.seq == q.ack)


@dataclass(slots=True)
class _Cell:
    entries: list
    last_activity: int


@dataclass
class TableCounters:
    inserted: int = 0
    matched: int = 0
    unmatched: int = 0
    pool_exhausted: int = 0
    missing_ack: int = 0

    @property
    def dropped(self) -> int:
        return self.pool_exhausted + self.missing_ack


class MatchTable:
    """Fixed-size hash table of pending HTTP messages.

    ``size`` sets the number of cells; a message lives in cell
    ``hash_transaction(msg) % size`` alongside any others that land there.
    Capacity is bounded twice: at most ``message_capacity`` pending messages
    and at most ``cell_capacity`` occupied cells. When either is exhausted
    the incoming message is dropped and counted; pending state is never
    evicted to make room.

    Only occupied cells are materialized, in a dict keyed by cell index.
    """

    def __init__(self, size: int = DEFAULT_TABLE_SIZE, message_capacity: Optional[int] = None,
                 cell_capacity: Optional[int] = None):
        if size < 1:
            raise ValueError("table size must be >= 1")
        self.size = size
        self.message_capacity = size if message_capacity is None else message_capacity
        self.cell_capacity = size if cell_capacity is None else cell_capacity
        self._cells: dict[int, _Cell] = {}
        self._pending = 0
        self.counters = TableCounters()

    def __len__(self) -> int:
        return self._pending

    def cell_index(self, msg: HttpMessage) -> int:
        return hash_transaction(msg) % self.size

    def pending(self) -> Iterator[tuple[int, HttpMessage]]:
        """Yield ``(cell index, message)`` for every stored message."""
        for idx in sorted(self._cells):
            for msg in self._cells[idx].entries:
                yield idx, msg

    def insert_message(self, msg: HttpMessage) -> Optional[TransactionRecord]:
        """Pair ``msg`` with a stored counterpart or store it.

        The first counterpart in insertion order wins. Without one the message
        joins its cell, even if an identical message is already waiting there
        (a retransmission, or a second response to the same request).
        """
        try:
            idx = hash_transaction(msg) % self.size
        except MissingAck:
            self.counters.missing_ack += 1
            return None
        counters = self.counters
        counters.inserted += 1
        ts = msg.pkt.ts.ns
        cell = self._cells.get(idx)
        if cell is not None:
            entries = cell.entries
            is_request = msg.kind is MessageKind.REQUEST
            for i, other in enumerate(entries):
                if other.kind is msg.kind:
                    continue
                if is_request:
                    found = match_condition(msg, other)
                else:
                    found = match_condition(other, msg)
                if found:
                    del entries[i]
                    self._pending -= 1
                    if not entries:
                        del self._cells[idx]
                    counters.matched += 1
                    if is_request:
                        return TransactionRecord.from_messages(msg, other)
                    return TransactionRecord.from_messages(other, msg)
            if self._pending >= self.message_capacity:
                counters.pool_exhausted += 1
                return None
            entries.append(msg)
            if ts > cell.last_activity:
                cell.last_activity = ts
        else:
            if self._pending >= self.message_capacity or len(self._cells) >= self.cell_capacity:
                counters.pool_exhausted += 1
                return None
            self._cells[idx] = _Cell([msg], ts)
        self._pending += 1
        return None

    def _evict(self, indices: Iterable[int]) -> list[TransactionRecord]:
        out = []
        for idx in sorted(indices):
            for msg in self._cells.pop(idx).entries:
                if msg.kind is MessageKind.REQUEST:
                    out.append(TransactionRecord.from_messages(request=msg))
                else:
                    out.append(TransactionRecord.from_messages(response=msg))
        self._pending -= len(out)
        self.counters.unmatched += len(out)
        return out

    def gc_sweep(self, now: int, policy: GcPolicy = GcPolicy()) -> list[TransactionRecord]:
        """Flush cells whose last activity is older than ``now - idle_timeout``.

        ``now`` is a capture time in nanoseconds (or a CaptureTimestamp).
        Records come out in cell order, insertion order within a cell.
        """
        if isinstance(now, CaptureTimestamp):
            now = now.ns
        deadline = now - policy.idle_timeout
        return self._evict([idx for idx, cell in self._cells.items() if cell.last_activity < deadline])

    def drain(self) -> list[TransactionRecord]:
        """Flush everything still pending, e.g. at the end of a capture."""
        return self._evict(list(self._cells))


def dedup_records(records: Iterable[TransactionRecord]) -> list[TransactionRecord]:
    """Keep the first record per (4-tuple, match number); drop later ones."""
    seen = set()
    out = []
    for rec in records:
        key = rec.dedup_key
        if key not in seen:
            seen.add(key)
            out.append(rec)
    return out


@dataclass
class Consumer:
    """One analyzer instance: a match table driven by the capture clock.

    Messages must be fed in capture order. Every ``sweep_period`` of capture
    time the garbage collector runs against the latest timestamp seen so far.
    Emitted records go to ``on_record`` when given, and are otherwise
    returned from :meth:`consume` and :meth:`close`.
    """

    table: MatchTable = field(default_factory=MatchTable)
    policy: GcPolicy = field(default_factory=GcPolicy)
    on_record: Optional[callable] = None
    now: Optional[int] = None
    next_sweep: Optional[int] = None
    classified: int = 0

    def consume(self, msg: HttpMessage) -> list[TransactionRecord]:
        self.classified += 1
        ts = msg.pkt.ts.ns
        if self.now is None:
            self.now = ts
            self.next_sweep = ts + self.policy.sweep_period
        elif ts > self.now:
            self.now = ts
        out = []
        rec = self.table.insert_message(msg)
        if rec is not None:
            out.append(rec)
        if self.now >= self.next_sweep:
            out.extend(self.table.gc_sweep(self.now, self.policy))
            self.next_sweep = self.now + self.policy.sweep_period
        return self._emit(out)

    def close(self) -> list[TransactionRecord]:
        return self._emit(self.table.drain())

    def _emit(self, records):
        if self.on_record is None or not records:
            return records
        for rec in records:
            self.on_record(rec)
        return []

    @property
    def transactions_completed(self) -> int:
        return self.table.counters.matched
