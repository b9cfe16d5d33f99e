"""Transaction-affine dispatch of HTTP messages to parallel consumers.

Each message goes to consumer ``feeder_hash(msg) % n``. A request and its
response carry the same number (ack and seq respectively), so they always
land on the same consumer, while successive transactions of one connection
spread out because the number changes between them.
"""

from __future__ import annotations

import enum
import queue
import threading
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .columns import ACK, ACK_VALID, DST_IP, DST_PORT, KIND, KIND_REQUEST, SEQ, SRC_IP, SRC_PORT
from .hashing import MissingAck, consumer_index, feeder_hash, feeder_hash_array, hash_4tuple_array
from .packet import HttpMessage

DEFAULT_QUEUE_CAPACITY = 65536


class OverflowPolicy(enum.Enum):
    DROP = "drop"
    BLOCK = "block"


@dataclass(frozen=True)
class FeederConfig:
    n: int = 1
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    overflow_policy: OverflowPolicy = OverflowPolicy.DROP

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"consumer count must be >= 1, got {self.n}")
        if self.queue_capacity < 1:
            raise ValueError(f"queue capacity must be >= 1, got {self.queue_capacity}")


@dataclass
class ConsumerShare:
    packets_dispatched: int = 0
    transactions_completed: int = 0
    drops: int = 0


@dataclass
class FeederStats:
    """Per-consumer counters plus requests rejected for lacking an ACK flag."""

    consumers: list = field(default_factory=list)
    rejected: int = 0

    @classmethod
    def zeros(cls, n: int) -> "FeederStats":
        return cls([ConsumerShare() for _ in range(n)])

    @property
    def dispatched(self) -> int:
        return sum(c.packets_dispatched for c in self.consumers)

    @property
    def drops(self) -> int:
        return sum(c.drops for c in self.consumers)

    @property
    def offered(self) -> int:
        return self.dispatched + self.drops

    @property
    def transactions(self) -> int:
        return sum(c.transactions_completed for c in self.consumers)

    def packet_shares(self) -> list[float]:
        total = self.dispatched
        return [c.packets_dispatched / total if total else 0.0 for c in self.consumers]

    def transaction_shares(self) -> list[float]:
        total = self.transactions
        return [c.transactions_completed / total if total else 0.0 for c in self.consumers]


class Sink(Protocol):
    def consume(self, msg: HttpMessage): ...

    def close(self): ...

    @property
    def transactions_completed(self) -> int: ...


def dispatch(msg: HttpMessage, cfg: FeederConfig) -> int:
    return consumer_index(feeder_hash(msg.pkt, msg.kind), cfg.n)


_DONE = object()


def _drain_queue(q: queue.Queue, sink: Sink, close: bool) -> None:
    get = q.get
    consume = sink.consume
    while True:
        msg = get()
        if msg is _DONE:
            break
        consume(msg)
    if close:
        sink.close()


def run_feeder(source: Iterable[HttpMessage], cfg: FeederConfig, sinks: Sequence[Sink],
               close_sinks: bool = True) -> FeederStats:
    """Deliver every message of ``source`` to its designated sink.

    Each sink is driven by its own thread through a bounded queue, so sinks
    never see concurrent calls and receive their messages in source order.
    With ``close_sinks`` each sink is closed (drained) once the source is
    exhausted.
    """
    if len(sinks) != cfg.n:
        raise ValueError(f"{cfg.n} consumers configured but {len(sinks)} sinks given")
    stats = FeederStats.zeros(cfg.n)
    queues = [queue.Queue(cfg.queue_capacity) for _ in range(cfg.n)]
    workers = [threading.Thread(target=_drain_queue, args=(q, s, close_sinks), daemon=True)
               for q, s in zip(queues, sinks)]
    for w in workers:
        w.start()
    block = cfg.overflow_policy is OverflowPolicy.BLOCK
    shares = stats.consumers
    try:
        for msg in source:
            try:
                idx = dispatch(msg, cfg)
            except MissingAck:
                stats.rejected += 1
                continue
            if block:
                queues[idx].put(msg)
            else:
                try:
                    queues[idx].put_nowait(msg)
                except queue.Full:
                    shares[idx].drops += 1
                    continue
            shares[idx].packets_dispatched += 1
    finally:
        for q in queues:
            q.put(_DONE)
        for w in workers:
            w.join()
    for share, sink in zip(shares, sinks):
        share.transactions_completed = sink.transactions_completed
    return stats


def dispatch_columns(core: np.ndarray, n: int, fine: bool = True) -> np.ndarray:
    """Consumer index for every row of a decoded capture; -1 for requests without ACK.

    ``fine=False`` dispatches on the 4-tuple alone, for comparison.
    """
    if n < 1:
        raise ValueError(f"consumer count must be >= 1, got {n}")
    is_req = core[:, KIND] == KIND_REQUEST
    if fine:
        number = np.where(is_req, core[:, ACK], core[:, SEQ])
        h = feeder_hash_array(core[:, SRC_IP], core[:, SRC_PORT], core[:, DST_IP], core[:, DST_PORT], number)
    else:
        h = hash_4tuple_array(core[:, SRC_IP], core[:, SRC_PORT], core[:, DST_IP], core[:, DST_PORT])
    out = (h % np.uint32(n)).astype(np.int64)
    out[is_req & (core[:, ACK_VALID] == 0)] = -1
    return out
