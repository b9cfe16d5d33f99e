"""Compiled consumer: the match table and capture-clock GC over columnar input.

:class:`CompiledConsumer` reproduces :class:`matcher.Consumer` message for
message (same cells, same first-match order, same pool limits, same sweep
schedule) but keeps its state in preallocated arrays and runs in a numba
kernel. It emits pairs of message ids instead of record objects; a message
id is ``batch << 40 | row`` where ``row`` indexes the batch's
:class:`DecodedCapture`.
"""

from __future__ import annotations

from typing import NamedTuple, Optional, Sequence

import numba
import numpy as np

from .columns import (
    ACK,
    ACK_VALID,
    CODE,
    DST_IP,
    DST_PORT,
    KIND,
    KIND_REQUEST,
    METHOD,
    SEQ,
    SRC_IP,
    SRC_PORT,
    TARGET_LEN,
    TS,
    DecodedCapture,
)
from .packet import MAX_URI_CHARS
from .matcher import DEFAULT_TABLE_SIZE, GcPolicy, TableCounters, TransactionRecord

BATCH_SHIFT = 40
ROW_MASK = (1 << BATCH_SHIFT) - 1
DRAIN_POSITION = np.iinfo(np.int64).max

# node field slots
_N_TS, _N_SIP, _N_DIP, _N_SPORT, _N_DPORT, _N_SEQ, _N_ACK, _N_KIND, _N_ID = range(9)
# scalar slots
(_S_ACTIVE, _S_FREE, _S_PENDING, _S_NOW, _S_NEXT_SWEEP, _S_STARTED,
 _S_INSERTED, _S_MATCHED, _S_UNMATCHED, _S_EXHAUSTED, _S_MISSING_ACK, _S_CLASSIFIED) = range(12)


class Emitted(NamedTuple):
    """Records as message-id pairs, in emission order. -1 marks a missing side.

    ``position`` is the batch row whose arrival triggered the emission, or
    ``DRAIN_POSITION`` for records flushed at the end.
    """

    request: np.ndarray
    response: np.ndarray
    position: np.ndarray

    @classmethod
    def empty(cls) -> "Emitted":
        z = np.empty(0, dtype=np.int64)
        return cls(z, z, z)

    def __len__(self):
        return self.request.shape[0]


@numba.njit(cache=True)
def _deactivate(cell, head, tail, last, cell_pos, active, sc):
    pos = cell_pos[cell]
    n = sc[_S_ACTIVE] - 1
    moved = active[n]
    active[pos] = moved
    cell_pos[moved] = pos
    cell_pos[cell] = -1
    sc[_S_ACTIVE] = n
    head[cell] = -1
    tail[cell] = -1
    last[cell] = 0


@numba.njit(cache=True)
def _evict(cells, head, tail, last, cell_pos, active, node_next, nodes, free, sc,
           out_req, out_resp, out_pos, n_out, position):
    for c in cells:
        k = head[c]
        while k != -1:
            nxt = node_next[k]
            if nodes[k, _N_KIND] == KIND_REQUEST:
                out_req[n_out] = nodes[k, _N_ID]
                out_resp[n_out] = -1
            else:
                out_req[n_out] = -1
                out_resp[n_out] = nodes[k, _N_ID]
            out_pos[n_out] = position
            n_out += 1
            free[sc[_S_FREE]] = k
            sc[_S_FREE] += 1
            sc[_S_PENDING] -= 1
            sc[_S_UNMATCHED] += 1
            k = nxt
        _deactivate(c, head, tail, last, cell_pos, active, sc)
    return n_out


@numba.njit(cache=True)
def _sweep(deadline, head, tail, last, cell_pos, active, node_next, nodes, free, sc,
           out_req, out_resp, out_pos, n_out, position):
    n_active = sc[_S_ACTIVE]
    expired = np.empty(n_active, dtype=np.int64)
    m = 0
    for i in range(n_active):
        c = active[i]
        if last[c] < deadline:
            expired[m] = c
            m += 1
    if m == 0:
        return n_out
    cells = np.sort(expired[:m])
    return _evict(cells, head, tail, last, cell_pos, active, node_next, nodes, free, sc,
                  out_req, out_resp, out_pos, n_out, position)


@numba.njit(cache=True)
def _feed(core, rows, id_base, size, msg_cap, cell_cap, idle_timeout, sweep_period,
          head, tail, last, cell_pos, active, node_next, nodes, free, sc,
          out_req, out_resp, out_pos):
    n_out = 0
    for j in range(rows.shape[0]):
        i = rows[j]
        sc[_S_CLASSIFIED] += 1
        ts = core[i, TS]
        if sc[_S_STARTED] == 0:
            sc[_S_STARTED] = 1
            sc[_S_NOW] = ts
            sc[_S_NEXT_SWEEP] = ts + sweep_period
        elif ts > sc[_S_NOW]:
            sc[_S_NOW] = ts

        kind = core[i, KIND]
        sip = core[i, SRC_IP]
        dip = core[i, DST_IP]
        sport = core[i, SRC_PORT]
        dport = core[i, DST_PORT]
        seq = core[i, SEQ]
        ack = core[i, ACK]
        if kind == KIND_REQUEST and core[i, ACK_VALID] == 0:
            sc[_S_MISSING_ACK] += 1
        else:
            sc[_S_INSERTED] += 1
            number = ack if kind == KIND_REQUEST else seq
            cell = ((sip ^ sport ^ dip ^ dport ^ number) & 0xFFFFFFFF) % size
            prev = -1
            k = head[cell]
            found = False
            while k != -1:
                if nodes[k, _N_KIND] != kind:
                    # the stored message is the counterpart's kind; mirrored 4-tuple
                    if (nodes[k, _N_SIP] == dip and nodes[k, _N_SPORT] == dport
                            and nodes[k, _N_DIP] == sip and nodes[k, _N_DPORT] == sport):
                        if kind == KIND_REQUEST:
                            ok = nodes[k, _N_SEQ] == ack
                        else:
                            ok = seq == nodes[k, _N_ACK]
                        if ok:
                            found = True
                            break
                prev = k
                k = node_next[k]
            if found:
                nxt = node_next[k]
                if prev == -1:
                    head[cell] = nxt
                else:
                    node_next[prev] = nxt
                if tail[cell] == k:
                    tail[cell] = prev
                if kind == KIND_REQUEST:
                    out_req[n_out] = id_base + i
                    out_resp[n_out] = nodes[k, _N_ID]
                else:
                    out_req[n_out] = nodes[k, _N_ID]
                    out_resp[n_out] = id_base + i
                out_pos[n_out] = i
                n_out += 1
                free[sc[_S_FREE]] = k
                sc[_S_FREE] += 1
                sc[_S_PENDING] -= 1
                sc[_S_MATCHED] += 1
                if head[cell] == -1:
                    _deactivate(cell, head, tail, last, cell_pos, active, sc)
            else:
                occupied = head[cell] != -1
                if sc[_S_PENDING] >= msg_cap or (not occupied and sc[_S_ACTIVE] >= cell_cap):
                    sc[_S_EXHAUSTED] += 1
                else:
                    sc[_S_FREE] -= 1
                    node = free[sc[_S_FREE]]
                    nodes[node, _N_TS] = ts
                    nodes[node, _N_SIP] = sip
                    nodes[node, _N_DIP] = dip
                    nodes[node, _N_SPORT] = sport
                    nodes[node, _N_DPORT] = dport
                    nodes[node, _N_SEQ] = seq
                    nodes[node, _N_ACK] = ack
                    nodes[node, _N_KIND] = kind
                    nodes[node, _N_ID] = id_base + i
                    node_next[node] = -1
                    if occupied:
                        node_next[tail[cell]] = node
                        if ts > last[cell]:
                            last[cell] = ts
                    else:
                        head[cell] = node
                        last[cell] = ts
                        cell_pos[cell] = sc[_S_ACTIVE]
                        active[sc[_S_ACTIVE]] = cell
                        sc[_S_ACTIVE] += 1
                    tail[cell] = node
                    sc[_S_PENDING] += 1

        if sc[_S_NOW] >= sc[_S_NEXT_SWEEP]:
            n_out = _sweep(sc[_S_NOW] - idle_timeout, head, tail, last, cell_pos, active, node_next, nodes,
                           free, sc, out_req, out_resp, out_pos, n_out, i)
            sc[_S_NEXT_SWEEP] = sc[_S_NOW] + sweep_period
    return n_out


@numba.njit(cache=True)
def _drain(head, tail, last, cell_pos, active, node_next, nodes, free, sc, out_req, out_resp, out_pos, position):
    cells = np.sort(active[:sc[_S_ACTIVE]].copy())
    return _evict(cells, head, tail, last, cell_pos, active, node_next, nodes, free, sc,
                  out_req, out_resp, out_pos, 0, position)


class CompiledConsumer:
    """Array-backed equivalent of :class:`matcher.Consumer`."""

    def __init__(self, table_size: int = DEFAULT_TABLE_SIZE, message_capacity: Optional[int] = None,
                 cell_capacity: Optional[int] = None, policy: GcPolicy = GcPolicy()):
        if table_size < 1:
            raise ValueError("table size must be >= 1")
        self.size = table_size
        self.message_capacity = table_size if message_capacity is None else message_capacity
        self.cell_capacity = table_size if cell_capacity is None else cell_capacity
        self.policy = policy
        cells_alloc = min(self.cell_capacity, table_size)
        self._head = np.full(table_size, -1, dtype=np.int64)
        self._tail = np.full(table_size, -1, dtype=np.int64)
        self._last = np.zeros(table_size, dtype=np.int64)
        self._cell_pos = np.full(table_size, -1, dtype=np.int64)
        self._active = np.zeros(max(cells_alloc, 1), dtype=np.int64)
        self._node_next = np.full(max(self.message_capacity, 1), -1, dtype=np.int64)
        self._nodes = np.zeros((max(self.message_capacity, 1), 9), dtype=np.int64)
        self._free = np.arange(max(self.message_capacity, 1), dtype=np.int64)
        self._sc = np.zeros(12, dtype=np.int64)
        self._sc[_S_FREE] = self.message_capacity

    def _state(self):
        return (self._head, self._tail, self._last, self._cell_pos, self._active,
                self._node_next, self._nodes, self._free, self._sc)

    def feed(self, batch: int, capture: DecodedCapture, rows: Optional[np.ndarray] = None) -> Emitted:
        """Process ``rows`` of ``capture`` (all rows when omitted) in the given order."""
        if rows is None:
            rows = np.arange(len(capture), dtype=np.int64)
        else:
            rows = np.ascontiguousarray(rows, dtype=np.int64)
        cap = rows.shape[0] + int(self._sc[_S_PENDING])
        out = (np.empty(cap, np.int64), np.empty(cap, np.int64), np.empty(cap, np.int64))
        n = _feed(capture.core, rows, np.int64(batch << BATCH_SHIFT), self.size, self.message_capacity,
                  self.cell_capacity, self.policy.idle_timeout, self.policy.sweep_period,
                  *self._state(), *out)
        return Emitted(*(a[:n] for a in out))

    def close(self) -> Emitted:
        cap = int(self._sc[_S_PENDING])
        out = (np.empty(cap, np.int64), np.empty(cap, np.int64), np.empty(cap, np.int64))
        n = _drain(*self._state(), *out, DRAIN_POSITION)
        return Emitted(*(a[:n] for a in out))

    def __len__(self) -> int:
        return int(self._sc[_S_PENDING])

    @property
    def classified(self) -> int:
        return int(self._sc[_S_CLASSIFIED])

    @property
    def counters(self) -> TableCounters:
        sc = self._sc
        return TableCounters(int(sc[_S_INSERTED]), int(sc[_S_MATCHED]), int(sc[_S_UNMATCHED]),
                             int(sc[_S_EXHAUSTED]), int(sc[_S_MISSING_ACK]))

    @property
    def transactions_completed(self) -> int:
        return int(self._sc[_S_MATCHED])


def concat_emitted(parts: Sequence[Emitted]) -> Emitted:
    parts = [p for p in parts if len(p)]
    if not parts:
        return Emitted.empty()
    return Emitted(*(np.concatenate([getattr(p, f) for p in parts]) for f in Emitted._fields))


def materialize(emitted: Emitted, captures: Sequence[DecodedCapture]) -> list[TransactionRecord]:
    """Turn message-id pairs into records, reading strings from the captures."""
    out = []
    for req, resp in zip(emitted.request.tolist(), emitted.response.tolist()):
        request = captures[req >> BATCH_SHIFT].message(req & ROW_MASK) if req >= 0 else None
        response = captures[resp >> BATCH_SHIFT].message(resp & ROW_MASK) if resp >= 0 else None
        out.append(TransactionRecord.from_messages(request, response))
    return out


class RecordColumns(NamedTuple):
    """Numeric view of emitted records, one entry per record; -1 marks absent values."""

    matched: np.ndarray
    client_ip: np.ndarray
    client_port: np.ndarray
    server_ip: np.ndarray
    server_port: np.ndarray
    request_ns: np.ndarray
    response_ns: np.ndarray
    code: np.ndarray
    method: np.ndarray
    url_len: np.ndarray
    match_number: np.ndarray

    @property
    def response_time(self) -> np.ndarray:
        return np.where(self.matched, self.response_ns - self.request_ns, -1)

    @property
    def first_ns(self) -> np.ndarray:
        """Request time, or response time for response-only records."""
        return np.where(self.request_ns >= 0, self.request_ns, self.response_ns)

    def key_words(self) -> tuple[np.ndarray, np.ndarray]:
        """Dedup key (4-tuple, match number) packed into two uint64 words."""
        u = np.uint64
        hi = (self.client_ip.astype(u) << u(32)) | self.server_ip.astype(u)
        lo = (self.client_port.astype(u) << u(48)) | (self.server_port.astype(u) << u(32)) | self.match_number.astype(u)
        return hi, lo


def _gather(ids: np.ndarray, captures: Sequence[DecodedCapture], column_rows) -> np.ndarray:
    """Rows of ``core`` (and target length) for message ids; zeros where id < 0."""
    out = np.zeros((ids.shape[0], len(column_rows) + 1), dtype=np.int64)
    present = ids >= 0
    batch = np.where(present, ids >> BATCH_SHIFT, -1)
    for b in np.unique(batch[present]).tolist():
        sel = np.flatnonzero(batch == b)
        rows = ids[sel] & ROW_MASK
        cap = captures[b]
        out[sel, :-1] = cap.core[rows][:, column_rows]
        out[sel, -1] = cap.text[rows, TARGET_LEN]
    return out


def record_columns(emitted: Emitted, captures: Sequence[DecodedCapture]) -> RecordColumns:
    cols = [TS, SRC_IP, DST_IP, SRC_PORT, DST_PORT, SEQ, ACK, METHOD, CODE]
    req = _gather(emitted.request, captures, cols)
    resp = _gather(emitted.response, captures, cols)
    has_req = emitted.request >= 0
    has_resp = emitted.response >= 0
    # columns of the gathered blocks
    ts, sip, dip, sport, dport, seq, ack, method, code, tlen = range(10)

    def side(req_col, resp_col):
        return np.where(has_req, req[:, req_col], resp[:, resp_col])

    return RecordColumns(
        matched=has_req & has_resp,
        client_ip=side(sip, dip), client_port=side(sport, dport),
        server_ip=side(dip, sip), server_port=side(dport, sport),
        request_ns=np.where(has_req, req[:, ts], -1),
        response_ns=np.where(has_resp, resp[:, ts], -1),
        code=np.where(has_resp, resp[:, code], -1),
        method=np.where(has_req, req[:, method], -1),
        url_len=np.where(has_req, np.clip(req[:, tlen], 0, MAX_URI_CHARS), -1),
        match_number=side(ack, seq),
    )


def add_to_stats(acc, cols: RecordColumns) -> None:
    hi, lo = cols.key_words()
    acc.add_columns(matched=cols.matched, code=cols.code, method=cols.method, url_len=cols.url_len,
                    rt_ns=cols.response_time, key_hi=hi, key_lo=lo)
