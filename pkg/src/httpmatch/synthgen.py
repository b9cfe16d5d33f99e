"""Synthetic HTTP captures with known ground truth, and a brute-force matcher.

``generate`` builds a nanosecond PCAP of persistent HTTP/1.1 connections
with realistic seq/ack bookkeeping and optional noise (retransmissions,
request/response reordering, 100-Continue exchanges). ``oracle_match``
pairs messages by exhaustive comparison, independently of the hash table.
"""

from __future__ import annotations

import argparse
import csv
import struct
import sys
from dataclasses import dataclass
from http import HTTPStatus
from typing import Optional, Sequence

import numba
import numpy as np

from .matcher import TransactionRecord
from .packet import (
    MAX_AGENT_CHARS,
    MAX_URI_CHARS,
    NANOS_PER_SECOND,
    CaptureTimestamp,
    LINKTYPE_ETHERNET,
    PCAP_MAGIC_NANO,
    MessageKind,
    ip_to_str,
    iter_messages,
)


class SpecInvalid(ValueError):
    pass


# Sampling distributions. ``sample`` returns a float array.

@dataclass(frozen=True)
class Constant:
    value: float

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)


@dataclass(frozen=True)
class Exponential:
    rate: float

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.rate, size)


@dataclass(frozen=True)
class Empirical:
    values: tuple

    def sample(self, rng, size):
        return rng.choice(np.asarray(self.values, dtype=float), size)


USER_AGENTS = (
    "Mozilla/4.0",
    "curl/7.35.0",
    "Mozilla/5.0 (Windows NT 6.1; WOW64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/33.0.1750.146 Safari/537.36",
    "Java/1.7.0_51",
)

_URL_ALPHABET = np.frombuffer(b"abcdefghijklmnopqrstuvwxyz0123456789-_/.", dtype=np.uint8)


@dataclass(frozen=True)
class WorkloadSpec:
    """What to generate. Times are in seconds, sizes in bytes.

    ``flow_zipf`` is the exponent of the flow popularity law: transaction
    counts per flow follow rank**-flow_zipf, so 0 spreads them evenly.
    """

    transactions: int = 1000
    flows: int = 100
    flow_zipf: float = 0.0
    rt: object = Exponential(10.0)
    retransmit_prob: float = 0.0
    reorder_prob: float = 0.0
    continue_prob: float = 0.0
    url_length: object = Uniform(8, 120)
    seed: int = 0
    arrival_rate: float = 1000.0
    start_seconds: int = 1393978285
    servers: int = 16
    methods: tuple = (("GET", 0.80), ("POST", 0.12), ("HEAD", 0.04), ("PUT", 0.02), ("DELETE", 0.02))
    codes: tuple = ((200, 0.82), (304, 0.06), (404, 0.06), (302, 0.03), (500, 0.03))
    body_length: object = Uniform(0, 600)
    retransmit_delay: float = 0.2
    think_time: float = 0.001

    def __post_init__(self):
        for name in ("retransmit_prob", "reorder_prob", "continue_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise SpecInvalid(f"{name} must be within [0, 1], got {value}")
        if self.transactions < 0:
            raise SpecInvalid("transactions must be >= 0")
        if self.flows < 1 or self.servers < 1:
            raise SpecInvalid("flows and servers must be >= 1")
        if self.flow_zipf < 0:
            raise SpecInvalid("flow_zipf must be >= 0")
        if self.arrival_rate <= 0:
            raise SpecInvalid("arrival_rate must be positive")
        if not self.methods or not self.codes:
            raise SpecInvalid("methods and codes must not be empty")
        if not 0 <= self.seed < 2**64:
            raise SpecInvalid("seed must fit in 64 bits")


@dataclass(slots=True)
class TrueTransaction:
    client_ip: str
    client_port: int
    server_ip: str
    server_port: int
    method: str
    uri: str
    host: str
    agent: str
    code: int
    reason: str
    request_ts: CaptureTimestamp
    response_ts: CaptureTimestamp
    match_number: int
    final_seq: int
    retransmitted: Optional[str] = None  # "request" or "response"
    reordered: bool = False
    continued: bool = False
    interim_ts: Optional[CaptureTimestamp] = None

    def expected_records(self) -> list[TransactionRecord]:
        """Records a first-packet analyzer should report after deduplication.

        With 100-Continue, the request pairs with the interim response and the
        final response, whose seq no longer equals the request's ack, stays
        on its own.
        """
        uri = self.uri[:MAX_URI_CHARS]
        agent = self.agent[:MAX_AGENT_CHARS]
        ends = (self.client_ip, self.client_port, self.server_ip, self.server_port)
        if not self.continued:
            return [TransactionRecord(*ends, self.request_ts, self.response_ts, self.response_ts - self.request_ts,
                                      self.reason, self.code, self.method, agent, self.host, uri, self.match_number)]
        return [
            TransactionRecord(*ends, self.request_ts, self.interim_ts, self.interim_ts - self.request_ts,
                              "Continue", 100, self.method, agent, self.host, uri, self.match_number),
            TransactionRecord(*ends, None, self.response_ts, None, self.reason, self.code,
                              None, None, None, None, self.final_seq),
        ]


TRUTH_COLUMNS = ("client_ip", "client_port", "server_ip", "server_port", "request_ts", "response_ts",
                 "response_time", "response_message", "response_code", "method", "agent", "host", "uri",
                 "match_number", "retransmitted", "reordered", "continued", "interim_ts")

_RETRANSMIT_NAMES = (None, "request", "response")


class GroundTruth:
    """The generated transactions, stored column-wise.

    Integer columns are numpy arrays indexed by transaction number; text
    columns are lists. ``interim_ns`` is -1 where there was no 100-Continue,
    ``retransmit`` is 0 (none), 1 (request) or 2 (response).
    """

    def __init__(self, columns: dict, packets: int):
        self.columns = columns
        self.packets = packets
        self._transactions = None

    def __len__(self):
        return len(self.columns["request_ns"])

    def __getattr__(self, name):
        try:
            return self.__dict__["columns"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def response_times(self) -> np.ndarray:
        """Request-to-final-response delay per transaction, in nanoseconds."""
        return self.columns["response_ns"] - self.columns["request_ns"]

    @property
    def retransmitted(self) -> int:
        return int(np.count_nonzero(self.columns["retransmit"]))

    @property
    def transactions(self) -> list[TrueTransaction]:
        if self._transactions is None:
            c = self.columns
            ts = CaptureTimestamp.from_ns
            self._transactions = [
                TrueTransaction(
                    ip_to_str(cip), cport, ip_to_str(sip), sport, method, uri, host, agent, code, reason,
                    ts(req), ts(resp), number, final, _RETRANSMIT_NAMES[rtx], reord, cont,
                    ts(interim) if interim >= 0 else None)
                for (cip, cport, sip, sport, method, uri, host, agent, code, reason, req, resp, number, final,
                     rtx, reord, cont, interim) in zip(
                    c["client_ip"].tolist(), c["client_port"].tolist(), c["server_ip"].tolist(),
                    c["server_port"].tolist(), c["method"], c["uri"], c["host"], c["agent"], c["code"].tolist(),
                    c["reason"], c["request_ns"].tolist(), c["response_ns"].tolist(),
                    c["match_number"].tolist(), c["final_seq"].tolist(), c["retransmit"].tolist(),
                    c["reordered"].tolist(), c["continued"].tolist(), c["interim_ns"].tolist())
            ]
        return self._transactions

    def expected_records(self) -> list[TransactionRecord]:
        return [rec for t in self.transactions for rec in t.expected_records()]

    def to_csv(self, stream) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(TRUTH_COLUMNS)
        for t in self.transactions:
            w.writerow((t.client_ip, t.client_port, t.server_ip, t.server_port, t.request_ts, t.response_ts,
                        CaptureTimestamp.from_ns(t.response_ts - t.request_ts), t.reason, t.code, t.method,
                        t.agent, t.host, t.uri, t.match_number, t.retransmitted or "", int(t.reordered),
                        int(t.continued), t.interim_ts or ""))


def _weights(pairs) -> tuple[list, np.ndarray]:
    keys = [k for k, _ in pairs]
    w = np.asarray([v for _, v in pairs], dtype=float)
    return keys, w / w.sum()


def _distinct_flows(rng, n_flows, server_ips):
    seen = set()
    flows = []
    while len(flows) < n_flows:
        cip = int(rng.integers(0x01000000, 0xDF000000))
        cport = int(rng.integers(1024, 65536))
        sip = server_ips[int(rng.integers(len(server_ips)))]
        if (cip, cport, sip) in seen or cip in server_ips:
            continue
        seen.add((cip, cport, sip))
        flows.append((cip, cport, sip, 80))
    return flows


_ETH = np.frombuffer(b"\x02\x00\x00\x00\x00\x02\x02\x00\x00\x00\x00\x01\x08\x00", dtype=np.uint8).copy()


@numba.njit(cache=True)
def _put16(out, at, v):
    out[at] = (v >> 8) & 0xFF
    out[at + 1] = v & 0xFF


@numba.njit(cache=True)
def _put32(out, at, v):
    out[at] = (v >> 24) & 0xFF
    out[at + 1] = (v >> 16) & 0xFF
    out[at + 2] = (v >> 8) & 0xFF
    out[at + 3] = v & 0xFF


@numba.njit(cache=True)
def _write_records(out, ev, blob, eth):
    """Little-endian nanosecond PCAP records, one Ethernet/IPv4/TCP frame per event row.

    Byte-for-byte what ``write_pcap`` produces for ``build_frame`` output.
    """
    at = 24
    for i in range(ev.shape[0]):
        ts = ev[i, _E_TS]
        plen = ev[i, _E_PLEN]
        flen = 54 + plen
        sec = ts // 1_000_000_000
        ns = ts % 1_000_000_000
        for k in range(4):
            out[at + k] = (sec >> (8 * k)) & 0xFF
            out[at + 4 + k] = (ns >> (8 * k)) & 0xFF
            out[at + 8 + k] = (flen >> (8 * k)) & 0xFF
            out[at + 12 + k] = (flen >> (8 * k)) & 0xFF
        f = at + 16
        for k in range(14):
            out[f + k] = eth[k]
        ip = f + 14
        out[ip] = 0x45
        out[ip + 1] = 0
        _put16(out, ip + 2, 40 + plen)
        _put16(out, ip + 4, (i + 1) & 0xFFFF)
        _put16(out, ip + 6, 0x4000)
        out[ip + 8] = 64
        out[ip + 9] = 6
        _put16(out, ip + 10, 0)
        _put32(out, ip + 12, ev[i, _E_SIP])
        _put32(out, ip + 16, ev[i, _E_DIP])
        total = 0
        for k in range(10):
            total += (np.int64(out[ip + 2 * k]) << 8) | out[ip + 2 * k + 1]
        total = (total & 0xFFFF) + (total >> 16)
        total = (total & 0xFFFF) + (total >> 16)
        _put16(out, ip + 10, ~total & 0xFFFF)
        tcp = ip + 20
        _put16(out, tcp, ev[i, _E_SPORT])
        _put16(out, tcp + 2, ev[i, _E_DPORT])
        _put32(out, tcp + 4, ev[i, _E_SEQ])
        _put32(out, tcp + 8, ev[i, _E_ACK])
        out[tcp + 12] = 0x50
        out[tcp + 13] = 0x18 if plen > 0 else 0x10
        _put16(out, tcp + 14, 65535)
        _put16(out, tcp + 16, 0)
        _put16(out, tcp + 18, 0)
        poff = ev[i, _E_POFF]
        p = tcp + 20
        for k in range(plen):
            out[p + k] = blob[poff + k]
        at = p + plen
    return at


# event row columns
(_E_SORT, _E_TIE, _E_TS, _E_SIP, _E_DIP, _E_SPORT, _E_DPORT, _E_SEQ, _E_ACK,
 _E_POFF, _E_PLEN, _E_TX, _E_ROLE, _E_SHIFTED) = range(14)
# event roles
_REQ, _RESP, _INTERIM, _BODY, _DUP = range(5)

_INTERIM_HEAD = b"HTTP/1.1 100 Continue\r\n\r\n"
_BODY_BYTES = bytes(range(97, 123)) * 64  # letters only; never looks like an HTTP head


def generate(spec: WorkloadSpec) -> tuple[bytes, GroundTruth]:
    """Build a capture for ``spec``. Identical specs give identical bytes."""
    rng = np.random.default_rng(spec.seed)
    T = spec.transactions
    server_ips = [int(x) for x in rng.choice(np.arange(0xC0A80001, 0xC0A8FFFF), spec.servers, replace=False)]
    hosts = {ip: f"www{i}.example.com" for i, ip in enumerate(server_ips)}
    flows = _distinct_flows(rng, spec.flows, server_ips)
    cseq = rng.integers(0, 2**32, spec.flows).tolist()
    sseq = rng.integers(0, 2**32, spec.flows).tolist()
    ready = [0] * spec.flows

    popularity = np.arange(1, spec.flows + 1, dtype=float) ** -spec.flow_zipf
    flow_of = rng.choice(spec.flows, T, p=popularity / popularity.sum()).tolist()
    arrivals = (np.cumsum(rng.exponential(1.0 / spec.arrival_rate, T)) * NANOS_PER_SECOND).astype(np.int64)
    arrivals = (arrivals + spec.start_seconds * NANOS_PER_SECOND).tolist()
    rts = np.maximum(np.rint(np.asarray(spec.rt.sample(rng, T)) * NANOS_PER_SECOND), 0).astype(np.int64).tolist()
    url_lens = np.maximum(np.rint(spec.url_length.sample(rng, T)), 1).astype(np.int64).tolist()
    body_lens = np.clip(np.rint(spec.body_length.sample(rng, T)), 0, len(_BODY_BYTES)).astype(np.int64).tolist()
    method_keys, method_w = _weights(spec.methods)
    methods = rng.choice(len(method_keys), T, p=method_w).tolist()
    code_keys, code_w = _weights(spec.codes)
    codes = rng.choice(len(code_keys), T, p=code_w).tolist()
    agents = rng.integers(0, len(USER_AGENTS), T).tolist()
    noise = rng.random((T, 4))
    continued = (noise[:, 0] < spec.continue_prob).tolist()
    retransmitted = (noise[:, 1] < spec.retransmit_prob).tolist()
    reordered = (noise[:, 2] < spec.reorder_prob).tolist()
    dup_response = (noise[:, 3] < 0.5).tolist()
    url_chars = _URL_ALPHABET[rng.integers(0, len(_URL_ALPHABET), int(sum(url_lens)))].tobytes().decode("ascii")

    reasons = {c: HTTPStatus(c).phrase for c in code_keys}
    retransmit_ns = round(spec.retransmit_delay * NANOS_PER_SECOND)
    think_ns = round(spec.think_time * NANOS_PER_SECOND)

    # payload blob: shared body bytes and interim head first, then per-message heads
    chunks = [_BODY_BYTES, _INTERIM_HEAD]
    blob_len = len(_BODY_BYTES) + len(_INTERIM_HEAD)
    interim_off = len(_BODY_BYTES)

    events = []
    add = events.append
    shifts = []  # (response event, request event) pairs moved ahead in file order
    col_method, col_uri, col_host, col_agent, col_reason = [], [], [], [], []
    col_cip, col_cport, col_sip, col_number, col_final = [], [], [], [], []
    url_pos = 0
    for tx in range(T):
        f = flow_of[tx]
        cip, cport, sip, sport = flows[f]
        t_req = max(arrivals[tx], ready[f])
        rt = rts[tx]
        is_continue = continued[tx]
        method = "POST" if is_continue else method_keys[methods[tx]]
        code = code_keys[codes[tx]]
        ulen = url_lens[tx]
        uri = "/" + url_chars[url_pos:url_pos + ulen - 1]
        url_pos += ulen
        host = hosts[sip]
        agent = USER_AGENTS[agents[tx]]
        c, s = cseq[f], sseq[f]

        post_body = 32 + body_lens[tx] % 512 if method in ("POST", "PUT") else 0
        extra = f"Content-Length: {post_body}\r\n" if post_body else ""
        if is_continue:
            extra += "Expect: 100-continue\r\n"
        req_payload = (f"{method} {uri} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {agent}\r\nAccept: */*\r\n"
                       f"{extra}\r\n").encode("latin-1")
        blen = body_lens[tx]
        resp_head = (f"HTTP/1.1 {code} {reasons[code]}\r\nServer: synth\r\n"
                     f"Content-Length: {blen}\r\n\r\n").encode("latin-1")
        resp_payload = resp_head + _BODY_BYTES[:blen]
        req_off = blob_len
        resp_off = req_off + len(req_payload)
        chunks.append(req_payload)
        chunks.append(resp_payload)
        blob_len = resp_off + len(resp_payload)
        c_body = (c + len(req_payload)) & 0xFFFFFFFF
        c_after = (c_body + post_body) & 0xFFFFFFFF

        base = 8 * tx
        req_ev = len(events)
        add((t_req, base + 1, t_req, cip, sip, cport, sport, c, s, req_off, len(req_payload), tx, _REQ, 0))
        if is_continue:
            t_interim = t_req + rt // 2
            first = len(events)
            s_final = (s + len(_INTERIM_HEAD)) & 0xFFFFFFFF
            add((t_interim, base + 2, t_interim, sip, cip, sport, cport, s, c_body, interim_off,
                 len(_INTERIM_HEAD), tx, _INTERIM, 0))
            body_ts = t_interim + 10_000
            add((body_ts, base + 3, body_ts, cip, sip, cport, sport, c_body, s_final, 0, post_body, tx, _BODY, 0))
            t_final = max(t_req + rt, body_ts + 1)
        else:
            s_final = s
            t_final = t_req + rt
            if post_body:
                body_ts = t_req + 10_000
                add((body_ts, base + 3, body_ts, cip, sip, cport, sport, c_body, s, 0, post_body, tx, _BODY, 0))
                t_final = max(t_final, body_ts + 1)
            first = len(events)
        add((t_final, base + 4, t_final, sip, cip, sport, cport, s_final, c_after, resp_off, len(resp_payload),
             tx, _RESP, 0))

        if retransmitted[tx]:
            row = list(events[first if dup_response[tx] else req_ev])
            row[_E_SORT] = row[_E_TS] = row[_E_TS] + retransmit_ns
            row[_E_TIE] = base + 5
            row[_E_ROLE] = _DUP
            add(tuple(row))
        if reordered[tx]:
            shifts.append((first, req_ev))

        cseq[f] = c_after
        sseq[f] = (s_final + len(resp_payload)) & 0xFFFFFFFF
        ready[f] = t_final + think_ns
        col_method.append(method)
        col_uri.append(uri)
        col_host.append(host)
        col_agent.append(agent)
        col_reason.append(reasons[code])
        col_cip.append(cip)
        col_cport.append(cport)
        col_sip.append(sip)
        col_number.append(s)
        col_final.append(s_final)

    ev = np.array(events, dtype=np.int64).reshape(-1, 14)
    if shifts:
        # the first response shows up in the capture just before its request
        moved, anchor = np.array(shifts, dtype=np.int64).T
        ev[moved, _E_SORT] = ev[anchor, _E_SORT]
        ev[moved, _E_TIE] = ev[anchor, _E_TIE] - 1
        ev[moved, _E_SHIFTED] = 1
    ev = ev[np.lexsort((ev[:, _E_TIE], ev[:, _E_SORT]))]
    # strictly increasing capture times, except for responses moved ahead of their request:
    # t'[k] = max(t[k], t'[k-1] + 1) has the closed form cummax(t - k) + k
    steady = np.flatnonzero(ev[:, _E_SHIFTED] == 0)
    k = np.arange(steady.size, dtype=np.int64)
    ev[steady, _E_TS] = np.maximum.accumulate(ev[steady, _E_TS] - k) + k if steady.size else ev[steady, _E_TS]

    role, tx_of, ts = ev[:, _E_ROLE], ev[:, _E_TX], ev[:, _E_TS]
    request_ns = np.empty(T, dtype=np.int64)
    response_ns = np.empty(T, dtype=np.int64)
    interim_ns = np.full(T, -1, dtype=np.int64)
    for r, target in ((_REQ, request_ns), (_RESP, response_ns), (_INTERIM, interim_ns)):
        sel = role == r
        target[tx_of[sel]] = ts[sel]
    retransmit = np.zeros(T, dtype=np.int8)
    if T:
        retransmit[np.asarray(retransmitted)] = 1
        retransmit[np.asarray(retransmitted) & np.asarray(dup_response)] = 2

    columns = dict(
        client_ip=np.asarray(col_cip, dtype=np.int64), client_port=np.asarray(col_cport, dtype=np.int64),
        server_ip=np.asarray(col_sip, dtype=np.int64), server_port=np.full(T, 80, dtype=np.int64),
        method=col_method, uri=col_uri, host=col_host, agent=col_agent,
        code=np.asarray([code_keys[i] for i in codes], dtype=np.int64), reason=col_reason,
        request_ns=request_ns, response_ns=response_ns, interim_ns=interim_ns,
        match_number=np.asarray(col_number, dtype=np.int64), final_seq=np.asarray(col_final, dtype=np.int64),
        retransmit=retransmit, reordered=np.asarray(reordered, dtype=bool).reshape(T),
        continued=np.asarray(continued, dtype=bool).reshape(T),
    )

    blob = np.frombuffer(b"".join(chunks), dtype=np.uint8)
    size = 24 + int((70 + ev[:, _E_PLEN]).sum())
    out = np.empty(size, dtype=np.uint8)
    out[:24] = np.frombuffer(struct.pack("<IHHiIII", PCAP_MAGIC_NANO, 2, 4, 0, 0, 262144, LINKTYPE_ETHERNET),
                             dtype=np.uint8)
    _write_records(out, ev, blob, _ETH)
    return out.tobytes(), GroundTruth(columns, len(ev))


def oracle_match(pcap: bytes) -> list[TransactionRecord]:
    """Pair every request with every response by direct comparison.

    For each distinct (4-tuple, number) key the earliest request is paired
    with the earliest response in capture order; later copies of either are
    treated as duplicates and left out. Keys seen on one side only come out
    as single-sided records. Quadratic in the number of messages.
    """
    msgs = list(iter_messages(pcap))
    reqs = [m for m in msgs if m.kind is MessageKind.REQUEST and m.pkt.ack_valid]
    resps = [m for m in msgs if m.kind is MessageKind.RESPONSE]
    if resps:
        cols = np.array([(m.pkt.src_ip, m.pkt.src_port, m.pkt.dst_ip, m.pkt.dst_port, m.pkt.seq) for m in resps],
                        dtype=np.int64)
    else:
        cols = np.empty((0, 5), dtype=np.int64)
    taken = np.zeros(len(resps), dtype=bool)
    paired = set()
    out = []

    def ts_diff(a, b):
        return (a.seconds - b.seconds) * NANOS_PER_SECOND + (a.nanos - b.nanos)

    for q in reqs:
        p = q.pkt
        key = (p.src_ip, p.src_port, p.dst_ip, p.dst_port, p.ack)
        if key in paired:
            continue
        paired.add(key)
        hits = np.flatnonzero((cols[:, 0] == p.dst_ip) & (cols[:, 1] == p.dst_port) & (cols[:, 2] == p.src_ip)
                              & (cols[:, 3] == p.src_port) & (cols[:, 4] == p.ack))
        client = (ip_to_str(p.src_ip), p.src_port, ip_to_str(p.dst_ip), p.dst_port)
        if hits.size:
            taken[hits] = True
            r = resps[hits[0]]
            out.append(TransactionRecord(*client, p.ts, r.pkt.ts, ts_diff(r.pkt.ts, p.ts), r.status_message,
                                         r.status_code, q.method, q.agent, q.host, q.uri, p.ack))
        else:
            out.append(TransactionRecord(*client, p.ts, None, None, None, None, q.method, q.agent, q.host,
                                         q.uri, p.ack))
    lone = set()
    for j in np.flatnonzero(~taken).tolist():
        r = resps[j]
        p = r.pkt
        key = (p.dst_ip, p.dst_port, p.src_ip, p.src_port, p.seq)
        if key in lone:
            continue
        lone.add(key)
        out.append(TransactionRecord(ip_to_str(p.dst_ip), p.dst_port, ip_to_str(p.src_ip), p.src_port, None,
                                     p.ts, None, r.status_message, r.status_code, None, None, None, None, p.seq))
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="httpmatch-synth", description="Write a synthetic HTTP capture.")
    ap.add_argument("output", help="PCAP path to write")
    ap.add_argument("--transactions", type=int, default=1000)
    ap.add_argument("--flows", type=int, default=100)
    ap.add_argument("--zipf", type=float, default=0.0, help="flow popularity exponent (0 = uniform)")
    ap.add_argument("--rate", type=float, default=10.0, help="response times ~ Exponential(rate) seconds")
    ap.add_argument("--retransmit", type=float, default=0.0)
    ap.add_argument("--reorder", type=float, default=0.0)
    ap.add_argument("--continue", dest="continue_prob", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--truth", help="also write the ground truth as CSV")
    args = ap.parse_args(argv)
    try:
        spec = WorkloadSpec(transactions=args.transactions, flows=args.flows, flow_zipf=args.zipf,
                            rt=Exponential(args.rate), retransmit_prob=args.retransmit, reorder_prob=args.reorder,
                            continue_prob=args.continue_prob, seed=args.seed)
    except SpecInvalid as exc:
        ap.error(str(exc))
    data, truth = generate(spec)
    with open(args.output, "wb") as fh:
        fh.write(data)
    if args.truth:
        with open(args.truth, "w", newline="") as fh:
            truth.to_csv(fh)
    print(f"{args.output}: {truth.packets} packets, {len(truth)} transactions", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
