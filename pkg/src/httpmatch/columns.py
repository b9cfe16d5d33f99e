"""Columnar decoding of a whole in-memory capture.

``decode_capture`` walks a PCAP buffer once with a compiled kernel and keeps
only packets that classify as HTTP messages. Each message becomes one row of
two integer matrices: ``core`` holds header fields and classification
results, ``text`` holds offsets of the head fields inside the payload.
Strings are only cut out of the buffer when a message is materialized.

The kernel applies exactly the rules of :func:`packet.parse_frame` and
:func:`packet.classify_http`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .packet import (
    HTTP_METHODS,
    MAX_AGENT_CHARS,
    MAX_URI_CHARS,
    CaptureTimestamp,
    HttpMessage,
    MessageKind,
    PacketView,
    parse_pcap_header,
)

# core columns
TS, SRC_IP, DST_IP, SRC_PORT, DST_PORT, SEQ, ACK, ACK_VALID, KIND, METHOD, CODE, FRAME, PAYLOAD = range(13)
N_CORE = 13
# text columns, offsets relative to the payload start, -1 length means absent
TARGET_OFF, TARGET_LEN, HOST_OFF, HOST_LEN, AGENT_OFF, AGENT_LEN, REASON_OFF, REASON_LEN = range(8)
N_TEXT = 8

KIND_REQUEST = 1
KIND_RESPONSE = 2

# counter slots
C_FRAMES, C_BYTES, C_NON_IP, C_NON_TCP, C_FRAGMENT, C_TRUNCATED, C_NOT_HTTP, C_HTTP = range(8)

_METHOD_TABLE = np.zeros((len(HTTP_METHODS), 8), dtype=np.uint8)
_METHOD_LENS = np.zeros(len(HTTP_METHODS), dtype=np.int64)
for _i, _m in enumerate(HTTP_METHODS):
    _METHOD_TABLE[_i, :len(_m)] = np.frombuffer(_m.encode(), dtype=np.uint8)
    _METHOD_LENS[_i] = len(_m)


@numba.njit(cache=True, inline="always")
def _u32(b, i, swap):
    if swap:
        return (np.int64(b[i]) << 24) | (np.int64(b[i + 1]) << 16) | (np.int64(b[i + 2]) << 8) | np.int64(b[i + 3])
    return (np.int64(b[i + 3]) << 24) | (np.int64(b[i + 2]) << 16) | (np.int64(b[i + 1]) << 8) | np.int64(b[i])


@numba.njit(cache=True, inline="always")
def _be16(b, i):
    return (np.int64(b[i]) << 8) | np.int64(b[i + 1])


@numba.njit(cache=True, inline="always")
def _be32(b, i):
    return (np.int64(b[i]) << 24) | (np.int64(b[i + 1]) << 16) | (np.int64(b[i + 2]) << 8) | np.int64(b[i + 3])


@numba.njit(cache=True, inline="always")
def _find_crlf(b, lo, hi):
    i = lo
    while i + 1 < hi:
        if b[i] == 13 and b[i + 1] == 10:
            return i
        i += 1
    return -1


@numba.njit(cache=True, inline="always")
def _find_byte(b, c, lo, hi):
    i = lo
    while i < hi:
        if b[i] == c:
            return i
        i += 1
    return -1


@numba.njit(cache=True, inline="always")
def _is_digit(c):
    return 48 <= c <= 57


@numba.njit(cache=True)
def _name_is(b, lo, hi, lowered):
    if hi - lo != lowered.shape[0]:
        return False
    for k in range(hi - lo):
        c = b[lo + k]
        if 65 <= c <= 90:
            c += 32
        if c != lowered[k]:
            return False
    return True


@numba.njit(cache=True)
def _count_frames(b, swap):
    n = b.shape[0]
    off = 24
    count = 0
    while off + 16 <= n:
        end = off + 16 + _u32(b, off + 8, swap)
        if end > n:
            break
        off = end
        count += 1
    return count


_HOST = np.frombuffer(b"host", dtype=np.uint8).copy()
_USER_AGENT = np.frombuffer(b"user-agent", dtype=np.uint8).copy()


@numba.njit(cache=True)
def _classify(b, ps, pe, row_text, methods, method_lens, host_name, agent_name, max_agent):
    """Classify payload b[ps:pe]. Returns (kind, method id, status code)."""
    n = pe - ps
    if n >= 5 and b[ps] == 72 and b[ps + 1] == 84 and b[ps + 2] == 84 and b[ps + 3] == 80 and b[ps + 4] == 47:
        if n < 12 or b[ps + 6] != 46 or b[ps + 8] != 32:
            return 0, -1, 0
        if not (_is_digit(b[ps + 5]) and _is_digit(b[ps + 7]) and _is_digit(b[ps + 9])
                and _is_digit(b[ps + 10]) and _is_digit(b[ps + 11])):
            return 0, -1, 0
        code = (b[ps + 9] - 48) * 100 + (b[ps + 10] - 48) * 10 + (b[ps + 11] - 48)
        if code < 100 or code > 599:
            return 0, -1, 0
        eol = _find_crlf(b, ps + 12, pe)
        if eol < 0:
            eol = pe
        if eol > ps + 12:
            if b[ps + 12] != 32:
                return 0, -1, 0
            if eol > ps + 13:
                row_text[REASON_OFF] = 13
                row_text[REASON_LEN] = eol - ps - 13
        return KIND_RESPONSE, -1, code

    # request: method token, then a space within the first 8 bytes
    sp = _find_byte(b, 32, ps, min(pe, ps + 8))
    if sp <= ps:
        return 0, -1, 0
    mlen = sp - ps
    method = -1
    for m in range(methods.shape[0]):
        if method_lens[m] != mlen:
            continue
        same = True
        for k in range(mlen):
            if b[ps + k] != methods[m, k]:
                same = False
                break
        if same:
            method = m
            break
    if method < 0:
        return 0, -1, 0
    start = sp + 1
    eol = _find_crlf(b, ps, pe)
    terminated = eol >= 0
    if not terminated:
        eol = pe
    tend = _find_byte(b, 32, start, eol)
    if tend < 0:
        if terminated:
            return 0, -1, 0
        tend = eol
    elif terminated:
        v = tend + 1
        if eol - v != 8:
            return 0, -1, 0
        if not (b[v] == 72 and b[v + 1] == 84 and b[v + 2] == 84 and b[v + 3] == 80 and b[v + 4] == 47
                and _is_digit(b[v + 5]) and b[v + 6] == 46 and _is_digit(b[v + 7])):
            return 0, -1, 0
    if tend == start:
        return 0, -1, 0
    row_text[TARGET_OFF] = start - ps
    row_text[TARGET_LEN] = tend - start
    if terminated:
        pos = eol + 2
        while True:
            nl = _find_crlf(b, pos, pe)
            if nl <= pos:
                break
            colon = _find_byte(b, 58, pos, nl)
            if colon > pos:
                is_host = row_text[HOST_LEN] < 0 and _name_is(b, pos, colon, host_name)
                is_agent = not is_host and row_text[AGENT_LEN] < 0 and _name_is(b, pos, colon, agent_name)
                if is_host or is_agent:
                    lo = colon + 1
                    hi = nl
                    while lo < hi and (b[lo] == 32 or b[lo] == 9):
                        lo += 1
                    while hi > lo and (b[hi - 1] == 32 or b[hi - 1] == 9):
                        hi -= 1
                    if is_agent and hi - lo > max_agent:
                        hi = lo + max_agent
                    if hi > lo:
                        slot = HOST_OFF if is_host else AGENT_OFF
                        row_text[slot] = lo - ps
                        row_text[slot + 1] = hi - lo
            pos = nl + 2
    return KIND_REQUEST, method, 0


@numba.njit(cache=True)
def _decode(b, swap, nano, core, text, counts, methods, method_lens, host_name, agent_name, max_agent):
    n = b.shape[0]
    off = 24
    frame_no = -1
    k = 0
    while off + 16 <= n:
        sec = _u32(b, off, swap)
        frac = _u32(b, off + 4, swap)
        incl = _u32(b, off + 8, swap)
        f = off + 16
        end = f + incl
        if end > n:
            break
        off = end
        frame_no += 1
        counts[C_FRAMES] += 1
        counts[C_BYTES] += incl
        # Ethernet, optional single 802.1Q tag
        if incl < 14:
            counts[C_TRUNCATED] += 1
            continue
        ethertype = _be16(b, f + 12)
        l3 = f + 14
        if ethertype == 0x8100:
            if incl < 18:
                counts[C_TRUNCATED] += 1
                continue
            ethertype = _be16(b, f + 16)
            l3 = f + 18
            if ethertype == 0x8100 or ethertype == 0x88A8:
                counts[C_NON_IP] += 1
                continue
        if ethertype != 0x0800:
            counts[C_NON_IP] += 1
            continue
        if end < l3 + 20:
            counts[C_TRUNCATED] += 1
            continue
        vihl = b[l3]
        if vihl >> 4 != 4:
            counts[C_NON_IP] += 1
            continue
        ihl = (vihl & 15) * 4
        if ihl < 20 or end < l3 + ihl:
            counts[C_TRUNCATED] += 1
            continue
        if _be16(b, l3 + 6) & 0x1FFF:
            counts[C_FRAGMENT] += 1
            continue
        if b[l3 + 9] != 6:
            counts[C_NON_TCP] += 1
            continue
        l4 = l3 + ihl
        if end < l4 + 20:
            counts[C_TRUNCATED] += 1
            continue
        doff = (b[l4 + 12] >> 4) * 4
        ps = l4 + doff
        if doff < 20 or end < ps:
            counts[C_TRUNCATED] += 1
            continue
        total_len = _be16(b, l3 + 2)
        pe = end
        if total_len != 0 and l3 + total_len < end:
            pe = l3 + total_len
        if pe < ps:
            counts[C_TRUNCATED] += 1
            continue
        row_text = text[k]
        row_text[:] = -1
        kind, method, code = _classify(b, ps, pe, row_text, methods, method_lens, host_name, agent_name, max_agent)
        if kind == 0:
            counts[C_NOT_HTTP] += 1
            continue
        counts[C_HTTP] += 1
        row = core[k]
        row[TS] = sec * 1_000_000_000 + (frac if nano else frac * 1000)
        row[SRC_IP] = _be32(b, l3 + 12)
        row[DST_IP] = _be32(b, l3 + 16)
        row[SRC_PORT] = _be16(b, l4)
        row[DST_PORT] = _be16(b, l4 + 2)
        row[SEQ] = _be32(b, l4 + 4)
        row[ACK] = _be32(b, l4 + 8)
        row[ACK_VALID] = 1 if b[l4 + 13] & 0x10 else 0
        row[KIND] = kind
        row[METHOD] = method
        row[CODE] = code
        row[FRAME] = frame_no
        row[PAYLOAD] = ps
        k += 1
    return k


@dataclass(frozen=True)
class CaptureCounts:
    frames: int = 0
    bytes: int = 0
    non_ip: int = 0
    non_tcp: int = 0
    fragment: int = 0
    truncated: int = 0
    not_http: int = 0
    http: int = 0

    @property
    def skipped(self) -> int:
        return self.non_ip + self.non_tcp + self.fragment + self.truncated


class DecodedCapture:
    """HTTP messages of one capture in columnar form.

    Holds a reference to the capture buffer, which must stay alive (and
    unmodified) for as long as messages are materialized from it.
    """

    def __init__(self, buf: np.ndarray, core: np.ndarray, text: np.ndarray, counts: CaptureCounts):
        self.buf = buf
        self.core = core
        self.text = text
        self.counts = counts

    def __len__(self) -> int:
        return self.core.shape[0]

    def _slice(self, base: int, off: int, length: int, cap: int = -1) -> str | None:
        if length < 0:
            return None
        if cap >= 0 and length > cap:
            length = cap
        return self.buf[base + off:base + off + length].tobytes().decode("latin-1")

    def packet(self, i: int) -> PacketView:
        r = self.core[i]
        return PacketView(CaptureTimestamp.from_ns(int(r[TS])), int(r[SRC_IP]), int(r[DST_IP]),
                          int(r[SRC_PORT]), int(r[DST_PORT]), int(r[SEQ]), int(r[ACK]), bool(r[ACK_VALID]))

    def message(self, i: int) -> HttpMessage:
        r = self.core[i]
        t = self.text[i]
        base = int(r[PAYLOAD])
        if r[KIND] == KIND_REQUEST:
            return HttpMessage(
                MessageKind.REQUEST, self.packet(i),
                method=HTTP_METHODS[r[METHOD]],
                uri=self._slice(base, t[TARGET_OFF], t[TARGET_LEN], MAX_URI_CHARS),
                host=self._slice(base, t[HOST_OFF], t[HOST_LEN]),
                agent=self._slice(base, t[AGENT_OFF], t[AGENT_LEN], MAX_AGENT_CHARS),
            )
        return HttpMessage(MessageKind.RESPONSE, self.packet(i), status_code=int(r[CODE]),
                           status_message=self._slice(base, t[REASON_OFF], t[REASON_LEN]))

    def messages(self):
        return [self.message(i) for i in range(len(self))]

    def url_lengths(self) -> np.ndarray:
        """Stored URI length per message (0 for responses)."""
        return np.clip(self.text[:, TARGET_LEN], 0, MAX_URI_CHARS)


def as_buffer(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data.view(np.uint8).reshape(-1)
    return np.frombuffer(data, dtype=np.uint8)


def decode_capture(data) -> DecodedCapture:
    """Decode a complete PCAP capture held in memory (bytes, mmap or uint8 array)."""
    buf = as_buffer(data)
    header = parse_pcap_header(buf[:24].tobytes())
    swap = header.byteorder == ">"
    n_frames = _count_frames(buf, swap)
    core = np.empty((n_frames, N_CORE), dtype=np.int64)
    text = np.empty((n_frames, N_TEXT), dtype=np.int32)
    counts = np.zeros(8, dtype=np.int64)
    k = _decode(buf, swap, header.nanosecond, core, text, counts,
                _METHOD_TABLE, _METHOD_LENS, _HOST, _USER_AGENT, MAX_AGENT_CHARS)
    # copy so the oversized scratch arrays are released
    return DecodedCapture(buf, core[:k].copy(), text[:k].copy(), CaptureCounts(*(int(c) for c in counts)))
