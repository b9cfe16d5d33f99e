"""The pipe-delimited transaction record line.

Thirteen fields: client IP, client port, server IP, server port, request
timestamp, response timestamp, response time, response message, response
code, method, agent, host, URI. Absent values render as empty fields.

The URI is written as ``http://<host><target>`` when the request carried a
Host header and an origin-form target, otherwise as the raw target. Text
that would break the line (``|``, CR, LF) and the escape character ``\\``
itself are written as ``\\xHH``.
"""

from __future__ import annotations

import re
from typing import Optional

from .matcher import TransactionRecord
from .packet import NANOS_PER_SECOND, CaptureTimestamp

FIELDS = 13
_ESCAPE = re.compile(r"[|\\\r\n]")
_UNESCAPE = re.compile(r"\\x([0-9a-f]{2})")


class RecordFormatError(ValueError):
    pass


def format_duration(ns: int) -> str:
    sign = "-" if ns < 0 else ""
    sec, frac = divmod(abs(ns), NANOS_PER_SECOND)
    return f"{sign}{sec}.{frac:09d}"


def parse_duration(text: str) -> int:
    sign = -1 if text.startswith("-") else 1
    sec, _, frac = text.lstrip("-").partition(".")
    if not sec.isdigit() or len(frac) != 9 or not frac.isdigit():
        raise RecordFormatError(f"bad duration {text!r}")
    return sign * (int(sec) * NANOS_PER_SECOND + int(frac))


def _escape(text: Optional[str]) -> str:
    if text is None:
        return ""
    return _ESCAPE.sub(lambda m: f"\\x{ord(m.group()):02x}", text)


def _unescape(text: str) -> Optional[str]:
    if text == "":
        return None
    return _UNESCAPE.sub(lambda m: chr(int(m.group(1), 16)), text)


def render_uri(uri: Optional[str], host: Optional[str]) -> Optional[str]:
    if uri is not None and host is not None and uri.startswith("/"):
        return f"http://{host}{uri}"
    return uri


def format_record(rec: TransactionRecord) -> str:
    fields = (
        rec.client_ip,
        str(rec.client_port),
        rec.server_ip,
        str(rec.server_port),
        "" if rec.request_ts is None else str(rec.request_ts),
        "" if rec.response_ts is None else str(rec.response_ts),
        "" if rec.response_time is None else format_duration(rec.response_time),
        _escape(rec.response_message),
        "" if rec.response_code is None else str(rec.response_code),
        _escape(rec.method),
        _escape(rec.agent),
        _escape(rec.host),
        _escape(render_uri(rec.uri, rec.host)),
    )
    return "|".join(fields) + "\n"


def _timestamp(text: str) -> Optional[CaptureTimestamp]:
    if text == "":
        return None
    ns = parse_duration(text)
    if ns < 0:
        raise RecordFormatError(f"negative timestamp {text!r}")
    return CaptureTimestamp.from_ns(ns)


def parse_record(line: str, match_number: int = 0) -> TransactionRecord:
    """Inverse of :func:`format_record`.

    The match number is not part of the line; pass it in if it is known.
    """
    parts = line.rstrip("\n").split("|")
    if len(parts) != FIELDS:
        raise RecordFormatError(f"expected {FIELDS} fields, got {len(parts)}")
    (cip, cport, sip, sport, req_ts, resp_ts, rt, message, code, method, agent, host, uri) = parts
    try:
        host = _unescape(host)
        uri = _unescape(uri)
        prefix = f"http://{host}"
        if host is not None and uri is not None and uri.startswith(prefix) and uri[len(prefix):].startswith("/"):
            uri = uri[len(prefix):]
        return TransactionRecord(
            cip, int(cport), sip, int(sport),
            _timestamp(req_ts), _timestamp(resp_ts),
            None if rt == "" else parse_duration(rt),
            _unescape(message),
            None if code == "" else int(code),
            _unescape(method), _unescape(agent), host, uri,
            match_number,
        )
    except ValueError as exc:
        raise RecordFormatError(str(exc)) from exc
