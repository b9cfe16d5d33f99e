import io
import os

import pytest
from hypothesis import HealthCheck, settings

from httpmatch.packet import (
    CaptureTimestamp,
    HttpMessage,
    MessageKind,
    PacketView,
    build_frame,
    ip_from_str,
    write_pcap,
)

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CLIENT = ip_from_str("123.111.50.23")
SERVER = ip_from_str("214.223.22.6")
SEC = 1_000_000_000


def ts(seconds, nanos=0):
    return CaptureTimestamp(seconds, nanos)


def request(ack=1000, t=0, *, src=CLIENT, sport=2311, dst=SERVER, dport=80, seq=1, ack_valid=True,
            method="GET", uri="/icon.gif", host="service.host.com", agent="Mozilla/4.0"):
    t = t if isinstance(t, CaptureTimestamp) else CaptureTimestamp.from_ns(t)
    pkt = PacketView(t, src, dst, sport, dport, seq, ack, ack_valid)
    return HttpMessage(MessageKind.REQUEST, pkt, method=method, uri=uri, host=host, agent=agent)


def response(seq=1000, t=0, *, src=SERVER, sport=80, dst=CLIENT, dport=2311, ack=5, code=200, message="OK"):
    t = t if isinstance(t, CaptureTimestamp) else CaptureTimestamp.from_ns(t)
    pkt = PacketView(t, src, dst, sport, dport, seq, ack, True)
    return HttpMessage(MessageKind.RESPONSE, pkt, status_code=code, status_message=message)


def pcap_of(packets, **kw):
    """PCAP bytes for ``(ns or CaptureTimestamp, PacketView)`` pairs."""
    out = io.BytesIO()
    write_pcap(out, [(t, build_frame(p)) for t, p in packets], **kw)
    return out.getvalue()


@pytest.fixture
def example_pair():
    req = request(ack=0x5EED, t=ts(1393978285, 777375000))
    resp = response(seq=0x5EED, t=ts(1393978285, 881505000))
    return req, resp


# -- acceptance reporting ----------------------------------------------------------------------

ACCEPTANCE_LINES: list = []


class CriterionReport:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.details = []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        if exc_type is pytest.skip.Exception:
            status = "SKIP"
        detail = "; ".join(self.details)
        if exc is not None and status == "FAIL":
            detail = f"{detail}; {type(exc).__name__}: {exc}".strip("; ").splitlines()[0]
        line = f"[{status}] criterion {self.number}: {self.title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False


@pytest.fixture
def criterion():
    return CriterionReport


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
