import io
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from httpmatch.packet import (
    HTTP_METHODS,
    MAX_AGENT_CHARS,
    MAX_URI_CHARS,
    BadMagic,
    CaptureTimestamp,
    MessageKind,
    PacketView,
    Skip,
    SkipReason,
    TruncatedHeader,
    UnsupportedLinkType,
    build_frame,
    classify_http,
    ip_from_str,
    ip_to_str,
    iter_messages,
    parse_frame,
    read_pcap,
    write_pcap,
)

from conftest import pcap_of, ts

T0 = ts(10, 0)


def pkt(payload=b"", **kw):
    fields = dict(ts=T0, src_ip=ip_from_str("123.111.50.23"), dst_ip=ip_from_str("214.223.22.6"),
                  src_port=2311, dst_port=80, seq=7, ack=9, ack_valid=True, payload=payload)
    fields.update(kw)
    return PacketView(**fields)


def header(magic, order="<", linktype=1):
    return struct.pack(order + "IHHiIII", magic, 2, 4, 0, 0, 65535, linktype)


class TestTimestamp:
    def test_ordering_and_difference(self):
        a, b = ts(1, 999_999_999), ts(2, 0)
        assert a < b
        assert b - a == 1

    def test_rejects_out_of_range_nanos(self):
        with pytest.raises(ValueError):
            CaptureTimestamp(1, 1_000_000_000)

    def test_str_is_nine_digit_fraction(self):
        assert str(ts(1393978285, 777375000)) == "1393978285.777375000"
        assert str(ts(5, 7)) == "5.000000007"

    @given(st.integers(0, 2**63))
    def test_ns_round_trip(self, ns):
        assert CaptureTimestamp.from_ns(ns).ns == ns


class TestReadPcap:
    def test_empty_after_nanosecond_header(self):
        assert list(read_pcap(header(0xA1B23C4D))) == []

    def test_microseconds_are_widened(self):
        frame = b"\x00" * 20
        data = header(0xA1B2C3D4) + struct.pack("<IIII", 10, 500, len(frame), len(frame)) + frame
        [(t, got)] = list(read_pcap(data))
        assert t == ts(10, 500_000)
        assert got == frame

    @pytest.mark.parametrize("order", ["<", ">"])
    @pytest.mark.parametrize("nano", [True, False])
    def test_both_byte_orders_and_resolutions(self, order, nano):
        frames = [(ts(1, 5000), b"abc"), (ts(2, 7000), b"defg")]
        out = io.BytesIO()
        write_pcap(out, frames, nanosecond=nano, byteorder=order)
        assert list(read_pcap(out.getvalue())) == frames
        assert list(read_pcap(io.BytesIO(out.getvalue()))) == frames

    def test_truncated_trailing_record_stops_cleanly(self):
        out = io.BytesIO()
        write_pcap(out, [(ts(1), b"x" * 30), (ts(2), b"y" * 30)])
        data = out.getvalue()
        assert len(list(read_pcap(data[:-5]))) == 1
        assert len(list(read_pcap(data[:-40]))) == 1

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            list(read_pcap(b"\x00" * 24))

    def test_short_header(self):
        with pytest.raises(TruncatedHeader):
            list(read_pcap(b"\xd4\xc3\xb2\xa1"))

    def test_non_ethernet_linktype(self):
        with pytest.raises(UnsupportedLinkType):
            list(read_pcap(header(0xA1B2C3D4, linktype=101)))


class TestParseFrame:
    def test_arp_is_not_ip(self):
        frame = b"\xff" * 6 + b"\x02" * 6 + b"\x08\x06" + b"\x00" * 28
        assert parse_frame(frame, T0) == Skip(SkipReason.NON_IP)

    def test_syn_without_payload(self):
        p = pkt(ack=0, ack_valid=False)
        got = parse_frame(build_frame(p), T0)
        assert got == p
        assert got.payload == b""

    def test_echoes_record_endpoints(self):
        got = parse_frame(build_frame(pkt(b"GET / HTTP/1.1\r\n\r\n")), T0)
        assert ip_to_str(got.src_ip) == "123.111.50.23"
        assert got.src_port == 2311
        assert ip_to_str(got.dst_ip) == "214.223.22.6"
        assert got.dst_port == 80

    def test_single_vlan_tag_is_unwrapped(self):
        p = pkt(b"hello")
        assert parse_frame(build_frame(p, vlan=42), T0) == p

    def test_stacked_vlan_tags_are_skipped(self):
        frame = bytearray(build_frame(pkt(b"hello"), vlan=42))
        frame[16:18] = b"\x81\x00"
        assert parse_frame(bytes(frame), T0) == Skip(SkipReason.NON_IP)

    def test_ipv6_is_not_ip(self):
        frame = b"\x00" * 12 + b"\x86\xdd" + b"\x60" + b"\x00" * 60
        assert parse_frame(frame, T0) == Skip(SkipReason.NON_IP)

    def test_udp_is_not_tcp(self):
        frame = bytearray(build_frame(pkt(b"abc")))
        frame[14 + 9] = 17
        assert parse_frame(bytes(frame), T0) == Skip(SkipReason.NON_TCP)

    def test_non_first_fragment(self):
        frame = bytearray(build_frame(pkt(b"abc")))
        frame[14 + 6:14 + 8] = struct.pack("!H", 0x2000 | 185)
        assert parse_frame(bytes(frame), T0) == Skip(SkipReason.FRAGMENT)

    @pytest.mark.parametrize("cut", [10, 20, 40, 53])
    def test_truncated(self, cut):
        assert parse_frame(build_frame(pkt(b"abc"))[:cut], T0) == Skip(SkipReason.TRUNCATED)

    def test_ethernet_padding_is_not_payload(self):
        frame = build_frame(pkt(b"")) + b"\x00" * 6
        assert parse_frame(frame, T0).payload == b""

    def test_tcp_options_are_skipped(self):
        frame = bytearray(build_frame(pkt(b"")))
        frame[14 + 20 + 12] = 7 << 4
        frame += b"\x01\x01\x01\x01\x01\x01\x01\x00" + b"GET"
        struct.pack_into("!H", frame, 16, 20 + 28 + 3)
        assert parse_frame(bytes(frame), T0).payload == b"GET"

    @given(
        src=st.integers(0, 2**32 - 1), dst=st.integers(0, 2**32 - 1),
        sport=st.integers(0, 65535), dport=st.integers(0, 65535),
        seq=st.integers(0, 2**32 - 1), ack=st.integers(0, 2**32 - 1), ack_valid=st.booleans(),
        payload=st.binary(max_size=300), vlan=st.one_of(st.none(), st.integers(0, 4095)),
    )
    def test_build_then_parse_is_identity(self, src, dst, sport, dport, seq, ack, ack_valid, payload, vlan):
        p = PacketView(T0, src, dst, sport, dport, seq, ack, ack_valid, payload)
        assert parse_frame(build_frame(p, vlan=vlan), T0) == p


class TestClassify:
    def test_request_from_record_example(self):
        msg = classify_http(pkt(b"GET /icon.gif HTTP/1.1\r\nHost: service.host.com\r\n"
                                b"User-Agent: Mozilla/4.0\r\nAccept: */*\r\n\r\n"))
        assert msg.kind is MessageKind.REQUEST
        assert (msg.method, msg.uri, msg.host, msg.agent) == ("GET", "/icon.gif", "service.host.com", "Mozilla/4.0")
        assert msg.pkt.payload == b""

    def test_response_ok(self):
        msg = classify_http(pkt(b"HTTP/1.1 200 OK\r\nServer: x\r\n\r\n"))
        assert msg.kind is MessageKind.RESPONSE
        assert (msg.status_code, msg.status_message) == (200, "OK")

    def test_empty_payload(self):
        assert classify_http(pkt(b"")) is None

    def test_long_uri_is_truncated(self):
        msg = classify_http(pkt(b"GET /" + b"a" * 3000 + b" HTTP/1.1\r\nHost: h\r\n\r\n"))
        assert len(msg.uri) == MAX_URI_CHARS == 1455
        assert msg.uri == "/" + "a" * 1454

    def test_uri_at_the_limit_is_kept(self):
        uri = "/" + "b" * (MAX_URI_CHARS - 1)
        assert classify_http(pkt(f"GET {uri} HTTP/1.0\r\n\r\n".encode())).uri == uri

    @pytest.mark.parametrize("method", HTTP_METHODS)
    def test_every_method(self, method):
        assert classify_http(pkt(f"{method} * HTTP/1.1\r\n\r\n".encode())).method == method

    @pytest.mark.parametrize("payload", [
        b"get / HTTP/1.1\r\n\r\n",        # methods are case-sensitive
        b"GETS / HTTP/1.1\r\n\r\n",
        b"GET  HTTP/1.1\r\n\r\n",         # empty target
        b"GET /x HTTP/1.1 extra\r\n\r\n",
        b"GET /x\r\n\r\n",                # terminated line without version
        b"GET /x HTTX/1.1\r\n\r\n",
        b"HTTP/1.1 20 OK\r\n",
        b"HTTP/1.1 099 Low\r\n",
        b"HTTP/1.1 600 High\r\n",
        b"HTTP/1.1 200OK\r\n",
        b"HTTP/11 200 OK\r\n",
        b"\x16\x03\x01\x02\x00\x01",      # TLS
    ])
    def test_malformed_is_not_http(self, payload):
        assert classify_http(pkt(payload)) is None

    def test_request_line_cut_by_packet_end(self):
        msg = classify_http(pkt(b"GET /very/long/path?q=1"))
        assert msg.uri == "/very/long/path?q=1"
        assert msg.host is None

    def test_header_names_are_case_insensitive(self):
        msg = classify_http(pkt(b"GET / HTTP/1.1\r\nhOsT:   a.example \r\nUSER-AGENT:\tcurl\r\n\r\n"))
        assert (msg.host, msg.agent) == ("a.example", "curl")

    def test_first_non_empty_host_wins(self):
        msg = classify_http(pkt(b"GET / HTTP/1.1\r\nHost: \r\nHost: b\r\nHost: c\r\n\r\n"))
        assert msg.host == "b"

    def test_headers_after_blank_line_are_ignored(self):
        msg = classify_http(pkt(b"GET / HTTP/1.1\r\n\r\nHost: body\r\n"))
        assert msg.host is None

    def test_unterminated_header_line_is_ignored(self):
        msg = classify_http(pkt(b"GET / HTTP/1.1\r\nHost: a\r\nUser-Agent: cut-off"))
        assert (msg.host, msg.agent) == ("a", None)

    def test_agent_is_capped(self):
        msg = classify_http(pkt(b"GET / HTTP/1.1\r\nUser-Agent: " + b"z" * 100 + b"\r\n\r\n"))
        assert msg.agent == "z" * MAX_AGENT_CHARS

    def test_response_without_reason(self):
        msg = classify_http(pkt(b"HTTP/1.0 204\r\n\r\n"))
        assert (msg.status_code, msg.status_message) == (204, None)

    def test_continue_response(self):
        assert classify_http(pkt(b"HTTP/1.1 100 Continue\r\n\r\n")).status_code == 100

    @given(st.binary(max_size=200))
    def test_kind_matches_payload_prefix(self, tail):
        for head in [b"", b"HTTP/1.1 ", b"GET ", b"POST /", b"HTTP/1.1 404 "]:
            payload = head + tail
            msg = classify_http(pkt(payload))
            if msg is None:
                continue
            if msg.kind is MessageKind.REQUEST:
                assert any(payload.startswith(m.encode() + b" ") for m in HTTP_METHODS)
                assert payload.startswith(msg.method.encode() + b" ")
                assert len(msg.uri) <= MAX_URI_CHARS
            else:
                assert payload.startswith(b"HTTP/")
                assert 100 <= msg.status_code <= 599

    @given(st.binary(max_size=120))
    def test_is_pure(self, payload):
        p = pkt(b"GET " + payload)
        assert classify_http(p) == classify_http(p)


def test_iter_messages_keeps_only_http():
    packets = [
        (1, pkt(b"GET / HTTP/1.1\r\n\r\n")),
        (2, pkt(b"body bytes")),
        (3, pkt(b"HTTP/1.1 200 OK\r\n\r\n")),
    ]
    kinds = [m.kind for m in iter_messages(pcap_of(packets))]
    assert kinds == [MessageKind.REQUEST, MessageKind.RESPONSE]
