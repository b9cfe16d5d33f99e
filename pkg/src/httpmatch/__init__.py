"""First-packet HTTP transaction matching for packet captures."""

from .hashing import MissingAck, consumer_index, feeder_hash, hash_4tuple, hash_transaction
from .matcher import (
    Consumer,
    GcPolicy,
    MatchTable,
    TransactionRecord,
    dedup_records,
    match_condition,
)
from .packet import (
    BadMagic,
    CaptureTimestamp,
    HttpMessage,
    MessageKind,
    PacketView,
    Skip,
    SkipReason,
    TruncatedHeader,
    classify_http,
    parse_frame,
    read_pcap,
)

__version__ = "0.1.0"

__all__ = [
    "BadMagic",
    "CaptureTimestamp",
    "Consumer",
    "GcPolicy",
    "HttpMessage",
    "MatchTable",
    "MessageKind",
    "MissingAck",
    "PacketView",
    "Skip",
    "SkipReason",
    "TransactionRecord",
    "TruncatedHeader",
    "classify_http",
    "consumer_index",
    "dedup_records",
    "feeder_hash",
    "hash_4tuple",
    "hash_transaction",
    "match_condition",
    "parse_frame",
    "read_pcap",
]
