"""XOR hashes used to place messages in the match table and to pick consumers.

Three variants, from coarsest to finest:

* ``hash_4tuple``: addresses and ports only. Symmetric, so both directions of
  a connection hash alike, but every transaction on a connection collides.
* ``hash_transaction``: additionally folds in the request's ack number or the
  response's seq number. A request and its response still agree because the
  response's seq equals the request's ack.
* ``feeder_hash``: additionally XORs the four bytes of that number together
  into the low byte, so the low bits used by ``mod n`` vary between
  consecutive transactions of one connection.

Ports are zero-extended to 32 bits; addresses are big-endian integers.
"""

from __future__ import annotations

import numpy as np

from .packet import HttpMessage, MessageKind, PacketView

MASK32 = 0xFFFFFFFF


class MissingAck(ValueError):
    """A request packet without the ACK flag cannot be keyed by its ack number."""


def hash_4tuple(src_ip: int, src_port: int, dst_ip: int, dst_port: int) -> int:
    return (src_ip ^ src_port ^ dst_ip ^ dst_port) & MASK32


def byte_fold(number: int) -> int:
    """XOR of the four bytes of a 32-bit number."""
    return (number ^ (number >> 8) ^ (number >> 16) ^ (number >> 24)) & 0xFF


def _match_number(pkt: PacketView, kind: MessageKind) -> int:
    if kind is MessageKind.REQUEST:
        if not pkt.ack_valid:
            raise MissingAck(f"request from {pkt.src_ip:#010x}:{pkt.src_port} has no ACK flag")
        return pkt.ack
    return pkt.seq


def hash_transaction(msg: HttpMessage) -> int:
    pkt = msg.pkt
    number = _match_number(pkt, msg.kind)
    return (pkt.src_ip ^ pkt.src_port ^ pkt.dst_ip ^ pkt.dst_port ^ number) & MASK32


def feeder_hash(pkt: PacketView, kind: MessageKind) -> int:
    number = _match_number(pkt, kind)
    return (pkt.src_ip ^ pkt.src_port ^ pkt.dst_ip ^ pkt.dst_port ^ number ^ byte_fold(number)) & MASK32


def consumer_index(h: int, n: int) -> int:
    if n < 1:
        raise ValueError(f"consumer count must be >= 1, got {n}")
    return h % n


# Array forms, used by the columnar pipeline. Inputs are integer arrays of equal
# shape; results are uint32.

def hash_4tuple_array(src_ip, src_port, dst_ip, dst_port) -> np.ndarray:
    out = np.asarray(src_ip, dtype=np.uint32) ^ np.asarray(dst_ip, dtype=np.uint32)
    out ^= np.asarray(src_port, dtype=np.uint32)
    out ^= np.asarray(dst_port, dtype=np.uint32)
    return out


def byte_fold_array(number) -> np.ndarray:
    number = np.asarray(number, dtype=np.uint32)
    return (number ^ (number >> 8) ^ (number >> 16) ^ (number >> 24)) & np.uint32(0xFF)


def feeder_hash_array(src_ip, src_port, dst_ip, dst_port, number) -> np.ndarray:
    number = np.asarray(number, dtype=np.uint32)
    return hash_4tuple_array(src_ip, src_port, dst_ip, dst_port) ^ number ^ byte_fold_array(number)
