from functools import reduce
from operator import xor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from httpmatch.hashing import (
    MissingAck,
    byte_fold,
    byte_fold_array,
    consumer_index,
    feeder_hash,
    feeder_hash_array,
    hash_4tuple,
    hash_4tuple_array,
    hash_transaction,
)
from httpmatch.packet import MessageKind

from conftest import request, response

u32 = st.integers(0, 2**32 - 1)
u16 = st.integers(0, 65535)


def oracle_xor32(*values):
    """XOR of 32-bit big-endian byte strings, computed byte by byte."""
    chunks = [v.to_bytes(4, "big") for v in values]
    return int.from_bytes(bytes(reduce(xor, column) for column in zip(*chunks)), "big")


def oracle_fold(number):
    return reduce(xor, number.to_bytes(4, "big"))


# Frozen values, each checked against the oracles above in test_frozen_values_match_oracle.
TUPLE = (0x0A000001, 0x1234, 0x0A000002, 0x0050)
TUPLE_HASH = 0x00001267
TRANSACTION_HASH = 0xDEADAC88  # TUPLE_HASH ^ 0xDEADBEEF
DEADBEEF_FOLD = 0x22           # 0xDE ^ 0xAD ^ 0xBE ^ 0xEF
FEEDER_HASH = 0xDEADACAA       # TRANSACTION_HASH ^ DEADBEEF_FOLD


def test_frozen_values_match_oracle():
    assert oracle_xor32(*TUPLE) == TUPLE_HASH
    assert oracle_xor32(*TUPLE, 0xDEADBEEF) == TRANSACTION_HASH
    assert oracle_fold(0xDEADBEEF) == DEADBEEF_FOLD
    assert oracle_xor32(TRANSACTION_HASH, DEADBEEF_FOLD) == FEEDER_HASH


class TestFourTuple:
    def test_zero(self):
        assert hash_4tuple(0, 0, 0, 0) == 0

    def test_worked_example(self):
        assert hash_4tuple(*TUPLE) == TUPLE_HASH

    @given(u32, u16, u32, u16)
    def test_symmetric(self, a, p, b, q):
        assert hash_4tuple(a, p, b, q) == hash_4tuple(b, q, a, p)

    @given(u32, u16, u32, u16)
    def test_matches_oracle(self, a, p, b, q):
        assert hash_4tuple(a, p, b, q) == oracle_xor32(a, p, b, q)


class TestTransactionHash:
    def test_worked_example(self):
        req = request(src=TUPLE[0], sport=TUPLE[1], dst=TUPLE[2], dport=TUPLE[3], ack=0xDEADBEEF)
        assert hash_transaction(req) == TRANSACTION_HASH

    def test_zero_ack_reduces_to_tuple_hash(self):
        req = request(src=TUPLE[0], sport=TUPLE[1], dst=TUPLE[2], dport=TUPLE[3], ack=0)
        assert hash_transaction(req) == TUPLE_HASH

    def test_request_without_ack_flag(self):
        with pytest.raises(MissingAck):
            hash_transaction(request(ack_valid=False))
        with pytest.raises(MissingAck):
            feeder_hash(request(ack_valid=False).pkt, MessageKind.REQUEST)

    def test_response_uses_seq_regardless_of_ack(self):
        a = response(seq=77, ack=1)
        b = response(seq=77, ack=999)
        assert hash_transaction(a) == hash_transaction(b)

    @given(u32, u16, u32, u16, u32)
    def test_pair_hashes_equal(self, a, p, b, q, k):
        req = request(src=a, sport=p, dst=b, dport=q, ack=k)
        resp = response(src=b, sport=q, dst=a, dport=p, seq=k)
        assert hash_transaction(req) == hash_transaction(resp)
        assert feeder_hash(req.pkt, req.kind) == feeder_hash(resp.pkt, resp.kind)


class TestFeederHash:
    def test_byte_fold(self):
        assert byte_fold(0xDEADBEEF) == DEADBEEF_FOLD
        assert byte_fold(0) == 0
        assert byte_fold(0x01000001) == 0

    def test_zero_number_reduces_to_tuple_hash(self):
        req = request(src=TUPLE[0], sport=TUPLE[1], dst=TUPLE[2], dport=TUPLE[3], ack=0)
        assert feeder_hash(req.pkt, req.kind) == TUPLE_HASH

    def test_worked_example(self):
        req = request(src=TUPLE[0], sport=TUPLE[1], dst=TUPLE[2], dport=TUPLE[3], ack=0xDEADBEEF)
        assert feeder_hash(req.pkt, req.kind) == FEEDER_HASH
        assert consumer_index(FEEDER_HASH, 2) == 0

    @given(u32, u16, u32, u16, u32)
    def test_matches_oracle(self, a, p, b, q, k):
        req = request(src=a, sport=p, dst=b, dport=q, ack=k)
        assert feeder_hash(req.pkt, req.kind) == oracle_xor32(a, p, b, q, k, oracle_fold(k))

    def test_lsb_byte_is_uniform(self):
        rng = np.random.default_rng(11)
        n = 10**6
        h = feeder_hash_array(rng.integers(0, 2**32, n), rng.integers(0, 2**16, n),
                              rng.integers(0, 2**32, n), np.full(n, 80), rng.integers(0, 2**32, n))
        counts = np.bincount(h & 0xFF, minlength=256)
        assert sps.chisquare(counts).pvalue > 0.01
        assert abs((h & 1).mean() - 0.5) < 0.002


class TestConsumerIndex:
    @given(u32)
    def test_single_consumer(self, h):
        assert consumer_index(h, 1) == 0

    def test_parity(self):
        assert consumer_index(0xDEADAC8A, 2) == 0
        assert consumer_index(0xDEADAC8B, 2) == 1

    def test_rejects_zero_consumers(self):
        with pytest.raises(ValueError):
            consumer_index(5, 0)

    def test_uniform_hashes_split_evenly(self):
        h = np.random.default_rng(5).integers(0, 2**32, 10**6)
        share = np.mean(h % 2 == 0)
        assert 0.495 <= share <= 0.505


@given(st.lists(st.tuples(u32, u16, u32, u16, u32), min_size=1, max_size=50))
def test_array_forms_match_scalar(rows):
    a, p, b, q, k = (np.array(c, dtype=np.int64) for c in zip(*rows))
    assert hash_4tuple_array(a, p, b, q).tolist() == [hash_4tuple(*r[:4]) for r in rows]
    assert byte_fold_array(k).tolist() == [byte_fold(x) for x in k.tolist()]
    expected = [feeder_hash(request(src=r[0], sport=r[1], dst=r[2], dport=r[3], ack=r[4]).pkt, MessageKind.REQUEST)
                for r in rows]
    assert feeder_hash_array(a, p, b, q, k).tolist() == expected
