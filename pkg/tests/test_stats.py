from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from httpmatch.columns import decode_capture
from httpmatch.engine import CompiledConsumer, add_to_stats, concat_emitted, record_columns
from httpmatch.matcher import Consumer, MatchTable, TransactionRecord
from httpmatch.packet import HTTP_METHODS, iter_messages
from httpmatch.stats import (
    Binning,
    BinningMismatch,
    EmptyAccumulator,
    StatsAccumulator,
    ccdf,
    ccdf_at,
    merge,
    merge_all,
    quantile,
    render_report,
)
from httpmatch.synthgen import Uniform, WorkloadSpec, generate

from conftest import SEC, request, response

GOLDEN = Path(__file__).parent / "data" / "report_100.csv"


def matched(rt_ns, code=200, method="GET", uri="/x", ack=1):
    return TransactionRecord.from_messages(request(ack=ack, t=0, method=method, uri=uri),
                                           response(seq=ack, t=rt_ns, code=code))


def acc_of(rt_seconds):
    return StatsAccumulator().update(matched(int(round(r * SEC)), ack=i) for i, r in enumerate(rt_seconds))


def records_of(pcap):
    c = Consumer(MatchTable(1 << 12))
    out = [r for m in iter_messages(pcap) for r in c.consume(m)]
    return out + c.close()


class TestRecordTransaction:
    def test_example_record(self, example_pair):
        acc = StatsAccumulator().update([TransactionRecord.from_messages(*example_pair)])
        assert acc.code_counts == {200: 1}
        assert acc.method_counts == {"GET": 1}
        assert acc.rt_samples().tolist() == [104_130_000]
        assert acc.url_len_counts == {len("/icon.gif"): 1}

    def test_unmatched_request(self):
        acc = StatsAccumulator().update([TransactionRecord.from_messages(request())])
        assert acc.unmatched == 1 and acc.matched == 0
        assert not acc.code_counts
        assert acc.method_counts == {"GET": 1}
        assert acc.rt_count == 0

    def test_unmatched_response_touches_only_the_counter(self):
        acc = StatsAccumulator().update([TransactionRecord.from_messages(response=response())])
        assert acc.unmatched == 1 and not acc.method_counts and not acc.url_len_counts

    def test_two_codes(self):
        acc = StatsAccumulator().update([matched(1, 200, ack=1), matched(1, 404, ack=2)])
        assert acc.code_counts == {200: 1, 404: 1}

    def test_duplicate_suspects(self):
        acc = StatsAccumulator().update([matched(5), matched(7), matched(5, ack=2)])
        assert acc.duplicate_suspects == 1


class TestCcdf:
    def test_single_sample(self):
        acc = acc_of([1.0])
        assert ccdf_at(acc, 0.5) == 1.0
        assert ccdf_at(acc, 1.5) == 0.0

    def test_four_samples(self):
        acc = acc_of([1, 2, 3, 4])
        assert ccdf_at(acc, 2.5) == 0.5
        assert ccdf(acc) == [(1.0, 0.75), (2.0, 0.5), (3.0, 0.25), (4.0, 0.0)]

    def test_empty(self):
        with pytest.raises(EmptyAccumulator):
            ccdf(StatsAccumulator())
        with pytest.raises(EmptyAccumulator):
            quantile(StatsAccumulator(), 0.5)

    def test_histogram_fallback_past_the_cap(self):
        acc = StatsAccumulator(sample_cap=3).update(matched(10**6 * k, ack=k) for k in range(1, 6))
        assert not acc.samples_exact and acc.rt_samples().size == 0
        points = ccdf(acc)
        assert len(points) == 5 and points[-1][1] == 0.0
        # each point sits on the upper edge of the bin holding the sample
        for (t, _), k in zip(points, range(1, 6)):
            assert k * 1e-3 <= t < k * 1e-3 * 10 ** (1 / 90) * 1.0000001

    def test_quantiles(self):
        acc = acc_of([1, 2, 3, 4])
        assert quantile(acc, 0.5) == 2.0 and quantile(acc, 1.0) == 4.0 and quantile(acc, 0) == 1.0

    @given(st.lists(st.integers(0, 10**13), min_size=1, max_size=50), st.integers(0, 60))
    def test_monotone_and_in_range(self, rts, cap):
        acc = StatsAccumulator(sample_cap=cap).update(matched(r, ack=i) for i, r in enumerate(rts))
        points = ccdf(acc)
        ts_ = [t for t, _ in points]
        ps = [p for _, p in points]
        assert ts_ == sorted(ts_)
        assert all(0.0 <= p <= 1.0 for p in ps)
        assert all(a >= b for a, b in zip(ps, ps[1:]))
        assert ps[-1] == 0.0

    def test_exponential_delays_within_dkw_band(self):
        rate, n, alpha = 10.0, 10**4, 0.01
        data, _ = generate(WorkloadSpec(transactions=n, seed=17, arrival_rate=5000))
        acc = StatsAccumulator().update(records_of(data))
        assert acc.rt_count == n
        eps = np.sqrt(np.log(2 / alpha) / (2 * n))
        before = 1.0
        for t, p in ccdf(acc):
            true = np.exp(-rate * t)
            assert abs(p - true) <= eps and abs(before - true) <= eps
            before = p


class TestMerge:
    def test_identity(self):
        x = acc_of([0.1, 0.2])
        assert merge(x, StatsAccumulator()) == x
        assert merge(StatsAccumulator(), x) == x

    def test_binning_mismatch(self):
        with pytest.raises(BinningMismatch):
            merge(StatsAccumulator(Binning(per_decade=10)), StatsAccumulator())

    def test_cap_is_the_smaller_one(self):
        a = StatsAccumulator(sample_cap=2).update([matched(1), matched(2, ack=2)])
        b = StatsAccumulator(sample_cap=10).update([matched(3, ack=3)])
        m = merge(a, b)
        assert m.sample_cap == 2 and not m.samples_exact and m.rt_count == 3

    def test_split_trace_equals_whole(self):
        data, _ = generate(WorkloadSpec(transactions=2000, seed=4, retransmit_prob=0.05, continue_prob=0.05))
        recs = records_of(data)
        parts = [StatsAccumulator().update(recs[k::4]) for k in range(4)]
        assert merge_all(parts) == StatsAccumulator().update(recs)


accumulators = st.lists(
    st.tuples(st.integers(0, 10**11), st.sampled_from([200, 304, 404]), st.sampled_from(HTTP_METHODS),
              st.booleans(), st.integers(0, 3)),
    max_size=15,
).map(lambda rows: StatsAccumulator().update(
    matched(rt, code, method, "/" * (1 + ack), ack) if ok else TransactionRecord.from_messages(request(ack=ack))
    for rt, code, method, ok, ack in rows))


@settings(max_examples=60)
@given(accumulators, accumulators, accumulators)
def test_merge_is_a_commutative_monoid(a, b, c):
    assert merge(a, b) == merge(b, a)
    assert merge(merge(a, b), c) == merge(a, merge(b, c))
    assert merge(a, StatsAccumulator()) == a


def test_columns_give_the_same_accumulator():
    data, _ = generate(WorkloadSpec(transactions=1500, seed=6, retransmit_prob=0.05, continue_prob=0.05,
                                    reorder_prob=0.05, url_length=Uniform(8, 2000)))
    decoded = decode_capture(data)
    cc = CompiledConsumer(1 << 12, None, None)
    emitted = concat_emitted([cc.feed(0, decoded, np.arange(len(decoded))), cc.close()])
    columnar = StatsAccumulator()
    add_to_stats(columnar, record_columns(emitted, [decoded]))
    assert columnar == StatsAccumulator().update(records_of(data))


class TestRender:
    def test_empty_is_headers_only(self):
        lines = render_report(StatsAccumulator()).decode().splitlines()
        assert lines[0].startswith("# log10 rt bins: 90 per decade")
        assert lines[1:] == ["codes,code,count", "methods,method,count", "ccdf,t_seconds,p",
                             "urllen,length,count", "summary,key,value"]

    def test_one_record(self, example_pair):
        acc = StatsAccumulator().update([TransactionRecord.from_messages(*example_pair)])
        body = render_report(acc).decode().splitlines()[1:]
        assert body == ["codes,code,count", "codes,200,1",
                        "methods,method,count", "methods,GET,1",
                        "ccdf,t_seconds,p", "ccdf,0.104130000,0.0",
                        "urllen,length,count", "urllen,9,1",
                        "summary,key,value", "summary,matched,1"]

    def test_methods_in_token_order(self):
        acc = StatsAccumulator().update([matched(1, method="PUT", ack=1), matched(1, method="GET", ack=2)])
        rows = [l for l in render_report(acc).decode().splitlines() if l.startswith("methods,")]
        assert rows[1:] == ["methods,GET,1", "methods,PUT,1"]

    def test_text(self, example_pair):
        text = render_report(StatsAccumulator().update([TransactionRecord.from_messages(*example_pair)]), "text")
        assert b"1 matched" in text and b"p50" in text
        assert render_report(StatsAccumulator(), "text").startswith(b"HTTP transactions: 0 matched")
        with pytest.raises(ValueError):
            render_report(StatsAccumulator(), "xml")

    def test_golden(self):
        data, _ = generate(WorkloadSpec(transactions=100, seed=100, retransmit_prob=0.05, continue_prob=0.05))
        report = render_report(StatsAccumulator().update(records_of(data)))
        assert report == GOLDEN.read_bytes()
