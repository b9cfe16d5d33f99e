"""``httpmatch``: pair HTTP requests and responses in PCAP files.

Each input file is one capture source with its own feeder and its own set of
consumers, drained at end of file. With ``--chunked`` the inputs are treated
as consecutive pieces of a single capture instead, so transactions spanning
a file boundary still pair up.
"""

from __future__ import annotations

import argparse
import mmap
import multiprocessing
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .columns import DecodedCapture, decode_capture
from .engine import (
    DRAIN_POSITION,
    CompiledConsumer,
    Emitted,
    add_to_stats,
    concat_emitted,
    materialize,
    record_columns,
)
from .feeder import DEFAULT_QUEUE_CAPACITY, FeederConfig, OverflowPolicy, dispatch_columns, run_feeder
from .matcher import DEFAULT_TABLE_SIZE, Consumer, GcPolicy, MatchTable, TableCounters
from .packet import MessageKind, PacketView, PcapError, classify_http, parse_frame, read_pcap
from .records import format_record
from .stats import DEFAULT_SAMPLE_CAP, StatsAccumulator, merge_all, render_report

EXIT_OK, EXIT_IO, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    inputs: list
    consumers: int = 1
    table_size: int = DEFAULT_TABLE_SIZE
    gc_timeout: float = 60.0
    sweep_period: float = 1.0
    records: Optional[str] = None
    report: Optional[str] = None
    report_format: str = "csv"
    dedup: bool = False
    sort_records: bool = False
    chunked: bool = False
    sample_cap: int = DEFAULT_SAMPLE_CAP
    jobs: int = 1
    engine: str = "compiled"
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY

    def validate(self) -> None:
        if not self.inputs:
            raise ConfigError("at least one input is required")
        if self.consumers < 1:
            raise ConfigError("--consumers must be >= 1")
        if self.table_size < 1:
            raise ConfigError("--table-size must be >= 1")
        if self.gc_timeout <= 0 or self.sweep_period <= 0:
            raise ConfigError("--gc-timeout and --sweep-period must be positive")
        if self.report_format not in ("csv", "text"):
            raise ConfigError("--report-format must be csv or text")
        if self.sample_cap < 0:
            raise ConfigError("--sample-cap must be >= 0")
        if self.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if self.engine not in ("compiled", "python"):
            raise ConfigError("--engine must be compiled or python")

    @property
    def policy(self) -> GcPolicy:
        return GcPolicy.from_seconds(self.gc_timeout, self.sweep_period)


@dataclass
class SourceSummary:
    name: str
    frames: int = 0
    bytes: int = 0
    http: int = 0
    rejected: int = 0
    packets: list = field(default_factory=list)       # per consumer
    transactions: list = field(default_factory=list)  # per consumer
    counters: TableCounters = field(default_factory=TableCounters)
    classified: int = 0
    elapsed: float = 0.0

    def conserved(self) -> bool:
        c = self.counters
        return self.classified == 2 * c.matched + c.unmatched + c.dropped

    def line(self) -> str:
        tp = sum(self.packets) or 1
        tt = sum(self.transactions) or 1
        shares = " ".join(f"[{k}] {100 * p / tp:.2f}% pkts {100 * t / tt:.2f}% tx"
                          for k, (p, t) in enumerate(zip(self.packets, self.transactions)))
        secs = max(self.elapsed, 1e-9)
        c = self.counters
        return (f"{self.name}: {self.frames} packets, {self.http} HTTP messages, {c.matched} transactions, "
                f"{c.unmatched} unmatched, {c.dropped + self.rejected} dropped | {shares} | "
                f"{self.frames / secs:,.0f} pps {self.bytes * 8 / secs / 1e9:.3f} Gbps "
                f"({self.http / secs:,.0f} HTTP msgs/s) in {self.elapsed:.3f} s")


@dataclass
class RunResult:
    status: int
    sources: list = field(default_factory=list)
    stats: Optional[StatsAccumulator] = None
    error: Optional[str] = None

    def summary(self) -> str:
        lines = [s.line() for s in self.sources]
        if self.error:
            lines.append(f"error: {self.error}")
        return "\n".join(lines)


def _open_capture(path: str):
    with open(path, "rb") as fh:
        size = os.fstat(fh.fileno()).st_size
        if size == 0:
            return b""
        return mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)


# -- compiled engine -------------------------------------------------------------------------

@dataclass
class _ShareResult:
    counters: TableCounters
    classified: int
    transactions: int
    batch: np.ndarray
    position: np.ndarray
    first_ns: np.ndarray
    match_number: np.ndarray
    key_hi: np.ndarray
    key_lo: np.ndarray
    lines: Optional[list]
    stats: StatsAccumulator


_WORK: dict = {}


def _run_share(k: int) -> _ShareResult:
    """Consumer ``k`` over every batch of the current source."""
    cfg: RunConfig = _WORK["cfg"]
    captures: list[DecodedCapture] = _WORK["captures"]
    rows = _WORK["rows"]
    consumer = CompiledConsumer(cfg.table_size, policy=cfg.policy)
    parts, batches = [], []
    for b, capture in enumerate(captures):
        e = consumer.feed(b, capture, rows[b][k])
        parts.append(e)
        batches.append(np.full(len(e), b, dtype=np.int64))
    e = consumer.close()
    parts.append(e)
    batches.append(np.full(len(e), len(captures) - 1, dtype=np.int64))
    emitted = concat_emitted(parts)
    batch = np.concatenate(batches)
    cols = record_columns(emitted, captures)
    acc = StatsAccumulator(sample_cap=cfg.sample_cap)
    add_to_stats(acc, cols)
    hi, lo = cols.key_words()
    keep = np.ones(len(emitted), dtype=bool)
    if cfg.dedup:
        keep = _first_occurrence(hi, lo)
    lines = None
    if cfg.records is not None:
        kept = Emitted(*(a[keep] for a in emitted))
        lines = [format_record(r) for r in materialize(kept, captures)]
    return _ShareResult(consumer.counters, consumer.classified, consumer.transactions_completed,
                        batch[keep], emitted.position[keep], cols.first_ns[keep], cols.match_number[keep],
                        hi[keep], lo[keep], lines, acc)


def _first_occurrence(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    keys = np.empty(hi.size, dtype=[("hi", np.uint64), ("lo", np.uint64)])
    keys["hi"], keys["lo"] = hi, lo
    _, first = np.unique(keys, return_index=True)
    keep = np.zeros(hi.size, dtype=bool)
    keep[first] = True
    return keep


def _process_compiled(names: Sequence[str], cfg: RunConfig, out, summary: SourceSummary) -> StatsAccumulator:
    start = time.perf_counter()
    captures = []
    try:
        for name in names:
            captures.append(decode_capture(_open_capture(name)))
    finally:
        for c in captures:
            summary.frames += c.counts.frames
            summary.bytes += c.counts.bytes
            summary.http += c.counts.http
    rows = []
    for c in captures:
        idx = dispatch_columns(c.core, cfg.consumers)
        summary.rejected += int(np.count_nonzero(idx < 0))
        order = np.argsort(idx, kind="stable")
        bounds = np.searchsorted(idx[order], np.arange(cfg.consumers + 1))
        rows.append([order[bounds[k]:bounds[k + 1]] for k in range(cfg.consumers)])
    _WORK.update(cfg=cfg, captures=captures, rows=rows)
    try:
        jobs = min(cfg.jobs, cfg.consumers)
        if jobs > 1:
            with multiprocessing.get_context("fork").Pool(jobs) as pool:
                shares = pool.map(_run_share, range(cfg.consumers))
        else:
            shares = [_run_share(k) for k in range(cfg.consumers)]
    finally:
        _WORK.clear()

    for s in shares:
        summary.packets.append(s.classified)
        summary.transactions.append(s.transactions)
        summary.classified += s.classified
        for name in vars(summary.counters):
            setattr(summary.counters, name, getattr(summary.counters, name) + getattr(s.counters, name))

    if out is not None:
        consumer = np.concatenate([np.full(s.batch.size, k, dtype=np.int64) for k, s in enumerate(shares)])
        batch = np.concatenate([s.batch for s in shares])
        position = np.concatenate([s.position for s in shares])
        lines = [line for s in shares for line in s.lines]
        if cfg.sort_records:
            first = np.concatenate([s.first_ns for s in shares])
            number = np.concatenate([s.match_number for s in shares])
            order = sorted(range(len(lines)), key=lambda i: (first[i], number[i], lines[i]))
        else:
            # interleave consumers by the capture position that triggered each record
            drained = position == DRAIN_POSITION
            order = np.lexsort((consumer, position, drained, batch)).tolist()
        out.writelines(lines[i] for i in order)
        out.flush()
    summary.elapsed = time.perf_counter() - start
    return merge_all((s.stats for s in shares), sample_cap=cfg.sample_cap)


# -- pure-python engine ----------------------------------------------------------------------

class _TaggedConsumer:
    """A consumer that labels each record with the capture position that triggered it."""

    def __init__(self, cfg: RunConfig, tags: dict, last_batch: int):
        self.inner = Consumer(MatchTable(cfg.table_size), cfg.policy, on_record=self._keep)
        self.tags = tags
        self.last_batch = last_batch
        self.where = (0, 0, 0)
        self.records: list = []
        self.where_of: list = []

    def _keep(self, rec):
        self.records.append(rec)
        self.where_of.append(self.where)

    def consume(self, msg):
        batch, row = self.tags.pop(id(msg))
        self.where = (batch, 0, row)
        self.inner.consume(msg)

    def close(self):
        self.where = (self.last_batch, 1, DRAIN_POSITION)
        self.inner.close()

    @property
    def transactions_completed(self) -> int:
        return self.inner.transactions_completed


def _process_python(names: Sequence[str], cfg: RunConfig, out, summary: SourceSummary) -> StatsAccumulator:
    start = time.perf_counter()
    tags: dict = {}
    consumers = [_TaggedConsumer(cfg, tags, len(names) - 1) for _ in range(cfg.consumers)]

    def messages():
        for b, name in enumerate(names):
            row = 0
            for ts, frame in read_pcap(_open_capture(name)):
                summary.frames += 1
                summary.bytes += len(frame)
                pkt = parse_frame(frame, ts)
                if isinstance(pkt, PacketView):
                    msg = classify_http(pkt)
                    if msg is not None:
                        if msg.kind is not MessageKind.REQUEST or pkt.ack_valid:
                            tags[id(msg)] = (b, row)  # rejected requests never reach a consumer
                        row += 1
                        yield msg

    feeder_cfg = FeederConfig(cfg.consumers, cfg.queue_capacity, OverflowPolicy.BLOCK)
    fstats = run_feeder(messages(), feeder_cfg, consumers)
    summary.http = fstats.offered + fstats.rejected
    summary.rejected = fstats.rejected
    for c, share in zip(consumers, fstats.consumers):
        summary.packets.append(share.packets_dispatched)
        summary.transactions.append(share.transactions_completed)
        summary.classified += c.inner.classified
        for name in vars(summary.counters):
            setattr(summary.counters, name, getattr(summary.counters, name) + getattr(c.inner.table.counters, name))
    acc = StatsAccumulator(sample_cap=cfg.sample_cap)
    for c in consumers:
        acc.update(c.records)
    if out is not None:
        tagged = []
        for k, c in enumerate(consumers):
            records, where_of = c.records, c.where_of
            if cfg.dedup:
                # equal keys always share a consumer, so per-consumer dedup is global
                seen, keep = set(), []
                for i, rec in enumerate(records):
                    if rec.dedup_key not in seen:
                        seen.add(rec.dedup_key)
                        keep.append(i)
                records, where_of = [records[i] for i in keep], [where_of[i] for i in keep]
            tagged.extend((where + (k,), rec, format_record(rec)) for where, rec in zip(where_of, records))
        if cfg.sort_records:
            tagged.sort(key=lambda t: ((t[1].request_ts or t[1].response_ts).ns, t[1].match_number, t[2]))
        else:
            tagged.sort(key=lambda t: t[0])
        out.writelines(line for _, _, line in tagged)
        out.flush()
    summary.elapsed = time.perf_counter() - start
    return acc


def run(cfg: RunConfig) -> RunResult:
    try:
        cfg.validate()
    except ConfigError as exc:
        return RunResult(EXIT_CONFIG, error=str(exc))
    groups = [list(cfg.inputs)] if cfg.chunked else [[p] for p in cfg.inputs]
    process = _process_compiled if cfg.engine == "compiled" else _process_python
    result = RunResult(EXIT_OK)
    accs = []
    out = None
    try:
        if cfg.records is not None:
            out = sys.stdout if cfg.records == "-" else open(cfg.records, "w", encoding="utf-8", newline="")
        for names in groups:
            summary = SourceSummary("+".join(names))
            result.sources.append(summary)
            accs.append(process(names, cfg, out, summary))
    except (OSError, PcapError) as exc:
        result.status = EXIT_IO
        result.error = f"{type(exc).__name__}: {exc}"
    finally:
        if out is not None and out is not sys.stdout:
            out.close()
    result.stats = merge_all(accs, sample_cap=cfg.sample_cap)
    if cfg.report is not None:
        try:
            data = render_report(result.stats, cfg.report_format)
            if cfg.report == "-":
                sys.stdout.write(data.decode("utf-8"))
            else:
                with open(cfg.report, "wb") as fh:
                    fh.write(data)
        except OSError as exc:
            result.status = EXIT_IO
            result.error = f"{type(exc).__name__}: {exc}"
    return result


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="httpmatch", description=__doc__.splitlines()[0])
    ap.add_argument("--input", "-i", nargs="+", action="extend", required=True, metavar="PATH",
                    help="PCAP file(s); each is a separate capture source unless --chunked")
    ap.add_argument("--consumers", "-n", type=int, default=1, help="consumers per source (default 1)")
    ap.add_argument("--table-size", type=int, default=DEFAULT_TABLE_SIZE, help="match table cells per consumer")
    ap.add_argument("--gc-timeout", type=float, default=60.0, help="idle seconds of capture time before eviction")
    ap.add_argument("--sweep-period", type=float, default=1.0, help="capture seconds between GC sweeps")
    ap.add_argument("--records", metavar="PATH", help="write transaction records here ('-' for stdout)")
    ap.add_argument("--report", metavar="PATH", help="write the statistics report here ('-' for stdout)")
    ap.add_argument("--report-format", choices=("csv", "text"), default="csv")
    ap.add_argument("--dedup", action="store_true", help="drop repeated (4-tuple, match number) records")
    ap.add_argument("--sort-records", action="store_true", help="sort records by first timestamp")
    ap.add_argument("--chunked", action="store_true", help="treat all inputs as one capture split into files")
    ap.add_argument("--sample-cap", type=int, default=DEFAULT_SAMPLE_CAP,
                    help="exact response-time samples kept before falling back to the histogram")
    ap.add_argument("--jobs", "-j", type=int, default=1, help="worker processes for the consumers")
    ap.add_argument("--engine", choices=("compiled", "python"), default="compiled")
    ap.add_argument("--quiet", "-q", action="store_true", help="no summary on stderr")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(
        inputs=args.input, consumers=args.consumers, table_size=args.table_size, gc_timeout=args.gc_timeout,
        sweep_period=args.sweep_period, records=args.records, report=args.report,
        report_format=args.report_format, dedup=args.dedup, sort_records=args.sort_records,
        chunked=args.chunked, sample_cap=args.sample_cap, jobs=args.jobs, engine=args.engine,
    )
    result = run(cfg)
    if result.status == EXIT_CONFIG:
        print(f"httpmatch: {result.error}", file=sys.stderr)
    elif not args.quiet or result.error:
        print(result.summary(), file=sys.stderr)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
