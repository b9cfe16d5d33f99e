"""Aggregate QoS statistics over transaction records.

A :class:`StatsAccumulator` counts response codes, methods and URL lengths,
keeps response times both as exact samples (up to a cap) and in a fixed
log-spaced histogram, and merges with other accumulators built under the
same configuration. Response times are handled in integer nanoseconds.
"""

from __future__ import annotations

import bisect
import io
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .matcher import TransactionRecord
from .packet import HTTP_METHODS, NANOS_PER_SECOND, ip_from_str

DEFAULT_SAMPLE_CAP = 10_000_000


class BinningMismatch(ValueError):
    pass


class EmptyAccumulator(ValueError):
    pass


@dataclass(frozen=True)
class Binning:
    """Log-spaced response-time bins between ``10**low_exp`` and ``10**high_exp`` ns.

    Bin 0 collects values below the first edge and the last bin values at or
    above the last edge, so there are ``decades * per_decade + 2`` bins.
    """

    per_decade: int = 90
    low_exp: int = 3    # 1 us
    high_exp: int = 12  # 1000 s

    @property
    def edges(self) -> np.ndarray:
        k = np.arange((self.high_exp - self.low_exp) * self.per_decade + 1)
        return 10.0 ** (self.low_exp + k / self.per_decade)

    @property
    def n_bins(self) -> int:
        return (self.high_exp - self.low_exp) * self.per_decade + 2

    def describe(self) -> str:
        return (f"log10 rt bins: {self.per_decade} per decade, "
                f"1e{self.low_exp - 9:+03d}..1e{self.high_exp - 9:+03d} s")


_EDGE_CACHE: dict = {}


def _edges(binning: Binning) -> tuple[np.ndarray, list]:
    cached = _EDGE_CACHE.get(binning)
    if cached is None:
        e = binning.edges
        cached = _EDGE_CACHE[binning] = (e, e.tolist())
    return cached


def dedup_key_words(client_ip: int, client_port: int, server_ip: int, server_port: int, number: int):
    """Pack a (4-tuple, match number) key into two 64-bit words."""
    return (client_ip << 32) | server_ip, (client_port << 48) | (server_port << 32) | number


_METHOD_RANK = {m: i for i, m in enumerate(HTTP_METHODS)}


class StatsAccumulator:
    def __init__(self, binning: Binning = Binning(), sample_cap: int = DEFAULT_SAMPLE_CAP):
        if sample_cap < 0:
            raise ValueError("sample_cap must be >= 0")
        self.binning = binning
        self.sample_cap = sample_cap
        self.code_counts: Counter = Counter()
        self.method_counts: Counter = Counter()
        self.url_len_counts: Counter = Counter()
        self.matched = 0
        self.unmatched = 0
        self.rt_histogram = np.zeros(binning.n_bins, dtype=np.int64)
        self.rt_count = 0
        self._samples: Optional[list] = []  # list of int64 arrays; None once the cap is exceeded
        self._pending: list = []            # python ints not yet folded into _samples
        self._keys: list = []               # (hi, lo) uint64 array pairs
        self._pending_keys: list = []

    # -- input ---------------------------------------------------------------

    def record_transaction(self, rec: TransactionRecord) -> None:
        if rec.method is not None:
            self.method_counts[rec.method] += 1
        if rec.uri is not None:
            self.url_len_counts[len(rec.uri)] += 1
        self._pending_keys.append(dedup_key_words(ip_from_str(rec.client_ip), rec.client_port,
                                                  ip_from_str(rec.server_ip), rec.server_port, rec.match_number))
        if not rec.matched:
            self.unmatched += 1
            return
        self.matched += 1
        self.code_counts[rec.response_code] += 1
        rt = rec.response_time
        edges = _edges(self.binning)[1]
        self.rt_histogram[bisect.bisect_right(edges, rt)] += 1
        self.rt_count += 1
        if self._samples is not None:
            self._pending.append(rt)
            if self.rt_count > self.sample_cap:
                self._samples = None
                self._pending = []

    def add_columns(self, *, matched: np.ndarray, code: np.ndarray, method: np.ndarray, url_len: np.ndarray,
                    rt_ns: np.ndarray, key_hi: np.ndarray, key_lo: np.ndarray) -> None:
        """Bulk form of :meth:`record_transaction`.

        ``method`` holds indices into ``HTTP_METHODS`` and ``url_len`` stored
        URI lengths, both -1 where the record has no request side. ``code``
        and ``rt_ns`` are only read where ``matched`` is true.
        """
        matched = np.asarray(matched, dtype=bool)
        n_matched = int(matched.sum())
        self.matched += n_matched
        self.unmatched += int(matched.size - n_matched)
        for value, count in zip(*np.unique(np.asarray(code)[matched], return_counts=True)):
            self.code_counts[int(value)] += int(count)
        method = np.asarray(method)
        for value, count in zip(*np.unique(method[method >= 0], return_counts=True)):
            self.method_counts[HTTP_METHODS[value]] += int(count)
        url_len = np.asarray(url_len)
        for value, count in zip(*np.unique(url_len[url_len >= 0], return_counts=True)):
            self.url_len_counts[int(value)] += int(count)
        rt = np.asarray(rt_ns, dtype=np.int64)[matched]
        idx = np.searchsorted(_edges(self.binning)[0], rt, side="right")
        self.rt_histogram += np.bincount(idx, minlength=self.binning.n_bins)
        self._add_samples(rt)
        self._keys.append((np.asarray(key_hi, dtype=np.uint64), np.asarray(key_lo, dtype=np.uint64)))

    def _add_samples(self, rt: np.ndarray) -> None:
        self.rt_count += rt.size
        if self._samples is None:
            return
        if self.rt_count > self.sample_cap:
            self._samples = None
            self._pending = []
            return
        self._samples.append(rt)

    def update(self, records: Iterable[TransactionRecord]) -> "StatsAccumulator":
        for rec in records:
            self.record_transaction(rec)
        return self

    # -- derived values ------------------------------------------------------

    def _flush(self) -> None:
        if self._pending:
            self._samples.append(np.asarray(self._pending, dtype=np.int64))
            self._pending = []
        if self._pending_keys:
            words = np.asarray(self._pending_keys, dtype=np.uint64).reshape(-1, 2)
            self._keys.append((words[:, 0].copy(), words[:, 1].copy()))
            self._pending_keys = []

    @property
    def samples_exact(self) -> bool:
        return self._samples is not None

    def rt_samples(self) -> np.ndarray:
        """All response-time samples in ns, sorted. Empty once the cap was exceeded."""
        if self._samples is None:
            return np.empty(0, dtype=np.int64)
        self._flush()
        out = np.sort(np.concatenate(self._samples)) if self._samples else np.empty(0, dtype=np.int64)
        self._samples = [out]
        return out

    def _key_words(self) -> tuple[np.ndarray, np.ndarray]:
        self._flush()
        if not self._keys:
            z = np.empty(0, dtype=np.uint64)
            return z, z
        return np.concatenate([k[0] for k in self._keys]), np.concatenate([k[1] for k in self._keys])

    @property
    def duplicate_suspects(self) -> int:
        """Records that :func:`matcher.dedup_records` would drop."""
        hi, lo = self._key_words()
        if hi.size == 0:
            return 0
        keys = np.empty(hi.size, dtype=[("hi", np.uint64), ("lo", np.uint64)])
        keys["hi"], keys["lo"] = hi, lo
        return int(hi.size - np.unique(keys).size)

    def is_empty(self) -> bool:
        return self.matched == 0 and self.unmatched == 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, StatsAccumulator):
            return NotImplemented
        return (self.binning == other.binning
                and self.code_counts == other.code_counts
                and self.method_counts == other.method_counts
                and self.url_len_counts == other.url_len_counts
                and self.matched == other.matched
                and self.unmatched == other.unmatched
                and self.rt_count == other.rt_count
                and np.array_equal(self.rt_histogram, other.rt_histogram)
                and self.samples_exact == other.samples_exact
                and np.array_equal(self.rt_samples(), other.rt_samples())
                and self.duplicate_suspects == other.duplicate_suspects)

    __hash__ = None

    def __repr__(self):
        return (f"StatsAccumulator(matched={self.matched}, unmatched={self.unmatched}, "
                f"codes={dict(self.code_counts)}, rt_count={self.rt_count})")


def record_transaction(acc: StatsAccumulator, rec: TransactionRecord) -> None:
    acc.record_transaction(rec)


def merge(a: StatsAccumulator, b: StatsAccumulator) -> StatsAccumulator:
    """Sum of two accumulators. The sample cap of the result is the smaller one."""
    if a.binning != b.binning:
        raise BinningMismatch(f"{a.binning.describe()} vs {b.binning.describe()}")
    out = StatsAccumulator(a.binning, min(a.sample_cap, b.sample_cap))
    for src in (a, b):
        out.code_counts.update(src.code_counts)
        out.method_counts.update(src.method_counts)
        out.url_len_counts.update(src.url_len_counts)
        out.matched += src.matched
        out.unmatched += src.unmatched
        out.rt_histogram += src.rt_histogram
        out._keys.extend([src._key_words()])
    out.rt_count = a.rt_count + b.rt_count
    if a.samples_exact and b.samples_exact and out.rt_count <= out.sample_cap:
        out._samples = [a.rt_samples(), b.rt_samples()]
    else:
        out._samples = None
    return out


def merge_all(accs: Iterable[StatsAccumulator], binning: Binning = Binning(),
              sample_cap: int = DEFAULT_SAMPLE_CAP) -> StatsAccumulator:
    out = StatsAccumulator(binning, sample_cap)
    for acc in accs:
        out = merge(out, acc)
    return out


def ccdf(acc: StatsAccumulator) -> list[tuple[float, float]]:
    """Points ``(t seconds, P(RT > t))`` of the response-time CCDF.

    From exact samples there is one point per distinct sample value. Past
    the sample cap the points sit on histogram bin upper edges, which
    overestimates P(RT > t) by at most one bin's mass.
    """
    n = acc.rt_count
    if n == 0:
        raise EmptyAccumulator("no response-time samples")
    if acc.samples_exact:
        values, counts = np.unique(acc.rt_samples(), return_counts=True)
        above = n - np.cumsum(counts)
        return [(v / NANOS_PER_SECOND, a / n) for v, a in zip(values.tolist(), above.tolist())]
    hist = acc.rt_histogram
    edges = _edges(acc.binning)[0]
    above = n - np.cumsum(hist)
    points = []
    for k in np.flatnonzero(hist).tolist():
        upper = edges[k] if k < edges.size else np.inf
        points.append((float(upper) / NANOS_PER_SECOND, int(above[k]) / n))
    return points


def ccdf_at(acc: StatsAccumulator, t_seconds: float) -> float:
    """P(RT > t), a right-continuous step function equal to 1 before the first point."""
    p = 1.0
    for t, q in ccdf(acc):
        if t > t_seconds:
            break
        p = q
    return p


def _fmt_seconds(t: float) -> str:
    return f"{t:.9f}" if np.isfinite(t) else "inf"


def _rows(acc: StatsAccumulator):
    methods = sorted(acc.method_counts, key=lambda m: (_METHOD_RANK.get(m, len(_METHOD_RANK)), m))
    summary = [(k, v) for k, v in (("matched", acc.matched), ("unmatched", acc.unmatched),
                                   ("duplicate_suspects", acc.duplicate_suspects)) if v]
    return {
        "codes": (("code", "count"), [(c, acc.code_counts[c]) for c in sorted(acc.code_counts)]),
        "methods": (("method", "count"), [(m, acc.method_counts[m]) for m in methods]),
        "ccdf": (("t_seconds", "p"),
                 [(_fmt_seconds(t), repr(p)) for t, p in ccdf(acc)] if acc.rt_count else []),
        "urllen": (("length", "count"), [(n, acc.url_len_counts[n]) for n in sorted(acc.url_len_counts)]),
        "summary": (("key", "value"), summary),
    }


def render_report(acc: StatsAccumulator, format: str = "csv") -> bytes:
    """Render the report as CSV (sectioned, one header row per section) or text."""
    out = io.StringIO()
    sections = _rows(acc)
    exact = "exact" if acc.samples_exact else "histogram"
    if format == "csv":
        out.write(f"# {acc.binning.describe()}; sample_cap={acc.sample_cap}; ccdf={exact}\n")
        for name, (header, rows) in sections.items():
            out.write(f"{name},{header[0]},{header[1]}\n")
            for a, b in rows:
                out.write(f"{name},{a},{b}\n")
    elif format == "text":
        out.write(f"HTTP transactions: {acc.matched} matched, {acc.unmatched} unmatched, "
                  f"{acc.duplicate_suspects} duplicate suspects\n")
        for title, key in (("Response codes", "codes"), ("Methods", "methods")):
            rows = sections[key][1]
            total = sum(c for _, c in rows) or 1
            out.write(f"\n{title}\n")
            for label, count in rows:
                out.write(f"  {label!s:<10} {count:>12}  {100.0 * count / total:6.2f}%\n")
        if acc.rt_count:
            out.write(f"\nResponse time ({acc.rt_count} samples, {exact})\n")
            for q in (0.5, 0.9, 0.99, 0.999):
                label = f"p{100 * q:g}"
                out.write(f"  {label:<10} {_fmt_seconds(quantile(acc, q)):>16} s\n")
        lengths = sections["urllen"][1]
        if lengths:
            total = sum(c for _, c in lengths)
            mean = sum(n * c for n, c in lengths) / total
            out.write(f"\nURL length: mean {mean:.1f}, max {lengths[-1][0]}\n")
        out.write(f"\n{acc.binning.describe()}\n")
    else:
        raise ValueError(f"unknown report format {format!r}")
    return out.getvalue().encode("utf-8")


def quantile(acc: StatsAccumulator, q: float) -> float:
    """Response-time quantile in seconds (lower empirical quantile)."""
    if acc.rt_count == 0:
        raise EmptyAccumulator("no response-time samples")
    if acc.samples_exact:
        s = acc.rt_samples()
        return int(s[min(int(np.ceil(q * s.size)) - 1, s.size - 1) if q > 0 else 0]) / NANOS_PER_SECOND
    cum = np.cumsum(acc.rt_histogram)
    k = int(np.searchsorted(cum, q * acc.rt_count))
    edges = _edges(acc.binning)[0]
    return float(edges[min(k, edges.size - 1)]) / NANOS_PER_SECOND
