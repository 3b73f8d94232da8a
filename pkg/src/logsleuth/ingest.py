"""Parsing and sanitation of raw access-log lines (collection + examination)."""

from __future__ import annotations

import gzip
import hashlib
import heapq
import json
import pickle
import re
import tempfile
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .records import (
    DEFAULT_SCHEMA,
    METHODS,
    AccessLogRecord,
    LogSchema,
    RecordBatch,
    format_clf_timestamp,
    parse_clf_timestamp,
)

_METHOD_SET = frozenset(METHODS)
_HIT_TOKENS = {"HIT": "HIT", "hit": "HIT", "MISS": "MISS", "miss": "MISS"}


class ParseError(Exception):
    def __init__(self, line_no: int, reason: str, detail: str = ""):
        self.line_no = line_no
        self.reason = reason
        self.detail = detail
        super().__init__(f"line {line_no}: {reason}" + (f" ({detail})" if detail else ""))


def _compile_schema(schema: LogSchema) -> re.Pattern:
    parts = []
    for tok in schema.tokens:
        if tok == "timestamp":
            parts.append(r"\[([^\]]*)\]")
        elif tok == "request":
            parts.append(r'"([^"]*)"')
        else:
            parts.append(r"(\S+)")
    return re.compile(r"^\s*" + r"\s+".join(parts) + r"\s*$")


_PATTERN_CACHE: dict[tuple, re.Pattern] = {}


def _schema_pattern(schema: LogSchema) -> re.Pattern:
    pat = _PATTERN_CACHE.get(schema.tokens)
    if pat is None:
        pat = _PATTERN_CACHE[schema.tokens] = _compile_schema(schema)
    return pat


def parse_line(raw: str, schema: LogSchema = DEFAULT_SCHEMA, line_no: int = 0,
               _ts_cache: dict | None = None) -> AccessLogRecord:
    """Parse one log line into an AccessLogRecord.

    Raises ParseError (with a machine-readable ``reason``) for a wrong token
    count, malformed timestamp, or non-numeric status/bytes/delivery.  A
    ``-`` in an optional field takes the schema default and is flagged.
    """
    m = _schema_pattern(schema).match(raw)
    if m is None:
        raise ParseError(line_no, "field_count", raw[:120])
    values = dict(zip(schema.tokens, m.groups()))

    ts_text = values["timestamp"]
    if _ts_cache is not None and ts_text in _ts_cache:
        epoch = _ts_cache[ts_text]
    else:
        try:
            epoch = parse_clf_timestamp(ts_text)
        except (ValueError, IndexError):
            raise ParseError(line_no, "bad_timestamp", ts_text) from None
        if _ts_cache is not None:
            _ts_cache[ts_text] = epoch

    request = values.get("request", "")
    req_parts = request.split(" ")
    if len(req_parts) < 2 or not req_parts[1]:
        raise ParseError(line_no, "bad_request", request)
    method = req_parts[0] if req_parts[0] in _METHOD_SET else "OTHER"
    path = req_parts[1]
    if not path.startswith("/"):
        raise ParseError(line_no, "bad_path", path)

    flags: list[str] = []
    defaults = schema.defaults

    def text_field(name: str) -> str:
        v = values[name]
        if v == "-":
            flags.append(f"missing_{name}")
            return defaults[name]
        return v

    def int_field(name: str, reason: str) -> int:
        v = values[name]
        if v == "-":
            flags.append(f"missing_{name}")
            return int(defaults[name])
        try:
            n = int(v)
        except ValueError:
            raise ParseError(line_no, reason, v) from None
        if n < 0:
            raise ParseError(line_no, reason, v)
        return n

    status_text = values["status_code"]
    try:
        status = int(status_text)
    except ValueError:
        raise ParseError(line_no, "bad_status", status_text) from None
    if not 100 <= status <= 799:
        raise ParseError(line_no, "bad_status", status_text)

    hit_raw = values["cache_hit"]
    if hit_raw == "-":
        flags.append("missing_cache_hit")
        cache_hit = defaults["cache_hit"]
    else:
        cache_hit = _HIT_TOKENS.get(hit_raw, "UNKNOWN")

    return AccessLogRecord(
        client_ip=values["client_ip"],
        timestamp=epoch,
        method=method,
        status_code=status,
        bytes=int_field("bytes", "bad_bytes"),
        delivery_time_ms=int_field("delivery_time_ms", "bad_delivery"),
        agent_type=text_field("agent_type"),
        service_type=text_field("service_type"),
        cache_hit=cache_hit,
        node_id=text_field("node_id"),
        offering_id=text_field("offering_id"),
        content_type=text_field("content_type"),
        content_path=path,
        flags=tuple(flags),
    )


def format_line(r: AccessLogRecord) -> str:
    """Canonical emitter: inverse of parse_line under the default schema."""
    return (f"{r.client_ip} - - [{format_clf_timestamp(r.timestamp)}] "
            f'"{r.method} {r.content_path} HTTP/1.1" {r.status_code} {r.bytes} '
            f"{r.delivery_time_ms} {r.agent_type} {r.service_type} {r.cache_hit} "
            f"{r.node_id} {r.offering_id} {r.content_type}")


@dataclass
class IngestStats:
    """Conservation ledger: lines_read = lines_parsed + lines_rejected.

    ``lines_parsed`` counts records that survived both parsing and
    sanitation; every drop (parse failure or sanitize rule) adds to
    ``lines_rejected`` under its reason.
    """

    lines_read: int = 0
    lines_parsed: int = 0
    lines_rejected: int = 0
    rejection_reasons: dict[str, int] = field(default_factory=dict)

    def reject(self, reason: str, n: int = 1) -> None:
        self.lines_rejected += n
        self.rejection_reasons[reason] = self.rejection_reasons.get(reason, 0) + n

    def to_json_dict(self) -> dict:
        return {
            "lines_read": self.lines_read,
            "lines_parsed": self.lines_parsed,
            "lines_rejected": self.lines_rejected,
            "rejection_reasons": dict(sorted(self.rejection_reasons.items())),
        }


def _record_key(r: AccessLogRecord) -> tuple:
    return (r.client_ip, r.timestamp, r.method, r.status_code, r.bytes,
            r.delivery_time_ms, r.agent_type, r.service_type, r.cache_hit,
            r.node_id, r.offering_id, r.content_path, r.content_type)


def sanitize(records: Iterable[AccessLogRecord],
             stats: IngestStats | None = None,
             record_budget: int | None = None) -> tuple[list[AccessLogRecord], IngestStats]:
    """Drop unusable records, deduplicate, and order the stream by time.

    Drops records with an empty node or client IP; removes exact duplicates
    (first occurrence wins); finally applies a stable sort on timestamp.
    When ``record_budget`` is set and exceeded, sorting spills sorted runs to
    temporary files and merges them.  Drops are counted, never raised.
    """
    own_stats = stats is None
    if stats is None:
        stats = IngestStats()
    seen: set[int] = set()
    kept: list[AccessLogRecord] = []
    for r in records:
        if own_stats:
            stats.lines_read += 1
        if not r.client_ip or r.client_ip == "-":
            stats.reject("missing_ip")
            continue
        if not r.node_id:
            stats.reject("missing_node")
            continue
        digest = int.from_bytes(
            hashlib.blake2b(repr(_record_key(r)).encode(), digest_size=16).digest(), "big")
        if digest in seen:
            stats.reject("duplicate")
            continue
        seen.add(digest)
        kept.append(r)
    stats.lines_parsed += len(kept)

    if record_budget is not None and len(kept) > record_budget:
        kept = _external_sort(kept, record_budget)
    else:
        kept.sort(key=lambda r: r.timestamp)
    return kept, stats


def _external_sort(records: list[AccessLogRecord], budget: int) -> list[AccessLogRecord]:
    runs: list[IO[bytes]] = []
    for start in range(0, len(records), budget):
        chunk = sorted(records[start:start + budget], key=lambda r: r.timestamp)
        tmp = tempfile.TemporaryFile()
        for r in chunk:
            pickle.dump(r, tmp)
        tmp.seek(0)
        runs.append(tmp)

    def _drain(fh: IO[bytes]) -> Iterator[AccessLogRecord]:
        while True:
            try:
                yield pickle.load(fh)
            except EOFError:
                return

    # Stable across runs: earlier chunks win ties via the run index.
    merged = list(heapq.merge(*[_drain(fh) for fh in runs],
                              key=lambda r: r.timestamp))
    for fh in runs:
        fh.close()
    return merged


def open_log(path: str) -> IO[str]:
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def parse_lines(lines: Iterable[str], schema: LogSchema = DEFAULT_SCHEMA,
                stats: IngestStats | None = None) -> Iterator[AccessLogRecord]:
    """Stream parser: yields records, counts failures, never aborts."""
    if stats is None:
        stats = IngestStats()
    ts_cache: dict[str, int] = {}
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        stats.lines_read += 1
        try:
            yield parse_line(line, schema, line_no=i, _ts_cache=ts_cache)
        except ParseError as e:
            stats.reject(e.reason)


def ingest_file(path: str, schema: LogSchema = DEFAULT_SCHEMA,
                record_budget: int | None = None) -> tuple[list[AccessLogRecord], IngestStats]:
    """Parse + sanitize a log file into a time-ordered record list."""
    stats = IngestStats()
    with open_log(path) as fh:
        parsed = parse_lines(fh, schema, stats)
        records, stats = sanitize(parsed, stats=stats, record_budget=record_budget)
    return records, stats


def ingest_file_to_batch(path: str, schema: LogSchema = DEFAULT_SCHEMA) -> tuple[RecordBatch, IngestStats]:
    records, stats = ingest_file(path, schema)
    return RecordBatch.from_records(records), stats


def write_ndjson(records: Iterable[AccessLogRecord], fh: IO[str]) -> int:
    n = 0
    for r in records:
        fh.write(json.dumps(r.to_json_dict(), separators=(",", ":")))
        fh.write("\n")
        n += 1
    return n


def read_ndjson(fh: IO[str]) -> Iterator[AccessLogRecord]:
    for line in fh:
        line = line.strip()
        if line:
            yield AccessLogRecord.from_json_dict(json.loads(line))
