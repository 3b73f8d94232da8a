"""Access-log record model, line schema, and the columnar batch used downstream."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

METHODS = ("GET", "POST", "PUT", "DELETE", "PATCH", "OTHER")
CACHE_STATES = ("HIT", "MISS", "UNKNOWN")

_MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun",
           "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")
_MONTH_NUM = {m: i + 1 for i, m in enumerate(_MONTHS)}


def days_from_civil(y: int, m: int, d: int) -> int:
    """Days since 1970-01-01 for a proleptic Gregorian date (integer math)."""
    y -= m <= 2
    era = (y if y >= 0 else y - 399) // 400
    yoe = y - era * 400
    doy = (153 * (m + (-3 if m > 2 else 9)) + 2) // 5 + d - 1
    doe = yoe * 365 + yoe // 4 - yoe // 100 + doy
    return era * 146097 + doe - 719468


def civil_from_days(z: int) -> tuple[int, int, int]:
    """Inverse of :func:`days_from_civil`."""
    z += 719468
    era = (z if z >= 0 else z - 146096) // 146097
    doe = z - era * 146097
    yoe = (doe - doe // 1460 + doe // 36524 - doe // 146096) // 365
    y = yoe + era * 400
    doy = doe - (365 * yoe + yoe // 4 - yoe // 100)
    mp = (5 * doy + 2) // 153
    d = doy - (153 * mp + 2) // 5 + 1
    m = mp + (3 if mp < 10 else -9)
    return y + (m <= 2), m, d


def parse_clf_timestamp(text: str) -> int:
    """Parse ``dd/Mon/yyyy:HH:MM:SS +zzzz`` into a UTC epoch second.

    The zone offset is applied at parse time so every instant downstream is
    UTC.  Raises ValueError on any malformed component.
    """
    # dd/Mon/yyyy:HH:MM:SS +zzzz  (fixed widths except the sign)
    if len(text) < 26 or text[2] != "/" or text[6] != "/" or text[11] != ":":
        raise ValueError(f"bad timestamp {text!r}")
    day = int(text[0:2])
    mon = _MONTH_NUM.get(text[3:6])
    if mon is None:
        raise ValueError(f"bad month in {text!r}")
    year = int(text[7:11])
    hh = int(text[12:14])
    mm = int(text[15:17])
    ss = int(text[18:20])
    if not (0 <= hh < 24 and 0 <= mm < 60 and 0 <= ss < 60):
        raise ValueError(f"bad time of day in {text!r}")
    zone = text[21:]
    if len(zone) != 5 or zone[0] not in "+-":
        raise ValueError(f"bad zone {zone!r}")
    off = (int(zone[1:3]) * 60 + int(zone[3:5])) * 60
    if zone[0] == "-":
        off = -off
    return days_from_civil(year, mon, day) * 86400 + hh * 3600 + mm * 60 + ss - off


def format_clf_timestamp(epoch: int) -> str:
    """Render a UTC epoch second as ``dd/Mon/yyyy:HH:MM:SS +0000``."""
    days, rem = divmod(int(epoch), 86400)
    y, m, d = civil_from_days(days)
    hh, rem = divmod(rem, 3600)
    mm, ss = divmod(rem, 60)
    return f"{d:02d}/{_MONTHS[m - 1]}/{y:04d}:{hh:02d}:{mm:02d}:{ss:02d} +0000"


def format_iso_utc(epoch: int) -> str:
    days, rem = divmod(int(epoch), 86400)
    y, m, d = civil_from_days(days)
    hh, rem = divmod(rem, 3600)
    mm, ss = divmod(rem, 60)
    return f"{y:04d}-{m:02d}-{d:02d}T{hh:02d}:{mm:02d}:{ss:02d}Z"


def parse_iso_utc(text: str) -> int:
    if len(text) != 20 or text[10] != "T" or not text.endswith("Z"):
        raise ValueError(f"bad ISO instant {text!r}")
    return (days_from_civil(int(text[0:4]), int(text[5:7]), int(text[8:10])) * 86400
            + int(text[11:13]) * 3600 + int(text[14:16]) * 60 + int(text[17:19]))


# The 13 raw per-request fields, in canonical (NDJSON) key order.
RAW_FIELDS = (
    "client_ip", "timestamp", "method", "status_code", "bytes",
    "delivery_time_ms", "agent_type", "service_type", "cache_hit",
    "node_id", "offering_id", "content_path", "content_type",
)


@dataclass(frozen=True, slots=True)
class AccessLogRecord:
    """One parsed request line.

    ``timestamp`` is a UTC epoch second.  ``flags`` carries parse annotations
    (e.g. ``missing_bytes``) and is excluded from equality so the
    format/parse round trip compares the raw fields only.
    """

    client_ip: str
    timestamp: int
    method: str
    status_code: int
    bytes: int
    delivery_time_ms: int
    agent_type: str
    service_type: str
    cache_hit: str
    node_id: str
    offering_id: str
    content_path: str
    content_type: str
    flags: tuple[str, ...] = field(default=(), compare=False)

    def to_json_dict(self) -> dict:
        d = {name: getattr(self, name) for name in RAW_FIELDS}
        d["timestamp"] = format_iso_utc(self.timestamp)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "AccessLogRecord":
        kw = {name: d[name] for name in RAW_FIELDS}
        kw["timestamp"] = parse_iso_utc(d["timestamp"])
        return cls(**kw)

    def is_error(self) -> bool:
        return self.status_code >= 400

    def with_flags(self, *flags: str) -> "AccessLogRecord":
        return replace(self, flags=self.flags + flags)


@dataclass(frozen=True)
class LogSchema:
    """Declares how a log line maps onto the 13 raw fields.

    ``tokens`` is the left-to-right layout of a line.  Besides the raw field
    names it may contain ``"_"`` (an ignored token, e.g. identd/user dashes)
    and the composite ``"request"`` token, which is the quoted
    ``"METHOD path PROTO"`` triple carrying ``method`` and ``content_path``.
    ``timestamp`` is always the bracketed CLF form.  ``defaults`` supplies the
    value used when a field holds ``-``.
    """

    tokens: tuple[str, ...] = (
        "client_ip", "_", "_", "timestamp", "request", "status_code",
        "bytes", "delivery_time_ms", "agent_type", "service_type",
        "cache_hit", "node_id", "offering_id", "content_type",
    )
    defaults: dict = field(default_factory=lambda: dict(DEFAULT_FIELD_DEFAULTS))

    def to_json(self) -> str:
        return json.dumps({"tokens": list(self.tokens), "defaults": self.defaults},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LogSchema":
        raw = json.loads(text)
        return cls(tokens=tuple(raw["tokens"]),
                   defaults={**DEFAULT_FIELD_DEFAULTS, **raw.get("defaults", {})})


DEFAULT_FIELD_DEFAULTS = {
    "bytes": 0,
    "delivery_time_ms": 0,
    "agent_type": "unknown",
    "service_type": "unknown",
    "cache_hit": "UNKNOWN",
    "node_id": "",
    "offering_id": "",
    "content_type": "unknown",
}

DEFAULT_SCHEMA = LogSchema()


class _Vocab:
    """Insertion-ordered string-to-code table."""

    __slots__ = ("index", "strings")

    def __init__(self) -> None:
        self.index: dict[str, int] = {}
        self.strings: list[str] = []

    def code(self, s: str) -> int:
        idx = self.index.get(s)
        if idx is None:
            idx = len(self.strings)
            self.index[s] = idx
            self.strings.append(s)
        return idx


class RecordBatch:
    """Columnar view over sanitized records.

    Entity-valued columns hold int32 codes into per-column vocabularies;
    numeric columns are plain arrays.  This is the interchange handed from
    ingestion to the feature builders so that aggregation can run as numpy
    reductions instead of per-record Python.
    """

    ENTITY_COLS = ("client_ip", "node_id", "offering_id", "content_path",
                   "agent_type", "service_type", "content_type")

    def __init__(self) -> None:
        self._ts: list[int] = []
        self._status: list[int] = []
        self._bytes: list[int] = []
        self._delivery: list[int] = []
        self._hit: list[int] = []
        self._method: list[int] = []
        self._codes: dict[str, list[int]] = {c: [] for c in self.ENTITY_COLS}
        self.vocabs: dict[str, _Vocab] = {c: _Vocab() for c in self.ENTITY_COLS}
        self._frozen = False

    def append(self, r: AccessLogRecord) -> None:
        self._ts.append(r.timestamp)
        self._status.append(r.status_code)
        self._bytes.append(r.bytes)
        self._delivery.append(r.delivery_time_ms)
        self._hit.append(1 if r.cache_hit == "HIT" else (0 if r.cache_hit == "MISS" else -1))
        self._method.append(METHODS.index(r.method) if r.method in METHODS else METHODS.index("OTHER"))
        codes = self._codes
        vocabs = self.vocabs
        codes["client_ip"].append(vocabs["client_ip"].code(r.client_ip))
        codes["node_id"].append(vocabs["node_id"].code(r.node_id))
        codes["offering_id"].append(vocabs["offering_id"].code(r.offering_id))
        codes["content_path"].append(vocabs["content_path"].code(r.content_path))
        codes["agent_type"].append(vocabs["agent_type"].code(r.agent_type))
        codes["service_type"].append(vocabs["service_type"].code(r.service_type))
        codes["content_type"].append(vocabs["content_type"].code(r.content_type))

    def freeze(self) -> "RecordBatch":
        if not self._frozen:
            self.ts = np.asarray(self._ts, dtype=np.int64)
            self.status = np.asarray(self._status, dtype=np.int16)
            self.bytes = np.asarray(self._bytes, dtype=np.int64)
            self.delivery_ms = np.asarray(self._delivery, dtype=np.int64)
            self.hit = np.asarray(self._hit, dtype=np.int8)
            self.method = np.asarray(self._method, dtype=np.int8)
            self.codes = {c: np.asarray(v, dtype=np.int32) for c, v in self._codes.items()}
            self._ts = self._status = self._bytes = self._delivery = []
            self._hit = self._method = []
            self._codes = {}
            self._frozen = True
        return self

    def __len__(self) -> int:
        return len(self.ts) if self._frozen else len(self._ts)

    def names(self, column: str) -> list[str]:
        return self.vocabs[column].strings

    @classmethod
    def from_records(cls, records: Iterable[AccessLogRecord]) -> "RecordBatch":
        batch = cls()
        for r in records:
            batch.append(r)
        return batch.freeze()

    def record(self, i: int) -> AccessLogRecord:
        """Materialize row ``i`` back into an AccessLogRecord (slow path)."""
        v = self.vocabs
        hit = int(self.hit[i])
        return AccessLogRecord(
            client_ip=v["client_ip"].strings[self.codes["client_ip"][i]],
            timestamp=int(self.ts[i]),
            method=METHODS[self.method[i]],
            status_code=int(self.status[i]),
            bytes=int(self.bytes[i]),
            delivery_time_ms=int(self.delivery_ms[i]),
            agent_type=v["agent_type"].strings[self.codes["agent_type"][i]],
            service_type=v["service_type"].strings[self.codes["service_type"][i]],
            cache_hit="HIT" if hit == 1 else ("MISS" if hit == 0 else "UNKNOWN"),
            node_id=v["node_id"].strings[self.codes["node_id"][i]],
            offering_id=v["offering_id"].strings[self.codes["offering_id"][i]],
            content_path=v["content_path"].strings[self.codes["content_path"][i]],
            content_type=v["content_type"].strings[self.codes["content_type"][i]],
        )

    def iter_records(self) -> Iterable[AccessLogRecord]:
        for i in range(len(self)):
            yield self.record(i)
