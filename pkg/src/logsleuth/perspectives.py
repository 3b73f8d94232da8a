"""Multi-perspective feature tables: content, node, client IP, and offering.

Aggregation runs over the columnar RecordBatch with exact integer
accumulators (numpy bincount/unique); rates are formed once, after
reduction, so results are independent of record partitioning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .records import AccessLogRecord, RecordBatch

CONTENT, NODE, IP, OFFERING = "content", "node", "ip", "offering"

CONTENT_FEATURES = (
    "number_of_requests", "popularity", "cache_hit_rate",
    "request_per_ip_ratio", "request_per_node_ratio", "ip_dynamicity",
)
NODE_FEATURES = (
    "cache_hit_rate", "cache_hit_rate_legitimate_ips", "data_transfer_rate",
    "request_error_rate", "average_request_popularity",
    "content_dynamicity", "ip_dynamicity",
)
IP_FEATURES = (
    "number_of_requests", "average_request_interval", "number_of_nodes",
    "number_of_contents", "request_per_content_ratio", "request_per_node_ratio",
    "average_request_popularity", "cache_hit_rate", "request_error_rate",
    "mobile_rate",
)
OFFERING_FEATURES = (
    "number_of_requests", "number_of_nodes", "request_popularity", "cache_hit_rate",
)

DEFAULT_MOBILE_AGENTS = frozenset(
    {"iphone", "ipad", "android", "mobile", "phone", "tablet"})


class EmptyWindow(Exception):
    """No records fall inside the analysis window."""


@dataclass(frozen=True)
class WindowSpec:
    """Analysis window: [start, start + duration) UTC epoch seconds.

    ``sub_window`` is the granule for dynamicity features and the
    time-series correction pass (default hourly).
    """

    start: int
    duration: int
    sub_window: int = 3600

    def __post_init__(self):
        if self.duration <= 0 or self.sub_window <= 0:
            raise ValueError("duration and sub_window must be positive")
        if self.sub_window > self.duration:
            raise ValueError("sub_window must not exceed duration")

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def n_sub_windows(self) -> int:
        return -(-self.duration // self.sub_window)


@dataclass
class NormalizationParams:
    """Per-feature extrema used by the min-max rescaling."""

    feature_names: tuple[str, ...]
    minima: np.ndarray
    maxima: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "features": list(self.feature_names),
            "min": [float(v) for v in self.minima],
            "max": [float(v) for v in self.maxima],
        }


@dataclass
class PerspectiveTable:
    """Feature matrix for one perspective over one window.

    ``values`` is |keys| x |feature_names| float64.  ``side_data`` carries
    the non-numeric per-entity payloads (offering request mix, modal
    service/content types) that stay out of the clustering matrix.
    """

    perspective: str
    keys: list[str]
    feature_names: tuple[str, ...]
    values: np.ndarray
    side_data: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.keys), len(self.feature_names)):
            raise ValueError("matrix shape inconsistent with keys x features")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("table contains NaN/Inf")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]

    def row(self, key: str) -> dict[str, float]:
        i = self.keys.index(key)
        return {f: float(v) for f, v in zip(self.feature_names, self.values[i])}

    def write_csv(self, fh: IO[str]) -> None:
        fh.write(",".join(["entity", *self.feature_names]) + "\n")
        for key, row in zip(self.keys, self.values):
            fh.write(",".join([key, *(repr(float(v)) for v in row)]) + "\n")

    @classmethod
    def read_csv(cls, fh: IO[str], perspective: str) -> "PerspectiveTable":
        header = fh.readline().strip().split(",")
        names = tuple(header[1:])
        keys, rows = [], []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            keys.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
        values = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, len(names)))
        return cls(perspective, keys, names, values)

    def write_side_json(self, fh: IO[str]) -> None:
        json.dump(self.side_data, fh, sort_keys=True, indent=1)


def compute_dynamicity(entity_sets: Sequence[set]) -> float:
    """Mean Jaccard distance between consecutive sub-window entity sets.

    Returns 0.0 for a single sub-window or when every set is empty; a pair
    of empty sets counts as distance 0.
    """
    if not entity_sets:
        raise ValueError("need at least one sub-window set")
    if len(entity_sets) == 1:
        return 0.0
    dists = []
    for a, b in zip(entity_sets[:-1], entity_sets[1:]):
        union = len(a | b)
        dists.append(0.0 if union == 0 else 1.0 - len(a & b) / union)
    return float(sum(dists) / len(dists))


def min_max_normalize(table: PerspectiveTable) -> tuple[PerspectiveTable, NormalizationParams]:
    """Rescale every feature column to [0, 1] by its window extrema.

    A constant column maps to 0 for every row.  The extrema are returned so
    reports can translate thresholds back to raw units.
    """
    v = table.values
    if v.size:
        mn = v.min(axis=0)
        mx = v.max(axis=0)
    else:
        mn = np.zeros(len(table.feature_names))
        mx = np.zeros(len(table.feature_names))
    span = mx - mn
    out = np.zeros_like(v)
    nz = span > 0
    if v.size:
        out[:, nz] = (v[:, nz] - mn[nz]) / span[nz]
    params = NormalizationParams(table.feature_names, mn.copy(), mx.copy())
    return (PerspectiveTable(table.perspective, list(table.keys), table.feature_names,
                             out, dict(table.side_data)),
            params)


# ---------------------------------------------------------------------------
# batch helpers

def _as_batch(records) -> RecordBatch:
    if isinstance(records, RecordBatch):
        return records
    return RecordBatch.from_records(records)


def _window_slice(batch: RecordBatch, window: WindowSpec) -> np.ndarray:
    mask = (batch.ts >= window.start) & (batch.ts < window.end)
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        raise EmptyWindow(f"no records in [{window.start}, {window.end})")
    return idx


def _pair_unique(a: np.ndarray, b: np.ndarray, nb: int) -> tuple[np.ndarray, np.ndarray]:
    """Unique (a, b) pairs, returned as decomposed code arrays."""
    key = a.astype(np.int64) * nb + b
    uniq = np.unique(key)
    return (uniq // nb).astype(np.int64), (uniq % nb).astype(np.int64)


def _distinct_per(a: np.ndarray, b: np.ndarray, na: int, nb: int) -> np.ndarray:
    ua, _ = _pair_unique(a, b, nb)
    return np.bincount(ua, minlength=na)


def _rate(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(len(num), dtype=np.float64)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def _dynamicity_per_entity(entity: np.ndarray, member: np.ndarray,
                           sub: np.ndarray, n_entities: int, n_members: int,
                           n_subs: int) -> np.ndarray:
    """Batch form of compute_dynamicity over per-sub-window member sets."""
    if n_subs <= 1:
        return np.zeros(n_entities, dtype=np.float64)
    key = (entity.astype(np.int64) * n_subs + sub) * n_members + member
    uniq = np.sort(np.unique(key))
    ew = uniq // n_members          # entity * n_subs + sub
    sizes = np.bincount(ew, minlength=n_entities * n_subs)
    # (e, v, w) also present at (e, v, w+1)  <=>  key + n_members present
    in_next = uniq[np.searchsorted(uniq, uniq + n_members) %
                   len(uniq)] == uniq + n_members
    next_ok = (ew % n_subs) < (n_subs - 1)
    inter_idx = ew[in_next & next_ok]
    inter = np.bincount(inter_idx, minlength=n_entities * n_subs)

    sizes = sizes.reshape(n_entities, n_subs)
    inter = inter.reshape(n_entities, n_subs)[:, :-1]
    union = sizes[:, :-1] + sizes[:, 1:] - inter
    dist = np.zeros_like(union, dtype=np.float64)
    nz = union > 0
    dist[nz] = 1.0 - inter[nz] / union[nz]
    return dist.mean(axis=1)


def _sorted_table(perspective: str, names_in: list[str], feats: tuple[str, ...],
                  columns: list[np.ndarray], side: dict | None = None) -> PerspectiveTable:
    order = np.argsort(np.asarray(names_in, dtype=object), kind="stable")
    keys = [names_in[i] for i in order]
    values = np.stack(columns, axis=1)[order]
    table = PerspectiveTable(perspective, keys, feats, values)
    if side:
        table.side_data = {names_in[i]: side[names_in[i]] for i in order if names_in[i] in side}
    return table


def _offering_mix(entity: np.ndarray, offering: np.ndarray, n_entities: int,
                  n_off: int, names: list[str], off_names: list[str],
                  totals: np.ndarray) -> dict[str, dict[str, float]]:
    key = entity.astype(np.int64) * n_off + offering
    uniq, counts = np.unique(key, return_counts=True)
    ent = uniq // n_off
    off = uniq % n_off
    mix: dict[str, dict[str, float]] = {}
    for e, o, c in zip(ent, off, counts):
        mix.setdefault(names[e], {})[off_names[o]] = float(c / totals[e])
    return {k: dict(sorted(v.items())) for k, v in mix.items()}


# ---------------------------------------------------------------------------
# builders

def build_content_features(records, window: WindowSpec) -> PerspectiveTable:
    """One row per content path: request volume, normalized distinct-IP
    popularity, hit rate, request-per-IP and per-node ratios, IP dynamicity."""
    batch = _as_batch(records)
    idx = _window_slice(batch, window)
    content = batch.codes["content_path"][idx].astype(np.int64)
    ip = batch.codes["client_ip"][idx].astype(np.int64)
    node = batch.codes["node_id"][idx].astype(np.int64)
    offering = batch.codes["offering_id"][idx].astype(np.int64)
    hit = (batch.hit[idx] == 1).astype(np.int64)
    names = batch.names("content_path")
    nc = len(names)
    n_ips = len(batch.names("client_ip"))
    n_nodes = len(batch.names("node_id"))
    n_off = len(batch.names("offering_id"))

    counts = np.bincount(content, minlength=nc)
    hits = np.bincount(content, weights=hit, minlength=nc)
    distinct_ips = _distinct_per(content, ip, nc, n_ips)
    distinct_nodes = _distinct_per(content, node, nc, n_nodes)

    present = counts > 0
    pop_raw = distinct_ips.astype(np.float64)
    popularity = np.zeros(nc)
    if present.any():
        lo = pop_raw[present].min()
        span = pop_raw[present].max() - lo
        if span > 0:
            popularity[present] = (pop_raw[present] - lo) / span

    sub = (batch.ts[idx] - window.start) // window.sub_window
    dyn = _dynamicity_per_entity(content, ip, sub, nc, n_ips, window.n_sub_windows)

    keep = np.nonzero(present)[0]
    cols = [counts[keep].astype(np.float64), popularity[keep],
            _rate(hits, counts)[keep],
            _rate(counts.astype(np.float64), distinct_ips)[keep],
            _rate(counts.astype(np.float64), distinct_nodes)[keep],
            dyn[keep]]
    mix = _offering_mix(content, offering, nc, n_off, names,
                        batch.names("offering_id"), counts)
    return _sorted_table(CONTENT, [names[i] for i in keep], CONTENT_FEATURES, cols, mix)


def popularity_map(content_table: PerspectiveTable) -> dict[str, float]:
    col = content_table.column("popularity")
    return {k: float(v) for k, v in zip(content_table.keys, col)}


def _per_ip_stats(batch: RecordBatch, idx: np.ndarray, pop_per_req: np.ndarray):
    ip = batch.codes["client_ip"][idx].astype(np.int64)
    n_ips = len(batch.names("client_ip"))
    counts = np.bincount(ip, minlength=n_ips)
    errors = np.bincount(ip, weights=(batch.status[idx] >= 400).astype(np.int64),
                         minlength=n_ips)
    avg_pop = _rate(np.bincount(ip, weights=pop_per_req, minlength=n_ips), counts)
    err_rate = _rate(errors, counts)
    return counts, avg_pop, err_rate


def legitimate_ip_mask(counts: np.ndarray, avg_pop: np.ndarray,
                       err_rate: np.ndarray, max_error_rate: float = 0.1) -> np.ndarray:
    """IPs that mostly request popular content and rarely err.

    Threshold: request-weighted popularity at or above the median across
    active IPs, and error rate at most ``max_error_rate``.
    """
    active = counts > 0
    if not active.any():
        return np.zeros(len(counts), dtype=bool)
    med = np.median(avg_pop[active])
    return active & (avg_pop >= med) & (err_rate <= max_error_rate)


def build_node_features(records, window: WindowSpec,
                        popularity: dict[str, float]) -> PerspectiveTable:
    """One row per node, plus per-node offering request mix in side_data.

    ``cache_hit_rate_legitimate_ips`` averages, over the legitimate IPs that
    touched the node, each IP's own hit rate at that node (0 when no
    legitimate IP did).  ``data_transfer_rate`` is total bytes over total
    delivery time, in MB/s (1000 bytes/ms = 1 MB/s), 0 when delivery time
    sums to 0.
    """
    batch = _as_batch(records)
    idx = _window_slice(batch, window)
    node = batch.codes["node_id"][idx].astype(np.int64)
    ip = batch.codes["client_ip"][idx].astype(np.int64)
    content = batch.codes["content_path"][idx].astype(np.int64)
    offering = batch.codes["offering_id"][idx].astype(np.int64)
    hit = (batch.hit[idx] == 1).astype(np.int64)
    err = (batch.status[idx] >= 400).astype(np.int64)
    names = batch.names("node_id")
    nn = len(names)
    n_ips = len(batch.names("client_ip"))
    n_contents = len(batch.names("content_path"))
    n_off = len(batch.names("offering_id"))

    pop_per_req = np.array([popularity.get(p, 0.0) for p in batch.names("content_path")],
                           dtype=np.float64)[content]

    counts = np.bincount(node, minlength=nn)
    hits = np.bincount(node, weights=hit, minlength=nn)
    errors = np.bincount(node, weights=err, minlength=nn)
    total_bytes = np.bincount(node, weights=batch.bytes[idx].astype(np.float64), minlength=nn)
    total_ms = np.bincount(node, weights=batch.delivery_ms[idx].astype(np.float64), minlength=nn)
    avg_pop = _rate(np.bincount(node, weights=pop_per_req, minlength=nn), counts)

    ip_counts, ip_avg_pop, ip_err = _per_ip_stats(batch, idx, pop_per_req)
    legit = legitimate_ip_mask(ip_counts, ip_avg_pop, ip_err)

    # per (node, ip) hit rate, averaged over legitimate IPs per node
    key = node * n_ips + ip
    uniq, inv = np.unique(key, return_inverse=True)
    pair_counts = np.bincount(inv)
    pair_hits = np.bincount(inv, weights=hit)
    pair_node = (uniq // n_ips).astype(np.int64)
    pair_ip = (uniq % n_ips).astype(np.int64)
    legit_pair = legit[pair_ip]
    legit_hit_sum = np.bincount(pair_node[legit_pair],
                                weights=_rate(pair_hits, pair_counts)[legit_pair],
                                minlength=nn)
    legit_n = np.bincount(pair_node[legit_pair], minlength=nn)

    sub = (batch.ts[idx] - window.start) // window.sub_window
    c_dyn = _dynamicity_per_entity(node, content, sub, nn, n_contents, window.n_sub_windows)
    i_dyn = _dynamicity_per_entity(node, ip, sub, nn, n_ips, window.n_sub_windows)

    transfer = np.zeros(nn)
    nz = total_ms > 0
    transfer[nz] = total_bytes[nz] / total_ms[nz] / 1000.0

    keep = np.nonzero(counts > 0)[0]
    cols = [_rate(hits, counts)[keep], _rate(legit_hit_sum, legit_n)[keep],
            transfer[keep], _rate(errors, counts)[keep], avg_pop[keep],
            c_dyn[keep], i_dyn[keep]]
    mix = _offering_mix(node, offering, nn, n_off, names,
                        batch.names("offering_id"), counts)
    return _sorted_table(NODE, [names[i] for i in keep], NODE_FEATURES, cols, mix)


def build_ip_features(records, window: WindowSpec, popularity: dict[str, float],
                      mobile_agents: frozenset[str] = DEFAULT_MOBILE_AGENTS) -> PerspectiveTable:
    """One row per client IP, plus per-IP offering request mix in side_data.

    ``average_request_interval`` is the mean gap in seconds between the IP's
    consecutive requests; an IP with a single request takes the window
    duration (a lone request is the opposite of a burst).
    """
    batch = _as_batch(records)
    idx = _window_slice(batch, window)
    ip = batch.codes["client_ip"][idx].astype(np.int64)
    node = batch.codes["node_id"][idx].astype(np.int64)
    content = batch.codes["content_path"][idx].astype(np.int64)
    offering = batch.codes["offering_id"][idx].astype(np.int64)
    agent = batch.codes["agent_type"][idx]
    ts = batch.ts[idx]
    hit = (batch.hit[idx] == 1).astype(np.int64)
    err = (batch.status[idx] >= 400).astype(np.int64)
    names = batch.names("client_ip")
    ni = len(names)
    n_nodes = len(batch.names("node_id"))
    n_contents = len(batch.names("content_path"))
    n_off = len(batch.names("offering_id"))

    pop_per_req = np.array([popularity.get(p, 0.0) for p in batch.names("content_path")],
                           dtype=np.float64)[content]
    mobile_codes = {i for i, a in enumerate(batch.names("agent_type")) if a in mobile_agents}
    mobile = np.isin(agent, np.array(sorted(mobile_codes), dtype=agent.dtype)) \
        if mobile_codes else np.zeros(len(agent), dtype=bool)

    counts = np.bincount(ip, minlength=ni)
    hits = np.bincount(ip, weights=hit, minlength=ni)
    errors = np.bincount(ip, weights=err, minlength=ni)
    mobiles = np.bincount(ip, weights=mobile.astype(np.int64), minlength=ni)
    avg_pop = _rate(np.bincount(ip, weights=pop_per_req, minlength=ni), counts)
    distinct_nodes = _distinct_per(ip, node, ni, n_nodes)
    distinct_contents = _distinct_per(ip, content, ni, n_contents)

    # mean inter-request gap: stable sort by IP keeps time order within IP
    order = np.argsort(ip, kind="stable")
    ip_s = ip[order]
    ts_s = ts[order]
    same = ip_s[1:] == ip_s[:-1]
    gaps = (ts_s[1:] - ts_s[:-1]).astype(np.float64)
    gap_sum = np.bincount(ip_s[1:][same], weights=gaps[same], minlength=ni)
    interval = np.full(ni, float(window.duration))
    multi = counts > 1
    interval[multi] = gap_sum[multi] / (counts[multi] - 1)

    keep = np.nonzero(counts > 0)[0]
    cols = [counts[keep].astype(np.float64), interval[keep],
            distinct_nodes[keep].astype(np.float64),
            distinct_contents[keep].astype(np.float64),
            _rate(counts.astype(np.float64), distinct_contents)[keep],
            _rate(counts.astype(np.float64), distinct_nodes)[keep],
            avg_pop[keep], _rate(hits, counts)[keep], _rate(errors, counts)[keep],
            _rate(mobiles, counts)[keep]]
    mix = _offering_mix(ip, offering, ni, n_off, names,
                        batch.names("offering_id"), counts)
    return _sorted_table(IP, [names[i] for i in keep], IP_FEATURES, cols, mix)


def build_offering_features(records, window: WindowSpec,
                            popularity: dict[str, float]) -> PerspectiveTable:
    """One row per offering; side_data records the modal service and content
    type plus their full token histograms (used by offering analysis)."""
    batch = _as_batch(records)
    idx = _window_slice(batch, window)
    offering = batch.codes["offering_id"][idx].astype(np.int64)
    node = batch.codes["node_id"][idx].astype(np.int64)
    content = batch.codes["content_path"][idx].astype(np.int64)
    stype = batch.codes["service_type"][idx].astype(np.int64)
    ctype = batch.codes["content_type"][idx].astype(np.int64)
    hit = (batch.hit[idx] == 1).astype(np.int64)
    names = batch.names("offering_id")
    no = len(names)
    n_nodes = len(batch.names("node_id"))

    pop_per_req = np.array([popularity.get(p, 0.0) for p in batch.names("content_path")],
                           dtype=np.float64)[content]

    counts = np.bincount(offering, minlength=no)
    hits = np.bincount(offering, weights=hit, minlength=no)
    distinct_nodes = _distinct_per(offering, node, no, n_nodes)
    avg_pop = _rate(np.bincount(offering, weights=pop_per_req, minlength=no), counts)

    def histograms(codes: np.ndarray, vocab: list[str]) -> list[dict[str, int]]:
        nv = len(vocab)
        key = offering * nv + codes
        uniq, cnt = np.unique(key, return_counts=True)
        out: list[dict[str, int]] = [{} for _ in range(no)]
        for k, c in zip(uniq, cnt):
            out[int(k // nv)][vocab[int(k % nv)]] = int(c)
        return out

    s_hist = histograms(stype, batch.names("service_type"))
    c_hist = histograms(ctype, batch.names("content_type"))

    def modal(h: dict[str, int]) -> str:
        if not h:
            return ""
        return min(h, key=lambda t: (-h[t], t))

    side = {}
    for i in range(no):
        if counts[i] > 0:
            side[names[i]] = {
                "service_type": modal(s_hist[i]),
                "content_type": modal(c_hist[i]),
                "service_type_counts": dict(sorted(s_hist[i].items())),
                "content_type_counts": dict(sorted(c_hist[i].items())),
            }

    keep = np.nonzero(counts > 0)[0]
    cols = [counts[keep].astype(np.float64), distinct_nodes[keep].astype(np.float64),
            avg_pop[keep], _rate(hits, counts)[keep]]
    return _sorted_table(OFFERING, [names[i] for i in keep], OFFERING_FEATURES, cols, side)


def build_all(records, window: WindowSpec,
              mobile_agents: frozenset[str] = DEFAULT_MOBILE_AGENTS) -> dict[str, PerspectiveTable]:
    """Build the four tables in dependency order (content popularity feeds
    the other three)."""
    batch = _as_batch(records)
    content = build_content_features(batch, window)
    pop = popularity_map(content)
    return {
        CONTENT: content,
        NODE: build_node_features(batch, window, pop),
        IP: build_ip_features(batch, window, pop, mobile_agents),
        OFFERING: build_offering_features(batch, window, pop),
    }
