"""Validation and correction of preliminary candidates (analysis phase).

Three independent evidence sources feed a per-candidate corroboration
count: cross-perspective link structure, time-series deviations, and
offering configuration mismatches.  A candidate ends CONFIRMED only with
at least ``confirm_marks`` corroborations and no benign explanation;
everything else ends DEMOTED — nothing stays preliminary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .detect import (
    CPA,
    DOS,
    PRELIMINARY,
    UNKNOWN,
    AnomalyCandidate,
)
from .perspectives import (
    PerspectiveTable,
    WindowSpec,
    build_content_features,
    popularity_map,
    _as_batch,
    _window_slice,
)

REQUEST_BURST = "request_burst"
CACHE_HIT_DROP = "cache_hit_drop"
POPULARITY_DROP = "popularity_drop"

PRODUCTION, TEST, MAINTENANCE = "production", "test", "maintenance"
POPULAR, LONG_TAIL, ANY = "popular", "long_tail", "any"

# event kinds that can corroborate each attack hypothesis
MATCHING_EVENT_KINDS = {
    DOS: (REQUEST_BURST, CACHE_HIT_DROP),
    CPA: (POPULARITY_DROP, CACHE_HIT_DROP),
}

MAD_TO_SIGMA = 0.6745  # robust z: 0.6745 * (x - median) / MAD


class TooFewSubWindows(Exception):
    """Time-series analysis needs at least 6 sub-windows."""


@dataclass
class CorrectionConfig:
    """Every correction threshold in one auditable place."""

    min_edge_weight: int = 10          # requests needed to count as a link
    promotion_fan_in: int = 3          # corroborated IPs to promote a node
    mad_z_threshold: float = 3.5       # robust z magnitude that makes an event
    confirm_marks: int = 2             # corroborations required to confirm
    crowd_min_distinct_ips: int = 1000
    crowd_error_rate_cap: float = 0.05
    dominant_offering_share: float = 0.5
    offering_mismatch_share: float = 0.05
    offering_link_share: float = 0.2
    greedy_cap: int = 200              # implicated-entity search cutoff

    def to_json_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OfferingConfig:
    offering_id: str
    service_type: str = ""
    content_types: tuple[str, ...] = ()
    purpose: str = PRODUCTION
    expected_popularity: str = ANY

    @classmethod
    def from_json_dict(cls, d: dict) -> "OfferingConfig":
        return cls(offering_id=d["offering_id"],
                   service_type=d.get("service_type", ""),
                   content_types=tuple(d.get("content_types", ())),
                   purpose=d.get("purpose", PRODUCTION),
                   expected_popularity=d.get("expected_popularity", ANY))

    def to_json_dict(self) -> dict:
        return {"offering_id": self.offering_id, "service_type": self.service_type,
                "content_types": list(self.content_types), "purpose": self.purpose,
                "expected_popularity": self.expected_popularity}


def load_offering_configs(text: str) -> dict[str, OfferingConfig]:
    raw = json.loads(text)
    configs = [OfferingConfig.from_json_dict(d) for d in raw]
    out = {}
    for c in configs:
        if c.offering_id in out:
            raise ValueError(f"duplicate offering config {c.offering_id}")
        out[c.offering_id] = c
    return out


@dataclass
class LinkGraph:
    """Tripartite request-count graph restricted to candidate neighborhoods.

    ``totals`` keeps the pre-restriction weight sums per edge family; the
    IP<->node family total equals the number of sanitized requests.
    """

    ip_node: dict[tuple[str, str], int] = field(default_factory=dict)
    content_node: dict[tuple[str, str], int] = field(default_factory=dict)
    ip_content: dict[tuple[str, str], int] = field(default_factory=dict)
    totals: dict[str, int] = field(default_factory=dict)

    def neighbors(self, family: str, entity: str, position: int,
                  min_weight: int = 1) -> list[tuple[str, int]]:
        edges = getattr(self, family)
        out = []
        for (a, b), w in edges.items():
            if w < min_weight:
                continue
            if position == 0 and a == entity:
                out.append((b, w))
            elif position == 1 and b == entity:
                out.append((a, w))
        return sorted(out)


def _edge_family(codes_a, codes_b, names_a, names_b, keep_a: set[str],
                 keep_b: set[str]) -> tuple[dict[tuple[str, str], int], int]:
    nb = len(names_b)
    key = codes_a.astype(np.int64) * nb + codes_b
    uniq, counts = np.unique(key, return_counts=True)
    total = int(counts.sum())
    edges = {}
    for k, c in zip(uniq, counts):
        a = names_a[int(k // nb)]
        b = names_b[int(k % nb)]
        if a in keep_a or b in keep_b:
            edges[(a, b)] = int(c)
    return edges, total


def build_link_graph(records, candidates: list[AnomalyCandidate],
                     window: WindowSpec | None = None) -> LinkGraph:
    """Accumulate request-count edges, keeping those incident to a candidate."""
    batch = _as_batch(records)
    if window is not None:
        idx = _window_slice(batch, window)
    else:
        idx = np.arange(len(batch))
    by_persp: dict[str, set[str]] = {"ip": set(), "node": set(), "content": set()}
    for c in candidates:
        if c.perspective in by_persp:
            by_persp[c.perspective].add(c.entity_id)

    ip = batch.codes["client_ip"][idx]
    node = batch.codes["node_id"][idx]
    content = batch.codes["content_path"][idx]
    ips = batch.names("client_ip")
    nodes = batch.names("node_id")
    contents = batch.names("content_path")

    graph = LinkGraph()
    graph.ip_node, t1 = _edge_family(ip, node, ips, nodes,
                                     by_persp["ip"], by_persp["node"])
    graph.content_node, t2 = _edge_family(content, node, contents, nodes,
                                          by_persp["content"], by_persp["node"])
    graph.ip_content, t3 = _edge_family(ip, content, ips, contents,
                                        by_persp["ip"], by_persp["content"])
    graph.totals = {"ip_node": t1, "content_node": t2, "ip_content": t3}
    return graph


def cross_perspective_validate(candidates: list[AnomalyCandidate], graph: LinkGraph,
                               config: CorrectionConfig | None = None) -> list[AnomalyCandidate]:
    """Corroborate same-attack IP/content <-> node links, demote candidates
    isolated from every other perspective, and promote nodes hammered by
    enough corroborated malicious IPs of one type."""
    config = config or CorrectionConfig()
    w_min = config.min_edge_weight
    by_key = {(c.perspective, c.entity_id): c for c in candidates}
    node_attack = {c.entity_id: c.attack for c in candidates if c.perspective == "node"}

    def node_links(family: str, entity: str) -> list[tuple[str, int]]:
        return [(n, w) for n, w in graph.neighbors(family, entity, 0, w_min)]

    # (a) same-attack-type corroboration through nodes, one mark per side
    corroborated_pairs: list[tuple[AnomalyCandidate, AnomalyCandidate]] = []
    for cand in candidates:
        if cand.perspective not in ("ip", "content") or cand.attack not in (DOS, CPA):
            continue
        family = "ip_node" if cand.perspective == "ip" else "content_node"
        hits = []
        for node, w in node_links(family, cand.entity_id):
            if node_attack.get(node) == cand.attack:
                hits.append(node)
                corroborated_pairs.append((cand, by_key[("node", node)]))
        if hits:
            cand.linked_entities.setdefault("node", []).extend(hits)
    marked_once: set[int] = set()
    for side_a, side_b in corroborated_pairs:
        for cand, other in ((side_a, side_b), (side_b, side_a)):
            if id(cand) not in marked_once:
                cand.corroborate(f"cross_perspective:{other.perspective}_link")
                marked_once.add(id(cand))
            key = other.perspective
            links = cand.linked_entities.setdefault(key, [])
            if other.entity_id not in links:
                links.append(other.entity_id)

    # (b) false-alarm rule: no qualifying link to any other perspective's candidate
    cand_ids = {p: {c.entity_id for c in candidates if c.perspective == p}
                for p in ("ip", "node", "content")}

    def has_any_link(cand: AnomalyCandidate) -> bool:
        e = cand.entity_id
        if cand.perspective == "ip":
            return (any(n in cand_ids["node"] for n, _ in node_links("ip_node", e)) or
                    any(c in cand_ids["content"]
                        for c, _ in graph.neighbors("ip_content", e, 0, w_min)))
        if cand.perspective == "content":
            return (any(n in cand_ids["node"] for n, _ in node_links("content_node", e)) or
                    any(i in cand_ids["ip"]
                        for i, _ in graph.neighbors("ip_content", e, 1, w_min)))
        return (any(i in cand_ids["ip"]
                    for i, _ in graph.neighbors("ip_node", e, 1, w_min)) or
                any(c in cand_ids["content"]
                    for c, _ in graph.neighbors("content_node", e, 1, w_min)))

    for cand in candidates:
        if cand.status == PRELIMINARY and not has_any_link(cand):
            cand.demote("no_cross_perspective_link")

    # (c) missed-entity rule: fan-in of corroborated malicious IPs promotes a node
    promoted: list[AnomalyCandidate] = []
    fan_in: dict[tuple[str, str], set[str]] = {}
    for cand in candidates:
        if (cand.perspective == "ip" and cand.attack in (DOS, CPA)
                and cand.marks > 0 and cand.status == PRELIMINARY):
            for node, w in node_links("ip_node", cand.entity_id):
                fan_in.setdefault((node, cand.attack), set()).add(cand.entity_id)
    for (node, attack), ips in sorted(fan_in.items()):
        if len(ips) < config.promotion_fan_in:
            continue
        existing = by_key.get(("node", node))
        if existing is not None and existing.attack == attack:
            continue
        if existing is not None and existing.attack == UNKNOWN and existing.status == PRELIMINARY:
            existing.attack = attack
            existing.tags.append("retyped:promotion_fan_in")
            existing.corroborate("cross_perspective:promotion_fan_in")
            existing.linked_entities.setdefault("ip", []).extend(sorted(ips))
            continue
        if existing is not None:
            continue
        cand = AnomalyCandidate(
            entity_id=node, perspective="node", attack=attack,
            evidence={f"promotion/node/fan_in>={config.promotion_fan_in}": True},
            model_score=0.0)
        cand.tags.append("promoted:missed_entity")
        cand.corroborate("cross_perspective:promotion_fan_in")
        cand.linked_entities["ip"] = sorted(ips)
        promoted.append(cand)
        by_key[("node", node)] = cand
    candidates.extend(promoted)
    return candidates


@dataclass
class TimeSeriesEvent:
    kind: str
    start_sub: int
    end_sub: int                 # inclusive
    start_ts: int
    end_ts: int
    magnitude: float             # max |robust z| inside the range
    implicated: dict[str, list[str]] = field(default_factory=dict)
    crowd_like: bool = False
    crowd_content: str = ""

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind, "start_sub": self.start_sub, "end_sub": self.end_sub,
            "start_ts": self.start_ts, "end_ts": self.end_ts,
            "magnitude": self.magnitude,
            "implicated": {k: sorted(v) for k, v in sorted(self.implicated.items())},
            "crowd_like": self.crowd_like, "crowd_content": self.crowd_content,
        }


def robust_z(series: np.ndarray) -> np.ndarray:
    """0.6745 * (x - median) / MAD; exact zero spread gives +-inf off-median."""
    x = np.asarray(series, dtype=np.float64)
    med = float(np.median(x))
    mad = float(np.median(np.abs(x - med)))
    z = np.zeros_like(x)
    if mad == 0.0:
        off = x != med
        z[off] = np.where(x[off] > med, np.inf, -np.inf)
        return z
    return MAD_TO_SIGMA * (x - med) / mad


def _merge_ranges(flags: np.ndarray) -> list[tuple[int, int]]:
    ranges = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            ranges.append((start, i - 1))
            start = None
    if start is not None:
        ranges.append((start, len(flags) - 1))
    return ranges


def time_series_events(records, window: WindowSpec,
                       popularity: dict[str, float] | None = None,
                       config: CorrectionConfig | None = None) -> list[TimeSeriesEvent]:
    """Scan per-sub-window request volume, cache hit rate, and mean request
    popularity for robust-z deviations in the direction of interest.

    Implicated entities per perspective are the top contributors whose
    greedy removal brings every sub-window of the event back under the
    threshold; a diffuse deviation (no small set suffices) implicates
    nobody.  A request burst attributable to one popular content hit by a
    large crowd of distinct IPs at a normal error rate is tagged
    ``crowd_like``.
    """
    config = config or CorrectionConfig()
    if window.n_sub_windows < 6:
        raise TooFewSubWindows(f"need >= 6 sub-windows, got {window.n_sub_windows}")
    batch = _as_batch(records)
    idx = _window_slice(batch, window)
    if popularity is None:
        popularity = popularity_map(build_content_features(batch, window))

    W = window.n_sub_windows
    sub = ((batch.ts[idx] - window.start) // window.sub_window).astype(np.int64)
    hit = (batch.hit[idx] == 1).astype(np.int64)
    err = (batch.status[idx] >= 400).astype(np.int64)
    content = batch.codes["content_path"][idx]
    ip = batch.codes["client_ip"][idx]
    node = batch.codes["node_id"][idx]
    content_names = batch.names("content_path")
    pop_req = np.array([popularity.get(p, 0.0) for p in content_names],
                       dtype=np.float64)[content]

    counts = np.bincount(sub, minlength=W).astype(np.float64)
    hits = np.bincount(sub, weights=hit, minlength=W)
    pops = np.bincount(sub, weights=pop_req, minlength=W)
    with np.errstate(invalid="ignore", divide="ignore"):
        hit_rate = np.where(counts > 0, hits / np.maximum(counts, 1), 0.0)
        mean_pop = np.where(counts > 0, pops / np.maximum(counts, 1), 0.0)

    z_count = robust_z(counts)
    z_hit = robust_z(hit_rate)
    z_pop = robust_z(mean_pop)
    zt = config.mad_z_threshold

    specs = [
        (REQUEST_BURST, z_count > zt, counts, z_count, +1),
        (CACHE_HIT_DROP, z_hit < -zt, hit_rate, z_hit, -1),
        (POPULARITY_DROP, z_pop < -zt, mean_pop, z_pop, -1),
    ]

    perspectives = {"ip": ip, "node": node, "content": content}
    name_of = {"ip": batch.names("client_ip"), "node": batch.names("node_id"),
               "content": content_names}

    events: list[TimeSeriesEvent] = []
    for kind, flags, series, z, _sign in specs:
        med = float(np.median(series))
        mad = float(np.median(np.abs(series - med)))
        allowed_hi = med + zt * mad / MAD_TO_SIGMA
        allowed_lo = med - zt * mad / MAD_TO_SIGMA
        for lo_sub, hi_sub in _merge_ranges(flags):
            in_range = (sub >= lo_sub) & (sub <= hi_sub)
            subs = list(range(lo_sub, hi_sub + 1))
            event = TimeSeriesEvent(
                kind=kind, start_sub=lo_sub, end_sub=hi_sub,
                start_ts=window.start + lo_sub * window.sub_window,
                end_ts=min(window.start + (hi_sub + 1) * window.sub_window, window.end),
                magnitude=float(np.max(np.abs(z[lo_sub:hi_sub + 1]))))
            for persp, codes in perspectives.items():
                event.implicated[persp] = _implicate_for(
                    kind, codes[in_range], sub[in_range] - lo_sub, hit[in_range],
                    pop_req[in_range], name_of[persp], len(subs),
                    allowed_hi, allowed_lo, config.greedy_cap)
            if kind == REQUEST_BURST:
                _crowd_check(event, content[in_range], ip[in_range], err[in_range],
                             sub[in_range] - lo_sub, counts, subs, allowed_hi,
                             content_names, popularity, config)
            events.append(event)
    events.sort(key=lambda e: (e.start_sub, e.kind))
    return events


def _implicate_for(kind: str, codes: np.ndarray, rel_sub: np.ndarray,
                   hit: np.ndarray, pop: np.ndarray, names: list[str],
                   n_subs: int, allowed_hi: float, allowed_lo: float,
                   cap: int) -> list[str]:
    if codes.size == 0:
        return []
    n_entities = int(codes.max()) + 1
    key = codes.astype(np.int64) * n_subs + rel_sub
    size = n_entities * n_subs
    e_counts = np.bincount(key, minlength=size).reshape(n_entities, n_subs)
    e_hits = np.bincount(key, weights=hit, minlength=size).reshape(n_entities, n_subs)
    e_pops = np.bincount(key, weights=pop, minlength=size).reshape(n_entities, n_subs)
    tot_counts = e_counts.sum(axis=0).astype(np.float64)
    tot_hits = e_hits.sum(axis=0)
    tot_pops = e_pops.sum(axis=0)

    active = np.nonzero(e_counts.sum(axis=1) > 0)[0]
    if kind == REQUEST_BURST:
        # biggest request contributors first
        rank = sorted(active, key=lambda e: (-e_counts[e].sum(), names[e]))
    elif kind == CACHE_HIT_DROP:
        rank = sorted(active, key=lambda e: (-(e_counts[e].sum() - e_hits[e].sum()), names[e]))
    else:
        # popularity deficit: requests weighted by how far below par they pull the mean
        deficit = e_counts.sum(axis=1) * allowed_lo - e_pops.sum(axis=1)
        rank = sorted(active, key=lambda e: (-deficit[e], names[e]))

    removed: list[str] = []
    rc, rh, rp = tot_counts.copy(), tot_hits.copy(), tot_pops.copy()

    def ok() -> bool:
        if kind == REQUEST_BURST:
            return bool(np.all(rc <= allowed_hi))
        live = rc > 0
        if kind == CACHE_HIT_DROP:
            rates = np.ones(n_subs)
            rates[live] = rh[live] / rc[live]
            return bool(np.all(rates >= allowed_lo))
        means = np.full(n_subs, allowed_lo)
        means[live] = rp[live] / rc[live]
        return bool(np.all(means >= allowed_lo))

    if ok():
        return []
    for e in rank:
        if len(removed) >= cap:
            return []   # diffuse: no compact set of entities explains it
        rc -= e_counts[e]
        rh -= e_hits[e]
        rp -= e_pops[e]
        removed.append(names[e])
        if ok():
            return sorted(removed)
    return []


def _crowd_check(event: TimeSeriesEvent, content: np.ndarray, ip: np.ndarray,
                 err: np.ndarray, rel_sub: np.ndarray, counts: np.ndarray,
                 subs: list[int], allowed_hi: float, content_names: list[str],
                 popularity: dict[str, float], config: CorrectionConfig) -> None:
    if content.size == 0:
        return
    per_content = np.bincount(content)
    top = int(per_content.argmax())
    top_mask = content == top
    # does removing just this one content restore every sub-window?
    restored = True
    for j, s in enumerate(subs):
        removed = int(np.sum(top_mask & (rel_sub == j)))
        if counts[s] - removed > allowed_hi:
            restored = False
            break
    if not restored:
        return
    distinct_ips = len(np.unique(ip[top_mask]))
    if distinct_ips < config.crowd_min_distinct_ips:
        return
    err_rate = float(err[top_mask].mean())
    if err_rate > config.crowd_error_rate_cap:
        return
    event.crowd_like = True
    event.crowd_content = content_names[top]


def temporal_corroborate(candidates: list[AnomalyCandidate],
                         events: list[TimeSeriesEvent],
                         config: CorrectionConfig | None = None) -> list[AnomalyCandidate]:
    """Grant one temporal corroboration per candidate implicated in an event
    whose kind matches its attack hypothesis; crowd-like events grant no
    marks and instead tag their implicated candidates as suspects."""
    for cand in candidates:
        if cand.status != PRELIMINARY:
            continue
        kinds_hit: list[str] = []
        crowd_hit = False
        for ev in events:
            implicated = cand.entity_id in ev.implicated.get(cand.perspective, ())
            if not implicated:
                continue
            if ev.crowd_like:
                crowd_hit = True
                continue
            if ev.kind in MATCHING_EVENT_KINDS.get(cand.attack, ()):
                kinds_hit.append(ev.kind)
        if kinds_hit:
            cand.corroborate("temporal:" + "+".join(sorted(set(kinds_hit))))
        if crowd_hit and "crowd-event-suspect" not in cand.tags:
            cand.tags.append("crowd-event-suspect")
    return candidates


def dominant_offering(cand: AnomalyCandidate, min_share: float) -> str | None:
    if not cand.offering_mix:
        return None
    off = min(cand.offering_mix, key=lambda o: (-cand.offering_mix[o], o))
    return off if cand.offering_mix[off] >= min_share else None


def offering_validate(candidates: list[AnomalyCandidate],
                      offering_configs: dict[str, OfferingConfig],
                      offering_table: PerspectiveTable | None = None,
                      config: CorrectionConfig | None = None) -> list[AnomalyCandidate]:
    """Final pass: benign-offering demotion, configuration-mismatch
    escalation, then the confirm/demote verdict on corroboration counts."""
    config = config or CorrectionConfig()

    profile_covers = {
        LONG_TAIL: {CPA},       # sanctioned unpopular-content traffic
        POPULAR: {DOS},         # sanctioned burst-like popular traffic
        ANY: {DOS, CPA, UNKNOWN},
    }
    for cand in candidates:
        if cand.status != PRELIMINARY:
            continue
        off = dominant_offering(cand, config.dominant_offering_share)
        if off is None:
            continue
        oc = offering_configs.get(off)
        if oc is None or oc.purpose not in (TEST, MAINTENANCE):
            continue
        if cand.attack in profile_covers.get(oc.expected_popularity, ()):
            cand.tags.append(f"benign_offering:{off}")
            cand.demote("benign_offering_traffic")

    # declaration-vs-observation mismatch escalates DoS-typed candidates
    # riding the inconsistent offering (e.g. static offering flooded with
    # live-streaming requests)
    inconsistent: set[str] = set()
    if offering_table is not None:
        for off, side in offering_table.side_data.items():
            oc = offering_configs.get(off)
            if oc is None or not oc.service_type:
                continue
            hist = side.get("service_type_counts", {})
            total = sum(hist.values())
            if total == 0:
                continue
            mismatch = 1.0 - hist.get(oc.service_type, 0) / total
            if mismatch >= config.offering_mismatch_share:
                inconsistent.add(off)
    for cand in candidates:
        if cand.status != PRELIMINARY or cand.attack != DOS:
            continue
        for off in inconsistent:
            if cand.offering_mix.get(off, 0.0) >= config.offering_link_share:
                cand.corroborate(f"offering:service_mismatch:{off}")
                break

    for cand in candidates:
        if cand.status != PRELIMINARY:
            continue
        if cand.marks >= config.confirm_marks:
            cand.confirm()
        else:
            cand.demote("insufficient_corroboration")
    return candidates


@dataclass
class ForensicReport:
    """Presentation artifact: confirmed attacks plus the full audit trail."""

    schema_version: int
    window: dict
    summary: dict
    confirmed: dict
    demoted: list
    promoted: list
    events: list
    correction_config: dict
    rules_version: str
    bo_traces: dict
    normalization: dict
    ingest: dict
    model_info: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ForensicReport":
        return cls(**json.loads(text))

    def confirmed_entities(self, attack: str, perspective: str) -> list[str]:
        return [e["entity_id"] for e in
                self.confirmed.get(attack, {}).get(perspective, [])]

    def to_text(self) -> str:
        s = self.summary
        lines = [
            "FORENSIC ANALYTICS REPORT",
            "=========================",
            f"window: {self.window.get('start_iso', '?')} .. {self.window.get('end_iso', '?')}"
            f"  (sub-window {self.window.get('sub_window', '?')} s)",
            "",
            "confirmed attacks",
            "-----------------",
            f"  compromised nodes : {s['compromised_nodes']['dos']} DoS, "
            f"{s['compromised_nodes']['cpa']} cache-pollution",
            f"  malicious IPs     : {s['malicious_ips']['dos']} DoS, "
            f"{s['malicious_ips']['cpa']} cache-pollution",
            f"  abnormal contents : {s['abnormal_contents']}",
            "",
            "correction",
            "----------",
            f"  candidates examined        : {s['total_candidates']}",
            f"  false positives removed    : {s['false_positives_removed']}",
            f"  false negatives recovered  : {s['false_negatives_recovered']}",
            f"  crowd-event suspects       : {s['crowd_event_suspects']}",
            f"  time-series events         : {s['time_series_events']}",
            "",
        ]
        for attack in (DOS, CPA):
            for persp in ("node", "ip", "content"):
                ids = self.confirmed_entities(attack, persp)
                if ids:
                    label = {DOS: "DoS", CPA: "CPA"}[attack]
                    lines.append(f"{label} {persp}s: " + ", ".join(ids))
        lines.append("")
        return "\n".join(lines)


def summarize(candidates: list[AnomalyCandidate], events: list[TimeSeriesEvent],
              bo_traces: dict | None = None, *, window: WindowSpec | None = None,
              correction_config: CorrectionConfig | None = None,
              rules_version: str = "", normalization: dict | None = None,
              ingest_stats: dict | None = None,
              model_info: dict | None = None) -> ForensicReport:
    """Fold corrected candidates and the audit trail into the report."""
    config = correction_config or CorrectionConfig()
    confirmed: dict[str, dict[str, list[dict]]] = {}
    demoted: list[dict] = []
    promoted: list[dict] = []
    n_confirmed = 0
    for cand in sorted(candidates, key=lambda c: (c.perspective, c.entity_id)):
        if cand.status == PRELIMINARY:
            raise ValueError(f"candidate {cand.entity_id} left preliminary")
        if any(t.startswith("promoted") or t.startswith("retyped") for t in cand.tags):
            promoted.append({"entity_id": cand.entity_id, "attack": cand.attack,
                             "status": cand.status})
        if cand.status == "confirmed":
            n_confirmed += 1
            confirmed.setdefault(cand.attack, {}).setdefault(
                cand.perspective, []).append(cand.to_json_dict())
        else:
            demoted.append({"entity_id": cand.entity_id,
                            "perspective": cand.perspective,
                            "attack": cand.attack,
                            "reasons": [t for t in cand.tags if t.startswith("demoted:")],
                            "marks": cand.marks})
    assert n_confirmed + len(demoted) == len(candidates)

    def count(attack: str, persp: str) -> int:
        return len(confirmed.get(attack, {}).get(persp, []))

    summary = {
        "compromised_nodes": {DOS: count(DOS, "node"), CPA: count(CPA, "node")},
        "malicious_ips": {DOS: count(DOS, "ip"), CPA: count(CPA, "ip")},
        "abnormal_contents": count(CPA, "content") + count(DOS, "content"),
        "total_candidates": len(candidates),
        "confirmed_total": n_confirmed,
        "false_positives_removed": len(demoted),
        "false_negatives_recovered": len(promoted),
        "crowd_event_suspects": sum(1 for c in candidates
                                    if "crowd-event-suspect" in c.tags),
        "time_series_events": len(events),
    }
    win = {}
    if window is not None:
        from .records import format_iso_utc
        win = {"start": window.start, "duration": window.duration,
               "sub_window": window.sub_window,
               "start_iso": format_iso_utc(window.start),
               "end_iso": format_iso_utc(window.end)}
    return ForensicReport(
        schema_version=1,
        window=win,
        summary=summary,
        confirmed=confirmed,
        demoted=demoted,
        promoted=promoted,
        events=[e.to_json_dict() for e in events],
        correction_config=config.to_json_dict(),
        rules_version=rules_version,
        bo_traces=bo_traces or {},
        normalization=normalization or {},
        ingest=ingest_stats or {},
        model_info=model_info or {},
    )
