"""Shared fixtures: record factory, random log generator, and a pure-Python
brute-force aggregation oracle kept deliberately independent of the library's
numpy implementations."""

import random
import statistics

from logsleuth.records import AccessLogRecord


def make_record(ip="1.2.3.4", ts=0, method="GET", status=200, nbytes=1000,
                delivery=10, agent="desktop", service="static", hit="HIT",
                node="n1", offering="off1", path="/a", ctype="text"):
    return AccessLogRecord(
        client_ip=ip, timestamp=ts, method=method, status_code=status,
        bytes=nbytes, delivery_time_ms=delivery, agent_type=agent,
        service_type=service, cache_hit=hit, node_id=node,
        offering_id=offering, content_path=path, content_type=ctype)


def random_log(rng: random.Random, n, start=0, duration=7200,
               ips=8, nodes=4, contents=10, offerings=3):
    agents = ["desktop", "iphone", "ipad", "tv"]
    recs = []
    for _ in range(n):
        recs.append(make_record(
            ip=f"10.0.0.{rng.randrange(ips)}",
            ts=start + rng.randrange(duration),
            status=rng.choice([200, 200, 200, 200, 304, 404, 503]),
            nbytes=rng.randrange(100, 50_000),
            delivery=rng.randrange(1, 2_000),
            agent=rng.choice(agents),
            service=rng.choice(["static", "live", "pdl"]),
            hit=rng.choice(["HIT", "HIT", "MISS", "UNKNOWN"]),
            node=f"node{rng.randrange(nodes)}",
            offering=f"off{rng.randrange(offerings)}",
            path=f"/c/{rng.randrange(contents)}",
            ctype=rng.choice(["text", "video"]),
        ))
    recs.sort(key=lambda r: r.timestamp)
    return recs


def _jaccard_dynamicity(sets):
    if len(sets) <= 1:
        return 0.0
    total = 0.0
    for a, b in zip(sets[:-1], sets[1:]):
        union = a | b
        total += 0.0 if not union else 1.0 - len(a & b) / len(union)
    return total / (len(sets) - 1)


def _subwindow_count(window):
    return -(-window.duration // window.sub_window)


def oracle_tables(records, window, mobile_agents=frozenset({"iphone", "ipad", "android",
                                                            "mobile", "phone", "tablet"})):
    """Recompute all four perspective tables with dict-and-loop arithmetic."""
    recs = [r for r in records if window.start <= r.timestamp < window.end]
    assert recs, "oracle needs a non-empty window"
    W = _subwindow_count(window)

    def sub_of(r):
        return (r.timestamp - window.start) // window.sub_window

    # ---- content ----
    c = {}
    for r in recs:
        e = c.setdefault(r.content_path, {
            "n": 0, "hits": 0, "ips": set(), "nodes": set(),
            "subs": [set() for _ in range(W)]})
        e["n"] += 1
        e["hits"] += r.cache_hit == "HIT"
        e["ips"].add(r.client_ip)
        e["nodes"].add(r.node_id)
        e["subs"][sub_of(r)].add(r.client_ip)
    ip_counts = [len(e["ips"]) for e in c.values()]
    lo, hi = min(ip_counts), max(ip_counts)
    content = {}
    for k, e in c.items():
        pop = 0.0 if hi == lo else (len(e["ips"]) - lo) / (hi - lo)
        content[k] = {
            "number_of_requests": e["n"],
            "popularity": pop,
            "cache_hit_rate": e["hits"] / e["n"],
            "request_per_ip_ratio": e["n"] / len(e["ips"]),
            "request_per_node_ratio": e["n"] / len(e["nodes"]),
            "ip_dynamicity": _jaccard_dynamicity(e["subs"]),
        }
    pop_of = {k: v["popularity"] for k, v in content.items()}

    # ---- per-IP scaffolding (needed by node legit-IP rate) ----
    i = {}
    for r in recs:
        e = i.setdefault(r.client_ip, {
            "n": 0, "hits": 0, "err": 0, "mob": 0, "pop": 0.0, "ts": [],
            "nodes": set(), "contents": set(), "off": {}})
        e["n"] += 1
        e["hits"] += r.cache_hit == "HIT"
        e["err"] += r.status_code >= 400
        e["mob"] += r.agent_type in mobile_agents
        e["pop"] += pop_of[r.content_path]
        e["ts"].append(r.timestamp)
        e["nodes"].add(r.node_id)
        e["contents"].add(r.content_path)
        e["off"][r.offering_id] = e["off"].get(r.offering_id, 0) + 1
    med = statistics.median(e["pop"] / e["n"] for e in i.values())
    legit = {k for k, e in i.items()
             if e["pop"] / e["n"] >= med and e["err"] / e["n"] <= 0.1}

    ip = {}
    ip_mix = {}
    for k, e in i.items():
        ts = sorted(e["ts"])
        gaps = [b - a for a, b in zip(ts[:-1], ts[1:])]
        ip[k] = {
            "number_of_requests": e["n"],
            "average_request_interval": (sum(gaps) / len(gaps)) if gaps else float(window.duration),
            "number_of_nodes": len(e["nodes"]),
            "number_of_contents": len(e["contents"]),
            "request_per_content_ratio": e["n"] / len(e["contents"]),
            "request_per_node_ratio": e["n"] / len(e["nodes"]),
            "average_request_popularity": e["pop"] / e["n"],
            "cache_hit_rate": e["hits"] / e["n"],
            "request_error_rate": e["err"] / e["n"],
            "mobile_rate": e["mob"] / e["n"],
        }
        ip_mix[k] = {o: n / e["n"] for o, n in e["off"].items()}

    # ---- node ----
    nd = {}
    for r in recs:
        e = nd.setdefault(r.node_id, {
            "n": 0, "hits": 0, "err": 0, "bytes": 0, "ms": 0, "pop": 0.0,
            "per_ip": {}, "csubs": [set() for _ in range(W)],
            "isubs": [set() for _ in range(W)], "off": {}})
        e["n"] += 1
        e["hits"] += r.cache_hit == "HIT"
        e["err"] += r.status_code >= 400
        e["bytes"] += r.bytes
        e["ms"] += r.delivery_time_ms
        e["pop"] += pop_of[r.content_path]
        p = e["per_ip"].setdefault(r.client_ip, [0, 0])
        p[0] += 1
        p[1] += r.cache_hit == "HIT"
        e["csubs"][sub_of(r)].add(r.content_path)
        e["isubs"][sub_of(r)].add(r.client_ip)
        e["off"][r.offering_id] = e["off"].get(r.offering_id, 0) + 1
    node = {}
    node_mix = {}
    for k, e in nd.items():
        lr = [h / n for ipk, (n, h) in e["per_ip"].items() if ipk in legit]
        node[k] = {
            "cache_hit_rate": e["hits"] / e["n"],
            "cache_hit_rate_legitimate_ips": (sum(lr) / len(lr)) if lr else 0.0,
            "data_transfer_rate": (e["bytes"] / e["ms"] / 1000.0) if e["ms"] else 0.0,
            "request_error_rate": e["err"] / e["n"],
            "average_request_popularity": e["pop"] / e["n"],
            "content_dynamicity": _jaccard_dynamicity(e["csubs"]),
            "ip_dynamicity": _jaccard_dynamicity(e["isubs"]),
        }
        node_mix[k] = {o: n / e["n"] for o, n in e["off"].items()}

    # ---- offering ----
    of = {}
    for r in recs:
        e = of.setdefault(r.offering_id, {"n": 0, "hits": 0, "pop": 0.0,
                                          "nodes": set(), "st": {}, "ct": {}})
        e["n"] += 1
        e["hits"] += r.cache_hit == "HIT"
        e["pop"] += pop_of[r.content_path]
        e["nodes"].add(r.node_id)
        e["st"][r.service_type] = e["st"].get(r.service_type, 0) + 1
        e["ct"][r.content_type] = e["ct"].get(r.content_type, 0) + 1
    offering = {}
    offering_side = {}
    for k, e in of.items():
        offering[k] = {
            "number_of_requests": e["n"],
            "number_of_nodes": len(e["nodes"]),
            "request_popularity": e["pop"] / e["n"],
            "cache_hit_rate": e["hits"] / e["n"],
        }
        offering_side[k] = {
            "service_type": min(e["st"], key=lambda t: (-e["st"][t], t)),
            "content_type": min(e["ct"], key=lambda t: (-e["ct"][t], t)),
        }

    return {
        "content": content, "ip": ip, "node": node, "offering": offering,
        "ip_mix": ip_mix, "node_mix": node_mix, "offering_side": offering_side,
        "legit": legit,
    }
