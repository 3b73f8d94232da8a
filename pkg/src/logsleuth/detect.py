"""Directional attack-pattern rules and preliminary candidate labeling.

Rules express the qualitative intensities of the DoS and cache-pollution
fingerprints (low cache hit rate, large request count, ...) as population
quantile cutoffs, so they are scale-free and re-derivable from the feature
tables at audit time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .gmm import ClusterAssignment, UNCERTAIN_CONFIDENCE
from .perspectives import PerspectiveTable

DOS = "dos"
CPA = "cpa"
UNKNOWN = "unknown"

LOW, HIGH, LARGE, SMALL, SHORT = "low", "high", "large", "small", "short"
_LOWER_TAIL = {LOW, SMALL, SHORT}
_UPPER_TAIL = {HIGH, LARGE}

PRELIMINARY = "preliminary"
CONFIRMED = "confirmed"
DEMOTED = "demoted"

DEFAULT_QUANTILE = 0.1
# node tables are tiny (tens of rows); a deeper tail keeps the cutoff from
# landing inside the handful of attacked rows themselves
NODE_QUANTILE = 0.25
DEFAULT_MATCH_RATIO = 0.75
RULES_VERSION = "builtin-1"


class TooFewValues(Exception):
    """Quantile threshold needs at least 4 observations."""


def robust_threshold(values, direction: str, q: float = DEFAULT_QUANTILE) -> float:
    """Directional quantile cutoff with linear interpolation.

    Lower-tail directions (low/small/short) use the q-quantile, upper-tail
    (high/large) the (1-q)-quantile.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size < 4:
        raise TooFewValues(f"need >= 4 values, got {values.size}")
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    if direction in _LOWER_TAIL:
        return float(np.quantile(values, q))
    if direction in _UPPER_TAIL:
        return float(np.quantile(values, 1.0 - q))
    raise ValueError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class PatternRule:
    attack: str
    perspective: str
    feature: str
    direction: str
    either_tail: bool = False     # "High/Low" rows: either breach satisfies
    quantile: float = DEFAULT_QUANTILE

    @property
    def rule_id(self) -> str:
        tail = "|both" if self.either_tail else ""
        return f"{self.attack}/{self.perspective}/{self.feature}:{self.direction}{tail}"

    def satisfied(self, value: float, column: np.ndarray) -> bool:
        if self.either_tail:
            lo = robust_threshold(column, LOW, self.quantile)
            hi = robust_threshold(column, HIGH, self.quantile)
            return value < lo or value > hi
        t = robust_threshold(column, self.direction, self.quantile)
        return value < t if self.direction in _LOWER_TAIL else value > t

    def to_json_dict(self) -> dict:
        return {"attack": self.attack, "perspective": self.perspective,
                "feature": self.feature, "direction": self.direction,
                "either_tail": self.either_tail, "quantile": self.quantile}


def default_rules() -> list[PatternRule]:
    """The built-in DoS and service-alteration fingerprints."""
    nq = NODE_QUANTILE
    return [
        # cache pollution / service alteration
        PatternRule(CPA, "node", "cache_hit_rate", LOW, quantile=nq),
        PatternRule(CPA, "node", "cache_hit_rate_legitimate_ips", LOW, quantile=nq),
        PatternRule(CPA, "node", "data_transfer_rate", LOW, quantile=nq),
        PatternRule(CPA, "node", "average_request_popularity", LOW, quantile=nq),
        PatternRule(CPA, "ip", "number_of_requests", LARGE),
        PatternRule(CPA, "ip", "average_request_interval", SHORT),
        PatternRule(CPA, "ip", "number_of_nodes", SMALL),
        PatternRule(CPA, "ip", "number_of_contents", LARGE, either_tail=True),
        PatternRule(CPA, "ip", "average_request_popularity", LOW),
        PatternRule(CPA, "content", "popularity", LOW),
        PatternRule(CPA, "content", "request_per_ip_ratio", HIGH, either_tail=True),
        PatternRule(CPA, "content", "request_per_node_ratio", HIGH),
        PatternRule(CPA, "offering", "request_popularity", LOW),
        # denial of service
        PatternRule(DOS, "node", "cache_hit_rate", LOW, quantile=nq),
        PatternRule(DOS, "node", "cache_hit_rate_legitimate_ips", LOW, quantile=nq),
        PatternRule(DOS, "node", "data_transfer_rate", LOW, quantile=nq),
        PatternRule(DOS, "node", "request_error_rate", HIGH, quantile=nq),
        PatternRule(DOS, "ip", "number_of_requests", LARGE),
        PatternRule(DOS, "ip", "average_request_interval", SHORT),
        PatternRule(DOS, "ip", "number_of_nodes", SMALL),
        PatternRule(DOS, "ip", "cache_hit_rate", LOW),
        PatternRule(DOS, "ip", "request_error_rate", HIGH),
        PatternRule(DOS, "offering", "cache_hit_rate", LOW),
    ]


@dataclass
class RuleSet:
    rules: list[PatternRule] = field(default_factory=default_rules)
    match_ratio: float = DEFAULT_MATCH_RATIO
    version: str = RULES_VERSION

    def for_perspective(self, perspective: str) -> list[PatternRule]:
        return [r for r in self.rules if r.perspective == perspective]

    def to_json(self) -> str:
        return json.dumps({
            "version": self.version,
            "match_ratio": self.match_ratio,
            "rules": [r.to_json_dict() for r in self.rules],
        }, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RuleSet":
        raw = json.loads(text)
        rules = [PatternRule(
            attack=r["attack"], perspective=r["perspective"], feature=r["feature"],
            direction=r["direction"], either_tail=r.get("either_tail", False),
            quantile=r.get("quantile", DEFAULT_QUANTILE)) for r in raw["rules"]]
        return cls(rules=rules, match_ratio=raw.get("match_ratio", DEFAULT_MATCH_RATIO),
                   version=raw.get("version", "custom"))


@dataclass
class AnomalyCandidate:
    """One flagged entity and the evidence accumulated about it."""

    entity_id: str
    perspective: str
    attack: str                       # dos | cpa | unknown
    evidence: dict[str, bool]
    model_score: float
    status: str = PRELIMINARY
    corroborations: list[str] = field(default_factory=list)
    linked_entities: dict[str, list[str]] = field(default_factory=dict)
    offering_mix: dict[str, float] = field(default_factory=dict)
    tags: list[str] = field(default_factory=list)

    @property
    def marks(self) -> int:
        return len(self.corroborations)

    def corroborate(self, source: str) -> None:
        self.corroborations.append(source)

    def demote(self, reason: str) -> None:
        if self.status != PRELIMINARY:
            raise ValueError(f"cannot demote from {self.status}")
        self.status = DEMOTED
        self.tags.append(f"demoted:{reason}")

    def confirm(self) -> None:
        if self.status != PRELIMINARY:
            raise ValueError(f"cannot confirm from {self.status}")
        self.status = CONFIRMED

    def to_json_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "perspective": self.perspective,
            "attack": self.attack,
            "evidence": dict(sorted(self.evidence.items())),
            "model_score": self.model_score,
            "status": self.status,
            "corroborations": list(self.corroborations),
            "linked_entities": {k: sorted(v) for k, v in sorted(self.linked_entities.items())},
            "offering_mix": dict(sorted(self.offering_mix.items())),
            "tags": list(self.tags),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AnomalyCandidate":
        return cls(entity_id=d["entity_id"], perspective=d["perspective"],
                   attack=d["attack"], evidence=dict(d["evidence"]),
                   model_score=d["model_score"], status=d["status"],
                   corroborations=list(d["corroborations"]),
                   linked_entities={k: list(v) for k, v in d["linked_entities"].items()},
                   offering_mix=dict(d["offering_mix"]), tags=list(d["tags"]))


def _evaluate(row: dict[str, float], rules: list[PatternRule],
              columns: dict[str, np.ndarray]) -> tuple[dict[str, bool], dict[str, float]]:
    """Evidence map over every rule of the perspective plus per-attack ratio."""
    evidence: dict[str, bool] = {}
    per_attack_hit: dict[str, int] = {}
    per_attack_n: dict[str, int] = {}
    for rule in rules:
        ok = rule.satisfied(row[rule.feature], columns[rule.feature])
        evidence[rule.rule_id] = ok
        per_attack_n[rule.attack] = per_attack_n.get(rule.attack, 0) + 1
        per_attack_hit[rule.attack] = per_attack_hit.get(rule.attack, 0) + ok
    ratios = {a: per_attack_hit[a] / per_attack_n[a] for a in per_attack_n}
    return evidence, ratios


def _pick_attack(ratios: dict[str, float], match_ratio: float) -> str | None:
    """Best-matching attack at or above the match ratio.

    When both fingerprints clear the bar the higher ratio wins; exact ties
    go to DoS.
    """
    matched = {a: r for a, r in ratios.items() if r >= match_ratio}
    if not matched:
        return None
    best = max(matched.values())
    if matched.get(DOS) == best:
        return DOS
    return max(matched, key=lambda a: (matched[a], a == DOS))


def _columns(table: PerspectiveTable, rules: list[PatternRule]) -> dict[str, np.ndarray]:
    return {f: table.column(f) for f in {r.feature for r in rules}}


def _label_clusters(table: PerspectiveTable, assignment: ClusterAssignment,
                    ruleset: RuleSet, perspective: str,
                    confidence_min: float) -> list[AnomalyCandidate]:
    rules = ruleset.for_perspective(perspective)
    if not rules:
        return []
    columns = _columns(table, rules)
    k = assignment.responsibilities.shape[1]
    out: list[AnomalyCandidate] = []
    for c in range(k):
        members = np.nonzero(assignment.cluster == c)[0]
        if members.size == 0:
            continue
        centroid = {f: float(col[members].mean()) for f, col in columns.items()}
        evidence, ratios = _evaluate(centroid, rules, columns)
        attack = _pick_attack(ratios, ruleset.match_ratio)
        if attack is None:
            continue
        for i in members:
            conf = float(assignment.confidence[i])
            if conf < confidence_min:
                continue  # uncertain samples stay out of preliminary labeling
            out.append(AnomalyCandidate(
                entity_id=table.keys[i], perspective=perspective, attack=attack,
                evidence=dict(evidence), model_score=conf,
                offering_mix=dict(table.side_data.get(table.keys[i], {}))))
    out.sort(key=lambda cand: cand.entity_id)
    return out


def label_ip_clusters(table: PerspectiveTable, assignment: ClusterAssignment,
                      ruleset: RuleSet,
                      confidence_min: float = UNCERTAIN_CONFIDENCE) -> list[AnomalyCandidate]:
    """Type whole clusters by their centroid fingerprint, then emit the
    confident members as preliminary candidates."""
    return _label_clusters(table, assignment, ruleset, "ip", confidence_min)


def label_content_clusters(table: PerspectiveTable, assignment: ClusterAssignment,
                           ruleset: RuleSet,
                           confidence_min: float = UNCERTAIN_CONFIDENCE) -> list[AnomalyCandidate]:
    """Content candidates: pollution is the only content-side fingerprint."""
    return _label_clusters(table, assignment, ruleset, "content", confidence_min)


def label_outlier_nodes(table: PerspectiveTable, flagged: set[str],
                        ruleset: RuleSet,
                        scores: dict[str, float] | None = None) -> list[AnomalyCandidate]:
    """Type each isolation-flagged node by its own feature row; a node
    matching neither fingerprint becomes an UNKNOWN candidate and is still
    routed to correction."""
    rules = ruleset.for_perspective("node")
    columns = _columns(table, rules)
    out: list[AnomalyCandidate] = []
    for key in sorted(flagged):
        i = table.keys.index(key)
        row = {f: float(col[i]) for f, col in columns.items()}
        evidence, ratios = _evaluate(row, rules, columns)
        attack = _pick_attack(ratios, ruleset.match_ratio) or UNKNOWN
        out.append(AnomalyCandidate(
            entity_id=key, perspective="node", attack=attack,
            evidence=evidence, model_score=float(scores.get(key, 0.0)) if scores else 0.0,
            offering_mix=dict(table.side_data.get(key, {}))))
    return out
