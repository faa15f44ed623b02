"""The asymmetric feedback loop between the twin and the supervisory manager.

Advisories are read-only intents: structurally they can only carry config
deltas over the tunable-parameter whitelist or a replica replacement, never
an actuation or plant command.  The manager alone reviews them (auto-apply
inside policy bounds, human confirmation otherwise) and turns accepted ones
into consensus commands, so the replicated system itself orders every live
configuration change.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any

from .twin import SAFE_LIVE, VIOLATING, VulnerabilityMap, WhatIfReport


class AdvisoryError(Exception):
    pass


class UnresolvableEvidence(AdvisoryError):
    pass


class AlreadyDecided(AdvisoryError):
    pass


class MembershipViolation(AdvisoryError):
    pass


class InvalidRecommendation(AdvisoryError):
    pass


APPLY = "Apply"
REJECT = "Reject"
DEFER = "Defer"


@dataclass(frozen=True)
class ConfigDelta:
    """Whitelisted parameter changes; anything else refuses to construct."""

    changes: tuple  # ((path, value), ...)

    def __post_init__(self):
        from .scenario import is_tunable
        for path, _ in self.changes:
            if not is_tunable(path):
                raise InvalidRecommendation(
                    f"{path!r} is not a tunable parameter")

    def as_dict(self) -> dict:
        return dict(self.changes)

    @staticmethod
    def of(**kwargs) -> "ConfigDelta":
        return ConfigDelta(tuple(sorted(kwargs.items())))

    @staticmethod
    def from_paths(changes: dict) -> "ConfigDelta":
        return ConfigDelta(tuple(sorted(changes.items())))


@dataclass(frozen=True)
class ReplicaReplacement:
    remove: str
    add: str


@dataclass
class Advisory:
    id: str
    source: str                     # twin run / report reference
    claim: dict                     # structured finding
    recommendation: ConfigDelta | ReplicaReplacement
    evidence: list[str]
    stamp: dict | None = None

    def to_json(self) -> dict:
        rec: dict[str, Any]
        if isinstance(self.recommendation, ConfigDelta):
            rec = {"kind": "config", "changes": self.recommendation.as_dict()}
        else:
            rec = {"kind": "replace", "remove": self.recommendation.remove,
                   "add": self.recommendation.add}
        return {"advisory_id": self.id, "source": self.source,
                "claim": self.claim, "recommendation": rec,
                "evidence": list(self.evidence), "stamp": self.stamp}

    @staticmethod
    def from_json(d: dict) -> "Advisory":
        rec = d["recommendation"]
        if rec["kind"] == "config":
            recommendation: ConfigDelta | ReplicaReplacement = \
                ConfigDelta.from_paths(rec["changes"])
        else:
            recommendation = ReplicaReplacement(rec["remove"], rec["add"])
        return Advisory(d["advisory_id"], d["source"], d["claim"],
                        recommendation, list(d.get("evidence", [])),
                        d.get("stamp"))


def payload_field_names() -> list[str]:
    """The full Advisory payload space, for the structural asymmetry test."""
    names = [f.name for f in fields(Advisory)]
    names += [f.name for f in fields(ConfigDelta)]
    names += [f.name for f in fields(ReplicaReplacement)]
    return names


@dataclass
class ManagerDecision:
    advisory_id: str
    verdict: str
    rationale: str
    applied_delta: dict | None = None
    operator: str = "policy"
    stamp: dict | None = None

    def to_json(self) -> dict:
        return {"type": "manager_decision", "advisory_id": self.advisory_id,
                "verdict": self.verdict, "rationale": self.rationale,
                "applied_delta": self.applied_delta, "operator": self.operator,
                "stamp": self.stamp}


@dataclass
class Policy:
    """Auto-apply bounds; replica replacement always needs a human by default."""

    auto_timeout_factor: tuple[float, float] = (2.0, 10.0)
    require_human: frozenset = frozenset({"replace"})
    min_timeout_ms: float = 2.0
    reference_bound_ms: float = 5.0   # measured / configured post-GST bound

    def review(self, adv: Advisory) -> tuple[str, str]:
        """Returns (verdict, rationale) for one undecided advisory."""
        if isinstance(adv.recommendation, ReplicaReplacement):
            if "replace" in self.require_human:
                return DEFER, "replica replacement requires human confirmation"
            return APPLY, "replacement auto-approved by policy"
        changes = adv.recommendation.as_dict()
        for path, value in changes.items():
            if path == "consensus.timeout_ms":
                if value < self.min_timeout_ms:
                    return REJECT, (f"timeout {value}ms below minimum cycle "
                                    f"budget {self.min_timeout_ms}ms")
                lo = self.auto_timeout_factor[0] * self.reference_bound_ms
                hi = self.auto_timeout_factor[1] * self.reference_bound_ms
                if not lo <= value <= hi:
                    return DEFER, (f"timeout {value}ms outside auto-apply "
                                   f"bounds [{lo}, {hi}]ms")
            else:
                return DEFER, f"{path} changes require human confirmation"
        return APPLY, "within auto-apply bounds"


def advisory_from_map(vmap: VulnerabilityMap, live_scenario: dict,
                      source: str, margin_steps: int = 1) -> Advisory | None:
    """Recommend the smallest timeout whose whole grid row is safe, plus a
    margin, when the live timeout sits inside or at the violation frontier."""
    timeout_axis = None
    for i, ax in enumerate(vmap.axes):
        if ax["name"] == "consensus.timeout_ms":
            timeout_axis = i
            break
    if timeout_axis is None:
        return None
    values = vmap.axes[timeout_axis]["values"]
    live_timeout = live_scenario["consensus"]["timeout_ms"]

    def row_safe(idx: int) -> bool:
        for key, cell in vmap.cells.items():
            coords = [int(c) for c in key.split(",")]
            if coords[timeout_axis] == idx and cell["outcome"] in VIOLATING:
                return False
        return True

    frontier_idx = None
    for idx in range(len(values)):
        if row_safe(idx):
            frontier_idx = idx
            break
    if frontier_idx is None:
        frontier_idx = len(values) - 1
    frontier = values[frontier_idx]
    step = values[1] - values[0] if len(values) > 1 else 1
    safe_timeout = frontier + margin_steps * step
    if live_timeout >= safe_timeout:
        return None
    return Advisory(
        id=f"adv-{vmap.id}",
        source=source,
        claim={"finding": "timeout_below_safe_frontier",
               "live_timeout_ms": live_timeout,
               "frontier_timeout_ms": frontier,
               "map": vmap.id},
        recommendation=ConfigDelta.of(**{"consensus.timeout_ms": safe_timeout}),
        evidence=[vmap.id],
    )


def advisory_from_report(report: WhatIfReport, source: str) -> Advisory | None:
    if report.outcome == SAFE_LIVE:
        return None
    timeout = None
    for path, value in report.delta.items():
        if path == "consensus.timeout_ms":
            timeout = value
    claim = {"finding": "whatif_violation", "outcome": report.outcome,
             "report": report.id}
    rec = ConfigDelta.of(**{"consensus.timeout_ms": (timeout or 0) * 2 or 100})
    return Advisory(id=f"adv-{report.id}", source=source, claim=claim,
                    recommendation=rec, evidence=[report.id])


def resolve_evidence(adv: Advisory, known: set[str]) -> None:
    """Every evidence reference must resolve to a stored report or map."""
    for ref in adv.evidence:
        if ref not in known:
            raise UnresolvableEvidence(ref)


def check_membership_delta(membership: list[str], remove: str,
                           add: str | None, n_required: int) -> None:
    """A swap must keep the acting membership at 3f+1 at every instant."""
    if remove not in membership:
        raise MembershipViolation(f"{remove} not in membership")
    if add is not None and add in membership:
        raise MembershipViolation(f"{add} already in membership")
    new_size = len(membership) - 1 + (1 if add else 0)
    if new_size < n_required:
        raise MembershipViolation(
            f"membership would drop to {new_size} < {n_required} (3f+1)")
