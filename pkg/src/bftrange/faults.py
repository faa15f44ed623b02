"""Declarative Byzantine behavior engine interposed on replicas and the network.

A FaultSpec binds one behavior (equivocation, state lies, selective loss,
timing manipulation, crash, partition) to replicas, a message predicate and
an activation window.  Matching is first-spec-wins in declaration order, and
every applied action lands in the injection trace, so any divergence from an
honest run is attributable to exactly one entry.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .network import Action, Envelope, KeyRing


class FaultKind(str, Enum):
    EQUIVOCATE = "equivocate"
    STATE_LIE = "state_lie"
    SELECTIVE_DROP = "selective_drop"
    DELAY = "delay"
    CRASH = "crash"
    DELAY_STRETCH = "delay_stretch"
    PARTITION = "partition"


# Kinds that make a replica count against the model's fault bound f.
# Timing manipulation and partitions belong to the network adversary the
# partial-synchrony model already admits, so they are not charged to f.
BYZANTINE_KINDS = frozenset(
    {FaultKind.EQUIVOCATE, FaultKind.STATE_LIE, FaultKind.SELECTIVE_DROP, FaultKind.CRASH}
)


class FaultError(Exception):
    pass


class UnknownReplica(FaultError):
    pass


@dataclass(frozen=True)
class MessagePredicate:
    """Structural match on consensus traffic; None fields match anything."""

    kinds: tuple[str, ...] | None = None
    views: tuple[int, ...] | None = None
    srcs: tuple[str, ...] | None = None
    dsts: tuple[str, ...] | None = None

    def matches(self, src: str, dst: str, body: Any) -> bool:
        if self.srcs is not None and src not in self.srcs:
            return False
        if self.dsts is not None and dst not in self.dsts:
            return False
        if self.kinds is not None:
            if not isinstance(body, dict) or body.get("kind") not in self.kinds:
                return False
        if self.views is not None:
            if not isinstance(body, dict) or body.get("view") not in self.views:
                return False
        return True

    @staticmethod
    def from_json(d: dict) -> "MessagePredicate":
        tup = lambda v: tuple(v) if v is not None else None
        return MessagePredicate(tup(d.get("kinds")), tup(d.get("views")),
                                tup(d.get("srcs")), tup(d.get("dsts")))


@dataclass
class FaultSpec:
    id: str
    kind: FaultKind
    bound_replicas: tuple[str, ...] = ()
    match: MessagePredicate = field(default_factory=MessagePredicate)
    window: tuple[int, int] = (0, 2**62)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.window[0] >= self.window[1]:
            raise FaultError(f"spec {self.id}: malformed window {self.window}")

    def active(self, now: int) -> bool:
        return self.window[0] <= now < self.window[1]

    @staticmethod
    def from_json(d: dict) -> "FaultSpec":
        return FaultSpec(
            id=d["id"],
            kind=FaultKind(d["kind"]),
            bound_replicas=tuple(d.get("bound", ())),
            match=MessagePredicate.from_json(d.get("match", {})),
            window=tuple(d.get("window", (0, 2**62))),
            params=dict(d.get("params", {})),
        )

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "bound": list(self.bound_replicas),
            "match": {
                "kinds": list(self.match.kinds) if self.match.kinds else None,
                "views": list(self.match.views) if self.match.views else None,
                "srcs": list(self.match.srcs) if self.match.srcs else None,
                "dsts": list(self.match.dsts) if self.match.dsts else None,
            },
            "window": list(self.window),
            "params": self.params,
        }


@dataclass(frozen=True)
class TraceEntry:
    spec_id: str
    at: int
    action: str
    detail: str

    def to_json(self) -> dict:
        return {"spec": self.spec_id, "at": self.at,
                "action": self.action, "detail": self.detail}


def byzantine_replicas(specs: list[FaultSpec]) -> set[str]:
    out: set[str] = set()
    for s in specs:
        if s.kind in BYZANTINE_KINDS:
            out |= set(s.bound_replicas)
    return out


def check_fault_bound(specs: list[FaultSpec], f: int, exceeds_flag: bool) -> list[str]:
    """Within-model rule: at most f replicas may act Byzantine without the
    explicit exceed flag. Returns a list of violation messages."""
    byz = byzantine_replicas(specs)
    if len(byz) > f and not exceeds_flag:
        return [
            f"fault specs bind {len(byz)} replicas ({sorted(byz)}) to Byzantine "
            f"behaviors but f={f}; set exceeds_fault_bound to run out-of-model"
        ]
    return []


def mutate_command(request: dict, salt: int) -> dict:
    """Deterministic conflicting variant of a proposal's request payload."""
    forged = copy.deepcopy(request)
    cmd = forged.setdefault("command", {})
    if isinstance(cmd.get("value"), (int, float)):
        cmd["value"] = cmd["value"] + salt
    cmd["equivocation_salt"] = salt
    return forged


class FaultInjector:
    """Pure function of (spec set, envelope, time) plus an append-only trace."""

    def __init__(self, specs: list[FaultSpec], keyring: KeyRing,
                 membership: list[str] | None = None):
        self.specs = list(specs)
        self.keyring = keyring
        self.membership = list(membership or [])
        self.trace: list[TraceEntry] = []
        self._crashed: dict[str, bool] = {}

    # -- spec management -------------------------------------------------

    def add_spec(self, spec: FaultSpec) -> None:
        self.specs.append(spec)

    def _record(self, spec_id: str, at: int, action: str, detail: str) -> None:
        self.trace.append(TraceEntry(spec_id, at, action, detail))

    # -- network interposition -------------------------------------------

    def stretch_factor(self, env: Envelope, now: int) -> float:
        for spec in self.specs:
            if spec.kind is FaultKind.DELAY_STRETCH and spec.active(now) \
                    and spec.match.matches(env.src, env.dst, env.body):
                factor = float(spec.params.get("factor", 10.0))
                self._record(spec.id, now, "stretch",
                             f"{env.src}->{env.dst} x{factor}")
                return factor
        return 1.0

    def intercept(self, env: Envelope, now: int) -> Action:
        """First matching active spec decides; no match means honest delivery."""
        for spec in self.specs:
            if not spec.active(now):
                continue
            if spec.kind is FaultKind.SELECTIVE_DROP:
                if env.src in spec.bound_replicas and \
                        spec.match.matches(env.src, env.dst, env.body):
                    self._record(spec.id, now, "drop",
                                 f"{env.src}->{env.dst} {self._kind_of(env)}")
                    return Action.drop()
            elif spec.kind is FaultKind.DELAY:
                if spec.match.matches(env.src, env.dst, env.body):
                    d = int(spec.params.get("delay_us", 0))
                    self._record(spec.id, now, "delay",
                                 f"{env.src}->{env.dst} {self._kind_of(env)} +{d}us")
                    return Action.delayed(d)
            elif spec.kind is FaultKind.EQUIVOCATE:
                if env.src in spec.bound_replicas and \
                        spec.match.matches(env.src, env.dst, env.body):
                    recipients = [m for m in self.membership if m != env.src]
                    if env.dst not in recipients:
                        recipients.append(env.dst)
                    variants = self.equivocate(spec, env.body, recipients)
                    body = variants.get(env.dst, env.body)
                    if body is not env.body:
                        self._record(spec.id, now, "equivocate",
                                     f"{env.src}->{env.dst} forged variant")
                        return Action.replace(body)
                    return Action.deliver()
        return Action.deliver()

    @staticmethod
    def _kind_of(env: Envelope) -> str:
        return env.body.get("kind", "?") if isinstance(env.body, dict) else "?"

    # -- Byzantine behaviors ----------------------------------------------

    def equivocate(self, spec: FaultSpec, body: dict, recipients: list[str]) -> dict:
        """Per-recipient variants of one statement about a (view, seq) slot.

        The first half of the recipient set (in membership order) gets the
        honest statement, the rest a forged proposal with a conflicting
        digest.  With fewer than two recipients the behavior degenerates to
        honest delivery: equivocation needs at least two views of the lie.
        The forged variant is re-tagged with the Byzantine sender's own key
        on the wire, so it verifies like any message from that sender.
        """
        if len(recipients) < 2:
            return {dst: body for dst in recipients}

        def pos(r: str) -> tuple:
            in_m = r in self.membership
            return (self.membership.index(r) if in_m else len(self.membership), r)

        order = sorted(recipients, key=pos)
        honest_half = (len(order) + 1) // 2
        forged = copy.deepcopy(body)
        if "request" in forged:
            forged["request"] = mutate_command(forged["request"],
                                               int(spec.params.get("salt", 1)))
            from .consensus import request_digest
            forged["digest"] = request_digest(forged["request"])
        return {dst: (body if i < honest_half else forged)
                for i, dst in enumerate(order)}

    def falsify_state(self, spec: FaultSpec, truthful: dict) -> dict:
        """Mutate a state report per the fault parameters, deterministically."""
        mode = spec.params.get("mode", "digest")
        report = copy.deepcopy(truthful)
        if mode == "identity":
            return report
        if mode == "rollback":
            k = int(spec.params.get("rollback", 1))
            report["checkpoint_seq"] = max(0, report.get("checkpoint_seq", 0) - k)
            report["last_decided_seq"] = max(0, report.get("last_decided_seq", 0) - k)
            report["digest"] = "rolled:" + report.get("digest", "")[:16]
        else:  # digest substitution
            report["digest"] = "lie:" + report.get("digest", "")[:16]
        return report

    def maybe_falsify(self, replica: str, truthful: dict, now: int) -> dict:
        for spec in self.specs:
            if spec.kind is FaultKind.STATE_LIE and spec.active(now) \
                    and replica in spec.bound_replicas:
                forged = self.falsify_state(spec, truthful)
                if forged != truthful:
                    self._record(spec.id, now, "state_lie",
                                 f"{replica} mode={spec.params.get('mode', 'digest')}")
                return forged
        return truthful

    # -- crash / recover ---------------------------------------------------

    def crash(self, spec_id: str, replica: str, at: int) -> bool:
        if self.membership and replica not in self.membership:
            raise UnknownReplica(replica)
        if self._crashed.get(replica):
            return False  # already down: second crash is a no-op
        self._crashed[replica] = True
        self._record(spec_id, at, "crash", replica)
        return True

    def recover(self, replica: str, at: int) -> bool:
        if not self._crashed.get(replica):
            return False
        self._crashed[replica] = False
        self._record("-", at, "recover", replica)
        return True

    def is_crashed(self, replica: str) -> bool:
        return bool(self._crashed.get(replica))

    def trace_json(self) -> list[dict]:
        return [t.to_json() for t in self.trace]
