"""Simulated network: a deterministic OT lane and a partially synchronous lane.

Delivery delays come from per-lane rules; every send passes through the
fault interceptor so every deviation from honest delivery is attributable
to a declared fault, never to ambient randomness.  Authenticators are keyed
simulation tags standing in for signatures: any mutation of body or claimed
sender makes verification fail, and only the holder of a sender's key can
produce a valid tag for it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable

from .gateway import CanonicalTimestamp, TimeMapping
from .sim import MS, LogicalClock, Scheduler, derive_seed


class NetError(Exception):
    pass


class UnknownEndpoint(NetError):
    pass


class OverlappingGroups(NetError):
    pass


# Interceptor verdicts. Replace carries per-destination substitute bodies.
class ActionKind(Enum):
    DELIVER = "deliver"
    DROP = "drop"
    DELAY = "delay"
    REPLACE = "replace"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    delay: int = 0
    replacement: Any = None

    @staticmethod
    def deliver() -> "Action":
        return Action(ActionKind.DELIVER)

    @staticmethod
    def drop() -> "Action":
        return Action(ActionKind.DROP)

    @staticmethod
    def delayed(d: int) -> "Action":
        return Action(ActionKind.DELAY, delay=d)

    @staticmethod
    def replace(body: Any) -> "Action":
        return Action(ActionKind.REPLACE, replacement=body)


DROPPED = -1


def canonical_bytes(body: Any) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


class KeyRing:
    """Per-component simulation keys; tags bind (src, body).

    Verification is an oracle available to every component: the threat model
    assumes sound certificate management, so tags behave like signatures.
    """

    def __init__(self, seed: int):
        self._seed = seed

    def _key(self, name: str) -> bytes:
        return derive_seed(self._seed, f"key/{name}").to_bytes(8, "big")

    def tag(self, src: str, body: Any) -> str:
        h = hashlib.blake2b(canonical_bytes(body), digest_size=12,
                            key=self._key(src), person=src.encode()[:16])
        return h.hexdigest()

    def verify(self, src: str, body: Any, tag: str) -> bool:
        return self.tag(src, body) == tag


class LaneKind(Enum):
    DETERMINISTIC = "deterministic"
    PARTIAL_SYNC = "partial_sync"


@dataclass
class Lane:
    """One timing regime connecting a set of components.

    Deterministic: delay in [base_delay, base_delay + jitter_bound], always.
    PartialSync:   after gst every sampled delay <= post_gst_bound; before
                   gst delays are finite but only capped by pre_gst_cap (a
                   scenario-level modeling cap, since no quantitative pre-GST
                   bound exists in the model).
    """

    name: str
    kind: LaneKind
    members: list[str]
    base_delay: int = 200
    jitter_bound: int = 0
    gst: int = 0
    post_gst_bound: int = 5 * MS
    pre_gst_cap: int = 200 * MS
    sigma: float = 0.8  # log-normal shape for the partial-sync regime

    def sample_delay(self, rng, now: int, stretch: float = 1.0) -> int:
        if self.kind is LaneKind.DETERMINISTIC:
            jitter = rng.randint(0, self.jitter_bound) if self.jitter_bound else 0
            return self.base_delay + jitter
        # Partial synchrony: truncated log-normal over the base delay.
        spread = rng.lognormvariate(0.0, self.sigma)
        d = int(self.base_delay * spread * stretch)
        if now >= self.gst and stretch == 1.0:
            return max(self.base_delay, min(d, self.post_gst_bound))
        return max(self.base_delay, min(d, self.pre_gst_cap))


def sample_delay(lane: Lane, rng, now: int) -> int:
    return lane.sample_delay(rng, now)


@dataclass
class Envelope:
    src: str
    dst: str
    lane: str
    sent_at: CanonicalTimestamp
    body: Any
    authenticator: str
    event_id: int = -1

    def verify(self, keyring: KeyRing) -> bool:
        return keyring.verify(self.src, self.body, self.authenticator)


@dataclass
class Partition:
    groups: list[frozenset]
    until: int

    def blocks(self, src: str, dst: str, now: int) -> bool:
        if now >= self.until:
            return False
        for g in self.groups:
            if src in g:
                return dst not in g
        return False


class Network:
    """Lane-based message fabric driven by the owning scheduler."""

    def __init__(self, sched: Scheduler, keyring: KeyRing,
                 mapping: TimeMapping | None = None, injector=None):
        self.sched = sched
        self.keyring = keyring
        self.mapping = mapping or TimeMapping()
        self.injector = injector  # duck-typed: intercept(env, now) -> Action|None
        self.lanes: dict[str, Lane] = {}
        self.clocks: dict[str, LogicalClock] = {}
        self.handlers: dict[str, Callable[[Envelope], None]] = {}
        self._partitions: list[Partition] = []
        self.delivery_log: list[tuple[int, str, str, int]] = []  # (event id, src, dst, delivered_at)

    def add_lane(self, lane: Lane) -> None:
        self.lanes[lane.name] = lane
        for m in lane.members:
            self.clocks.setdefault(m, LogicalClock())
            self.sched.rng.register(f"lane/{lane.name}/{m}")

    def attach(self, name: str, handler: Callable[[Envelope], None]) -> None:
        self.clocks.setdefault(name, LogicalClock())
        self.handlers[name] = handler
        self.sched.register(f"net/{name}", self._dispatch)

    def lane_for(self, src: str, dst: str) -> Lane:
        for lane in self.lanes.values():
            if src in lane.members and dst in lane.members:
                return lane
        raise UnknownEndpoint(f"no lane joins {src} -> {dst}")

    def clock(self, name: str) -> LogicalClock:
        return self.clocks.setdefault(name, LogicalClock())

    def partition(self, groups: list[set], until: int) -> None:
        seen: set = set()
        fz = []
        for g in groups:
            if seen & set(g):
                raise OverlappingGroups(f"component in two groups: {sorted(seen & set(g))}")
            seen |= set(g)
            fz.append(frozenset(g))
        if not fz:
            return
        self._partitions.append(Partition(fz, until))

    def _partitioned(self, src: str, dst: str, now: int) -> bool:
        self._partitions = [p for p in self._partitions if now < p.until]
        return any(p.blocks(src, dst, now) for p in self._partitions)

    def send(self, src: str, dst: str, body: Any, authenticator: str | None = None) -> int:
        """Schedule one delivery; returns the delivery event id or DROPPED."""
        now = self.sched.now
        lane = self.lane_for(src, dst)
        if dst not in self.handlers:
            raise UnknownEndpoint(dst)
        logical = self.clock(src).tick()
        stamp = CanonicalTimestamp(now, logical, self.mapping.to_twin(now))
        tag = authenticator if authenticator is not None else self.keyring.tag(src, body)
        env = Envelope(src, dst, lane.name, stamp, body, tag)

        if self._partitioned(src, dst, now):
            return DROPPED

        rng = self.sched.rng.get(f"lane/{lane.name}/{src}")
        stretch = 1.0
        if self.injector is not None:
            stretch = self.injector.stretch_factor(env, now)
        delay = lane.sample_delay(rng, now, stretch)

        if self.injector is not None:
            act = self.injector.intercept(env, now)
            if act.kind is ActionKind.DROP:
                return DROPPED
            if act.kind is ActionKind.DELAY:
                delay = act.delay
            elif act.kind is ActionKind.REPLACE:
                env.body = act.replacement
                env.authenticator = self.keyring.tag(src, act.replacement)

        eid = self.sched.schedule(now + delay, f"net/{dst}", env, emitter=src)
        env.event_id = eid
        return eid

    def broadcast(self, src: str, dsts: list[str], body: Any) -> list[int]:
        tag = self.keyring.tag(src, body)
        return [self.send(src, d, body, authenticator=tag) for d in dsts if d != src]

    def _dispatch(self, event) -> None:
        env: Envelope = event.payload
        self.clock(env.dst).observe(env.sent_at.logical)
        self.delivery_log.append((event.id, env.src, env.dst, self.sched.now))
        handler = self.handlers.get(env.dst)
        if handler is not None:
            handler(env)
