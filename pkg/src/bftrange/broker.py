"""Mediated publish/subscribe, the append-only record store, and the Historian.

Topics are a fixed namespace mirroring the range's data flows.  Records are
immutable once appended and offsets are contiguous per topic.  The on-disk
format is length-prefixed frames with a CRC32 per record in segment files,
one directory per topic: recovery rescans segments and truncates a torn
tail, so a crash/restart never loses an acknowledged record.  Access control
is structural: twin-side principals simply hold no publish grant on any
operational topic.
"""

from __future__ import annotations

import fnmatch
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .gateway import CanonicalTimestamp

TOPICS = (
    "ot.telemetry",
    "ot.audit",
    "ot.actuation",
    "twin.results",
    "twin.advisory",
    "siem.events",
    "ext.events",
)

_FRAME = struct.Struct(">II")  # payload length, crc32


class BrokerError(Exception):
    pass


class Unauthorized(BrokerError):
    pass


class SchemaViolation(BrokerError):
    pass


class UnknownTopic(BrokerError):
    pass


class OffsetBeyondHead(BrokerError):
    pass


class RangeOutOfBounds(BrokerError):
    pass


class DanglingEvidence(BrokerError):
    pass


@dataclass
class Record:
    topic: str
    offset: int
    stamp: CanonicalTimestamp | None
    producer: str
    body: dict
    authenticator: str = ""
    transport_delay: int = 0
    late: bool = False
    arrival: int = 0
    id: int = 0

    def to_json(self) -> dict:
        return {
            "topic": self.topic,
            "offset": self.offset,
            "stamp": self.stamp.to_json() if self.stamp else None,
            "producer": self.producer,
            "body": self.body,
            "authenticator": self.authenticator,
            "transport_delay": self.transport_delay,
            "late": self.late,
        }

    @staticmethod
    def from_json(d: dict) -> "Record":
        stamp = CanonicalTimestamp.from_json(d["stamp"]) if d.get("stamp") else None
        return Record(d["topic"], d["offset"], stamp, d["producer"], d["body"],
                      d.get("authenticator", ""), d.get("transport_delay", 0),
                      d.get("late", False))

    def canonical(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True,
                          separators=(",", ":")).encode()


# Minimal structural schema per topic: field name -> required type(s).
_SCHEMAS: dict[str, dict[str, type | tuple]] = {
    "ot.telemetry": {"level": (int, float), "valve": (int, float), "mode": str},
    "ot.actuation": {"seq": int, "command": dict, "digest": str},
    "ot.audit": {"type": str},
    "twin.results": {"type": str},
    "twin.advisory": {"advisory_id": str, "claim": dict},
    "siem.events": {"type": str},
    "ext.events": {"kind": str},
}


def check_schema(topic: str, body: Any) -> None:
    if topic not in _SCHEMAS:
        raise UnknownTopic(topic)
    if not isinstance(body, dict):
        raise SchemaViolation(f"{topic}: body must be an object")
    for name, typ in _SCHEMAS[topic].items():
        if name not in body:
            raise SchemaViolation(f"{topic}: missing field {name!r}")
        if not isinstance(body[name], typ):
            raise SchemaViolation(f"{topic}: field {name!r} has wrong type")


class AccessPolicy:
    """principal pattern -> topic pattern -> granted actions."""

    def __init__(self, grants: list[tuple[str, str, set[str]]] | None = None):
        self.grants = grants if grants is not None else default_grants()

    def allows(self, principal: str, topic: str, action: str) -> bool:
        for p_pat, t_pat, actions in self.grants:
            if fnmatch.fnmatchcase(principal, p_pat) and \
                    fnmatch.fnmatchcase(topic, t_pat) and action in actions:
                return True
        return False

    def require(self, principal: str, topic: str, action: str) -> None:
        if not self.allows(principal, topic, action):
            raise Unauthorized(f"{principal} may not {action} on {topic}")


def default_grants() -> list[tuple[str, str, set[str]]]:
    """The advisory asymmetry is encoded here: no twin-side principal ever
    receives a publish grant on an `ot.*` topic."""
    return [
        ("plc", "ot.telemetry", {"publish"}),
        ("plc", "ot.actuation", {"subscribe"}),
        ("plc", "ot.audit", {"publish"}),
        ("r*", "ot.audit", {"publish"}),
        ("s*", "ot.audit", {"publish"}),
        ("manager", "ot.actuation", {"publish"}),
        ("manager", "ot.audit", {"publish", "subscribe"}),
        ("manager", "twin.advisory", {"subscribe"}),
        ("recorder", "ot.audit", {"publish"}),
        ("recorder", "siem.events", {"publish"}),
        ("recorder", "ext.events", {"publish"}),
        ("twin*", "ot.telemetry", {"subscribe"}),
        ("twin*", "ot.audit", {"subscribe"}),
        ("twin*", "twin.results", {"publish", "subscribe"}),
        ("twin*", "twin.advisory", {"publish", "subscribe"}),
        ("console", "*", {"subscribe"}),
        ("auditor", "*", {"subscribe"}),
    ]


TWIN_PRINCIPALS = ("twin", "twin.lab", "twin.sweep", "twin.whatif", "console")


class TopicLog:
    """One append-only log; optionally durable in segment files."""

    SEGMENT_RECORDS = 4096

    def __init__(self, topic: str, root: Path | None):
        self.topic = topic
        self.root = root
        self.records: list[Record] = []
        self._fh = None
        self._segment_index = 0
        if root is not None:
            self.dir = root / topic
            self.dir.mkdir(parents=True, exist_ok=True)
            self._recover()

    # -- durability ---------------------------------------------------------

    def _segments(self) -> list[Path]:
        return sorted(self.dir.glob("segment-*.log"))

    def _recover(self) -> None:
        self.records = []
        for seg in self._segments():
            raw = seg.read_bytes()
            pos = 0
            good = 0
            while pos + _FRAME.size <= len(raw):
                length, crc = _FRAME.unpack_from(raw, pos)
                end = pos + _FRAME.size + length
                if end > len(raw):
                    break
                payload = raw[pos + _FRAME.size:end]
                if zlib.crc32(payload) != crc:
                    break
                rec = Record.from_json(json.loads(payload.decode()))
                self.records.append(rec)
                pos = end
                good = pos
            if good < len(raw):
                # torn tail from a crash mid-write: drop it
                with seg.open("r+b") as fh:
                    fh.truncate(good)
        segs = self._segments()
        self._segment_index = max(
            (int(s.stem.split("-")[1]) for s in segs), default=-1)
        self._open_tail()

    def _open_tail(self) -> None:
        if self.root is None:
            return
        if self._segment_index < 0 or \
                len(self.records) // self.SEGMENT_RECORDS > self._segment_index:
            self._segment_index += 1
        path = self.dir / f"segment-{self._segment_index:05d}.log"
        self._fh = path.open("ab")

    def append(self, record: Record) -> int:
        record.offset = len(self.records)
        self.records.append(record)
        if self._fh is not None:
            payload = record.canonical()
            self._fh.write(_FRAME.pack(len(payload), zlib.crc32(payload)))
            self._fh.write(payload)
            self._fh.flush()
            if len(self.records) % self.SEGMENT_RECORDS == 0:
                self._fh.close()
                self._segment_index += 1
                self._fh = (self.dir / f"segment-{self._segment_index:05d}.log"
                            ).open("ab")
        return record.offset

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    @property
    def head(self) -> int:
        return len(self.records) - 1

    def read(self, lo: int, hi: int) -> list[Record]:
        if lo < 0 or hi > self.head or lo > hi + 1:
            raise RangeOutOfBounds(f"{self.topic}[{lo}:{hi}] head={self.head}")
        return self.records[lo:hi + 1]


@dataclass
class Subscription:
    principal: str
    topic: str
    cursor: int
    callback: Callable[[Record], None]
    live: bool = True


class Broker:
    """Policy-checked pub/sub over the per-topic logs.

    Appends are serialized by the owning scheduler; delivery to subscribers
    is scheduled as immediate events so fan-out order is deterministic.
    """

    def __init__(self, policy: AccessPolicy, root: str | Path | None = None,
                 sched=None, name: str = "broker"):
        self.policy = policy
        self.root = Path(root) if root is not None else None
        self.sched = sched
        self.name = name
        self.logs: dict[str, TopicLog] = {
            t: TopicLog(t, self.root) for t in TOPICS}
        self.subs: list[Subscription] = []
        self._sub_seq = 0
        if sched is not None:
            sched.register(self.name, self._on_event)

    # -- core ----------------------------------------------------------------

    def head(self, topic: str) -> int:
        if topic not in self.logs:
            raise UnknownTopic(topic)
        return self.logs[topic].head

    def append(self, record: Record) -> int:
        """Policy+schema-checked append plus subscriber fan-out."""
        self.policy.require(record.producer, record.topic, "publish")
        check_schema(record.topic, record.body)
        if record.topic not in self.logs:
            raise BrokerError("store unavailable (crashed)")
        offset = self.logs[record.topic].append(record)
        self._fan_out(record)
        return offset

    def _fan_out(self, record: Record) -> None:
        for sub in self.subs:
            if sub.live and sub.topic == record.topic and record.offset == sub.cursor:
                sub.cursor += 1
                self._deliver(sub, record)

    def _deliver(self, sub: Subscription, record: Record) -> None:
        if self.sched is not None:
            self.sched.schedule(self.sched.now, self.name,
                                ("deliver", sub, record), emitter=self.name)
        else:
            sub.callback(record)

    def _on_event(self, event) -> None:
        kind = event.payload[0]
        if kind == "deliver":
            _, sub, record = event.payload
            sub.callback(record)
        elif kind == "catchup":
            _, sub = event.payload
            self._catchup(sub)

    def _catchup(self, sub: Subscription) -> None:
        log = self.logs[sub.topic]
        while sub.cursor <= log.head:
            record = log.records[sub.cursor]
            sub.cursor += 1
            sub.callback(record)

    def subscribe(self, principal: str, topic: str, from_offset: int,
                  callback: Callable[[Record], None]) -> Subscription:
        self.policy.require(principal, topic, "subscribe")
        head = self.head(topic)
        if from_offset > head + 1:
            raise OffsetBeyondHead(f"{topic}: from={from_offset} head={head}")
        sub = Subscription(principal, topic, from_offset, callback)
        self.subs.append(sub)
        if from_offset <= head:
            if self.sched is not None:
                self.sched.schedule(self.sched.now, self.name,
                                    ("catchup", sub), emitter=self.name)
            else:
                self._catchup(sub)
        return sub

    def replay(self, topic: str, lo: int, hi: int) -> list[Record]:
        if topic not in self.logs:
            raise UnknownTopic(topic)
        if hi < lo:
            return []
        return self.logs[topic].read(lo, hi)

    def content_hash(self) -> str:
        import hashlib
        h = hashlib.blake2b(digest_size=16)
        for topic in TOPICS:
            for rec in self.logs[topic].records:
                h.update(rec.canonical())
        return h.hexdigest()

    # -- crash-fault behavior ---------------------------------------------------

    def crash(self, torn_tail: bool = False) -> None:
        """Drop all in-memory state, abandoning open handles; optionally leave
        a half-written frame behind, as a mid-write crash would."""
        for log in self.logs.values():
            if log._fh is not None and torn_tail:
                log._fh.write(_FRAME.pack(1 << 20, 0xDEAD))
                log._fh.write(b"torn")
                log._fh.flush()
            log.close()
        self.logs = {}
        self.subs = []

    def reopen(self) -> None:
        self.logs = {t: TopicLog(t, self.root) for t in TOPICS}

    def restart(self, torn_tail: bool = False) -> None:
        """Crash and recover the store while the session layer keeps its
        subscriptions (cursors live in the Subscription objects)."""
        subs = self.subs
        self.crash(torn_tail=torn_tail)
        self.reopen()
        self.subs = subs


class Historian:
    """Durable store of verified configurations with supporting evidence."""

    def __init__(self, path: str | Path,
                 evidence_resolver: Callable[[str], bool] | None = None):
        self.path = Path(path)
        self.resolver = evidence_resolver or (lambda ref: True)
        self.entries: list[dict] = []
        if self.path.exists():
            with self.path.open() as fh:
                self.entries = [json.loads(line) for line in fh if line.strip()]

    def put(self, config: dict, evidence: list[str], verdict: str,
            stamp: dict | None = None) -> str:
        for ref in evidence:
            if not self.resolver(ref):
                raise DanglingEvidence(ref)
        import hashlib
        config_hash = hashlib.blake2b(
            json.dumps(config, sort_keys=True).encode(), digest_size=8).hexdigest()
        entry = {
            "id": f"h{len(self.entries):04d}",
            "config": config,
            "config_hash": config_hash,
            "evidence": list(evidence),
            "verdict": verdict,
            "created": stamp,
        }
        self.entries.append(entry)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
        return entry["id"]

    def query(self, **filters) -> list[dict]:
        out = []
        for e in self.entries:
            if all(e.get(k) == v for k, v in filters.items()):
                out.append(e)
        return out
