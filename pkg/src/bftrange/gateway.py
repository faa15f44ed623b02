"""Temporal alignment between the operational plane and the twin.

Every record crossing toward the broker gets a canonical timestamp: the
operational real axis (scheduler ticks), a Lamport logical axis, and the
twin replay axis.  Twin time is an exact rational multiple of real time so
replay hashes stay bit-stable under any speed factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from .sim import LogicalClock

TwinTime = Fraction


class GatewayError(Exception):
    pass


class AlreadyStamped(GatewayError):
    pass


class PreEpoch(GatewayError):
    pass


class UnstampedEvent(GatewayError):
    pass


@dataclass(frozen=True)
class TimeMapping:
    """twin = scale * (real - epoch); scale is an exact positive rational."""

    epoch: int = 0
    scale: Fraction = Fraction(1)
    version: int = 0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def to_twin(self, t: int) -> TwinTime:
        if t < self.epoch:
            raise PreEpoch(f"t={t} < epoch={self.epoch}")
        return self.scale * (t - self.epoch)

    def from_twin(self, tw: TwinTime) -> int:
        real = Fraction(tw) / self.scale + self.epoch
        if real.denominator != 1:
            raise GatewayError(f"twin time {tw} not on a tick boundary")
        return int(real)


def to_twin_time(t: int, m: TimeMapping) -> TwinTime:
    return m.to_twin(t)


def from_twin_time(tw: TwinTime, m: TimeMapping) -> int:
    return m.from_twin(tw)


@dataclass(frozen=True)
class CanonicalTimestamp:
    real: int
    logical: int
    twin: TwinTime

    def to_json(self) -> dict:
        return {"real": self.real, "logical": self.logical, "twin": str(self.twin)}

    @staticmethod
    def from_json(d: dict) -> "CanonicalTimestamp":
        return CanonicalTimestamp(d["real"], d["logical"], Fraction(d["twin"]))

    def sort_key(self) -> tuple:
        return (self.real, self.logical)


class TimeGateway:
    """Stamps events once at the plane boundary and orders them for consumers."""

    def __init__(self, mapping: TimeMapping | None = None):
        self.mapping = mapping or TimeMapping()
        self.clock = LogicalClock()

    def set_mapping(self, mapping: TimeMapping) -> None:
        # Mappings never apply retroactively: bump version, keep stamps issued.
        if mapping.version <= self.mapping.version:
            mapping = TimeMapping(mapping.epoch, mapping.scale, self.mapping.version + 1)
        self.mapping = mapping

    def canonical_stamp(self, event: Any, now: int,
                        producer_logical: int | None = None) -> CanonicalTimestamp:
        """Populate all three axes on `event.stamp`; a second call fails."""
        if getattr(event, "stamp", None) is not None:
            raise AlreadyStamped(f"event already stamped at {event.stamp}")
        if producer_logical is None:
            logical = self.clock.tick()
        else:
            logical = self.clock.observe(producer_logical)
        stamp = CanonicalTimestamp(now, logical, self.mapping.to_twin(now))
        event.stamp = stamp
        return stamp

    def order_batch(self, events: list) -> list:
        """Sort stamped events by (real, logical, id), annotating transport delay.

        Each event needs `.stamp`, `.arrival` and `.id`; the sort never
        violates causal (logical) order because Lamport stamps grow along
        every message chain.
        """
        for ev in events:
            if getattr(ev, "stamp", None) is None:
                raise UnstampedEvent(repr(ev))
        ordered = sorted(events, key=lambda e: (e.stamp.real, e.stamp.logical, e.id))
        for ev in ordered:
            ev.transport_delay = ev.arrival - ev.stamp.real
        return ordered


@dataclass
class _Buffered:
    release_at: int
    seq: int
    item: Any


class ReorderBuffer:
    """Fixed-window reordering stage in front of the broker.

    Arrivals are held for `window` ticks, then released in stamp order.
    A straggler arriving after the released watermark passed its stamp is
    released immediately with late=True instead of being dropped: the twin
    must see all data, but flagged so consumers know ordering was best-effort.
    """

    def __init__(self, window: int):
        self.window = window
        self._held: list[_Buffered] = []
        self._seq = 0
        self.watermark = -1  # max stamp.real released so far

    def push(self, item: Any, arrival: int) -> list:
        """Insert one arrival; returns items released immediately (late ones)."""
        item.arrival = arrival
        item.transport_delay = arrival - item.stamp.real
        if item.stamp.real < self.watermark:
            item.late = True
            return [item]
        item.late = False
        self._held.append(_Buffered(arrival + self.window, self._seq, item))
        self._seq += 1
        return []

    def release(self, now: int) -> list:
        """Release every held item whose window elapsed, in stamp order."""
        due = [b for b in self._held if b.release_at <= now]
        if not due:
            return []
        # Anything stamped no later than the newest due item must go too,
        # otherwise a later flush would emit it out of order.
        horizon = max(b.item.stamp.real for b in due)
        out = [b for b in self._held
               if b.release_at <= now or b.item.stamp.real <= horizon]
        self._held = [b for b in self._held if b not in out]
        out.sort(key=lambda b: (b.item.stamp.real, b.item.stamp.logical, b.seq))
        released = [b.item for b in out]
        if released:
            self.watermark = max(self.watermark, released[-1].stamp.real)
        return released

    def pending(self) -> int:
        return len(self._held)
