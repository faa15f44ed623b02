"""Single-tank process plus a PLC with safety logic and a watchdog.

The tank is the minimal plant where unsafe actuation has a visible physical
consequence (overflow): level' = level + (inflow*valve - outflow)*dt, clamped
to [0, capacity].  The PLC runs a proportional loop at a fixed cycle and
drops to fail-safe (valve closed) whenever supervision goes silent for more
than W cycles or a reading crosses the hard safety bounds.  FailSafe only
clears on an explicit operator reset.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .sim import MS, SECOND

NORMAL = "Normal"
FAILSAFE = "FailSafe"

HEALTHY = "Healthy"
FAILSAFE_TRIGGERED = "FailSafeTriggered"


class PlantError(Exception):
    pass


class InvalidCommand(PlantError):
    pass


@dataclass
class PlantState:
    level: float = 5.0
    capacity: float = 10.0
    inflow_rate: float = 0.2    # units/s at valve fully open
    outflow_rate: float = 0.1   # units/s constant drain
    valve: float = 0.0


def step_plant(s: PlantState, valve_cmd: float, dt: int) -> PlantState:
    """Advance the tank by dt ticks under the given valve command."""
    if not 0.0 <= valve_cmd <= 1.0:
        raise InvalidCommand(f"valve command {valve_cmd} outside [0, 1]")
    if dt <= 0:
        raise InvalidCommand(f"dt must be positive, got {dt}")
    seconds = dt / SECOND
    level = s.level + (s.inflow_rate * valve_cmd - s.outflow_rate) * seconds
    level = min(max(level, 0.0), s.capacity)
    return replace(s, level=level, valve=valve_cmd)


@dataclass
class PlcState:
    setpoint: float = 5.0
    mode: str = NORMAL
    last_supervisory_at: int = 0
    watchdog_cycles: int = 5
    cycle_period: int = 100 * MS
    safety_low: float = 1.0
    safety_high: float = 9.0
    gain: float = 0.5
    failsafe_reason: str | None = None


def watchdog_check(p: PlcState, now: int) -> str:
    """Trip to FailSafe iff supervisory silence exceeds W cycles."""
    if now - p.last_supervisory_at > p.watchdog_cycles * p.cycle_period:
        if p.mode != FAILSAFE:
            p.mode = FAILSAFE
            p.failsafe_reason = "watchdog"
        return FAILSAFE_TRIGGERED
    return HEALTHY


def plc_cycle(p: PlcState, reading: float, cmd: dict | None, now: int
              ) -> tuple[PlcState, float, dict]:
    """One control cycle: ingest supervision, run safety checks, actuate.

    Returns the updated PLC state, the valve command applied this cycle and
    the telemetry body to publish.
    """
    if cmd is not None:
        value = cmd.get("value")
        if isinstance(value, (int, float)):
            p.setpoint = float(value)
            p.last_supervisory_at = now
        # anything else is a bad command: ignored, caller audits

    watchdog_check(p, now)
    if reading < p.safety_low or reading > p.safety_high:
        if p.mode != FAILSAFE:
            p.mode = FAILSAFE
            p.failsafe_reason = "safety_bounds"

    if p.mode == FAILSAFE:
        valve_cmd = 0.0
    else:
        valve_cmd = min(max(p.gain * (p.setpoint - reading), 0.0), 1.0)

    telemetry = {"level": reading, "valve": valve_cmd, "mode": p.mode,
                 "setpoint": p.setpoint}
    return p, valve_cmd, telemetry


def operator_reset(p: PlcState, now: int) -> PlcState:
    """Explicit reset is the only path out of FailSafe."""
    p.mode = NORMAL
    p.failsafe_reason = None
    p.last_supervisory_at = now
    return p


class PlantComponent:
    """Scheduler-driven wrapper: steps the tank, runs the PLC, publishes
    telemetry, consumes supervisory commands from the actuation topic."""

    def __init__(self, name: str, plant: PlantState, plc: PlcState, rt,
                 sensor_noise: float = 0.0, noise_stream: str | None = None):
        self.name = name
        self.plant = plant
        self.plc = plc
        self.rt = rt
        self.sensor_noise = sensor_noise  # fraction of capacity, +/- uniform
        self.noise_stream = noise_stream
        self._pending_cmd: dict | None = None
        self._applied_seqs: set = set()
        self.mode_history: list[tuple[int, str]] = [(0, plc.mode)]
        self.excursions = 0
        self.min_true_level = plant.level
        self.max_true_level = plant.level

    def start(self) -> None:
        self.rt.schedule(self.name, self.rt.now() + self.plc.cycle_period, ("cycle",))

    def on_actuation(self, record) -> None:
        body = record.body
        seq = body.get("seq")
        if seq in self._applied_seqs:
            return
        self._applied_seqs.add(seq)
        self._pending_cmd = body.get("command")

    def on_control(self, event) -> None:
        payload = event.payload
        if payload == ("cycle",):
            self._cycle()
            self.rt.schedule(self.name, self.rt.now() + self.plc.cycle_period,
                             ("cycle",))
        elif payload == ("operator_reset",):
            operator_reset(self.plc, self.rt.now())
            self.rt.audit(self.name, {"type": "operator_reset"})

    def _reading(self) -> float:
        level = self.plant.level
        if self.sensor_noise > 0 and self.noise_stream:
            rng = self.rt.rng(self.noise_stream)
            span = self.sensor_noise * self.plant.capacity
            level = min(max(level + rng.uniform(-span, span), 0.0),
                        self.plant.capacity)
        return level

    def _cycle(self) -> None:
        now = self.rt.now()
        cmd, self._pending_cmd = self._pending_cmd, None
        if cmd is not None and not isinstance(cmd.get("value"), (int, float)):
            self.rt.audit(self.name, {"type": "bad_command", "command": cmd})
        reading = self._reading()
        self.plc, valve_cmd, telemetry = plc_cycle(self.plc, reading, cmd, now)
        # mode history advances on cycle boundaries only, matching what
        # telemetry exposes (the twin mirrors modes from telemetry)
        if self.plc.mode != self.mode_history[-1][1]:
            self._note_mode()
            if self.plc.mode == FAILSAFE:
                self.rt.audit(self.name, {
                    "type": "failsafe_triggered",
                    "reason": self.plc.failsafe_reason,
                    "silence_us": now - self.plc.last_supervisory_at,
                })
        self.plant = step_plant(self.plant, valve_cmd, self.plc.cycle_period)
        self.min_true_level = min(self.min_true_level, self.plant.level)
        self.max_true_level = max(self.max_true_level, self.plant.level)
        if self.plant.level <= 0.0 or self.plant.level >= self.plant.capacity:
            self.excursions += 1
        telemetry["true_level"] = self.plant.level
        telemetry["noisy"] = bool(self.sensor_noise > 0)
        self.rt.publish(self.name, "ot.telemetry", telemetry)

    def _note_mode(self) -> None:
        self.mode_history.append((self.rt.now(), self.plc.mode))
