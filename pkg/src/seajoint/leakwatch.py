"""Early leak detection from per-canister temperature/humidity streams.

The criterion is a rise in relative humidity above a per-zone learned
baseline, not an absolute threshold: field baselines run high in warm
weather, but a sealed canister's RH is flat, so any sustained upward
delta means water.  A detector learns its baseline during a startup
window, then raises WARN and latching ALARM when the delta persists.

Trace file format (one record per line, ``#`` starts a comment)::

    # seajoint leak trace v1
    # onset <zone> <t_seconds>          (optional event annotation)
    <t_seconds> <zone> <temperature_c> <rh_percent>

The simulator emits this same format; ``seajoint leakcheck`` replays it.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from enum import IntEnum
from typing import IO, Iterable, Optional

TRACE_HEADER = "# seajoint leak trace v1"


class OutOfOrderError(ValueError):
    """Sample older than the last one seen for its zone."""


class UnknownZoneError(KeyError):
    """Sample for a zone never registered with the fleet."""


class TraceParseError(ValueError):
    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class LeakState(IntEnum):
    """Detector verdicts, ordered by severity."""

    OK = 0
    LEARNING = 1
    WARN = 2
    ALARM = 3


@dataclass(frozen=True)
class EnvSample:
    """One temperature/RH reading.  The sensor quantizes to 1 degC / 1 %RH."""

    zone: str
    t: float
    temperature: float
    rh: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.rh <= 100.0:
            raise ValueError(f"rh {self.rh} outside [0, 100]")


@dataclass(frozen=True)
class DetectorConfig:
    """Baseline window, thresholds, and persistence.

    Defaults trip on the canonical single-droplet ingress profile within
    about a minute while a +/-1 % quantization wobble can never reach
    the warn threshold.
    """

    window_s: float = 60.0
    warn_pct: float = 3.0
    alarm_pct: float = 5.0
    persistence: int = 3

    def __post_init__(self) -> None:
        if self.warn_pct >= self.alarm_pct:
            raise ValueError("warn threshold must sit below the alarm threshold")
        if self.window_s < 10.0:
            raise ValueError("baseline window must cover >= 5 samples at 0.5 Hz")
        if self.persistence < 1:
            raise ValueError("persistence must be >= 1")


@dataclass(frozen=True)
class LeakStatus:
    zone: str
    state: LeakState
    baseline: Optional[float]
    delta: Optional[float]
    since: float


class LeakDetector:
    """Single-zone detector.  Feed samples in nondecreasing time order.

    Deterministic: the verdict stream is a pure function of the sample
    sequence and config, so log replays reproduce it exactly.  ALARM
    latches until :meth:`reset`.  A saturated sensor reading still
    counts toward the delta (delta = ceiling - baseline), so a leak that
    pegs the sensor keeps alarming.
    """

    def __init__(self, zone: str, config: DetectorConfig = DetectorConfig()):
        self.zone = zone
        self.config = config
        self._t_start: float | None = None
        self._last_t: float | None = None
        self._learning_rh: list[float] = []
        self._baseline: float | None = None
        self._warn_run = 0
        self._alarm_run = 0
        self._state = LeakState.LEARNING
        self._since = 0.0
        self._delta: float | None = None

    @property
    def status(self) -> LeakStatus:
        return LeakStatus(
            zone=self.zone,
            state=self._state,
            baseline=self._baseline,
            delta=self._delta,
            since=self._since,
        )

    def ingest(self, sample: EnvSample) -> LeakStatus:
        if sample.zone != self.zone:
            raise UnknownZoneError(sample.zone)
        if self._last_t is not None and sample.t < self._last_t:
            raise OutOfOrderError(
                f"zone {self.zone}: sample at t={sample.t} after t={self._last_t}"
            )
        self._last_t = sample.t
        if self._t_start is None:
            self._t_start = sample.t
            self._since = sample.t

        if self._state is LeakState.ALARM:
            self._delta = self._current_delta(sample.rh)
            return self.status

        if sample.t - self._t_start < self.config.window_s:
            self._learning_rh.append(sample.rh)
            return self.status

        if self._baseline is None:
            self._baseline = statistics.median(self._learning_rh)
            self._set_state(LeakState.OK, sample.t)

        delta = self._current_delta(sample.rh)
        self._delta = delta
        self._alarm_run = self._alarm_run + 1 if delta >= self.config.alarm_pct else 0
        self._warn_run = self._warn_run + 1 if delta >= self.config.warn_pct else 0

        if self._alarm_run >= self.config.persistence:
            self._set_state(LeakState.ALARM, sample.t)
        elif self._warn_run >= self.config.persistence:
            self._set_state(LeakState.WARN, sample.t)
        elif self._state is LeakState.WARN:
            self._set_state(LeakState.OK, sample.t)
        return self.status

    def reset(self, relearn: bool = False) -> None:
        """Clear a latched ALARM.

        By default the learned baseline survives; ``relearn=True`` wipes
        it (use after re-sealing a dried canister).
        """
        self._warn_run = 0
        self._alarm_run = 0
        if relearn:
            self._t_start = None
            self._learning_rh = []
            self._baseline = None
            self._delta = None
            self._state = LeakState.LEARNING
        else:
            self._state = (
                LeakState.LEARNING if self._baseline is None else LeakState.OK
            )
        if self._last_t is not None:
            self._since = self._last_t

    def _current_delta(self, rh: float) -> float:
        if self._baseline is None:
            return 0.0
        return rh - self._baseline

    def _set_state(self, state: LeakState, t: float) -> None:
        if state is not self._state:
            self._state = state
            self._since = t


class Fleet:
    """All canister detectors of one platform, keyed by zone."""

    def __init__(self, zones: Iterable[str], config: DetectorConfig = DetectorConfig()):
        self.detectors = {zone: LeakDetector(zone, config) for zone in zones}
        if not self.detectors:
            raise ValueError("a fleet needs at least one zone")

    def ingest(self, sample: EnvSample) -> LeakStatus:
        detector = self.detectors.get(sample.zone)
        if detector is None:
            raise UnknownZoneError(sample.zone)
        return detector.ingest(sample)

    def view(self) -> dict[str, LeakStatus]:
        """Consistent snapshot of every zone."""
        return {zone: det.status for zone, det in self.detectors.items()}

    def overall(self) -> LeakState:
        """Worst state across zones (IntEnum order is severity order)."""
        return max(det.status.state for det in self.detectors.values())

    def alarmed_zones(self) -> list[str]:
        return [
            zone
            for zone, det in self.detectors.items()
            if det.status.state is LeakState.ALARM
        ]

    def reset(self, zone: str, relearn: bool = False) -> None:
        detector = self.detectors.get(zone)
        if detector is None:
            raise UnknownZoneError(zone)
        detector.reset(relearn)


def absolute_humidity(temperature_c: float, rh_pct: float) -> float:
    """Absolute humidity in g/m^3 via the Magnus saturation formula.

    AH = 216.7 * (rh/100 * 6.112 * exp(17.62 T / (243.12 + T)))
               / (273.15 + T)

    Valid for T in [-40, 80] degC.  Optional aid for decorrelating
    temperature swings from the RH delta; the default criterion uses
    raw RH because canister temperature stays flat during ingress.
    """
    if not -40.0 <= temperature_c <= 80.0:
        raise ValueError(f"temperature {temperature_c} outside [-40, 80] degC")
    if not 0.0 <= rh_pct <= 100.0:
        raise ValueError(f"rh {rh_pct} outside [0, 100]")
    saturation_hpa = 6.112 * math.exp(
        17.62 * temperature_c / (243.12 + temperature_c)
    )
    vapor_hpa = rh_pct / 100.0 * saturation_hpa
    return 216.7 * vapor_hpa / (273.15 + temperature_c)


def synthesize_ingress(
    zone: str = "can0",
    baseline_rh: float = 63.0,
    ceiling_rh: float = 80.0,
    tau_s: float = 180.0,
    onset_s: float = 60.0,
    duration_s: float = 1800.0,
    period_s: float = 2.0,
    temperature_c: float = 24.0,
) -> list[EnvSample]:
    """Canonical single-droplet ingress profile for detector testing.

    Humidity sits flat at the baseline, then rises exponentially toward
    the sensor ceiling after *onset_s* (fast at first, leveling out over
    tens of minutes), quantized to 1 % at the 0.5 Hz sensor cadence.
    Temperature stays flat throughout, as a wetted canister's does.
    """
    samples = []
    t = 0.0
    while t <= duration_s:
        if t < onset_s:
            rh = baseline_rh
        else:
            rh = baseline_rh + (ceiling_rh - baseline_rh) * (
                1.0 - math.exp(-(t - onset_s) / tau_s)
            )
        samples.append(
            EnvSample(
                zone=zone,
                t=t,
                temperature=float(round(temperature_c)),
                rh=float(round(rh)),
            )
        )
        t += period_s
    return samples


# -- trace files --------------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    line_no: int
    sample: EnvSample


@dataclass(frozen=True)
class Trace:
    rows: list[TraceRow]
    onsets: dict[str, float]

    @property
    def samples(self) -> list[EnvSample]:
        return [row.sample for row in self.rows]


def read_trace(fp: IO[str]) -> Trace:
    """Parse a leak trace stream; raises :class:`TraceParseError`."""
    rows: list[TraceRow] = []
    onsets: dict[str, float] = {}
    for line_no, raw in enumerate(fp, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[:1] == ["onset"]:
                if len(parts) != 3:
                    raise TraceParseError("onset needs '# onset <zone> <t>'", line_no)
                try:
                    onsets[parts[1]] = float(parts[2])
                except ValueError:
                    raise TraceParseError(f"bad onset time {parts[2]!r}", line_no)
            continue
        parts = line.split()
        if len(parts) != 4:
            raise TraceParseError(
                f"expected '<t> <zone> <temp> <rh>', got {len(parts)} fields", line_no
            )
        try:
            sample = EnvSample(
                zone=parts[1],
                t=float(parts[0]),
                temperature=float(parts[2]),
                rh=float(parts[3]),
            )
        except ValueError as err:
            raise TraceParseError(str(err), line_no)
        rows.append(TraceRow(line_no=line_no, sample=sample))
    return Trace(rows=rows, onsets=onsets)


def write_trace(
    fp: IO[str], samples: Iterable[EnvSample], onsets: dict[str, float] | None = None
) -> None:
    fp.write(TRACE_HEADER + "\n")
    for zone, t in (onsets or {}).items():
        fp.write(f"# onset {zone} {t:g}\n")
    for s in samples:
        fp.write(f"{s.t:g} {s.zone} {s.temperature:g} {s.rh:g}\n")
