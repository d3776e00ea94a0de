"""Pulse libraries, programming sequences and trapezoidal waveform rendering.

A pulse is a trapezoid described by five time segments (lead delay, rise,
flat top, fall, trail delay) and an amplitude. Libraries are CSV files with
the header::

    id,kind,t_lead_s,t_rise_s,t_width_s,t_fall_s,t_trail_s,amplitude_v

Sequences are keyed text files listing the pulse ids of the SET and RESET
phases of one cycle, plus optional parameter sweeps across cycles.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

T_MIN = 20e-9
T_MAX = 1.0

KINDS = ("Measure", "Set", "Reset", "Disturb", "LogDelay", "LinDelay")
# id ranges per kind, inclusive
KIND_RANGES = {
    "Measure": (0, 9),
    "Set": (10, 19),
    "Reset": (20, 29),
    "Disturb": (30, 39),
    "LogDelay": (80, 89),
    "LinDelay": (90, 99),
}
TIME_FIELDS = ("t_lead", "t_rise", "t_width", "t_fall", "t_trail")
PARAMS = TIME_FIELDS + ("amplitude",)
HEADER = ("id", "kind", "t_lead_s", "t_rise_s", "t_width_s", "t_fall_s", "t_trail_s", "amplitude_v")


class PulseError(ValueError):
    """Base class for pulse library and sequence errors."""


class DuplicateId(PulseError):
    pass


class SegmentOutOfBounds(PulseError):
    pass


class KindIdMismatch(PulseError):
    pass


class MalformedRow(PulseError):
    pass


class SweepOutOfBounds(PulseError):
    pass


class UnknownPulse(PulseError):
    pass


@dataclass(frozen=True)
class PulseSpec:
    id: int
    kind: str
    t_lead: float
    t_rise: float
    t_width: float
    t_fall: float
    t_trail: float
    amplitude: float

    @property
    def duration(self) -> float:
        return math.fsum(self.segments())

    def segments(self) -> Tuple[float, float, float, float, float]:
        return (self.t_lead, self.t_rise, self.t_width, self.t_fall, self.t_trail)

    @property
    def marker_offset(self) -> float:
        """Time from the pulse start to the middle of its flat top."""
        return math.fsum((self.t_lead, self.t_rise, 0.5 * self.t_width))

    def validate(self, where: str = "") -> None:
        """Raise if the pulse breaks a library invariant."""
        if self.kind not in KIND_RANGES:
            raise MalformedRow(f"{where}unknown kind {self.kind!r}")
        lo, hi = KIND_RANGES[self.kind]
        if not lo <= self.id <= hi:
            raise KindIdMismatch(f"{where}id {self.id} outside {self.kind} range {lo}-{hi}")
        for name in TIME_FIELDS:
            val = getattr(self, name)
            if not (T_MIN * (1 - 1e-9) <= val <= T_MAX * (1 + 1e-9)):
                raise SegmentOutOfBounds(f"{where}segment {name}={val!r} outside [{T_MIN:g}, {T_MAX:g}] s")
        if not math.isfinite(self.amplitude):
            raise MalformedRow(f"{where}non-finite amplitude")

    @property
    def is_delay(self) -> bool:
        return self.amplitude == 0.0 and self.kind != "Measure"


@dataclass
class PulseLibrary:
    pulses: Dict[int, PulseSpec] = field(default_factory=dict)

    def __getitem__(self, pid: int) -> PulseSpec:
        try:
            return self.pulses[pid]
        except KeyError:
            raise UnknownPulse(f"pulse id {pid} not in library") from None

    def __contains__(self, pid) -> bool:
        return pid in self.pulses

    def __len__(self) -> int:
        return len(self.pulses)

    def add(self, pulse: PulseSpec) -> None:
        if pulse.id in self.pulses:
            raise DuplicateId(f"duplicate pulse id {pulse.id}")
        pulse.validate()
        self.pulses[pulse.id] = pulse

    def resolve(self, ids: Sequence[int]) -> List[PulseSpec]:
        return [self[i] for i in ids]


@dataclass(frozen=True)
class SweepSpec:
    """Per-cycle sweep of one parameter of the pulse at ``target_pulse_index``.

    The index counts positions in ``set_phase + reset_phase``.
    """

    target_pulse_index: int
    parameter: str
    start: float
    step: float
    stop: float

    def validate(self) -> None:
        if self.parameter not in PARAMS:
            raise MalformedRow(f"unknown sweep parameter {self.parameter!r}")
        if self.step == 0.0 or not math.isfinite(self.step):
            raise SweepOutOfBounds("sweep step must be nonzero")
        if (self.stop - self.start) / self.step < 0:
            raise SweepOutOfBounds("sweep stop not reachable from start with this step")
        if self.parameter in TIME_FIELDS:
            for val in (self.start, self.stop):
                if not T_MIN <= val <= T_MAX:
                    raise SweepOutOfBounds(f"swept {self.parameter}={val!r} outside [{T_MIN:g}, {T_MAX:g}] s")

    def value(self, cycle_index: int) -> float:
        """Swept value at ``cycle_index``, clamped at ``stop``."""
        v = self.start + cycle_index * self.step
        if (self.step > 0 and v > self.stop) or (self.step < 0 and v < self.stop):
            return self.stop
        return v

    @property
    def n_levels(self) -> int:
        return int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1


@dataclass
class SequenceSpec:
    set_phase: List[int]
    reset_phase: List[int]
    sweeps: List[SweepSpec] = field(default_factory=list)
    n_cycles: int = 1

    def validate(self, library: PulseLibrary = None) -> None:
        if not self.set_phase or not self.reset_phase:
            raise MalformedRow("set_phase and reset_phase must be non-empty")
        if self.n_cycles < 1:
            raise MalformedRow("cycles must be >= 1")
        n = len(self.set_phase) + len(self.reset_phase)
        for sw in self.sweeps:
            if not 0 <= sw.target_pulse_index < n:
                raise SweepOutOfBounds(f"sweep target {sw.target_pulse_index} outside sequence of {n} pulses")
            sw.validate()
        if library is not None:
            library.resolve(self.set_phase + self.reset_phase)


@dataclass(frozen=True)
class Waveform:
    """Piecewise-linear voltage signal with labelled markers."""

    breakpoints: Tuple[Tuple[float, float], ...]
    markers: Tuple[Tuple[float, str], ...] = ()

    @property
    def duration(self) -> float:
        return self.breakpoints[-1][0] if self.breakpoints else 0.0

    @property
    def times(self):
        return [b[0] for b in self.breakpoints]

    @property
    def voltages(self):
        return [b[1] for b in self.breakpoints]

    def voltage_at(self, t: float) -> float:
        bp = self.breakpoints
        if not bp or t <= bp[0][0] or t >= bp[-1][0]:
            return 0.0
        lo, hi = 0, len(bp) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if bp[mid][0] <= t:
                lo = mid
            else:
                hi = mid
        (t0, v0), (t1, v1) = bp[lo], bp[hi]
        if t1 == t0:
            return v1
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)


# ---------------------------------------------------------------- CSV I/O


def _float(text: str, row: int, name: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise MalformedRow(f"row {row}: {name}={text!r} is not a number") from None
    if not math.isfinite(val):
        raise MalformedRow(f"row {row}: {name} is not finite")
    return val


def parse_pulse_library(csv_text: str) -> PulseLibrary:
    """Parse and validate a pulse-library CSV.

    Blank lines and lines starting with ``#`` are ignored. Raises
    :class:`DuplicateId`, :class:`SegmentOutOfBounds`, :class:`KindIdMismatch`
    or :class:`MalformedRow`; errors name the offending data row (1-based,
    header excluded).
    """
    lines = [ln for ln in csv_text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise MalformedRow("empty pulse library")
    reader = csv.reader(lines)
    header = tuple(h.strip() for h in next(reader))
    if header != HEADER:
        raise MalformedRow(f"bad header {','.join(header)!r}")
    lib = PulseLibrary()
    for k, raw in enumerate(reader, start=1):
        cells = [c.strip() for c in raw]
        if len(cells) != len(HEADER):
            raise MalformedRow(f"row {k}: expected {len(HEADER)} fields, got {len(cells)}")
        try:
            pid = int(cells[0])
        except ValueError:
            raise MalformedRow(f"row {k}: id {cells[0]!r} is not an integer") from None
        kind = cells[1]
        if kind not in KIND_RANGES:
            raise MalformedRow(f"row {k}: unknown kind {kind!r}")
        vals = [_float(c, k, n) for c, n in zip(cells[2:], HEADER[2:])]
        pulse = PulseSpec(pid, kind, *vals)
        if pid in lib.pulses:
            raise DuplicateId(f"row {k}: duplicate pulse id {pid}")
        pulse.validate(where=f"row {k}: ")
        lib.pulses[pid] = pulse
    return lib


def serialize_pulse_library(lib: PulseLibrary) -> str:
    """Inverse of :func:`parse_pulse_library` (rows sorted by id)."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(HEADER)
    for pid in sorted(lib.pulses):
        p = lib.pulses[pid]
        w.writerow([p.id, p.kind] + [repr(float(getattr(p, f))) for f in PARAMS])
    return out.getvalue()


def load_pulse_library(path) -> PulseLibrary:
    with open(path, encoding="utf-8") as fh:
        return parse_pulse_library(fh.read())


# ---------------------------------------------------------------- sequences


def _ids(text: str, key: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise MalformedRow(f"{key}: pulse ids must be integers") from None


def parse_sequence(text: str) -> SequenceSpec:
    """Parse a sequence file.

    Recognised keys are ``set_phase``, ``reset_phase``, ``cycles`` and any
    number of ``sweep = index:param:start:step:stop`` lines.
    """
    set_phase = reset_phase = None
    sweeps = []
    cycles = 1
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedRow(f"line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "set_phase":
            set_phase = _ids(val, key)
        elif key == "reset_phase":
            reset_phase = _ids(val, key)
        elif key == "cycles":
            try:
                cycles = int(val)
            except ValueError:
                raise MalformedRow(f"line {n}: cycles must be an integer") from None
        elif key == "sweep":
            parts = val.split(":")
            if len(parts) != 5:
                raise MalformedRow(f"line {n}: sweep needs index:param:start:step:stop")
            try:
                sw = SweepSpec(int(parts[0]), parts[1].strip(), float(parts[2]), float(parts[3]), float(parts[4]))
            except ValueError:
                raise MalformedRow(f"line {n}: bad sweep numbers") from None
            sw.validate()
            sweeps.append(sw)
        else:
            raise MalformedRow(f"line {n}: unknown key {key!r}")
    if set_phase is None or reset_phase is None:
        raise MalformedRow("sequence needs both set_phase and reset_phase")
    seq = SequenceSpec(set_phase, reset_phase, sweeps, cycles)
    seq.validate()
    return seq


def serialize_sequence(seq: SequenceSpec) -> str:
    lines = [
        "set_phase = " + ",".join(str(i) for i in seq.set_phase),
        "reset_phase = " + ",".join(str(i) for i in seq.reset_phase),
    ]
    for sw in seq.sweeps:
        lines.append(f"sweep = {sw.target_pulse_index}:{sw.parameter}:{sw.start!r}:{sw.step!r}:{sw.stop!r}")
    lines.append(f"cycles = {seq.n_cycles}")
    return "\n".join(lines) + "\n"


def expand_sweep(seq: SequenceSpec, library: PulseLibrary, cycle_index: int):
    """Concrete (set_pulses, reset_pulses) for one cycle.

    Swept parameters take ``min(start + cycle_index*step, stop)`` (clamped in
    the direction of the step); other pulses come back verbatim.
    """
    if not 0 <= cycle_index < seq.n_cycles:
        raise ValueError(f"cycle_index {cycle_index} outside 0..{seq.n_cycles - 1}")
    pulses = library.resolve(seq.set_phase + seq.reset_phase)
    for sw in seq.sweeps:
        if not 0 <= sw.target_pulse_index < len(pulses):
            raise SweepOutOfBounds(f"sweep target {sw.target_pulse_index} out of range")
        val = sw.value(cycle_index)
        if sw.parameter in TIME_FIELDS and not T_MIN <= val <= T_MAX:
            raise SweepOutOfBounds(f"swept {sw.parameter}={val!r} outside [{T_MIN:g}, {T_MAX:g}] s")
        k = sw.target_pulse_index
        pulses[k] = replace(pulses[k], **{sw.parameter: val})
    ns = len(seq.set_phase)
    return pulses[:ns], pulses[ns:]


# ---------------------------------------------------------------- rendering


def render_waveform(pulses: Sequence[PulseSpec]) -> Waveform:
    """Concatenate pulse trapezoids into one piecewise-linear waveform.

    A single pulse gives six breakpoints; each further pulse adds five, since
    its start coincides with the previous pulse's end. Breakpoint times are exact
    ``math.fsum`` partial sums of all segment times, so the total duration
    carries no accumulated round-off. A marker labelled ``"<kind>:<id>@<k>"``
    sits at the middle of every flat top (``k`` is the position in the list).
    """
    segs: List[float] = []
    bps: List[Tuple[float, float]] = []
    marks: List[Tuple[float, str]] = []
    for k, p in enumerate(pulses):
        base = list(segs)
        levels = (0.0, 0.0, p.amplitude, p.amplitude, 0.0, 0.0)
        cum = [math.fsum(base)]
        for s in p.segments():
            base.append(s)
            cum.append(math.fsum(base))
        for j, (t, v) in enumerate(zip(cum, levels)):
            # pulse k>0 starts where pulse k-1 ended, both at 0 V
            if j == 0 and bps:
                continue
            bps.append((t, v))
        marks.append((math.fsum(segs + [p.t_lead, p.t_rise, 0.5 * p.t_width]), f"{p.kind}:{p.id}@{k}"))
        segs.extend(p.segments())
    return Waveform(tuple(bps), tuple(marks))


def waveform_substeps(w: Waveform, dv_max: float = 0.01):
    """Piecewise-constant approximation of ``w`` for the kinetic integrator.

    Every linear stretch is cut into equal substeps whose voltage changes by at
    most ``dv_max``; each substep carries its midpoint voltage. Zero-length
    stretches (coincident breakpoints) are dropped.

    Returns
    -------
    (volts, durations) : tuple of lists
    """
    volts: List[float] = []
    durs: List[float] = []
    bp = w.breakpoints
    for (t0, v0), (t1, v1) in zip(bp[:-1], bp[1:]):
        dt = t1 - t0
        if dt <= 0.0:
            continue
        n = max(1, int(math.ceil(abs(v1 - v0) / dv_max - 1e-9)))
        for j in range(n):
            volts.append(v0 + (v1 - v0) * (j + 0.5) / n)
            durs.append(dt / n)
    return volts, durs
