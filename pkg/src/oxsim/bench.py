"""1T1R test bench: access transistor, readout schedules and experiment runs.

Every experiment returns a :class:`ReadoutMatrix`, one row per resistance
read, which is what the analysis layer consumes.

Seeding: each cell draws its forming randomness from
``SeedSequence(master_seed, spawn_key=(cell_id, 0))`` and cycle ``k`` from
``spawn_key=(cell_id, 1, k)``. Results therefore do not depend on how many
other cells run, or in which order.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import hourglass_cell as hc
from . import kernels as K
from .hourglass_cell import CellState, FormingFailed, HourglassParams
from .pulse_engine import (PulseLibrary, PulseSpec, SequenceSpec, SweepSpec, Waveform, expand_sweep,
                           load_pulse_library, parse_sequence, render_waveform, waveform_substeps)

SET = "SET"
RESET = "RESET"
STATES = (SET, RESET)

POR_SCHEDULE = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0)
POR_COMPLIANCE = 50e-6
POR_RESET_GATE = 1.5

# ISP levels: SET gate 0.8 -> 1.3 V, RESET amplitude -1.0 -> -2.0 V
ISP_SET_GATE = (0.8, 0.025, 1.3)
ISP_RESET_AMPLITUDE = (-1.0, -0.1, -2.0)


class SubThreshold(ValueError):
    """Gate voltage at or below threshold."""


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- transistor


@dataclass(frozen=True)
class AccessTransistor:
    """Phenomenological access device.

    Saturation current k*(Vg - Vt)^2 sets the SET compliance; in the linear
    regime the device is a resistor R_on scaling as 1/(Vg - Vt). Heating
    raises R_on and lowers the saturation current by the same factor
    ``1 + temp_coeff*(T - t_ref)``.
    """

    v_t: float = 0.55
    k_gain: float = 50e-6 / 0.6 ** 2
    r_on_0: float = 1.0 / (2.0 * (50e-6 / 0.6 ** 2) * (1.5 - 0.55))
    v_gate_ref: float = 1.5
    temp_coeff: float = 2e-3
    t_ref: float = 298.15

    def __post_init__(self):
        if not self.k_gain > 0 or not self.r_on_0 > 0:
            raise ValueError("k_gain and r_on_0 must be > 0")

    def derating(self, T: float) -> float:
        return 1.0 + self.temp_coeff * (T - self.t_ref)

    def r_on(self, v_gate: float, T: float) -> float:
        if v_gate <= self.v_t:
            raise SubThreshold(f"v_gate {v_gate:g} V <= v_t {self.v_t:g} V")
        return self.r_on_0 * (self.v_gate_ref - self.v_t) / (v_gate - self.v_t) * self.derating(T)

    def gate_for(self, current: float, T: float) -> float:
        """Gate voltage giving compliance ``current`` at ``T`` (trimmed gate)."""
        return self.v_t + math.sqrt(current * self.derating(T) / self.k_gain)


def compliance_current(v_gate: float, T: float, tr: AccessTransistor) -> float:
    """Saturation current k*(Vg - Vt)^2 / (1 + temp_coeff*(T - t_ref)), amperes."""
    if v_gate <= tr.v_t:
        raise SubThreshold(f"v_gate {v_gate:g} V <= v_t {tr.v_t:g} V")
    return tr.k_gain * (v_gate - tr.v_t) ** 2 / tr.derating(T)


def partition_voltage(v_applied: float, state: CellState, tr: AccessTransistor, T: float,
                      p: HourglassParams, v_gate: float = POR_RESET_GATE, clamp: bool = True) -> float:
    """Voltage across the cell in series with the transistor.

    For positive ``v_applied`` (SET polarity) the current is also capped at
    the compliance of ``v_gate`` when ``clamp`` is true.
    """
    if not state.formed:
        raise hc.Unformed("cell has not been formed")
    r_on = tr.r_on(v_gate, T)
    i_clamp = compliance_current(v_gate, T, tr) if clamp else 0.0
    v, _ = K.solve_partition(float(v_applied), state.n_c, 1, p.vector(), r_on, i_clamp)
    return v


# ---------------------------------------------------------------- schedule


@dataclass(frozen=True)
class ReadoutSchedule:
    times_after_program: Tuple[float, ...] = POR_SCHEDULE

    def __post_init__(self):
        t = tuple(float(x) for x in self.times_after_program)
        object.__setattr__(self, "times_after_program", t)
        if not t:
            raise ConfigError("schedule must not be empty")
        if t[0] <= 0 or any(b <= a for a, b in zip(t[:-1], t[1:])):
            raise ConfigError("schedule times must be positive and strictly increasing")

    def __len__(self):
        return len(self.times_after_program)

    @property
    def reference(self) -> float:
        return self.times_after_program[0]

    def delay_pulses(self, measure: PulseSpec) -> List[PulseSpec]:
        """Zero-amplitude delays placing each Measure marker on its schedule time.

        Times count from the end of the programming pulse. The sequence is
        ``program, d[0], M, d[1], M, ...``; ids start at 80 (LogDelay) and
        continue at 90 (LinDelay) past ten readouts.
        """
        if len(self) > 20:
            raise ConfigError("at most 20 readouts fit the delay id ranges")
        out = []
        prev = 0.0
        for k, t in enumerate(self.times_after_program):
            gap = t - prev - (measure.marker_offset if k == 0 else measure.duration)
            width = gap - 4 * 20e-9
            if not 20e-9 <= width <= 1.0:
                raise ConfigError(f"readout gap before t={t:g} s cannot be realised with a delay pulse")
            pid, kind = (80 + k, "LogDelay") if k < 10 else (90 + k - 10, "LinDelay")
            out.append(PulseSpec(pid, kind, 20e-9, 20e-9, width, 20e-9, 20e-9, 0.0))
            prev = t
        return out


POR_MEASURE = PulseSpec(0, "Measure", 20e-9, 1e-6, 10e-6, 1e-6, 20e-9, 0.1)
POR_SET = PulseSpec(10, "Set", 20e-9, 20e-9, 100e-9, 20e-9, 20e-9, 2.5)
POR_RESET = PulseSpec(20, "Reset", 20e-9, 20e-9, 100e-9, 20e-9, 20e-9, -1.5)


def por_library(schedule: ReadoutSchedule = ReadoutSchedule()) -> PulseLibrary:
    lib = PulseLibrary()
    for p in (POR_MEASURE, POR_SET, POR_RESET, *schedule.delay_pulses(POR_MEASURE)):
        lib.add(p)
    return lib


def por_sequence(schedule: ReadoutSchedule = ReadoutSchedule(), n_cycles: int = 1) -> SequenceSpec:
    """RD#0, program, then delay/Measure pairs for every schedule time."""
    delays = [d.id for d in schedule.delay_pulses(POR_MEASURE)]
    tail = []
    for d in delays:
        tail += [d, POR_MEASURE.id]
    return SequenceSpec([POR_MEASURE.id, POR_SET.id] + tail, [POR_MEASURE.id, POR_RESET.id] + tail,
                        [], n_cycles)


# ---------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    preset: str = "hfo2"
    n_cells: int = 5
    n_cycles: int = 100
    temperature_k: float = 298.15
    schedule: ReadoutSchedule = field(default_factory=ReadoutSchedule)
    sequence: Optional[SequenceSpec] = None
    library: Optional[PulseLibrary] = None
    set_threshold: float = 20e3
    reset_threshold: float = 200e3
    algorithm: str = "SP"
    max_attempts: int = 10
    master_seed: int = 0
    compliance: float = POR_COMPLIANCE
    forming_v_max: float = 3.5
    transistor: AccessTransistor = field(default_factory=AccessTransistor)
    params: Optional[HourglassParams] = None
    # explicit cell ids; default is range(n_cells)
    cell_ids: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        self.algorithm = self.algorithm.upper()
        self.validate()

    def validate(self):
        if self.n_cells < 1 or self.n_cycles < 1:
            raise ConfigError("cells and cycles must be >= 1")
        if not self.set_threshold < self.reset_threshold:
            raise ConfigError("set_threshold must be below reset_threshold")
        if self.algorithm not in ("SP", "ISP", "FSP"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        if self.temperature_k <= 0:
            raise ConfigError("temperature must be > 0 K")
        if self.params is None and self.preset not in hc.PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")

    @property
    def hourglass(self) -> HourglassParams:
        return self.params if self.params is not None else hc.load_preset(self.preset)

    @property
    def cells(self) -> Tuple[int, ...]:
        return tuple(self.cell_ids) if self.cell_ids is not None else tuple(range(self.n_cells))

    def resolved_program(self) -> Tuple[PulseLibrary, SequenceSpec]:
        lib = self.library if self.library is not None else por_library(self.schedule)
        seq = self.sequence if self.sequence is not None else por_sequence(self.schedule, self.n_cycles)
        seq = replace(seq, n_cycles=self.n_cycles)
        seq.validate(lib)
        return lib, seq


def _cycle_rng(master_seed: int, cell_id: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(cell_id,) + tuple(key)))


def parse_config(text: str, base_dir: str = ".") -> Tuple[ExperimentConfig, Dict[str, str]]:
    """Parse a keyed experiment config.

    Returns the config and a dict of keys meant for the caller (``output``,
    ``metrics``, ``source`` and ``rwd_*`` keys). Paths are relative to
    ``base_dir``.
    """
    kv: Dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        kv[key] = val
    extras = {k: kv.pop(k) for k in list(kv) if k in ("output", "metrics", "source") or k.startswith("rwd_")}
    conv = {
        "preset": ("preset", str),
        "cells": ("n_cells", int),
        "cycles": ("n_cycles", int),
        "temperature_k": ("temperature_k", float),
        "algorithm": ("algorithm", str),
        "seed": ("master_seed", int),
        "set_threshold": ("set_threshold", float),
        "reset_threshold": ("reset_threshold", float),
        "max_attempts": ("max_attempts", int),
        "compliance": ("compliance", float),
        "forming_v_max": ("forming_v_max", float),
    }
    args = {}
    lib_path = seq_path = None
    for key, val in kv.items():
        try:
            if key in conv:
                name, fn = conv[key]
                args[name] = fn(val)
            elif key == "schedule":
                args["schedule"] = ReadoutSchedule(tuple(float(x) for x in val.split(",") if x.strip()))
            elif key == "library":
                lib_path = os.path.join(base_dir, val)
            elif key == "sequence":
                seq_path = os.path.join(base_dir, val)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {val!r}") from None
    for path in (lib_path, seq_path):
        if path is not None and not os.path.isfile(path):
            raise ConfigError(f"missing file {path}")
    if lib_path is not None:
        args["library"] = load_pulse_library(lib_path)
    if seq_path is not None:
        with open(seq_path, encoding="utf-8") as fh:
            args["sequence"] = parse_sequence(fh.read())
    return ExperimentConfig(**args), extras


# ---------------------------------------------------------------- matrix

COLUMNS = ("cell_id", "cycle", "target_state", "readout_index", "t_after_program_s", "resistance_ohm",
           "verify_passed", "attempts_used")


@dataclass
class ReadoutMatrix:
    """Long-format table of resistance reads."""

    cell_id: np.ndarray
    cycle: np.ndarray
    target_state: np.ndarray
    readout_index: np.ndarray
    t_after_program_s: np.ndarray
    resistance_ohm: np.ndarray
    verify_passed: np.ndarray
    attempts_used: np.ndarray

    @classmethod
    def from_rows(cls, rows: Sequence[tuple]) -> "ReadoutMatrix":
        cols = list(zip(*rows)) if rows else [()] * len(COLUMNS)
        m = cls(
            np.asarray(cols[0], dtype=np.int64),
            np.asarray(cols[1], dtype=np.int64),
            np.asarray(cols[2], dtype="<U5"),
            np.asarray(cols[3], dtype=np.int64),
            np.asarray(cols[4], dtype=float),
            np.asarray(cols[5], dtype=float),
            np.asarray(cols[6], dtype=bool),
            np.asarray(cols[7], dtype=np.int64),
        )
        m.check()
        return m

    @classmethod
    def concat(cls, parts: Sequence["ReadoutMatrix"]) -> "ReadoutMatrix":
        if not parts:
            return cls.from_rows([])
        return cls(*(np.concatenate([getattr(p, c) for p in parts]) for c in COLUMNS))

    def check(self):
        if np.any(~(self.resistance_ohm > 0)):
            raise ValueError("resistances must be > 0")
        bad = set(np.unique(self.target_state)) - set(STATES)
        if bad:
            raise ValueError(f"unknown target_state {sorted(bad)}")

    def __len__(self):
        return len(self.cell_id)

    def rows(self):
        return zip(*(getattr(self, c) for c in COLUMNS))

    def subset(self, mask) -> "ReadoutMatrix":
        return ReadoutMatrix(*(getattr(self, c)[mask] for c in COLUMNS))

    def for_state(self, state: str) -> "ReadoutMatrix":
        return self.subset(self.target_state == _state(state))

    def without_cell(self, cell_id: int) -> "ReadoutMatrix":
        return self.subset(self.cell_id != cell_id)

    def readout_indices(self) -> np.ndarray:
        return np.unique(self.readout_index)

    def times(self) -> Dict[int, float]:
        """readout_index -> t_after_program_s."""
        out = {}
        for k in self.readout_indices():
            out[int(k)] = float(self.t_after_program_s[self.readout_index == k][0])
        return out

    def trajectories(self, state: str, indices: Optional[Sequence[int]] = None):
        """Wide view of one state: (keys, indices, log10 R matrix).

        ``keys`` is an (n, 2) array of (cell_id, cycle); the matrix has one
        column per readout index. Trajectories missing a readout are dropped.
        """
        sub = self.for_state(state)
        if indices is None:
            indices = sub.readout_indices()
        indices = np.asarray(indices, dtype=np.int64)
        if len(sub) == 0:
            return np.zeros((0, 2), dtype=np.int64), indices, np.zeros((0, len(indices)))
        key = sub.cell_id * (int(sub.cycle.max()) + 1) + sub.cycle
        ukeys, inv = np.unique(key, return_inverse=True)
        col = np.full(int(sub.readout_index.max()) + 1, -1)
        col[indices] = np.arange(len(indices))
        X = np.full((len(ukeys), len(indices)), np.nan)
        sel = np.isin(sub.readout_index, indices)
        X[inv[sel], col[sub.readout_index[sel]]] = np.log10(sub.resistance_ohm[sel])
        keep = ~np.isnan(X).any(axis=1)
        n_cyc = int(sub.cycle.max()) + 1
        keys = np.stack([ukeys // n_cyc, ukeys % n_cyc], axis=1)
        return keys[keep], indices, X[keep]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(COLUMNS) + "\n")
        for c, cy, s, k, t, r, v, a in self.rows():
            out.write("%d,%d,%s,%d,%.10g,%.10e,%d,%d\n" % (c, cy, s, k, t, r, int(v), a))
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ReadoutMatrix":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty ReadoutMatrix CSV") from None
        if tuple(h.strip() for h in header) != COLUMNS:
            raise ValueError("unexpected ReadoutMatrix header")
        rows = []
        for n, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(COLUMNS):
                raise ValueError(f"line {n}: expected {len(COLUMNS)} fields")
            try:
                rows.append((int(rec[0]), int(rec[1]), _state(rec[2]), int(rec[3]), float(rec[4]),
                             float(rec[5]), bool(int(rec[6])), int(rec[7])))
            except (ValueError, KeyError):
                raise ValueError(f"line {n}: malformed row") from None
        return cls.from_rows(rows)

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read(cls, path) -> "ReadoutMatrix":
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())


def _state(s: str) -> str:
    u = str(s).strip().upper()
    if u not in STATES:
        raise KeyError(f"unknown state {s!r}")
    return u


# ---------------------------------------------------------------- cell driver


class _Cell:
    """One simulated 1T1R cell with its bench settings."""

    def __init__(self, p: HourglassParams, tr: AccessTransistor, T: float, compliance: float):
        self.p = p
        self.pv = p.vector()
        self.tr = tr
        self.T = T
        self.state = CellState()
        self.rtab = hc.resistance_table(p, 0.1)
        self.v_gate_set = tr.gate_for(compliance, T)
        self.rng = None
        self._steps: Dict[PulseSpec, Tuple[np.ndarray, np.ndarray]] = {}
        self._zv = np.zeros(1)
        self._zd = np.zeros(1)
        self.pending = 0.0

    def form(self, rng, compliance, v_max):
        hc.form(self.state, self.p, rng, compliance=compliance, v_max=v_max)
        self.arr = self.state.as_array()

    def ea(self):
        return self.p.ea + self.state.ea_offset

    def _run(self, volts, durs, r_series, i_clamp):
        tv = np.zeros(1)
        tn = np.zeros((1, 3), dtype=np.int64)
        cnt = np.zeros(1, dtype=np.int64)
        i, t = 0, 0.0
        ea = self.ea()
        while True:
            uni = self.rng.random(hc.RNG_CHUNK)
            i, t, _, st = K.run_segments(self.arr, volts, durs, i, t, self.pv, self.T, ea, r_series,
                                         i_clamp, uni, 0, False, tv, tv, tn, cnt)
            if st == K.STATUS_DONE:
                return

    def wait(self, dt):
        """Queue zero-bias time; consecutive waits run as one kinetic segment."""
        self.pending += dt

    def flush(self):
        if self.pending > 0.0:
            self._zd[0] = self.pending
            self._run(self._zv, self._zd, 0.0, 0.0)
        self.pending = 0.0

    def read(self) -> float:
        self.flush()
        return float(self.rtab[self.arr[K.S_NC]])

    def steps(self, pulse: PulseSpec):
        if pulse not in self._steps:
            v, d = waveform_substeps(render_waveform([pulse]))
            self._steps[pulse] = (np.asarray(v), np.asarray(d))
        return self._steps[pulse]

    def apply(self, pulse: PulseSpec, v_gate: Optional[float] = None, program: bool = True):
        """Drive one non-zero pulse through the transistor."""
        self.flush()
        if program:
            hc.draw_barrier_offset(self.state, self.p, self.rng)
        if pulse.amplitude > 0:
            vg = self.v_gate_set if v_gate is None else v_gate
            r_on = self.tr.r_on(vg, self.T)
            clamp = compliance_current(vg, self.T, self.tr)
        else:
            vg = POR_RESET_GATE if v_gate is None else v_gate
            r_on = self.tr.r_on(vg, self.T)
            clamp = 0.0
        v, d = self.steps(pulse)
        self._run(v, d, r_on, clamp)

    def run_pulse(self, pulse: PulseSpec):
        """Advance through a pulse that is not a programming pulse."""
        if pulse.kind == "Measure" or pulse.amplitude == 0.0:
            self.wait(pulse.duration)
        else:
            self.apply(pulse, program=False)


PROGRAM_KINDS = {SET: "Set", RESET: "Reset"}


def _program_index(pulses: Sequence[PulseSpec], state: str) -> int:
    kind = PROGRAM_KINDS[state]
    for k, p in enumerate(pulses):
        if p.kind == kind and p.amplitude != 0.0:
            return k
    raise ConfigError(f"{state} phase has no {kind} pulse")


def _new_cell(cfg: ExperimentConfig, cell_id: int) -> _Cell:
    cell = _Cell(cfg.hourglass, cfg.transistor, cfg.temperature_k, cfg.compliance)
    cell.form(_cycle_rng(cfg.master_seed, cell_id, 0), cfg.compliance, cfg.forming_v_max)
    return cell


def _threshold_ok(state: str, r: float, cfg: ExperimentConfig) -> bool:
    return r <= cfg.set_threshold if state == SET else r >= cfg.reset_threshold


def run_single_pulse(cfg: ExperimentConfig) -> ReadoutMatrix:
    """Single-pulse unverified programming with scheduled readouts.

    Each phase of the sequence runs pulse by pulse. A Measure pulse reads the
    cell at its flat-top midpoint without disturbing it; the read before the
    programming pulse is RD#0 (``t_after_program_s = 0``), the k-th read
    after it is RD#k stamped with the k-th schedule time. Everything else
    that is not a programming pulse is zero-bias relaxation (Disturb pulses
    with nonzero amplitude are applied through the transistor).
    ``verify_passed`` records whether RD#1 meets the state's threshold.
    """
    if cfg.algorithm != "SP":
        raise ConfigError("run_single_pulse needs algorithm SP")
    lib, seq = cfg.resolved_program()
    sched = cfg.schedule.times_after_program
    rows = []
    for cell_id in cfg.cells:
        cell = _new_cell(cfg, cell_id)
        for cyc in range(cfg.n_cycles):
            cell.rng = _cycle_rng(cfg.master_seed, cell_id, 1, cyc)
            phases = expand_sweep(seq, lib, cyc)
            for state, pulses in zip(STATES, phases):
                k_prog = _program_index(pulses, state)
                n_after = sum(1 for p in pulses[k_prog + 1:] if p.kind == "Measure")
                if n_after != len(sched):
                    raise ConfigError(f"{state} phase has {n_after} reads after programming, "
                                      f"schedule has {len(sched)}")
                reads = []
                r0 = None
                for k, p in enumerate(pulses):
                    if k == k_prog:
                        cell.apply(p)
                    elif p.kind == "Measure":
                        cell.wait(p.marker_offset)
                        r = cell.read()
                        cell.wait(p.duration - p.marker_offset)
                        if k < k_prog:
                            r0 = r
                        else:
                            reads.append(r)
                    else:
                        cell.run_pulse(p)
                cell.flush()
                ok = _threshold_ok(state, reads[0], cfg)
                if r0 is not None:
                    rows.append((cell_id, cyc, state, 0, 0.0, r0, ok, 1))
                for j, r in enumerate(reads, start=1):
                    rows.append((cell_id, cyc, state, j, sched[j - 1], r, ok, 1))
    return ReadoutMatrix.from_rows(rows)


def _clamped(start: float, step: float, stop: float, k: int) -> float:
    return SweepSpec(0, "amplitude", start, step, stop).value(k)


def isp_levels(state: str):
    lo, st, hi = ISP_SET_GATE if state == SET else ISP_RESET_AMPLITUDE
    n = SweepSpec(0, "amplitude", lo, st, hi).n_levels
    return [_clamped(lo, st, hi, k) for k in range(n)]


def run_verified(cfg: ExperimentConfig) -> ReadoutMatrix:
    """ISP / FSP program-and-verify with scheduled readouts.

    After every programming pulse the cell waits one Measure pulse and is
    verify-read. ISP steps the SET gate (0.8 -> 1.3 V) or the RESET amplitude
    (-1.0 -> -2.0 V) per attempt; FSP repeats the sequence's own pulse up to
    ``max_attempts`` times. The final verify read is RD#0; the schedule reads
    follow, timed from the end of the last programming pulse. An exhausted
    cycle keeps its best-effort state and is marked failed.
    """
    if cfg.algorithm not in ("ISP", "FSP"):
        raise ConfigError("run_verified needs algorithm ISP or FSP")
    lib, seq = cfg.resolved_program()
    sched = cfg.schedule.times_after_program
    measure = next((p for p in lib.pulses.values() if p.kind == "Measure"), POR_MEASURE)
    levels = {s: isp_levels(s) for s in STATES}
    rows = []
    for cell_id in cfg.cells:
        cell = _new_cell(cfg, cell_id)
        for cyc in range(cfg.n_cycles):
            cell.rng = _cycle_rng(cfg.master_seed, cell_id, 1, cyc)
            phases = expand_sweep(seq, lib, cyc)
            for state, pulses in zip(STATES, phases):
                base = pulses[_program_index(pulses, state)]
                if cfg.algorithm == "ISP":
                    plan = [(base, g) for g in levels[SET]] if state == SET else \
                        [(replace(base, amplitude=a), None) for a in levels[RESET]]
                else:
                    plan = [(base, None)] * cfg.max_attempts
                ok = False
                used = 0
                r = math.nan
                for pulse, gate in plan:
                    used += 1
                    cell.apply(pulse, v_gate=gate)
                    cell.wait(measure.marker_offset)
                    r = cell.read()
                    cell.wait(measure.duration - measure.marker_offset)
                    if _threshold_ok(state, r, cfg):
                        ok = True
                        break
                rows.append((cell_id, cyc, state, 0, 0.0, r, ok, used))
                elapsed = measure.duration
                for j, t in enumerate(sched, start=1):
                    cell.wait(t - elapsed)
                    rows.append((cell_id, cyc, state, j, t, cell.read(), ok, used))
                    elapsed = t
                cell.flush()
    return ReadoutMatrix.from_rows(rows)


def run_experiment(cfg: ExperimentConfig) -> ReadoutMatrix:
    return run_single_pulse(cfg) if cfg.algorithm == "SP" else run_verified(cfg)


# ---------------------------------------------------------------- endurance


@dataclass
class EnduranceSeries:
    set_ohm: np.ndarray  # (n_cells, n_cycles)
    reset_ohm: np.ndarray
    decades: List[Tuple[int, int, float, float, float]]  # (first, last, med SET, med RESET, window)

    def window(self) -> np.ndarray:
        return np.array([d[4] for d in self.decades])


def _decade_edges(n: int):
    lo, hi = 1, 10
    while lo <= n:
        yield lo, min(hi, n)
        lo, hi = hi + 1, hi * 10


def run_endurance(cfg: ExperimentConfig, max_cycles: int) -> EnduranceSeries:
    """SP cycling with a single read per state, summarised per cycle decade.

    Decades are cycles 1-10, 11-100, 101-1000, ... (1-based); each reports the
    pooled median SET and RESET resistance and their ratio.
    """
    if cfg.algorithm != "SP":
        raise ConfigError("endurance runs use algorithm SP")
    if max_cycles < 1:
        raise ConfigError("max_cycles must be >= 1")
    lib, seq = cfg.resolved_program()
    cells = cfg.cells
    rs = np.zeros((len(cells), max_cycles))
    rr = np.zeros((len(cells), max_cycles))
    measure = next((p for p in lib.pulses.values() if p.kind == "Measure"), POR_MEASURE)
    seq = replace(seq, n_cycles=max_cycles)
    for ci, cell_id in enumerate(cells):
        cell = _new_cell(cfg, cell_id)
        for cyc in range(max_cycles):
            cell.rng = _cycle_rng(cfg.master_seed, cell_id, 1, cyc)
            phases = expand_sweep(seq, lib, cyc)
            for state, pulses, out in zip(STATES, phases, (rs, rr)):
                cell.apply(pulses[_program_index(pulses, state)])
                cell.wait(measure.marker_offset)
                out[ci, cyc] = cell.read()
                cell.wait(measure.duration - measure.marker_offset)
            cell.flush()
    decades = []
    for lo, hi in _decade_edges(max_cycles):
        ms = float(np.median(rs[:, lo - 1:hi]))
        mr = float(np.median(rr[:, lo - 1:hi]))
        decades.append((lo, hi, ms, mr, mr / ms))
    return EnduranceSeries(rs, rr, decades)


# ---------------------------------------------------------------- DC cycling


@dataclass
class IVCurve:
    v: np.ndarray  # applied voltage
    i: np.ndarray
    v_rme: np.ndarray

    def branch_current(self, v: float, branch: str = "up") -> float:
        """Current at applied ``v`` on the outgoing (``up``) or return branch."""
        n = len(self.v)
        if n == 0:
            return 0.0
        k = int(np.argmax(np.abs(self.v)))
        vv, ii = (self.v[:k + 1], self.i[:k + 1]) if branch == "up" else (self.v[k:][::-1], self.i[k:][::-1])
        order = np.argsort(np.abs(vv), kind="stable")
        return float(np.interp(abs(v), np.abs(vv)[order], ii[order]))


@dataclass
class DCCurves:
    forming: Optional[IVCurve]
    set: IVCurve
    reset: IVCurve
    v_forming: float


def _ramp(v_max: float, rate: float) -> Waveform:
    if v_max == 0.0:
        return Waveform(((0.0, 0.0), (1e-3, 0.0)))
    t = abs(v_max) / rate
    return Waveform(((0.0, 0.0), (t, v_max), (2 * t, 0.0)))


def _sweep(state, w, p, rng, r_on, clamp, T):
    volts, _ = waveform_substeps(w)
    _, trace = hc.apply_waveform(state, w, p, rng, compliance=clamp, r_series=r_on, temperature=T)
    return IVCurve(np.asarray(volts), trace.i_a, trace.v_rme_v)


def dc_cycle(state: CellState, p: HourglassParams, rng, tr: AccessTransistor = AccessTransistor(),
             T: float = 298.15, compliance: float = POR_COMPLIANCE, v_set: float = 1.5,
             v_reset: float = -1.5, v_form_max: float = 3.5, rate: float = 100.0) -> DCCurves:
    """Quasi-static forming (if the cell is fresh), SET and RESET sweeps.

    Triangular sweeps 0 -> peak -> 0 at ``rate`` V/s, 10 mV substeps. The
    forming branch carries leakage up to the sampled breakdown voltage and
    the compliance current beyond it.
    """
    forming = None
    v_f = state.v_forming
    if not state.formed:
        n = max(1, int(round(v_form_max / 0.01)))
        v = np.linspace(0.0, v_form_max, n + 1)
        hc.form(state, p, rng, compliance=compliance, v_max=v_form_max)
        v_f = state.v_forming
        i = np.where(v < v_f, p.g_leak * v, compliance)
        forming = IVCurve(v, i, np.where(v < v_f, v, np.nan))
    vg = tr.gate_for(compliance, T)
    s = _sweep(state, _ramp(v_set, rate), p, rng, tr.r_on(vg, T), compliance_current(vg, T, tr), T)
    r = _sweep(state, _ramp(v_reset, rate), p, rng, tr.r_on(POR_RESET_GATE, T), 0.0, T)
    return DCCurves(forming, s, r, v_f)
