"""Stochastic Hourglass cell: QPC conduction, vacancy kinetics, forming.

The filament is two vacancy reservoirs (top, TR, and bottom, BR) joined by a
constriction C holding ``n_c`` vacancies. Conduction through C is a saddle
point contact whose transverse confinement loosens as ``n_c`` grows; single
vacancy hops between C and the reservoirs are simulated with Gillespie's
algorithm.

Sign conventions
----------------
``V`` passed to :func:`conduction_current`, :func:`kmc_step` and
:func:`apply_waveform` is the bias across the cell, top electrode relative to
bottom. The kinetic equations (:func:`transition_rates`) take the opposite
sign: a positive top electrode pushes the vacancies downward, TR -> C -> BR.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from typing import Optional

import numpy as np

from . import kernels as K
from .pulse_engine import Waveform, waveform_substeps

HBAR = 1.054571817e-34  # J s
E_CHARGE = 1.602176634e-19  # C
G0 = K.G0
K_B_EV = K.K_B_EV

RNG_CHUNK = 4096


class Unformed(RuntimeError):
    """Operation needs a formed filament."""


class FormingFailed(RuntimeError):
    """The forming ramp ended below the cell's breakdown voltage."""


@dataclass(frozen=True)
class HourglassParams:
    """Model constants (SI units, energies in eV).

    ``omega_y_min`` and ``omega_x`` are angular frequencies; the conduction
    model only uses the energies hbar*omega. ``m_eff`` is carried for
    completeness but is not needed once those energies are fixed.
    ``v_barrier`` places the band bottom of the constriction relative to the
    Fermi level, ``g_leak`` is the pre-forming leakage conductance,
    ``ea_sigma`` the spread of the per-programming barrier offset and
    ``v_hold`` the voltage the cell sustains while it is current-limited,
    used to size the filament at forming.
    """

    ea: float = 0.79
    alpha0: float = 0.2
    m_n: float = 3.0
    c: float = 1e13
    n_tr_max: int = 20
    n_br_max: int = 2
    n_total: int = 32
    omega_y_min: float = 14.4 * E_CHARGE / HBAR
    omega_x: float = 0.641 * E_CHARGE / HBAR
    m_eff: float = 9.1093837015e-32
    r_th: float = 2e7
    t_ambient: float = 298.15
    n_c_min: int = 1
    v_forming_mean: float = 2.6
    v_forming_sigma: float = 0.1
    v_barrier: float = -0.30
    g_leak: float = 1e-9
    ea_sigma: float = 0.08
    v_hold: float = 1.2

    def __post_init__(self):
        for name in ("ea", "c", "omega_y_min", "omega_x", "m_eff", "r_th", "t_ambient"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.n_tr_max < 1 or self.n_br_max < 1:
            raise ValueError("reservoir capacities must be >= 1")
        if self.n_c_min < 1:
            raise ValueError("n_c_min must be >= 1")
        if self.n_total < self.n_tr_max + self.n_br_max + self.n_c_min:
            raise ValueError("n_total must be >= n_tr_max + n_br_max + n_c_min")
        if self.v_forming_sigma < 0 or self.ea_sigma < 0 or self.g_leak < 0:
            raise ValueError("spreads and leakage must be >= 0")

    @property
    def ey_min(self) -> float:
        """hbar*omega_y at n_c = 1, eV."""
        return HBAR * self.omega_y_min / E_CHARGE

    @property
    def ex(self) -> float:
        """hbar*omega_x, eV."""
        return HBAR * self.omega_x / E_CHARGE

    def vector(self) -> np.ndarray:
        return _vector(self)


@functools.lru_cache(maxsize=64)
def _vector(p: HourglassParams) -> np.ndarray:
    v = np.zeros(K.N_PARAMS)
    v[K.P_EA] = p.ea
    v[K.P_ALPHA0] = p.alpha0
    v[K.P_MN] = p.m_n
    v[K.P_C] = p.c
    v[K.P_NTR] = p.n_tr_max
    v[K.P_NBR] = p.n_br_max
    v[K.P_NTOT] = p.n_total
    v[K.P_EY] = p.ey_min
    v[K.P_EX] = p.ex
    v[K.P_RTH] = p.r_th
    v[K.P_NCMIN] = p.n_c_min
    v[K.P_VBAR] = p.v_barrier
    v[K.P_GLEAK] = p.g_leak
    v.setflags(write=False)
    return v


_INT_FIELDS = {"n_tr_max", "n_br_max", "n_total", "n_c_min"}


def parse_params(text: str, base: Optional[HourglassParams] = None) -> HourglassParams:
    """Build parameters from ``name = value`` lines (``#`` starts a comment)."""
    known = {f.name for f in fields(HourglassParams)}
    vals = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected name = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {n}: unknown parameter {key!r}")
        try:
            vals[key] = int(val) if key in _INT_FIELDS else float(val)
        except ValueError:
            raise ValueError(f"line {n}: bad value for {key}") from None
    return replace(base or HourglassParams(), **vals)


def format_params(p: HourglassParams) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in asdict(p).items())


PRESETS = ("hfo2", "hfalo", "tao")


@functools.lru_cache(maxsize=None)
def load_preset(name: str) -> HourglassParams:
    """Shipped parameter set by name (``hfo2``, ``hfalo`` or ``tao``)."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("oxsim.presets").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return parse_params(text)


@dataclass
class CellState:
    n_tr: int = 0
    n_c: int = 0
    n_br: int = 0
    formed: bool = False
    # barrier offset redrawn at every programming operation, eV
    ea_offset: float = 0.0
    v_forming: float = math.nan

    def as_array(self) -> np.ndarray:
        return np.array([self.n_tr, self.n_c, self.n_br, int(self.formed)], dtype=np.int64)

    def load_array(self, a) -> None:
        self.n_tr, self.n_c, self.n_br = int(a[0]), int(a[1]), int(a[2])
        self.formed = bool(a[3])

    def total(self) -> int:
        return self.n_tr + self.n_c + self.n_br

    def copy(self) -> "CellState":
        return replace(self)


@dataclass(frozen=True)
class RateSet:
    r1: float
    r2: float
    r3: float
    r4: float

    @property
    def total(self) -> float:
        return self.r1 + self.r2 + self.r3 + self.r4

    def as_tuple(self):
        return (self.r1, self.r2, self.r3, self.r4)


@dataclass
class Trace:
    """Per-substep record of a driven run (values at each substep's end)."""

    t_s: np.ndarray
    v_rme_v: np.ndarray
    i_a: np.ndarray
    n_tr: np.ndarray
    n_c: np.ndarray
    n_br: np.ndarray

    def __len__(self):
        return len(self.t_s)

    def to_csv(self) -> str:
        lines = ["t_s,v_rme_v,i_a,n_tr,n_c,n_br"]
        for row in zip(self.t_s, self.v_rme_v, self.i_a, self.n_tr, self.n_c, self.n_br):
            lines.append("%.12e,%.9e,%.9e,%d,%d,%d" % row)
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- conduction


def mode_energies(n_c: int, V: float, p: HourglassParams) -> np.ndarray:
    """Transverse mode energies E_n in joules.

    E_n = e*v_barrier + hbar*omega_y(n_c)*(n + 1/2) with
    omega_y(n_c) = omega_y_min / n_c, truncated once E_n exceeds the bias
    window by 10*hbar*omega_x (at least one mode is kept).
    """
    if n_c < 1:
        raise ValueError("n_c must be >= 1")
    nm = K.n_modes(float(V), float(n_c), p.ey_min, p.ex, p.v_barrier)
    spacing = HBAR * p.omega_y_min / n_c
    return E_CHARGE * p.v_barrier + spacing * (np.arange(nm) + 0.5)


def conduction_current(V, n_c, p: HourglassParams):
    """Landauer current (A) through the constriction.

    Scalars go through the compiled kernel; arrays are broadcast with the
    numpy implementation.
    """
    if np.ndim(V) == 0 and np.ndim(n_c) == 0:
        if n_c < 1:
            raise ValueError("n_c must be >= 1")
        cur, _ = K.qpc_current(float(V), float(n_c), p.ey_min, p.ex, p.v_barrier)
        return cur
    if np.any(np.asarray(n_c) < 1):
        raise ValueError("n_c must be >= 1")
    return K.qpc_current_numpy(V, n_c, p.ey_min, p.ex, p.v_barrier)


@functools.lru_cache(maxsize=64)
def resistance_table(p: HourglassParams, v_read: float = 0.1) -> np.ndarray:
    """R(n_c) at ``v_read`` for n_c = 0..n_total (entry 0 is inf)."""
    tab = K.read_resistance_table(p.vector(), v_read, p.n_total)
    tab.setflags(write=False)
    return tab


def read_resistance(state: CellState, p: HourglassParams, v_read: float = 0.1) -> float:
    """Read resistance at ``v_read`` (default 0.1 V), ohms."""
    if not state.formed:
        raise Unformed("cell has not been formed")
    return float(resistance_table(p, v_read)[state.n_c])


# ---------------------------------------------------------------- kinetics


def barrier_alpha(n_c, p: HourglassParams):
    """alpha = alpha0 + m_n / n_c."""
    if np.ndim(n_c):
        return p.alpha0 + p.m_n / np.asarray(n_c, dtype=float)
    return p.alpha0 + p.m_n / float(n_c)


def local_temperature(V, I, n_c, p: HourglassParams, t_ambient: Optional[float] = None):
    """Filament temperature T = T_amb + (alpha*V*I/n_c)*R_th."""
    t_amb = p.t_ambient if t_ambient is None else t_ambient
    return t_amb + barrier_alpha(n_c, p) * V * I / n_c * p.r_th


def transition_rates(state: CellState, V: float, T: float, p: HourglassParams,
                     ea: Optional[float] = None) -> RateSet:
    """The four Hourglass event rates, 1/s.

    r1: C -> TR, r2: TR -> C, r3: BR -> C, r4: C -> BR. ``V`` is the kinetic
    bias in the convention of the rate equations (bottom relative to top,
    i.e. minus the cell bias). ``ea`` defaults to ``p.ea + state.ea_offset``.
    Moves out of C are zero at the ``n_c_min`` floor.
    """
    if T <= 0:
        raise ValueError("temperature must be > 0")
    if ea is None:
        ea = p.ea + state.ea_offset
    out = np.zeros(4)
    K.rates_into(float(state.n_tr), float(state.n_c), float(state.n_br), float(V), float(T), ea,
                 p.vector(), out)
    return RateSet(*(float(x) for x in out))


def _drive(arr, volts, durs, p: HourglassParams, rng, *, t_amb, ea, r_series=0.0,
           i_clamp=0.0, record=False, pvec=None):
    """Run the Gillespie kernel over substeps, refilling uniforms from ``rng``."""
    volts = np.ascontiguousarray(volts, dtype=float)
    durs = np.ascontiguousarray(durs, dtype=float)
    n = volts.shape[0]
    m = n if record else 1
    tr_v = np.zeros(m)
    tr_i = np.zeros(m)
    tr_n = np.zeros((m, 3), dtype=np.int64)
    counts = np.zeros(1, dtype=np.int64)
    pv = p.vector() if pvec is None else pvec
    i, t = 0, 0.0
    while True:
        uni = rng.random(RNG_CHUNK)
        i, t, _, status = K.run_segments(arr, volts, durs, i, t, pv, t_amb, ea, r_series, i_clamp,
                                         uni, 0, record, tr_v, tr_i, tr_n, counts)
        if status == K.STATUS_DONE:
            break
    return tr_v, tr_i, tr_n, int(counts[0])


def kmc_step(state: CellState, V: float, dt: float, rng, p: HourglassParams,
             temperature: Optional[float] = None, self_heating: bool = True) -> CellState:
    """Advance ``state`` by ``dt`` seconds at constant cell bias ``V``.

    The local temperature follows the cell's own dissipation unless
    ``self_heating`` is off, in which case ``temperature`` (or the ambient) is
    used as is. The state is updated in place and returned.
    """
    if not state.formed:
        raise Unformed("cell has not been formed")
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return state
    t_amb = p.t_ambient if temperature is None else temperature
    pv = p.vector()
    if not self_heating:
        pv = pv.copy()
        pv[K.P_RTH] = 0.0
    arr = state.as_array()
    _drive(arr, [V], [dt], p, rng, t_amb=t_amb, ea=p.ea + state.ea_offset, pvec=pv)
    state.load_array(arr)
    return state


def kmc_events(state: CellState, V: float, T: float, n_events: int, rng, p: HourglassParams):
    """Fire ``n_events`` events at fixed kinetic bias and temperature.

    Checks conservation and occupancy bounds after every single event and
    returns ``(events fired, violations)``. ``V`` uses the kinetic convention
    of :func:`transition_rates`.
    """
    if not state.formed:
        raise Unformed("cell has not been formed")
    arr = state.as_array()
    pv = p.vector()
    ea = p.ea + state.ea_offset
    fired = bad = 0
    while fired < n_events:
        uni = rng.random(min(RNG_CHUNK * 16, n_events - fired))
        f, b, _ = K.run_checked_events(arr, n_events - fired, float(V), float(T), ea, pv, uni)
        fired += f
        bad += b
        if f < uni.shape[0]:
            break
    state.load_array(arr)
    return fired, bad


def apply_waveform(state: CellState, w: Waveform, p: HourglassParams, rng, compliance: float = 0.0,
                   r_series: float = 0.0, temperature: Optional[float] = None, record: bool = True,
                   dv_max: float = 0.01):
    """Drive the cell with a waveform through an optional series device.

    The waveform is cut into substeps changing by at most ``dv_max`` volts.
    In each substep the applied voltage is split between ``r_series`` and the
    cell (positive bias additionally capped at ``compliance`` amperes, when
    > 0); the cell share and the resulting self-heating drive the kinetics,
    and the divider is re-solved after every event.

    Returns
    -------
    (state, trace)
        ``trace`` is a :class:`Trace` (``None`` when ``record`` is false).
    """
    if not state.formed:
        raise Unformed("cell has not been formed")
    volts, durs = waveform_substeps(w, dv_max)
    t_amb = p.t_ambient if temperature is None else temperature
    arr = state.as_array()
    if not volts:
        return state, (_empty_trace() if record else None)
    tr_v, tr_i, tr_n, _ = _drive(arr, volts, durs, p, rng, t_amb=t_amb, ea=p.ea + state.ea_offset,
                                 r_series=r_series, i_clamp=compliance, record=record)
    state.load_array(arr)
    if not record:
        return state, None
    t = np.cumsum(durs)
    return state, Trace(t, tr_v, tr_i, tr_n[:, 0].copy(), tr_n[:, 1].copy(), tr_n[:, 2].copy())


def _empty_trace() -> Trace:
    z = np.zeros(0)
    zi = np.zeros(0, dtype=np.int64)
    return Trace(z, z, z, zi, zi, zi)


def draw_barrier_offset(state: CellState, p: HourglassParams, rng) -> float:
    """Redraw the per-programming barrier offset ~ Normal(0, ea_sigma)."""
    state.ea_offset = p.ea_sigma * float(rng.standard_normal()) if p.ea_sigma > 0 else 0.0
    return state.ea_offset


# ---------------------------------------------------------------- forming


def sample_forming_voltage(p: HourglassParams, rng) -> float:
    return float(rng.normal(p.v_forming_mean, p.v_forming_sigma))


def formed_occupancy(p: HourglassParams, compliance: float):
    """(n_tr, n_c, n_br) right after forming at ``compliance`` amperes.

    n_c is the smallest constriction that carries the compliance current at
    ``v_hold``; the bottom reservoir is left full (forming has SET polarity).
    """
    n_lo = max(p.n_c_min, p.n_total - p.n_tr_max - p.n_br_max)
    n_hi = p.n_total - p.n_br_max
    n_c = n_hi
    for n in range(n_lo, n_hi + 1):
        if conduction_current(p.v_hold, n, p) >= compliance:
            n_c = n
            break
    n_br = p.n_br_max
    return p.n_total - n_c - n_br, n_c, n_br


def form(state: CellState, p: HourglassParams, rng, compliance: float = 50e-6,
         v_max: float = 3.5) -> CellState:
    """Soft breakdown under a 0 -> ``v_max`` ramp.

    A breakdown voltage V_f ~ Normal(v_forming_mean, v_forming_sigma) is
    drawn; if the ramp reaches it the filament appears with the occupancy of
    :func:`formed_occupancy`, otherwise :class:`FormingFailed` is raised.
    """
    if state.formed:
        raise ValueError("cell is already formed")
    v_f = sample_forming_voltage(p, rng)
    state.v_forming = v_f
    if v_max < v_f:
        raise FormingFailed(f"ramp top {v_max:g} V below breakdown voltage {v_f:.3f} V")
    state.n_tr, state.n_c, state.n_br = formed_occupancy(p, compliance)
    state.formed = True
    state.ea_offset = 0.0
    return state


def fresh_cell() -> CellState:
    return CellState()
