"""Hot inner loops: QPC conduction, series-divider solve, Hourglass kinetics.

Everything here works on plain floats/ints and flat numpy arrays so the
same source runs under ``numba.njit`` or as ordinary Python (see
:mod:`oxsim._accel`). Energies are in eV, so ``q*V`` in eV is just ``V``.

Parameter vectors are float64 arrays indexed by the ``P_*`` constants.
"""

import math

import numpy as np

from ._accel import njit

# Physical constants (CODATA 2018).
G0 = 7.748091729e-5  # 2e^2/h, siemens
K_B_EV = 8.617333262e-5  # Boltzmann constant, eV/K

P_EA = 0
P_ALPHA0 = 1
P_MN = 2
P_C = 3
P_NTR = 4
P_NBR = 5
P_NTOT = 6
P_EY = 7  # hbar*omega_y,min, eV
P_EX = 8  # hbar*omega_x, eV
P_RTH = 9
P_NCMIN = 10
P_VBAR = 11
P_GLEAK = 12
N_PARAMS = 13

# state vector slots
S_NTR = 0
S_NC = 1
S_NBR = 2
S_FORMED = 3

STATUS_DONE = 0
STATUS_NEED_RNG = 1

# exp() argument cap; rates beyond e^700 are meaningless anyway
_EXP_CAP = 700.0


@njit
def softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit
def sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@njit
def n_modes(v, n_c, ey_min, ex, vbar):
    """Number of transverse modes kept: E_n <= |V|/2 + 10*hbar*omega_x (at least one)."""
    ey = ey_min / n_c
    top = 0.5 * abs(v) + 10.0 * ex
    if vbar + 0.5 * ey > top:
        return 1
    return int(math.floor((top - vbar) / ey - 0.5)) + 1


@njit
def qpc_current(v, n_c, ey_min, ex, vbar):
    """Landauer current and differential conductance for a saddle-point QPC.

    Each mode n has transmission 1 / (1 + exp(-2*pi*(E - E_n)/(hbar*omega_x)))
    with E_n = vbar + hbar*omega_y*(n + 1/2), integrated in closed form over the
    symmetric window [-|V|/2, |V|/2].
    """
    if v == 0.0:
        # dI/dV at zero bias, needed as a Newton slope
        a = 2.0 * math.pi / ex
        ey = ey_min / n_c
        nm = n_modes(0.0, n_c, ey_min, ex, vbar)
        g = 0.0
        for n in range(nm):
            g += sigmoid(-a * (vbar + ey * (n + 0.5)))
        return 0.0, G0 * g
    a = 2.0 * math.pi / ex
    ey = ey_min / n_c
    hv = 0.5 * abs(v)
    nm = n_modes(v, n_c, ey_min, ex, vbar)
    cur = 0.0
    g = 0.0
    for n in range(nm):
        en = vbar + ey * (n + 0.5)
        xp = a * (hv - en)
        xm = a * (-hv - en)
        cur += (softplus(xp) - softplus(xm)) / a
        g += 0.5 * (sigmoid(xp) + sigmoid(xm))
    if v < 0.0:
        cur = -cur
    return G0 * cur, G0 * g


@njit
def cell_current(v, n_c, formed, p):
    if formed == 0 or n_c < 1:
        return p[P_GLEAK] * v, p[P_GLEAK]
    return qpc_current(v, float(n_c), p[P_EY], p[P_EX], p[P_VBAR])


@njit
def solve_partition(v_app, n_c, formed, p, r_series, i_clamp):
    """Voltage across the cell in series with an access device.

    The device conducts ``u / r_series`` for a drop ``u``; for positive applied
    bias that current is additionally capped at ``i_clamp`` (when > 0).
    Returns (v_rme, i_cell).
    """
    if v_app == 0.0:
        return 0.0, 0.0
    sgn = 1.0 if v_app > 0.0 else -1.0
    va = abs(v_app)
    clamp = i_clamp if (v_app > 0.0 and i_clamp > 0.0) else 0.0
    if r_series <= 0.0 and clamp == 0.0:
        cur, _ = cell_current(v_app, n_c, formed, p)
        return v_app, cur
    i_top, _ = cell_current(va, n_c, formed, p)
    if r_series <= 0.0 and i_top <= clamp:
        return v_app, sgn * i_top

    lo = 0.0
    hi = va
    # start from the ohmic-device guess, clipped into the bracket
    v = 0.5 * va
    for _ in range(80):
        ic, gc = cell_current(v, n_c, formed, p)
        u = va - v
        if r_series > 0.0:
            it = u / r_series
            dit = 1.0 / r_series
        else:
            it = clamp
            dit = 0.0
        if clamp > 0.0 and it > clamp:
            it = clamp
            dit = 0.0
        g = ic - it
        if g > 0.0:
            hi = v
        else:
            lo = v
        dg = gc + dit
        if dg > 0.0:
            vn = v - g / dg
        else:
            vn = 0.5 * (lo + hi)
        if vn <= lo or vn >= hi:
            vn = 0.5 * (lo + hi)
        if abs(vn - v) <= 1e-12 + 1e-10 * va:
            v = vn
            break
        v = vn
    ic, _ = cell_current(v, n_c, formed, p)
    return sgn * v, sgn * ic


@njit
def barrier_alpha(n_c, p):
    return p[P_ALPHA0] + p[P_MN] / n_c


@njit
def local_temperature(v, cur, n_c, p, t_amb):
    alpha = barrier_alpha(float(n_c), p)
    return t_amb + alpha * v * cur / n_c * p[P_RTH]


@njit
def rates_into(n_tr, n_c, n_br, v_kin, temp, ea, p, out):
    """Four Hourglass event rates (1/tau_1..1/tau_4) written into ``out``.

    1: C->TR, 2: TR->C, 3: BR->C, 4: C->BR. ``v_kin`` enters the exponents
    exactly as in the kinetic equations; moves out of the constriction are
    switched off at the n_C floor.
    """
    kt = K_B_EV * temp
    alpha = p[P_ALPHA0] + p[P_MN] / n_c
    pre = p[P_C] * n_c
    f_tr = n_tr / p[P_NTR]
    f_br = n_br / p[P_NBR]
    ef = alpha * v_kin
    e_fwd = -(ea - ef) / kt
    e_bwd = -(ea + ef) / kt
    if e_fwd > _EXP_CAP:
        e_fwd = _EXP_CAP
    if e_bwd > _EXP_CAP:
        e_bwd = _EXP_CAP
    x_fwd = math.exp(e_fwd)
    x_bwd = math.exp(e_bwd)
    out[0] = pre * (1.0 - f_tr) * x_fwd
    out[1] = pre * f_tr * x_bwd
    out[2] = pre * f_br * x_fwd
    out[3] = pre * (1.0 - f_br) * x_bwd
    if n_c <= p[P_NCMIN]:
        out[0] = 0.0
        out[3] = 0.0
    for k in range(4):
        if out[k] < 0.0:
            out[k] = 0.0


@njit
def fire_event(state, k):
    if k == 0:
        state[S_NC] -= 1
        state[S_NTR] += 1
    elif k == 1:
        state[S_NTR] -= 1
        state[S_NC] += 1
    elif k == 2:
        state[S_NBR] -= 1
        state[S_NC] += 1
    else:
        state[S_NC] -= 1
        state[S_NBR] += 1


@njit
def run_segments(state, v_app, dts, i0, t0, p, t_amb, ea, r_series, i_clamp,
                 uni, upos, record, tr_v, tr_i, tr_n, counts):
    """Gillespie integration over piecewise-constant applied-voltage substeps.

    ``state`` is int64[4] (n_TR, n_C, n_BR, formed), updated in place. Starts at
    substep ``i0`` with ``t0`` seconds already elapsed inside it. Uniform
    variates are read from ``uni`` starting at ``upos``; when the buffer is
    exhausted the loop returns ``STATUS_NEED_RNG`` together with the resume
    point, and the caller refills and calls again. ``counts[0]`` accumulates
    fired events. With ``record`` set, the end-of-substep V_RME, current and
    occupancies go to ``tr_v``, ``tr_i`` and ``tr_n`` (int64[nseg, 3]).

    The kinetic bias is the negated cell bias: a positive top electrode pushes
    the (positively charged) vacancies downward, TR -> C -> BR.
    """
    r = np.zeros(4)
    nseg = v_app.shape[0]
    nuni = uni.shape[0]
    i = i0
    t_in = t0
    while i < nseg:
        va = v_app[i]
        dt = dts[i]
        v_rme = 0.0
        cur = 0.0
        while True:
            n_c = state[S_NC]
            if state[S_FORMED] == 0:
                v_rme, cur = solve_partition(va, n_c, 0, p, r_series, i_clamp)
                break
            if va != 0.0:
                v_rme, cur = solve_partition(va, n_c, 1, p, r_series, i_clamp)
                temp = local_temperature(v_rme, cur, n_c, p, t_amb)
            else:
                v_rme = 0.0
                cur = 0.0
                temp = t_amb
            rates_into(float(state[S_NTR]), float(n_c), float(state[S_NBR]), -v_rme,
                       temp, ea, p, r)
            lam = r[0] + r[1] + r[2] + r[3]
            if lam <= 0.0:
                break
            if upos + 2 > nuni:
                return i, t_in, upos, STATUS_NEED_RNG
            tau = -math.log1p(-uni[upos]) / lam
            upos += 1
            if t_in + tau >= dt:
                break
            t_in += tau
            x = uni[upos] * lam
            upos += 1
            k = 0
            acc = r[0]
            while k < 3 and x >= acc:
                k += 1
                acc += r[k]
            # guard against round-off picking a zero-rate event
            while r[k] == 0.0 and k > 0:
                k -= 1
            fire_event(state, k)
            counts[0] += 1
        if record:
            if state[S_FORMED] == 1 and va != 0.0:
                v_rme, cur = solve_partition(va, state[S_NC], 1, p, r_series, i_clamp)
            tr_v[i] = v_rme
            tr_i[i] = cur
            tr_n[i, 0] = state[S_NTR]
            tr_n[i, 1] = state[S_NC]
            tr_n[i, 2] = state[S_NBR]
        i += 1
        t_in = 0.0
    return i, t_in, upos, STATUS_DONE


@njit
def run_checked_events(state, n_events, v_kin, temp, ea, p, uni):
    """Fire up to ``n_events`` events at fixed bias and temperature.

    After every event the conservation law and occupancy bounds are checked.
    Returns (events fired, violations seen, uniforms used); stops early when
    all rates vanish or ``uni`` runs out.
    """
    r = np.zeros(4)
    ntot = int(p[P_NTOT])
    ntr_max = int(p[P_NTR])
    nbr_max = int(p[P_NBR])
    ncmin = int(p[P_NCMIN])
    fired = 0
    bad = 0
    upos = 0
    nuni = uni.shape[0]
    while fired < n_events and upos + 1 <= nuni:
        rates_into(float(state[S_NTR]), float(state[S_NC]), float(state[S_NBR]), v_kin,
                   temp, ea, p, r)
        lam = r[0] + r[1] + r[2] + r[3]
        if lam <= 0.0:
            break
        x = uni[upos] * lam
        upos += 1
        k = 0
        acc = r[0]
        while k < 3 and x >= acc:
            k += 1
            acc += r[k]
        while r[k] == 0.0 and k > 0:
            k -= 1
        fire_event(state, k)
        fired += 1
        ntr = state[S_NTR]
        nc = state[S_NC]
        nbr = state[S_NBR]
        if ntr + nc + nbr != ntot or ntr < 0 or ntr > ntr_max or nbr < 0 or nbr > nbr_max or nc < ncmin:
            bad += 1
    return fired, bad, upos


@njit
def read_resistance_table(p, v_read, n_max):
    """R(n_C) = v_read / I(v_read, n_C) for n_C = 0..n_max (entry 0 unused)."""
    out = np.empty(n_max + 1)
    out[0] = np.inf
    for n in range(1, n_max + 1):
        cur, _ = qpc_current(v_read, float(n), p[P_EY], p[P_EX], p[P_VBAR])
        out[n] = v_read / cur
    return out


def qpc_current_numpy(v, n_c, ey_min, ex, vbar):
    """Vectorised reference of :func:`qpc_current` over arrays of V and n_C."""
    v = np.asarray(v, dtype=float)
    n_c = np.asarray(n_c, dtype=float)
    v, n_c = np.broadcast_arrays(v, n_c)
    a = 2.0 * np.pi / ex
    ey = ey_min / n_c
    hv = 0.5 * np.abs(v)
    top = hv + 10.0 * ex
    nm = np.maximum(np.floor((top - vbar) / ey - 0.5).astype(int) + 1, 1)
    n = np.arange(int(nm.max()))
    en = vbar + ey[..., None] * (n + 0.5)
    keep = n < nm[..., None]
    xp = a * (hv[..., None] - en)
    xm = a * (-hv[..., None] - en)
    terms = np.where(keep, (np.logaddexp(0.0, xp) - np.logaddexp(0.0, xm)) / a, 0.0)
    return G0 * np.sign(v) * terms.sum(axis=-1)
