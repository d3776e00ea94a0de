"""Retention statistics, drift-law fitting and residual decomposition.

All statistics work on log10 resistance. Readout index 0 is the pre-program
(SP) or final verify (ISP/FSP) read; index 1 is the reference readout, and
membership, binning and fits are anchored there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, stats

from .bench import ReadoutMatrix, SET, RESET, _state

LAWS = ("Linear", "Exponential", "PowerLaw", "Logarithmic")
_ALIASES = {
    "linear": "Linear", "lin": "Linear",
    "exponential": "Exponential", "exp": "Exponential",
    "powerlaw": "PowerLaw", "power": "PowerLaw", "pow": "PowerLaw",
    "logarithmic": "Logarithmic", "log": "Logarithmic",
}

DEFAULT_THRESHOLDS = {SET: 20e3, RESET: 200e3}


class InsufficientData(ValueError):
    pass


class EmptySample(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


class DegenerateFit(ValueError):
    pass


def law_name(law: str) -> str:
    try:
        return _ALIASES[str(law).strip().lower()]
    except KeyError:
        raise ValueError(f"unknown law {law!r}; choose from {', '.join(LAWS)}") from None


# ---------------------------------------------------------------- metric A


@dataclass(frozen=True)
class CdfCurve:
    values: np.ndarray  # sorted log10 ohms
    probs: np.ndarray  # k/N

    def at(self, r_ohm: float) -> float:
        """P(R <= r_ohm)."""
        x = math.log10(r_ohm)
        return float(np.searchsorted(self.values, x, side="right")) / len(self.values)


def empirical_cdf(samples) -> CdfCurve:
    """Empirical CDF of resistances (ohms), on log10 values."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptySample("empty sample")
    if np.any(~(x > 0)):
        raise ValueError("resistances must be > 0")
    v = np.sort(np.log10(x))
    return CdfCurve(v, np.arange(1, v.size + 1) / v.size)


@dataclass
class MedianStd:
    indices: np.ndarray
    times: np.ndarray
    median: np.ndarray
    std: np.ndarray
    dmedian: np.ndarray  # median - median at the reference readout
    n: np.ndarray


def median_std_evolution(m: ReadoutMatrix, state: str, include_rd0: bool = False) -> MedianStd:
    """Per-readout median and sample std (ddof=1) of log10 R."""
    sub = m.for_state(state)
    idx = [int(k) for k in sub.readout_indices() if include_rd0 or k >= 1]
    if not idx:
        raise InsufficientData(f"no {state} readouts")
    times = m.times()
    med, sd, n = [], [], []
    for k in idx:
        x = np.log10(sub.resistance_ohm[sub.readout_index == k])
        if x.size < 2:
            raise InsufficientData(f"readout {k} has {x.size} observation(s)")
        med.append(float(np.median(x)))
        sd.append(float(np.std(x, ddof=1)))
        n.append(x.size)
    med = np.array(med)
    ref = idx.index(1) if 1 in idx else 0
    return MedianStd(np.array(idx), np.array([times[k] for k in idx]), med, np.array(sd),
                     med - med[ref], np.array(n))


# ---------------------------------------------------------------- metric B


@dataclass
class SubpopTrack:
    indices: np.ndarray
    members: Dict[str, np.ndarray]  # name -> (n, 2) keys (cell_id, cycle)
    cdfs: Dict[Tuple[str, int], CdfCurve]
    ks: Dict[Tuple[str, str], np.ndarray]  # per readout


SUBPOP_BANDS = {"top": (90.0, 100.0), "mid": (45.0, 55.0), "low": (0.0, 10.0)}


def subpopulation_track(m: ReadoutMatrix, state: str, ref_index: int = 1, bands=None,
                        min_members: int = 30) -> SubpopTrack:
    """Track fixed top/mid/low subpopulations through the readouts.

    Members are chosen at ``ref_index``: above the 90th percentile (top),
    within the 45th-55th percentile band (mid) and below the 10th (low).
    Pairwise two-sample Kolmogorov-Smirnov distances are reported per readout.
    """
    bands = SUBPOP_BANDS if bands is None else bands
    keys, idx, X = m.trajectories(state, [k for k in m.for_state(state).readout_indices() if k >= 1])
    if ref_index not in idx:
        raise InsufficientData(f"readout {ref_index} missing")
    ref = X[:, list(idx).index(ref_index)]
    sel = {}
    for name, (lo, hi) in bands.items():
        plo, phi = np.percentile(ref, [lo, hi]) if ref.size else (0.0, 0.0)
        if lo <= 0.0:
            mask = ref < phi
        elif hi >= 100.0:
            mask = ref > plo
        else:
            mask = (ref >= plo) & (ref <= phi)
        if mask.sum() < min_members:
            raise InsufficientData(f"subpopulation {name} has {int(mask.sum())} < {min_members} members")
        sel[name] = mask
    names = list(bands)
    cdfs = {}
    ks = {}
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            ks[(names[a], names[b])] = np.zeros(len(idx))
    for j, k in enumerate(idx):
        for name in names:
            cdfs[(name, int(k))] = empirical_cdf(10.0 ** X[sel[name], j])
        for (na, nb), arr in ks.items():
            arr[j] = stats.ks_2samp(X[sel[na], j], X[sel[nb], j]).statistic
    return SubpopTrack(idx, {n: keys[sel[n]] for n in names}, cdfs, ks)


# ---------------------------------------------------------------- metric C


def pearson_xy(x, y) -> float:
    """Pearson r of paired samples."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise InsufficientData("need at least two paired observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("zero variance")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def pearson(m: ReadoutMatrix, state: str, readout_i: int, readout_j: int) -> float:
    """Correlation of log10 R between two readouts of the same trajectories."""
    _, _, X = m.trajectories(state, [readout_i, readout_j])
    return pearson_xy(X[:, 0], X[:, 1])


def correlation_decay(m: ReadoutMatrix, state: str, ref_index: int = 1):
    """(indices, r) with r_k = pearson(RD_ref, RD_k) for every readout >= ref."""
    idx = [int(k) for k in m.for_state(state).readout_indices() if k >= ref_index]
    _, _, X = m.trajectories(state, idx)
    return np.array(idx), np.array([pearson_xy(X[:, 0], X[:, j]) for j in range(len(idx))])


def failed_fraction(m: ReadoutMatrix, state: str, threshold: Optional[float] = None) -> Dict[int, float]:
    """Fraction (0..1) of reads violating the state's threshold, per readout.

    SET fails above ``threshold``, RESET below it.
    """
    st = _state(state)
    thr = DEFAULT_THRESHOLDS[st] if threshold is None else threshold
    sub = m.for_state(st)
    out = {}
    for k in sub.readout_indices():
        r = sub.resistance_ohm[sub.readout_index == k]
        bad = r > thr if st == SET else r < thr
        out[int(k)] = float(bad.mean())
    return out


# ---------------------------------------------------------------- fitting


@dataclass(frozen=True)
class FitResult:
    law: str
    r0: float
    mu: float
    t0: float
    r_square: float
    rms_error: float

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        return _model(self.law, t, self.t0, self.r0, self.mu)


def _model(law, t, t0, r0, mu):
    if law == "Linear":
        return r0 + mu * (t - t0)
    if law == "Exponential":
        return r0 * np.exp(mu * (t - t0))
    if law == "PowerLaw":
        return r0 * (t / t0) ** mu
    return r0 + mu * np.log10(t / t0)


def _r_square(y, yhat) -> float:
    """Squared correlation between data and fit; 1 for a constant target."""
    dy = y - y.mean()
    dp = yhat - yhat.mean()
    syy = float(np.dot(dy, dy))
    spp = float(np.dot(dp, dp))
    if syy <= 1e-30 * max(1.0, float(np.dot(y, y))):
        return 1.0
    if spp == 0.0:
        return 0.0
    r = float(np.dot(dy, dp)) / math.sqrt(syy * spp)
    return min(1.0, r * r)


def _linear(x, y, w=None):
    A = np.column_stack([np.ones_like(x), x])
    if np.linalg.matrix_rank(A) < 2:
        raise DegenerateFit("singular normal equations")
    if np.all(y == y[0]):
        # exact for constant data, lstsq could leave ~1e-17 slopes
        return float(y[0]), 0.0
    if w is not None:
        sw = np.sqrt(w)
        A, y = A * sw[:, None], y * sw
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0]), float(coef[1])


def fit_drift(times, values, law: str = "Logarithmic", t0: Optional[float] = None,
              weights=None) -> FitResult:
    """Least-squares fit of one drift law to (time, log10 R) data.

    Laws: Linear ``R0 + mu*(t - t0)``, Exponential ``R0*exp(mu*(t - t0))``,
    PowerLaw ``R0*(t/t0)**mu`` and Logarithmic ``R0 + mu*log10(t/t0)``, with
    ``t0`` the first time unless given. The two multiplicative laws start
    from their log-linearised solution and are refined by nonlinear least
    squares on the original values. Optional ``weights`` (one per point,
    > 0) turn it into weighted least squares; R^2 and RMSE are always
    reported unweighted.
    """
    law = law_name(law)
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("times and values must be 1-d and the same length")
    w = None
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != t.shape or np.any(~(w > 0)):
            raise ValueError("weights must be positive, one per point")
    if t.size < 3:
        raise InsufficientData("need at least 3 points")
    if np.any(~(t > 0)):
        raise ValueError("times must be > 0")
    t0 = float(t[0]) if t0 is None else float(t0)
    if law == "Linear":
        r0, mu = _linear(t - t0, y, w)
    elif law == "Logarithmic":
        r0, mu = _linear(np.log10(t / t0), y, w)
    else:
        x = (t - t0) if law == "Exponential" else np.log(t / t0)
        if np.all(y > 0):
            lr0, mu = _linear(x, np.log(y), None if w is None else w * y * y)
            r0 = math.exp(lr0)
        else:
            _linear(x, y)  # rank check only
            r0, mu = float(np.mean(y)), 0.0
        if np.any(y != r0 * np.exp(mu * x)):
            sw = np.ones_like(y) if w is None else np.sqrt(w)
            sol = optimize.least_squares(lambda q: sw * (q[0] * np.exp(q[1] * x) - y), [r0, mu], method="lm",
                                         xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
            if sol.success and np.sum(sol.fun ** 2) <= np.sum((sw * (r0 * np.exp(mu * x) - y)) ** 2):
                r0, mu = float(sol.x[0]), float(sol.x[1])
    yhat = _model(law, t, t0, r0, mu)
    res = y - yhat
    return FitResult(law, r0, mu, t0, _r_square(y, yhat), float(math.sqrt(np.mean(res * res))))


def select_best_fit(times, values) -> List[FitResult]:
    """All four laws, ranked by RMSE (ascending) then R^2 (descending)."""
    fits = [fit_drift(times, values, law) for law in LAWS]
    return sorted(fits, key=lambda f: (float("%.12g" % f.rms_error), -f.r_square))


def _medians(X):
    return np.median(X, axis=0)


def median_fit(m: ReadoutMatrix, state: str, law: str = "Logarithmic") -> FitResult:
    """Drift law fitted to the per-readout medians (readouts >= 1)."""
    ms = median_std_evolution(m, state)
    return fit_drift(ms.times, ms.median, law)


def median_weights(X) -> np.ndarray:
    """Inverse-variance weights for per-readout medians of the rows of X.

    The variance of a sample median scales with the sample variance, so the
    weights are 1/var(X[:, k]) normalised to a maximum of 1. A floor keeps
    readouts with (near) zero spread from taking all the weight.
    """
    v = np.var(X, axis=0, ddof=1) if X.shape[0] > 1 else np.ones(X.shape[1])
    v = np.maximum(v, 1e-6 * max(float(v.max()), 1e-300))
    w = 1.0 / v
    return w / w.max()


def bootstrap_mu(X, times, law: str = "Logarithmic", n_boot: int = 200, seed: int = 0,
                 weights=None) -> np.ndarray:
    """Bootstrap distribution of the fitted mu, resampling trajectories (rows of X)."""
    law = law_name(law)
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    t = np.asarray(times, dtype=float)
    idx = rng.integers(0, n, size=(n_boot, n))
    meds = np.stack([np.median(X[i], axis=0) for i in idx])
    if law in ("Linear", "Logarithmic"):
        x = (t - t[0]) if law == "Linear" else np.log10(t / t[0])
        w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
        xc = x - np.dot(w, x) / w.sum()
        return (meds * w) @ xc / np.dot(w * xc, xc)
    return np.array([fit_drift(t, mm, law, weights=weights).mu for mm in meds])


@dataclass
class BinnedFit:
    fits: List[FitResult]
    keys: np.ndarray  # (n, 2) trajectory keys
    bin_of: np.ndarray  # bin index per trajectory
    mu: np.ndarray
    mu_se: np.ndarray  # bootstrap standard error per bin
    ref_value: np.ndarray  # median log10 R at the reference readout per bin

    @property
    def spread(self) -> float:
        """Sample std of the per-bin mu (0 for a single bin)."""
        return float(np.std(self.mu, ddof=1)) if self.mu.size > 1 else 0.0

    @property
    def mu_range(self) -> float:
        return float(self.mu.max() - self.mu.min())

    @property
    def se(self) -> float:
        """RMS of the per-bin bootstrap standard errors."""
        return float(math.sqrt(np.mean(self.mu_se ** 2)))

    def r0_independent(self, factor: float = 3.0) -> bool:
        return self.spread < factor * self.se


def binned_fit(m: ReadoutMatrix, state: str, n_bins: int = 10, law: str = "Logarithmic",
               ref_index: int = 1, min_members: int = 30, n_boot: int = 200, seed: int = 0) -> BinnedFit:
    """Fit the drift law separately in equal-count bins of the reference read.

    Trajectories are ranked by log10 R at ``ref_index`` and split into
    ``n_bins`` equal-count bins; each bin's per-readout medians are fitted and
    a bootstrap over the bin's trajectories gives the standard error of mu.

    Binning on the reference read makes its bin median nearly exact while
    later medians carry the accumulated spread, so the fit is weighted by
    :func:`median_weights`. Without it the reference-readout residuals are
    dominated by fit error instead of sampling noise. A single bin selects
    nothing, so it is fitted unweighted and equals :func:`median_fit`.
    """
    law = law_name(law)
    idx = [int(k) for k in m.for_state(state).readout_indices() if k >= ref_index]
    keys, idx, X = m.trajectories(state, idx)
    if n_bins < 1 or X.shape[0] < n_bins * min_members:
        raise InsufficientData(f"{X.shape[0]} trajectories cannot fill {n_bins} bins of {min_members}")
    times = np.array([m.times()[int(k)] for k in idx])
    order = np.argsort(X[:, 0], kind="stable")
    bin_of = np.empty(X.shape[0], dtype=np.int64)
    fits, mus, ses, refs = [], [], [], []
    for b, members in enumerate(np.array_split(order, n_bins)):
        bin_of[members] = b
        Xb = X[members]
        w = median_weights(Xb) if n_bins > 1 else None
        f = fit_drift(times, _medians(Xb), law, weights=w)
        fits.append(f)
        mus.append(f.mu)
        ses.append(float(np.std(bootstrap_mu(Xb, times, law, n_boot, seed + b, weights=w), ddof=1)))
        refs.append(float(np.median(Xb[:, 0])))
    return BinnedFit(fits, keys, bin_of, np.array(mus), np.array(ses), np.array(refs))


# ---------------------------------------------------------------- residuals


@dataclass
class ResidualSeries:
    keys: np.ndarray
    indices: np.ndarray
    times: np.ndarray
    e: np.ndarray  # (n_traj, n_readouts)

    def at(self, readout_index: int) -> np.ndarray:
        return self.e[:, list(self.indices).index(readout_index)]


def extract_residuals(m: ReadoutMatrix, state: str, fits: Union[FitResult, BinnedFit],
                      ref_index: int = 1) -> ResidualSeries:
    """e = log10 R - fitted law, per trajectory and readout (readouts >= ref)."""
    idx = [int(k) for k in m.for_state(state).readout_indices() if k >= ref_index]
    keys, idx, X = m.trajectories(state, idx)
    times = np.array([m.times()[int(k)] for k in idx])
    if isinstance(fits, FitResult):
        E = X - fits.predict(times)[None, :]
    else:
        lut = {(int(a), int(b)): int(k) for (a, b), k in zip(fits.keys, fits.bin_of)}
        pred = np.stack([f.predict(times) for f in fits.fits])
        try:
            rows = np.array([lut[(int(a), int(b))] for a, b in keys], dtype=np.int64)
        except KeyError:
            raise InsufficientData("trajectory without a bin assignment") from None
        E = X - pred[rows]
    return ResidualSeries(keys, idx, times, E)


@dataclass
class ZeroMeanResult:
    indices: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n: int
    passed: np.ndarray

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))


def zero_mean_test(res: ResidualSeries, k: float = 3.0, min_n: int = 30) -> ZeroMeanResult:
    """Per-readout gate |mean(e)| <= k*std(e)/sqrt(N)."""
    n = res.e.shape[0]
    if n < min_n:
        raise InsufficientData(f"{n} residual trajectories < {min_n}")
    mean = res.e.mean(axis=0)
    std = res.e.std(axis=0, ddof=1)
    passed = np.abs(mean) <= k * std / math.sqrt(n)
    return ZeroMeanResult(res.indices, mean, std, n, passed)
