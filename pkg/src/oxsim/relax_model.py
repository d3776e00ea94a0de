"""Random walk with drift on log10 R, sampled on a readout schedule.

Between consecutive readouts a trajectory moves by a deterministic drift,
``mu`` per decade of time, plus an independent Gaussian step. The output uses
the bench's ReadoutMatrix layout (readout indices 1..K, ``cycle`` numbering
the trajectories) so the analysis code runs on it unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import InsufficientData, median_fit
from .bench import SET, ReadoutMatrix, ReadoutSchedule, _state, COLUMNS


@dataclass(frozen=True)
class RwdParams:
    mu: float = 0.05
    sigma_step: float = 0.02
    r0_median: float = 4.4
    r0_sigma: float = 0.1

    def __post_init__(self):
        if self.sigma_step < 0 or self.r0_sigma < 0:
            raise ValueError("sigma_step and r0_sigma must be >= 0")


def simulate_paths(p: RwdParams, times, n_traj: int, rng, mu_r0_coupling: float = 0.0) -> np.ndarray:
    """(n_traj, K) array of log10 R.

    ``mu_r0_coupling`` makes the drift depend on the starting value,
    ``mu + coupling*(log10 R(t_1) - r0_median)``; it exists to build negative
    controls for the drift-independence test.
    """
    t = np.asarray(times, dtype=float)
    r0 = p.r0_median + p.r0_sigma * rng.standard_normal(n_traj)
    steps = p.sigma_step * rng.standard_normal((n_traj, t.size - 1))
    mu = p.mu + mu_r0_coupling * (r0 - p.r0_median)
    dlog = np.diff(np.log10(t))
    X = np.empty((n_traj, t.size))
    X[:, 0] = r0
    X[:, 1:] = r0[:, None] + np.cumsum(mu[:, None] * dlog[None, :] + steps, axis=1)
    return X


def matrix_from_paths(X: np.ndarray, times, state: str = SET, cell_id: int = 0) -> ReadoutMatrix:
    n, k = X.shape
    st = _state(state)
    cols = dict(
        cell_id=np.full(n * k, cell_id, dtype=np.int64),
        cycle=np.repeat(np.arange(n, dtype=np.int64), k),
        target_state=np.full(n * k, st, dtype="<U5"),
        readout_index=np.tile(np.arange(1, k + 1, dtype=np.int64), n),
        t_after_program_s=np.tile(np.asarray(times, dtype=float), n),
        resistance_ohm=10.0 ** X.ravel(),
        verify_passed=np.ones(n * k, dtype=bool),
        attempts_used=np.ones(n * k, dtype=np.int64),
    )
    return ReadoutMatrix(*(cols[c] for c in COLUMNS))


def simulate_rwd(p: RwdParams, schedule: ReadoutSchedule = ReadoutSchedule(), n_traj: int = 1000,
                 seed: int = 0, state: str = SET, mu_r0_coupling: float = 0.0) -> ReadoutMatrix:
    """Random-walk-with-drift trajectories as a ReadoutMatrix.

    log10 R(t_k) = log10 R(t_{k-1}) + mu*log10(t_k/t_{k-1}) + N(0, sigma_step^2),
    log10 R(t_1) ~ N(r0_median, r0_sigma^2).
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    times = schedule.times_after_program
    X = simulate_paths(p, times, n_traj, np.random.default_rng(seed), mu_r0_coupling)
    return matrix_from_paths(X, times, state)


def calibrate_rwd(m: ReadoutMatrix, state: str = SET, min_traj: int = 100) -> RwdParams:
    """Invert the random walk with drift from data.

    ``mu`` comes from the Logarithmic fit of the per-readout medians,
    ``sigma_step`` from the pooled (equal-weight) variance of the one-step
    increments about their per-step mean, and the R0 distribution from the
    reference readout.
    """
    idx = [int(k) for k in m.for_state(state).readout_indices() if k >= 1]
    _, idx, X = m.trajectories(state, idx)
    if X.shape[0] < min_traj:
        raise InsufficientData(f"{X.shape[0]} trajectories < {min_traj}")
    if X.shape[1] < 3:
        raise InsufficientData("need at least 3 readouts")
    fit = median_fit(m, state, "Logarithmic")
    d = np.diff(X, axis=1)
    var = np.var(d, axis=0, ddof=1)
    return RwdParams(mu=fit.mu, sigma_step=float(math.sqrt(np.mean(var))),
                     r0_median=float(np.median(X[:, 0])), r0_sigma=float(np.std(X[:, 0], ddof=1)))
