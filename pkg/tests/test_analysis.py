import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from oxsim import analysis as A
from oxsim.bench import POR_SCHEDULE, ReadoutMatrix
from oxsim.relax_model import RwdParams, matrix_from_paths, simulate_rwd

T = np.array(POR_SCHEDULE)


def frozen_matrix(n=60, seed=0):
    x0 = 4.4 + 0.1 * np.random.default_rng(seed).standard_normal(n)
    return matrix_from_paths(np.repeat(x0[:, None], T.size, axis=1), T)


# ---------------------------------------------------------------- cdf


def test_cdf_hand_count():
    c = A.empirical_cdf([1e3, 2e3, 3e3])
    assert c.at(2e3) == pytest.approx(2 / 3)
    assert c.at(3e3) == 1.0 and c.at(500.0) == 0.0


def test_cdf_all_equal_is_a_step():
    c = A.empirical_cdf([5e3] * 4)
    assert c.at(4.9e3) == 0.0 and c.at(5e3) == 1.0


def test_cdf_empty():
    with pytest.raises(A.EmptySample):
        A.empirical_cdf([])


@given(st.lists(st.floats(1.0, 1e9), min_size=1, max_size=200))
def test_cdf_properties(xs):
    c = A.empirical_cdf(xs)
    assert np.all(np.diff(c.values) >= 0) and np.all(np.diff(c.probs) > 0)
    assert c.probs[-1] == 1.0 and c.probs[0] == pytest.approx(1 / len(xs))


# ---------------------------------------------------------------- median / std


def test_median_std_frozen():
    ms = A.median_std_evolution(frozen_matrix(), "SET")
    assert np.all(ms.dmedian == 0.0)
    assert np.allclose(ms.std, ms.std[0], rtol=0, atol=1e-15)
    assert list(ms.indices) == list(range(1, 10))


def test_median_linear_in_log_time():
    X = 4.2 + 0.05 * np.log10(T / T[0])[None, :] + np.linspace(-0.1, 0.1, 41)[:, None]
    ms = A.median_std_evolution(matrix_from_paths(X, T), "SET")
    assert np.allclose(ms.median, 4.2 + 0.05 * np.log10(T / T[0]), atol=1e-12)


def test_median_std_needs_two():
    with pytest.raises(A.InsufficientData):
        A.median_std_evolution(matrix_from_paths(np.ones((1, 9)) * 4.4, T), "SET")


# ---------------------------------------------------------------- subpopulations


def test_subpop_reference_distance_is_one():
    tr = A.subpopulation_track(simulate_rwd(RwdParams(), n_traj=500, seed=1), "SET")
    assert tr.ks[("top", "low")][0] == 1.0
    assert tr.ks[("top", "mid")][0] == 1.0


def test_subpop_frozen_constant():
    tr = A.subpopulation_track(frozen_matrix(400), "SET")
    for arr in tr.ks.values():
        assert np.all(arr == arr[0])


def test_subpop_membership_fixed():
    m = simulate_rwd(RwdParams(sigma_step=0.1), n_traj=500, seed=2)
    tr = A.subpopulation_track(m, "SET")
    union = np.concatenate([tr.members[n] for n in ("top", "mid", "low")])
    for k in tr.indices:
        n_at_k = sum(tr.cdfs[(n, int(k))].values.size for n in ("top", "mid", "low"))
        assert n_at_k == len(union)
    assert len(tr.members["top"]) == len(tr.members["low"]) == 50


def test_subpop_random_walk_mixing_trend():
    # mu = 0 random walk: KS(top, low) has a significant decreasing trend
    # (one-sided Spearman p < 0.01) in every seed
    for s in range(10):
        tr = A.subpopulation_track(simulate_rwd(RwdParams(mu=0.0, sigma_step=0.1), n_traj=1000, seed=s), "SET")
        ks = tr.ks[("top", "low")]
        assert stats.spearmanr(np.arange(ks.size), ks, alternative="less").pvalue < 0.01
        assert ks[-1] < ks[0]


def test_subpop_too_few():
    with pytest.raises(A.InsufficientData):
        A.subpopulation_track(simulate_rwd(RwdParams(), n_traj=100, seed=1), "SET")


# ---------------------------------------------------------------- pearson


def test_pearson_oracle():
    assert A.pearson_xy([1, 2, 3], [1, 2, 4]) == pytest.approx(0.9819805060619657, abs=1e-15)


def test_pearson_signs():
    x = [0.1, 0.5, 0.2, 0.9]
    assert A.pearson_xy(x, x) == 1.0
    assert A.pearson_xy(x, [-v for v in x]) == -1.0


def test_pearson_zero_variance():
    with pytest.raises(A.ZeroVariance):
        A.pearson_xy([1, 1, 1], [1, 2, 3])


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=30).filter(lambda v: np.ptp(v) > 1e-3),
       st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.1, 10), st.floats(-5, 5))
def test_pearson_affine_invariance(x, a, b, c, d):
    y = [math.sin(v) + 0.3 * v for v in x]
    if np.ptp(y) < 1e-3:
        return
    r = A.pearson_xy(x, y)
    assert A.pearson_xy([a * v + b for v in x], [c * v + d for v in y]) == pytest.approx(r, abs=1e-9)


def test_pearson_matrix_and_decay():
    m = simulate_rwd(RwdParams(mu=0.0, sigma_step=0.05), n_traj=2000, seed=4)
    idx, r = A.correlation_decay(m, "SET")
    assert r[0] == pytest.approx(1.0) and r[-1] < r[1]
    assert A.pearson(m, "SET", 1, 5) == pytest.approx(r[4], abs=1e-15)


# ---------------------------------------------------------------- failed fraction


def test_failed_fraction_count():
    rows = [(0, c, "SET", 1, 1e-4, r, True, 1) for c, r in enumerate((10e3, 15e3, 25e3))]
    assert A.failed_fraction(ReadoutMatrix.from_rows(rows), "SET") == {1: pytest.approx(1 / 3)}


def test_failed_fraction_reset():
    rows = [(0, c, "RESET", 1, 1e-4, r, True, 1) for c, r in enumerate((100e3, 300e3))]
    assert A.failed_fraction(ReadoutMatrix.from_rows(rows), "reset") == {1: 0.5}


# ---------------------------------------------------------------- fitting


LAW_PARAMS = {"Linear": (4.2, 0.08), "Exponential": (4.2, 0.05), "PowerLaw": (4.2, 0.03),
              "Logarithmic": (4.2, 0.05)}


@pytest.mark.parametrize("law", A.LAWS)
def test_noiseless_recovery(law):
    r0, mu = LAW_PARAMS[law]
    y = A._model(law, T, T[0], r0, mu)
    f = A.fit_drift(T, y, law)
    assert f.r_square == pytest.approx(1.0, abs=1e-12)
    assert abs(f.r0 / r0 - 1) < 1e-9 and abs(f.mu / mu - 1) < 1e-9
    assert f.t0 == T[0]


def test_log_example():
    f = A.fit_drift(T, 4.2 + 0.05 * np.log10(T / 1e-4), "log")
    assert f.mu == pytest.approx(0.05, abs=1e-9) and f.r_square == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("law", A.LAWS)
def test_constant_data(law):
    f = A.fit_drift(T, np.full(T.size, 4.4), law)
    assert f.mu == 0.0 and f.r_square == 1.0 and f.rms_error == 0.0


def test_linear_and_exponential_worse_on_log_drift():
    y = 4.2 + 0.05 * np.log10(T / T[0])
    r2 = {law: A.fit_drift(T, y, law).r_square for law in A.LAWS}
    worst_good = min(r2["Logarithmic"], r2["PowerLaw"])
    assert r2["Linear"] < worst_good and r2["Exponential"] < worst_good


def test_ranking():
    assert A.select_best_fit(T, 4.2 + 0.05 * np.log10(T / T[0]))[0].law == "Logarithmic"
    assert A.select_best_fit(T, 4.2 * (T / T[0]) ** 0.03)[0].law == "PowerLaw"


def test_short_window_power_vs_log():
    t = np.array([1e-3, 2e-3, 3e-3, 5e-3])
    ranked = A.select_best_fit(t, 4.2 + 0.05 * np.log10(t / t[0]))
    by_law = {f.law: f for f in ranked}
    assert by_law["PowerLaw"].r_square > 0.99 and by_law["Logarithmic"].r_square > 0.99
    assert len(ranked) == 4


def test_fit_errors():
    with pytest.raises(A.InsufficientData):
        A.fit_drift([1e-4, 1e-3], [4.0, 4.1])
    with pytest.raises(A.DegenerateFit):
        A.fit_drift([1e-3] * 4, [4.0, 4.1, 4.2, 4.3], "Linear")
    with pytest.raises(ValueError):
        A.fit_drift([0.0, 1.0, 2.0], [4.0, 4.1, 4.2])
    with pytest.raises(ValueError):
        A.fit_drift(T, T, "cubic")


def test_weighted_fit_prefers_heavy_points():
    y = 4.2 + 0.05 * np.log10(T / T[0])
    y[-1] += 0.2
    w = np.ones(T.size)
    w[-1] = 1e-9
    assert A.fit_drift(T, y, "log", weights=w).mu == pytest.approx(0.05, rel=1e-6)
    with pytest.raises(ValueError):
        A.fit_drift(T, y, "log", weights=-w)


def test_r_square_bounds():
    rng = np.random.default_rng(0)
    for law in A.LAWS:
        f = A.fit_drift(T, 4.3 + 0.05 * rng.standard_normal(T.size), law)
        assert 0.0 <= f.r_square <= 1.0 and f.rms_error >= 0


def test_bootstrap_matches_direct_fits():
    rng = np.random.default_rng(3)
    X = 4.4 + np.cumsum(0.05 * rng.standard_normal((80, T.size)), axis=1)
    b = A.bootstrap_mu(X, T, "log", n_boot=4, seed=9)
    idx = np.random.default_rng(9).integers(0, 80, size=(4, 80))
    direct = [A.fit_drift(T, np.median(X[i], axis=0), "log").mu for i in idx]
    assert np.allclose(b, direct, rtol=1e-10, atol=1e-14)


# ---------------------------------------------------------------- binned fit / residuals


def test_single_bin_equals_global_fit():
    m = simulate_rwd(RwdParams(), n_traj=300, seed=5)
    bf = A.binned_fit(m, "SET", n_bins=1, n_boot=20)
    g = A.median_fit(m, "SET")
    assert bf.fits[0].mu == pytest.approx(g.mu, abs=1e-12) and bf.fits[0].r0 == pytest.approx(g.r0, abs=1e-12)


def test_binned_r0_independence_and_control():
    p = RwdParams(mu=0.04, sigma_step=0.03)
    ok = A.binned_fit(simulate_rwd(p, n_traj=1000, seed=1), "SET", n_boot=100)
    assert ok.r0_independent()
    bad = A.binned_fit(simulate_rwd(p, n_traj=1000, seed=1, mu_r0_coupling=0.5), "SET", n_boot=100)
    assert not bad.r0_independent()
    assert np.all(np.diff(bad.ref_value) > 0)


def test_binned_too_few():
    with pytest.raises(A.InsufficientData):
        A.binned_fit(simulate_rwd(RwdParams(), n_traj=200, seed=1), "SET", n_bins=10)


def test_noiseless_residuals_zero():
    m = simulate_rwd(RwdParams(sigma_step=0.0, r0_sigma=0.0), n_traj=50, seed=0)
    res = A.extract_residuals(m, "SET", A.median_fit(m, "SET"))
    assert np.max(np.abs(res.e)) < 1e-12


def test_residual_of_own_medians():
    m = simulate_rwd(RwdParams(sigma_step=0.04), n_traj=501, seed=3)
    fit = A.median_fit(m, "SET")
    res = A.extract_residuals(m, "SET", fit)
    med_e = np.median(res.e, axis=0)
    # least squares through the medians: median residuals centre on zero
    assert abs(med_e.mean()) < 1e-12
    assert np.max(np.abs(med_e)) < 0.01


def test_residual_variance_grows():
    grows = 0
    for s in range(10):
        m = simulate_rwd(RwdParams(sigma_step=0.03), n_traj=1000, seed=s)
        res = A.extract_residuals(m, "SET", A.binned_fit(m, "SET", n_boot=20, seed=s))
        grows += res.at(9).var() > res.at(1).var()
    assert grows == 10


def test_zero_mean_gate_passes_on_matching_law():
    passed = total = 0
    for s in range(10):
        m = simulate_rwd(RwdParams(sigma_step=0.03), n_traj=1000, seed=100 + s)
        zm = A.zero_mean_test(A.extract_residuals(m, "SET", A.binned_fit(m, "SET", n_boot=20, seed=s)))
        passed += int(zm.passed.sum())
        total += zm.passed.size
    assert passed / total >= 0.95


def test_zero_mean_negative_control():
    m = simulate_rwd(RwdParams(sigma_step=0.03), n_traj=1000, seed=7)
    res = A.extract_residuals(m, "SET", A.binned_fit(m, "SET", n_boot=20))
    shifted = A.ResidualSeries(res.keys, res.indices, res.times, res.e + 0.1)
    assert not np.any(A.zero_mean_test(shifted).passed)


def test_zero_mean_single_trajectory():
    m = simulate_rwd(RwdParams(), n_traj=1, seed=7)
    with pytest.raises(A.InsufficientData):
        A.zero_mean_test(A.extract_residuals(m, "SET", A.fit_drift(T, np.full(T.size, 4.4))))


def test_law_aliases():
    assert A.law_name("pow") == "PowerLaw" and A.law_name(" LOG ") == "Logarithmic"
