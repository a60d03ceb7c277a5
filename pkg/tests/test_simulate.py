import math

import numba
import numpy as np
import pytest

from cwpotts import exact as EX
from cwpotts import simulate as SM
from cwpotts.constants import beta_s, max_drift
from cwpotts.model import InvalidInput, ModelParams, ProportionsVector


@numba.njit(cache=True)
def _many_moves(c, n, beta, us):
    q = c.size
    w = np.empty(q)
    out = np.empty((us.size, 2), dtype=np.int64)
    for t in range(us.size):
        i, j = SM._choose_move(c, n, beta, us[t], w)
        out[t, 0] = i
        out[t, 1] = j
    return out


def _one_step_law_within_4_sigma(counts, params, draws, seed):
    c = np.asarray(counts, dtype=np.int64)
    rng = np.random.default_rng(seed)
    moves = _many_moves(c, float(params.n), params.beta, rng.random(draws))
    q = c.size
    pair_counts = np.bincount(moves[:, 0] * q + moves[:, 1], minlength=q * q)
    dest = {}
    for code in np.flatnonzero(pair_counts):
        i, j = divmod(int(code), q)
        d = c.copy()
        d[i] -= 1
        d[j] += 1
        key = tuple(int(x) for x in d)
        dest[key] = dest.get(key, 0) + int(pair_counts[code])
    row = EX.transition_row(c, params)
    assert set(dest) <= set(row)
    for key, p in row.items():
        k = dest.get(key, 0)
        sd = math.sqrt(draws * p * (1 - p))
        assert abs(k - draws * p) <= 4 * sd + 1e-9, (key, k, draws * p)


@pytest.mark.parametrize("q, n, beta", [(3, 30, 0.8), (4, 50, 1.9)])
def test_one_step_law_matches_transition_row(q, n, beta):
    params = ModelParams(q, n, beta)
    rng = np.random.default_rng(11)
    for k in range(5):
        counts = np.bincount(rng.integers(q, size=n), minlength=q)
        _one_step_law_within_4_sigma(counts, params, 10**6, seed=k)


def test_one_step_law_from_monochromatic_q2_n2():
    _one_step_law_within_4_sigma((2, 0), ModelParams(2, 2, 1.0), 10**6, seed=5)


def test_glauber_step_single_site_is_uniform():
    params = ModelParams(2, 1, 0.0)
    rng = np.random.default_rng(0)
    draws = 20_000
    ones = sum(int(SM.glauber_step([0], rng, params)[0]) for _ in range(draws))
    assert abs(ones - draws / 2) < 4 * math.sqrt(draws / 4)


def test_glauber_step_flip_probability():
    params = ModelParams(2, 2, 1.0)
    rng = np.random.default_rng(1)
    draws = 20_000
    flips = sum(int(SM.glauber_step([0, 0], rng, params).sum()) for _ in range(draws))
    p = 1 / (math.e + 1)
    assert abs(flips - draws * p) < 4 * math.sqrt(draws * p * (1 - p))


def test_glauber_step_infinite_temperature_colour_law():
    params = ModelParams(3, 6, 0.0)
    rng = np.random.default_rng(2)
    config = np.array([0, 0, 0, 1, 1, 2])
    draws = 30_000
    tally = np.zeros(3)
    for _ in range(draws):
        new = SM.glauber_step(config, rng, params)
        tally += np.bincount(new, minlength=3) - np.bincount(config, minlength=3)
    # a uniform resample keeps each colour's expected count change at 1/3 - s^k
    expected = draws * (1 / 3 - np.bincount(config, minlength=3) / 6)
    assert np.all(np.abs(tally - expected) < 4 * math.sqrt(draws))


def test_proportions_step_keeps_counts_valid():
    params = ModelParams(3, 40, 1.4)
    rng = np.random.default_rng(4)
    c = np.array([40, 0, 0])
    for _ in range(2000):
        c = SM.proportions_step(c, rng, params)
        assert c.sum() == 40 and c.min() >= 0


def test_bounded_runs_stay_inside():
    params = ModelParams(3, 300, 1.38)
    rho = 0.1
    spec = SM.RunSpec(params, ProportionsVector((100, 100, 100)), 200_000, seed=3, trials=3,
                      bounded_rho=rho, record_every=1)
    bound = params.n * (1 / 3 + rho)
    for tr in SM.run_trajectories(spec):
        assert tr.counts.max() < bound
        assert np.all(tr.counts.sum(axis=1) == params.n)


def test_bounded_and_free_agree_until_first_rejection():
    params = ModelParams(3, 60, 1.38)
    rho = 0.05
    start = ProportionsVector((20, 20, 20))
    free = SM.simulate_trial(SM.RunSpec(params, start, 20_000, 9, record_every=1), 0)
    bounded = SM.simulate_trial(SM.RunSpec(params, start, 20_000, 9, bounded_rho=rho, record_every=1), 0)
    bound = params.n * (1 / 3 + rho)
    leave = np.flatnonzero(free.counts.max(axis=1) >= bound)
    assert leave.size, "the free run should leave the region in this many steps"
    tau = int(leave[0])
    np.testing.assert_array_equal(free.counts[:tau], bounded.counts[:tau])
    assert not np.array_equal(free.counts[tau], bounded.counts[tau])


def test_bounded_start_outside_is_rejected():
    with pytest.raises(InvalidInput):
        SM.simulate_trial(SM.RunSpec(ModelParams(3, 30, 1.0), "monochromatic", 10, bounded_rho=0.1), 0)


def test_runs_are_reproducible_and_trials_independent():
    spec = SM.RunSpec(ModelParams(3, 500, 0.8), "monochromatic", 50_000, seed=17, trials=2)
    a, b = SM.run_trajectories(spec), SM.run_trajectories(spec)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.counts, y.counts)
        np.testing.assert_array_equal(x.times, y.times)
    assert not np.array_equal(a[0].counts, a[1].counts)
    threaded = SM.run_trajectories(spec, threads=2)
    np.testing.assert_array_equal(threaded[1].counts, a[1].counts)


def test_record_stride_defaults():
    spec = SM.RunSpec(ModelParams(3, 50, 0.5), "monochromatic", 123_456)
    assert spec.stride == 12
    tr = SM.simulate_trial(spec, 0)
    assert tr.times[0] == 0 and tr.times[-1] == 123_456
    assert np.all(np.diff(tr.times[:-1]) == 12)


def test_start_from_configuration():
    spec = SM.RunSpec(ModelParams(3, 4, 0.5), [0, 2, 2, 1], 0)
    np.testing.assert_array_equal(spec.start_counts(), [1, 1, 2])


def test_infinite_temperature_concentration():
    n = 10_000
    steps = int(3 * n * math.log(n))
    spec = SM.RunSpec(ModelParams(3, n, 0.0), "monochromatic", steps, seed=0, trials=200, record_every=steps)
    finals = np.stack([tr.final / n for tr in SM.run_trajectories(spec)])
    norms = np.linalg.norm(finals - 1 / 3, axis=1)
    assert np.mean(norms < 5 / math.sqrt(n)) >= 0.95


def test_hitting_times_basic():
    tr = SM.Trajectory(np.arange(5), np.array([[5, 0], [4, 1], [3, 2], [3, 2], [2, 3]]), n=5)
    hits = SM.hitting_times(tr, 0, [1.0, 0.6, 0.4, 0.1])
    assert hits == {1.0: 0, 0.6: 2, 0.4: 4, 0.1: None}
    # upward threshold above a falling path never resolves
    assert SM.hitting_times(tr, 1, [0.8])[0.8] is None


def test_hitting_times_match_watch_counters():
    params = ModelParams(3, 200, 1.0)
    spec = SM.RunSpec(params, "monochromatic", 20_000, seed=2, record_every=1, watch_thresholds=(0.8, 0.5))
    tr = SM.simulate_trial(spec, 0)
    assert SM.hitting_times(tr, 0, [0.8, 0.5]) == tr.hits


def test_stop_when_hit_ends_early():
    params = ModelParams(3, 200, 0.5)
    spec = SM.RunSpec(params, "monochromatic", 10**7, seed=2, record_every=1000,
                      watch_thresholds=(0.5,), stop_when_hit=True)
    tr = SM.simulate_trial(spec, 0)
    assert tr.hits[0.5] is not None and tr.times[-1] < 10**7


@pytest.mark.xfail(strict=True, reason="at n <= 8000 the band s* +- 0.05 sits inside the n^(-1/3) window; "
                                       "crossing is nearly diffusive (measured ratio about 11.6); see ledger")
def test_spinodal_band_crossing_scales_as_four_thirds():
    b = beta_s(3)
    s_star = max_drift(b, 3)[1]
    upper, lower = s_star + 0.05, s_star - 0.05
    medians = []
    for n in (2000, 8000):
        spec = SM.RunSpec(ModelParams(3, n, b), "monochromatic", int(60 * n ** (4 / 3)), seed=1, trials=200,
                          record_every=10**9, watch_thresholds=(upper, lower), stop_when_hit=True)
        taus = []
        for k in range(spec.trials):
            h = SM.simulate_trial(spec, k).hits
            taus.append(h[lower] - h[upper] if h[lower] is not None else np.inf)
        medians.append(np.median(taus))
    ratio = medians[1] / medians[0]
    assert 2 ** (4 / 3) * 0.7 <= ratio <= 2 ** (4 / 3) / 0.7


def test_kn_statistic():
    # q = 2: the gap between worst-case and exact drift is O(1/n)
    spec = SM.RunSpec(ModelParams(2, 100, 1.3), "monochromatic", 0, seed=0, trials=100)
    assert SM.drift_sharpness_Kn(spec, 0.6, 0.1, 5000) == 0.0
    spec = SM.RunSpec(ModelParams(3, 300, 1.2), "monochromatic", 0, seed=0, trials=50)
    assert SM.drift_sharpness_Kn(spec, 0.4, 2.0, 3000) == 0.0
    vals = []
    for n in (1000, 10_000):
        spec = SM.RunSpec(ModelParams(3, n, beta_s(3)), "monochromatic", 0, seed=0, trials=100)
        vals.append(SM.drift_sharpness_Kn(spec, 0.5, n ** -0.25, n))
    assert vals[1] <= vals[0] <= 0.05


def test_kn_rejects_low_threshold():
    spec = SM.RunSpec(ModelParams(3, 300, 1.2), "monochromatic", 0, trials=2)
    with pytest.raises(InvalidInput):
        SM.drift_sharpness_Kn(spec, 0.3, 0.1, 10)


def test_moment_profile_needs_trials():
    with pytest.raises(InvalidInput):
        SM.moment_profile(SM.RunSpec(ModelParams(3, 30, 0.5), "monochromatic", 10, trials=5))


def test_moment_profile_decay_at_infinite_temperature():
    n, q = 200, 3
    spec = SM.RunSpec(ModelParams(q, n, 0.0), "monochromatic", 600, seed=4, trials=4000, record_every=1)
    mp = SM.moment_profile(spec)
    assert np.all(mp.var[0] == 0)
    # E||S_t - 1/q||^2 = (1 - 1/q) p^{2t} + stationary floor (1 - 1/q)/n (1 - p^{2t})
    p = 1 - 1 / n
    t = mp.times
    floor = (1 - 1 / q) / n
    y = mp.sq_norm_centered - floor
    keep = (t > 0) & (y > 0.05)
    slope = np.polyfit(t[keep], np.log(y[keep]), 1)[0]
    factor = math.exp(slope)
    assert p**2 - 10 / n**2 <= factor <= p**2 + 10 / n**2


def test_moment_profile_variance_is_order_one_over_n():
    sups = []
    for n in (50, 100, 200):
        steps = int(4 * n * math.log(n))
        spec = SM.RunSpec(ModelParams(3, n, 0.8), "monochromatic", steps, seed=n, trials=400,
                          record_every=max(1, steps // 200))
        mp = SM.moment_profile(spec)
        sups.append(n * mp.var[:, 0].max())
    assert max(sups) / min(sups) < 1.5
    assert max(sups) < 2.0


def test_long_run_occupation_matches_stationary_law():
    params = ModelParams(2, 20, 1.0)
    spec = SM.RunSpec(params, ProportionsVector((10, 10)), 10**7, seed=6, record_every=10)
    tr = SM.simulate_trial(spec, 0)
    sp = EX.enumerate_states(params)
    occ = np.bincount(sp.indices(tr.counts), minlength=len(sp)) / len(tr.counts)
    assert 0.5 * np.abs(occ - EX.stationary_distribution(sp)).sum() < 0.01


def test_bounded_occupation_matches_conditioned_law():
    params = ModelParams(2, 20, 1.0)
    rho = 0.2  # allowed counts are < 14
    spec = SM.RunSpec(params, ProportionsVector((10, 10)), 10**7, seed=8, record_every=10, bounded_rho=rho)
    tr = SM.simulate_trial(spec, 0)
    sp = EX.enumerate_states(params)
    pi = EX.stationary_distribution(sp)
    inside = sp.states.max(axis=1) < params.n * (0.5 + rho)
    cond = np.where(inside, pi, 0) / pi[inside].sum()
    occ = np.bincount(sp.indices(tr.counts), minlength=len(sp)) / len(tr.counts)
    assert 0.5 * np.abs(occ - cond).sum() < 0.02
