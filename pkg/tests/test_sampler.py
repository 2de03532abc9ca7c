from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qloz.asymptotics import hexagon, limit_params
from qloz.lattice import (InterlacingArray, enumerate_arrays, signature_from_profile,
                          validate_interlacing, volume)
from qloz.marginal import marginal_table
from qloz.qnum import QParams, hp_context, schur_geometric
from qloz.sampler import (GlauberChain, GlauberSettings, InfeasibleMethodError, SamplerConfig,
                          _enumeration_table, bottom_rows, midpoint_array,
                          row_transition_distribution, sample, sample_bottom_rows, sample_exact,
                          substream)
from qloz.stats import chi_square_arrays, ks_discrete_vs_sample

from test_lattice import signatures


def fixture_probs(nu, gamma):
    arrays, cdf = _enumeration_table(tuple(nu), gamma, len(nu))
    return arrays, np.diff(np.concatenate([[0.0], cdf]))


def test_transition_two_row():
    P = QParams(1.0, 2)
    q = P.q
    rows, p = row_transition_distribution((1, 0), P)
    d = {r.parts: v for r, v in zip(rows, p)}
    assert d[(1,)] == pytest.approx(q / (1 + q), rel=1e-14)
    assert d[(0,)] == pytest.approx(1 / (1 + q), rel=1e-14)


def test_transition_constant_row():
    rows, p = row_transition_distribution((2, 2, 2), QParams(1.0, 3))
    assert [r.parts for r in rows] == [(2, 2)] and p.tolist() == [1.0]


@settings(max_examples=30, deadline=None)
@given(signatures(min_len=2, max_len=5, lo=-2, hi=4), st.sampled_from([0.5, 1.0, 2.0]))
def test_transition_branching_sum(kappa, gamma):
    P = QParams(gamma, 7)
    ctx = hp_context(128)
    q = P.q_hp(ctx)
    rows, p = row_transition_distribution(kappa, P)
    assert p.sum() == pytest.approx(1.0, abs=1e-13)
    z = schur_geometric(kappa, q, ctx)
    for mu, v in zip(rows, p):
        want = q ** mu.size * schur_geometric(mu, q, ctx) / z
        assert v == pytest.approx(float(want), rel=1e-13)


def test_row_cap():
    with pytest.raises(InfeasibleMethodError):
        row_transition_distribution((40, 20, 0), QParams(1.0, 3), cap=100)


def test_constant_top_row():
    cfg = SamplerConfig(QParams(1.0, 4), (2, 2, 2, 2), seed=1)
    for a in sample(cfg, 5):
        assert a == InterlacingArray([(2,) * k for k in range(1, 5)])


def test_frequency_two_row():
    P = QParams(1.0, 2)
    s = sample(SamplerConfig(P, (1, 0), seed=4), 100_000)
    f = np.mean([a[1, 1] for a in s])
    p = P.q / (1 + P.q)
    assert abs(f - p) < 3 * math.sqrt(p * (1 - p) / len(s))


@pytest.mark.parametrize("method", ["sequential", "enumeration", "glauber"])
def test_chi_square_210(method):
    arrays, probs = fixture_probs((2, 1, 0), 1.0)
    s = sample(SamplerConfig(QParams(1.0, 3), (2, 1, 0), method=method, seed=11), 100_000)
    assert chi_square_arrays(s, arrays, probs)[2] > 1e-3


def test_heat_bath_fallback_is_exact():
    # force every row through the within-row heat bath
    nu = (3, 1, 0, 0)
    arrays, probs = fixture_probs(nu, 1.0)
    cfg = SamplerConfig(QParams(1.0, 4), nu, seed=2, row_cap=1, heat_bath_sweeps=30)
    s = sample(cfg, 20_000)
    assert chi_square_arrays(s, arrays, probs)[2] > 1e-3


def test_seed_determinism_and_blocks():
    cfg = SamplerConfig(QParams(1.0, 4), (3, 1, 0, 0), seed=9)
    a = sample_exact(cfg, 2500)
    assert a == sample_exact(cfg, 2500)
    # any window of the stream is reproducible on its own
    assert sample_exact(cfg, 700, start=1200) == a[1200:1900]
    other = sample_exact(SamplerConfig(QParams(1.0, 4), (3, 1, 0, 0), seed=10), 50)
    assert other != a[:50]


def test_substreams_differ():
    x = substream(1, "sequential", 0).random(4)
    assert not np.array_equal(x, substream(1, "sequential", 1).random(4))
    assert not np.array_equal(x, substream(1, "glauber", 0).random(4))
    assert np.array_equal(x, substream(1, "sequential", 0).random(4))


def test_enumeration_cap():
    cfg = SamplerConfig(QParams(1.0, 4), (9, 6, 3, 0), method="enumeration", enumeration_cap=10)
    with pytest.raises(InfeasibleMethodError):
        sample(cfg, 1)


def test_two_state_glauber_stationary():
    # two-state chain: up w.p. q/2, down w.p. 1/2 -> stationary (1, q)/(1+q)
    P = QParams(1.0, 2)
    ch = GlauberChain(P, (1, 0), seed=5)
    ch.run(1000)
    xs = []
    for _ in range(40_000):
        ch.run(7)
        xs.append(ch.state()[1, 1])
    p = P.q / (1 + P.q)
    assert abs(np.mean(xs) - p) < 0.015


def test_glauber_moves_and_volume():
    nu = (4, 3, 1, 1, 0)
    ch = GlauberChain(QParams(1.0, 5), nu, seed=0, check_every=1)
    prev = volume(ch.state())
    for _ in range(300):
        ch.run(1)
        st_ = ch.state()
        assert validate_interlacing(st_)[0] and st_.top.parts == nu
        v = volume(st_)
        assert abs(v - prev) <= 1 and v == ch.vol
        prev = v


def test_glauber_chain_count_fixes_stream():
    cfg = SamplerConfig(QParams(1.0, 3), (2, 1, 0), method="glauber", seed=3,
                        glauber=GlauberSettings(burn_in=100, thinning=10, chains=2))
    assert sample(cfg, 40) == sample(cfg, 40)


def test_glauber_defaults():
    assert GlauberSettings().resolved(10) == (2 * 10**4, 10**3)


def test_midpoint_start_valid():
    for nu in [(5, 3, 3, 0, -2), (10,) * 5 + (0,) * 5]:
        a = midpoint_array(nu)
        assert validate_interlacing(a)[0] and a.top.parts == tuple(nu)


@pytest.mark.slow
def test_glauber_hexagon_n30_level_one():
    prof = hexagon()
    N = 30
    P = QParams(1.0, N)
    nu = signature_from_profile(prof, N)
    t = marginal_table(P, nu, 1)
    keys, p = t.as_float_arrays()
    s = sample(SamplerConfig(P, nu, method="glauber", seed=1), 10_000)
    x = np.array([a[1, 1] for a in s], dtype=float)
    assert ks_discrete_vs_sample(x, keys[:, 0], p) < 0.05


def test_bottom_rows_sampler_against_table():
    P = QParams(1.0, 6)
    nu = (3, 3, 1, 0, 0, -1)
    t = marginal_table(P, nu, 2)
    rows = sample_bottom_rows(t, 40_000, seed=1)
    assert rows.shape == (40_000, 3)
    # row 1 interlaces row 2
    assert np.all((rows[:, 2] <= rows[:, 0]) & (rows[:, 0] <= rows[:, 1]))
    keys, p = t.as_float_arrays()
    index = {tuple(k): i for i, k in enumerate(keys.tolist())}
    counts = np.zeros(len(keys))
    for r in rows[:, 1:]:
        counts[index[tuple(r)]] += 1
    from qloz.stats import chi_square
    assert chi_square(counts, p)[2] > 1e-3
    # and the lower row against the full enumeration marginal
    full, probs = fixture_probs(nu, 1.0)
    lvl1 = {}
    for a, v in zip(full, probs):
        lvl1[a[1, 1]] = lvl1.get(a[1, 1], 0) + v
    xs = sorted(lvl1)
    counts1 = np.array([(rows[:, 0] == x).sum() for x in xs])
    assert chi_square(counts1, np.array([lvl1[x] for x in xs]))[2] > 1e-3


def test_bottom_rows_block_windows():
    t = marginal_table(QParams(1.0, 5), (4, 2, 1, 0, 0), 2)
    a = sample_bottom_rows(t, 3000, seed=2)
    assert np.array_equal(sample_bottom_rows(t, 500, seed=2, start=1800), a[1800:2300])


def test_bottom_rows_rescaling():
    arr = InterlacingArray([(3,), (5, 2), (6, 4, 2), (6, 6, 3, 0)])
    lv = bottom_rows(arr, 2, u=0.5)
    assert lv[0].tolist() == [(3 - 2) / 2]
    assert lv[1].tolist() == [(5 - 2) / 2, 0.0]
    assert lv[1][0] >= lv[0][0] >= lv[1][1]
    with pytest.raises(ValueError):
        bottom_rows(arr.data[:3], 2, u=0.5)


def test_level_one_mean_n200():
    prof = hexagon()
    N = 200
    lp = limit_params(prof, 1.0)
    t = marginal_table(QParams(1.0, N), signature_from_profile(prof, N), 1, box="auto",
                       center=round(lp.u * N))
    z = (sample_bottom_rows(t, 10_000, seed=0)[:, 0] - lp.u * N) / math.sqrt(N)
    assert abs(z.mean()) < 3 * math.sqrt(lp.sigma2 / len(z))


def test_all_fixture_arrays_reachable():
    nu = (2, 1, 1, 0)
    seen = set(sample(SamplerConfig(QParams(0.5, 4), nu, seed=0), 5000))
    assert seen == set(enumerate_arrays(nu))
