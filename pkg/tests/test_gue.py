from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats as sps

from qloz.gue import (EigenSolverError, c_coefficients, det_c, det_c_closed_form, det_g,
                      det_g_closed_form, det_g_identity_check, g_functions, g_functions_quadrature,
                      gue_density, gue_matrices, hermitian_eigenvalues, jacobi_eigh,
                      sample_gue_corners, sample_gue_corners_batch, write_corners_jsonl)


def random_hermitian(rng, K):
    A = rng.normal(size=(K, K)) + 1j * rng.normal(size=(K, K))
    return (A + A.conj().T) / 2


def test_k1_is_gaussian():
    x = sample_gue_corners_batch(1, 0.35, 100_000, seed=0)[:, 0]
    assert sps.kstest(x, sps.norm(scale=math.sqrt(0.35)).cdf).statistic < 0.01
    v = x.var()
    se = math.sqrt(2) * 0.35 / math.sqrt(len(x))
    assert abs(v - 0.35) < 3 * se
    one = sample_gue_corners(1, 0.35, seed=0)
    assert one.K == 1 and one.levels[0][0] == x[0]


def test_k2_gap_moment_matches_density_quadrature():
    s2 = 0.7
    batch = sample_gue_corners_batch(2, s2, 100_000, seed=1)
    gap2 = (batch[:, 1] - batch[:, 2]) ** 2
    L = 12 * math.sqrt(s2)
    want = integrate.dblquad(lambda b, a: (a - b) ** 2 * gue_density([a, b], s2),
                             -L, L, lambda a: -L, lambda a: a, epsabs=1e-11)[0]
    assert abs(gap2.mean() - want) < 3 * gap2.std() / math.sqrt(len(gap2))
    # the exact value for GUE_2: E (x1 - x2)^2 = Var(a - b) + 4 E|z|^2 = 6 sigma^2
    assert want == pytest.approx(6 * s2, rel=1e-8)


def test_jacobi_identity_and_diagonal():
    assert hermitian_eigenvalues(np.eye(4)).tolist() == [1.0] * 4
    assert hermitian_eigenvalues(np.diag([3.0, 1.0, 2.0])).tolist() == [3.0, 2.0, 1.0]


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 32 - 1))
def test_jacobi_invariants(K, seed):
    H = random_hermitian(np.random.default_rng(seed), K)
    vals, V = jacobi_eigh(H)
    assert abs(vals.sum() - np.trace(H).real) < 1e-12 * K
    assert abs(np.sqrt((vals ** 2).sum()) - np.linalg.norm(H)) < 1e-12 * np.linalg.norm(H)
    assert np.abs(H @ V - V * vals).max() < 1e-12 * max(1, np.abs(vals).max())
    assert np.allclose(vals, np.linalg.eigvalsh(H)[::-1], atol=1e-12)
    assert np.all(np.diff(vals) <= 0)


def test_jacobi_batched_matches_single():
    H = gue_matrices(4, 1.0, 10, np.random.default_rng(2))
    batch = jacobi_eigh(H, vectors=False)
    for h, v in zip(H, batch):
        assert np.allclose(hermitian_eigenvalues(h), v, atol=1e-14)


def test_jacobi_rejects_non_hermitian():
    with pytest.raises(ValueError):
        hermitian_eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        hermitian_eigenvalues(np.ones((2, 3)))
    with pytest.raises(EigenSolverError):
        jacobi_eigh(random_hermitian(np.random.default_rng(0), 5), max_sweeps=1)


def test_gue_matrix_entry_variances():
    H = gue_matrices(3, 2.0, 50_000, np.random.default_rng(4))
    assert H[:, 0, 0].real.var() == pytest.approx(2.0, rel=0.03)
    assert H[:, 0, 1].real.var() == pytest.approx(1.0, rel=0.03)
    assert H[:, 0, 1].imag.var() == pytest.approx(1.0, rel=0.03)
    assert np.allclose(H, np.conj(np.swapaxes(H, 1, 2)))


def test_corners_interlace():
    K = 5
    b = sample_gue_corners_batch(K, 1.0, 2000, seed=3)
    col = [0]
    for r in range(1, K + 1):
        col.append(col[-1] + r)
    for r in range(1, K):
        lo, hi = b[:, col[r - 1]:col[r]], b[:, col[r]:col[r + 1]]
        assert np.all(hi[:, :-1] >= lo) and np.all(lo >= hi[:, 1:])


def test_corners_seed_and_block_layout():
    a = sample_gue_corners_batch(3, 1.0, 5000, seed=8, block=4096)
    assert np.array_equal(a, sample_gue_corners_batch(3, 1.0, 5000, seed=8, block=4096))
    assert not np.array_equal(a[:10], sample_gue_corners_batch(3, 1.0, 10, seed=9))
    assert np.array_equal(a[:100], sample_gue_corners_batch(3, 1.0, 100, seed=8))
    assert np.array_equal(sample_gue_corners(3, 1.0, seed=8, index=4500).flat(), a[4500])
    with pytest.raises(ValueError):
        sample_gue_corners_batch(0, 1.0, 5, seed=0)


def test_corners_gibbs_uniform():
    # given level 2, level 1 is uniform on [x2_2, x2_1]
    b = sample_gue_corners_batch(2, 1.0, 100_000, seed=5)
    pit = (b[:, 0] - b[:, 2]) / (b[:, 1] - b[:, 2])
    assert sps.kstest(pit, "uniform").statistic < 0.05


def test_density_gaussian_and_ties():
    x = np.linspace(-3, 3, 7)
    assert np.allclose(gue_density(x[:, None], 2.0), sps.norm(scale=math.sqrt(2)).pdf(x))
    assert gue_density([0.4, 0.4, -1.0], 1.0) == 0.0


def test_density_mass_k2():
    L = 12.0
    m = integrate.dblquad(lambda b, a: gue_density([a, b], 1.0), -L, L, lambda a: -L,
                          lambda a: a, epsabs=1e-12)[0]
    assert abs(m - 1) < 1e-6


def test_density_positive_on_samples():
    b = sample_gue_corners_batch(3, 1.0, 20_000, seed=6)[:, 3:]
    assert np.all(gue_density(b, 1.0) > 0)


def test_g0_gaussian_and_g1_odd():
    xi = np.linspace(-2, 2, 9)
    s2, g = 0.4, 1.0
    assert np.allclose(g_functions(0, xi, s2, g), sps.norm(scale=math.sqrt(s2)).pdf(xi))
    assert g_functions(1, 0.0, s2, g) == 0.0


@pytest.mark.parametrize("l", [1, 2, 3, 4])
def test_g_leading_coefficient(l):
    s2, gamma = 0.6, 1.3
    c = math.expm1(gamma)
    xi = np.linspace(-3, 3, 4 * l + 3)
    ratio = g_functions(l, xi, s2, gamma) / g_functions(0, xi, s2, gamma)
    coef = np.polyfit(xi, ratio, l)
    assert coef[0] == pytest.approx(c ** -l * s2 ** -l, rel=1e-9)
    assert np.abs(np.polyval(coef, xi) - ratio).max() < 1e-9 * np.abs(ratio).max()


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_g_recurrence_vs_quadrature(gamma):
    s2 = 0.35
    s2_at_0 = s2 * math.expm1(gamma) ** 2
    xi = np.linspace(-2.5, 2.5, 20)
    for l in range(5):
        rec = g_functions(l, xi, s2, gamma)
        quad = g_functions_quadrature(l, xi, s2_at_0, gamma)
        assert np.abs(rec - quad).max() < 1e-8


def test_c_matrix_k2():
    e = math.e
    assert np.allclose(c_coefficients(2, 1.0), [[1, e], [1, 1]])
    assert det_c(1, 1.0) == 1.0
    assert det_c(2, 1.0) == pytest.approx(1 - e, rel=1e-14)


def test_det_c_k5():
    assert det_c(5, 1.0) == pytest.approx((1 - math.e) ** 10, rel=1e-12)


@pytest.mark.parametrize("K", range(1, 9))
@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_det_c_identity(K, gamma):
    assert det_c(K, gamma) == pytest.approx(det_c_closed_form(K, gamma), rel=1e-10)


def test_det_g_identity():
    assert det_g_identity_check(1, [0.3], 1.0, 1.0)
    assert det_g_identity_check(2, [1.0, 0.0], 1.0, 1.0)
    assert det_g([1.0, 0.0], 1.0, 1.0) == pytest.approx(det_g_closed_form([1.0, 0.0], 1.0, 1.0), rel=1e-12)
    rng = np.random.default_rng(0)
    for K in (3, 4):
        xi = np.sort(rng.normal(size=K))[::-1]
        assert det_g_identity_check(K, xi, 0.5, 2.0)
    assert det_g_closed_form([0.2, 0.2, -1.0], 1.0, 1.0) == 0.0
    assert abs(det_g([0.2, 0.2, -1.0], 1.0, 1.0)) < 1e-14
    with pytest.raises(ValueError):
        det_g_identity_check(3, [0.0, 1.0], 1.0, 1.0)


def test_corners_jsonl(tmp_path):
    b = sample_gue_corners_batch(3, 1.0, 4, seed=0)
    path = tmp_path / "g.jsonl"
    write_corners_jsonl(path, b, 3)
    lines = [json.loads(s) for s in path.read_text().splitlines()]
    assert len(lines) == 4 and lines[0]["K"] == 3
    assert [len(v) for v in lines[0]["levels"]] == [1, 2, 3]
    assert lines[2]["levels"][2][0] == b[2, 3]
