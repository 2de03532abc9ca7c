from __future__ import annotations

import csv
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qloz.asymptotics import hexagon, limit_params
from qloz.lattice import signature_from_profile
from qloz.marginal import (MarginalLaw, MarginalQuery, SupportError, a_function_quadrature,
                           a_function_residues, det_full_pivot, integrand_poles,
                           marginal_probability, marginal_table, quadrature_circle)
from qloz.qnum import QParams, hp_context
from qloz.verify import enumeration_marginals

from test_lattice import signatures


def test_two_row_table():
    P = QParams(1.0, 2)
    ctx = hp_context(128)
    q = ctx.exp(ctx.mpf(-1) / 2)
    t = marginal_table(P, (1, 0), 1)
    assert abs(t.probabilities[(0,)] - 1 / (1 + q)) < 1e-35
    assert abs(t.probabilities[(1,)] - q / (1 + q)) < 1e-35
    assert abs(t.mass_deficit) < 1e-35
    m = marginal_probability(MarginalQuery(P, (1, 0), 1, (1,)))
    assert abs(m - q / (1 + q)) < 1e-35


def test_query_validation():
    P = QParams(1.0, 3)
    with pytest.raises(ValueError):
        MarginalQuery(P, (1, 0), 1, (0,))
    with pytest.raises(ValueError):
        MarginalQuery(P, (1, 1, 0), 3, (1, 1, 0))
    with pytest.raises(ValueError):
        MarginalQuery(P, (1, 1, 0), 2, (1,))


def test_fixture_2110_row2():
    P = QParams(1.0, 4)
    ref = enumeration_marginals((2, 1, 1, 0), 1.0)[2]
    t = marginal_table(P, (2, 1, 1, 0), 2)
    for k, v in ref.items():
        assert abs(t.probabilities[k] - v) <= v * mpmath.mpf(10) ** -20


@settings(max_examples=25, deadline=None)
@given(signatures(min_len=2, max_len=5, lo=-2, hi=3), st.sampled_from([0.5, 1.0, 2.0]), st.data())
def test_tables_match_enumeration(nu, gamma, data):
    K = data.draw(st.integers(1, len(nu) - 1))
    ref = enumeration_marginals(nu, gamma)[K]
    t = marginal_table(QParams(gamma, len(nu)), nu, K)
    for k in set(ref) | set(t.probabilities):
        r = ref.get(k, 0)
        v = t.probabilities.get(k, 0)
        assert abs(v - r) <= max(r, mpmath.mpf(10) ** -60) * mpmath.mpf(10) ** -20


def test_off_support_zero():
    law = MarginalLaw(QParams(1.0, 3), (2, 1, 0), 1)
    assert law.probability((3,)) == 0
    assert law.probability((-1,)) == 0
    law2 = MarginalLaw(QParams(1.0, 4), (3, 1, 0, 0), 2)
    assert law2.probability((4, 0)) == 0


def test_a_function_empty_contour():
    nu = (3, 1, 0, 0)
    law = MarginalLaw(QParams(1.0, 4), nu, 2)
    for i in (1, 2):
        assert law.a_function(i, nu[0]) == 0


def test_residues_vs_quadrature_N8():
    rng = np.random.default_rng(3)
    nu = (6, 5, 5, 3, 2, 2, 0, -1)
    P = QParams(1.0, 8)
    for _ in range(20):
        K = int(rng.integers(1, 8))
        i = int(rng.integers(1, K + 1))
        x = int(rng.integers(nu[-1] - 8, nu[0]))
        law = MarginalLaw(P, nu, K)
        a = float(law.a_function(i, x))
        qr = a_function_quadrature(i, x, (P, nu, K))
        assert abs(qr.value - a) <= 10 * qr.error + 1e-12 * abs(a), (K, i, x)


def test_a_function_residues_wrapper():
    P = QParams(0.5, 5)
    q = MarginalQuery(P, (4, 2, 1, 0, 0), 3, (2, 1, 0))
    a = a_function_residues(2, 0, q)
    qr = a_function_quadrature(2, 0, q)
    assert abs(float(a) - qr.value) <= 10 * qr.error


def test_poles_avoid_contour_region():
    # no poles on the negative axis or in (q^{N-K-1}, q); circle passes in between
    nu = (6, 5, 5, 3, 2, 2, 0, -1)
    P = QParams(1.5, 8)
    q = P.q
    for K in range(1, 8):
        c, r = quadrature_circle(P, K)
        assert c - r < 0 and q < c + r < 1
        for i in range(1, K + 1):
            for x in range(nu[-1] - 8, nu[0]):
                for p in integrand_poles(i, x, P, nu, K):
                    assert p > 0
                    assert not (q ** (8 - K - 1) < p < q)


def test_quadrature_is_real():
    from qloz.marginal import _log_integrand
    P = QParams(1.0, 6)
    nu = (3, 3, 1, 0, 0, -1)
    c, r = quadrature_circle(P, 2)
    th = np.linspace(0.1, 3.0, 7)
    w = c + r * np.exp(1j * th)
    f = np.exp(_log_integrand(w, 1, 0, P, nu, 2))
    g = np.exp(_log_integrand(np.conj(w), 1, 0, P, nu, 2))
    assert np.allclose(np.conj(f), g, rtol=1e-12)


def test_determinant_column_swap():
    ctx = hp_context(128)
    rng = np.random.default_rng(0)
    m = [[ctx.mpf(float(v)) for v in row] for row in rng.normal(size=(4, 4))]
    d = det_full_pivot(m, ctx)
    swapped = [[row[1], row[0], row[2], row[3]] for row in m]
    assert abs(det_full_pivot(swapped, ctx) + d) < 1e-35
    with mpmath.workprec(128):
        assert abs(d - mpmath.det(mpmath.matrix(m))) < 1e-30


def test_precision_doubling_within_bound():
    law = MarginalLaw(QParams(1.0, 12), (9, 8, 8, 6, 5, 3, 3, 2, 1, 0, 0, 0), 3)
    kappa = (6, 3, 1)
    p, err = law.probability_with_bound(kappa)
    hi = MarginalLaw(QParams(1.0, 12), (9, 8, 8, 6, 5, 3, 3, 2, 1, 0, 0, 0), 3,
                     bits=2 * law.bits_used).probability(kappa)
    assert abs(p - hi) <= err


def test_negative_part_fixture():
    nu = (3, 3, 1, 0, 0, -1)
    ref = enumeration_marginals(nu, 2.0)
    for K in (1, 2, 4, 5):
        t = marginal_table(QParams(2.0, 6), nu, K)
        for k, v in ref[K].items():
            assert abs(t.probabilities[k] / v - 1) < 1e-20


def test_table_n50_mass_and_mean():
    prof = hexagon()
    N = 50
    lp = limit_params(prof, 1.0)
    t = marginal_table(QParams(1.0, N), signature_from_profile(prof, N), 1)
    assert abs(t.mass_deficit) < 1e-15
    assert abs(t.mean(1) - lp.u * N) < math.sqrt(N)


def test_table_box_too_small():
    with pytest.raises(SupportError):
        marginal_table(QParams(1.0, 6), (3, 3, 1, 0, 0, -1), 1, box=(0, 1))


def test_csv_export(tmp_path):
    t = marginal_table(QParams(1.0, 3), (2, 1, 0), 2)
    path = tmp_path / "t.csv"
    t.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["kappa", "probability", "precision_bits"]
    assert len(rows) == 1 + len(t.probabilities)
    with mpmath.workprec(128):
        total = mpmath.fsum(mpmath.mpf(r[1]) for r in rows[1:])
        assert abs(total - 1) < 1e-30
    assert rows[1][0] == "2;1"


def test_k1_table_n100_gaussian_ks():
    from scipy import stats as sps
    from qloz.stats import ks_discrete_vs_continuous
    prof = hexagon()
    N = 100
    lp = limit_params(prof, 1.0)
    t = marginal_table(QParams(1.0, N), signature_from_profile(prof, N), 1)
    keys, p = t.as_float_arrays()
    z = (keys[:, 0] - lp.u * N) / math.sqrt(N)
    ks = ks_discrete_vs_continuous(z, p, lambda x: sps.norm.cdf(x, scale=math.sqrt(lp.sigma2)))
    assert ks < 0.05
