"""Exact law of row K of a q^vol-weighted interlacing array.

The probability of ``lambda^K = kappa`` is

    s_kappa(1,...,q^{K-1}) (-1)^{K(N-K)} q^{(N-K)|kappa|} q^{-K(N-K)(N+2)/2}
        * det[A_i(kappa_j - j)]_{i,j=1..K}

with ``A_i(x)`` a contour integral around the poles ``q^{nu_r - r}``,
``nu_r - r >= x``.  :class:`MarginalLaw` evaluates ``A_i`` as a finite residue
sum in high precision; :func:`a_function_quadrature` is an independent
trapezoid-rule evaluation of the rewritten integral in the ``w = q^x / z``
variable, used to cross-check the residues.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import permutations, product
from typing import Iterable

import mpmath
import numpy as np

from .lattice import Signature, as_signature
from .qnum import (MAX_PRECISION_BITS, PrecisionError, QParams, default_precision,
                   hp_context, hp_to_str, log_schur_geometric)


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class MarginalQuery:
    params: QParams
    nu: Signature
    K: int
    kappa: Signature

    def __post_init__(self):
        object.__setattr__(self, "nu", as_signature(self.nu))
        object.__setattr__(self, "kappa", as_signature(self.kappa))
        if len(self.nu) != self.params.N:
            raise ValueError(f"nu has {len(self.nu)} parts, N = {self.params.N}")
        if not 1 <= self.K < self.params.N:
            raise ValueError(f"need 1 <= K < N, got K = {self.K}, N = {self.params.N}")
        if len(self.kappa) != self.K:
            raise ValueError(f"kappa must have K = {self.K} parts")


@dataclass
class _Cache:
    ctx: mpmath.MPContext
    q: object
    lq: object
    poles: list            # q^{ell_s}
    inv_d: list            # 1 / prod_{r != s} (p_s - p_r)
    e_factor: dict         # i -> list over s of prod_{r in I_i} (p_s - q^{-r})
    qq: list               # qq[m] = (q; q)_m
    a_values: dict = field(default_factory=dict)


def _index_set(i: int, N: int, K: int) -> list[int]:
    return list(range(1, i)) + list(range(N - K + i + 1, N + 1))


class MarginalLaw:
    """Row-K marginal of the q^vol measure with top row ``nu``.

    Per-precision caches hold the x-independent pieces of the residues, so a
    whole table costs O(N) multiplications per ``A_i(x)``.
    """

    def __init__(self, params: QParams, nu, K: int, bits: int | None = None):
        self.params = params
        self.nu = as_signature(nu)
        self.N = params.N
        self.K = K
        if len(self.nu) != self.N:
            raise ValueError(f"nu has {len(self.nu)} parts but N = {self.N}")
        if not 1 <= K < self.N:
            raise ValueError(f"need 1 <= K < N, got K = {K}")
        self.ell = [self.nu[s] - (s + 1) for s in range(self.N)]
        self.start_bits = int(bits or default_precision())
        self._caches: dict[int, _Cache] = {}
        self.bits_used = self.start_bits

    # -- residue machinery ---------------------------------------------------

    def _cache(self, bits: int) -> _Cache:
        c = self._caches.get(bits)
        if c is not None:
            return c
        ctx = hp_context(bits)
        N, K, ell = self.N, self.K, self.ell
        lq = self.params.log_q_hp(ctx)
        q = ctx.exp(lq)
        poles = [ctx.exp(lq * l) for l in ell]
        inv_d = []
        for s in range(N):
            d = ctx.mpf(1)
            for r in range(N):
                if r != s:
                    # p_s - p_r = q^{ell_r} (q^{ell_s - ell_r} - 1)
                    d *= poles[r] * ctx.expm1(lq * (ell[s] - ell[r]))
            inv_d.append(1 / d)
        e_factor = {}
        for i in range(1, K + 1):
            idx = _index_set(i, N, K)
            row = []
            for s in range(N):
                e = ctx.mpf(1)
                for r in idx:
                    e *= ctx.exp(-lq * r) * ctx.expm1(lq * (ell[s] + r))
                row.append(e)
            e_factor[i] = row
        # (q;q)_m for m up to the largest index a residue can touch
        m_max = max(ell) - (min(ell) - N) + N + 2
        qq = [ctx.mpf(1)]
        for m in range(1, m_max + 1):
            qq.append(qq[-1] * -ctx.expm1(lq * m))
        c = _Cache(ctx, q, lq, poles, inv_d, e_factor, qq)
        self._caches[bits] = c
        return c

    def _qq(self, c: _Cache, m: int):
        while m >= len(c.qq):
            c.qq.append(c.qq[-1] * -c.ctx.expm1(c.lq * len(c.qq)))
        return c.qq[m]

    def _a_raw(self, i: int, x: int, bits: int):
        """``(A_i(x), largest |term|, abs error bound)`` at ``bits`` precision."""
        c = self._cache(bits)
        key = (i, x)
        hit = c.a_values.get(key)
        if hit is not None:
            return hit
        ctx = c.ctx
        M = self.N - self.K - 1
        total = ctx.mpf(0)
        largest = ctx.mpf(0)
        n_terms = 0
        for s in range(self.N):
            if self.ell[s] < x:
                continue
            e = self.ell[s] + 1 - x   # >= 1, so (q^e; q)_M never vanishes here
            poch = self._qq(c, e + M - 1) / self._qq(c, e - 1)
            term = poch * c.e_factor[i][s] * c.inv_d[s]
            total += term
            largest = max(largest, abs(term))
            n_terms += 1
        scale = -ctx.expm1(c.lq * (self.N - self.K))   # 1 - q^{N-K}
        value = scale * total
        err = scale * largest * (n_terms + 4 * self.N + 8) * ctx.mpf(2) ** (-bits)
        out = (value, scale * largest, err)
        c.a_values[key] = out
        return out

    def a_function(self, i: int, x: int, bits: int | None = None):
        """``A_i(x)`` by residues, escalating precision on cancellation."""
        b = int(bits or self.bits_used)
        while True:
            value, largest, err = self._a_raw(i, x, b)
            if largest == 0 or abs(value) >= largest * mpmath.mpf(2) ** (-b // 2):
                return value
            if abs(value) <= 16 * err:
                return value   # zero to working precision
            if b * 2 > MAX_PRECISION_BITS:
                raise PrecisionError(f"A_{i}({x}) still cancels at {b} bits", b)
            b *= 2

    # -- probabilities -------------------------------------------------------

    def _log_prefactor_abs(self, kappa: Signature, ctx, lq):
        N, K = self.N, self.K
        return (log_schur_geometric(kappa, ctx.exp(lq), ctx) + lq * (N - K) * kappa.size
                - lq * mpmath.mpf(K * (N - K) * (N + 2)) / 2)

    def _probability_at(self, kappa: Signature, bits: int):
        """``(P, abs error bound, cancelled)`` at fixed precision."""
        c = self._cache(bits)
        ctx = c.ctx
        K = self.K
        xs = [kappa[j] - (j + 1) for j in range(K)]
        entries = [[self._a_raw(i, x, bits) for x in xs] for i in range(1, K + 1)]
        mat = [[e[0] for e in row] for row in entries]
        errs = [[e[2] for e in row] for row in entries]
        det = det_full_pivot(mat, ctx)
        absm = [[abs(v) for v in row] for row in mat]
        per_abs = _permanent_bound(absm, ctx)
        per_pert = _permanent_bound([[absm[a][b] + errs[a][b] for b in range(K)]
                                     for a in range(K)], ctx)
        det_err = (per_pert - per_abs) + per_abs * (K * K + 2) * ctx.mpf(2) ** (-bits)
        # single zero entries are harmless; what matters is how many bits of
        # the determinant survive the propagated entry errors
        cancelled = det_err > abs(det) * ctx.mpf(2) ** (-bits // 2)
        sign = -1 if (K * (self.N - K)) % 2 else 1
        pref = ctx.exp(self._log_prefactor_abs(kappa, ctx, c.lq))
        prob = sign * pref * det
        err = pref * det_err + abs(prob) * 8 * self.N * self.N * ctx.mpf(2) ** (-bits)
        return prob, err, cancelled

    def probability(self, kappa, tol: float = 1e-30):
        """P(lambda^K = kappa) as an mpf, with precision escalation."""
        kappa = as_signature(kappa)
        if len(kappa) != self.K:
            raise ValueError(f"kappa must have {self.K} parts")
        if not self.in_support(kappa):
            return hp_context(self.bits_used).mpf(0)
        b = self.bits_used
        while True:
            prob, err, cancelled = self._probability_at(kappa, b)
            if not cancelled and prob >= -max(tol, 10 * err):
                self.bits_used = b
                return prob
            if b * 2 > MAX_PRECISION_BITS:
                if prob < -max(tol, 10 * err):
                    raise PrecisionError(f"negative probability {mpmath.nstr(prob, 5)} for "
                                         f"kappa = {kappa.parts} at {b} bits", b, float(err))
                raise PrecisionError(f"cancellation persists for kappa = {kappa.parts}", b, float(err))
            b *= 2

    def probability_with_bound(self, kappa):
        p = self.probability(kappa)
        if p == 0:
            return p, 0.0
        _, err, _ = self._probability_at(as_signature(kappa), self.bits_used)
        return p, err

    def in_support(self, kappa) -> bool:
        """Interlacing bounds ``nu_{j+N-K} <= kappa_j <= nu_j``."""
        kappa = as_signature(kappa)
        N, K = self.N, self.K
        return all(self.nu[j + N - K] <= kappa[j] <= self.nu[j] for j in range(K))


def det_full_pivot(mat, ctx):
    """Determinant by Gaussian elimination with full pivoting."""
    a = [[ctx.mpf(v) for v in row] for row in mat]
    n = len(a)
    det = ctx.mpf(1)
    for col in range(n):
        best, bi, bj = ctx.mpf(-1), col, col
        for r in range(col, n):
            for s in range(col, n):
                if abs(a[r][s]) > best:
                    best, bi, bj = abs(a[r][s]), r, s
        if best == 0:
            return ctx.mpf(0)
        if bi != col:
            a[bi], a[col] = a[col], a[bi]
            det = -det
        if bj != col:
            for row in a:
                row[bj], row[col] = row[col], row[bj]
            det = -det
        piv = a[col][col]
        det *= piv
        for r in range(col + 1, n):
            f = a[r][col] / piv
            if f:
                for s in range(col, n):
                    a[r][s] -= f * a[col][s]
    return det


def _permanent_bound(absm, ctx):
    n = len(absm)
    if n <= 7:
        total = ctx.mpf(0)
        for perm in permutations(range(n)):
            t = ctx.mpf(1)
            for a, b in enumerate(perm):
                t *= absm[a][b]
            total += t
        return total
    # product of row sums bounds the permanent of a nonnegative matrix
    out = ctx.mpf(1)
    for row in absm:
        out *= ctx.fsum(row)
    return out


def a_function_residues(i: int, x: int, query: MarginalQuery | MarginalLaw):
    law = query if isinstance(query, MarginalLaw) else MarginalLaw(query.params, query.nu, query.K)
    return law.a_function(i, x)


def marginal_probability(query: MarginalQuery):
    law = MarginalLaw(query.params, query.nu, query.K)
    return law.probability(query.kappa)


# -- independent quadrature route -------------------------------------------------

def quadrature_circle(params: QParams, K: int):
    """(center, radius): left crossing at -q^{N-K}/2, right crossing at (q+1)/2."""
    q = params.q
    rho = q ** (params.N - K) / 2
    rho2 = (q + 1) / 2
    return (rho2 - rho) / 2, (rho2 + rho) / 2


def _log_integrand(w, i: int, x: int, params: QParams, nu: Signature, K: int):
    """Complex log of the rewritten integrand, up to the constant prefactor."""
    N = params.N
    lq = -params.gamma / N
    w = np.asarray(w, dtype=complex)
    qx = math.exp(lq * x)
    out = np.zeros_like(w)
    for r in range(1, N - K):
        out += np.log(math.exp(lq * r) - w)
    for r in range(1, N + 1):
        out -= np.log(qx - w * math.exp(lq * (nu[r - 1] - r)))
    for r in _index_set(i, N, K):
        out += np.log(qx - w * math.exp(-lq * r))
    return out


def integrand_poles(i: int, x: int, params: QParams, nu, K: int) -> list[float]:
    """Uncancelled poles of the rewritten integrand in the w variable."""
    nu = as_signature(nu)
    N = params.N
    q = params.q
    zeros = set(range(1, N - K)) | {x + r for r in _index_set(i, N, K)}
    poles = []
    for r in range(1, N + 1):
        d = x - (nu[r - 1] - r)   # pole at w = q^d
        if d in zeros:
            zeros.discard(d)
            continue
        poles.append(q ** d)
    return sorted(poles)


@dataclass
class QuadratureResult:
    value: float
    error: float
    points: int


def a_function_quadrature(i: int, x: int, query: MarginalQuery | tuple, max_points: int = 2**16,
                          rtol: float = 1e-13) -> QuadratureResult:
    """Trapezoid rule in angle on the circle of :func:`quadrature_circle`.

    The integrand is analytic and periodic on the circle, so the rule converges
    geometrically; the error estimate is the change under point doubling plus
    a roundoff floor.
    """
    if isinstance(query, MarginalQuery):
        params, nu, K = query.params, query.nu, query.K
    else:
        params, nu, K = query
        nu = as_signature(nu)
    N = params.N
    lq = -params.gamma / N
    center, radius = quadrature_circle(params, K)
    const = math.exp(lq * x) * (-1) ** (N - K - 1) * (-math.expm1(lq * (N - K)))

    def trap(n):
        theta = 2 * np.pi * np.arange(n) / n
        eit = np.exp(1j * theta)
        w = center + radius * eit
        vals = np.exp(_log_integrand(w, i, x, params, nu, K))
        # (1 / 2 pi i) int f dw with dw = i r e^{it} dt
        return (vals * radius * eit).mean(), np.abs(vals).max() * radius

    n = 64
    prev, _ = trap(n)
    while True:
        n *= 2
        cur, scale = trap(n)
        err = abs(cur - prev) + 64 * np.finfo(float).eps * scale
        if err <= rtol * max(abs(cur), 1e-300) + 64 * np.finfo(float).eps * scale or n >= max_points:
            if n >= max_points and abs(cur - prev) > 1e-6 * max(abs(cur), scale):
                raise QuadratureError(f"trapezoid rule for A_{i}({x}) did not settle "
                                      f"at {n} points")
            return QuadratureResult(float((const * cur).real), float(abs(const) * err), n)
        prev = cur


# -- tables -----------------------------------------------------------------------

@dataclass
class MarginalTable:
    params: QParams
    nu: Signature
    K: int
    probabilities: dict      # kappa tuple -> mpf
    bits: int
    error_bound: float
    box: tuple[int, int]

    @property
    def total_mass(self):
        return mpmath.fsum(self.probabilities.values())

    @property
    def mass_deficit(self) -> float:
        return float(1 - self.total_mass)

    def as_float_arrays(self):
        keys = sorted(self.probabilities)
        return np.array(keys), np.array([float(self.probabilities[k]) for k in keys])

    def mean(self, j: int = 1) -> float:
        keys, p = self.as_float_arrays()
        return float((keys[:, j - 1] * p).sum() / p.sum())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kappa", "probability", "precision_bits"])
            for kappa in sorted(self.probabilities, reverse=True):
                w.writerow([";".join(str(v) for v in kappa),
                            hp_to_str(self.probabilities[kappa], self.bits), self.bits])


class SupportError(RuntimeError):
    pass


def _rows_in_box(law: MarginalLaw, lo: int, hi: int) -> Iterable[tuple[int, ...]]:
    N, K, nu = law.N, law.K, law.nu
    ranges = [range(max(lo, nu[j + N - K]), min(hi, nu[j]) + 1) for j in range(K)]
    for kappa in product(*ranges):
        if all(kappa[j] >= kappa[j + 1] for j in range(K - 1)):
            yield kappa


def level_one_box(law: MarginalLaw, center: int | None = None, tail: float = 1e-25):
    """Scan outward from ``center`` until the K = 1 tails drop below ``tail``."""
    K1 = law if law.K == 1 else MarginalLaw(law.params, law.nu, 1, bits=law.bits_used)
    lo_b, hi_b = law.nu[-1], law.nu[0]
    if center is None:
        center = (lo_b + hi_b) // 2
    center = min(max(center, lo_b), hi_b)

    def scan(step):
        x = center
        run = 0
        while lo_b <= x + step <= hi_b:
            x += step
            p = K1.probability((x,))
            run = run + 1 if p < tail else 0
            if run >= 3:
                return x
        return x

    return scan(-1), scan(+1)


def marginal_table(params: QParams, nu, K: int, box: tuple[int, int] | str = "full",
                   center: int | None = None, tail: float = 1e-25,
                   tolerance: float | None = None, law: MarginalLaw | None = None
                   ) -> MarginalTable:
    """All probabilities of row ``K`` with entries in ``box``.

    ``box="full"`` uses the interlacing range ``[nu_N, nu_1]``; ``box="auto"``
    scans outward from ``center`` (e.g. ``round(u N)``) until the level-one
    tails fall below ``tail``.  Raises :class:`SupportError` when the missing
    mass exceeds ``tolerance`` (default: ten times the precision bound plus
    the allowed tail).
    """
    nu = as_signature(nu)
    law = law or MarginalLaw(params, nu, K)
    if box == "full":
        lo, hi = nu[-1], nu[0]
    elif box == "auto":
        lo, hi = level_one_box(law, center=center, tail=tail)
    else:
        lo, hi = box
    kappas = list(_rows_in_box(law, lo, hi))
    # settle the precision on the whole table before recording bounds
    while True:
        bits = law.bits_used
        probs = {k: law.probability(k) for k in kappas}
        if law.bits_used == bits:
            break
    errs = [law._probability_at(Signature(k), bits)[1] for k in kappas]
    bound = float(mpmath.fsum(errs)) if errs else 0.0
    table = MarginalTable(params, nu, K, probs, bits, bound, (lo, hi))
    if tolerance is None:
        tolerance = 10 * bound + (0 if box == "full" else 1e-12)
    if abs(table.mass_deficit) > tolerance:
        raise SupportError(f"row-{K} table over box {lo}..{hi} misses mass "
                           f"{table.mass_deficit:.3e} (tolerance {tolerance:.3e})")
    return table
