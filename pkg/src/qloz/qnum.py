"""q-arithmetic on top of mpmath.

Every high-precision routine takes an explicit ``mpmath.MPContext`` so that
precision is local to the call; :func:`hp_context` builds one.  Values are
plain ``mpf`` numbers of that context.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable

import mpmath

from .lattice import InterlacingArray, as_signature, volume

DEFAULT_PRECISION_BITS = 128
MAX_PRECISION_BITS = 2048


class PrecisionError(ArithmeticError):
    """Cancellation could not be resolved within the precision ceiling."""

    def __init__(self, message: str, bits: int, bound: float | None = None):
        super().__init__(message)
        self.bits = bits
        self.bound = bound


def default_precision() -> int:
    env = os.environ.get("QLOZ_PRECISION_BITS")
    return int(env) if env else DEFAULT_PRECISION_BITS


def hp_context(bits: int | None = None) -> mpmath.MPContext:
    ctx = mpmath.MPContext()
    ctx.prec = int(bits or default_precision())
    return ctx


def hp_to_str(x, bits: int) -> str:
    """Decimal string carrying all ``bits`` of precision."""
    digits = max(1, math.ceil(bits * math.log10(2)))
    ctx = hp_context(bits)
    return ctx.nstr(ctx.mpf(x), digits, strip_zeros=False)


@dataclass(frozen=True)
class QParams:
    """``q = exp(-gamma/N)``; q is never supplied on its own."""

    gamma: float
    N: int

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")

    @property
    def q(self) -> float:
        return math.exp(-self.gamma / self.N)

    def q_hp(self, ctx: mpmath.MPContext):
        return ctx.exp(-ctx.mpf(self.gamma) / self.N)

    def log_q_hp(self, ctx: mpmath.MPContext):
        return -ctx.mpf(self.gamma) / self.N


def q_pochhammer(a, q, m: int, ctx: mpmath.MPContext | None = None):
    """``(a; q)_m = (1-a)(1-aq)...(1-aq^{m-1})``, with ``(a; q)_0 = 1``."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    ctx = ctx or hp_context()
    a, q = ctx.mpf(a), ctx.mpf(q)
    out = ctx.mpf(1)
    for _ in range(m):
        out *= 1 - a
        a *= q
    return out


def _check_q(q, ctx):
    if not (0 < q < 1):
        raise ValueError(f"q must lie in (0, 1), got {ctx.nstr(q, 10)}; "
                         "use the reflected top row for q > 1")


def log_schur_geometric(nu, q, ctx: mpmath.MPContext | None = None):
    """``log s_nu(1, q, ..., q^{n-1})`` for ``0 < q < 1``.

    Uses ``s_nu = q^{sum_j (j-1) nu_j} prod_{i<j} (1 - q^{l_i - l_j}) / (1 - q^{j-i})``
    with ``l_i = nu_i - i``; each factor goes through ``expm1`` so that q near 1
    costs no digits.
    """
    ctx = ctx or hp_context()
    nu = as_signature(nu)
    q = ctx.mpf(q)
    _check_q(q, ctx)
    lq = ctx.log(q)
    n = len(nu)
    ell = [nu[i] - (i + 1) for i in range(n)]
    total = lq * sum(j * nu[j] for j in range(n))
    for i in range(n):
        for j in range(i + 1, n):
            total += ctx.log(ctx.expm1(lq * (ell[i] - ell[j])) / ctx.expm1(lq * (j - i)))
    return total


def schur_geometric(nu, q, ctx: mpmath.MPContext | None = None):
    """Principal specialization ``s_nu(1, q, ..., q^{len(nu)-1})``."""
    ctx = ctx or hp_context()
    return ctx.exp(log_schur_geometric(nu, q, ctx))


def schur_geometric_product(nu, q, ctx: mpmath.MPContext | None = None):
    """Literal product ``prod_{i<j} (q^{nu_i-i} - q^{nu_j-j}) / (q^{-i} - q^{-j})``.

    Kept as an independent check on :func:`schur_geometric`; it loses digits
    when q is close to 1.
    """
    ctx = ctx or hp_context()
    nu = as_signature(nu)
    q = ctx.mpf(q)
    _check_q(q, ctx)
    n = len(nu)
    out = ctx.mpf(1)
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            out *= (q ** (nu[i - 1] - i) - q ** (nu[j - 1] - j)) / (q ** (-i) - q ** (-j))
    return out


def log_weight(array: InterlacingArray, q, ctx: mpmath.MPContext | None = None):
    """``log q^{vol}``."""
    ctx = ctx or hp_context()
    return volume(array) * ctx.log(ctx.mpf(q))


def normalized_probability(array: InterlacingArray, nu, q, ctx: mpmath.MPContext | None = None):
    """``q^{vol} / s_nu(1, ..., q^{N-1})``."""
    ctx = ctx or hp_context()
    nu = as_signature(nu)
    if tuple(array.top) != nu.parts:
        raise ValueError(f"array top row {array.top.parts} differs from nu = {nu.parts}")
    return ctx.exp(log_weight(array, q, ctx) - log_schur_geometric(nu, q, ctx))


def sum_cancels(total, largest, bits: int) -> bool:
    """Cancellation test of the escalation policy.

    True when ``|total| < largest * 2^{-bits/2}``: fewer than half the working
    bits of the largest term survive the summation.
    """
    if largest == 0:
        return False
    return abs(total) < abs(largest) * mpmath.mpf(2) ** (-bits // 2)


def with_escalation(fn: Callable[[mpmath.MPContext], tuple], start: int | None = None,
                    ceiling: int = MAX_PRECISION_BITS):
    """Call ``fn(ctx)`` with doubling precision until it reports no cancellation.

    ``fn`` returns ``(value, cancelled)``; the value from the first call with
    ``cancelled == False`` is returned together with the precision used.
    """
    bits = int(start or default_precision())
    while True:
        ctx = hp_context(bits)
        value, cancelled = fn(ctx)
        if not cancelled:
            return value, bits
        if bits * 2 > ceiling:
            raise PrecisionError(f"cancellation persists at {bits} bits", bits)
        bits *= 2
