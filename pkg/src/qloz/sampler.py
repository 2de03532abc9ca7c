"""Random arrays under the q^vol measure.

Three array samplers share one config type:

* ``enumeration``: inverse CDF over every array (tiny N only);
* ``sequential``: rows drawn top-down from the exact branching transition
  ``P(mu | kappa) = q^{|mu|} s_mu / s_kappa``, with a within-row heat bath when
  a row has too many cells;
* ``glauber``: single-site Metropolis dynamics.

:func:`sample_bottom_rows` draws only the bottom K rows, exactly, by inverse
CDF over a row-K marginal table followed by the q-Gibbs transitions below it.

Randomness comes from Philox substreams keyed by ``(seed, tag, index)`` where
the index is a fixed-size block of samples or a chain number, so output never
depends on how work is split across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numba
import numpy as np

from .lattice import (DEFAULT_ENUMERATION_CAP, EnumerationCapError, InterlacingArray,
                      Signature, as_signature, count_arrays, count_interlacing_rows,
                      enumerate_arrays, enumerate_interlacing_rows, min_volume_array, volume)
from .qnum import QParams, hp_context, log_schur_geometric

METHODS = ("enumeration", "sequential", "glauber")
DEFAULT_ROW_CAP = 10**6
HP_ROW_CELLS = 64            # rows up to this size use cached high-precision weights
DEFAULT_HEAT_BATH_SWEEPS = 50_000
BLOCK_SIZE = 1024
VOL_CHECK_EVERY = 10_000
_CHUNK = 1 << 16

_TAGS = {"enumeration": 1, "sequential": 2, "glauber": 3, "bottom": 4, "heat": 5, "gue": 6}


class InfeasibleMethodError(RuntimeError):
    """The requested method exceeds one of its caps."""


def substream(seed: int, tag: str, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(_TAGS[tag], int(index)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class GlauberSettings:
    samples_per_chain: int | None = None
    burn_in: int | None = None       # proposals; default 2 N^4
    thinning: int | None = None      # proposals; default N^3
    chains: int = 1

    def resolved(self, N: int) -> tuple[int, int]:
        b = self.burn_in if self.burn_in is not None else 2 * N**4
        t = self.thinning if self.thinning is not None else N**3
        return int(b), max(1, int(t))


@dataclass
class SamplerConfig:
    params: QParams
    nu: Signature
    method: str = "sequential"
    seed: int = 0
    glauber: GlauberSettings = field(default_factory=GlauberSettings)
    row_cap: int = DEFAULT_ROW_CAP
    heat_bath_sweeps: int = DEFAULT_HEAT_BATH_SWEEPS
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        self.nu = as_signature(self.nu)
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if len(self.nu) != self.params.N:
            raise ValueError(f"nu has {len(self.nu)} parts but N = {self.params.N}")


# -- exact transitions -------------------------------------------------------------

@lru_cache(maxsize=65536)
def _transition_cached(kappa: tuple[int, ...], gamma: float, N: int):
    q_params = QParams(gamma, N)
    ctx = hp_context(96)
    q = q_params.q_hp(ctx)
    rows = enumerate_interlacing_rows(kappa)
    lq = ctx.log(q)
    logs = [mu.size * lq + log_schur_geometric(mu, q, ctx) for mu in rows]
    log_z = log_schur_geometric(kappa, q, ctx)
    probs = np.array([float(ctx.exp(lw - log_z)) for lw in logs])
    return tuple(mu.parts for mu in rows), probs


def row_transition_distribution(kappa, params: QParams, cap: int = DEFAULT_ROW_CAP):
    """Rows ``mu`` below ``kappa`` and their probabilities ``q^{|mu|} s_mu / s_kappa``."""
    kappa = as_signature(kappa)
    if len(kappa) < 2:
        raise ValueError("need a row of length at least 2")
    cells = count_interlacing_rows(kappa)
    if cells > cap:
        raise InfeasibleMethodError(f"row {kappa.parts} has {cells} cells, above the row cap {cap}")
    rows, probs = _transition_cached(kappa.parts, float(params.gamma), int(params.N))
    return [Signature(r) for r in rows], probs


@numba.njit(cache=True)
def _draw_row_fast(kappa, lq, u):
    # log q^{|mu|} s_mu(1, q, ...) from the product formula: for l_i = mu_i - i,
    # sum_{i<j} l_j log q + log(1 - q^{l_i - l_j}), up to a constant of the row length
    k1 = kappa.shape[0] - 1
    radix = np.empty(k1, dtype=np.int64)
    cells = 1
    for j in range(k1):
        radix[j] = kappa[j] - kappa[j + 1] + 1
        cells *= radix[j]
    logw = np.empty(cells)
    mu = np.empty(k1, dtype=np.int64)
    for c in range(cells):
        r = c
        for j in range(k1 - 1, -1, -1):
            mu[j] = kappa[j + 1] + r % radix[j]
            r //= radix[j]
        s = 0.0
        for i in range(k1):
            s += mu[i] * lq
            for j in range(i + 1, k1):
                d = (mu[i] - i) - (mu[j] - j)
                s += (mu[j] - j) * lq + math.log(-math.expm1(lq * d))
        logw[c] = s
    m = logw.max()
    tot = 0.0
    for c in range(cells):
        tot += math.exp(logw[c] - m)
    target = u * tot
    acc = 0.0
    pick = cells - 1
    for c in range(cells):
        acc += math.exp(logw[c] - m)
        if target < acc:
            pick = c
            break
    r = pick
    for j in range(k1 - 1, -1, -1):
        mu[j] = kappa[j + 1] + r % radix[j]
        r //= radix[j]
    return mu


def _draw(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(probs) - 1))


@numba.njit(cache=True)
def _heat_bath_row(kappa, mu, lq, sweeps, seed):
    # 1-D conditional of mu_j given the rest of the row is
    #   q^{y} prod_{i != j} |q^{l_i} - q^{y - j}|,  y in [kappa_{j+1}, kappa_j]
    np.random.seed(seed)
    k1 = mu.shape[0]
    for _ in range(sweeps):
        for j in range(k1):
            lo = kappa[j + 1]
            hi = kappa[j]
            if lo == hi:
                continue
            n = hi - lo + 1
            logw = np.empty(n)
            for t in range(n):
                y = lo + t
                # |q^a - q^b| = q^b |expm1((a - b) log q)| with b = l_j(y)
                s = y * lq + (k1 - 1) * (y - j - 1) * lq
                for i in range(k1):
                    if i != j:
                        s += math.log(abs(math.expm1(lq * ((mu[i] - i) - (y - j)))))
                logw[t] = s
            m = logw.max()
            tot = 0.0
            for t in range(n):
                logw[t] = math.exp(logw[t] - m)
                tot += logw[t]
            u = np.random.random() * tot
            acc = 0.0
            pick = n - 1
            for t in range(n):
                acc += logw[t]
                if u < acc:
                    pick = t
                    break
            mu[j] = lo + pick
    return mu


def _sequential_one(config: SamplerConfig, uniforms: np.ndarray, heat_seed) -> InterlacingArray:
    N = config.params.N
    lq = -config.params.gamma / N
    rows = [config.nu.parts]
    kappa = config.nu
    for step in range(N - 1):
        cells = count_interlacing_rows(kappa)
        if cells > config.row_cap:
            start = np.array(kappa.parts[1:], dtype=np.int64)
            mu = Signature(tuple(int(v) for v in _heat_bath_row(
                np.array(kappa.parts, dtype=np.int64), start, lq,
                config.heat_bath_sweeps, int(heat_seed(step)))))
        elif cells <= HP_ROW_CELLS:
            cand, probs = row_transition_distribution(kappa, config.params, config.row_cap)
            mu = cand[_draw(probs, uniforms[step])]
        else:
            mu = Signature(tuple(int(v) for v in _draw_row_fast(
                np.array(kappa.parts, dtype=np.int64), lq, float(uniforms[step]))))
        rows.append(mu.parts)
        kappa = mu
    return InterlacingArray(list(reversed(rows)))


def sample_exact(config: SamplerConfig, n: int, start: int = 0) -> list[InterlacingArray]:
    """Draws ``start .. start+n-1`` of the stream fixed by ``config.seed``."""
    N = config.params.N
    if config.method == "enumeration":
        count = count_arrays(config.nu)
        if count > config.enumeration_cap:
            raise InfeasibleMethodError(
                f"enumeration needs {count} arrays, above the cap {config.enumeration_cap}")
        arrays, probs = _enumeration_table(config.nu.parts, float(config.params.gamma), N)
    elif config.method != "sequential":
        raise ValueError("sample_exact handles the enumeration and sequential methods")
    out = []
    first_block, last_block = start // BLOCK_SIZE, (start + n - 1) // BLOCK_SIZE
    for b in range(first_block, last_block + 1):
        rng = substream(config.seed, config.method, b)
        u = rng.random((BLOCK_SIZE, max(N - 1, 1)))
        lo = max(start, b * BLOCK_SIZE) - b * BLOCK_SIZE
        hi = min(start + n, (b + 1) * BLOCK_SIZE) - b * BLOCK_SIZE
        for r in range(lo, hi):
            if config.method == "enumeration":
                out.append(arrays[_draw_cdf(probs, u[r, 0])])
            else:
                idx = b * BLOCK_SIZE + r
                heat = lambda step, idx=idx: substream(config.seed, "heat", idx * N + step).integers(2**31)
                out.append(_sequential_one(config, u[r], heat))
    return out


def _draw_cdf(cdf: np.ndarray, u: float) -> int:
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(cdf) - 1))


@lru_cache(maxsize=64)
def _enumeration_table(nu: tuple[int, ...], gamma: float, N: int):
    ctx = hp_context(96)
    q = QParams(gamma, N).q_hp(ctx)
    lq = ctx.log(q)
    arrays = list(enumerate_arrays(nu))
    log_z = log_schur_geometric(nu, q, ctx)
    probs = np.array([float(ctx.exp(volume(a) * lq - log_z)) for a in arrays])
    return arrays, np.cumsum(probs)


# -- Glauber dynamics --------------------------------------------------------------

def _neighbor_tables(N: int):
    """Flat indices bounding each movable site; sentinels sit at L (+inf), L+1 (-inf)."""
    L = N * (N + 1) // 2
    off = InterlacingArray.offset
    sites, hi1, hi2, lo1, lo2 = [], [], [], [], []
    for k in range(1, N):
        for j in range(1, k + 1):
            sites.append(off(k) + j - 1)
            hi1.append(off(k + 1) + j - 1)                       # lambda^{k+1}_j
            lo1.append(off(k + 1) + j)                           # lambda^{k+1}_{j+1}
            hi2.append(off(k - 1) + j - 2 if j >= 2 else L)      # lambda^{k-1}_{j-1}
            lo2.append(off(k - 1) + j - 1 if j <= k - 1 else L + 1)  # lambda^{k-1}_j
    f = lambda a: np.array(a, dtype=np.int64)
    return f(sites), f(hi1), f(hi2), f(lo1), f(lo2)


@numba.njit(cache=True)
def _glauber_kernel(data, sites, hi1, hi2, lo1, lo2, picks, us, q, vol, steps_done,
                    check_every, n_low):
    for t in range(picks.shape[0]):
        s = sites[picks[t]]
        u = us[t]
        if u < 0.5:
            v = data[s] + 1
            if v <= data[hi1[picks[t]]] and v <= data[hi2[picks[t]]] and 2.0 * u < q:
                data[s] = v
                vol += 1
        else:
            v = data[s] - 1
            if v >= data[lo1[picks[t]]] and v >= data[lo2[picks[t]]]:
                data[s] = v
                vol -= 1
        steps_done += 1
        if steps_done % check_every == 0:
            tot = 0
            for i in range(n_low):
                tot += data[i]
            if tot != vol:
                return vol, steps_done, False
    return vol, steps_done, True


def midpoint_array(nu) -> InterlacingArray:
    """Each row at the rounded midpoints of its interlacing intervals.

    A far better chain start than the frozen minimal-volume array.
    """
    nu = as_signature(nu)
    rows = [nu.parts]
    while len(rows[-1]) > 1:
        k = rows[-1]
        rows.append(tuple((k[j] + k[j + 1]) // 2 for j in range(len(k) - 1)))
    return InterlacingArray(list(reversed(rows)))


class GlauberChain:
    """One strictly sequential chain; proposals consume Philox draws in chunks."""

    def __init__(self, params: QParams, nu, seed: int, chain: int = 0,
                 start: InterlacingArray | None = None, check_every: int = VOL_CHECK_EVERY):
        self.params = params
        self.nu = as_signature(nu)
        N = params.N
        self.N = N
        self.rng = substream(seed, "glauber", chain)
        init = start or midpoint_array(self.nu)
        L = N * (N + 1) // 2
        big = np.iinfo(np.int64).max // 4
        self.data = np.concatenate([init.data, [big, -big]]).astype(np.int64)
        self.tables = _neighbor_tables(N)
        self.vol = volume(init)
        self.n_low = InterlacingArray.offset(N)
        self.steps = 0
        self.check_every = check_every
        self._L = L

    def run(self, proposals: int) -> None:
        if self.N == 1 or proposals <= 0:
            self.steps += max(proposals, 0)
            return
        n_sites = len(self.tables[0])
        while proposals > 0:
            m = min(proposals, _CHUNK)
            picks = self.rng.integers(0, n_sites, size=m)
            us = self.rng.random(m)
            self.vol, self.steps, ok = _glauber_kernel(
                self.data, *self.tables, picks, us, self.params.q, self.vol, self.steps,
                self.check_every, self.n_low)
            if not ok:
                raise AssertionError(f"incremental vol drifted from recomputed volume at step {self.steps}")
            proposals -= m

    def state(self) -> InterlacingArray:
        return InterlacingArray.from_flat(self.N, self.data[: self._L])


def sample_glauber(config: SamplerConfig, n: int) -> Iterator[InterlacingArray]:
    """Stream of ``n`` thinned states, spread over ``config.glauber.chains`` chains.

    Chain ``c`` contributes samples ``c, c + C, c + 2C, ...`` of the stream, so the
    stream is fixed by the seed and the chain count alone.
    """
    N = config.params.N
    burn, thin = config.glauber.resolved(N)
    C = max(1, int(config.glauber.chains))
    per_chain = [len(range(c, n, C)) for c in range(C)]
    chains = [GlauberChain(config.params, config.nu, config.seed, c) for c in range(C)]
    for ch in chains:
        ch.run(burn)
    produced = [0] * C
    for i in range(n):
        c = i % C
        if produced[c] > 0:
            chains[c].run(thin)
        produced[c] += 1
        yield chains[c].state()


def sample(config: SamplerConfig, n: int) -> list[InterlacingArray]:
    if config.method == "glauber":
        return list(sample_glauber(config, n))
    return sample_exact(config, n)


# -- exact bottom rows ---------------------------------------------------------------

def sample_bottom_rows(table, M: int, seed: int, start: int = 0) -> np.ndarray:
    """Exact draws of rows 1..K as an ``(M, K(K+1)/2)`` int array (flat layout).

    ``table`` is a row-K :class:`~qloz.marginal.MarginalTable`; rows below K come
    from the exact transitions, which at this depth are tiny.
    """
    K = table.K
    keys, probs = table.as_float_arrays()
    cdf = np.cumsum(probs)
    L = K * (K + 1) // 2
    out = np.empty((M, L), dtype=np.int64)
    params = table.params
    first_block, last_block = start // BLOCK_SIZE, (start + M - 1) // BLOCK_SIZE
    pos = 0
    for b in range(first_block, last_block + 1):
        u = substream(seed, "bottom", b).random((BLOCK_SIZE, K))
        lo = max(start, b * BLOCK_SIZE) - b * BLOCK_SIZE
        hi = min(start + M, (b + 1) * BLOCK_SIZE) - b * BLOCK_SIZE
        for r in range(lo, hi):
            kappa = tuple(int(v) for v in keys[_draw_cdf(cdf, u[r, 0])])
            rows = [kappa]
            for step in range(1, K):
                cand, p = row_transition_distribution(kappa, params)
                kappa = cand[_draw(p, u[r, step])].parts
                rows.append(kappa)
            out[pos] = [v for row in reversed(rows) for v in row]
            pos += 1
    return out


def bottom_rows(array, K: int, u: float, N: int | None = None) -> list[np.ndarray]:
    """Rows ``1..K`` rescaled to ``(lambda - uN)/sqrt(N)``.

    ``array`` is an :class:`InterlacingArray` or a flat ``K(K+1)/2`` vector (or a
    batch of them, as returned by :func:`sample_bottom_rows`).
    """
    if isinstance(array, InterlacingArray):
        N = array.depth if N is None else N
        flat = array.data[: K * (K + 1) // 2].astype(float)
    else:
        if N is None:
            raise ValueError("N is required for raw row data")
        flat = np.asarray(array, dtype=float)
    scaled = (flat - u * N) / math.sqrt(N)
    off = InterlacingArray.offset
    return [scaled[..., off(k): off(k) + k] for k in range(1, K + 1)]
