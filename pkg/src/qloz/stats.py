"""Statistical checks and the CLT experiment drivers."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

from .asymptotics import Profile, limit_params
from .gue import gue_density, sample_gue_corners_batch
from .lattice import InterlacingArray, signature_from_profile
from .marginal import marginal_table
from .qnum import QParams
from .sampler import (GlauberSettings, SamplerConfig, sample, sample_bottom_rows)


# -- basic tests --------------------------------------------------------------------

def ks_statistic(sample, cdf) -> tuple[float, float]:
    """Sup distance between the empirical CDF and ``cdf``; asymptotic Kolmogorov p-value."""
    x = np.asarray(sample, dtype=float)
    if x.size < 10:
        raise ValueError("need at least 10 observations")
    res = sps.kstest(x, cdf, method="asymp")
    return float(res.statistic), float(res.pvalue)


def ks_two_sample(a, b) -> tuple[float, float]:
    res = sps.ks_2samp(np.asarray(a, float), np.asarray(b, float), method="asymp")
    return float(res.statistic), float(res.pvalue)


def ks_discrete_vs_continuous(points, probs, cdf) -> float:
    """KS distance of a lattice law (atoms ``points``) from a continuous CDF."""
    order = np.argsort(points)
    x, p = np.asarray(points, float)[order], np.asarray(probs, float)[order]
    F = np.cumsum(p) / p.sum()
    G = cdf(x)
    return float(max(np.abs(F - G).max(), np.abs(F - p / p.sum() - G).max()))


def chi_square(counts, probs, min_expected: float = 5.0) -> tuple[float, int, float]:
    """Pearson statistic, degrees of freedom and p-value; cells below
    ``min_expected`` are pooled into one."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    exp = probs / probs.sum() * n
    small = exp < min_expected
    if small.any():
        counts = np.append(counts[~small], counts[small].sum())
        exp = np.append(exp[~small], exp[small].sum())
    if len(exp) < 2:
        return 0.0, 0, 1.0
    stat = float(((counts - exp) ** 2 / exp).sum())
    dof = len(exp) - 1
    return stat, dof, float(sps.chi2.sf(stat, dof))


def chi_square_arrays(samples, arrays, probs) -> tuple[float, int, float]:
    index = {a: i for i, a in enumerate(arrays)}
    counts = np.zeros(len(arrays))
    for s in samples:
        counts[index[s]] += 1
    return chi_square(counts, probs)


def jackknife_se(x, stat, groups: int = 50) -> float:
    """Grouped delete-one jackknife standard error of ``stat``."""
    x = np.asarray(x)
    g = min(groups, len(x))
    parts = np.array_split(np.arange(len(x)), g)
    reps = np.array([stat(np.delete(x, idx, axis=0)) for idx in parts])
    return float(math.sqrt((g - 1) / g * ((reps - reps.mean()) ** 2).sum()))


@dataclass
class MomentRow:
    order: int
    value: float
    se: float
    reference: float | None = None
    reference_se: float | None = None


def moment_report(samples, reference=None, orders=(1, 2, 3, 4)) -> list[MomentRow]:
    """Raw moments ``E X^k`` with jackknife errors.

    ``reference`` is either a sequence of exact moments or a reference sample.
    """
    x = np.asarray(samples, dtype=float)
    rows = []
    ref_sample = reference is not None and np.ndim(reference) == 1 and len(reference) > len(orders)
    for k in orders:
        f = lambda v, k=k: float(np.mean(v ** k))
        row = MomentRow(k, f(x), jackknife_se(x, f))
        if reference is not None:
            if ref_sample:
                r = np.asarray(reference, dtype=float)
                row.reference, row.reference_se = f(r), jackknife_se(r, f)
            else:
                row.reference = float(reference[k - 1])
        rows.append(row)
    return rows


def gaussian_moments(sigma2: float):
    return (0.0, sigma2, 0.0, 3 * sigma2 ** 2)


def randomized_pit_uniform(x, lo, hi, rng) -> np.ndarray:
    """Map a value uniform on the integers lo..hi to U(0, 1) by jittering."""
    x, lo, hi = (np.asarray(v, dtype=float) for v in (x, lo, hi))
    return (x - lo + rng.random(x.shape)) / (hi - lo + 1)


# -- experiment driver ----------------------------------------------------------------

@dataclass
class ExperimentSpec:
    profile: Profile
    gamma: float
    N_list: list
    K: int = 1
    M: int = 10_000
    seed: int = 0
    method: str = "marginal"        # exact bottom rows; or "glauber" / "sequential"
    gue_M: int = 100_000
    tv_N: int | None = 60
    ks_threshold: float = 0.05
    moment_rtol: float = 0.10
    gibbs_threshold: float = 0.08
    gibbs_min_bin: int = 500
    glauber: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.M < 100:
            raise ValueError("M must be at least 100")
        if self.K > min(self.N_list) - 1:
            raise ValueError("K must be below every N")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["profile"] = self.profile.to_dict()
        return d


def _bottom_samples(spec: ExperimentSpec, N: int, K: int, table=None):
    """``(M, K(K+1)/2)`` integer bottom rows under the chosen method."""
    nu = signature_from_profile(spec.profile, N)
    params = QParams(spec.gamma, N)
    if spec.method == "marginal":
        if table is None:
            lp = limit_params(spec.profile, spec.gamma)
            table = marginal_table(params, nu, K, box="auto", center=int(round(lp.u * N)))
        return sample_bottom_rows(table, spec.M, spec.seed), table
    settings = GlauberSettings(**spec.glauber) if spec.glauber else GlauberSettings()
    cfg = SamplerConfig(params, nu, method=spec.method, seed=spec.seed, glauber=settings)
    arrays = sample(cfg, spec.M)
    L = K * (K + 1) // 2
    return np.array([a.data[:L] for a in arrays]), table


def run_level1_clt(spec: ExperimentSpec) -> dict:
    """(lambda^1_1 - uN)/sqrt(N) against N(0, sigma^2), per N."""
    lp = limit_params(spec.profile, spec.gamma)
    sd = math.sqrt(lp.sigma2)
    cdf = lambda x: sps.norm.cdf(x, scale=sd)
    out = {"spec": spec.to_dict(), "limit": asdict(lp), "threshold": spec.ks_threshold, "runs": []}
    for N in spec.N_list:
        t0 = time.time()
        nu = signature_from_profile(spec.profile, N)
        table = marginal_table(QParams(spec.gamma, N), nu, 1, box="auto", center=int(round(lp.u * N)))
        keys, probs = table.as_float_arrays()
        xs = (keys[:, 0] - lp.u * N) / math.sqrt(N)
        exact_ks = ks_discrete_vs_continuous(xs, probs, cdf)
        data, _ = _bottom_samples(spec, N, 1, table if spec.method == "marginal" else None)
        z = (data[:, 0] - lp.u * N) / math.sqrt(N)
        stat, p = ks_statistic(z, cdf)
        # sampler against the exact law, isolating sampler error from finite-N error
        samp_vs_exact = ks_discrete_vs_sample(z, xs, probs)
        out["runs"].append({
            "N": N, "ks": stat, "p": p, "pass": stat < spec.ks_threshold,
            "exact_table_ks": exact_ks, "sample_vs_exact_ks": samp_vs_exact,
            "sample_vs_exact_bound": 3 / math.sqrt(spec.M),
            "mean": float(z.mean()), "mean_se": float(z.std(ddof=1) / math.sqrt(len(z))),
            "var": float(z.var(ddof=1)), "sigma2": lp.sigma2,
            "table_bits": table.bits, "seconds": time.time() - t0,
        })
    return out


def ks_discrete_vs_sample(z, xs, probs) -> float:
    """Sup distance between a sample's ECDF and an exact lattice CDF, over the atoms."""
    order = np.argsort(xs)
    xs, probs = np.asarray(xs)[order], np.asarray(probs)[order]
    F = np.cumsum(probs) / probs.sum()
    zs = np.sort(np.asarray(z))
    emp = np.searchsorted(zs, xs + 1e-9 * (1 + np.abs(xs)), side="right") / len(zs)
    return float(np.abs(emp - F).max())


def gue_cell_masses(keys, N: int, u: float, sigma2: float, nodes: int = 6) -> np.ndarray:
    """Mass of the K=2 eigenvalue density over each lattice cell (half cells on the diagonal)."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    h = 1 / math.sqrt(N)
    keys = np.asarray(keys, dtype=float)
    c1 = (keys[:, 0] - u * N) * h
    c2 = (keys[:, 1] - u * N) * h
    X1 = c1[:, None, None] + 0.5 * h * x[None, :, None]
    X2 = c2[:, None, None] + 0.5 * h * x[None, None, :]
    X1, X2 = np.broadcast_arrays(X1, X2)
    dens = gue_density(np.stack([X1, X2], axis=-1), sigma2)
    W = np.outer(w, w) * (0.5 * h) ** 2
    mass = (dens * W).sum(axis=(1, 2))
    # the density is symmetric, so the chamber half of a diagonal cell holds half its mass
    return np.where(keys[:, 0] == keys[:, 1], 0.5 * mass, mass)


def exact_vs_gue_tv(profile: Profile, gamma: float, N: int) -> dict:
    lp = limit_params(profile, gamma)
    nu = signature_from_profile(profile, N)
    table = marginal_table(QParams(gamma, N), nu, 2)
    keys, probs = table.as_float_arrays()
    q = gue_cell_masses(keys, N, lp.u, lp.sigma2)
    tv = 0.5 * (np.abs(probs - q).sum() + max(0.0, 1 - q.sum()))
    return {"N": N, "tv": float(tv), "gue_mass_on_cells": float(q.sum()), "cells": len(keys)}


def run_levelK_clt(spec: ExperimentSpec) -> dict:
    """Bottom K rows against the GUE corners process, plus the Gibbs check."""
    K = spec.K
    lp = limit_params(spec.profile, spec.gamma)
    L = K * (K + 1) // 2
    ref = sample_gue_corners_batch(K, lp.sigma2, spec.gue_M, spec.seed + 7919)
    out = {"spec": spec.to_dict(), "limit": asdict(lp), "runs": []}
    names = [f"lambda^{k}_{j}" for k in range(1, K + 1) for j in range(1, k + 1)]
    for N in spec.N_list:
        t0 = time.time()
        data, _ = _bottom_samples(spec, N, K)
        z = (data - lp.u * N) / math.sqrt(N)
        run = {"N": N, "coords": [], "gaps": [], "gibbs": None}
        for c in range(L):
            ks, p = ks_two_sample(z[:, c], ref[:, c])
            m = moment_report(z[:, c], ref[:, c], orders=(1, 2))
            rel = [abs(r.value - r.reference) / abs(r.reference) for r in m]
            run["coords"].append({
                "name": names[c], "ks_vs_gue": ks, "p": p,
                "moments": [asdict(r) for r in m], "relative_error": rel,
                "moments_pass": all(e <= spec.moment_rtol for e in rel),
            })
        off = InterlacingArray.offset
        for k in range(2, K + 1):
            for j in range(1, k):
                # consecutive-level gap lambda^k_j - lambda^{k-1}_j
                a, b = off(k) + j - 1, off(k - 1) + j - 1
                gs, gr = z[:, a] - z[:, b], ref[:, a] - ref[:, b]
                run["gaps"].append({"name": f"{names[a]} - {names[b]}",
                                    "mean": float(gs.mean()), "ref_mean": float(gr.mean()),
                                    "var": float(gs.var()), "ref_var": float(gr.var())})
        if K >= 2:
            run["gibbs"] = gibbs_check(data, K, spec)
        sums = z[:, off(K): off(K) + K].sum(axis=1)
        run["row_sum_mean"] = float(sums.mean())
        run["row_sum_mean_se"] = float(sums.std(ddof=1) / math.sqrt(len(sums)))
        run["seconds"] = time.time() - t0
        out["runs"].append(run)
    if K == 2 and spec.tv_N:
        out["exact_vs_gue"] = exact_vs_gue_tv(spec.profile, spec.gamma, spec.tv_N)
    return out


def gibbs_check(data: np.ndarray, K: int, spec: ExperimentSpec) -> dict:
    """Row K-1 entry 1 given row K, binned by the first interlacing gap.

    Each bin is tested for uniformity of the randomized PIT of
    lambda^{K-1}_1 on [lambda^K_2, lambda^K_1].
    """
    off = InterlacingArray.offset
    top1, top2 = data[:, off(K)], data[:, off(K) + 1]
    low = data[:, off(K - 1)]
    gap = top1 - top2
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed, spawn_key=(99,))))
    pit = randomized_pit_uniform(low, top2, top1, rng)
    qs = np.quantile(gap, np.linspace(0, 1, max(2, len(gap) // (4 * spec.gibbs_min_bin)) + 1))
    edges = np.unique(np.round(qs))
    bins = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (gap >= lo) & ((gap < hi) if hi < edges[-1] else (gap <= hi))
        n = int(sel.sum())
        if n < spec.gibbs_min_bin:
            continue
        ks, p = ks_statistic(pit[sel], sps.uniform.cdf)
        bins.append({"gap_range": [int(lo), int(hi)], "n": n, "ks": ks, "p": p,
                     "pass": ks < spec.gibbs_threshold})
    return {"threshold": spec.gibbs_threshold, "bins": bins,
            "pass": bool(bins) and all(b["pass"] for b in bins)}


# -- reporting ----------------------------------------------------------------------

def _default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, default=_default)


def report_text(report: dict) -> str:
    lines = []
    lim = report.get("limit")
    if lim:
        lines.append(f"gamma={lim['gamma']:g}  u={lim['u']:.6g}  sigma2={lim['sigma2']:.6g}")
    for run in report.get("runs", []):
        if "ks" in run:
            lines.append(f"N={run['N']:5d}  KS={run['ks']:.4f} (threshold {report['threshold']})  "
                         f"exact-table KS={run['exact_table_ks']:.4f}  "
                         f"mean={run['mean']:+.4f}+-{run['mean_se']:.4f}  var={run['var']:.4f}")
        else:
            lines.append(f"N={run['N']}")
            for c in run["coords"]:
                m = c["moments"]
                lines.append(f"  {c['name']:<12} KS-vs-GUE={c['ks_vs_gue']:.4f}  "
                             f"E={m[0]['value']:+.4f} (ref {m[0]['reference']:+.4f})  "
                             f"E2={m[1]['value']:.4f} (ref {m[1]['reference']:.4f})")
            g = run.get("gibbs")
            if g:
                for b in g["bins"]:
                    lines.append(f"  gibbs gap {b['gap_range']}: n={b['n']} KS={b['ks']:.4f} "
                                 f"(threshold {g['threshold']})")
    if "exact_vs_gue" in report:
        e = report["exact_vs_gue"]
        lines.append(f"exact K=2 table at N={e['N']} vs GUE density: TV={e['tv']:.4f}")
    return "\n".join(lines)
