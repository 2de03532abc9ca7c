"""Verification suites: exact oracles and the desk-scale CLT checks.

Each check returns a :class:`Check`; thresholds are printed next to the raw
values so that a failure shows by how much it missed.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .asymptotics import (Profile, action_S, compute_sigma2, compute_u, critical_points, hexagon,
                          large_w_limit, limit_params, linear_profile, reflect,
                          trace_steepest_contour)
from .gue import (det_c, det_c_closed_form, det_g_identity_check, g_functions,
                  g_functions_quadrature)
from .lattice import enumerate_arrays, volume
from .marginal import marginal_table
from .qnum import QParams, hp_context, schur_geometric
from .sampler import SamplerConfig, _enumeration_table, sample

FIXTURES = ((1, 0), (2, 1, 0), (2, 1, 1, 0), (3, 1, 0, 0),
            (4, 2, 1, 0, 0), (3, 3, 1, 0, 0, -1), (2, 2, 1, 1, 0, 0))
SAMPLER_FIXTURES = FIXTURES[:4]
GAMMAS = (0.5, 1.0, 2.0)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _timed(fn):
    def run(*a, **kw):
        t0 = time.time()
        chk = fn(*a, **kw)
        chk.seconds = time.time() - t0
        return chk
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def enumeration_marginals(nu, gamma: float, bits: int = 256) -> dict:
    """Row-K laws for every K by brute force, ``{K: {kappa: mpf}}``."""
    ctx = hp_context(bits)
    N = len(nu)
    lq = ctx.log(QParams(gamma, N).q_hp(ctx))
    out = {K: {} for K in range(1, N)}
    total = ctx.mpf(0)
    for a in enumerate_arrays(nu):
        w = ctx.exp(volume(a) * lq)
        total += w
        for K in range(1, N):
            key = a.row(K).parts
            out[K][key] = out[K].get(key, 0) + w
    return {K: {k: v / total for k, v in d.items()} for K, d in out.items()}


@_timed
def check_exact_marginals(fixtures=FIXTURES, gammas=GAMMAS, rtol=1e-20) -> Check:
    worst, where = 0.0, None
    for nu in fixtures:
        for g in gammas:
            ref = enumeration_marginals(nu, g)
            for K in range(1, len(nu)):
                tab = marginal_table(QParams(g, len(nu)), nu, K).probabilities
                keys = set(ref[K]) | {k for k, v in tab.items() if v != 0}
                for k in keys:
                    r, v = ref[K].get(k, 0), tab.get(k, 0)
                    err = float(abs(v - r) / r) if r else float(abs(v))
                    if err > worst:
                        worst, where = err, (nu, g, K, k)
    return Check("exact marginals vs enumeration", worst <= rtol,
                 f"max relative error {worst:.2e} (threshold {rtol:g}) at {where}",
                 data={"max_relative_error": worst})


@_timed
def check_partition_function(fixtures=FIXTURES, gammas=GAMMAS, rtol=1e-25) -> Check:
    ctx = hp_context(256)
    worst = 0.0
    for nu in fixtures:
        for g in gammas:
            q = QParams(g, len(nu)).q_hp(ctx)
            lq = ctx.log(q)
            z = ctx.fsum(ctx.exp(volume(a) * lq) for a in enumerate_arrays(nu))
            s = schur_geometric(nu, q, ctx)
            worst = max(worst, float(abs(s - z) / z))
    return Check("schur evaluation vs sum of q^vol", worst <= rtol,
                 f"max relative error {worst:.2e} (threshold {rtol:g})",
                 data={"max_relative_error": worst})


@_timed
def check_samplers(fixtures=SAMPLER_FIXTURES, gammas=GAMMAS, M=100_000, seed=0,
                   p_min=1e-3) -> Check:
    from .stats import chi_square_arrays
    rows, worst = [], 1.0
    for nu in fixtures:
        for g in gammas:
            arrays, cdf = _enumeration_table(tuple(nu), g, len(nu))
            probs = np.diff(np.concatenate([[0.0], cdf]))
            for method in ("sequential", "glauber"):
                s = sample(SamplerConfig(QParams(g, len(nu)), nu, method=method, seed=seed), M)
                stat, dof, p = chi_square_arrays(s, arrays, probs)
                rows.append({"nu": nu, "gamma": g, "method": method, "chi2": stat, "dof": dof, "p": p})
                worst = min(worst, p)
    return Check("sampler chi-square vs enumeration", worst > p_min,
                 f"min p-value {worst:.3g} over {len(rows)} runs, M = {M} (threshold {p_min:g})",
                 data={"runs": rows})


@_timed
def check_det_c(Ks=range(1, 9), gammas=GAMMAS, rtol=1e-10) -> Check:
    worst = 0.0
    for K in Ks:
        for g in gammas:
            a, b = det_c(K, g), det_c_closed_form(K, g)
            worst = max(worst, abs(a - b) / abs(b))
    return Check("det c = (1 - e^gamma)^{K(K-1)/2}", worst <= rtol,
                 f"max relative error {worst:.2e} for K <= {max(Ks)} (threshold {rtol:g})")


@_timed
def check_g_functions(gammas=GAMMAS, profile=None, atol=1e-8) -> Check:
    profile = profile or hexagon()
    worst, det_ok = 0.0, True
    rng = np.random.default_rng(11)
    for g in gammas:
        lp = limit_params(profile, g)
        sd = math.sqrt(lp.sigma2)
        xi = np.linspace(-3 * sd, 3 * sd, 20)
        for l in range(5):
            a = g_functions(l, xi, lp.sigma2, g)
            b = g_functions_quadrature(l, xi, lp.s2_at_0, g)
            worst = max(worst, float(np.abs(a - b).max()))
        for K in range(1, 5):
            for _ in range(5):
                det_ok &= det_g_identity_check(K, rng.normal(0, sd, K), lp.sigma2, g)
    return Check("G_l recurrence vs quadrature; det G identity", worst <= atol and det_ok,
                 f"max abs error {worst:.2e} (threshold {atol:g}); det identity "
                 f"{'holds' if det_ok else 'fails'} for K <= 4")


def random_profile(rng) -> Profile:
    m = int(rng.integers(2, 7))
    s = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, m - 1)), [1.0]])
    a = np.concatenate([np.sort(rng.uniform(0, 3, m - 1))[::-1], [0.0]])
    return Profile.piecewise(s, a)


@_timed
def check_action_structure(n=100, seed=0, s0_tol=1e-10, inf_tol=1e-6) -> Check:
    rng = np.random.default_rng(seed)
    fails, worst_s0, worst_inf = [], 0.0, 0.0
    for i in range(n):
        pr = random_profile(rng)
        g = float(math.exp(rng.uniform(math.log(0.25), math.log(4))))
        try:
            lp = limit_params(pr, g)
            e0 = abs(action_S(0, pr, lp).S - g * (lp.u - 0.5))
            worst_s0 = max(worst_s0, e0)
            ok = e0 <= s0_tol and lp.s2_at_0 > 0
            critical_points(pr, lp)              # raises unless real and in the segment
            tr = trace_steepest_contour(pr, lp)
            ok &= math.exp(-g) < tr.crossing < 1
            lim, vals = large_w_limit(pr, lp)
            e_inf = float(np.abs(vals - lim).max())
            worst_inf = max(worst_inf, e_inf)
            ok &= e_inf <= inf_tol
        except Exception as exc:                 # reported, never swallowed silently
            ok = False
            fails.append({"profile": pr.to_dict(), "gamma": g, "error": repr(exc)})
            continue
        if not ok:
            fails.append({"profile": pr.to_dict(), "gamma": g})
    return Check("action structure on random profiles", not fails,
                 f"{n - len(fails)}/{n} profiles pass; max |S(0) - gamma(u - 1/2)| = {worst_s0:.1e} "
                 f"(threshold {s0_tol:g}), max large-|w| error {worst_inf:.1e} (threshold {inf_tol:g})",
                 data={"failures": fails})


@_timed
def check_uniform_and_reflection(rtol=1e-3, refl_tol=1e-10) -> Check:
    g = 1e-4
    rows = []
    for name, pr, target in (("hexagon", hexagon(), (0.5, 0.5)), ("1-s", linear_profile(), (0.5, 0.25))):
        u = compute_u(pr, g)
        s2 = compute_sigma2(pr, g, u)[0]
        rows.append((name, u, s2, abs(u - target[0]) / target[0], abs(s2 - target[1]) / target[1]))
    worst = max(max(r[3], r[4]) for r in rows)
    rw = 0.0
    for pr in (hexagon(), hexagon(2.0, 0.3), linear_profile()):
        for gg in GAMMAS:
            r = reflect(pr, gg)
            rw = max(rw, r.u_residual, r.sigma2_residual)
    ok = worst <= rtol and rw <= refl_tol
    detail = "; ".join(f"{n}: u={u:.7f} sigma2={s:.7f}" for n, u, s, _, _ in rows)
    return Check("small-gamma limits and reflection", ok,
                 f"{detail}; max relative miss {worst:.1e} (threshold {rtol:g}); "
                 f"reflection residual {rw:.1e} (threshold {refl_tol:g})")


@_timed
def check_large_gamma(gamma=30.0) -> Check:
    h = limit_params(hexagon(), gamma)
    f2 = limit_params(linear_profile(), gamma)
    e = math.exp(gamma / 2)
    vals = {"hexagon u*g*e^(g/2)": h.u * gamma * e, "hexagon sigma2*g*e^(g/2)": h.sigma2 * gamma * e,
            "1-s u*g/log2": f2.u * gamma / math.log(2), "1-s sigma2*g*2": f2.sigma2 * gamma * 2}
    tol = [0.25, 0.25, 0.05, 0.05]
    ok = all(abs(v - 1) < t for v, t in zip(vals.values(), tol))
    return Check("large-gamma rates", ok,
                 ", ".join(f"{k} = {v:.6f}" for k, v in vals.items()) + " (tolerances 25%, 25%, 5%, 5%)")


def clt_checks(seed=0, N=200, M=10_000, gue_M=100_000, tv_N=60, gamma=1.0) -> list[Check]:
    """Level-one KS, level-two moments, exact-table TV and the Gibbs check."""
    from .stats import ExperimentSpec, exact_vs_gue_tv, run_level1_clt, run_levelK_clt
    t0 = time.time()
    prof = hexagon()
    r1 = run_level1_clt(ExperimentSpec(prof, gamma, [N], K=1, M=M, seed=seed))
    run = r1["runs"][0]
    c1 = Check("level-1 CLT", run["ks"] < 0.05,
               f"N={N}, M={M}: KS {run['ks']:.4f} (threshold 0.05); exact table KS "
               f"{run['exact_table_ks']:.4f}; sampler vs exact {run['sample_vs_exact_ks']:.4f} "
               f"(bound {run['sample_vs_exact_bound']:.4f})", time.time() - t0, data=run)
    t0 = time.time()
    rK = run_levelK_clt(ExperimentSpec(prof, gamma, [N], K=2, M=M, seed=seed, gue_M=gue_M, tv_N=None))
    runK = rK["runs"][0]
    coords = [c for c in runK["coords"] if c["name"].startswith("lambda^2")]
    worst = max(max(c["relative_error"]) for c in coords)
    rel = ", ".join(f"{c['name']}: E {c['relative_error'][0]:.3f}, E2 {c['relative_error'][1]:.3f}"
                    for c in coords)
    c2 = Check("level-2 moments vs GUE_2", worst <= 0.10,
               f"N={N}, M={M}, reference M={gue_M}: relative errors {rel} (threshold 0.10)",
               time.time() - t0, data=runK)
    t0 = time.time()
    tv = exact_vs_gue_tv(prof, gamma, tv_N)
    c3 = Check("exact K=2 table vs GUE_2 density", tv["tv"] < 0.1,
               f"N={tv_N}: total variation {tv['tv']:.4f} (threshold 0.1)", time.time() - t0, data=tv)
    gib = runK["gibbs"]
    ks = [b["ks"] for b in gib["bins"]]
    c4 = Check("Gibbs uniformity of row 1 given row 2", gib["pass"],
               f"N={N}: {len(ks)} gap bins with >= 500 samples, max KS {max(ks):.4f} "
               f"(threshold {gib['threshold']})", 0.0, data=gib)
    return [c1, c2, c3, c4]


def monotonicity_check(seeds=range(5), N_list=(50, 100, 200, 400), M=10_000) -> Check:
    """Level-one KS non-increasing in N on average, allowing one inversion."""
    from .stats import ExperimentSpec, run_level1_clt
    t0 = time.time()
    ks = np.array([[r["ks"] for r in run_level1_clt(
        ExperimentSpec(hexagon(), 1.0, list(N_list), M=M, seed=s))["runs"]] for s in seeds])
    mean = ks.mean(axis=0)
    inversions = int((np.diff(mean) > 0).sum())
    return Check("level-1 KS decreasing in N", inversions <= 1,
                 f"mean KS over {len(list(seeds))} seeds: " +
                 ", ".join(f"N={n}: {v:.4f}" for n, v in zip(N_list, mean)) +
                 f"; {inversions} inversions (allowed 1)", time.time() - t0)


EXACT_CHECKS = (check_exact_marginals, check_partition_function, check_samplers, check_det_c,
                check_g_functions, check_action_structure, check_uniform_and_reflection,
                check_large_gamma)


def run_suite(suite: str, budget: str = "small", seed: int = 0) -> dict:
    checks: list[Check] = []
    if suite == "exact":
        for fn in EXACT_CHECKS:
            if fn is check_samplers:
                checks.append(fn(M=100_000 if budget == "full" else 20_000, seed=seed))
            else:
                checks.append(fn())
    elif suite == "clt":
        checks.extend(clt_checks(seed=seed))
        if budget == "full":
            checks.append(monotonicity_check())
    else:
        raise ValueError(f"unknown suite {suite!r}")
    return {"suite": suite, "budget": budget, "seed": seed,
            "passed": all(c.passed for c in checks), "checks": [c.as_dict() for c in checks]}
