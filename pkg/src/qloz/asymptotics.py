"""Limit parameters, the action S(w), its critical points and descent contour.

With principal logarithms the action reads

    S(w) = gamma (u - 1/2) + int_0^1 Log(1 - w e^{gamma s}) ds
                           - int_0^1 Log(1 - w e^{gamma (u + s - f(s))}) ds,

which is analytic off the real segment [e^{-gamma(u+1)}, e^{-gamma(u-f(0))}].
For piecewise-constant profiles each integral is a difference of dilogarithms.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import integrate, special


class ProfileError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


class BranchCutError(ValueError):
    """w lies on the real segment where the logarithms cross their cuts."""


class CriticalPointError(ArithmeticError):
    pass


class ContourError(RuntimeError):
    pass


# -- profiles -------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """Weakly decreasing limit shape on [0, 1] with f(1) = 0.

    ``kind="piecewise"``: breakpoints ``s`` (0 = s_0 < ... < s_m = 1) and values
    ``alpha`` (alpha_1 > ... > alpha_m = 0), f = alpha_j on (s_{j-1}, s_j].
    ``kind="sampled"``: a grid ``x`` with values ``fx``, linearly interpolated.
    """

    kind: str
    s: tuple = ()
    alpha: tuple = ()
    x: tuple = ()
    fx: tuple = ()
    allow_constant: bool = False

    def __post_init__(self):
        if self.kind == "piecewise":
            s = tuple(float(v) for v in self.s)
            a = tuple(float(v) for v in self.alpha)
            object.__setattr__(self, "s", s)
            object.__setattr__(self, "alpha", a)
            if len(s) != len(a) + 1 or len(a) < 1:
                raise ProfileError("need m values and m + 1 breakpoints")
            if s[0] != 0.0 or s[-1] != 1.0 or any(s[i] >= s[i + 1] for i in range(len(a))):
                raise ProfileError(f"breakpoints must rise strictly from 0 to 1, got {s}")
            if any(a[i] <= a[i + 1] for i in range(len(a) - 1)):
                raise ProfileError(f"values must be strictly decreasing, got {a}")
            if a[-1] != 0.0:
                raise ProfileError("the profile must vanish at 1 (shift the signature first)")
            if len(a) == 1 and not self.allow_constant:
                raise ProfileError("profile is constant")
        elif self.kind == "sampled":
            x = tuple(float(v) for v in self.x)
            fx = tuple(float(v) for v in self.fx)
            object.__setattr__(self, "x", x)
            object.__setattr__(self, "fx", fx)
            if len(x) != len(fx) or len(x) < 2:
                raise ProfileError("sampled profile needs at least two grid points")
            if x[0] != 0.0 or x[-1] != 1.0 or any(x[i] >= x[i + 1] for i in range(len(x) - 1)):
                raise ProfileError("grid must rise strictly from 0 to 1")
            if any(fx[i] < fx[i + 1] for i in range(len(fx) - 1)):
                raise ProfileError("sampled profile is not weakly decreasing")
            if fx[-1] != 0.0:
                raise ProfileError("the profile must vanish at 1 (shift the signature first)")
            if fx[0] == fx[-1] and not self.allow_constant:
                raise ProfileError("profile is constant")
        else:
            raise ProfileError(f"unknown profile kind {self.kind!r}")

    @classmethod
    def piecewise(cls, s, alpha, **kw) -> "Profile":
        return cls("piecewise", s=tuple(s), alpha=tuple(alpha), **kw)

    @classmethod
    def sampled(cls, x, fx, **kw) -> "Profile":
        return cls("sampled", x=tuple(x), fx=tuple(fx), **kw)

    @property
    def m(self) -> int:
        return len(self.alpha) if self.kind == "piecewise" else len(self.x) - 1

    @property
    def f0(self) -> float:
        return self.alpha[0] if self.kind == "piecewise" else self.fx[0]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "piecewise":
            idx = np.clip(np.searchsorted(np.asarray(self.s), t, side="left") - 1, 0, self.m - 1)
            out = np.asarray(self.alpha)[idx]
        else:
            out = np.interp(t, self.x, self.fx)
        return out if out.ndim else float(out)

    def breakpoints(self) -> list[float]:
        pts = self.s if self.kind == "piecewise" else self.x
        return list(pts[1:-1])

    def to_dict(self) -> dict:
        if self.kind == "piecewise":
            return {"kind": "piecewise", "s": list(self.s), "alpha": list(self.alpha)}
        return {"kind": "sampled", "grid": [[a, b] for a, b in zip(self.x, self.fx)]}

    @classmethod
    def from_dict(cls, d: dict) -> "Profile":
        if d.get("kind") == "piecewise":
            return cls.piecewise(d["s"], d["alpha"])
        if d.get("kind") == "sampled":
            grid = d["grid"]
            return cls.sampled([g[0] for g in grid], [g[1] for g in grid])
        raise ProfileError(f"unknown profile kind {d.get('kind')!r}")


def hexagon(a: float = 1.0, b: float = 0.5) -> Profile:
    """f = a on (0, b], 0 after: the top row of an a x b x (1-b) hexagon."""
    return Profile.piecewise((0.0, b, 1.0), (a, 0.0))


def linear_profile() -> Profile:
    """f(s) = 1 - s."""
    return Profile.sampled((0.0, 1.0), (1.0, 0.0))


def staircase(m: int) -> Profile:
    """Piecewise approximant of 1 - s with m equal steps."""
    return Profile.piecewise([j / m for j in range(m + 1)], [1 - j / m for j in range(1, m + 1)])


def load_profile(path) -> Profile:
    with open(path) as fh:
        return Profile.from_dict(json.load(fh))


def save_profile(profile: Profile, path) -> None:
    with open(path, "w") as fh:
        json.dump(profile.to_dict(), fh, indent=2)


def _quad(fn, profile: Profile, tol: float = 1e-13):
    pts = profile.breakpoints()
    limit = max(100, 4 * len(pts) + 50)
    with warnings.catch_warnings():
        # convergence is judged below from the returned error estimate
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(fn, 0.0, 1.0, points=pts or None, limit=limit,
                                  epsabs=0.0, epsrel=tol)
    if not np.isfinite(val) or err > 1e-8 * max(abs(val), 1e-300) + 1e-14:
        raise QuadratureError(f"quadrature did not converge (value {val}, error {err})")
    return val


# -- limit parameters -------------------------------------------------------------

@dataclass(frozen=True)
class LimitParams:
    gamma: float
    u: float
    sigma2: float
    s2_at_0: float


def compute_u(profile: Profile, gamma: float) -> float:
    """``(1/gamma) log( int e^{gamma s} / int e^{gamma (s - f)} )``; gamma may be negative."""
    if gamma == 0:
        raise ValueError("gamma must be nonzero; use gamma_zero_limits")
    if profile.kind == "piecewise":
        mp = mpmath.MPContext()
        mp.prec = 200
        g = mp.mpf(gamma)
        den = mp.fsum(mp.exp(-g * a) * (mp.exp(g * profile.s[j + 1]) - mp.exp(g * profile.s[j]))
                      for j, a in enumerate(profile.alpha))
        return float(mp.log(mp.expm1(g) / den) / g)
    base = math.expm1(gamma) / gamma
    # int e^{gamma s}(e^{-gamma f} - 1), so small gamma keeps its digits
    delta = _quad(lambda t: math.exp(gamma * t) * math.expm1(-gamma * profile(t)), profile)
    return -math.log1p(delta / base) / gamma


def compute_sigma2(profile: Profile, gamma: float, u: float | None = None):
    """``(sigma2, S''(0))`` with ``S''(0) = int e^{2 gamma s} expm1(2 gamma (u - f))``."""
    if u is None:
        u = compute_u(profile, gamma)
    if profile.kind == "piecewise":
        mp = mpmath.MPContext()
        mp.prec = 200
        g, uu = mp.mpf(gamma), mp.mpf(u)
        s2 = mp.fsum(mp.expm1(2 * g * (uu - a)) * (mp.exp(2 * g * profile.s[j + 1])
                                                    - mp.exp(2 * g * profile.s[j])) / (2 * g)
                     for j, a in enumerate(profile.alpha))
        s2 = float(s2)
    else:
        s2 = _quad(lambda t: math.exp(2 * gamma * t) * math.expm1(2 * gamma * (u - profile(t))),
                   profile)
    if not s2 > 0:
        raise ArithmeticError(f"S''(0) = {s2} is not positive for gamma = {gamma}")
    return s2 / math.expm1(gamma) ** 2, s2


def limit_params(profile: Profile, gamma: float) -> LimitParams:
    u = compute_u(profile, gamma)
    sigma2, s2 = compute_sigma2(profile, gamma, u)
    return LimitParams(gamma, u, sigma2, s2)


def gamma_zero_limits(profile: Profile) -> tuple[float, float]:
    """``u0 = int f`` and ``sigma0^2 = int f^2 - (int f)^2 + int (1 - 2s) f``."""
    i1 = _quad(lambda t: profile(t), profile)
    i2 = _quad(lambda t: profile(t) ** 2, profile)
    i3 = _quad(lambda t: (1 - 2 * t) * profile(t), profile)
    return i1, i2 - i1 * i1 + i3


def reflected_profile(profile: Profile) -> Profile:
    """``f(0) - f(1 - s)``."""
    f0 = profile.f0
    if profile.kind == "piecewise":
        s = [1 - v for v in reversed(profile.s)]
        s[0], s[-1] = 0.0, 1.0
        return Profile.piecewise(s, [f0 - a for a in reversed(profile.alpha)],
                                 allow_constant=profile.allow_constant)
    x = [1 - v for v in reversed(profile.x)]
    x[0], x[-1] = 0.0, 1.0
    return Profile.sampled(x, [f0 - v for v in reversed(profile.fx)],
                           allow_constant=profile.allow_constant)


@dataclass
class Reflection:
    profile: Profile
    gamma: float
    params: LimitParams
    u_residual: float
    sigma2_residual: float


def reflect(profile: Profile, gamma: float) -> Reflection:
    """Reflected profile at ``-gamma``; residuals of ``u^ = f(0) - u`` and ``sigma^2 = sigma2``."""
    hat = reflected_profile(profile)
    p = limit_params(profile, gamma)
    uh = compute_u(hat, -gamma)
    s2h = compute_sigma2(hat, -gamma, uh)
    sh = s2h[0]
    mapped = LimitParams(-gamma, profile.f0 - p.u, p.sigma2, s2h[1])
    return Reflection(hat, -gamma, mapped, abs(uh - (profile.f0 - p.u)), abs(sh - p.sigma2))


# -- the action -------------------------------------------------------------------

@dataclass
class ActionEvaluation:
    w: complex
    S: complex
    Sprime: complex
    branch_cut: bool = False


def singular_segment(profile: Profile, params: LimitParams) -> tuple[float, float]:
    g, u = params.gamma, params.u
    return math.exp(-g * (u + 1)), math.exp(-g * (u - profile.f0))


def _li2(z):
    return special.spence(1 - np.asarray(z, dtype=complex))


def _normalize(w):
    w = np.asarray(w, dtype=complex)
    # -0.0 imaginary parts would select the lower side of the cuts
    return np.where(w.imag == 0, w.real + 0j, w)


def _on_segment(w, seg, tol=0.0):
    w = np.asarray(w, dtype=complex)
    return (np.abs(w.imag) <= tol) & (w.real >= seg[0] - tol) & (w.real <= seg[1] + tol)


def _piece_constants(profile: Profile, params: LimitParams):
    g, u = params.gamma, params.u
    a = np.exp(g * (u - np.asarray(profile.alpha) + np.asarray(profile.s[:-1])))
    b = np.exp(g * (u - np.asarray(profile.alpha) + np.asarray(profile.s[1:])))
    return a, b


def _S_piecewise(w, profile, params):
    g = params.gamma
    a, b = _piece_constants(profile, params)
    w = np.asarray(w, dtype=complex)
    out = g * (params.u - 0.5) - (_li2(w * math.exp(g)) - _li2(w)) / g
    for aj, bj in zip(a, b):
        out = out + (_li2(w * bj) - _li2(w * aj)) / g
    return out


def _Sprime_piecewise(w, profile, params):
    g = params.gamma
    a, b = _piece_constants(profile, params)
    w = np.asarray(w, dtype=complex)
    small = np.abs(w) < 1e-6
    ws = np.where(small, 0.5j, w)   # placeholder, overwritten by the series below
    num = np.log(1 - ws * math.exp(g)) - np.log(1 - ws)
    for aj, bj in zip(a, b):
        num = num + np.log(1 - ws * aj) - np.log(1 - ws * bj)
    out = num / (g * ws)
    if small.any():
        # series: S'(w) = S'(0) + w S''(0) + O(w^2) with S'(0) = 0 at the computed u
        out = np.where(small, w * params.s2_at_0, out)
    return out


def _S_quad(w: complex, profile, params):
    g, u = params.gamma, params.u
    f1 = lambda t: np.log(1 - w * np.exp(g * t))
    f2 = lambda t: np.log(1 - w * np.exp(g * (u + t - profile(t))))
    re = _quad(lambda t: (f1(t) - f2(t)).real, profile, 1e-12)
    im = _quad(lambda t: (f1(t) - f2(t)).imag, profile, 1e-12)
    return g * (u - 0.5) + re + 1j * im


def _Sprime_quad(w: complex, profile, params):
    g, u = params.gamma, params.u

    def h(t):
        e1 = np.exp(g * t)
        e2 = np.exp(g * (u + t - profile(t)))
        return -e1 / (1 - w * e1) + e2 / (1 - w * e2)

    re = _quad(lambda t: h(t).real, profile, 1e-12)
    im = _quad(lambda t: h(t).imag, profile, 1e-12)
    return re + 1j * im


def action_S(w, profile: Profile, params: LimitParams, method: str | None = None):
    """S(w) and S'(w); raises :class:`BranchCutError` on the singular segment."""
    scalar = np.ndim(w) == 0
    w = _normalize(w)
    seg = singular_segment(profile, params)
    if _on_segment(w, seg).any():
        raise BranchCutError(f"w on the singular segment [{seg[0]:.6g}, {seg[1]:.6g}]")
    method = method or ("dilog" if profile.kind == "piecewise" else "quad")
    if method == "dilog":
        S = _S_piecewise(w, profile, params)
        Sp = _Sprime_piecewise(w, profile, params)
    else:
        flat = w.ravel()
        S = np.array([_S_quad(v, profile, params) for v in flat]).reshape(w.shape)
        Sp = np.array([_Sprime_quad(v, profile, params) for v in flat]).reshape(w.shape)
    cut = (w.imag == 0) & (w.real > seg[1])
    if scalar:
        return ActionEvaluation(complex(w), complex(S), complex(Sp), bool(cut))
    return S, Sp


def action_Sprime(w, profile: Profile, params: LimitParams):
    """Closed-form S'_m(w) for piecewise profiles; quadrature otherwise."""
    w = _normalize(w)
    seg = singular_segment(profile, params)
    if _on_segment(w, seg).any():
        raise BranchCutError(f"w on the singular segment [{seg[0]:.6g}, {seg[1]:.6g}]")
    if profile.kind == "piecewise":
        out = _Sprime_piecewise(w, profile, params)
    else:
        out = np.array([_Sprime_quad(v, profile, params) for v in w.ravel()]).reshape(w.shape)
    return complex(out) if out.ndim == 0 else out


def large_w_limit(profile: Profile, params: LimitParams, radius: float = 1e6,
                  angles: int = 8) -> tuple[float, np.ndarray]:
    """``gamma int (f - s)`` and Re S on a circle of radius ``radius``.

    The correction decays like ``(e^{gamma (f(0) - u)} / |w|)^2``, so the radius is
    scaled up by that factor when it exceeds one.
    """
    g = params.gamma
    expected = g * (_quad(lambda t: profile(t), profile) - 0.5)
    r = radius * max(1.0, math.exp(g * (profile.f0 - params.u)), math.exp(g))
    th = (np.arange(angles) + 0.5) * 2 * math.pi / angles
    w = r * np.exp(1j * th)
    vals = np.array([action_S(v, profile, params).S.real for v in w])
    return expected, vals


# -- critical points ----------------------------------------------------------------

@dataclass
class CriticalPoints:
    roots: list[float]
    polynomial: np.ndarray      # coefficients of N_m - D_m, lowest degree first
    leading_ratio: float
    segment: tuple[float, float]


def critical_polynomials(profile: Profile, params: LimitParams):
    """Coefficients (lowest first) of N_m(w) and D_m(w)."""
    P = np.polynomial.polynomial
    a, b = _piece_constants(profile, params)
    Nm = np.array([1.0, -math.exp(params.gamma)])
    Dm = np.array([1.0, -1.0])
    for aj, bj in zip(a, b):
        Nm = P.polymul(Nm, [1.0, -aj])
        Dm = P.polymul(Dm, [1.0, -bj])
    return Nm, Dm


def critical_points(profile: Profile, params: LimitParams, tol: float = 1e-12) -> CriticalPoints:
    """Nonzero real roots of N_m - D_m, certified against the theoretical segment."""
    if profile.kind != "piecewise":
        raise ProfileError("critical points are computed for piecewise profiles")
    Nm, Dm = critical_polynomials(profile, params)
    ratio = Nm[-1] / Dm[-1]
    diff = Nm - Dm
    scale = np.abs(np.concatenate([Nm, Dm])).max()
    if abs(diff[0]) > tol * scale or abs(diff[1]) > tol * scale:
        raise CriticalPointError(f"w = 0 is not a double root: coefficients {diff[0]:.3e}, "
                                 f"{diff[1]:.3e} (scale {scale:.3e})")
    red = diff[2:].copy()
    # the leading terms cancel exactly; drop what is left of them
    while len(red) and abs(red[-1]) <= tol * scale:
        red = red[:-1]
    seg = singular_segment(profile, params)
    roots: list[float] = []
    if len(red) > 1:
        raw = np.polynomial.polynomial.polyroots(red)
        big = max(1.0, np.abs(raw).max())
        for r in raw:
            if abs(r.imag) > 1e-6 * big:
                raise CriticalPointError(f"complex critical point {r}")
        for r in sorted(raw.real):
            roots.append(_polish(red, r, seg))
    for r in roots:
        lo, hi = seg
        if not (lo * (1 - 1e-9) <= r <= hi * (1 + 1e-9)):
            raise CriticalPointError(f"critical point {r} outside [{lo:.6g}, {hi:.6g}]")
    return CriticalPoints(roots, diff, float(ratio), seg)


def _polish(coef, r: float, seg) -> float:
    P = np.polynomial.polynomial
    d = 1e-7 * max(abs(r), seg[0])
    lo, hi = r - d, r + d
    flo, fhi = P.polyval(lo, coef), P.polyval(hi, coef)
    if flo == 0:
        return lo
    if fhi == 0 or flo * fhi > 0:
        return float(r)      # no sign change at this scale (even multiplicity)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        fm = P.polyval(mid, coef)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- steepest descent contour -------------------------------------------------------

@dataclass
class ContourTrace:
    points: np.ndarray            # complex, from 0 to the real-axis crossing
    S: np.ndarray
    crossing: float
    S0: float
    max_ReS_off_origin: float
    notes: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["re_w", "im_w", "re_S", "im_S"])
            for z, s in zip(self.points, self.S):
                w.writerow([repr(float(z.real)), repr(float(z.imag)),
                            repr(float(s.real)), repr(float(s.imag))])


def read_contour_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data


def trace_steepest_contour(profile: Profile, params: LimitParams, h_min: float | None = None,
                           h_max: float = 0.05, radius: float = 1e4, max_steps: int = 200_000,
                           corrector_tol: float = 1e-12) -> ContourTrace:
    """Follow Im S = 0 upward from w = 0 until it returns to the real axis.

    Predictor: a step of arc length h along the descent direction conj(S')/|S'|;
    corrector: Newton on Im S along its gradient.  The step adapts to the
    distance from the singular segment, never below ``h_min``.
    """
    if not params.s2_at_0 > 0:
        raise ContourError("S''(0) must be positive to launch the trace")
    seg = singular_segment(profile, params)
    if h_min is None:
        h_min = 1e-2 * math.exp(-params.gamma * (params.u + 1))
    S0 = params.gamma * (params.u - 0.5)

    def S_and_dS(z):
        ev = action_S(z, profile, params)
        return ev.S, ev.Sprime

    def correct(z):
        for _ in range(30):
            s, sp = S_and_dS(z)
            if abs(s.imag) <= corrector_tol * max(1.0, abs(s)):
                return z, s, sp
            g = sp.imag + 1j * sp.real
            z = z - s.imag * g / abs(sp) ** 2
        return z, s, sp

    def dist(z):
        x = min(max(z.real, seg[0]), seg[1])
        return min(abs(z - x), abs(z))

    z = 1j * h_min
    z, s, sp = correct(z)
    pts, vals = [0j, z], [complex(S0), s]
    for _ in range(max_steps):
        h = min(h_max, max(h_min, 0.1 * dist(z)))
        direction = -np.conj(sp) / abs(sp)
        trial = z + h * direction
        if trial.imag > 0:
            znew, snew, spnew = correct(trial)
            if abs(znew - z) < 0.1 * h and znew.imag > 1e-3 * h_min:
                raise ContourError(f"trace stalled at w = {znew}")
        # landing (or being projected) onto the real axis ends the trace; the
        # level set can contain a piece of the axis, where the corrector would
        # otherwise park the point just above it
        if trial.imag <= 0 or znew.imag <= 1e-3 * h_min:
            end = trial if trial.imag <= 0 else complex(znew.real, 0.0)
            # interpolate the crossing of the real axis
            t = z.imag / (z.imag - end.imag)
            crossing = float(z.real + t * (end.real - z.real))
            pts.append(complex(crossing, 0.0))
            vals.append(vals[-1].real + 0j)
            pts_arr, vals_arr = np.array(pts), np.array(vals)
            max_off = float(vals_arr.real[1:].max() - S0)
            notes = []
            d = np.diff(vals_arr.real[1:-1])
            if (d > 1e-9).any():
                notes.append(f"Re S rose by up to {d.max():.3e} between steps")
            return ContourTrace(pts_arr, vals_arr, crossing, S0, max_off, notes)
        z, s, sp = znew, snew, spnew
        if abs(z) > radius:
            raise ContourError(f"trace escaped beyond |w| = {radius}")
        pts.append(z)
        vals.append(s)
    raise ContourError(f"trace did not return to the real axis in {max_steps} steps")


def grid_real_part(profile: Profile, params: LimitParams, re_range, im_range, n: int = 200):
    """Re S(w) - S(0) on a grid (NaN on the singular segment), for plots."""
    xs = np.linspace(*re_range, n)
    ys = np.linspace(*im_range, n)
    X, Y = np.meshgrid(xs, ys)
    W = X + 1j * Y
    seg = singular_segment(profile, params)
    bad = _on_segment(W, seg, tol=1e-12)
    W = np.where(bad, 1j, W)
    if profile.kind == "piecewise":
        S = _S_piecewise(_normalize(W), profile, params)
    else:
        S = np.array([_S_quad(v, profile, params) for v in W.ravel()]).reshape(W.shape)
    R = S.real - params.gamma * (params.u - 0.5)
    R[bad] = np.nan
    return xs, ys, R
