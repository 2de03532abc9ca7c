"""GUE corners reference: sampling, density and the c / G determinant identities."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from math import comb, factorial

import mpmath
import numpy as np

from .sampler import substream


class EigenSolverError(RuntimeError):
    pass


# -- Jacobi eigensolver -------------------------------------------------------------

def _check_hermitian(H: np.ndarray, tol: float = 1e-12) -> None:
    if H.shape[-1] != H.shape[-2]:
        raise ValueError(f"matrix must be square, got shape {H.shape[-2:]}")
    scale = np.abs(H).max() if H.size else 0.0
    if np.abs(H - np.conj(np.swapaxes(H, -1, -2))).max(initial=0.0) > tol * max(scale, 1.0):
        raise ValueError("matrix is not Hermitian")


def jacobi_eigh(H, tol: float = 1e-15, max_sweeps: int = 60, vectors: bool = True):
    """Batched complex Jacobi diagonalization of Hermitian matrices.

    ``H`` has shape ``(..., K, K)``.  Each sweep rotates every off-diagonal pair
    once in row-cyclic order; one rotation zeroes ``H[p, q]`` with the unitary
    ``[[c, s e^{i phi}], [-s e^{-i phi}, c]]`` where ``phi = arg H[p, q]``.
    Returns eigenvalues in decreasing order (and matching eigenvector columns).
    """
    A = np.array(H, dtype=complex)
    _check_hermitian(A)
    batch = A.shape[:-2]
    K = A.shape[-1]
    A = A.reshape((-1, K, K))
    B = A.shape[0]
    V = np.broadcast_to(np.eye(K, dtype=complex), (B, K, K)).copy()
    norm = np.sqrt((np.abs(A) ** 2).sum(axis=(1, 2)))
    offmask = ~np.eye(K, dtype=bool)
    for sweep in range(max_sweeps):
        off = np.sqrt((np.abs(A[:, offmask]) ** 2).sum(axis=1))
        if (off <= tol * np.maximum(norm, 1e-300)).all():
            break
        for p in range(K - 1):
            for q in range(p + 1, K):
                apq = A[:, p, q]
                mag = np.abs(apq)
                act = mag > 1e-20 * norm
                if not act.any():
                    continue
                phase = np.where(act, apq / np.where(act, mag, 1.0), 1.0)
                app, aqq = A[:, p, p].real, A[:, q, q].real
                tau = np.where(act, (aqq - app) / (2 * np.where(act, mag, 1.0)), 0.0)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1 + tau * tau))
                t = np.where(act, t, 0.0)
                c = 1 / np.sqrt(1 + t * t)
                s = t * c
                # columns p, q of the rotation
                jp_p, jq_p = c, -s * np.conj(phase)
                jp_q, jq_q = s * phase, c
                colp = A[:, :, p] * jp_p[:, None] + A[:, :, q] * jq_p[:, None]
                colq = A[:, :, p] * jp_q[:, None] + A[:, :, q] * jq_q[:, None]
                A[:, :, p], A[:, :, q] = colp, colq
                rowp = np.conj(jp_p)[:, None] * A[:, p, :] + np.conj(jq_p)[:, None] * A[:, q, :]
                rowq = np.conj(jp_q)[:, None] * A[:, p, :] + np.conj(jq_q)[:, None] * A[:, q, :]
                A[:, p, :], A[:, q, :] = rowp, rowq
                A[:, p, q] = 0.0
                A[:, q, p] = 0.0
                if vectors:
                    vp = V[:, :, p] * jp_p[:, None] + V[:, :, q] * jq_p[:, None]
                    vq = V[:, :, p] * jp_q[:, None] + V[:, :, q] * jq_q[:, None]
                    V[:, :, p], V[:, :, q] = vp, vq
    else:
        raise EigenSolverError(f"Jacobi did not converge in {max_sweeps} sweeps")
    vals = np.diagonal(A, axis1=1, axis2=2).real
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    if vectors:
        V = np.take_along_axis(V, order[:, None, :], axis=2)
        return vals.reshape(batch + (K,)), V.reshape(batch + (K, K))
    return vals.reshape(batch + (K,))


def hermitian_eigenvalues(H) -> np.ndarray:
    """Eigenvalues of one Hermitian matrix, sorted decreasing."""
    H = np.asarray(H)
    if H.ndim != 2:
        raise ValueError("expected a single K x K matrix")
    return jacobi_eigh(H, vectors=False)


# -- sampling ----------------------------------------------------------------------

def gue_matrices(K: int, sigma2: float, M: int, rng: np.random.Generator) -> np.ndarray:
    """``M`` GUE(sigma2) matrices: Re H_ij ~ N(0, (1 + [i=j]) sigma2 / 2), Im H_ij ~ N(0, sigma2/2)."""
    # standard_normal is prefix-stable, so matrix i does not depend on M
    z = rng.standard_normal((M, 2, K, K))
    sd = math.sqrt(sigma2 / 2)
    iu = np.triu_indices(K, 1)
    H = np.zeros((M, K, K), dtype=complex)
    d = np.arange(K)
    H[:, d, d] = math.sqrt(sigma2) * z[:, 0, d, d]
    up = sd * (z[:, 0][:, iu[0], iu[1]] + 1j * z[:, 1][:, iu[0], iu[1]])
    H[:, iu[0], iu[1]] = up
    H[:, iu[1], iu[0]] = np.conj(up)
    return H


@dataclass
class GUECornersSample:
    K: int
    levels: list[np.ndarray]     # level r has r entries, decreasing

    def to_json(self) -> str:
        return json.dumps({"K": self.K, "levels": [[float(v) for v in lv] for lv in self.levels]})

    def flat(self) -> np.ndarray:
        return np.concatenate(self.levels)


def sample_gue_corners_batch(K: int, sigma2: float, M: int, seed: int, block: int = 4096) -> np.ndarray:
    """``(M, K(K+1)/2)`` array of corner eigenvalues, level by level (rows 1..K)."""
    if K < 1 or not sigma2 > 0:
        raise ValueError("need K >= 1 and sigma2 > 0")
    out = np.empty((M, K * (K + 1) // 2))
    for b in range((M + block - 1) // block):
        n = min(block, M - b * block)
        H = gue_matrices(K, sigma2, n, substream(seed, "gue", b))
        col = 0
        for r in range(1, K + 1):
            if r == 1:
                out[b * block: b * block + n, 0] = H[:, 0, 0].real
            else:
                out[b * block: b * block + n, col:col + r] = jacobi_eigh(H[:, :r, :r], vectors=False)
            col += r
    return out


def sample_gue_corners(K: int, sigma2: float, seed: int, index: int = 0) -> GUECornersSample:
    flat = sample_gue_corners_batch(K, sigma2, index + 1, seed)[index]
    levels, col = [], 0
    for r in range(1, K + 1):
        levels.append(flat[col:col + r])
        col += r
    return GUECornersSample(K, levels)


def write_corners_jsonl(path, batch: np.ndarray, K: int) -> None:
    with open(path, "w") as fh:
        for row in batch:
            levels, col = [], 0
            for r in range(1, K + 1):
                levels.append(row[col:col + r])
                col += r
            fh.write(GUECornersSample(K, levels).to_json() + "\n")


# -- density and identities -----------------------------------------------------------

def gue_density(xi, sigma2: float) -> np.ndarray | float:
    """Eigenvalue density on the chamber xi_1 > ... > xi_K (batched over leading axes)."""
    xi = np.asarray(xi, dtype=float)
    K = xi.shape[-1]
    norm = math.prod(factorial(j) for j in range(K)) * sigma2 ** (K * (K - 1) / 2)
    vdm = np.ones(xi.shape[:-1])
    for i in range(K):
        for j in range(i + 1, K):
            vdm = vdm * (xi[..., i] - xi[..., j]) ** 2
    gauss = np.prod(np.exp(-xi ** 2 / (2 * sigma2)) / math.sqrt(2 * math.pi * sigma2), axis=-1)
    out = vdm * gauss / norm
    return out if out.ndim else float(out)


def c_coefficients(K: int, gamma: float) -> np.ndarray:
    """``c[i-1, l]`` = coefficient of y^l in (1+y)^{i-1} (1 + e^gamma y)^{K-i}."""
    eg = math.exp(gamma)
    c = np.zeros((K, K))
    for i in range(1, K + 1):
        for l in range(K):
            c[i - 1, l] = sum(comb(i - 1, a) * comb(K - i, l - a) * eg ** (l - a)
                              for a in range(max(0, l - (K - i)), min(i - 1, l) + 1))
    return c


def det_c(K: int, gamma: float, dps: int = 50) -> float:
    # entries grow like e^{gamma (K-1)} and the determinant is tiny by comparison
    with mpmath.workdps(dps):
        eg = mpmath.exp(gamma)
        m = mpmath.matrix(K, K)
        for i in range(1, K + 1):
            for l in range(K):
                m[i - 1, l] = mpmath.fsum(comb(i - 1, a) * comb(K - i, l - a) * eg ** (l - a)
                                          for a in range(max(0, l - (K - i)), min(i - 1, l) + 1))
        return float(mpmath.det(m))


def det_c_closed_form(K: int, gamma: float) -> float:
    return (-math.expm1(gamma)) ** (K * (K - 1) // 2)


def g_functions(l: int, xi, sigma2: float, gamma: float) -> np.ndarray:
    """``G_l(xi)`` by the three-term recurrence from the Gaussian ``G_0``."""
    xi = np.asarray(xi, dtype=float)
    c = math.expm1(gamma)
    g_prev = np.zeros_like(xi)
    g = np.exp(-xi ** 2 / (2 * sigma2)) / math.sqrt(2 * math.pi * sigma2)
    for k in range(1, l + 1):
        g, g_prev = xi / (sigma2 * c) * g - (k - 1) / (sigma2 * c * c) * g_prev, g
    return g


def g_functions_quadrature(l: int, xi, s2_at_0: float, gamma: float, panels: int = 64,
                           order: int = 20) -> np.ndarray:
    """The defining integral over |t| <= 12 / sqrt(S''(0)) by Gauss-Legendre panels."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    c = math.expm1(gamma)
    T = 12 / math.sqrt(s2_at_0)
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-T, T, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    phase = np.exp(-1j * np.outer(xi, t) * c - t ** 2 * s2_at_0 / 2) * (1j * t) ** l
    return (c / (2 * math.pi) * (phase * wt).sum(axis=1)).real


def det_g(xi, sigma2: float, gamma: float) -> float:
    xi = np.asarray(xi, dtype=float)
    K = len(xi)
    mat = np.array([g_functions(l, xi, sigma2, gamma) for l in range(K)])
    return float(np.linalg.det(mat))


def det_g_closed_form(xi, sigma2: float, gamma: float) -> float:
    xi = np.asarray(xi, dtype=float)
    K = len(xi)
    c = math.expm1(gamma)
    g0 = np.exp(-xi ** 2 / (2 * sigma2)) / math.sqrt(2 * math.pi * sigma2)
    vdm = math.prod(xi[i] - xi[j] for i in range(K) for j in range(i))
    return float(np.prod(g0) / (sigma2 ** (K * (K - 1) / 2) * c ** (K * (K - 1) / 2)) * vdm)


def det_g_identity_check(K: int, xi, sigma2: float, gamma: float, rtol: float = 1e-8) -> bool:
    xi = np.asarray(xi, dtype=float)
    if len(xi) != K:
        raise ValueError(f"need {K} points")
    lhs, rhs = det_g(xi, sigma2, gamma), det_g_closed_form(xi, sigma2, gamma)
    scale = np.prod(np.exp(-xi ** 2 / (2 * sigma2)) / math.sqrt(2 * math.pi * sigma2))
    scale *= max(1.0, np.abs(xi).max()) ** (K * (K - 1) / 2) / (sigma2 * math.expm1(gamma)) ** (K * (K - 1) / 2)
    return abs(lhs - rhs) <= rtol * max(abs(rhs), 1e-300) + 1e-14 * scale
