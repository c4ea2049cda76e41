"""Self-conformal measures: sampling, Fourier transforms, exponents."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import CostCapExceeded, ValidationError
from .ifs_core import IFS
from .rng import draw_symbols, substream

DEFAULT_LEAF_CAP = 10 ** 7
_INNER_LEAVES = 2 ** 16


@dataclass(frozen=True, eq=False)
class SelfConformalMeasure:
    ifs: IFS
    p: tuple

    @property
    def n(self) -> int:
        return self.ifs.n

    @property
    def p_float(self) -> np.ndarray:
        return np.array([float(a) for a in self.p])

    @property
    def cum_p(self) -> np.ndarray:
        c = np.cumsum(self.p_float)
        c[-1] = 1.0
        return c

    @property
    def exact(self) -> bool:
        return all(isinstance(a, Fraction) for a in self.p)


def self_conformal(ifs: IFS, p: Sequence | None = None) -> SelfConformalMeasure:
    """Measure with weights p (uniform by default, as exact fractions)."""
    if p is None:
        p = [Fraction(1, ifs.n)] * ifs.n
    p = tuple(p)
    if len(p) != ifs.n:
        raise ValidationError(f"p has {len(p)} entries but the IFS has {ifs.n} maps", field="p")
    if any(float(a) <= 0 for a in p):
        raise ValidationError("p must be strictly positive", field="p")
    if all(isinstance(a, (Fraction, int)) for a in p):
        p = tuple(Fraction(a) for a in p)
        if sum(p) != 1:
            raise ValidationError("p must sum to 1", field="p")
    elif abs(math.fsum(float(a) for a in p) - 1.0) > 1e-15 * max(1, len(p)):
        raise ValidationError("p must sum to 1", field="p")
    return SelfConformalMeasure(ifs, p)


@dataclass(frozen=True)
class FourierEstimate:
    q: float
    value: complex
    method: str
    error_bound: float | None = None
    stderr: tuple | None = None
    depth: int = 0

    @property
    def abs(self) -> float:
        return abs(self.value)


def apply_symbols(maps, sym, x):
    """Apply maps[sym[i]] to x[i] elementwise."""
    out = np.empty_like(x)
    for a, m in enumerate(maps):
        idx = sym == a
        if np.any(idx):
            out[idx] = m.value(x[idx])
    return out


def sample_points(nu: SelfConformalMeasure, count: int, depth: int, seed: int,
                  task="sample_points") -> np.ndarray:
    """Points f_w(x0) with |w| = depth and i.i.d. symbols drawn from p."""
    if depth < 1 or count < 1:
        raise ValidationError("count and depth must be >= 1", field="depth")
    rng = substream(seed, task)
    cum = nu.cum_p
    x = np.full(count, nu.ifs.x0)
    for _ in range(depth):
        x = apply_symbols(nu.ifs.maps, draw_symbols(rng, cum, count), x)
    return x


def cylinder_leaves(nu: SelfConformalMeasure, m: int, x0=None):
    """All points f_w(x0), |w| = m, with weights p_w (breadth first)."""
    X = np.array([nu.ifs.x0 if x0 is None else x0], dtype=float)
    W = np.ones(1)
    pf = nu.p_float
    for _ in range(m):
        X = np.concatenate([f.value(X) for f in nu.ifs.maps])
        W = np.concatenate([pa * W for pa in pf])
    return X, W


def leaf_sum(nu: SelfConformalMeasure, m: int, func, cap: float = DEFAULT_LEAF_CAP):
    """Sum over |w| = m of p_w * func(f_w(x0)).

    ``func(X, W)`` receives leaf points and weights and returns weighted sums.
    The outer symbols are enumerated depth first over a vectorized inner block.
    """
    n = nu.n
    if float(n) ** m > cap:
        raise CostCapExceeded(f"{n}^{m} cylinder leaves exceed the cap {cap:.3g}; "
                              "use the Monte Carlo estimator")
    m_in = min(m, max(1, int(math.log(_INNER_LEAVES) / math.log(n))))
    Xin, Win = cylinder_leaves(nu, m_in)
    pf = nu.p_float
    maps = nu.ifs.maps

    def rec(X, weight, level):
        if level == m - m_in:
            return weight * func(X, Win)
        total = 0.0
        for a in range(n):
            total = total + rec(maps[a].value(X), weight * pf[a], level + 1)
        return total

    return rec(Xin, 1.0, 0)


def cylinder_depth(nu: SelfConformalMeasure, q_abs: float, tol: float) -> int:
    if q_abs == 0:
        return 0
    return max(1, math.ceil(math.log(2 * math.pi * q_abs / tol) / math.log(1.0 / nu.ifs.rho)))


def _phase_sums(qs, chunk=4096):
    qs = np.asarray(qs, dtype=float)

    def func(X, W):
        out = np.zeros(qs.shape, dtype=complex)
        for s in range(0, X.size, chunk):
            x = X[s:s + chunk]
            out += np.exp(2j * np.pi * np.outer(qs, x)) @ W[s:s + chunk]
        return out
    return func


def fourier_cylinder(nu: SelfConformalMeasure, q: float, tol: float = 1e-6,
                     cap: float = DEFAULT_LEAF_CAP) -> FourierEstimate:
    """Deterministic estimate of the Fourier transform with error at most tol."""
    if tol <= 0:
        raise ValidationError("tol must be positive", field="tol")
    if q == 0:
        return FourierEstimate(0.0, 1.0 + 0j, "cylinder", error_bound=0.0)
    m = cylinder_depth(nu, abs(q), tol)
    val = leaf_sum(nu, m, _phase_sums([q]), cap)[0]
    bound = 2 * math.pi * abs(q) * nu.ifs.rho ** m * nu.ifs.diam
    return FourierEstimate(float(q), complex(val), "cylinder", error_bound=bound, depth=m)


def fourier_cylinder_many(nu: SelfConformalMeasure, qs, tol: float = 1e-6,
                          cap: float = DEFAULT_LEAF_CAP, q_chunk: int = 64) -> np.ndarray:
    """Vector version; the depth is set by max|q| so every entry meets tol."""
    qs = np.asarray(qs, dtype=float)
    out = np.ones(qs.shape, dtype=complex)
    nz = qs != 0
    if not np.any(nz):
        return out
    m = cylinder_depth(nu, float(np.max(np.abs(qs))), tol)
    flat = qs[nz]
    vals = np.concatenate([leaf_sum(nu, m, _phase_sums(flat[i:i + q_chunk]), cap)
                           for i in range(0, flat.size, q_chunk)])
    out[nz] = vals
    return out


def fourier_mc(nu: SelfConformalMeasure, q: float, n_samples: int, depth: int, seed: int,
               points=None) -> FourierEstimate:
    """Empirical Fourier transform with per-component standard errors."""
    if n_samples < 100:
        raise ValidationError("n_samples must be >= 100", field="n_samples")
    if q == 0:
        return FourierEstimate(0.0, 1.0 + 0j, "mc", stderr=(0.0, 0.0), depth=depth)
    x = points if points is not None else sample_points(nu, n_samples, depth, seed, task="fourier_mc")
    ph = 2 * np.pi * q * x
    c, s = np.cos(ph), np.sin(ph)
    rt = math.sqrt(x.size)
    return FourierEstimate(float(q), complex(c.mean(), s.mean()), "mc",
                           stderr=(float(c.std(ddof=1) / rt), float(s.std(ddof=1) / rt)),
                           depth=depth)


# ---------------------------------------------------------------------------
# exponents

@dataclass(frozen=True)
class DecayFit:
    alpha: float
    intercept: float
    residual: float
    edges: np.ndarray
    centers: np.ndarray
    sups: np.ndarray
    argmax_q: np.ndarray
    samples_per_block: np.ndarray


def block_samples(lo: float, hi: float, diam: float = 1.0, n_min: int = 64) -> np.ndarray:
    """Frequency grid for one block [lo, hi).

    The spacing 1/k with k = ceil(4 diam) resolves peaks of |F_q|, whose width
    in q is about 1/diam, and always contains the integers. Short blocks are
    refined by halving until they hold at least n_min points.
    """
    h = 1.0 / max(1, math.ceil(4 * diam))
    while True:
        g = np.arange(math.ceil(lo / h - 1e-9), math.ceil(hi / h - 1e-9)) * h
        if g.size >= n_min:
            return g
        h /= 2


def _local_maxima(v: np.ndarray) -> np.ndarray:
    left = np.concatenate([[-np.inf], v[:-1]])
    right = np.concatenate([v[1:], [-np.inf]])
    return np.flatnonzero((v >= left) & (v >= right))


def decay_exponent(nu: SelfConformalMeasure, q_min: float, q_max: float, blocks: int,
                   tol: float = 1e-4, screen_tol: float = 1e-2, refine: int = 4,
                   cap: float = DEFAULT_LEAF_CAP) -> DecayFit:
    """Fit |F_q| ~ q^(-alpha) to per-block suprema over geometric blocks.

    Every block is screened on a peak-resolving grid at ``screen_tol``; the
    ``refine`` largest local maxima are then polished at ``tol`` by bounded
    scalar maximization. Reported sups are values at ``tol``.
    """
    if q_min < 1 or blocks < 4:
        raise ValidationError("need q_min >= 1 and blocks >= 4", field="blocks")
    if q_max / q_min < 2 ** blocks * (1 - 1e-12):
        raise ValidationError("q_max/q_min must be at least 2^blocks", field="q_max")
    edges = q_min * (q_max / q_min) ** (np.arange(blocks + 1) / blocks)
    snap = np.round(edges)
    edges = np.where(np.abs(edges - snap) <= 1e-9 * edges, snap, edges)
    m = cylinder_depth(nu, float(q_max), tol)

    def fine(q):
        return abs(leaf_sum(nu, m, _phase_sums([q]), cap)[0])

    sups, arg, counts = np.empty(blocks), np.empty(blocks), np.empty(blocks, dtype=int)
    for j in range(blocks):
        qj = block_samples(edges[j], edges[j + 1], nu.ifs.diam)
        counts[j] = qj.size
        v = np.abs(fourier_cylinder_many(nu, qj, min(screen_tol, 1.0), cap, q_chunk=256))
        peaks = _local_maxima(v)
        peaks = peaks[np.argsort(v[peaks])[::-1][:refine]]
        best, best_q = -1.0, qj[peaks[0]]
        for i in peaks:
            a = qj[max(i - 1, 0)]
            b = qj[i + 1] if i + 1 < qj.size else min(edges[j + 1], 2 * qj[i] - a)
            cand = [(fine(qj[i]), qj[i])]
            if b > a:
                res = minimize_scalar(lambda q: -fine(q), bounds=(a, b), method="bounded",
                                      options={"xatol": 1e-6 * (b - a)})
                cand.append((-res.fun, res.x))
            val, q = max(cand)
            if val > best:
                best, best_q = val, q
        sups[j], arg[j] = best, best_q
    centers = np.sqrt(edges[:-1] * edges[1:])
    lx, ly = np.log(centers), np.log(np.maximum(sups, 1e-300))
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = float(np.sqrt(np.mean((ly - (slope * lx + icpt)) ** 2)))
    return DecayFit(float(-slope), float(icpt), resid, edges, centers, sups, arg, counts)


@dataclass(frozen=True)
class FrostmanFit:
    d: float
    r_grid: np.ndarray
    masses: np.ndarray


def sup_ball_mass(sorted_x: np.ndarray, r: float) -> float:
    """max_y of the empirical mass of [y - r, y + r]."""
    hi = np.searchsorted(sorted_x, sorted_x + 2 * r, side="right")
    return float(np.max(hi - np.arange(sorted_x.size))) / sorted_x.size


def frostman_exponent(nu: SelfConformalMeasure, r_grid, n_samples: int, seed: int,
                      depth: int | None = None) -> FrostmanFit:
    """Slope of log sup_y nu(B(y, r)) against log r.

    The sup of sampled counts is biased upward when balls hold few points, so
    the smallest radius should still carry a few thousand samples.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    if np.any(np.diff(r_grid) >= 0) or r_grid.min() <= 0 or r_grid.max() >= 1:
        raise ValidationError("r_grid must be decreasing inside (0,1)", field="r_grid")
    if depth is None:
        depth = math.ceil(math.log(r_grid.min() / 100) / math.log(nu.ifs.rho))
    x = np.sort(sample_points(nu, n_samples, depth, seed, task="frostman"))
    masses = np.array([sup_ball_mass(x, r) for r in r_grid])
    slope, _ = np.polyfit(np.log(r_grid), np.log(masses), 1)
    return FrostmanFit(float(slope), r_grid, masses)


@dataclass(frozen=True)
class LyapunovEstimate:
    chi: float
    stderr: float


def increments(nu: SelfConformalMeasure, n_samples: int, depth: int, seed: int, task="kappa"):
    """Samples of -log|f_a'(x)| with a ~ p and x ~ nu (the increment law)."""
    x = sample_points(nu, n_samples, depth, seed, task=(task, "x"))
    rng = substream(seed, task, "a")
    a = draw_symbols(rng, nu.cum_p, n_samples)
    y = np.empty(n_samples)
    for i, m in enumerate(nu.ifs.maps):
        idx = a == i
        y[idx] = -np.log(np.abs(m.deriv(x[idx])))
    return y


def lyapunov(nu: SelfConformalMeasure, n_samples: int, depth: int, seed: int) -> LyapunovEstimate:
    y = increments(nu, n_samples, depth, seed, task="lyapunov")
    se = float(y.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return LyapunovEstimate(float(y.mean()), se)


def integrate(nu: SelfConformalMeasure, func, m: int | None = None, tol: float = 1e-12) -> float:
    """Cylinder quadrature of a Lipschitz function against nu."""
    if m is None:
        m = max(1, math.ceil(math.log(tol) / math.log(nu.ifs.rho)))
        m = min(m, int(math.log(4e6) / math.log(nu.n)))
    return float(leaf_sum(nu, m, lambda X, W: np.dot(func(X), W)))


def lyapunov_cylinder(nu: SelfConformalMeasure, m: int | None = None) -> float:
    """Deterministic Lyapunov exponent by cylinder quadrature."""
    pf = nu.p_float

    def g(x):
        return sum(-pf[a] * np.log(np.abs(f.deriv(x))) for a, f in enumerate(nu.ifs.maps))
    return integrate(nu, g, m)
