"""Collocation discretization of the complex transfer operator P_s."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import GridMismatch, Overflow, SeriesDiverging, StripExceeded, ValidationError
from .ifs_core import IFS, compose_word
from .measure import SelfConformalMeasure, cylinder_leaves

DEFAULT_STRIP = 0.05
OVERFLOW_LIMIT = 1e12


# ---------------------------------------------------------------------------
# Chebyshev-Lobatto collocation

def cheb_nodes(M: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    t = (1.0 - np.cos(np.pi * np.arange(M) / (M - 1))) / 2.0
    return lo + (hi - lo) * t


def bary_weights(M: int) -> np.ndarray:
    w = (-1.0) ** np.arange(M)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def interp_matrix(x: np.ndarray, w: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Rows evaluate the barycentric interpolant through (x, .) at the points y."""
    y = np.asarray(y, dtype=float)
    diff = y[:, None] - x[None, :]
    hit = diff == 0
    diff[hit] = 1.0
    C = w[None, :] / diff
    C /= C.sum(axis=1, keepdims=True)
    rows = np.flatnonzero(hit.any(axis=1))
    if rows.size:
        C[rows] = hit[rows].astype(float)
    return C


def diff_matrix(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (w[None, :] / w[:, None]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    s: complex
    grid: np.ndarray
    matrix: np.ndarray
    D: np.ndarray
    weights: np.ndarray
    provenance: str = "global"
    nu: SelfConformalMeasure | None = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return self.grid.size

    @property
    def b(self) -> float:
        return float(np.imag(self.s))

    def interp(self, y) -> np.ndarray:
        return interp_matrix(self.grid, self.weights, y)


def _check_strip(s, strip):
    if abs(np.real(s)) > strip:
        raise StripExceeded(f"|Re s| = {abs(np.real(s)):.3g} exceeds the strip bound {strip}",
                            field="s")


def operator_from_maps(maps, p, s, M: int, interval, strip: float = DEFAULT_STRIP,
                       provenance: str = "global", nu=None) -> DiscreteOperator:
    """Matrix of g -> sum_a p_a exp(2 pi s c(a, x)) g(f_a(x)) on Chebyshev nodes."""
    if M < 16:
        raise ValidationError("M must be >= 16", field="M")
    _check_strip(s, strip)
    lo, hi = interval
    x = cheb_nodes(M, lo, hi)
    w = bary_weights(M)
    A = np.zeros((M, M), dtype=complex)
    for f, pa in zip(maps, p):
        c = -np.log(np.abs(f.deriv(x)))
        A += (float(pa) * np.exp(2 * np.pi * s * c))[:, None] * interp_matrix(x, w, f.value(x))
    return DiscreteOperator(complex(s), x, A, diff_matrix(x, w), w, provenance, nu)


def discretize(nu: SelfConformalMeasure, s, M: int = 256, strip: float = DEFAULT_STRIP,
               interval=None) -> DiscreteOperator:
    """Discretize P_s for nu.

    Nodes live on the attractor hull by default: it is mapped into itself by
    every branch, and it is far narrower than [0, 1] for Gauss-type systems,
    which keeps e^{2 pi i b c} resolved at large b.
    """
    interval = nu.ifs.hull if interval is None else interval
    return operator_from_maps(nu.ifs.maps, nu.p, s, M, interval, strip, "global", nu)


def discretize_iterate(nu: SelfConformalMeasure, s, M: int, n: int,
                       strip: float = DEFAULT_STRIP, interval=None) -> DiscreteOperator:
    """Operator of the n-step cocycle: sum over words |w| = n (for semigroup checks)."""
    interval = nu.ifs.hull if interval is None else interval
    words = list(product(range(nu.n), repeat=n))
    maps = [compose_word(nu.ifs, w) for w in words]
    pf = nu.p_float
    p = [float(np.prod(pf[list(w)])) for w in words]
    return operator_from_maps(maps, p, s, M, interval, strip, f"iterate^{n}", nu)


def apply_op(op: DiscreteOperator, g_values) -> np.ndarray:
    g = np.asarray(g_values)
    if g.shape[0] != op.M:
        raise GridMismatch(f"expected {op.M} grid values, got {g.shape[0]}", field="g_values")
    return op.matrix @ g


# ---------------------------------------------------------------------------
# norms

def norm(op: DiscreteOperator, g, flavor: str = "b") -> np.ndarray:
    """C1 or (b) norm of grid functions (columns of g)."""
    sup = np.max(np.abs(g), axis=0)
    dsup = np.max(np.abs(op.D @ g), axis=0)
    if flavor == "C1":
        return sup + dsup
    if flavor == "b":
        return sup + dsup / max(abs(op.b), 1.0)
    raise ValidationError("flavor must be 'C1' or 'b'", field="flavor")


@dataclass(frozen=True)
class NormReport:
    norms: np.ndarray  # (n,) or (n, probes)
    C: float
    alpha: float
    residual: float
    flavor: str


def _fit(norms, n):
    k = np.arange(1, n + 1)
    sel = k >= max(1, n // 2)
    y = np.log(np.maximum(norms[sel], 1e-300))
    if sel.sum() < 2:
        return float(norms[-1]), 1.0, 0.0
    slope, icpt = np.polyfit(k[sel], y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * k[sel] + icpt)) ** 2)))
    return float(math.exp(icpt)), float(math.exp(slope)), resid


def power_norm(op: DiscreteOperator, g, n: int, flavor: str = "b") -> NormReport:
    """Norms of P^k g for k = 1..n and the fit C * alpha^k over k in [n/2, n]."""
    if n < 1:
        raise ValidationError("n must be >= 1", field="n")
    G = np.asarray(g, dtype=complex)
    single = G.ndim == 1
    if single:
        G = G[:, None]
    if G.shape[0] != op.M:
        raise GridMismatch(f"expected {op.M} grid values, got {G.shape[0]}", field="g")
    out = np.empty((n, G.shape[1]))
    for k in range(n):
        G = op.matrix @ G
        out[k] = norm(op, G, flavor)
        if not np.all(np.isfinite(out[k])) or out[k].max() > OVERFLOW_LIMIT:
            raise Overflow(f"iterate norm exceeded {OVERFLOW_LIMIT:g} at step {k + 1}")
    fits = [_fit(out[:, j], n) for j in range(out.shape[1])]
    j = int(np.argmax([f[1] for f in fits]))
    C, alpha, resid = fits[j]
    return NormReport(out[:, 0] if single else out, C, alpha, resid, flavor)


def probe_set(op: DiscreteOperator, flavor: str = "b") -> np.ndarray:
    """Eight probes: constant, two polynomials, five oscillations at frequency ~b."""
    x = op.grid
    lo, hi = x[0], x[-1]
    u = (2 * x - lo - hi) / (hi - lo)
    b = max(abs(op.b), 1.0)
    cols = [np.ones_like(x), u, u ** 2 - 0.5,
            np.exp(2j * np.pi * b * x), np.exp(-2j * np.pi * b * x),
            np.exp(1j * np.pi * b * x), np.cos(2 * np.pi * b * x) * (1 + u),
            np.exp(2j * np.pi * b * (x - lo) ** 2 / (hi - lo))]
    G = np.array(cols, dtype=complex).T
    return G / norm(op, G, flavor)[None, :]


@dataclass(frozen=True)
class ScanRow:
    b: float
    alpha: float
    C: float
    n: int
    M: int


@dataclass(frozen=True)
class ScanResult:
    a: float
    rows: list
    gamma: float | None

    def alphas(self):
        return np.array([r.alpha for r in self.rows])


def spectral_gap_scan(nu: SelfConformalMeasure, a: float, b_list, n: int = 40, M: int = 256,
                      strip: float = DEFAULT_STRIP, flavor: str = "b") -> ScanResult:
    """Max-over-probes contraction rate alpha(b) and prefactor C(b) per b."""
    if abs(a) > strip:
        raise StripExceeded(f"|a| = {abs(a)} exceeds the strip bound {strip}", field="a")
    rows = []
    for b in b_list:
        if abs(b) < 1:
            raise ValidationError("all |b| must be >= 1", field="b_list")
        op = discretize(nu, complex(a, b), M, strip)
        rep = power_norm(op, probe_set(op, flavor), n, flavor)
        rows.append(ScanRow(float(b), rep.alpha, rep.C, n, M))
    gamma = None
    if len(rows) >= 2:
        bs = np.abs([r.b for r in rows])
        if np.ptp(bs) > 0:
            gamma = float(np.polyfit(np.log(bs), np.log([r.C for r in rows]), 1)[0] - 1.0)
    return ScanResult(float(a), rows, gamma)


# ---------------------------------------------------------------------------
# resolvent

def nu_functional(op: DiscreteOperator, depth: int | None = None) -> np.ndarray:
    """Row vector r with r @ g = integral of the interpolant of g against nu."""
    nu = op.nu
    if depth is None:
        depth = max(1, int(math.log(2 ** 14) / math.log(nu.n)))
    X, W = cylinder_leaves(nu, depth)
    return W @ op.interp(X)


@dataclass(frozen=True)
class ResolventProbe:
    s: complex
    theta: float
    rank_one_coeff: complex
    remainder_norm: float
    terms: int
    last_term_norm: float
    bound_ok: bool | None


def resolvent_probe(nu: SelfConformalMeasure, s, theta: float, truncation_n: int = 400,
                    M: int = 256, g=None, C: float | None = None, gamma: float | None = None,
                    rtol: float = 1e-6, strip: float = DEFAULT_STRIP) -> ResolventProbe:
    """Truncated Neumann series of (I - P_{-(s + i theta)})^{-1} applied to g.

    The result is split into its nu-mean (the rank-one direction) and the
    mean-free remainder, whose (theta) norm is compared to C (1+|theta|)^(1+gamma).
    """
    op = discretize(nu, -(complex(s) + 1j * theta), M, strip)
    gv = np.ones(op.M, dtype=complex) if g is None else np.asarray(g(op.grid), dtype=complex)
    term, total = gv.copy(), gv.copy()
    tn = 0.0
    for _ in range(truncation_n):
        term = op.matrix @ term
        total += term
        tn = float(np.max(np.abs(term)))
        if not np.isfinite(tn) or tn > OVERFLOW_LIMIT:
            raise SeriesDiverging("Neumann series terms are growing")
    scale = float(np.max(np.abs(total)))
    if tn > rtol * max(scale, 1e-300):
        raise SeriesDiverging(f"last term {tn:.3g} is not small relative to the sum {scale:.3g}; "
                              "increase truncation_n or move off the real axis")
    coeff = complex(nu_functional(op) @ total)
    rem = total - coeff
    sup = float(np.max(np.abs(rem)))
    rn = sup + float(np.max(np.abs(op.D @ rem))) / max(abs(theta), 1.0)
    ok = None
    if C is not None and gamma is not None:
        ok = bool(rn <= C * (1 + abs(theta)) ** (1 + gamma))
    return ResolventProbe(complex(s), float(theta), coeff, rn, truncation_n, tn, ok)
