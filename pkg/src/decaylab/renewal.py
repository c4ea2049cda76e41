"""Derivative-cocycle random walk, stopping times, renewal sums, equidistribution."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .errors import CostCapExceeded, LatticeDetected, ValidationError
from .measure import SelfConformalMeasure, apply_symbols, increments, integrate, sample_points
from .rng import draw_symbols, substream
from .transfer_op import DEFAULT_STRIP

TRUNCATION_TOL = 1e-9
DEFAULT_TAIL = 4
_CHUNK = 2 ** 17


def coding_depth(nu: SelfConformalMeasure, tol: float = TRUNCATION_TOL) -> int:
    return max(1, math.ceil(math.log(tol) / math.log(nu.ifs.rho)))


def _logd(maps, sym, x):
    """-log|f_sym'(x)| elementwise."""
    out = np.empty_like(x)
    for a, m in enumerate(maps):
        idx = sym == a
        if np.any(idx):
            out[idx] = -np.log(np.abs(m.deriv(x[idx])))
    return out


# ---------------------------------------------------------------------------
# walks

@dataclass(frozen=True)
class WalkSample:
    k: float
    prefix: tuple
    S: np.ndarray
    tau: int
    S_tau: float
    beta: int
    tail: tuple


@dataclass(frozen=True, eq=False)
class WalkSamples:
    """A batch of trajectories. Row i is one omega; columns index generations 1..m."""
    k: float
    eps: float
    tau: np.ndarray
    S_tau: np.ndarray
    beta: np.ndarray
    tail: np.ndarray
    prefix: np.ndarray | None = field(default=None, repr=False)
    S: np.ndarray | None = field(default=None, repr=False)

    @property
    def count(self) -> int:
        return self.tau.size

    @property
    def overshoot(self) -> np.ndarray:
        return self.S_tau - self.k

    def __getitem__(self, i) -> WalkSample:
        if self.prefix is None:
            raise ValidationError("paths were not kept; rerun with keep_paths=True", field="keep_paths")
        return WalkSample(self.k, tuple(int(a) for a in self.prefix[i]), self.S[i].copy(),
                          int(self.tau[i]), float(self.S_tau[i]), int(self.beta[i]),
                          tuple(int(a) for a in self.tail[i]))


def max_generations(nu: SelfConformalMeasure, k: float, eps: float) -> int:
    """Generations after which both tau_k and beta_k have surely occurred."""
    return int(math.floor(k * (1 + eps / 8) / nu.ifs.D)) + 1


def _walk_chunk(nu, k, eps, count, m, tail_len, depth, rng, x0, keep):
    maps = nu.ifs.maps
    L = m + max(depth, tail_len)
    sym = np.stack([draw_symbols(rng, nu.cum_p, count) for _ in range(L)])
    # backward pass: X[j] approximates x_{sigma^j omega}
    x = np.full(count, nu.ifs.x0)
    inc = np.empty((m, count))
    for j in range(L - 1, -1, -1):
        if j < m:
            inc[j] = _logd(maps, sym[j], x)
        x = apply_symbols(maps, sym[j], x)
    S = np.cumsum(inc, axis=0)
    tau = np.argmax(S >= k, axis=0) + 1
    S_tau = S[tau - 1, np.arange(count)]
    # beta_k: first m >= tau_k with -log|f'_{omega|m}(x0)| > k + eps k / 8. At a
    # fixed x0 the crossing can come before tau_k (distortion exceeds eps k / 8),
    # so the search starts at tau_k to keep the pushed word well defined.
    level = k + eps * k / 8
    beta = np.zeros(count, dtype=np.int64)
    for mm in range(int(tau.min()), m + 1):
        y = np.full(count, x0)
        T = np.zeros(count)
        for j in range(mm - 1, -1, -1):
            T += _logd(maps, sym[j], y)
            y = apply_symbols(maps, sym[j], y)
        hit = (beta == 0) & (T > level) & (tau <= mm)
        beta[hit] = mm
    cols = tau[None, :] - 1 + np.arange(1, tail_len + 1)[:, None]
    tail = sym[cols, np.arange(count)[None, :]].T.copy()
    if keep:
        return tau, S_tau, beta, tail, sym[:m].T.copy(), S.T.copy()
    return tau, S_tau, beta, tail, None, None


def walk_samples(nu: SelfConformalMeasure, k: float, count: int, seed: int,
                 tail_len: int = DEFAULT_TAIL, eps: float = DEFAULT_STRIP,
                 depth: int | None = None, x0: float | None = None,
                 keep_paths: bool = False, task="walk") -> WalkSamples:
    """Sample trajectories of S_n(omega) = -log|f'_{omega|n}(x_{sigma^n omega})|.

    The coding points are reconstructed from ``depth`` further symbols so the
    truncation error in each S_n is below 1e-9.
    """
    if k <= 0:
        raise ValidationError("k must be positive", field="k")
    if count < 1:
        raise ValidationError("count must be >= 1", field="count")
    if tail_len < 0:
        raise ValidationError("tail_len must be >= 0", field="tail_len")
    depth = coding_depth(nu) if depth is None else depth
    x0 = nu.ifs.x0 if x0 is None else x0
    m = max_generations(nu, k, eps)
    rng = substream(seed, task, repr(float(k)))
    parts = []
    for start in range(0, count, _CHUNK):
        c = min(_CHUNK, count - start)
        parts.append(_walk_chunk(nu, k, eps, c, m, tail_len, depth, rng, x0, keep_paths))
    cat = [np.concatenate(p) if p[0] is not None else None for p in zip(*parts)]
    return WalkSamples(float(k), float(eps), cat[0], cat[1], cat[2], cat[3], cat[4], cat[5])


def walk_sample(nu: SelfConformalMeasure, k: float, tail_depth: int = DEFAULT_TAIL, seed: int = 0,
                eps: float = DEFAULT_STRIP) -> WalkSample:
    return walk_samples(nu, k, 1, seed, tail_depth, eps, keep_paths=True)[0]


@dataclass(frozen=True)
class OvershootCheck:
    count: int
    overshoot_min: float
    overshoot_max: float
    in_range: int
    beta_ok: int

    @property
    def ok(self) -> bool:
        return self.in_range == self.count and self.beta_ok == self.count


def overshoot_check(nu: SelfConformalMeasure, k: float, count: int, seed: int,
                    eps: float = DEFAULT_STRIP, tol: float = 1e-8) -> OvershootCheck:
    """Count samples with S_tau - k in [0, D'] and beta_k >= tau_k."""
    w = walk_samples(nu, k, count, seed, tail_len=0, eps=eps)
    o = w.overshoot
    good = (o >= -tol) & (o <= nu.ifs.D_prime + tol)
    return OvershootCheck(count, float(o.min()), float(o.max()), int(good.sum()),
                          int((w.beta >= w.tau).sum()))


# ---------------------------------------------------------------------------
# renewal operator

@dataclass(frozen=True)
class RenewalValue:
    t: float
    value: float
    n_max: int
    truncation_bound: float
    method: str
    stderr: float = 0.0


def renewal_apply(nu: SelfConformalMeasure, f, z: float, t: float, support,
                  method: str = "auto", cap: float = 1e7, n_samples: int = 200000,
                  seed: int = 0, margin: int = 2) -> RenewalValue:
    """R f(z, t) = sum_n sum_{|eta|=n} p_eta f(eta.z, c(eta, z) - t).

    ``f(y, x)`` is vectorized and vanishes for x outside ``support``. Since
    c(eta, z) >= n D the sum stops after n_max generations with zero remainder.
    The exact mode enumerates words; the Monte Carlo mode draws one word per
    generation and sample from p^n (importance weight 1).
    """
    x_lo, x_hi = support
    if x_hi < x_lo:
        raise ValidationError("support must be an interval", field="support")
    D = nu.ifs.D
    n_max = max(0, math.ceil((t + x_hi) / D)) + margin
    n = nu.n
    words = sum(float(n) ** j for j in range(n_max + 1))
    if method == "auto":
        method = "exact" if words <= cap else "mc"
    maps, pf = nu.ifs.maps, nu.p_float
    if method == "exact":
        if words > cap:
            raise CostCapExceeded(f"{words:.3g} words exceed the cap {cap:.3g}; use method='mc'")
        X = np.array([float(z)])
        C = np.zeros(1)
        P = np.ones(1)
        total = 0.0
        for gen in range(n_max + 1):
            total += math.fsum(P * f(X, C - t))
            if gen == n_max:
                break
            X, C, P = (np.concatenate([m.value(X) for m in maps]),
                       np.concatenate([C - np.log(np.abs(m.deriv(X))) for m in maps]),
                       np.concatenate([pa * P for pa in pf]))
            keep = C - t <= x_hi
            X, C, P = X[keep], C[keep], P[keep]
            if X.size == 0:
                break
        return RenewalValue(float(t), float(total), n_max, 0.0, "exact")
    if method != "mc":
        raise ValidationError("method must be 'auto', 'exact' or 'mc'", field="method")
    rng = substream(seed, "renewal", repr(float(z)), repr(float(t)))
    X = np.full(n_samples, float(z))
    C = np.zeros(n_samples)
    total = np.zeros(n_samples)
    for gen in range(n_max + 1):
        total += f(X, C - t)
        sym = draw_symbols(rng, nu.cum_p, n_samples)
        C = C + _logd(maps, sym, X)
        X = apply_symbols(maps, sym, X)
    se = float(total.std(ddof=1) / math.sqrt(n_samples))
    return RenewalValue(float(t), float(total.mean()), n_max, 0.0, "mc", se)


@dataclass(frozen=True)
class LimitEstimate:
    value: float
    stderr: float
    chi: float


def _panels(lo, hi, panels=64, order=8):
    g, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    h = np.diff(edges)[:, None] / 2
    mid = (edges[:-1] + edges[1:])[:, None] / 2
    return (mid + h * g[None, :]).ravel(), (h * w[None, :]).ravel()


def renewal_limit(nu: SelfConformalMeasure, f, t: float, support, n_samples: int = 100000,
                  seed: int = 0, chi: float | None = None) -> LimitEstimate:
    """(1/chi) * int nu(dy) int_{-t}^inf f(y, u) du, Monte Carlo in y."""
    x_lo, x_hi = support
    lo = max(-t, x_lo)
    chi = lyapunov_exponent(nu) if chi is None else chi
    if lo >= x_hi:
        return LimitEstimate(0.0, 0.0, chi)
    u, w = _panels(lo, x_hi)
    y = sample_points(nu, n_samples, coding_depth(nu), seed, task="renewal_limit")
    inner = np.broadcast_to(f(y[:, None], u[None, :]), (y.size, u.size)) @ w
    return LimitEstimate(float(inner.mean() / chi), float(inner.std(ddof=1) / math.sqrt(n_samples) / chi),
                         chi)


# ---------------------------------------------------------------------------
# equidistribution of the overshoot

def _increment_integral(nu, G) -> float:
    """int sum_a p_a G(-log|f_a'(x)|) dnu(x) by cylinder quadrature."""
    pf = nu.p_float

    def h(x):
        return sum(pf[a] * G(-np.log(np.abs(f.deriv(x)))) for a, f in enumerate(nu.ifs.maps))
    return integrate(nu, h)


def lyapunov_exponent(nu: SelfConformalMeasure) -> float:
    return _increment_integral(nu, lambda y: y)


def _antiderivative(g, order=32):
    """G(y) = int_0^y g(u) du; exact (G(y) = y) when g is identically 1."""
    t, w = np.polynomial.legendre.leggauss(order)
    t = (t + 1) / 2
    w = w / 2
    wsum = w.sum()

    def G(y):
        y = np.asarray(y, dtype=float)
        vals = np.broadcast_to(g(y[..., None] * t), y.shape + t.shape)
        return y * ((vals @ w) / wsum)
    return G


def equidistribution_limit(nu: SelfConformalMeasure, g) -> float:
    """(1/chi) int int_{-y}^0 g(x + y) dx dkappa(y), both integrals by quadrature."""
    G = _antiderivative(g)
    one = _antiderivative(np.ones_like)
    return _increment_integral(nu, G) / _increment_integral(nu, one)


def detect_lattice(nu: SelfConformalMeasure, n_samples: int = 4096, seed: int = 0,
                   max_den: int = 64, tol: float = 1e-9):
    """Span a of the increment law if it sits on b + aZ, otherwise None."""
    y = increments(nu, n_samples, coding_depth(nu), seed, task="lattice")
    uniq = np.unique(np.round(y, 9))
    if uniq.size > 64:
        return None
    if uniq.size == 1:
        return float(uniq[0])
    d = uniq - uniq[0]
    base = d[1]
    ratios = d / base
    fr = [Fraction(float(r)).limit_denominator(max_den) for r in ratios]
    if all(abs(float(r) - x) < tol * max(1.0, abs(x)) for r, x in zip(fr, ratios)):
        den = math.lcm(*[r.denominator for r in fr])
        return float(base / den)
    return None


@dataclass(frozen=True)
class ResidueTable:
    k: float
    tail_len: int
    bins: list
    estimates: np.ndarray
    stderrs: np.ndarray
    counts: np.ndarray
    unconditional: float
    unconditional_stderr: float
    limit: float
    ec_one: float

    @property
    def weights(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def _bin_stats(codes, vals, nbins):
    cnt = np.bincount(codes, minlength=nbins).astype(float)
    s1 = np.bincount(codes, weights=vals, minlength=nbins)
    s2 = np.bincount(codes, weights=vals * vals, minlength=nbins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / cnt
        var = (s2 - cnt * mean ** 2) / (cnt - 1)
        se = np.sqrt(np.maximum(var, 0) / cnt)
    return cnt, mean, se


def residue_cutoff(nu: SelfConformalMeasure, g, k: float, n_mc: int, seed: int,
                   tail_len: int = DEFAULT_TAIL, eps: float = DEFAULT_STRIP,
                   check_k: bool = True) -> ResidueTable:
    """Conditional means of g(S_tau - k) given the first symbols of sigma^tau omega."""
    if check_k and k <= nu.ifs.D_prime + 1:
        raise ValidationError(f"k must exceed D' + 1 = {nu.ifs.D_prime + 1:.4g}", field="k")
    w = walk_samples(nu, k, n_mc, seed, tail_len=tail_len, eps=eps, task="residue")
    vals = np.broadcast_to(np.asarray(g(w.overshoot), dtype=float), w.tau.shape).astype(float)
    n = nu.n
    codes = np.zeros(w.count, dtype=np.int64)
    for j in range(tail_len):
        codes = codes * n + w.tail[:, j]
    nb = n ** tail_len
    cnt, mean, se = _bin_stats(codes, vals, nb)
    keep = cnt > 0
    bins = [tuple(int(c) for c in np.unravel_index(i, (n,) * tail_len)) for i in np.flatnonzero(keep)]
    # E_C(1): each trajectory crosses level k exactly once
    ec_one = float(np.mean(w.S_tau >= k))
    return ResidueTable(float(k), tail_len, bins, mean[keep], np.nan_to_num(se[keep]), cnt[keep],
                        float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(w.count)) if w.count > 1 else 0.0,
                        equidistribution_limit(nu, g), ec_one)


@dataclass(frozen=True)
class EquidistributionResult:
    k: np.ndarray
    errors: np.ndarray
    noise: np.ndarray
    limit: float
    rate: float
    rate_ci: tuple
    used: np.ndarray
    tables: list = field(repr=False, default_factory=list)

    def decreasing(self) -> bool:
        e = self.errors[self.used]
        return bool(e.size >= 2 and np.all(np.diff(e) < 0))


def equidistribution_test(nu: SelfConformalMeasure, g, k_list, n_mc: int, seed: int,
                          tail_len: int = DEFAULT_TAIL, eps: float = DEFAULT_STRIP,
                          noise_factor: float = 2.0) -> EquidistributionResult:
    """Errors e(k) of the conditional overshoot means and the fitted rate in e ~ exp(-r k).

    e(k) is the bin-weighted RMS deviation from the limit; the noise floor is
    the weighted RMS standard error. Only points with e > noise_factor * floor
    enter the fit.
    """
    span = detect_lattice(nu, seed=seed)
    if span is not None:
        raise LatticeDetected(f"increments lie on a lattice of span {span:.6g}; "
                              "the overshoot does not equidistribute")
    ks = np.asarray(sorted(k_list), dtype=float)
    tables, errs, noise = [], [], []
    for k in ks:
        tab = residue_cutoff(nu, g, float(k), n_mc, seed, tail_len, eps)
        wgt = tab.weights
        errs.append(math.sqrt(float(np.sum(wgt * (tab.estimates - tab.limit) ** 2))))
        noise.append(math.sqrt(float(np.sum(wgt * tab.stderrs ** 2))))
        tables.append(tab)
    errs, noise = np.array(errs), np.array(noise)
    used = errs > noise_factor * noise
    rate, ci = float("nan"), (float("nan"), float("nan"))
    if used.sum() >= 2:
        kk, ee = ks[used], np.log(errs[used])
        if used.sum() >= 3:
            fit = stats.linregress(kk, ee)
            half = stats.t.ppf(0.975, used.sum() - 2) * fit.stderr
            rate, ci = -fit.slope, (-fit.slope - half, -fit.slope + half)
        else:
            rate = float(-(ee[1] - ee[0]) / (kk[1] - kk[0]))
    limit = tables[0].limit if tables else float("nan")
    return EquidistributionResult(ks, errs, noise, limit, rate, ci, used, tables)


# ---------------------------------------------------------------------------
# mollifier

PSI_MASS = 0.443993816168079  # int_{-1}^{1} exp(-1/(1-x^2)) dx


@dataclass(frozen=True)
class Mollifier:
    delta: float
    C0: float = 1.0 / PSI_MASS

    @property
    def radius(self) -> float:
        return self.delta ** 2

    def __call__(self, x):
        u = np.asarray(x, dtype=float) / self.radius
        out = np.zeros_like(u)
        inside = np.abs(u) < 1
        out[inside] = self.C0 * np.exp(-1.0 / (1.0 - u[inside] ** 2))
        return out / self.radius


def mollify(x, values, delta: float, min_points: int = 8) -> np.ndarray:
    """psi_delta * f on a uniform grid (zero outside the grid).

    The discrete kernel is normalized to unit sum, so the grid sum (and the
    Riemann integral) of the data is preserved up to rounding.
    """
    if not 0 < delta < 1:
        raise ValidationError("delta must lie in (0, 1)", field="delta")
    x = np.asarray(x, dtype=float)
    v = np.asarray(values, dtype=float)
    h = float(x[1] - x[0])
    if not np.allclose(np.diff(x), h, rtol=1e-9, atol=0):
        raise ValidationError("grid must be uniform", field="x")
    psi = Mollifier(delta)
    half = int(math.floor(psi.radius / h))
    if half < min_points:
        raise ValidationError(f"grid spacing {h:.3g} does not resolve delta^2 = {psi.radius:.3g}",
                              field="x")
    kern = psi(h * np.arange(-half, half + 1))
    kern /= kern.sum()
    return np.convolve(v, kern, mode="same")
