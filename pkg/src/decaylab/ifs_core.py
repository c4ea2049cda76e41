"""Conformal maps, iterated function systems and the UNI search.

Words are tuples of 0-based symbols.  ``f_w = f_{w[0]} o f_{w[1]} o ... o f_{w[-1]}``,
so the last symbol acts first.  All maps are strictly monotone contractions of
[0, 1] carrying closed-form evaluators for f, f' and f''.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import (AlphabetTooLarge, BudgetExhausted, DegenerateDerivative,
                     EndpointInAttractor, NotAContraction, NotSelfMap, NotUNI,
                     SharedFixedPoint, ValidationError)

VALIDATION_GRID = 2 ** 12
UNI_TOL = 1e-9
DEFAULT_ALPHABET_CAP = 4096


# ---------------------------------------------------------------------------
# maps

class ConformalMap:
    """Base class; subclasses implement value, deriv, deriv2."""

    kind = "abstract"

    def value(self, x):
        raise NotImplementedError

    def deriv(self, x):
        raise NotImplementedError

    def deriv2(self, x):
        raise NotImplementedError

    def dlog(self, x):
        """(log|f'|)' = f''/f'."""
        return self.deriv2(x) / self.deriv(x)

    def __call__(self, x):
        return self.value(x)

    @cached_property
    def stats(self) -> "MapStats":
        return map_stats(self)

    @property
    def orientation(self) -> int:
        return 1 if self.deriv(0.5) > 0 else -1

    def describe(self) -> dict:
        return {"kind": self.kind}


class AffineMap(ConformalMap):
    kind = "affine"

    def __init__(self, r: float, t: float):
        self.r = float(r)
        self.t = float(t)

    def value(self, x):
        return self.r * np.asarray(x, dtype=float) + self.t

    def deriv(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.r)

    def deriv2(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def dlog(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def describe(self):
        return {"kind": "affine", "params": {"r": self.r, "t": self.t}}

    def __repr__(self):
        return f"AffineMap(r={self.r:g}, t={self.t:g})"


class MoebiusMap(ConformalMap):
    """x -> (alpha x + beta)/(gamma x + delta).

    The determinant is tracked separately so that deep compositions keep full
    relative accuracy in f' even though the normalized matrix entries are O(1).
    """
    kind = "moebius"

    def __init__(self, alpha, beta, gamma, delta, det=None):
        m = np.array([alpha, beta, gamma, delta], dtype=float)
        if det is None:
            det = m[0] * m[3] - m[1] * m[2]
        s = np.max(np.abs(m))
        self.alpha, self.beta, self.gamma, self.delta = (m / s).tolist()
        self.det = float(det) / (s * s)

    @classmethod
    def gauss(cls, a: float) -> "MoebiusMap":
        """x -> 1/(a + x)."""
        return cls(0.0, 1.0, 1.0, float(a), det=-1.0)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return (self.alpha * x + self.beta) / (self.gamma * x + self.delta)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        return self.det / (self.gamma * x + self.delta) ** 2

    def deriv2(self, x):
        x = np.asarray(x, dtype=float)
        return -2.0 * self.gamma * self.det / (self.gamma * x + self.delta) ** 3

    def dlog(self, x):
        x = np.asarray(x, dtype=float)
        return -2.0 * self.gamma / (self.gamma * x + self.delta)

    def describe(self):
        return {"kind": "moebius", "params": {"alpha": self.alpha, "beta": self.beta,
                                              "gamma": self.gamma, "delta": self.delta}}

    def __repr__(self):
        return (f"MoebiusMap({self.alpha:.6g}, {self.beta:.6g}, "
                f"{self.gamma:.6g}, {self.delta:.6g})")


class PolyMap(ConformalMap):
    """Polynomial map with coefficients in increasing degree (the custom-parametric family)."""
    kind = "poly"

    def __init__(self, coeffs: Sequence[float]):
        self.poly = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
        self._d1 = self.poly.deriv(1)
        self._d2 = self.poly.deriv(2)

    def value(self, x):
        return self.poly(np.asarray(x, dtype=float))

    def deriv(self, x):
        return self._d1(np.asarray(x, dtype=float))

    def deriv2(self, x):
        return self._d2(np.asarray(x, dtype=float))

    def describe(self):
        return {"kind": "poly", "params": {"coeffs": self.poly.coef.tolist()}}

    def __repr__(self):
        return f"PolyMap({self.poly.coef.tolist()})"


class CustomMap(ConformalMap):
    """Map given by user callables (Python API only)."""
    kind = "custom"

    def __init__(self, f: Callable, df: Callable, d2f: Callable, name: str = "custom"):
        self._f, self._df, self._d2f = f, df, d2f
        self.name = name

    def value(self, x):
        return np.asarray(self._f(np.asarray(x, dtype=float)), dtype=float)

    def deriv(self, x):
        return np.asarray(self._df(np.asarray(x, dtype=float)), dtype=float)

    def deriv2(self, x):
        return np.asarray(self._d2f(np.asarray(x, dtype=float)), dtype=float)

    def describe(self):
        return {"kind": "custom", "params": {"name": self.name}}


class CompositeMap(ConformalMap):
    """Generic chain-rule composite; maps[0] is applied last."""
    kind = "composite"

    def __init__(self, maps: Sequence[ConformalMap]):
        self.maps = tuple(maps)

    def jet(self, x):
        x = np.asarray(x, dtype=float)
        v = x.copy()
        d = np.ones_like(v)
        dl = np.zeros_like(v)
        for m in reversed(self.maps):
            dl = dl + m.dlog(v) * d
            d = d * m.deriv(v)
            v = m.value(v)
        return v, d, dl

    def value(self, x):
        v = np.asarray(x, dtype=float)
        for m in reversed(self.maps):
            v = m.value(v)
        return v

    def deriv(self, x):
        return self.jet(x)[1]

    def deriv2(self, x):
        _, d, dl = self.jet(x)
        return d * dl

    def dlog(self, x):
        return self.jet(x)[2]

    def describe(self):
        return {"kind": "composite", "params": {"maps": [m.describe() for m in self.maps]}}


def compose(maps: Sequence[ConformalMap]) -> ConformalMap:
    """Composite maps[0] o maps[1] o ...; closed form for affine/Moebius chains."""
    maps = list(maps)
    if not maps:
        raise ValidationError("cannot compose an empty word", field="word")
    if len(maps) == 1:
        return maps[0]
    if all(isinstance(m, AffineMap) for m in maps):
        r, t = 1.0, 0.0
        for m in maps:               # outer to inner: x -> r*(m.r x + m.t) + t
            t = r * m.t + t
            r = r * m.r
        return AffineMap(r, t)
    if all(isinstance(m, (AffineMap, MoebiusMap)) for m in maps):
        mat = np.eye(2)
        det = 1.0
        for m in maps:
            if isinstance(m, AffineMap):
                a = np.array([[m.r, m.t], [0.0, 1.0]])
                d = m.r
            else:
                a = np.array([[m.alpha, m.beta], [m.gamma, m.delta]])
                d = m.det
            mat = mat @ a
            s = np.max(np.abs(mat))
            mat /= s
            det = det * d / (s * s)
        return MoebiusMap(mat[0, 0], mat[0, 1], mat[1, 0], mat[1, 1], det=det)
    flat = []
    for m in maps:
        flat.extend(m.maps if isinstance(m, CompositeMap) else [m])
    return CompositeMap(flat)


@dataclass(frozen=True)
class MapStats:
    sup_abs_deriv: float
    inf_abs_deriv: float
    sup_abs_dlog: float
    sign: int
    image: tuple


def _refine_extremum(h, xs, vals, i, maximize):
    lo = xs[max(i - 1, 0)]
    hi = xs[min(i + 1, len(xs) - 1)]
    sgn = -1.0 if maximize else 1.0
    res = minimize_scalar(lambda t: sgn * float(h(t)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13})
    best = float(h(res.x))
    return max(best, vals[i]) if maximize else min(best, vals[i])


def map_stats(m: ConformalMap, grid: int = VALIDATION_GRID) -> MapStats:
    xs = np.linspace(0.0, 1.0, grid + 1)
    d = m.deriv(xs)
    if not np.all(np.isfinite(d)):
        raise DegenerateDerivative("derivative not finite on [0,1]")
    sign = int(np.sign(d[0]))
    if sign == 0 or np.any(np.sign(d) != sign):
        raise DegenerateDerivative("derivative vanishes or changes sign on [0,1]")
    a = np.abs(d)

    def absd(t):
        return abs(m.deriv(t))

    sup = _refine_extremum(absd, xs, a, int(np.argmax(a)), True)
    inf = _refine_extremum(absd, xs, a, int(np.argmin(a)), False)
    dl = np.abs(m.dlog(xs))
    dsup = _refine_extremum(lambda t: abs(m.dlog(t)), xs, dl, int(np.argmax(dl)), True)
    ends = m.value(np.array([0.0, 1.0]))
    return MapStats(sup, inf, dsup, sign, (float(min(ends)), float(max(ends))))


def check_map(m: ConformalMap, allow_reversing: bool = True) -> ConformalMap:
    st = m.stats
    if st.inf_abs_deriv <= 0:
        raise DegenerateDerivative("inf |f'| is zero")
    if st.sup_abs_deriv >= 1.0:
        raise NotAContraction(f"sup |f'| = {st.sup_abs_deriv:.6g} >= 1")
    xs = np.linspace(0.0, 1.0, VALIDATION_GRID + 1)
    v = m.value(xs)
    tol = 1e-14
    if st.image[0] < -tol or st.image[1] > 1 + tol or v.min() < -tol or v.max() > 1 + tol:
        raise NotSelfMap(f"image {st.image} not contained in [0,1]")
    if st.sign < 0 and not allow_reversing:
        from .errors import OrientationReversing
        raise OrientationReversing("orientation-reversing map rejected")
    return m


def build_map(spec: dict, allow_reversing: bool = True) -> ConformalMap:
    """Build and validate a map from {kind, params}.

    kinds: affine {r, t}; moebius {a} for 1/(a+x) or {alpha, beta, gamma, delta};
    poly (alias custom) {coeffs} in increasing degree.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValidationError("map spec needs a 'kind'", field="kind")
    kind = spec["kind"]
    p = spec.get("params", {}) or {}
    try:
        if kind == "affine":
            m = AffineMap(float(p["r"]), float(p.get("t", 0.0)))
        elif kind == "moebius":
            if "a" in p:
                m = MoebiusMap.gauss(float(p["a"]))
            else:
                m = MoebiusMap(float(p["alpha"]), float(p["beta"]),
                               float(p["gamma"]), float(p["delta"]))
        elif kind in ("poly", "custom"):
            m = PolyMap([float(c) for c in p["coeffs"]])
        else:
            raise ValidationError(f"unknown map kind '{kind}'", field="kind")
    except KeyError as exc:
        raise ValidationError(f"missing parameter {exc} for kind '{kind}'", field="params")
    return check_map(m, allow_reversing=allow_reversing)


def affine(r, t=0.0) -> ConformalMap:
    return check_map(AffineMap(r, t))


def gauss_map(a) -> ConformalMap:
    return check_map(MoebiusMap.gauss(a))


# ---------------------------------------------------------------------------
# IFS

@dataclass(frozen=True, eq=False)
class IFS:
    maps: tuple
    rho: float
    rho_min: float
    D: float
    D_prime: float
    dlog_sup: float
    fixed_points: tuple
    hull: tuple
    labels: tuple | None = None
    base: "IFS | None" = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.maps)

    @property
    def x0(self) -> float:
        return 0.5 * (self.hull[0] + self.hull[1])

    @property
    def diam(self) -> float:
        return self.hull[1] - self.hull[0]

    @property
    def endpoint_margin(self) -> float:
        return min(self.hull[0], 1.0 - self.hull[1])

    @property
    def orientation_preserving(self) -> bool:
        return all(m.stats.sign > 0 for m in self.maps)

    def describe(self) -> dict:
        return {"maps": [m.describe() for m in self.maps]}


def _fixed_point(m: ConformalMap) -> float:
    g0 = float(m.value(0.0))
    g1 = float(m.value(1.0)) - 1.0
    if g0 <= 0.0:
        return 0.0
    if g1 >= 0.0:
        return 1.0
    return brentq(lambda x: float(m.value(x)) - x, 0.0, 1.0, xtol=1e-15, rtol=1e-15)


def attractor_hull(maps: Sequence[ConformalMap], max_iter: int = 10000) -> tuple:
    lo, hi = 0.0, 1.0
    ends = np.array([lo, hi])
    for _ in range(max_iter):
        imgs = np.array([m.value(ends) for m in maps])
        nlo, nhi = float(imgs.min()), float(imgs.max())
        if abs(nlo - lo) <= 1e-17 and abs(nhi - hi) <= 1e-17:
            break
        lo, hi = nlo, nhi
        ends = np.array([lo, hi])
    return lo, hi


def validate_ifs(maps: Sequence[ConformalMap], strict_endpoints: bool = False,
                 allow_reversing: bool = True, labels=None, base=None) -> IFS:
    """Validate maps and compute the contraction constants.

    With ``strict_endpoints`` the attractor hull must avoid {0, 1}; otherwise
    the margin is only recorded (it limits partition scales later on).
    """
    maps = tuple(maps)
    if len(maps) < 2:
        raise ValidationError("an IFS needs at least two maps", field="maps")
    for m in maps:
        check_map(m, allow_reversing=allow_reversing)
    st = [m.stats for m in maps]
    rho = max(s.sup_abs_deriv for s in st)
    rho_min = min(s.inf_abs_deriv for s in st)
    fps = tuple(_fixed_point(m) for m in maps)
    if max(fps) - min(fps) <= 1e-12:
        raise SharedFixedPoint("all maps share the fixed point %.12g" % fps[0])
    hull = attractor_hull(maps)
    if strict_endpoints and min(hull[0], 1.0 - hull[1]) <= 1e-12:
        raise EndpointInAttractor(f"attractor hull {hull} touches the boundary of [0,1]")
    return IFS(maps=maps, rho=rho, rho_min=rho_min, D=-math.log(rho), D_prime=-math.log(rho_min),
               dlog_sup=max(s.sup_abs_dlog for s in st), fixed_points=fps, hull=hull,
               labels=tuple(labels) if labels is not None else None, base=base)


def ifs_from_specs(specs: Sequence[dict], **kw) -> IFS:
    return validate_ifs([build_map(s) for s in specs], **kw)


# ---------------------------------------------------------------------------
# words

def _check_word(ifs: IFS, w) -> tuple:
    w = tuple(int(a) for a in w)
    if any(a < 0 or a >= ifs.n for a in w):
        raise ValidationError(f"word {w} has symbols outside 0..{ifs.n - 1}", field="word")
    return w


def word_jet(ifs: IFS, w, x):
    """(f_w(x), f_w'(x), (log|f_w'|)'(x)) by the chain rule; empty word is the identity."""
    w = _check_word(ifs, w)
    x = np.asarray(x, dtype=float)
    v = x.copy()
    d = np.ones_like(v)
    dl = np.zeros_like(v)
    for a in reversed(w):
        m = ifs.maps[a]
        dl = dl + m.dlog(v) * d
        d = d * m.deriv(v)
        v = m.value(v)
    return v, d, dl


def eval_words(ifs: IFS, words, x):
    """Vectorized word_jet over an integer array of words (W, depth)."""
    words = np.asarray(words, dtype=np.int64)
    if words.ndim == 1:
        words = words[None, :]
    x = np.asarray(x, dtype=float)
    W = words.shape[0]
    v = np.broadcast_to(x, (W,) + x.shape).copy()
    d = np.ones_like(v)
    dl = np.zeros_like(v)
    for j in range(words.shape[1] - 1, -1, -1):
        sym = words[:, j]
        for a, m in enumerate(ifs.maps):
            rows = np.nonzero(sym == a)[0]
            if rows.size == 0:
                continue
            vv = v[rows]
            dl[rows] += m.dlog(vv) * d[rows]
            d[rows] *= m.deriv(vv)
            v[rows] = m.value(vv)
    return v, d, dl


def compose_word(ifs: IFS, w) -> ConformalMap:
    w = _check_word(ifs, w)
    if not w:
        raise ValidationError("compose_word needs a non-empty word", field="word")
    return compose([ifs.maps[a] for a in w])


def cylinder_interval(ifs: IFS, w) -> tuple:
    w = _check_word(ifs, w)
    if not w:
        return (0.0, 1.0)
    v, _, _ = word_jet(ifs, w, np.array([0.0, 1.0]))
    return (float(v.min()), float(v.max()))


def _all_words(n, depth, cap=None, rng=None):
    total = n ** depth
    if cap is None or total <= cap:
        return np.array(list(itertools.product(range(n), repeat=depth)), dtype=np.int64).reshape(-1, depth)
    return rng.integers(0, n, size=(cap, depth))


def distortion_constant(ifs: IFS, max_depth: int, grid: int = 513, max_words: int = 2048,
                        seed: int = 0):
    """(L_hat, analytic bound).  L_hat is the largest derivative ratio over words up to max_depth."""
    if max_depth < 1:
        raise ValidationError("max_depth must be >= 1", field="max_depth")
    xs = np.linspace(0.0, 1.0, grid)
    L = 1.0
    for depth in range(1, max_depth + 1):
        rng = np.random.default_rng([seed, depth])
        words = _all_words(ifs.n, depth, max_words, rng)
        for chunk in np.array_split(words, max(1, len(words) // 256)):
            _, d, _ = eval_words(ifs, chunk, xs)
            la = np.log(np.abs(d))
            L = max(L, float(np.exp(np.max(la.max(axis=1) - la.min(axis=1)))))
    bound = math.exp(ifs.dlog_sup / (1.0 - ifs.rho))
    return L, bound


def uni_functional(ifs: IFS, w1, w2, x):
    """d/dx (log|f_{w1}'| - log|f_{w2}'|)(x); an empty word acts as the identity."""
    return word_jet(ifs, w1, x)[2] - word_jet(ifs, w2, x)[2]


def induce(ifs: IFS, N: int, cap: int = DEFAULT_ALPHABET_CAP) -> IFS:
    """All length-N composites, labelled by their words (lexicographic order)."""
    if N < 1:
        raise ValidationError("N must be >= 1", field="N")
    if ifs.n ** N > cap:
        raise AlphabetTooLarge(f"{ifs.n}^{N} = {ifs.n ** N} maps exceed the cap {cap}")
    words = list(itertools.product(range(ifs.n), repeat=N))
    maps = [compose([ifs.maps[a] for a in w]) for w in words]
    return validate_ifs(maps, labels=words, base=ifs)


def word_index(n: int, w) -> int:
    idx = 0
    for a in w:
        idx = idx * n + int(a)
    return idx


# ---------------------------------------------------------------------------
# UNI quadruple search

@dataclass(frozen=True)
class UniQuadruple:
    N: int
    words: tuple            # four words over the base alphabet, length N each
    indices: tuple          # positions of the words in induce(ifs, N)
    m: float                # min over grid of |uni| for the pairs (1,2) and (3,4)
    m_prime: float
    pair_bounds: tuple      # ((min12, max12), (min34, max34))
    separation_gap: float   # smallest gap between the four images
    gap_target: float       # 3 rho^N
    mode: str
    seed_pair: tuple = ()
    seed_bounds: tuple = ()
    base_bounds: tuple = ()
    n: int = 0
    k: int = 0
    L: float = 1.0
    others_checked: int = 0
    others_separated: bool = True

    @property
    def meets_gap_target(self) -> bool:
        return self.separation_gap > self.gap_target


def _gap(c1, c2):
    return max(c2[0] - c1[1], c1[0] - c2[1])


def _uni_bounds(ifs, w1, w2, xs):
    u = np.abs(uni_functional(ifs, w1, w2, xs))
    return float(u.min()), float(u.max())


def _check_not_uni(ifs, xs, depth=3, cap=4096, tol=UNI_TOL):
    spread = 0.0
    for d in range(1, depth + 1):
        if ifs.n ** d > cap:
            break
        _, _, dl = eval_words(ifs, _all_words(ifs.n, d), xs)
        spread = max(spread, float(np.max(dl.max(axis=0) - dl.min(axis=0))))
    if spread < tol:
        raise NotUNI(f"UNI functional below {tol:g} on all words of depth <= {depth} "
                     "(conjugate to linear suspected)")
    return spread


def _endpoint_code(ifs: IFS, target: float, k: int) -> tuple:
    """Length-k prefix of a code of the attractor point ``target`` (a hull endpoint)."""
    w = ()
    ends = np.array(ifs.hull)
    for _ in range(k):
        best, best_d = None, np.inf
        for a in range(ifs.n):
            v, _, _ = word_jet(ifs, w + (a,), ends)
            lo, hi = v.min(), v.max()
            dist = max(lo - target, target - hi, 0.0)
            if dist < best_d:
                best, best_d = a, dist
        w = w + (int(best),)
    return w


def _best_pair(ifs, words, xs, min_dist, tol):
    cyl = np.array([cylinder_interval(ifs, w) for w in words])
    _, _, dl = eval_words(ifs, words, xs)
    best = None
    for i in range(len(words)):
        gaps = np.maximum(cyl[i + 1:, 0] - cyl[i, 1], cyl[i, 0] - cyl[i + 1:, 1])
        ok = np.nonzero(gaps > min_dist)[0]
        if ok.size == 0:
            continue
        cvals = np.abs(dl[i + 1 + ok] - dl[i]).min(axis=1)
        j = int(np.argmax(cvals))
        if cvals[j] > tol and (best is None or cvals[j] > best[0]):
            best = (float(cvals[j]), i, i + 1 + int(ok[j]))
    return best


def _others_separated(ifs, N, quad, cap):
    if ifs.n ** N > cap:
        return 0, True
    words = list(itertools.product(range(ifs.n), repeat=N))
    cyl = {w: cylinder_interval(ifs, w) for w in words}
    q = [tuple(w) for w in quad]
    count = 0
    for w in words:
        if w in q:
            continue
        count += 1
        ok = False
        for i in (0, 2):
            trip = [cyl[q[i]], cyl[q[i + 1]], cyl[w]]
            if all(_gap(trip[a], trip[b]) > 0 for a, b in ((0, 1), (0, 2), (1, 2))):
                ok = True
                break
        if not ok:
            return count, False
    return count, True


def _finish(ifs, N, words, xs, mode, cap, **extra):
    b12 = _uni_bounds(ifs, words[0], words[1], xs)
    b34 = _uni_bounds(ifs, words[2], words[3], xs)
    cyl = [cylinder_interval(ifs, w) for w in words]
    gap = min(_gap(cyl[a], cyl[b]) for a, b in itertools.combinations(range(4), 2))
    checked, sep = _others_separated(ifs, N, words, cap)
    return UniQuadruple(N=N, words=tuple(tuple(w) for w in words),
                        indices=tuple(word_index(ifs.n, w) for w in words),
                        m=min(b12[0], b34[0]), m_prime=max(b12[1], b34[1]),
                        pair_bounds=(b12, b34), separation_gap=gap,
                        gap_target=3.0 * ifs.rho ** N, mode=mode,
                        others_checked=checked, others_separated=sep, **extra)


def find_uni_quadruple(ifs: IFS, search_budget: int = 12, mode: str = "case1",
                       grid: int = 1024, tol: float = UNI_TOL, max_words: int = 256,
                       cap: int = DEFAULT_ALPHABET_CAP, seed: int = 0) -> UniQuadruple:
    """Search an induced generation for four maps with separation and UNI bounds.

    mode="case1" follows the constructive argument: a separated seed pair of
    depth n with a UNI lower bound, then k extra symbols taken from codes of
    the two hull endpoints, with k chosen so the resulting gaps beat 3 rho^N.
    mode="claim" returns the first generation whose maps contain two disjoint
    pairs with UNI lower bounds (the properties used downstream), without the
    3 rho^N gap target.
    """
    xs = np.linspace(0.0, 1.0, grid)
    _check_not_uni(ifs, xs, tol=tol)
    base = _best_pair(ifs, _all_words(ifs.n, 1), xs, -np.inf, tol)
    base_bounds = ()
    if base is not None:
        base_bounds = _uni_bounds(ifs, (base[1],), (base[2],), xs)
    rng = np.random.default_rng(seed)
    if mode == "claim":
        return _search_claim(ifs, search_budget, xs, tol, max_words, cap, rng, base_bounds)
    if mode != "case1":
        raise ValidationError(f"unknown search mode '{mode}'", field="mode")

    L, _ = distortion_constant(ifs, 6)
    diam = ifs.diam
    rho, rho_min = ifs.rho, ifs.rho_min
    for n in range(1, search_budget):
        words = _all_words(ifs.n, n, max_words, rng)
        found = _best_pair(ifs, words, xs, 3.0 * rho ** n / L, tol)
        if found is None:
            continue
        xi = tuple(int(a) for a in words[found[1]])
        zeta = tuple(int(a) for a in words[found[2]])
        seed_bounds = _uni_bounds(ifs, xi, zeta, xs)
        for k in range(1, search_budget - n + 1):
            if not rho_min ** n > (2.0 / diam) * 3.0 * rho ** (n + k):
                continue
            if rho ** k > 1.0 / L or rho ** k > diam / 4.0:
                continue
            eta1 = _endpoint_code(ifs, ifs.hull[0], k)
            eta2 = _endpoint_code(ifs, ifs.hull[1], k)
            if _gap(cylinder_interval(ifs, eta1), cylinder_interval(ifs, eta2)) < diam / 2.0:
                continue
            quad = [xi + eta1, zeta + eta1, xi + eta2, zeta + eta2]
            res = _finish(ifs, n + k, quad, xs, "case1", cap, seed_pair=(xi, zeta),
                          seed_bounds=seed_bounds, base_bounds=base_bounds, n=n, k=k, L=L)
            if res.meets_gap_target and res.m > 0 and res.others_separated:
                return res
    raise BudgetExhausted(f"no UNI quadruple found with N <= {search_budget}")


def _search_claim(ifs, budget, xs, tol, max_words, cap, rng, base_bounds):
    for N in range(1, budget + 1):
        if ifs.n ** N < 4:
            continue
        words = [tuple(int(a) for a in w) for w in _all_words(ifs.n, N, max_words, rng)]
        cyl = np.array([cylinder_interval(ifs, w) for w in words])
        _, _, dl = eval_words(ifs, words, xs)
        pairs = []
        for i, j in itertools.combinations(range(len(words)), 2):
            if _gap(cyl[i], cyl[j]) > 0:
                c = float(np.abs(dl[i] - dl[j]).min())
                if c > tol:
                    pairs.append((c, i, j))
        pairs.sort(reverse=True)
        for c1, i1, j1 in pairs:
            for c2, i2, j2 in pairs:
                if {i2, j2} & {i1, j1}:
                    continue
                four = [i1, j1, i2, j2]
                if all(_gap(cyl[a], cyl[b]) > 0 for a, b in itertools.combinations(four, 2)):
                    res = _finish(ifs, N, [words[a] for a in four], xs, "claim", cap,
                                  base_bounds=base_bounds)
                    if res.others_separated and res.m > 0:
                        return res
    raise BudgetExhausted(f"no UNI quadruple found with N <= {budget}")


# ---------------------------------------------------------------------------
# reference systems

def cantor() -> IFS:
    return validate_ifs([affine(1 / 3, 0.0), affine(1 / 3, 2 / 3)])


def gauss24() -> IFS:
    return validate_ifs([gauss_map(2.0), gauss_map(4.0)])


def uniform() -> IFS:
    return validate_ifs([affine(0.5, 0.0), affine(0.5, 0.5)])
