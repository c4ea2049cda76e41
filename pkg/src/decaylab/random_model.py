"""Bernoulli disintegration model built on a UNI quadruple.

Family j (one per parent symbol) is a 2- or 3-map sub-IFS of the parent;
a selection sequence omega of families together with per-family weights
p_tilde defines the random measures mu_omega whose Q-average is nu.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

from .errors import (ConeViolation, CostCapExceeded, DenseSetEmpty, EpsilonTooLarge,
                     GridMismatch, PrefixTooShort, SeparationUnsatisfied, ValidationError)
from .ifs_core import IFS, UniQuadruple, compose, compose_word, validate_ifs
from .measure import SelfConformalMeasure, apply_symbols, self_conformal
from .rng import substream
from .transfer_op import DEFAULT_STRIP, operator_from_maps


def _image(m):
    v = m.value(np.array([0.0, 1.0]))
    return float(v.min()), float(v.max())


def _disjoint(a, b) -> bool:
    return a[1] < b[0] or b[1] < a[0]


@dataclass(frozen=True, eq=False)
class RandomModel:
    nu: SelfConformalMeasure
    quad: tuple                 # parent symbols of f1..f4
    families: tuple             # families[j]: parent symbols; positions 0, 1 are the UNI pair
    q: tuple
    p_tilde: tuple
    multiplicity: tuple

    @property
    def maps(self):
        return self.nu.ifs.maps

    @property
    def n_families(self) -> int:
        return len(self.families)

    def family_maps(self, j):
        return [self.maps[a] for a in self.families[j]]

    @property
    def q_float(self) -> np.ndarray:
        return np.array([float(v) for v in self.q])

    @property
    def cum_q(self) -> np.ndarray:
        c = np.cumsum(self.q_float)
        c[-1] = 1.0
        return c

    def cum_pt(self, j) -> np.ndarray:
        c = np.cumsum([float(v) for v in self.p_tilde[j]])
        c[-1] = 1.0
        return c

    @property
    def min_log_p(self) -> float:
        return min(math.log(float(v)) for pt in self.p_tilde for v in pt)


def quadruple_parent(ifs: IFS, quad: UniQuadruple, extra: int = 0, p=None):
    """Sub-IFS of the induced system made of the quadruple plus ``extra`` maps.

    Extra words are taken in lexicographic order among those that are
    separated from one of the two pairs. Returns (measure, quadruple symbols).
    """
    words = list(quad.words)
    if extra:
        n, N = ifs.n, quad.N
        imgs = [_image(compose_word(ifs, w)) for w in words]
        for w in product(range(n), repeat=N):
            if len(words) == 4 + extra:
                break
            if w in words:
                continue
            iw = _image(compose_word(ifs, w))
            for i in (0, 2):
                if (_disjoint(imgs[i], iw) and _disjoint(imgs[i + 1], iw)):
                    words.append(w)
                    break
        if len(words) < 4 + extra:
            raise SeparationUnsatisfied("not enough separated extra words", field="extra")
    sub = validate_ifs([compose_word(ifs, w) for w in words], labels=words, base=ifs)
    return self_conformal(sub, p), (0, 1, 2, 3)


def build_model(nu: SelfConformalMeasure, quad=(0, 1, 2, 3)) -> RandomModel:
    """Families, selection vector q and weights p_tilde for the disintegration."""
    if isinstance(quad, UniQuadruple):
        labels = nu.ifs.labels
        quad = tuple(labels.index(w) for w in quad.words) if labels else quad.indices
    quad = tuple(int(a) for a in quad)
    n = nu.n
    if len(set(quad)) != 4 or any(a < 0 or a >= n for a in quad):
        raise ValidationError(f"quadruple {quad} must be 4 distinct symbols below {n}", field="quad")
    imgs = [_image(m) for m in nu.ifs.maps]
    i1, i2, i3, i4 = quad
    for a, b in ((i1, i2), (i3, i4)):
        if not _disjoint(imgs[a], imgs[b]):
            raise SeparationUnsatisfied(f"images of maps {a} and {b} overlap")
    fams = [None] * n
    fams[i1] = fams[i2] = (i1, i2)
    fams[i3] = fams[i4] = (i3, i4)
    for k in range(n):
        if k in quad:
            continue
        for a, b in ((i1, i2), (i3, i4)):
            if _disjoint(imgs[a], imgs[k]) and _disjoint(imgs[b], imgs[k]):
                fams[k] = (a, b, k)
                break
        else:
            raise SeparationUnsatisfied(f"map {k} overlaps both pairs of the quadruple")
    mult = [sum(a in f for f in fams) for a in range(n)]
    exact = nu.exact
    p = nu.p if exact else tuple(float(v) for v in nu.p)

    def share(a):
        return p[a] / mult[a] if exact else p[a] / float(mult[a])

    q, pt = [], []
    for f in fams:
        qj = sum(share(a) for a in f)
        q.append(qj)
        pt.append(tuple(share(a) / qj for a in f))
    return RandomModel(nu, quad, tuple(fams), tuple(q), tuple(pt), tuple(mult))


def marginal_residuals(model: RandomModel) -> list:
    """sum_{j: a in Phi_j} q_j p_tilde_j(a) - p_a for every parent symbol a."""
    out = []
    for a in range(model.nu.n):
        tot = 0
        for j, f in enumerate(model.families):
            for pos, b in enumerate(f):
                if b == a:
                    tot = tot + model.q[j] * model.p_tilde[j][pos]
        out.append(tot - model.nu.p[a])
    return out


def word_weight_residual(model: RandomModel, N: int, cap: int = 10 ** 6):
    """Largest |sum_omega q_omega eta_omega(w) - p_w| over parent words of length N."""
    nf = model.n_families
    if nf ** N * 3 ** N > cap:
        raise CostCapExceeded(f"{nf}^{N} selections exceed the cap")
    acc = {}
    for om in product(range(nf), repeat=N):
        qw = 1
        for j in om:
            qw = qw * model.q[j]
        for u in product(*[range(len(model.families[j])) for j in om]):
            eta = qw
            for j, uk in zip(om, u):
                eta = eta * model.p_tilde[j][uk]
            w = tuple(model.families[j][uk] for j, uk in zip(om, u))
            acc[w] = acc.get(w, 0) + eta
    worst = 0
    for w in product(range(model.nu.n), repeat=N):
        pw = 1
        for a in w:
            pw = pw * model.nu.p[a]
        worst = max(worst, abs(acc.get(w, 0) - pw))
    return worst


# ---------------------------------------------------------------------------
# omega and mu_omega

def sample_omega(model: RandomModel, length: int, seed: int, count: int | None = None,
                 task="omega"):
    rng = substream(seed, task)
    size = (1 if count is None else count, length)
    om = np.searchsorted(model.cum_q[:-1], rng.random(size), side="right")
    rows = [tuple(int(v) for v in r) for r in om]
    return rows[0] if count is None else rows


def _omega_key(omega):
    return "-".join(str(int(j)) for j in omega)


def sample_mu_omega(model: RandomModel, omega, depth: int, count: int, seed: int,
                    task="mu_omega", x_start: float = 0.0) -> np.ndarray:
    """Points f^{(w1)}_{u1} o ... o f^{(wd)}_{ud}(x_start) with u_k ~ p_tilde^{(w_k)}.

    Uniforms are drawn level by level from the outermost symbol, so a deeper
    call on the same omega and seed refines the shallower one.
    """
    omega = tuple(int(j) for j in omega)
    if len(omega) < depth:
        raise PrefixTooShort(f"omega has length {len(omega)} < depth {depth}", field="omega")
    rng = substream(seed, task, _omega_key(omega))
    U = rng.random((depth, count))
    x = np.full(count, float(x_start))
    for k in range(depth - 1, -1, -1):
        j = omega[k]
        sym = np.searchsorted(model.cum_pt(j)[:-1], U[k], side="right")
        x = apply_symbols(model.family_maps(j), sym, x)
    return x


def sample_disintegrated(model: RandomModel, count: int, depth: int, seed: int) -> np.ndarray:
    """One point of mu_omega per independently drawn omega: a sample of int mu_omega dQ."""
    rng = substream(seed, "disintegrated")
    x = np.full(count, model.nu.ifs.x0)
    fam_idx = np.searchsorted(model.cum_q[:-1], rng.random((depth, count)), side="right")
    U = rng.random((depth, count))
    for k in range(depth - 1, -1, -1):
        parent = np.empty(count, dtype=np.int64)
        for j in range(model.n_families):
            rows = fam_idx[k] == j
            if not np.any(rows):
                continue
            pos = np.searchsorted(model.cum_pt(j)[:-1], U[k, rows], side="right")
            parent[rows] = np.asarray(model.families[j])[pos]
        x = apply_symbols(model.maps, parent, x)
    return x


# ---------------------------------------------------------------------------
# local transfer operators

@dataclass(frozen=True)
class LocalWord:
    u: tuple            # positions inside the families
    parent: tuple       # parent symbols
    eta: float
    map: object


def local_words(model: RandomModel, omega, N: int) -> list:
    omega = tuple(int(j) for j in omega)
    if len(omega) < N:
        raise PrefixTooShort(f"omega has length {len(omega)} < N = {N}", field="omega")
    out = []
    for u in product(*[range(len(model.families[j])) for j in omega[:N]]):
        parent = tuple(model.families[j][k] for j, k in zip(omega, u))
        eta = math.prod(float(model.p_tilde[j][k]) for j, k in zip(omega, u))
        out.append(LocalWord(u, parent, eta, compose([model.maps[a] for a in parent])))
    return out


def local_operator(model: RandomModel, omega, N: int, s, M: int = 256, interval=None,
                   strip: float = DEFAULT_STRIP):
    words = local_words(model, omega, N)
    interval = model.nu.ifs.hull if interval is None else interval
    return operator_from_maps([w.map for w in words], [w.eta for w in words], s, M, interval,
                              strip, provenance=f"local {tuple(omega[:N])}")


def apply_local_transfer(model: RandomModel, omega, N: int, s, g_values, M: int | None = None,
                         interval=None) -> np.ndarray:
    g = np.asarray(g_values)
    if M is not None and g.shape[0] != M:
        raise GridMismatch(f"expected {M} grid values, got {g.shape[0]}", field="g_values")
    op = local_operator(model, omega, N, s, g.shape[0], interval)
    return op.matrix @ g


def _local_sum(model, omega, N, s, g, x):
    """Exact P_{s,omega,N} g at the points x for a callable g."""
    tot = np.zeros(np.shape(x), dtype=complex)
    for w in local_words(model, omega, N):
        c = -np.log(np.abs(w.map.deriv(x)))
        tot += w.eta * np.exp(2 * np.pi * s * c) * g(w.map.value(x))
    return tot


def check_operator_disintegration(model: RandomModel, s, N: int, g, x_grid,
                                  cap: float = 2e5) -> float:
    """max |P_s^N g - sum_omega q_omega P_{s,omega,N} g| on x_grid (finite sums, no interpolation)."""
    nf = model.n_families
    if nf ** N * 3 ** N > cap:
        raise CostCapExceeded(f"{nf}^{N} selections exceed the cap {cap:g}")
    x = np.asarray(x_grid, dtype=float)
    ifs = model.nu.ifs
    pf = model.nu.p_float
    lhs = np.zeros(x.shape, dtype=complex)
    for w in product(range(ifs.n), repeat=N):
        f = compose([ifs.maps[a] for a in w])
        c = -np.log(np.abs(f.deriv(x)))
        lhs += math.prod(pf[list(w)]) * np.exp(2 * np.pi * s * c) * g(f.value(x))
    rhs = np.zeros(x.shape, dtype=complex)
    qf = model.q_float
    for om in product(range(nf), repeat=N):
        rhs += math.prod(qf[list(om)]) * _local_sum(model, om, N, s, g, x)
    return float(np.max(np.abs(lhs - rhs)))


def uni_bounds(model: RandomModel, grid: int = 1024) -> tuple:
    """(m, m') attained by the UNI pairs of all families on a grid of [0,1]."""
    xs = np.linspace(0.0, 1.0, grid)
    lo, hi = np.inf, 0.0
    for f in model.families:
        u = np.abs(model.maps[f[0]].dlog(xs) - model.maps[f[1]].dlog(xs))
        lo, hi = min(lo, float(u.min())), max(hi, float(u.max()))
    return lo, hi


# ---------------------------------------------------------------------------
# Federer property

@dataclass(frozen=True)
class FedererEstimate:
    C: float
    stderr: float
    ratios: np.ndarray      # (probes, radii), nan where the small ball is too sparse
    radii: np.ndarray
    probes: np.ndarray
    D_factor: float


def federer_constant(model: RandomModel, omega, D_factor: float = 2.0, probes: int = 32,
                     radii=None, depth: int = 20, n_samples: int = 200_000, seed: int = 0,
                     min_count: int = 64) -> FedererEstimate:
    """max over probes and radii of mu(B(x, D r)) / mu(B(x, r)) from samples."""
    if D_factor < 1:
        raise ValidationError("D_factor must be >= 1", field="D_factor")
    x = np.sort(sample_mu_omega(model, omega, depth, n_samples, seed, task="federer"))
    n = x.size
    pts = x[np.linspace(0, n - 1, probes).astype(int)]
    span = max(x[-1] - x[0], 1e-300)
    radii = span * np.geomspace(0.5, 1e-4, 14) if radii is None else np.asarray(radii, float)

    def counts(r):
        return (np.searchsorted(x, pts[:, None] + r[None, :], side="right")
                - np.searchsorted(x, pts[:, None] - r[None, :], side="left"))

    small, big = counts(radii), counts(D_factor * radii)
    ratio = np.where(small >= min_count, big / np.maximum(small, 1), np.nan)
    if np.all(np.isnan(ratio)):
        raise ValidationError("no ball holds min_count samples; raise n_samples", field="n_samples")
    i = np.unravel_index(np.nanargmax(ratio), ratio.shape)
    ms, mb = small[i] / n, big[i] / n
    se = ratio[i] * math.sqrt((1 - ms) / (n * ms) + (1 - mb) / (n * mb))
    return FedererEstimate(float(ratio[i]), float(se), ratio, radii, pts, float(D_factor))


# ---------------------------------------------------------------------------
# triadic partition

def pieces_at(model: RandomModel, omega, d: int) -> np.ndarray:
    """Images of the hull under all omega-words of length d, sorted (disjoint)."""
    lo, hi = model.nu.ifs.hull
    E = np.array([[lo, hi]])
    for k in range(d - 1, -1, -1):
        E = np.concatenate([f.value(E) for f in model.family_maps(omega[k])])
    E.sort(axis=1)
    return E[np.argsort(E[:, 0])]


def k_pieces(model: RandomModel, omega, eps: float, max_pieces: int = 200_000):
    """Disjoint intervals covering K_omega at the first depth where all are < eps/64."""
    omega = tuple(int(j) for j in omega)
    for d in range(1, len(omega) + 1):
        E = pieces_at(model, omega, d)
        if E.shape[0] > max_pieces:
            break
        if np.max(E[:, 1] - E[:, 0]) < eps / 64:
            return E, d
    raise PrefixTooShort(f"omega too short to resolve K_omega at scale {eps:g}", field="omega")


def _dist_to_pieces(P, y):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    i = np.searchsorted(P[:, 0], y)
    right = np.where(i < len(P), P[np.minimum(i, len(P) - 1), 0] - y, np.inf)
    left_idx = np.maximum(i - 1, 0)
    inside = (i > 0) & (y <= P[left_idx, 1])
    left = np.where(i > 0, y - P[left_idx, 1], np.inf)
    return np.where(inside, 0.0, np.minimum(left, right))


@dataclass(frozen=True)
class TriadicPartition:
    edges: np.ndarray
    meets_K: np.ndarray
    core: np.ndarray        # (cells, 2) conv(K ∩ V_j), nan where empty
    eps: float
    A1_prime: float
    A1: float
    A2: float
    triple_ok: bool
    unsplit: int
    moved: int
    depth: int

    @property
    def cells(self) -> int:
        return self.edges.size - 1

    def cell_of(self, x):
        return np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.cells - 1)


def triadic_partition(model: RandomModel, omega, eps: float) -> TriadicPartition:
    """Partition of [0,1] into cells of size ~eps whose boundaries avoid K_omega."""
    margin = model.nu.ifs.endpoint_margin
    if not 0 < eps < margin:
        raise EpsilonTooLarge(f"eps = {eps:g} must be below the endpoint margin {margin:.4g}",
                              field="eps")
    P, depth = k_pieces(model, omega, eps)
    p = math.ceil(1.0 / eps - 1e-12)
    x = np.linspace(0.0, 1.0, p + 1)
    gl = np.concatenate([[P[0, 0] - eps / 2], P[:, 1]])
    gr = np.concatenate([P[:, 0], [P[-1, 1] + eps / 2]])
    mid, size = (gl + gr) / 2, gr - gl
    moved = 0
    d = _dist_to_pieces(P, x[1:-1])
    for t in np.flatnonzero(d < eps / 8):
        xi = x[t + 1]
        ok = np.flatnonzero(np.abs(mid - xi) <= eps / 4)
        if ok.size:
            x[t + 1] = mid[ok[np.argmax(size[ok])]]
            moved += 1
    # refine the pieces until every cell meeting K holds at least three of them
    omega = tuple(int(j) for j in omega)
    while depth < len(omega):
        counts = np.array([np.count_nonzero((P[:, 0] >= a) & (P[:, 1] <= b))
                           for a, b in zip(x[:-1], x[1:])])
        if np.all((counts == 0) | (counts >= 3)):
            break
        finer = pieces_at(model, omega, depth + 1)
        if finer.shape[0] > 200_000:
            break
        P, depth = finer, depth + 1
    edges = [0.0]
    unsplit = 0
    for a, b in zip(x[:-1], x[1:]):
        inside = np.flatnonzero((P[:, 0] >= a) & (P[:, 1] <= b))
        if inside.size >= 3:
            g = P[inside[1:], 0] - P[inside[:-1], 1]
            top = np.sort(np.argsort(g)[-2:])
            for t in top:
                edges.append(0.5 * (P[inside[t], 1] + P[inside[t + 1], 0]))
        elif inside.size:
            unsplit += 1
        edges.append(b)
    edges = np.array(edges)
    ncell = edges.size - 1
    core = np.full((ncell, 2), np.nan)
    meets = np.zeros(ncell, dtype=bool)
    for j in range(ncell):
        inside = np.flatnonzero((P[:, 0] >= edges[j]) & (P[:, 1] <= edges[j + 1]))
        if inside.size:
            meets[j] = True
            core[j] = P[inside[0], 0], P[inside[-1], 1]
    lengths = np.diff(edges)
    bd = _dist_to_pieces(P, edges)
    A2 = float(np.min(np.minimum(bd[:-1], bd[1:]) / lengths))
    triple = True
    for j in np.flatnonzero(meets):
        nb = [k for k in range(max(0, j - 2), min(ncell, j + 3)) if k != j and meets[k]]
        triple &= len(nb) >= 2
    return TriadicPartition(edges, meets, core, eps, float(lengths.min() / eps),
                            float(lengths.max() / eps), A2, bool(triple), unsplit, moved, depth)


# ---------------------------------------------------------------------------
# Dolgopyat operators

def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3 - 2 * t), 6 * t * (1 - t)


def cutoff(part: TriadicPartition, x):
    """(chi_j(x), chi_j'(x)) for the cell j containing x; zero on cells missing K."""
    x = np.asarray(x, dtype=float)
    j = part.cell_of(x)
    v0, v1 = part.edges[j], part.edges[j + 1]
    k0, k1 = part.core[j, 0], part.core[j, 1]
    ok = part.meets_K[j]
    k0 = np.where(ok, k0, v0 + 1)
    k1 = np.where(ok, k1, v1 - 1)
    wl = np.where(ok, k0 - v0, 1.0)
    wr = np.where(ok, v1 - k1, 1.0)
    sl, dsl = _smoothstep((x - v0) / wl)
    sr, dsr = _smoothstep((v1 - x) / wr)
    val = np.where(x < k0, sl, np.where(x > k1, sr, 1.0))
    der = np.where(x < k0, dsl / wl, np.where(x > k1, -dsr / wr, 0.0))
    return np.where(ok, val, 0.0), np.where(ok, der, 0.0)


def cutoff_sup_deriv(part: TriadicPartition) -> float:
    j = np.flatnonzero(part.meets_K)
    w = np.minimum(part.core[j, 0] - part.edges[j], part.edges[j + 1] - part.core[j, 1])
    return float(1.5 / w.min())


@dataclass(frozen=True)
class DolgopyatResult:
    J: frozenset
    dense: bool
    eps_prime: float
    theta: float
    A: float
    A3: float
    C_hat: float
    partition: TriadicPartition
    cone_ratio: float           # max |(N H)'| / (A|b| N H)
    dom_value_ratio: float      # max |P f| / N H
    dom_deriv_ratio: float      # max |(P f)'| / (A|b| N H)
    l2_ratio: float
    l2_stderr: float
    n_samples: int
    grid_points: int
    extra: dict = field(default_factory=dict)

    @property
    def cone_ok(self) -> bool:
        return self.cone_ratio <= 1 + 1e-9

    @property
    def domination_ok(self) -> bool:
        return self.dom_value_ratio <= 1 + 1e-9 and self.dom_deriv_ratio <= 1 + 1e-9


def _pair_words(words, N):
    tail = (0,) * (N - 1)
    idx = {w.u: i for i, w in enumerate(words)}
    return idx[(0,) + tail], idx[(1,) + tail]


def dolgopyat_apply(model: RandomModel, omega, s, N: int, H, f, A: float | None = None,
                    theta: float | None = None, eps_prime: float = 1.0,
                    n_samples: int = 100_000, seed: int = 0, per_cell: int = 16,
                    sample_depth: int | None = None) -> DolgopyatResult:
    """Build N_s^J = P_{a,omega,N}(chi_J .) for one (omega, H, f) and verify it.

    H and f are (function, derivative) pairs of callables on [0, 1]. The
    record covers cone stability, domination of P_{s,omega,N} f and the L2
    contraction against mu_{sigma^N omega} (Monte Carlo).
    """
    omega = tuple(int(j) for j in omega)
    s = complex(s)
    a, b = s.real, s.imag
    if abs(b) < 1:
        raise ValidationError("need |Im s| >= 1", field="s")
    words = local_words(model, omega, N)
    i1, i2 = _pair_words(words, N)
    xs = np.linspace(0.0, 1.0, 2049)
    C_hat = 2 * np.pi * max(float(np.max(np.abs(w.map.dlog(xs)))) for w in words)
    A_user = A
    h, dh = H
    fv, df = f

    def check_inputs(A):
        hx = h(xs)
        if np.any(hx <= 0) or np.any(np.abs(dh(xs)) > A * abs(b) * hx * (1 + 1e-12)):
            raise ConeViolation("H is not in the cone C_{A|b|}", field="H")
        if np.any(np.abs(fv(xs)) > hx * (1 + 1e-12)) or \
                np.any(np.abs(df(xs)) > A * abs(b) * hx * (1 + 1e-12)):
            raise ConeViolation("f is not dominated by H", field="f")

    tail = omega[N:]
    if sample_depth is None:
        sample_depth = len(tail)
    if len(tail) < 4:
        raise PrefixTooShort("omega needs at least N + 4 symbols", field="omega")

    def jets(x):
        out = []
        for w in words:
            d = w.map.deriv(x)
            out.append((w.map.value(x), d, -np.log(np.abs(d)), -w.map.dlog(x), w.eta))
        return out

    def theta_fns(x, th):
        J_ = jets(x)
        z, den = [], []
        for i in (i1, i2):
            y, d, c, dc, eta = J_[i]
            z.append(np.exp(2 * np.pi * s * c) * eta * fv(y))
            den.append(np.exp(2 * np.pi * a * c) * eta * h(y))
        top = np.abs(z[0] + z[1])
        return (top / ((1 - 2 * th) * den[0] + den[1]),
                top / (den[0] + (1 - 2 * th) * den[1]))

    for attempt in range(2):
        eps = eps_prime / abs(b)
        part = triadic_partition(model, tail, eps)
        A3 = cutoff_sup_deriv(part) * eps_prime / abs(b)
        # theta <= eps'(A - 1) / (4 A3) keeps the cone stable; with theta fixed
        # (1/8 by default) A is raised to the smallest value meeting it
        A = A_user if A_user is not None else max(2.0, 4 * C_hat)
        if theta is None and A_user is not None:
            th = min(0.125, eps_prime * (A - 1) / (4 * A3))
        else:
            th = 0.125 if theta is None else theta
            if A_user is None:
                A = max(A, 1 + 4 * A3 * th / eps_prime)
        check_inputs(A)
        cells = np.flatnonzero(part.meets_K)
        grid = [np.linspace(part.edges[j], part.edges[j + 1], per_cell) for j in range(part.cells)]
        for j in cells:
            v0, v1 = part.edges[j], part.edges[j + 1]
            k0, k1 = part.core[j]
            grid += [np.linspace(v0, k0, 9), np.linspace(k0, k1, 5), np.linspace(k1, v1, 9)]
        grid = np.unique(np.concatenate(grid))
        t1, t2 = theta_fns(grid, th)
        J = set()
        for j in cells:
            sel = (grid >= part.edges[j]) & (grid <= part.edges[j + 1])
            if np.all(t1[sel] <= 1):
                J.add((0, int(j)))
            if np.all(t2[sel] <= 1):
                J.add((1, int(j)))
        inJ = np.zeros((2, part.cells), dtype=bool)
        for i, j in J:
            inJ[i, j] = True
        anyJ = inJ.any(axis=0)
        dense = all(anyJ[max(0, j - 2):j + 3].any() for j in cells)
        if J:
            break
        eps_prime /= 2
    else:
        raise DenseSetEmpty("J is empty after refining eps' once")

    def NH(x):
        chi, dchi = cutoff(part, x)
        j = part.cell_of(x)
        v = np.zeros_like(x)
        dv = np.zeros_like(x)
        for k, (y, d, c, dc, eta) in enumerate(jets(x)):
            w = np.exp(2 * np.pi * a * c) * eta
            cj, dcj = np.ones_like(x), np.zeros_like(x)
            for i, idx in ((0, i1), (1, i2)):
                if k == idx:
                    on = inJ[i, j]
                    cj = np.where(on, 1 - th * chi, 1.0)
                    dcj = np.where(on, -th * dchi, 0.0)
            hy = h(y)
            v += w * cj * hy
            dv += w * (2 * np.pi * a * dc * cj * hy + dcj * hy + cj * dh(y) * d)
        return v, dv

    def Pf(x):
        v = np.zeros_like(x, dtype=complex)
        dv = np.zeros_like(x, dtype=complex)
        for y, d, c, dc, eta in jets(x):
            w = np.exp(2 * np.pi * s * c) * eta
            fy = fv(y)
            v += w * fy
            dv += w * (2 * np.pi * s * dc * fy + df(y) * d)
        return v, dv

    check = np.unique(np.concatenate([grid, np.linspace(0, 1, 4097)]))
    nh, dnh = NH(check)
    pf, dpf = Pf(check)
    Ab = A * abs(b)
    cone_ratio = float(np.max(np.abs(dnh) / (Ab * nh)))
    dom_v = float(np.max(np.abs(pf) / nh))
    dom_d = float(np.max(np.abs(dpf) / (Ab * nh)))

    y = sample_mu_omega(model, tail, sample_depth, n_samples, seed, task="dolgopyat_l2")
    num = NH(y)[0] ** 2
    den = np.zeros_like(y)
    for yy, d, c, dc, eta in jets(y):
        den += eta * h(yy) ** 2
    mn, md = num.mean(), den.mean()
    r = mn / md
    cov = np.cov(num, den)
    var = (cov[0, 0] / mn ** 2 + cov[1, 1] / md ** 2 - 2 * cov[0, 1] / (mn * md)) / y.size
    se = float(abs(r) * math.sqrt(max(var, 0.0)))
    return DolgopyatResult(frozenset(J), dense, eps_prime, th, A, A3, C_hat, part,
                           cone_ratio, dom_v, dom_d, float(r), se, int(y.size), int(check.size),
                           extra={"cells_with_K": int(cells.size), "J_size": len(J)})
