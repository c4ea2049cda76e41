"""Linearization bookkeeping, parameter schedule, and the end-to-end decay report."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import OrientationReversing, ValidationError
from .ifs_core import compose_word, induce
from .measure import (SelfConformalMeasure, cylinder_depth, cylinder_leaves, decay_exponent,
                      fourier_cylinder, increments, sample_points, self_conformal, sup_ball_mass)
from .renewal import coding_depth, detect_lattice, walk_samples
from .transfer_op import DEFAULT_STRIP

BETA = 0.5
SENSITIVITY_EPS = (0.02, 0.05, 0.1)
_MAX_LEAVES = 2 ** 14


# ---------------------------------------------------------------------------
# schedule

@dataclass(frozen=True)
class ScheduleEntry:
    q: float
    k: float
    r: float
    beta: float
    eps: float
    linearization: float
    equidistribution: float
    oscillatory: float


def k_of_q(q: float, eps: float) -> float:
    return math.log(abs(q)) / (1 + eps / 7)


def predicted_rates(eps: float, beta: float = BETA, d: float = 0.5) -> dict:
    """Exponential rates in k of the three error terms at the scheduled parameters."""
    return {
        "linearization": eps * (1 / 8 + beta / 8 - 1 / 7),
        "equidistribution": eps * (1 / 2 - 3 / 7),
        "oscillatory": min(eps * (1 / 7 - 1 / 8 - 1 / 100), d * eps / 100),
    }


def schedule(q_list: Sequence[float], eps: float = DEFAULT_STRIP, beta: float = BETA,
             d: float = 0.5) -> list:
    """k(q) from |q| = exp(k + k eps / 7), r = exp(-k eps / 100), and the predicted terms."""
    if eps <= 0:
        raise ValidationError("eps must be positive", field="eps")
    out = []
    for q in q_list:
        if abs(q) <= 1:
            raise ValidationError("scheduled frequencies need |q| > 1", field="q_list")
        k = k_of_q(q, eps)
        r = math.exp(-k * eps / 100)
        a = abs(q)
        lin = a * math.exp(-(k + k * eps / 8) - beta * k * eps / 8)
        equi = math.exp(-eps * k / 2) * (a * math.exp(-k)) ** 3
        osc = 1.0 / (r * a * math.exp(-(k + eps * k / 8))) + math.exp(-d * eps * k / 100)
        out.append(ScheduleEntry(float(q), k, r, beta, eps, lin, equi, osc))
    return out


# ---------------------------------------------------------------------------
# pushed measures

def _pushed_words(w):
    """Group samples by the word omega_{tau+1..beta} (0-based slice tau:beta)."""
    groups: dict = {}
    for i in range(w.count):
        word = tuple(int(a) for a in w.prefix[i, w.tau[i]:w.beta[i]])
        groups.setdefault(word, []).append(i)
    return {k: np.array(v) for k, v in groups.items()}


def _leaves(nu, q_eff, tol):
    m = cylinder_depth(nu, max(q_eff, 1e-12), tol)
    m = min(m, max(1, int(math.log(_MAX_LEAVES) / math.log(nu.n))))
    X, W = cylinder_leaves(nu, m)
    err = 2 * math.pi * q_eff * nu.ifs.rho ** m * nu.ifs.diam
    return X, W, err


def _image(nu, word, X):
    return X if not word else compose_word(nu.ifs, word).value(X)


def _deriv_range(nu, word):
    if not word:
        return 1.0, 1.0
    xs = np.linspace(*nu.ifs.hull, 33)
    d = np.abs(compose_word(nu.ifs, word).deriv(xs))
    return float(d.min()), float(d.max())


def _transform(Y, W, freqs):
    """|sum_j W_j exp(2 pi i f Y_j)|^2 for each f."""
    return np.abs(np.exp(2j * np.pi * np.outer(freqs, Y)) @ W) ** 2


def _require_preserving(nu):
    if not nu.ifs.orientation_preserving:
        raise OrientationReversing("linearization needs an orientation-preserving IFS; "
                                   "pass the measure of the second iterate instead")


@dataclass(frozen=True)
class LinearizationGap:
    q: float
    k: float
    lhs: float
    rhs: float
    error_term: float
    slack: float
    stderr: float
    defect: float
    theta_constant: float
    bracket_ok: bool
    n_samples: int
    truncation: float

    @property
    def ok(self) -> bool:
        return self.slack >= -4 * self.stderr


def linearization_gap(nu: SelfConformalMeasure, q: float, k: float, n_mc: int, seed: int,
                      eps: float = DEFAULT_STRIP, beta: float = BETA, tol: float = 1e-6,
                      theta_constant: float | None = None) -> LinearizationGap:
    """Both sides of |F_q(nu)|^2 <= E|F_q(M_{exp(-S_tau)} f_w nu)|^2 + error term.

    Here w = omega_{tau+1} ... omega_{beta}. The inner transforms use cylinder
    leaves of nu pushed through f_w, shared by all samples with the same word.
    ``defect`` is the mean of | |F_q(f_{omega|beta} nu)|^2 - |F_q(M f_w nu)|^2 |,
    the linearization error actually incurred.
    """
    _require_preserving(nu)
    w = walk_samples(nu, k, n_mc, seed, tail_len=0, eps=eps, keep_paths=True, task="linearization")
    groups = _pushed_words(w)
    X, W, trunc = _leaves(nu, abs(q) * math.exp(-k), tol)
    scale = np.exp(-w.S_tau)
    inner = np.empty(w.count)
    full = np.empty(w.count)
    shrink = math.exp(-eps * k / 8)
    lo_ratio, hi_ratio = math.inf, 0.0
    for word, idx in groups.items():
        Y = _image(nu, word, X)
        inner[idx] = _transform(Y, W, q * scale[idx])
        dmin, dmax = _deriv_range(nu, word)
        lo_ratio = min(lo_ratio, dmin / shrink)
        hi_ratio = max(hi_ratio, dmax / shrink)
    for i in range(w.count):
        word = tuple(int(a) for a in w.prefix[i, :w.beta[i]])
        full[i] = _transform(_image(nu, word, X), W, [q])[0]
    err = abs(q) * math.exp(-(k + k * eps / 8) - beta * k * eps / 8)
    lhs = abs(fourier_cylinder(nu, q, tol).value) ** 2
    rhs = float(inner.mean()) + err
    se = float(inner.std(ddof=1) / math.sqrt(w.count)) if w.count > 1 else 0.0
    Cp = max(hi_ratio, 1.0 / lo_ratio)
    ok = True if theta_constant is None else bool(Cp <= theta_constant)
    return LinearizationGap(float(q), float(k), lhs, rhs, err, rhs - lhs, se,
                            float(np.mean(np.abs(full - inner))), float(Cp), ok, w.count, trunc)


@dataclass(frozen=True)
class OscillatoryBound:
    q: float
    k: float
    r: float
    integral_estimate: float
    stderr: float
    bound_value: float
    sup_mass: float
    equidistribution_defect: float

    @property
    def ratio(self) -> float:
        return self.integral_estimate / self.bound_value


def overshoot_density(nu: SelfConformalMeasure, u, n_samples: int = 200000, seed: int = 0):
    """Limit density P(Y > u) / chi of the overshoot, Y ~ kappa."""
    y = np.sort(increments(nu, n_samples, coding_depth(nu), seed, task="overshoot_density"))
    tail = 1.0 - np.searchsorted(y, np.asarray(u), side="right") / y.size
    return tail / y.mean()


def oscillatory_bound(nu: SelfConformalMeasure, q: float, k: float, r: float, n_mc: int, seed: int,
                      eps: float = DEFAULT_STRIP, n_t: int = 64, tol: float = 1e-6,
                      mass_samples: int = 200000, tail_len: int = 4) -> OscillatoryBound:
    """E over xi of int_0^{D'} |F_q(M_{exp(-t-k)} f_w nu)|^2 dt against its bound.

    The bound is 1/(r |q| exp(-(k + eps k/8))) + sup_y nu(B_r(y)).
    The same integrands give the equidistribution defect: the gap between
    E g(S_tau - k) and the limit (1/chi) int g(u) P(Y > u) du, aggregated over
    bins of the first ``tail_len`` symbols after tau.
    """
    if r <= 0:
        raise ValidationError("r must be positive", field="r")
    Dp = nu.ifs.D_prime
    w = walk_samples(nu, k, n_mc, seed, tail_len=tail_len, eps=eps, keep_paths=True,
                     task="oscillatory")
    groups = _pushed_words(w)
    X, W, _ = _leaves(nu, abs(q) * math.exp(-k), tol)
    tn, tw = np.polynomial.legendre.leggauss(n_t)
    t = (tn + 1) * Dp / 2
    tw = tw * Dp / 2
    h = overshoot_density(nu, t, seed=seed)
    integ = np.empty(w.count)
    at_u = np.empty(w.count)
    limit = np.empty(w.count)
    u = w.overshoot
    for word, idx in groups.items():
        Y = _image(nu, word, X)
        g = _transform(Y, W, q * np.exp(-t - k))
        integ[idx] = g @ tw
        limit[idx] = (g * h) @ tw
        at_u[idx] = _transform(Y, W, q * np.exp(-u[idx] - k))
    x = np.sort(sample_points(nu, mass_samples, coding_depth(nu), seed, task="sup_mass"))
    mass = min(1.0, sup_ball_mass(x, r)) if r < nu.ifs.diam else 1.0
    bound = 1.0 / (r * abs(q) * math.exp(-(k + eps * k / 8))) + mass
    # equidistribution defect, binned on the tail prefix
    codes = np.zeros(w.count, dtype=np.int64)
    for j in range(tail_len):
        codes = codes * nu.n + w.tail[:, j]
    nb = nu.n ** tail_len
    cnt = np.bincount(codes, minlength=nb).astype(float)
    diff = np.bincount(codes, weights=at_u - limit, minlength=nb)
    keep = cnt > 0
    defect = float(np.sum(np.abs(diff[keep])) / w.count)
    se = float(integ.std(ddof=1) / math.sqrt(w.count)) if w.count > 1 else 0.0
    return OscillatoryBound(float(q), float(k), float(r), float(integ.mean()), se, float(bound),
                            float(mass), defect)


# ---------------------------------------------------------------------------
# report

@dataclass(frozen=True)
class TermCheck:
    term: str
    predicted_rate: float
    measured_rate: float
    ok: bool


@dataclass(frozen=True)
class DecayReport:
    alpha: float
    fit: object
    lattice_span: float | None
    eps: float
    entries: list
    linearization: list
    oscillatory: list
    terms: list
    sensitivity: list
    linearization_measure: str = "nu"
    notes: list = field(default_factory=list)

    @property
    def slack_fraction(self) -> float:
        if not self.linearization:
            return float("nan")
        return float(np.mean([g.ok for g in self.linearization]))

    @property
    def empty(self) -> bool:
        return self.fit is None


def _rate(ks, vals):
    ks, vals = np.asarray(ks), np.asarray(vals)
    good = vals > 0
    if good.sum() < 2:
        return float("nan")
    return float(-np.polyfit(ks[good], np.log(vals[good]), 1)[0])


def second_iterate(nu: SelfConformalMeasure) -> SelfConformalMeasure:
    """The same measure written with the maps f_a o f_b and weights p_a p_b."""
    ifs2 = induce(nu.ifs, 2)
    p = [nu.p[a] * nu.p[b] for a in range(nu.n) for b in range(nu.n)]
    return self_conformal(ifs2, p)


def decay_report(nu: SelfConformalMeasure, q_range, eps: float = DEFAULT_STRIP,
                 blocks: int | None = None, n_points: int = 8, n_mc: int = 2000, seed: int = 0,
                 tol: float = 1e-4, d: float | None = None) -> DecayReport:
    """Decay exponent over q_range plus the linearization, equidistribution and
    oscillatory bookkeeping at a geometric subsample of scheduled frequencies."""
    if eps <= 0:
        raise ValidationError("eps must be positive", field="eps")
    if not q_range:
        return DecayReport(float("nan"), None, None, eps, [], [], [], [], [])
    q_min, q_max = float(q_range[0]), float(q_range[1])
    if not 1 <= q_min < q_max:
        raise ValidationError("q_range must satisfy 1 <= q_min < q_max", field="q_range")
    if blocks is None:
        blocks = max(4, int(math.floor(math.log2(q_max / q_min) + 1e-9)))
    notes = []
    span = detect_lattice(nu, seed=seed)
    if span is not None:
        notes.append(f"lattice obstruction: increments on a lattice of span {span:.6g}")
    fit = decay_exponent(nu, q_min, q_max, blocks, tol=tol)
    lin_nu, which = nu, "nu"
    if not nu.ifs.orientation_preserving:
        lin_nu, which = second_iterate(nu), "second iterate"
        notes.append("orientation-reversing maps: linearization run on the second iterate")
    if d is None:
        d = 0.5
    entries = schedule(np.geomspace(q_min, q_max, n_points), eps, d=d)
    lins, oscs = [], []
    for j, e in enumerate(entries):
        lins.append(linearization_gap(lin_nu, e.q, e.k, n_mc, seed + j, eps))
        oscs.append(oscillatory_bound(lin_nu, e.q, e.k, e.r, n_mc, seed + j, eps))
    ks = [e.k for e in entries]
    pred = predicted_rates(eps, BETA, d)
    measured = {
        "linearization": _rate(ks, [g.defect for g in lins]),
        "equidistribution": _rate(ks, [o.equidistribution_defect for o in oscs]),
        "oscillatory": _rate(ks, [o.integral_estimate for o in oscs]),
    }
    terms = [TermCheck(t, pred[t], measured[t],
                       bool(np.isfinite(measured[t]) and measured[t] >= 0.5 * pred[t]))
             for t in ("linearization", "equidistribution", "oscillatory")]
    sens = []
    for e2 in SENSITIVITY_EPS:
        p2 = predicted_rates(e2, BETA, d)
        sens.append({"eps": e2, "alpha_q": fit.alpha, "alpha_k": fit.alpha * (1 + e2 / 7), **p2})
    return DecayReport(fit.alpha, fit, span, eps, entries, lins, oscs, terms, sens, which, notes)
