"""Command-line front end: config ingestion, experiment runs, CSV/SVG output."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CostCapExceeded, DecayLabError, NotUNI, ParseError, ValidationError
from .ifs_core import cantor, find_uni_quadruple, gauss24, ifs_from_specs, uni_functional, uniform

COMMANDS = ("uni-check", "model-verify", "spectral-scan", "renewal-test", "decay-report")
MC_COMMANDS = {"model-verify", "renewal-test", "decay-report"}
NAMED_IFS = {"CANTOR": cantor, "GAUSS24": gauss24, "UNIFORM": uniform}
DEFAULT_CAPS = {"leaves": 10 ** 7, "samples": 10 ** 7}
PARAMS = {
    "uni-check": {"grid": int, "search_budget": int, "mode": str},
    "model-verify": {"n_mc": int, "mode": str, "extra": int, "s_re": float, "s_im": float},
    "spectral-scan": {"a": float, "b_list": list, "n": int, "M": int, "flavor": str},
    "renewal-test": {"n_mc": int, "g": str, "k_list": list, "tail_len": int},
    "decay-report": {"n_mc": int, "q_range": list, "blocks": int, "n_points": int},
}


@dataclass
class ExperimentConfig:
    command: str | None
    ifs_spec: object
    ifs: object
    p: tuple | None
    params: dict
    seed: int | None
    caps: dict
    eps: float
    out: str
    digest: str
    threads: int = 1
    extra: dict = field(default_factory=dict)


def _parse_p(raw):
    if raw is None:
        return None
    if not isinstance(raw, list) or not raw:
        raise ValidationError("p must be a non-empty list", field="p")
    out = []
    for i, v in enumerate(raw):
        if isinstance(v, bool):
            raise ValidationError(f"p[{i}] is not a number", field=f"p[{i}]")
        if isinstance(v, int):
            out.append(Fraction(v))
        elif isinstance(v, float):
            out.append(v)
        elif isinstance(v, str):
            try:
                out.append(Fraction(v.strip()))
            except (ValueError, ZeroDivisionError):
                raise ValidationError(f"p[{i}] = {v!r} is not a number", field=f"p[{i}]")
        else:
            raise ValidationError(f"p[{i}] is not a number", field=f"p[{i}]")
    if all(isinstance(v, Fraction) for v in out):
        if sum(out) != 1:
            raise ValidationError("p must sum to 1", field="p")
    elif abs(math.fsum(float(v) for v in out) - 1.0) > 1e-12:
        raise ValidationError("p must sum to 1", field="p")
    if any(float(v) <= 0 for v in out):
        raise ValidationError("p must be strictly positive", field="p")
    return tuple(out)


def _build_ifs(spec):
    if isinstance(spec, str):
        key = spec.upper()
        if key not in NAMED_IFS:
            raise ValidationError(f"unknown IFS name {spec!r}; expected one of {sorted(NAMED_IFS)}",
                                  field="ifs")
        return NAMED_IFS[key]()
    if isinstance(spec, dict) and "maps" in spec:
        spec = spec["maps"]
    if isinstance(spec, list):
        return ifs_from_specs(spec)
    raise ValidationError("ifs must be a name or a list of map specs", field="ifs")


def parse_config(path) -> ExperimentConfig:
    """Read and validate a JSON experiment config. Nothing is computed here."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}", field="config")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON at line {exc.lineno}: {exc.msg}", field="config")
    if not isinstance(raw, dict):
        raise ParseError("config must be a JSON object", field="config")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    command = raw.get("command")
    if command is not None and command not in COMMANDS:
        raise ValidationError(f"unknown command {command!r}", field="command")
    if "ifs" not in raw:
        raise ValidationError("missing 'ifs'", field="ifs")
    ifs = _build_ifs(raw["ifs"])
    p = _parse_p(raw.get("p"))
    if p is not None and len(p) != ifs.n:
        raise ValidationError(f"p has {len(p)} entries but the IFS has {ifs.n} maps", field="p")
    params = raw.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ValidationError("params must be an object", field="params")
    seed = raw.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ValidationError("seed must be a non-negative integer", field="seed")
    caps = dict(DEFAULT_CAPS)
    for key, v in (raw.get("caps") or {}).items():
        if key not in DEFAULT_CAPS:
            raise ValidationError(f"unknown cap {key!r}", field=f"caps.{key}")
        if not isinstance(v, (int, float)) or v <= 0:
            raise ValidationError("caps must be positive numbers", field=f"caps.{key}")
        caps[key] = int(v)
    eps = raw.get("eps", 0.05)
    if not isinstance(eps, (int, float)) or not 0 < eps < 1:
        raise ValidationError("eps must lie in (0, 1)", field="eps")
    out = raw.get("out", "results")
    cfg = ExperimentConfig(command, raw["ifs"], ifs, p, params, seed, caps, float(eps), str(out),
                           "", extra={"raw": raw})
    cfg.digest = config_digest(cfg)
    return cfg


def config_digest(cfg: ExperimentConfig) -> str:
    """Hash of the config content plus the effective seed and eps (not the output path)."""
    raw = {k: v for k, v in cfg.extra.get("raw", {}).items() if k != "out"}
    raw.update(seed=cfg.seed, eps=cfg.eps)
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def validate_params(cfg: ExperimentConfig, command: str):
    schema = PARAMS[command]
    for name, value in cfg.params.items():
        if name not in schema:
            raise ValidationError(f"unknown parameter {name!r} for {command}", field=f"params.{name}")
        kind = schema[name]
        if kind is str:
            if not isinstance(value, str):
                raise ValidationError(f"params.{name} must be a string", field=f"params.{name}")
        else:
            _param(cfg, name, value, kind)


# ---------------------------------------------------------------------------
# output

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    if isinstance(v, complex):
        return f"{v.real:.12g}{v.imag:+.12g}j"
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    if v is None:
        return ""
    return str(v)


def write_atomic(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header, rows, cfg: ExperimentConfig, command: str):
    buf = io.StringIO(newline="")
    buf.write(f"# decaylab {__version__} command={command} config={cfg.digest} seed={_fmt(cfg.seed)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    write_atomic(path, buf.getvalue().encode("utf-8"))


def _measure(cfg):
    from .measure import self_conformal
    return self_conformal(cfg.ifs, cfg.p)


def _check_samples(cfg, n, name):
    if n > cfg.caps["samples"]:
        raise CostCapExceeded(f"{name} = {n} exceeds the sample cap {cfg.caps['samples']}")


def _param(cfg, name, default, kind=float):
    v = cfg.params.get(name, default)
    try:
        if kind is list:
            if not isinstance(v, list):
                raise TypeError
            return [float(x) for x in v]
        if kind is int and (isinstance(v, bool) or int(v) != v):
            raise TypeError
        return kind(v)
    except (TypeError, ValueError):
        raise ValidationError(f"params.{name} has the wrong type", field=f"params.{name}")


# ---------------------------------------------------------------------------
# commands

def cmd_uni_check(cfg, out: Path):
    ifs = cfg.ifs
    grid = _param(cfg, "grid", 1024, int)
    xs = np.linspace(0.0, 1.0, grid)
    rows = []
    for i in range(ifs.n):
        for j in range(i + 1, ifs.n):
            u = np.abs(uni_functional(ifs, (i,), (j,), xs))
            rows.append(("pair", f"{i}-{j}", float(u.min()), float(u.max())))
    try:
        quad = find_uni_quadruple(ifs, search_budget=_param(cfg, "search_budget", 12, int),
                                  mode=cfg.params.get("mode", "case1"), grid=grid)
        verdict = "UNI"
        rows.append(("quadruple", " ".join("".join(map(str, w)) for w in quad.words),
                     quad.m, quad.m_prime))
        rows.append(("separation", f"N={quad.N}", quad.separation_gap, quad.gap_target))
    except NotUNI as exc:
        verdict = "NOT-UNI"
        rows.append(("note", str(exc), None, None))
    rows.append(("verdict", verdict, None, None))
    write_csv(out / "uni_check.csv", ("item", "label", "min", "max"), rows, cfg, "uni-check")
    return {"verdict": verdict}


def cmd_model_verify(cfg, out: Path):
    from .measure import fourier_cylinder, fourier_mc
    from .random_model import (build_model, check_operator_disintegration, federer_constant,
                               marginal_residuals, quadruple_parent, sample_disintegrated,
                               sample_omega, word_weight_residual)
    seed = cfg.seed
    n_mc = _param(cfg, "n_mc", 100000, int)
    _check_samples(cfg, n_mc, "params.n_mc")
    quad = find_uni_quadruple(cfg.ifs, mode=cfg.params.get("mode", "case1"))
    nu, idx = quadruple_parent(cfg.ifs, quad, extra=_param(cfg, "extra", 1, int))
    model = build_model(nu, idx)
    rows = []
    res = marginal_residuals(model)
    rows.append(("marginal_identity", "", max(abs(float(r)) for r in res), 0.0,
                 all(r == 0 for r in res)))
    ww = word_weight_residual(model, 2)
    rows.append(("word_weights", "N=2", float(ww), 0.0, ww == 0))
    g = lambda x: np.cos(7 * x) + x ** 2  # noqa: E731
    xg = np.linspace(0, 1, 101)
    s = complex(cfg.params.get("s_re", 0.01), cfg.params.get("s_im", 5.0))
    for N in (1, 2):
        r = check_operator_disintegration(model, s, N, g, xg)
        rows.append(("operator_disintegration", f"N={N}", r, 1e-10, r < 1e-10))
    for q in (1, 5, 10):
        x = sample_disintegrated(model, n_mc, 6, seed + q)
        e = fourier_mc(nu, q, n_mc, 6, seed, points=x)
        c = fourier_cylinder(nu, q, 1e-8, cap=cfg.caps["leaves"])
        d = abs(e.value - c.value)
        tol = 4 * math.hypot(*e.stderr)
        rows.append(("fourier_crosscheck", f"q={q}", d, tol, d <= tol))
    omega = sample_omega(model, 40, seed)
    c15 = federer_constant(model, omega, 2, depth=15, seed=seed).C
    c20 = federer_constant(model, omega, 2, depth=20, seed=seed).C
    rel = abs(c15 - c20) / c20
    rows.append(("federer_stability", "depth 15 vs 20", rel, 0.1, rel <= 0.1))
    write_csv(out / "model_verify.csv", ("check", "detail", "value", "tolerance", "pass"), rows,
              cfg, "model-verify")
    return {"all_pass": all(r[4] for r in rows)}


def cmd_spectral_scan(cfg, out: Path):
    from .transfer_op import spectral_gap_scan
    nu = _measure(cfg)
    b_list = _param(cfg, "b_list", [50, 100, 200], list)
    res = spectral_gap_scan(nu, _param(cfg, "a", 0.0), b_list, n=_param(cfg, "n", 40, int),
                            M=_param(cfg, "M", 256, int), strip=cfg.eps,
                            flavor=cfg.params.get("flavor", "b"))
    rows = [(r.b, r.alpha, r.C, r.n, r.M) for r in res.rows]
    write_csv(out / "spectral_scan.csv", ("b", "alpha", "C", "n", "M"), rows, cfg, "spectral-scan")
    return {"max_alpha": float(max(res.alphas()))}


def window_bump(D_prime):
    """Smooth bump supported on the overshoot window [0, D']."""
    def g(u):
        v = (2 * np.asarray(u, dtype=float) - D_prime) / D_prime
        out = np.zeros_like(v)
        inside = np.abs(v) < 1
        out[inside] = np.exp(-1.0 / (1.0 - v[inside] ** 2))
        return out
    return g


def cmd_renewal_test(cfg, out: Path):
    from .renewal import equidistribution_test
    nu = _measure(cfg)
    n_mc = _param(cfg, "n_mc", 10 ** 6, int)
    _check_samples(cfg, n_mc, "params.n_mc")
    kind = cfg.params.get("g", "bump")
    if kind == "bump":
        g = window_bump(nu.ifs.D_prime)
    elif kind == "one":
        g = np.ones_like
    else:
        raise ValidationError("params.g must be 'bump' or 'one'", field="params.g")
    res = equidistribution_test(nu, g, _param(cfg, "k_list", [6, 8, 10, 12], list), n_mc, cfg.seed,
                                tail_len=_param(cfg, "tail_len", 4, int), eps=cfg.eps)
    rows = []
    for tab, e in zip(res.tables, res.errors):
        for b, est, se in zip(tab.bins, tab.estimates, tab.stderrs):
            rows.append((tab.k, "".join(map(str, b)), est, tab.limit, abs(est - tab.limit), se))
        rows.append((tab.k, "all", tab.unconditional, tab.limit, e, tab.unconditional_stderr))
    write_csv(out / "renewal_test.csv", ("k", "bin", "estimate", "limit", "error", "stderr"), rows,
              cfg, "renewal-test")
    summary = [(k, e, nf, u) for k, e, nf, u in zip(res.k, res.errors, res.noise, res.used)]
    summary.append(("rate", res.rate, res.rate_ci[0], res.rate_ci[1]))
    write_csv(out / "renewal_rate.csv", ("k", "error", "noise_floor", "used_in_fit"), summary, cfg,
              "renewal-test")
    return {"rate": res.rate}


def cmd_decay_report(cfg, out: Path):
    from .pipeline import decay_report
    from .plotting import decay_figure_svg
    nu = _measure(cfg)
    n_mc = _param(cfg, "n_mc", 2000, int)
    _check_samples(cfg, n_mc, "params.n_mc")
    q_range = _param(cfg, "q_range", [16, 65536], list)
    if len(q_range) not in (0, 2):
        raise ValidationError("params.q_range must be [q_min, q_max] or []", field="params.q_range")
    blocks = cfg.params.get("blocks")
    rep = decay_report(nu, q_range, cfg.eps, blocks=None if blocks is None else int(blocks),
                       n_points=_param(cfg, "n_points", 8, int), n_mc=n_mc, seed=cfg.seed)
    if rep.empty:
        write_csv(out / "decay_report.csv", ("key", "value"), [("alpha", None)], cfg, "decay-report")
        return {"alpha": None}
    fit = rep.fit
    rows = [("alpha", rep.alpha), ("fit_residual", fit.residual), ("eps", rep.eps),
            ("lattice_span", rep.lattice_span), ("linearization_measure", rep.linearization_measure),
            ("slack_fraction", rep.slack_fraction)]
    rows += [("note", n) for n in rep.notes]
    write_csv(out / "decay_report.csv", ("key", "value"), rows, cfg, "decay-report")
    write_csv(out / "decay_blocks.csv", ("q_lo", "q_hi", "q_center", "sup_abs_F", "argmax_q"),
              [(fit.edges[j], fit.edges[j + 1], fit.centers[j], fit.sups[j], fit.argmax_q[j])
               for j in range(fit.sups.size)], cfg, "decay-report")
    sched = []
    for e, g, o in zip(rep.entries, rep.linearization, rep.oscillatory):
        sched.append((e.q, e.k, e.r, g.lhs, g.rhs, g.slack, g.stderr, g.ok, g.defect,
                      g.theta_constant, o.integral_estimate, o.bound_value, o.ratio,
                      o.equidistribution_defect, e.linearization, e.equidistribution, e.oscillatory))
    write_csv(out / "decay_schedule.csv",
              ("q", "k", "r", "lhs", "rhs", "slack", "stderr", "slack_ok", "lin_defect",
               "theta_constant", "osc_integral", "osc_bound", "osc_ratio", "equi_defect",
               "pred_linearization", "pred_equidistribution", "pred_oscillatory"),
              sched, cfg, "decay-report")
    write_csv(out / "decay_terms.csv", ("term", "predicted_rate", "measured_rate", "pass"),
              [(t.term, t.predicted_rate, t.measured_rate, t.ok) for t in rep.terms], cfg,
              "decay-report")
    write_csv(out / "decay_sensitivity.csv",
              ("eps", "alpha_q", "alpha_k", "rate_linearization", "rate_equidistribution",
               "rate_oscillatory"),
              [(s["eps"], s["alpha_q"], s["alpha_k"], s["linearization"], s["equidistribution"],
                s["oscillatory"]) for s in rep.sensitivity], cfg, "decay-report")
    write_atomic(out / "decay_report.svg", decay_figure_svg(fit))
    return {"alpha": rep.alpha}


RUNNERS = {
    "uni-check": cmd_uni_check,
    "model-verify": cmd_model_verify,
    "spectral-scan": cmd_spectral_scan,
    "renewal-test": cmd_renewal_test,
    "decay-report": cmd_decay_report,
}


def run(cfg: ExperimentConfig, command: str | None = None) -> dict:
    command = command or cfg.command
    if command not in COMMANDS:
        raise ValidationError(f"unknown command {command!r}", field="command")
    if cfg.command is not None and cfg.command != command:
        raise ValidationError(f"config is for {cfg.command!r}, not {command!r}", field="command")
    if command in MC_COMMANDS and cfg.seed is None:
        raise ValidationError(f"{command} needs a seed", field="seed")
    validate_params(cfg, command)
    out = Path(cfg.out)
    return RUNNERS[command](cfg, out)


def _threads(value):
    if value is None:
        value = os.environ.get("DECAYLAB_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise ValidationError("threads must be a positive integer", field="threads")
    if n < 1:
        raise ValidationError("threads must be a positive integer", field="threads")
    return n


def _error_record(exc) -> dict:
    return {"error": type(exc).__name__, "message": str(exc),
            "field": getattr(exc, "field", None), "exit_code": getattr(exc, "exit_code", 4)}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="decaylab", description=__doc__)
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    ap.add_argument("--eps", type=float)
    ap.add_argument("--threads")
    args = ap.parse_args(argv)
    out_dir = args.out
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ValidationError("seed must be a non-negative integer", field="seed")
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        out_dir = cfg.out
        if args.eps is not None:
            if not 0 < args.eps < 1:
                raise ValidationError("eps must lie in (0, 1)", field="eps")
            cfg.eps = args.eps
        cfg.threads = _threads(args.threads)
        cfg.digest = config_digest(cfg)
        summary = run(cfg, args.command)
    except DecayLabError as exc:
        rec = _error_record(exc)
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        if out_dir:
            try:
                write_atomic(Path(out_dir) / "error.json",
                             (json.dumps(rec, sort_keys=True, indent=1) + "\n").encode("utf-8"))
            except OSError:
                pass
        return rec["exit_code"]
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(json.dumps(_error_record(exc) | {"exit_code": 4}, sort_keys=True), file=sys.stderr)
        return 4
    print(json.dumps({"command": args.command, "out": cfg.out, **{k: _fmt(v) for k, v in summary.items()}},
                     sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
