"""Command-line entry point: ``gpslab <command> [options]``.

Kernels and free-end weights come from a JSON run configuration::

    {"kernel": {"alpha": 0.5, "analytic_tail": true},
     "free_ends": {"alpha_bar": 3.5},
     "h": 1.0, "t_rule": "linear(0.5)", "N_grid": [100, 200, 400], "seed": 7}

A bare kernel mapping (``{"pmf": {"2": 0.5, "3": 0.25}}``) is accepted as
well.  Command-line flags override configuration values.

Exit codes: 0 success, 1 error, 2 asymptotic specification infeasible at
this size, 64 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Sequence

from .errors import GPSError, SpecInfeasibleError
from .free_energy import TRule, classify_regime, free_energy, solve_cramer_tilt, tilted_law
from .loop_law import FreeEndWeights, LoopLaw, TiltedLaw, free_ends_from_config, law_from_config, load_config

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    kernel: dict
    free_ends: dict = field(default_factory=dict)
    h: float = 1.0
    gamma: float | None = None
    t_rule: TRule | None = None
    N_grid: tuple = ()
    seed: int = 0
    samples: int = 10_000
    C0: float = 64.0

    def __post_init__(self):
        if self.gamma is not None and self.t_rule is not None:
            raise UsageError("give exactly one geometry rule: gamma or t_rule")
        if list(self.N_grid) != sorted(set(self.N_grid)):
            raise UsageError("N_grid must be strictly increasing")

    @classmethod
    def from_mapping(cls, cfg: dict) -> "RunConfig":
        if "kernel" not in cfg:
            return cls(kernel=dict(cfg))
        rule = cfg.get("t_rule")
        return cls(
            kernel=dict(cfg["kernel"]), free_ends=dict(cfg.get("free_ends", {})),
            h=float(cfg.get("h", 1.0)), gamma=cfg.get("gamma"),
            t_rule=TRule.parse(rule) if isinstance(rule, str) else None,
            N_grid=tuple(int(n) for n in cfg.get("N_grid", ())), seed=int(cfg.get("seed", 0)),
            samples=int(cfg.get("samples", 10_000)), C0=float(cfg.get("C0", 64.0)),
        )

    def law(self) -> LoopLaw:
        return law_from_config(self.kernel)

    def free_end_weights(self) -> FreeEndWeights:
        return free_ends_from_config(self.free_ends)


def _config(args) -> RunConfig:
    cfg = RunConfig.from_mapping(load_config(args.config)) if args.config else \
        RunConfig(kernel={"pmf": {"2": 0.5, "3": 0.25}, "label": "two-point"})
    if getattr(args, "h", None) is not None:
        cfg.h = args.h
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "alpha_bar", None) is not None:
        cfg.free_ends = {"alpha_bar": args.alpha_bar}
    if getattr(args, "gamma", None) is not None and getattr(args, "t_rule", None):
        raise UsageError("give exactly one geometry rule: --gamma or --t-rule")
    if getattr(args, "gamma", None) is not None:
        cfg.gamma, cfg.t_rule = args.gamma, None
    if getattr(args, "t_rule", None):
        try:
            cfg.t_rule, cfg.gamma = TRule.parse(args.t_rule), None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if getattr(args, "N_grid", None):
        cfg.N_grid = tuple(args.N_grid)
    return cfg


def _target_M(cfg: RunConfig, tl: TiltedLaw, N: int, M: int | None) -> int:
    if M is not None:
        return M
    if cfg.t_rule is not None:
        return int(round(tl.gamma_c * N + cfg.t_rule(N)))
    if cfg.gamma is not None:
        return int(math.floor(cfg.gamma * N))
    raise UsageError("need --M, --gamma or --t-rule")


# ---------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    if isinstance(x, bool) or x is None:
        return "" if x is None else str(x).lower()
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if x != 0.0 and math.isfinite(x) and abs(x) < 1e-4:
            return f"{x:.10e}"
        return repr(x)
    return str(x)


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def emit(records: Sequence[dict], fmt: str, out) -> None:
    """Write records as CSV (header from the first record), JSON or JSON lines."""
    records = list(records)
    if fmt == "csv":
        if not records:
            return
        cols = list(records[0])
        for r in records[1:]:
            cols += [k for k in r if k not in cols]
        w = csv.writer(out, lineterminator="\n")
        w.writerow(cols)
        for r in records:
            w.writerow([_fmt(r.get(c)) if not isinstance(r.get(c), (dict, list)) else json.dumps(r.get(c))
                        for c in cols])
    elif fmt == "json":
        json.dump(_jsonable(records if len(records) != 1 else records[0]), out, indent=2, sort_keys=False)
        out.write("\n")
    elif fmt == "jsonl":
        for r in records:
            out.write(json.dumps(_jsonable(r)) + "\n")
    else:
        raise UsageError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# commands


def cmd_law(args, cfg):
    law = cfg.law()
    tl = tilted_law(law, cfg.h)
    rec = {"label": law.label, "alpha": law.alpha, "c_K": law.c_K, "h": cfg.h, "nh": tl.nh,
           "mu1_hat": tl.mu1_hat, "mu2_hat": tl.mu2_hat, "gamma_c": tl.gamma_c,
           "sigma1_sq": tl.sigma1_sq, "sigma2_sq": tl.sigma2_sq, "rho": tl.rho}
    rows = [rec]
    for N in cfg.N_grid:
        rows.append({"N": N, "a_N": tl.scaling_a(N), "m_N": tl.scaling_m(N)})
    return rows if cfg.N_grid else [rec]


def cmd_fe(args, cfg):
    law = cfg.law()
    tl = tilted_law(law, cfg.h)
    rec = {"h": cfg.h, "nh": tl.nh, "gamma_c": tl.gamma_c}
    if cfg.gamma is not None:
        g = cfg.gamma
        rec["gamma"] = g
        rec["free_energy"] = free_energy(law, cfg.h, g)
        if 1 / tl.gamma_c < g < tl.gamma_c:
            sol = solve_cramer_tilt(law, cfg.h, g)
            rec.update(lambda1=sol.lambda1, lambda2=sol.lambda2)
        if cfg.N_grid:
            from .partition import dp_free_energy

            est = dp_free_energy(law, cfg.h, g, cfg.N_grid)
            rec.update({f"dp_N{n}": v for n, v in zip(est.N_grid, est.values)})
            rec["dp_extrapolated"] = est.extrapolated
    if cfg.N_grid and (cfg.gamma is not None or cfg.t_rule is not None):
        rep = classify_regime(law, cfg.h, cfg.t_rule if cfg.t_rule is not None else cfg.gamma, cfg.N_grid, cfg.C0)
        rec.update(regime=rep.regime, bigjump1_ok=rep.bigjump1_ok, bigjump2_ok=rep.bigjump2_ok, a_c=rep.a_c)
    return [rec]


def _table(args, cfg, law, N, M):
    from .partition import compute_zc, load_table

    if getattr(args, "table", None):
        tab = load_table(args.table, law=law)
        if (tab.N, tab.M) != (N, M) or tab.h != cfg.h:
            raise UsageError("stored table does not match N, M and h")
        return tab
    return compute_zc(law, cfg.h, N, M, method=getattr(args, "method", "fast"))


def cmd_zc(args, cfg):
    from .partition import dump_table

    law = cfg.law()
    M = _target_M(cfg, tilted_law(law, cfg.h), args.N, args.M)
    tab = _table(args, cfg, law, args.N, M)
    if args.dump:
        dump_table(tab, args.dump)
    return [{"N": args.N, "M": M, "h": cfg.h, "log_zc": tab.log_z(args.N, M)}]


def cmd_zf(args, cfg):
    from .partition import compute_zf

    law = cfg.law()
    M = _target_M(cfg, tilted_law(law, cfg.h), args.N, args.M)
    fw = cfg.free_end_weights()
    z = compute_zf(law, fw, cfg.h, args.N, M, table=_table(args, cfg, law, args.N, M))
    return [{"N": args.N, "M": M, "h": cfg.h, "log_zf": z.log()}]


def cmd_sample(args, cfg):
    from .sampler import sample_constrained_batch, sample_free_batch

    law = cfg.law()
    M = _target_M(cfg, tilted_law(law, cfg.h), args.N, args.M)
    tab = _table(args, cfg, law, args.N, M)
    count = args.count if args.count is not None else cfg.samples
    if args.free:
        batch = sample_free_batch(tab, cfg.free_end_weights(), count, cfg.seed)
    else:
        batch = sample_constrained_batch(tab, count, cfg.seed)
    return [tr.to_json() for tr in batch]


def cmd_hitprob(args, cfg):
    from .partition import hitting_prob_exact
    from .sampler import estimate_hit_naive, estimate_hit_onejump

    law = cfg.law()
    tl = tilted_law(law, cfg.h)
    M = _target_M(cfg, tl, args.N, args.M)
    rec = {"N": args.N, "M": M}
    if args.exact:
        rec["exact"] = hitting_prob_exact(law, cfg.h, args.N, M)
    n = args.samples if args.samples is not None else cfg.samples
    if args.method == "naive":
        est = estimate_hit_naive(tl, args.N, M, n, cfg.seed, streams=args.streams, threads=args.threads or 1)
    else:
        est = estimate_hit_onejump(tl, args.N, M, n, cfg.seed, eps=args.eps, cap=args.cap,
                                   half_width=args.half_width, streams=args.streams, threads=args.threads or 1)
    rec.update(est.to_json())
    return [rec]


def cmd_events(args, cfg):
    from .path_stats import (default_event_spec, empirical_event_probs, predicted_probs, summarize,
                             summarize_batch, theoretical_QN, theoretical_tildeQN)
    from .sampler import Trajectory, sample_constrained_batch, sample_free_batch

    law = cfg.law()
    tl = tilted_law(law, cfg.h)
    fw = cfg.free_end_weights()
    if args.input:
        with open(args.input, encoding="utf-8") as fh:
            trajs = [Trajectory.from_json(json.loads(line)) for line in fh if line.strip()]
        if not trajs:
            raise GPSError("no trajectories in input")
        N, M = trajs[0].N + trajs[0].free_end_1, trajs[0].M + trajs[0].free_end_2
        summaries = [summarize(t) for t in trajs]
    else:
        N = args.N
        M = _target_M(cfg, tl, N, args.M)
        tab = _table(args, cfg, law, N, M)
        n = args.samples if args.samples is not None else cfg.samples
        batch = sample_free_batch(tab, fw, n, cfg.seed) if args.free else \
            sample_constrained_batch(tab, n, cfg.seed)
        summaries = summarize_batch(batch)
    spec = default_event_spec(tl, N, M, fw=fw if not fw.pinned else None)
    rec = empirical_event_probs(summaries, spec).to_json()
    theo = {}
    try:
        if fw.finite and not fw.pinned:
            q = theoretical_QN(law, fw, tl, N, spec.t_N)
            theo = {"Q_N": q, "predicted": dict(zip(("US", "BL"), predicted_probs(q)))}
        elif not fw.finite and fw.alpha_bar == 1:
            q = theoretical_tildeQN(law, fw, tl, N, spec.t_N)
            theo = {"tildeQ_N": q, "predicted": dict(zip(("US", "mixed"), predicted_probs(q)))}
    except GPSError as exc:
        theo = {"unavailable": str(exc)}
    rec["theoretical"] = theo
    rec["spec"] = {"u_N": spec.u_N, "m_N_plus": spec.m_N_plus, "a_N_plus": spec.a_N_plus,
                   "t_N": spec.t_N, "v_N": spec.v_N, "eps_N": spec.eps_N}
    return [rec]


def cmd_verify(args, cfg):
    from . import asymptotics as asy
    from .partition import compute_zc, compute_zf

    law = cfg.law()
    tl = tilted_law(law, cfg.h)
    grid = cfg.N_grid or (100, 200, 400)
    rows = []
    if args.which == "boundary":
        res = asy.boundary_shape_check(tl, grid)
        for i, n in enumerate(res.N_grid):
            rows.append({"N": n, "M_lo": res.M_lo[i], "M_hi": res.M_hi[i], "product_lo": res.products_lo[i],
                         "product_hi": res.products_hi[i], "product": res.products[i],
                         "degenerate": res.degenerate})
        return rows
    if args.which == "conjB":
        params = asy.conjecture_params(tl, cross_sign=args.cross_sign)
        factors = args.a_factors or [0.25, 0.5, 1, 2, 4]
        scan = asy.crossover_scan(law, tl, grid[-1], [f * params.a_c for f in factors], params=params)
        for r in scan.rows:
            rows.append({"N": grid[-1], "a": r.a, "t_N": r.t_N, "M": r.M, "exact": r.exact, "bigjump": r.bigjump,
                         "gaussian": r.gaussian, "dominant": r.dominant, "a_c": scan.a_c,
                         "a_star": scan.a_star, "c1": scan.params.c1})
        return rows
    if cfg.t_rule is None and cfg.gamma is None:
        raise UsageError("verify needs --t-rule or --gamma")
    fw = cfg.free_end_weights()
    Ms = [_target_M(cfg, tl, n, None) for n in grid]
    tab = compute_zc(law, cfg.h, grid[-1], max(Ms))
    for n, M in zip(grid, Ms):
        t = M - tl.gamma_c * n
        rec = {"N": n, "M": M, "t_N": t}
        if args.which == "thm21":
            exact = math.exp(tab.log_z(n, M) - n * tl.nh)
            pred = asy.thm21_prediction(tl, n, M)
            rec.update(exact=exact, predicted=pred, ratio=exact / pred if pred else math.inf)
        elif args.which == "thm22":
            sub = compute_zc(law, cfg.h, n, M)
            exact = math.exp(compute_zf(law, fw, cfg.h, n, M, table=sub).log() - n * tl.nh)
            bl, us = asy.thm22_prediction(law, fw, tl, n, M)
            rec.update(exact=exact, bl_term=bl, us_term=us, ratio=exact / (bl + us) if bl + us else math.inf)
        elif args.which == "appA":
            sub = compute_zc(law, cfg.h, n, M)
            exact = math.exp(compute_zf(law, fw, cfg.h, n, M, table=sub).log() - n * tl.nh)
            mixed, us = asy.appA_predictions(law, fw, tl, n, t)
            rec.update(exact=exact, mixed_term=mixed, us_term=us, ratio=exact / (mixed + us))
        rows.append(rec)
    return rows


def cmd_accept(args, cfg):
    from .acceptance import run_suite

    only = set(args.only.split(",")) if args.only else None
    results = run_suite(only=only, seed=args.seed if args.seed is not None else 20240601,
                        report=lambda line: print(line, file=sys.stderr))
    args._accept_failed = not all(r.passed for r in results)
    return [{"criterion": r.key, "title": r.title, "passed": r.passed, "detail": r.detail,
             "seconds": round(r.seconds, 3)} for r in results]


COMMANDS = {"law": cmd_law, "fe": cmd_fe, "zc": cmd_zc, "zf": cmd_zf, "sample": cmd_sample,
            "hitprob": cmd_hitprob, "events": cmd_events, "verify": cmd_verify, "accept": cmd_accept}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--h", type=float, help="pinning reward h")
    common.add_argument("--format", choices=("csv", "json", "jsonl"), default=None)
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--threads", type=int, help="worker threads (fallback: GPS_THREADS)")
    common.add_argument("--seed", type=int)

    geo = _Parser(add_help=False)
    geo.add_argument("--gamma", type=float)
    geo.add_argument("--t-rule", dest="t_rule", help="linear(c), power(p) or sqrtlog(a)")
    geo.add_argument("--N-grid", dest="N_grid", type=int, nargs="+")

    target = _Parser(add_help=False)
    target.add_argument("--N", type=int, required=True)
    target.add_argument("--M", type=int)
    target.add_argument("--table", help="partition table dump to reuse")
    target.add_argument("--alpha-bar", dest="alpha_bar", type=float)

    p = _Parser(prog="gpslab", description="Exact and Monte Carlo experiments for the bivariate renewal model.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("law", parents=[common, geo], help="tilted-law constants and scaling sequences")
    sub.add_parser("fe", parents=[common, geo], help="free energy, Cramér tilt and regime flags")
    zc = sub.add_parser("zc", parents=[common, geo, target], help="constrained partition function")
    zc.add_argument("--method", choices=("fast", "naive"), default="fast")
    zc.add_argument("--dump", help="write the binary table here")
    sub.add_parser("zf", parents=[common, geo, target], help="free partition function")
    s = sub.add_parser("sample", parents=[common, geo, target], help="exact trajectory samples (JSON lines)")
    s.add_argument("--count", type=int)
    s.add_argument("--free", action="store_true")
    hp = sub.add_parser("hitprob", parents=[common, geo, target], help="Monte Carlo hitting probability")
    hp.add_argument("--method", choices=("naive", "onejump"), default="naive")
    hp.add_argument("--samples", type=int)
    hp.add_argument("--streams", type=int, default=1)
    hp.add_argument("--eps", type=float, default=0.1)
    hp.add_argument("--cap", type=int)
    hp.add_argument("--half-width", dest="half_width", type=int)
    hp.add_argument("--exact", action="store_true", help="also report the exact value")
    ev = _Parser(add_help=False)
    ev.add_argument("--N", type=int)
    ev.add_argument("--M", type=int)
    ev.add_argument("--table")
    ev.add_argument("--alpha-bar", dest="alpha_bar", type=float)
    e = sub.add_parser("events", parents=[common, geo, ev], help="event frequencies and predicted odds")
    e.add_argument("--input", help="trajectory JSON lines from `sample`")
    e.add_argument("--samples", type=int)
    e.add_argument("--free", action="store_true")
    v = sub.add_parser("verify", parents=[common, geo], help="asymptotic predictions against exact values")
    v.add_argument("which", choices=("thm21", "thm22", "appA", "conjB", "boundary"))
    v.add_argument("--alpha-bar", dest="alpha_bar", type=float)
    v.add_argument("--a-factors", dest="a_factors", type=float, nargs="+")
    v.add_argument("--cross-sign", dest="cross_sign", type=int, choices=(1, -1), default=1)
    a = sub.add_parser("accept", parents=[common], help="run the acceptance suite")
    a.add_argument("--suite", choices=("primary",), default="primary")
    a.add_argument("--only", help="comma-separated criterion keys, e.g. 1,3b,9")
    return p


_DEFAULT_FORMAT = {"sample": "jsonl", "events": "json", "accept": "csv"}


def run_command(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    threads = args.threads or (int(os.environ["GPS_THREADS"]) if os.environ.get("GPS_THREADS") else None)
    args.threads = threads
    try:
        if threads:
            from .partition import set_threads

            set_threads(threads)
        if args.command == "events" and not getattr(args, "input", None) and args.N is None:
            raise UsageError("events needs --input or --N")
        cfg = _config(args)
        records = COMMANDS[args.command](args, cfg)
        fmt = args.format or _DEFAULT_FORMAT.get(args.command, "csv")
        buf = io.StringIO()
        emit(records, fmt, buf)
        if args.out:
            with open(args.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(buf.getvalue())
        else:
            sys.stdout.write(buf.getvalue())
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpecInfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (GPSError, ValueError, ArithmeticError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if getattr(args, "_accept_failed", False):
        return EXIT_ERROR
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    return run_command(argv)
