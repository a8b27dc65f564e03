"""Command-line entry point: ``vamh {sample,study,feasibility,bounds,acf}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict

import numpy as np

from . import bounds, diagnostics, glmm, harness, toy
from .chain import ChainState, Mixing, run_chain, write_trace_csv
from .errors import ConfigurationError, DomainError, InsufficientRegenerationsError, VamhError
from .regen import tour_arrays, write_tours_csv
from .rng import RandomStream

log = logging.getLogger("vamh")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REGEN = 3


def _load_json(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from None


def _sample_toy(args, cfg):
    model = harness.toy_model_for(args.sampler, cfg)
    start = tuple(cfg.get("start", toy.DEFAULT_START))
    rng = RandomStream(args.seed)
    header = {"command": "sample", "model": "toy", "sampler": args.sampler, "n": args.n, "seed": args.seed,
              "config": model.to_dict(), "start": list(start)}
    if args.sampler == "mix":
        target = toy.toy_target(model)
        run = run_chain(ChainState.initial(start, target), Mixing(toy.toy_cwis_proposals(model), [0.5, 0.5], target),
                        args.n, toy.icv, rng)
        return run.g, run.accepted, None, header
    if args.sampler not in ("mhis", "cwis"):
        raise ConfigurationError(f"the toy model has no {args.sampler!r} sampler")
    consts = harness.toy_constants(model, args.sampler, cfg, args.seed, None) if args.tours else {}
    header.update(consts)
    out = toy.toy_run(model, args.sampler, args.n, rng, start=start, **consts)
    return out.g, out.accepted, out.delta if args.tours else None, header


def _sample_glmm(args, cfg):
    model = glmm.model_from_config(cfg)
    rng = RandomStream(args.seed)
    header = {"command": "sample", "model": "glmm", "sampler": args.sampler, "n": args.n, "seed": args.seed,
              "config": cfg, "data": model.to_dict()}
    if args.sampler == "mix":
        target = glmm.glmm_target(model)
        kernel = Mixing(glmm.glmm_cwis_proposals(model), np.full(model.q, 1.0 / model.q), target)
        run = run_chain(ChainState.initial(glmm.initial_state(model, rng), target), kernel, args.n,
                        lambda u: glmm.glmm_complete_loglik(u, model), rng)
        return run.g, run.accepted, None, header
    kw = {}
    if args.sampler == "rw":
        kw["tau2"] = cfg.get("tau2", "auto")
        header["tau2"] = glmm.rw_tau2(model, kw["tau2"])
    if args.tours:
        if args.sampler != "cwis":
            raise ConfigurationError("tours are available for the glmm cwis sampler only")
        pre = harness.glmm_constants(model, args.seed, None)
        kw["log_c"] = pre.log_c
        header["preliminary"] = pre.to_dict()
    out = glmm.glmm_run(model, args.sampler, args.n, rng, **kw)
    return out.g, out.accepted, out.delta if args.tours else None, header


def cmd_sample(args) -> int:
    cfg = _load_json(args.config)
    if args.n < 1:
        raise ConfigurationError("--n must be >= 1")
    g, accepted, delta, header = (_sample_toy if args.model == "toy" else _sample_glmm)(args, cfg)
    write_trace_csv(args.out, g, accepted, header)
    acc = np.asarray(accepted, dtype=bool)
    acc = acc if acc.ndim == 2 else acc[:, None]
    summary = {"n": int(g.size), "mean_g": float(np.mean(g)), "acceptance": acc.mean(axis=0).tolist()}
    if delta is not None:
        N, S = tour_arrays(g, delta)
        write_tours_csv(args.tours, N, S, header)
        summary.update(regenerations=int(np.sum(delta)), tours=int(N.size),
                       mean_tour_length=float(N.mean()) if N.size else None)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = harness.StudyConfig.load(args.config)
    overrides = {k: getattr(args, k) for k in ("replications", "workers", "seed") if getattr(args, k) is not None}
    if overrides:
        cfg = harness.StudyConfig.load({**cfg.model_dump(), **overrides})
    result = harness.run_study(cfg)
    result.write_csv(args.out)
    if args.summary:
        result.write_summary_csv(args.summary)
    print(json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v)
                      for k, v in asdict(result.summary).items()}))
    if result.summary.used == 0:
        raise InsufficientRegenerationsError(
            f"none of {result.summary.replications} replications is usable; see {args.out}")
    return EXIT_OK


def cmd_feasibility(args) -> int:
    result = harness.run_feasibility_study(args.config)
    result.write_csv(args.out)
    print(json.dumps({"accepted": result.accepted, "acceptance_rate": result.acceptance_rate,
                      "rows": [{k: (None if isinstance(v, float) and np.isnan(v) else v)
                                for k, v in asdict(r).items()} for r in result.rows]}))
    return EXIT_OK


def cmd_bounds(args) -> int:
    inst = bounds.DiscreteInstance.load(args.instance)
    weights = None if args.weights is None else [float(w) for w in args.weights.split(",")]
    ns, exact, bound = bounds.bound_curve(inst, args.kind, args.n, weights)
    with open(args.out, "w", newline="") as fh:
        header = {"command": "bounds", "instance": args.instance, "kind": args.kind, "n": args.n,
                  "weights": weights}
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["n", "tv_exact", "tv_bound", "raw_steps"])
        per = inst.d if args.kind == "mixing" else 1
        for n, e, b in zip(ns, exact, bound):
            w.writerow([int(n), repr(float(e)), repr(float(b)), int(n) * per])
    ok = bool(np.all(exact <= bound + 1e-12))
    print(json.dumps({"bound_holds": ok, "tv_exact_final": float(exact[-1]), "tv_bound_final": float(bound[-1])}))
    return EXIT_OK


def cmd_acf(args) -> int:
    g = diagnostics.read_trace_column(args.input, args.column)
    header = {"command": "acf", "input": args.input, "column": args.column, "max_lag": args.max_lag,
              "window": [args.window_start, args.window_end]}
    try:
        diagnostics.export_trace_and_acf(g, args.max_lag, args.out, args.trace_out,
                                         (args.window_start, args.window_end), header)
    except DomainError as exc:
        with open(args.out, "w", newline="") as fh:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            fh.write("lag,acf\n")
            fh.write(f"error,{exc}\n")
        raise ConfigurationError(str(exc)) from None
    print(json.dumps({"iat": diagnostics.integrated_autocorr_time(g)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vamh", description="Component-wise Metropolis-Hastings samplers, "
                                "regenerative standard errors and convergence bounds.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="run one chain and write its trace")
    s.add_argument("--model", choices=["toy", "glmm"], required=True)
    s.add_argument("--sampler", choices=["mhis", "cwis", "rw", "mix"], required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", help="model config JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--tours", help="also track regenerations and write tour,N,S here")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("study", help="replicated regenerative-interval study")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--summary", help="write the summary row here")
    s.add_argument("--replications", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_study)

    s = sub.add_parser("feasibility", help="random-walk hypercube regeneration table")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_feasibility)

    s = sub.add_parser("bounds", help="exact TV curve against the closed-form bound")
    s.add_argument("--instance", required=True)
    s.add_argument("--kind", choices=["composition", "mixing", "cwis"], required=True)
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--weights", help="comma-separated mixing weights (default uniform)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("acf", help="sample autocorrelation of a trace column")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--max-lag", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--column", default="g")
    s.add_argument("--trace-out", help="also write step,g over the window")
    s.add_argument("--window-start", type=int, default=diagnostics.DEFAULT_WINDOW[0])
    s.add_argument("--window-end", type=int, default=diagnostics.DEFAULT_WINDOW[1])
    s.set_defaults(func=cmd_acf)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InsufficientRegenerationsError as exc:
        log.error("insufficient regenerations: %s", exc)
        return EXIT_REGEN
    except (ConfigurationError, ValueError, DomainError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except VamhError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
