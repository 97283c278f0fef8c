"""Command line entry point ``mjls-dr``.

Exit codes: 0 success, 2 input error, 3 infeasible synthesis, 4 resource cap.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ambiguity as amb
from . import io
from .control import (SynthesisError, simplex_vertices, synthesize_output_feedback,
                      synthesize_state_feedback, verify_ms_stability, vertex_matrices)
from .core import ModelError, load_model
from .harness import (Disturbance, ExperimentConfig, batch_trials, recovery_time, run_estimation,
                      run_experiment, summarize)
from .observability import DEFAULT_PAIR_BUDGET, ResourceError, mo_table

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_RESOURCE = 0, 2, 3, 4


def _vec(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")])


def _experiment_config(args) -> ExperimentConfig:
    base: dict = {}
    if args.config:
        cpath = Path(args.config)
        base = json.loads(cpath.read_text())
        if "model" in base:
            base["model"] = str((cpath.parent / base["model"]).resolve())
        if "disturbance" in base and isinstance(base["disturbance"], str):
            base["disturbance"] = Disturbance.parse(base["disturbance"])
        if "x0" in base:
            base["x0"] = np.asarray(base["x0"], dtype=float)
    overrides = {
        "model": args.model, "controller": args.controller, "T": args.T, "seed": args.seed,
        "n_c": args.nc, "epsilon": args.epsilon, "cadence": args.cadence, "alpha": args.alpha,
        "disturbance": Disturbance.parse(args.disturb) if args.disturb else None,
        "x0": _vec(args.x0) if args.x0 else None,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if "model" not in base:
        raise ValueError("a model is required (--model or a config file)")
    return ExperimentConfig(**base)


def _add_experiment_flags(p):
    p.add_argument("--config", help="experiment config JSON (flags override it)")
    p.add_argument("--model", help="model JSON file")
    p.add_argument("--controller", choices=["robust", "stochastic", "dr", "none", "random"])
    p.add_argument("--T", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--nc", type=int)
    p.add_argument("--epsilon", type=float, help="dither variance")
    p.add_argument("--disturb", help="additive state disturbance t:v1,v2,...")
    p.add_argument("--x0", help="initial state v1,v2,...")
    p.add_argument("--cadence", type=int)
    p.add_argument("--alpha", type=float)


def cmd_estimate(args) -> int:
    model = load_model(args.model)
    run = run_estimation(model, args.T, args.seed, args.nc, args.input_scale)
    if args.out:
        io.write_event_log(run.rows, args.out)
    harvested = [tr for r in run.rows for tr in r["transitions"]]
    wrong = sum((run.modes[tr.time], run.modes[tr.time + 1]) != (tr.src, tr.dst) for tr in harvested)
    print(json.dumps({"terminal_N": run.rows[-1]["N"],
                      "max_theta": max(r["theta_size"] for r in run.rows),
                      "resets": sum(r["reset"] for r in run.rows),
                      "harvested": len(harvested), "harvest_errors": int(wrong)}))
    return EXIT_OK


def cmd_observability(args) -> int:
    model = load_model(args.model)
    table = mo_table(model, args.N_max, args.budget)
    for c in table:
        w = "" if c.witness_pair is None else " witness=" + "/".join(
            "".join(str(m + 1) for m in p) for p in c.witness_pair)
        print(f"N={c.N} alpha={c.alpha} omega={c.omega} holds={c.holds}{w}")
    print(json.dumps({"any_holds": any(c.holds for c in table), "checked": len(table)}))
    return EXIT_OK


def cmd_synthesize(args) -> int:
    model = load_model(args.model)
    M = model.n_modes
    if args.controller == "robust":
        vertex_sets = simplex_vertices(M)
    elif args.controller == "stochastic":
        if model.P is None:
            raise ModelError("stochastic synthesis needs P in the model")
        vertex_sets = [model.P[i:i + 1] for i in range(M)]
    else:
        if not args.counts:
            raise ValueError("--counts is required for the dr controller")
        ds = io.read_counts_csv(args.counts)
        if ds.n_modes != M:
            raise ValueError("counts file does not match the model")
        sets = amb.build_all(ds, args.beta)
        vertex_sets = [s.vertices for s in sets]
        if args.ambiguity_out:
            io.write_ambiguity_csv(sets, args.ambiguity_out)
    Mgain = synthesize_state_feedback(model, vertex_sets)
    res = synthesize_output_feedback(model, vertex_sets, Mgain, alpha=args.alpha, provenance=args.controller)
    if not res.feasible:
        print(json.dumps({"feasible": False, "gamma": res.gamma, "alpha": res.alpha}))
        return EXIT_INFEASIBLE
    reports = [(P, verify_ms_stability(model, res.gain.K, P)) for P in vertex_matrices(vertex_sets)]
    if args.out:
        io.write_gain_json(res.gain, args.out, reports)
    print(json.dumps({"feasible": True, "gamma": res.gamma, "alpha": res.alpha,
                      "K": res.gain.K.tolist(), "stable_at_all_vertices": all(r.stable for _, r in reports)}))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _experiment_config(args)
    rec = run_experiment(cfg)
    if args.out:
        io.write_trajectory_csv(rec, args.out)
    if args.gain_out and rec.gains:
        io.write_gain_json(rec.gains[-1][1], args.gain_out)
    s = summarize(rec)
    s["gains"] = [(t, g.provenance) for t, g in rec.gains]
    if cfg.disturbance is not None:
        s["recovery_time"] = recovery_time(rec, cfg.disturbance.time)
    print(json.dumps(s))
    return EXIT_OK


def cmd_batch(args) -> int:
    cfg = _experiment_config(args)
    summary = batch_trials(cfg, args.trials)
    d = summary.as_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(d, indent=2))
    print(json.dumps(d))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mjls-dr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="run the mode estimator on a randomly driven plant")
    p.add_argument("--model", required=True)
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nc", type=int, default=2)
    p.add_argument("--input-scale", type=float, default=1.0)
    p.add_argument("--out", help="event log CSV")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("observability", help="mode-observability table")
    p.add_argument("--model", required=True)
    p.add_argument("--N-max", type=int, default=5)
    p.add_argument("--budget", type=int, default=DEFAULT_PAIR_BUDGET)
    p.set_defaults(func=cmd_observability)

    p = sub.add_parser("synthesize", help="robust / stochastic / dr output-feedback gain")
    p.add_argument("--model", required=True)
    p.add_argument("--controller", choices=["robust", "stochastic", "dr"], default="dr")
    p.add_argument("--counts", help="transition counts CSV (dr)")
    p.add_argument("--beta", type=float, default=0.05, help="confidence parameter (dr)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", help="gain JSON")
    p.add_argument("--ambiguity-out", help="ambiguity snapshot CSV (dr)")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="one closed-loop experiment")
    _add_experiment_flags(p)
    p.add_argument("--out", help="trajectory CSV")
    p.add_argument("--gain-out", help="JSON of the last gain")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("batch", help="independent trials with seeds seed+k")
    _add_experiment_flags(p)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--out", help="summary JSON")
    p.set_defaults(func=cmd_batch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SynthesisError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ResourceError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ModelError, ValueError, OSError, KeyError, TypeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
