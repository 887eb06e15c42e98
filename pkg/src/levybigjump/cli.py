"""Command-line driver.

Subcommands: simulate, estimate, verify, renewal, cbre, list-theorems.
Results are written atomically (temp file + rename) as JSON/CSV with full
float precision; identical configuration and seed give byte-identical output
apart from the ``generated_at`` field, for any worker count.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from .model import EstimatorError, FSpec, LevyModel, ModelError, load_model, \
    validate_heavy_tail_conditions
from .rngstream import RngStream
from .path import dump_csv, first_passage, running_extrema, sample_path
from .functional import exp_functional
from . import cbre, fluctuation, rarevent, verify

EXIT_OK = 0
EXIT_ESTIMATOR = 1
EXIT_CONFIG = 2

SEED_ENV = "LEVY_BIGJUMP_SEED"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _emit_json(out_dir: str, name: str, payload) -> str:
    payload = {"generated_at": datetime.datetime.now(
        datetime.timezone.utc).isoformat(), "result": payload}
    path = os.path.join(out_dir, name)
    _atomic_write(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def _parse_t_list(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        return int(env)
    return 0


def _add_common(p: argparse.ArgumentParser, need_model: bool = True):
    if need_model:
        p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--t", default="50", help="time horizon(s), comma separated")
    p.add_argument("--n", type=float, default=1000, help="sample count")
    p.add_argument("--seed", type=int, default=None,
                   help=f"master seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--json", action="store_true",
                   help="also print the result JSON to stdout")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="levy-bigjump",
        description="Heavy-tailed Levy process simulation and rare-event "
                    "estimation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample paths and write a summary CSV")
    _add_common(p)
    p.add_argument("--x0", type=float, default=0.0, help="starting value")
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--dump-paths", type=int, default=0,
                   help="write the first K full paths as CSV")

    p = sub.add_parser("estimate", help="run one estimator over the t ladder")
    _add_common(p)
    p.add_argument("--quantity", required=True,
                   choices=["xi-positive", "tau-exceeds", "mean-tau", "ef",
                            "occupation", "coefficient"])
    p.add_argument("--x", type=float, default=1.0, help="starting level")
    p.add_argument("--y", type=float, default=1.0,
                   help="second coordinate (occupation)")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--fx", type=float, default=1.0, help="F: initial mass")
    p.add_argument("--fc", type=float, default=1.0, help="F: branching scale")
    p.add_argument("--fgamma", type=float, default=1.0,
                   help="F: stability index")
    p.add_argument("--naive", action="store_true",
                   help="plain Monte Carlo instead of stratified")

    p = sub.add_parser("verify", help="run a statistical theorem check")
    _add_common(p)
    p.add_argument("--theorem", required=True)
    p.add_argument("--x", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--oracle-n", type=float, default=0)

    p = sub.add_parser("renewal", help="estimate the ladder renewal functions")
    _add_common(p)
    p.add_argument("--grid-max", type=float, default=8.0)
    p.add_argument("--grid-step", type=float, default=0.25)
    p.add_argument("--horizon", type=float, default=None)

    p = sub.add_parser("cbre", help="branching-in-environment survival ladder "
                                    "and regime report")
    _add_common(p)
    p.add_argument("--branching-gamma", type=float, default=1.0)
    p.add_argument("--branching-c", type=float, default=1.0)
    p.add_argument("--branching-x", type=float, default=1.0)

    p = sub.add_parser("list-theorems", help="show the verification commands")
    p.add_argument("--json", action="store_true")
    return ap


def _cmd_simulate(args, model: LevyModel, seed: int) -> dict:
    ts = _parse_t_list(args.t)
    t = ts[0]
    n = int(args.n)
    rows = []
    a_thr = max(-model.mean_drift(), 0.0) * t if model.tail.alpha > 1 \
        or model.tail.scale == 0 else 0.0
    for i in range(n):
        p = sample_path(model, args.x0, t, args.step, RngStream(seed, i))
        hi, lo = running_extrema(p, t)
        tau = first_passage(p, 0.0) if args.x0 >= 0 else None
        a1 = exp_functional(p, t, 1.0).value
        rows.append((i, p.value_at(t), hi, lo,
                     -1.0 if tau is None else tau, len(p.jumps), a1))
        if i < args.dump_paths:
            path_file = os.path.join(args.out, f"path_{i:05d}.csv")
            tmp = f"{path_file}.tmp-{os.getpid()}"
            with open(tmp, "w") as fh:
                dump_csv(p, fh)
            os.replace(tmp, path_file)
    name = f"simulate_{model.model_hash()}_t{t:g}_n{n}_s{seed}.csv"
    lines = ["path,xi_end,sup,inf,tau,njumps,exp_functional"]
    for r in rows:
        lines.append(",".join([str(r[0])] + [_fmt(v) for v in r[1:5]]
                              + [str(r[5]), _fmt(r[6])]))
    _atomic_write(os.path.join(args.out, name), "\n".join(lines) + "\n")
    return {"csv": name, "n": n, "t": t,
            "conditions": validate_heavy_tail_conditions(model).to_dict()}


def _cmd_estimate(args, model: LevyModel, seed: int) -> dict:
    ts = _parse_t_list(args.t)
    n = int(args.n)
    w = args.workers
    results = {}
    for i, t in enumerate(ts):
        rng = RngStream(seed, 0, (i,))
        q = args.quantity
        if q == "xi-positive":
            est = (rarevent.naive_p_xi_positive(model, t, n, rng, workers=w)
                   if args.naive else
                   rarevent.estimate_p_xi_positive(model, t, n, rng, workers=w))
        elif q == "tau-exceeds":
            est = (rarevent.naive_p_tau_exceeds(model, args.x, t, n, rng,
                                                workers=w)
                   if args.naive else
                   rarevent.estimate_p_tau_exceeds(model, args.x, t, n, rng,
                                                   workers=w))
        elif q == "mean-tau":
            horizon = args.horizon if args.horizon else max(
                50.0 / max(-model.mean_drift(), 1e-9), 20.0 * args.x)
            est = fluctuation.estimate_mean_tau(model, args.x, horizon, n,
                                                rng, workers=w)
        elif q == "ef":
            f = FSpec.cbre_survival(args.fx, args.fc, args.fgamma)
            est = rarevent.estimate_ef_stratified(
                model, f, t, n, rng, gamma=args.fgamma, workers=w)
        elif q == "occupation":
            est = fluctuation.estimate_occupation_product(
                model, args.x, args.y, args.horizon, n, rng, workers=w)
        elif q == "coefficient":
            f = FSpec.cbre_survival(args.fx, args.fc, args.fgamma)
            est = rarevent.estimate_limit_coefficient(
                model, f, T_big=t, s_max=4 * t, n=n, rng=rng,
                gamma=args.fgamma, workers=w)
        else:  # pragma: no cover
            raise ValueError(q)
        d = est.to_dict()
        d["model_hash"] = model.model_hash()
        results[_fmt(t)] = d
    name = f"estimate_{args.quantity}_{model.model_hash()}_s{seed}.json"
    _emit_json(args.out, name, results)
    return {"json": name, "results": results}


def _cmd_verify(args, model: LevyModel, seed: int) -> dict:
    ts = _parse_t_list(args.t)
    kw = {"seed": seed, "n": int(args.n), "workers": args.workers,
          "x": args.x, "lam": args.lam}
    if len(ts) >= 3:
        kw["t_ladder"] = tuple(ts)
    elif ts:
        kw["t"] = ts[0]
    if args.oracle_n:
        kw["oracle_n"] = int(args.oracle_n)
    report = verify.run_theorem(args.theorem, model, **kw)
    name = f"verify_{args.theorem}_{model.model_hash()}_s{seed}.json"
    _emit_json(args.out, name, report)
    return {"json": name, "report": report,
            "pass": all(r["pass"] for r in report)}


def _cmd_renewal(args, model: LevyModel, seed: int) -> dict:
    n = int(args.n)
    grid = np.arange(0.0, args.grid_max + args.grid_step / 2, args.grid_step)
    est = fluctuation.estimate_renewal(model, grid, horizon=args.horizon,
                                       n=n, rng=RngStream(seed),
                                       workers=args.workers)
    base = f"renewal_{model.model_hash()}_s{seed}"
    import io
    buf = io.StringIO()
    est.to_csv(buf)
    _atomic_write(os.path.join(args.out, base + ".csv"), buf.getvalue())
    header = est.header_dict()
    header["model_hash"] = model.model_hash()
    _emit_json(args.out, base + ".json", header)
    return {"csv": base + ".csv", "json": base + ".json", "header": header}


def _cmd_cbre(args, model: LevyModel, seed: int) -> dict:
    ts = _parse_t_list(args.t)
    if len(ts) < 3:
        raise ModelError("cbre needs a t ladder with at least 3 points "
                         "(--t t1,t2,t3)")
    br = cbre.BranchingSpec(args.branching_gamma, args.branching_c,
                            args.branching_x)
    rep = cbre.classify_regime(model, br, ts, int(args.n), RngStream(seed),
                               workers=args.workers)
    base = f"cbre_{model.model_hash()}_s{seed}"
    lines = ["t,survival,stderr"]
    for t, v, se in rep.ladder:
        lines.append(f"{_fmt(t)},{_fmt(v)},{_fmt(se)}")
    _atomic_write(os.path.join(args.out, base + ".csv"),
                  "\n".join(lines) + "\n")
    payload = rep.to_dict()
    payload["branching"] = br.to_dict()
    _emit_json(args.out, base + ".json", payload)
    return {"csv": base + ".csv", "json": base + ".json", "regime": rep.regime}


def _cmd_list_theorems(args) -> dict:
    entries = [{"id": tid, "claim": claim,
                "command": f"levy-bigjump verify --theorem {tid} "
                           f"--model MODEL.json"}
               for tid, (claim, _) in verify.THEOREMS.items()]
    if args.json:
        print(json.dumps(entries, sort_keys=True, indent=2))
    else:
        width = max(len(e["id"]) for e in entries)
        for e in entries:
            print(f"{e['id']:<{width}}  {e['claim']}")
    return {"count": len(entries)}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-theorems":
        _cmd_list_theorems(args)
        return EXIT_OK
    try:
        model = load_model(args.model)
    except (ModelError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = _seed(args)
    os.makedirs(args.out, exist_ok=True)
    try:
        if args.command == "simulate":
            out = _cmd_simulate(args, model, seed)
        elif args.command == "estimate":
            out = _cmd_estimate(args, model, seed)
        elif args.command == "verify":
            out = _cmd_verify(args, model, seed)
        elif args.command == "renewal":
            out = _cmd_renewal(args, model, seed)
        elif args.command == "cbre":
            out = _cmd_cbre(args, model, seed)
        else:  # pragma: no cover
            raise ValueError(args.command)
    except (ModelError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimatorError, ValueError) as exc:
        print(f"estimator error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    if args.json:
        print(json.dumps(out, sort_keys=True, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
