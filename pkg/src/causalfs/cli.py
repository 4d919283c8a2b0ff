"""Batch command line: synthesize benchmarks, fit, evaluate, sweep.

Every command is deterministic given --seed; artifacts carry a config
hash and the package version instead of timestamps, so identical
configurations produce byte-identical outputs.
"""

import argparse
import concurrent.futures
import hashlib
import itertools
import json
import os
import sys

import numpy as np

from . import __version__
from .dataset import (DatasetError, HyperParams, load_dataset, save_dataset,
                      standardize)
from .evaluate import evaluate_selection
from .graph import build_laplacian
from .solver import (fit, load_checkpoint, rank_features, save_checkpoint,
                     select_features)
from .synth import SynthSpec, generate, load_roles, write_roles


def _config_hash(doc):
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path, doc):
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _csv_header(cfg_hash):
    return f"# config_hash={cfg_hash}\n# version={__version__}\n"


def _parse_floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _parse_ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _params_from_args(args, c):
    return HyperParams(
        c=c, m=args.m, alpha=args.alpha, beta=args.beta, lam=getattr(args, "lam"),
        k_nn=args.knn, rho=args.rho, varrho=args.varrho, epsilon=args.epsilon,
        tol=args.tol, max_iter=args.max_iter,
        weight_cap=args.weight_cap, weight_floor=args.weight_floor,
        ablation=args.ablation.replace("-", "_"), kernel=args.kernel)


def _freeze_arg(args):
    # negative K on the command line means "never freeze"
    return None if args.freeze_causal < 0 else args.freeze_causal


def _add_fit_flags(p):
    hp = HyperParams
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--c", type=int, default=None,
                   help="embedding dimension; defaults to the label count")
    p.add_argument("--m", type=int, default=hp.m, help="prototypes per view")
    p.add_argument("--knn", type=int, default=hp.k_nn)
    p.add_argument("--rho", type=float, default=hp.rho)
    p.add_argument("--varrho", type=float, default=hp.varrho)
    p.add_argument("--epsilon", type=float, default=hp.epsilon)
    p.add_argument("--tol", type=float, default=hp.tol)
    p.add_argument("--max-iter", type=int, default=hp.max_iter)
    p.add_argument("--weight-cap", type=float, default=hp.weight_cap)
    p.add_argument("--weight-floor", type=float, default=hp.weight_floor)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ablation", choices=["full", "no-causal", "all-confounders"],
                   default="full")
    p.add_argument("--kernel", choices=["linear", "gaussian"], default="linear")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--freeze-causal", type=int, default=2, metavar="K",
                   help="freeze prototypes and confounder gates after "
                        "iteration K (negative: never)")


def _load_for_fit(args):
    ds = load_dataset(args.manifest)
    if not args.no_standardize:
        ds, _ = standardize(ds)
    c = args.c
    if c is None:
        if ds.labels is None:
            raise DatasetError("--c is required when the dataset has no labels")
        c = int(np.unique(ds.labels).size)
    return ds, c


def cmd_synth(args):
    spec = SynthSpec(n=args.n, causal=args.causal,
                     spurious=tuple(_parse_ints(args.spurious)),
                     noise=tuple(_parse_ints(args.noise)),
                     classes=args.classes, confounder_dim=args.confounder_dim,
                     confound_strength=args.strength,
                     spurious_noise=args.spurious_noise,
                     causal_cohesion=args.cohesion,
                     aligned_frac=args.aligned_frac, seed=args.seed)
    ds, roles = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(ds, os.path.join(args.out, "manifest.json"))
    write_roles(roles, os.path.join(args.out, "roles.csv"))
    print(f"wrote {ds.num_views} views ({'+'.join(str(d) for d in ds.dims)} "
          f"features) x {ds.n} samples to {args.out}")
    return 0


def cmd_fit(args):
    ds, c = _load_for_fit(args)
    params = _params_from_args(args, c)
    cfg = {"command": "fit", "manifest": os.path.basename(args.manifest),
           "seed": args.seed, "standardize": not args.no_standardize,
           "freeze_causal": _freeze_arg(args),
           **{k: getattr(params, k) for k in (
               "c", "m", "alpha", "beta", "lam", "k_nn", "rho", "varrho",
               "epsilon", "tol", "max_iter", "weight_cap", "weight_floor",
               "ablation", "kernel")}}
    h = _config_hash(cfg)
    graph = build_laplacian(ds, params.k_nn)
    state = fit(ds, params, seed=args.seed, graph=graph,
                freeze_causal_after=_freeze_arg(args))

    os.makedirs(args.out, exist_ok=True)
    lines = [_csv_header(h), "iteration,objective\n"]
    for i, val in enumerate(state.objective_trace):
        lines.append(f"{i},{val!r}\n")
    _atomic_write(os.path.join(args.out, "trace.csv"), "".join(lines))

    ranking = {"config_hash": h, "version": __version__, "views": []}
    for v, (order, scores) in enumerate(rank_features(state)):
        ranking["views"].append({
            "view": v, "name": ds.view_names[v],
            "order": order.tolist(),
            "scores": [float(s) for s in scores],
        })
    _write_json(os.path.join(args.out, "ranking.json"), ranking)

    from .causal import confounder_report
    _write_json(os.path.join(args.out, "confounders.json"), {
        "config_hash": h, "version": __version__,
        "views": confounder_report(state.prototypes, state.indicators,
                                   ds.dims),
    })
    save_checkpoint(state, os.path.join(args.out, "checkpoint.npz"),
                    meta={"config_hash": h, "version": __version__})
    if args.dump_laplacian:
        rows = [_csv_header(h)]
        for row in graph.cross_view:
            rows.append(",".join(repr(float(v)) for v in row) + "\n")
        _atomic_write(os.path.join(args.out, "laplacian.csv"), "".join(rows))
    print(f"fit: {state.iteration} iteration(s), "
          f"objective {state.objective_trace[-1]:.6g}, "
          f"{'converged' if state.converged else 'max_iter reached'}")
    return 0 if state.converged else 2


def cmd_eval(args):
    ds = load_dataset(args.manifest)
    if not args.no_standardize:
        ds, _ = standardize(ds)
    state, meta = load_checkpoint(args.checkpoint)
    roles = None
    roles_path = args.roles or os.path.join(
        os.path.dirname(os.path.abspath(args.manifest)), "roles.csv")
    if os.path.isfile(roles_path):
        roles = load_roles(roles_path)
    ratios = _parse_floats(args.ratios)
    cfg = {"command": "eval", "checkpoint_hash": meta.get("config_hash"),
           "ratios": ratios, "restarts": args.restarts, "seed": args.seed,
           "k": args.k}
    h = _config_hash(cfg)

    os.makedirs(args.out, exist_ok=True)
    rows = [_csv_header(h), "ratio,acc_mean,acc_std,nmi_mean,nmi_std\n"]
    doc = {"config_hash": h, "version": __version__, "ratios": {}}
    for ratio in ratios:
        sel = select_features(state, ds.dims, ratio=ratio)
        rep = evaluate_selection(ds, sel, k=args.k, restarts=args.restarts,
                                 seed=args.seed, roles=roles)
        doc["ratios"][f"{ratio:g}"] = rep.to_dict()
        if rep.acc_mean is not None:
            rows.append(f"{ratio:g},{rep.acc_mean!r},{rep.acc_std!r},"
                        f"{rep.nmi_mean!r},{rep.nmi_std!r}\n")
    _write_json(os.path.join(args.out, "report.json"), doc)
    _atomic_write(os.path.join(args.out, "metrics.csv"), "".join(rows))
    shown = next(iter(doc["ratios"].values()))
    print(f"eval: {len(ratios)} ratio(s); first ratio acc_mean="
          f"{shown['acc_mean']}, nmi_mean={shown['nmi_mean']}")
    return 0


def _sweep_cell(job):
    (manifest, cell, base, seed, ratios, restarts) = job
    alpha, beta, lam = cell
    ns = argparse.Namespace(**base, alpha=alpha, beta=beta, lam=lam)
    ds, c = _load_for_fit(ns)
    params = _params_from_args(ns, c)
    state = fit(ds, params, seed=seed)
    row = {"key": f"a{alpha:g}_b{beta:g}_l{lam:g}", "alpha": alpha,
           "beta": beta, "lam": lam,
           "iterations": state.iteration,
           "converged": int(state.converged),
           "objective": state.objective_trace[-1]}
    for ratio in ratios:
        sel = select_features(state, ds.dims, ratio=ratio)
        rep = evaluate_selection(ds, sel, restarts=restarts, seed=seed)
        row[f"acc_mean_{ratio:g}"] = rep.acc_mean
        row[f"nmi_mean_{ratio:g}"] = rep.nmi_mean
    return row


def cmd_sweep(args):
    grid = [float(f"{v:g}") for v in np.logspace(-3, 3, 7)]
    cells = list(itertools.product(grid, grid, grid))
    ratios = _parse_floats(args.ratios)
    cols = (["key", "alpha", "beta", "lam", "iterations", "converged",
             "objective"]
            + [f"acc_mean_{r:g}" for r in ratios]
            + [f"nmi_mean_{r:g}" for r in ratios])
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "sweep.csv")
    done = {}
    if os.path.isfile(out_csv):
        with open(out_csv) as fh:
            for line in fh:
                if line.startswith("#") or line.startswith("key,") or not line.strip():
                    continue
                key = line.split(",", 1)[0]
                done[key] = line
        print(f"resuming: {len(done)} of {len(cells)} cells already done")

    base = {"manifest": args.manifest, "no_standardize": args.no_standardize,
            "c": args.c, "m": args.m, "knn": args.knn, "rho": args.rho,
            "varrho": args.varrho, "epsilon": args.epsilon, "tol": args.tol,
            "max_iter": args.max_iter, "weight_cap": args.weight_cap,
            "weight_floor": args.weight_floor, "ablation": args.ablation,
            "kernel": args.kernel}
    todo = [(args.manifest, cell, base, args.seed, ratios, args.restarts)
            for cell in cells
            if f"a{cell[0]:g}_b{cell[1]:g}_l{cell[2]:g}" not in done]

    cfg = {"command": "sweep", "grid": grid, "seed": args.seed,
           "ratios": ratios, "restarts": args.restarts, **base}
    h = _config_hash(cfg)
    header = _csv_header(h) + ",".join(cols) + "\n"
    if not os.path.isfile(out_csv):
        _atomic_write(out_csv, header)

    def row_line(row):
        return ",".join(
            "" if row.get(c) is None else
            (row[c] if isinstance(row[c], str) else repr(row[c]))
            for c in cols) + "\n"

    with open(out_csv, "a") as fh:
        if args.jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(args.jobs) as pool:
                for row in pool.map(_sweep_cell, todo):
                    done[row["key"]] = row_line(row)
                    fh.write(done[row["key"]])
                    fh.flush()
        else:
            for job in todo:
                row = _sweep_cell(job)
                done[row["key"]] = row_line(row)
                fh.write(done[row["key"]])
                fh.flush()

    # canonical order for the final file
    body = [done[f"a{a:g}_b{b:g}_l{l:g}"] for a, b, l in cells
            if f"a{a:g}_b{b:g}_l{l:g}" in done]
    _atomic_write(out_csv, header + "".join(body))
    print(f"sweep: {len(body)} cells in {out_csv}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="causalfs", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    hp = HyperParams

    sp = SynthSpec
    ps = sub.add_parser("synth", help="generate the synthetic benchmark")
    ps.add_argument("--out", required=True)
    ps.add_argument("--n", type=int, default=sp.n)
    ps.add_argument("--causal", type=int, default=sp.causal)
    ps.add_argument("--spurious", default=",".join(str(s) for s in sp.spurious))
    ps.add_argument("--noise", default=",".join(str(s) for s in sp.noise))
    ps.add_argument("--classes", type=int, default=sp.classes)
    ps.add_argument("--confounder-dim", type=int, default=sp.confounder_dim)
    ps.add_argument("--strength", type=float, default=sp.confound_strength)
    ps.add_argument("--spurious-noise", type=float, default=sp.spurious_noise)
    ps.add_argument("--cohesion", type=float, default=sp.causal_cohesion)
    ps.add_argument("--aligned-frac", type=float, default=sp.aligned_frac)
    ps.add_argument("--seed", type=int, default=0)
    ps.set_defaults(func=cmd_synth)

    pf = sub.add_parser("fit", help="run the solver on a dataset")
    pf.add_argument("--manifest", required=True)
    pf.add_argument("--out", required=True)
    pf.add_argument("--dump-laplacian", action="store_true")
    _add_fit_flags(pf)
    pf.set_defaults(func=cmd_fit)

    pe = sub.add_parser("eval", help="evaluate a fitted checkpoint")
    pe.add_argument("--manifest", required=True)
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--out", required=True)
    pe.add_argument("--ratios", default="0.1,0.2,0.3,0.4,0.5")
    pe.add_argument("--restarts", type=int, default=50)
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--k", type=int, default=None)
    pe.add_argument("--roles", default=None)
    pe.add_argument("--no-standardize", action="store_true")
    pe.set_defaults(func=cmd_eval)

    pw = sub.add_parser("sweep", help="log-grid search over alpha/beta/lambda")
    pw.add_argument("--manifest", required=True)
    pw.add_argument("--out", required=True)
    pw.add_argument("--ratios", default="0.3")
    pw.add_argument("--restarts", type=int, default=10)
    pw.add_argument("--jobs", type=int, default=1)
    pw.add_argument("--seed", type=int, default=0)
    pw.add_argument("--c", type=int, default=None)
    pw.add_argument("--m", type=int, default=hp.m)
    pw.add_argument("--knn", type=int, default=hp.k_nn)
    pw.add_argument("--rho", type=float, default=hp.rho)
    pw.add_argument("--varrho", type=float, default=hp.varrho)
    pw.add_argument("--epsilon", type=float, default=hp.epsilon)
    pw.add_argument("--tol", type=float, default=hp.tol)
    pw.add_argument("--max-iter", type=int, default=hp.max_iter)
    pw.add_argument("--weight-cap", type=float, default=hp.weight_cap)
    pw.add_argument("--weight-floor", type=float, default=hp.weight_floor)
    pw.add_argument("--ablation", choices=["full", "no-causal", "all-confounders"],
                    default="full")
    pw.add_argument("--kernel", choices=["linear", "gaussian"], default="linear")
    pw.add_argument("--no-standardize", action="store_true")
    pw.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
