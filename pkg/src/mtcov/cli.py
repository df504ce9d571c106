"""Command-line entry point: generate, fit, predict, evaluate, cv, benchmark.

Every command writes its outputs plus one ``manifest.json`` into ``--out``.
Exit status is 0 on success, 1 on a runtime failure (including a grid with
failed cells) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cv import GridSpec, biased_holdout, grid_search, holdout_accuracy, holdout_auc, load_coefficients, uniform_holdout
from .data import DataError, HoldoutMask, load_attributes, load_edgelist, load_mask, save_mask, write_attributes, write_edgelist
from .em import EMConfig, FitError, fit, load_params, predict_attributes, predict_scores, save_fit
from .metrics import baselines, community_entropy, recovery_report, support_communities, MetricReport
from .synth import SyntheticSpec, generate, load_truth, preset, save_truth

logger = logging.getLogger("mtcov")

ALL_METRICS = ("f1", "jaccard", "cs", "l1", "auc", "accuracy", "entropy")


class UsageError(Exception):
    pass


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, args, config: dict, seeds: dict, inputs: list, started: float) -> None:
    manifest = {
        "command": ["mtcov", *args._argv],
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): _digest(p) for p in inputs if p},
        "elapsed_seconds": round(time.perf_counter() - started, 3),
        "version": __version__,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _rescaling(arg):
    return None if arg is None else load_coefficients(arg)


def _load_inputs(args, need_attributes: bool):
    graph = load_edgelist(args.edges, directed=not args.undirected)
    design = None
    if args.attributes:
        names = args.attribute_name.split(",") if args.attribute_name else None
        if names is None:
            with open(args.attributes, newline="") as fh:
                header = next(csv.reader(fh))
            names = header[1:]
        design = load_attributes(args.attributes, names, graph)
    elif need_attributes:
        raise UsageError("gamma > 0 needs --attributes")
    return graph, design


# generate ------------------------------------------------------------------


def cmd_generate(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args.out)
    if args.spec_file:
        with open(args.spec_file) as fh:
            spec = SyntheticSpec.from_dict(json.load(fh))
        spec.seed = args.seed
    else:
        spec = preset(args.preset, n_nodes=args.n, seed=args.seed, match=args.match, avg_degree=args.avg_degree)
    graph, design, truth = generate(spec)
    write_edgelist(graph, out / "edges.txt")
    write_attributes(design, graph.node_labels, out / "attributes.csv")
    save_truth(truth, out / "truth.json")
    print(f"{spec.name}: N={graph.n_nodes} L={graph.n_layers} E={graph.total_weight} -> {out}")
    write_manifest(out, args, spec.to_dict(), {"generation": args.seed}, [args.spec_file], t0)
    return 0


# fit -----------------------------------------------------------------------


def _config(args, C=None, gamma=None) -> EMConfig:
    return EMConfig(
        n_communities=C if C is not None else args.communities,
        gamma=gamma if gamma is not None else args.gamma,
        tolerance=args.tolerance,
        check_interval=args.check_interval,
        max_iterations=args.max_iterations,
        n_restarts=args.restarts,
        seed=args.seed,
        symmetric=args.symmetric,
        rescaling=_rescaling(args.rescale),
    )


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    graph, design = _load_inputs(args, need_attributes=args.gamma > 0)
    out = _out_dir(args.out)
    mask = None
    if args.mask:
        mask = load_mask(args.mask)
    elif args.tpe is not None:
        mask = biased_holdout(graph, args.holdout_fraction or 0.2, args.tpe, args.seed)
    elif args.holdout_fraction:
        mask = uniform_holdout(graph, design, args.holdout_fraction, args.seed)
    if mask is not None and not args.mask:
        save_mask(mask, out / "mask.json")
    config = _config(args)
    result = fit(graph, design, mask, config)
    save_fit(result, out, config, {"node_labels": list(graph.node_labels)})
    print(
        f"loglik={result.final_loglik:.6g} converged={str(result.converged).lower()} "
        f"restart={result.restart_index} iterations={result.iterations_used}"
    )
    write_manifest(
        out,
        args,
        config.to_dict(),
        {"init": args.seed, "mask": args.seed if mask is not None and not args.mask else None},
        [args.edges, args.attributes, args.mask],
        t0,
    )
    return 0


# predict -------------------------------------------------------------------


def cmd_predict(args) -> int:
    t0 = time.perf_counter()
    params = load_params(args.params)
    out = _out_dir(args.out)
    mask = load_mask(args.mask) if args.mask else HoldoutMask.empty()
    labels = _labels(args.params, params.n_nodes)
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target", "layer", "expected"])
        for (i, j, a), s in zip(mask.triples.tolist(), predict_scores(params, mask.triples).tolist()):
            w.writerow([labels[i], labels[j], a, f"{s:.10g}"])
    if params.n_categories:
        nodes = mask.attribute_nodes if mask.attribute_nodes.size else np.arange(params.n_nodes)
        pred, pi = predict_attributes(params, nodes)
        with open(out / "attributes.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "predicted", *[f"p{z}" for z in range(params.n_categories)]])
            for n, z, row in zip(nodes.tolist(), pred.tolist(), pi.tolist()):
                w.writerow([labels[n], z, *[f"{p:.10g}" for p in row]])
    print(f"{mask.n_triples} triple scores -> {out / 'scores.csv'}")
    write_manifest(out, args, {"params": str(args.params)}, {}, [args.mask], t0)
    return 0


def _labels(params_dir, n):
    meta = Path(params_dir) / "fit.json"
    if meta.exists():
        labels = json.loads(meta.read_text()).get("node_labels")
        if labels and len(labels) == n:
            return labels
    return [str(i) for i in range(n)]


# evaluate ------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    params = load_params(args.params)
    out = _out_dir(args.out)
    wanted = set(args.metrics.split(",")) if args.metrics else set(ALL_METRICS)
    bad = wanted - set(ALL_METRICS)
    if bad:
        raise UsageError(f"unknown metrics {sorted(bad)}")
    report = MetricReport()
    extra = {}
    if args.truth:
        truth = load_truth(args.truth)
        if truth.U0.shape != params.U.shape:
            raise DataError(f"truth shape {truth.U0.shape} does not match U {params.U.shape}")
        report = recovery_report(params.U, params.V, truth.U0)
    graph = design = None
    if args.edges:
        graph, design = _load_inputs(args, need_attributes=False)
    if args.mask:
        if graph is None:
            raise UsageError("--mask needs --edges")
        mask = load_mask(args.mask)
        report.auc = holdout_auc(params, graph, mask)
        report.accuracy = holdout_accuracy(params, design, mask)
        if report.accuracy is not None:
            train = np.setdiff1d(np.arange(design.n_nodes), mask.attribute_nodes)
            b = baselines(design.assignment[train], design.n_categories, design.assignment[mask.attribute_nodes])
            extra["baselines"] = {"rp": b.rp, "mrf": b.mrf}
    if "entropy" in wanted and design is not None and design.n_categories >= 2:
        groups = [g for g in support_communities(params.U) if g]
        report.entropy = community_entropy(groups, design.assignment, design.n_categories).tolist()

    d = report.to_dict()
    for k in ALL_METRICS:
        if k not in wanted:
            d[k] = None
    d.update(extra)
    with open(out / "report.json", "w") as fh:
        json.dump(d, fh, indent=2)
    for k in ALL_METRICS:
        v = d.get(k)
        if v is None:
            continue
        if isinstance(v, list):
            for c, h in enumerate(v):
                print(f"{'H_' + str(c):<10}{h:.4f}")
        else:
            print(f"{k:<10}{v:.4f}")
    for k, v in extra.get("baselines", {}).items():
        if v is not None:
            print(f"{k:<10}{v:.4f}")
    write_manifest(out, args, {"metrics": sorted(wanted)}, {}, [args.truth, args.edges, args.attributes, args.mask], t0)
    return 0


# cv ------------------------------------------------------------------------


def cmd_cv(args) -> int:
    t0 = time.perf_counter()
    gammas = _floats(args.gammas)
    graph, design = _load_inputs(args, need_attributes=any(g > 0 for g in gammas))
    out = _out_dir(args.out)
    grid = GridSpec(_ints(args.communities_grid), gammas, args.folds, args.seed, args.tpe)
    template = _config(args, C=grid.c_values[0], gamma=grid.gamma_values[0])

    def progress(cell):
        a = "-" if cell.auc_mean is None else f"{cell.auc_mean:.3f}"
        b = "-" if cell.acc_mean is None else f"{cell.acc_mean:.3f}"
        status = f"error: {cell.error}" if cell.error else f"auc={a} acc={b}"
        print(f"C={cell.C} gamma={cell.gamma:g} {status}", flush=True)

    report = grid_search(graph, design, grid, template, progress=progress)
    (out / "cv_report.json").write_text(report.to_json())
    print(report.table())
    if report.selected:
        print(f"selected C={report.selected[0]} gamma={report.selected[1]:g}")
    write_manifest(
        out,
        args,
        {"grid": report.grid, "template": template.to_dict()},
        {"masks": args.seed, "init": args.seed},
        [args.edges, args.attributes],
        t0,
    )
    return 1 if report.failed or report.selected is None else 0


# benchmark -----------------------------------------------------------------

_BENCH_METRICS = ("f1", "jaccard", "cs", "l1")


def cmd_benchmark(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args.out)
    presets = [p.strip().upper() for p in args.preset.split(",")]
    matches = _floats(args.matches)
    rows = []  # (method, preset, sample, metrics dict)

    def run(graph, design, truth, gamma, label, name, s):
        cfg = EMConfig(2, gamma=gamma, n_restarts=args.restarts, seed=args.seed + s, max_iterations=args.max_iterations)
        res = fit(graph, design if gamma > 0 else None, None, cfg)
        rep = recovery_report(res.params.U, res.params.V, truth.U0)
        rows.append((label, name, s, {k: getattr(rep, k) for k in _BENCH_METRICS}))
        print(f"{name} sample {s} {label}: F1={rep.f1:.3f}", flush=True)

    for name in presets:
        for s in range(args.samples):
            # the network stream does not depend on the match, so gamma=0 runs once per sample
            graph, design, truth = generate(preset(name, args.n, seed=args.seed + s, match=matches[0] if matches else 0.5))
            run(graph, None, truth, 0.0, "MTCOV-γ0", name, s)
            for m in matches:
                graph, design, truth = generate(preset(name, args.n, seed=args.seed + s, match=m))
                run(graph, design, truth, m, f"MTCOV_{m:g}", name, s)

    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "preset", "sample", *_BENCH_METRICS])
        for label, name, s, met in rows:
            w.writerow([label, name, s, *[f"{met[k]:.6f}" for k in _BENCH_METRICS]])

    methods = ["MTCOV-γ0"] + [f"MTCOV_{m:g}" for m in matches]
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", *[f"{p}_{k}" for p in presets for k in _BENCH_METRICS]])
        for meth in methods:
            cells = []
            for p in presets:
                for k in _BENCH_METRICS:
                    v = [met[k] for label, name, _, met in rows if label == meth and name == p]
                    cells.append(f"{np.mean(v):.3f}±{np.std(v):.3f}")
            w.writerow([meth, *cells])
    print((out / "table.csv").read_text())
    write_manifest(
        out,
        args,
        {"presets": presets, "n": args.n, "matches": matches, "samples": args.samples, "restarts": args.restarts},
        {"base": args.seed},
        [],
        t0,
    )
    return 0


# parser --------------------------------------------------------------------


def _add_graph_inputs(p, required=True):
    p.add_argument("--edges", required=required, help="edge list: source target layer [weight]")
    p.add_argument("--attributes", help="CSV with a node id column followed by attribute columns")
    p.add_argument("--attribute-name", help="comma separated attribute columns (default: all)")
    p.add_argument("--undirected", action="store_true", help="expand each row into two arcs")


def _add_solver(p):
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=1e-2)
    p.add_argument("--check-interval", type=int, default=10)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--symmetric", action="store_true", help="tie incoming and outgoing memberships")
    p.add_argument("--rescale", help="'default' or a JSON file of normalisation coefficients")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtcov", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthetic multilayer benchmark with attributes")
    p.add_argument("--preset", default="G1", choices=["G1", "G2", "G3"])
    p.add_argument("--spec-file", help="JSON generator spec instead of a preset")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--match", type=float, default=0.5)
    p.add_argument("--avg-degree", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit memberships, affinities and attribute weights")
    _add_graph_inputs(p)
    p.add_argument("--communities", type=int, required=True)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask", help="holdout mask JSON")
    p.add_argument("--holdout-fraction", type=float, help="draw a uniform holdout of this size")
    p.add_argument("--tpe", type=float, help="draw a biased holdout with this edge probability")
    _add_solver(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="expected edge counts and attribute predictions")
    p.add_argument("--params", required=True, help="directory written by fit")
    p.add_argument("--mask", help="score the triples and attribute rows of this mask")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="recovery and held-out prediction scores")
    p.add_argument("--params", required=True)
    p.add_argument("--truth", help="truth JSON written by generate")
    _add_graph_inputs(p, required=False)
    p.add_argument("--mask")
    p.add_argument("--metrics", help=f"comma separated subset of {','.join(ALL_METRICS)}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cv", help="k-fold grid search over C and gamma")
    _add_graph_inputs(p)
    p.add_argument("--communities", dest="communities_grid", default="2", help="comma separated C values")
    p.add_argument("--gamma", dest="gammas", default="0.1,0.3,0.5,0.7,0.9", help="comma separated gamma values")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--tpe", type=float, help="biased structural holdout instead of k-fold")
    p.add_argument("--seed", type=int, default=0)
    _add_solver(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("benchmark", help="recovery table over presets and attribute matches")
    p.add_argument("--preset", default="G1,G2,G3", help="comma separated presets")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--match", dest="matches", default="0.3,0.5,0.7,0.9", help="comma separated matches")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (DataError, FitError, ValueError, OSError) as exc:
        print(f"mtcov: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
