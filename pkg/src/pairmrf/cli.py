"""Command-line interface: ``pairmrf {gen,fit,path,eval,roc}``.

Exit codes: 0 success, 2 usage error, 3 numerical failure.

Output formats
--------------
Data CSV
    One row per observation, columns ``x0 .. x{d-1}`` in node order, values
    in ``%.17e``. A header row is written only with ``--header``.
Edge list
    ``# d=<d>`` followed by one ``i j`` pair (0-based, ``i < j``) per line.
Model file (JSON)
    ``{"method", "seed", "lambdas", "selected", "models", ...}``; each entry
    of ``models`` holds ``lambda`` and either ``theta`` (fields ``d, m1,
    m2, edges, theta_v, theta_e``) or, for ``gauss``, ``omega`` and
    ``mean``. TRW models also carry ``alpha`` aligned with ``theta.edges``.
Metric CSV
    Columns ``lam, nll, nll_kind, hyvarinen, tp, tn, edges``; empty cells
    where a metric does not apply. ``nll_kind`` is ``tree_exact``,
    ``trw_bound`` or ``gaussian``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("pairmrf")


class UsageError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="pairmrf", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="BLAS worker threads (1 = sequential); must be set before numpy loads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--model", choices=["gaussian", "copula", "mixture"], default="gaussian")
    g.add_argument("--graph", choices=["tree", "er", "chain", "empty"], default="tree")
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=float, default=None, help="edge probability for --graph er (default 2/d)")
    g.add_argument("--components", type=_positive_int, default=3, help="trees in --model mixture")
    g.add_argument("--unit-variance", action="store_true",
                   help="center and scale columns to unit variance (gaussian only)")
    g.add_argument("--header", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output prefix: PREFIX.csv, PREFIX.edges, ...")

    for name, text in (("fit", "fit a model at one lambda or along a path"),
                       ("path", "fit along a path and write held-out risk per lambda")):
        f = sub.add_parser(name, help=text)
        f.add_argument("--data", required=True)
        f.add_argument("--method", choices=["trw", "quasr", "gauss"], default="trw")
        f.add_argument("--m1", type=_positive_int, default=2)
        f.add_argument("--m2", type=_positive_int, default=2)
        f.add_argument("--grid", type=_positive_int, default=128)
        f.add_argument("--lambda", dest="lam", type=_nonneg_float, nargs="+", default=None)
        f.add_argument("--lambda-count", type=_positive_int, default=30)
        f.add_argument("--decades", type=float, default=2.0)
        f.add_argument("--fit-graph", default=None, help="edge list restricting the fitted graph")
        f.add_argument("--holdout", default=None)
        f.add_argument("--truth", default=None, help="true edge list, adds tp/tn columns")
        f.add_argument("--solver", choices=["ista", "fista"], default="ista")
        f.add_argument("--n-trees", type=_positive_int, default=100)
        f.add_argument("--fw-steps", type=int, default=0, help="Frank-Wolfe steps on edge weights")
        f.add_argument("--bp-tol", type=float, default=1e-6)
        f.add_argument("--bp-max-iter", type=_positive_int, default=500)
        f.add_argument("--max-iter", type=_positive_int, default=1000)
        f.add_argument("--obj-tol", type=float, default=1e-4)
        f.add_argument("--rho", type=float, default=1.0)
        f.add_argument("--admm-tol", type=float, default=1e-4)
        f.add_argument("--no-diag-penalty", action="store_true",
                       help="gauss: leave the diagonal of the precision unpenalized")
        f.add_argument("--seed", type=int, default=0)
        f.add_argument("--out", required=True,
                       help="model JSON (fit) or metric CSV (path)")
        f.add_argument("--diagnostics", default=None)

    e = sub.add_parser("eval", help="held-out metrics for each model in a model file")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--truth", default=None)
    e.add_argument("--grid", type=_positive_int, default=None)
    e.add_argument("--out", required=True)

    r = sub.add_parser("roc", help="true positive / true negative rates per lambda")
    r.add_argument("--model", required=True)
    r.add_argument("--truth", required=True)
    r.add_argument("--out", required=True)
    return p


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args):
    import numpy as np

    from . import datagen
    from .graphmodel import Graph

    if args.d < 1:
        raise UsageError("--d must be at least 1")
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    rng = np.random.default_rng(args.seed)
    d = args.d
    if args.model == "mixture":
        ds = datagen.gen_tree_mixture(d, args.n, rng, n_components=args.components)
    else:
        if args.graph == "tree":
            graph = datagen.gen_tree_graph(d, rng)
        elif args.graph == "er":
            p = args.p if args.p is not None else min(1.0, 2.0 / d)
            if not 0 <= p <= 1:
                raise UsageError("--p must lie in [0, 1]")
            graph = datagen.gen_er_graph(d, p, rng)
        elif args.graph == "chain":
            graph = Graph(d, tuple((i, i + 1) for i in range(d - 1)))
        else:
            graph = Graph.empty(d)
        if args.model == "gaussian":
            ds = datagen.gen_sparse_gaussian(graph, args.n, rng)
            if args.unit_variance:
                ds.values = datagen.standardize(ds.values)[0]
                ds.meta["unit_variance"] = True
        else:
            ds = datagen.gen_copula(graph, args.n, rng)
    ds.meta.update(seed=args.seed, graph=args.graph if args.model != "mixture" else "tree_union")
    datagen.write_csv(args.out + ".csv", ds.values, header=args.header)
    datagen.write_edges(args.out + ".edges", ds.graph)
    if ds.omega is not None:
        datagen.write_csv(args.out + ".omega.csv", ds.omega)
    if ds.labels is not None:
        np.savetxt(args.out + ".labels.csv", ds.labels, fmt="%d")
    datagen.write_meta(args.out + ".meta.json", ds.meta)
    return EXIT_OK


# ---------------------------------------------------------------------------
# fitting


def _load_data(path, what="data"):
    from . import datagen

    try:
        X = datagen.read_csv(path)
    except OSError as exc:
        raise UsageError(f"cannot read {what} file {path}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"malformed {what} file {path}: {exc}") from exc
    return X


def _load_edges(path, d):
    from . import datagen

    try:
        graph = datagen.read_edges(path, d)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read edge list {path}: {exc}") from exc
    if graph.d != d:
        raise UsageError(f"edge list has d={graph.d} but data has {d} columns")
    return graph


def _check_unit(X, method):
    import numpy as np

    if np.any(X < 0) or np.any(X > 1):
        raise UsageError(f"--method {method} needs data in [0, 1]")


def _run_fits(args, X):
    """Fit along the requested lambdas; returns (model document, per-lambda
    models in evaluation form)."""
    import numpy as np

    from . import optim, quasr
    from .basis import BasisSpec
    from .graphmodel import Graph, ParamVector
    from .gridfn import Grid1D
    from .spantree import edge_weights_init, frank_wolfe_alpha

    d = X.shape[1]
    graph = _load_edges(args.fit_graph, d) if args.fit_graph else Graph.complete(d)
    rng = np.random.default_rng(args.seed)
    doc = {"method": args.method, "seed": args.seed, "d": d}

    if args.method == "gauss":
        from . import datagen

        Z, mean, scale = datagen.standardize(X)
        S = quasr.gauss_stats(Z).sigma_hat
        pen_diag = not args.no_diag_penalty
        lam_start = quasr.lambda_start_quasr(quasr.gauss_score_stats(S, X.shape[0], pen_diag))
        lambdas = args.lam or optim.auto_lambdas(lam_start, args.lambda_count, args.decades)
        lambdas = sorted(lambdas, reverse=True)
        omegas = quasr.gauss_cd_path(S, lambdas, penalize_diagonal=pen_diag)
        models = []
        for lam, om in zip(lambdas, omegas):
            omx = om / np.outer(scale, scale)
            models.append({"lambda": lam, "omega": omx.tolist(), "mean": mean.tolist()})
        doc.update(lambda_start=lam_start, standardized=True)
        return doc, lambdas, models

    _check_unit(X, args.method)
    spec = BasisSpec(args.m1, args.m2)
    doc.update(m1=args.m1, m2=args.m2)
    if args.method == "quasr":
        stats = quasr.score_stats(X, graph, spec)
        lam_start = quasr.lambda_start_quasr(stats)
        lambdas = args.lam or optim.auto_lambdas(lam_start, args.lambda_count, args.decades)
        lambdas = sorted(lambdas, reverse=True)
        fits = quasr.quasr_path(stats, lambdas, rho=args.rho, tol=args.admm_tol)
        models = [{"lambda": f.lam, "theta": f.theta.to_dict(), "objective": f.objective,
                   "iterations": f.iterations} for f in fits]
        doc.update(lambda_start=lam_start)
        return doc, lambdas, models

    grid = Grid1D(args.grid)
    alpha = edge_weights_init(graph, args.n_trees, rng)
    mu_hat = optim.empirical_moments(X, graph, spec)
    lam_start = (optim.lambda_start_mle(ParamVector.from_flat(spec, graph, mu_hat))
                 if spec.m2 <= spec.m1 else None)
    if args.lam:
        lambdas = sorted(args.lam, reverse=True)
    elif lam_start is None:
        raise UsageError("automatic lambda path for trw needs --m2 <= --m1; pass --lambda")
    else:
        lambdas = optim.auto_lambdas(lam_start, args.lambda_count, args.decades)
    fit_kw = dict(grid=grid, solver=args.solver, max_iter=args.max_iter, obj_tol=args.obj_tol,
                  bp_tol=args.bp_tol, bp_max_iter=args.bp_max_iter)
    bp_kw = {"tol": args.bp_tol, "max_iter": args.bp_max_iter}
    fits, theta0 = [], None
    for lam in lambdas:
        fit = optim.fit_trw_mle(X, graph, spec, lam, alpha=alpha, theta0=theta0, mu_hat=mu_hat,
                                **fit_kw)
        if args.fw_steps > 0:
            alpha, _ = frank_wolfe_alpha(fit.theta, alpha, args.fw_steps, grid=grid,
                                         bp_kwargs=bp_kw)
            fit = optim.fit_trw_mle(X, graph, spec, lam, alpha=alpha, theta0=fit.theta,
                                    mu_hat=mu_hat, **fit_kw)
        fits.append(fit)
        theta0 = fit.theta
    models = [{"lambda": f.lam, "theta": f.theta.to_dict(), "objective": f.objective,
               "iterations": f.iterations, "converged": f.converged,
               "alpha": alpha.alpha.tolist()} for f in fits]
    doc.update(lambda_start=lam_start, grid=args.grid, n_trees=args.n_trees)
    return doc, lambdas, models


def _model_metrics(doc, model, X, truth=None, grid=None):
    """Metric row for one fitted model on data ``X``."""
    import numpy as np

    from . import evaluate, quasr
    from .exceptions import EvaluationError
    from .graphmodel import Graph, ParamVector, support
    from .gridfn import Grid1D
    from .spantree import EdgeWeights

    row = {"lam": float(model["lambda"])}
    if "omega" in model:
        om = np.asarray(model["omega"])
        d = om.shape[0]
        sel = {(i, j) for i in range(d) for j in range(i + 1, d) if om[i, j] != 0}
        try:
            row["nll"] = evaluate.gaussian_nll(om, X, mean=model["mean"])
            row["nll_kind"] = "gaussian"
        except EvaluationError as exc:  # non-PD estimate: NLL undefined
            log.info("lambda=%g: %s", row["lam"], exc)
    else:
        theta = ParamVector.from_dict(model["theta"])
        if X.shape[1] != theta.graph.d:
            raise UsageError(f"model has d={theta.graph.d} but data has {X.shape[1]} columns")
        _check_unit(X, doc["method"])
        sel = support(theta, 0.0)
        g = Grid1D(grid or doc.get("grid", 128))
        sgraph = Graph(theta.graph.d, tuple(sorted(sel)))
        if sgraph.is_forest():
            row["nll"] = evaluate.tree_exact_nll(theta, sgraph, X, grid=g)
            row["nll_kind"] = "tree_exact"
        elif "alpha" in model:
            alpha = EdgeWeights(theta.graph, model["alpha"])
            row["nll"] = evaluate.trw_nll_upper(theta, alpha, X, grid=g)
            row["nll_kind"] = "trw_bound"
        if doc["method"] == "quasr":
            st = quasr.score_stats(X, theta.graph, theta.spec)
            row["hyvarinen"] = quasr.heldout_hyvarinen(theta, st)
    row["edges"] = len(sel)
    if truth is not None:
        row["tp"], row["tn"] = evaluate.edge_rates(sel, truth)
    return row


def _select(doc, rows):
    key = "hyvarinen" if doc["method"] == "quasr" else "nll"
    vals = [r.get(key) for r in rows]
    ok = [(v, k) for k, v in enumerate(vals) if v is not None and v == v]
    return (min(ok)[1], key) if ok else (None, key)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def cmd_fit(args):
    X = _load_data(args.data)
    doc, lambdas, models = _run_fits(args, X)
    doc["lambdas"] = [float(v) for v in lambdas]
    doc["models"] = models
    doc["selected"] = None
    if args.holdout:
        H = _load_data(args.holdout, "holdout")
        if H.shape[1] != X.shape[1]:
            raise UsageError("holdout and training data have different column counts")
        rows = [_model_metrics(doc, m, H) for m in models]
        doc["selected"], doc["selection_metric"] = _select(doc, rows)
        doc["holdout_metrics"] = rows
    _write_json(args.out, doc)
    if args.diagnostics:
        _write_json(args.diagnostics, {"status": "ok", "lambdas": doc["lambdas"],
                                       "selected": doc["selected"]})
    return EXIT_OK


def cmd_path(args):
    from . import evaluate

    if not args.holdout:
        raise UsageError("path needs --holdout to compute risk along the path")
    X = _load_data(args.data)
    H = _load_data(args.holdout, "holdout")
    if H.shape[1] != X.shape[1]:
        raise UsageError("holdout and training data have different column counts")
    truth = _load_edges(args.truth, X.shape[1]) if args.truth else None
    doc, lambdas, models = _run_fits(args, X)
    rows = [_model_metrics(doc, m, H, truth) for m in models]
    evaluate.write_metrics(args.out, rows, METRIC_FIELDS)
    if args.diagnostics:
        doc.update(lambdas=[float(v) for v in lambdas], models=models)
        _write_json(args.diagnostics, doc)
    return EXIT_OK


METRIC_FIELDS = ("lam", "nll", "nll_kind", "hyvarinen", "tp", "tn", "edges")


def _load_model(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read model file {path}: {exc}") from exc
    if "models" not in doc or "method" not in doc:
        raise UsageError(f"{path} is not a pairmrf model file")
    return doc


def cmd_eval(args):
    from . import evaluate

    doc = _load_model(args.model)
    X = _load_data(args.data)
    if X.shape[1] != doc["d"]:
        raise UsageError(f"model has d={doc['d']} but data has {X.shape[1]} columns")
    truth = _load_edges(args.truth, X.shape[1]) if args.truth else None
    rows = [_model_metrics(doc, m, X, truth, args.grid) for m in doc["models"]]
    evaluate.write_metrics(args.out, rows, METRIC_FIELDS)
    return EXIT_OK


def cmd_roc(args):
    import numpy as np

    from . import evaluate
    from .graphmodel import ParamVector

    doc = _load_model(args.model)
    truth = _load_edges(args.truth, doc["d"])
    pairs = []
    for m in doc["models"]:
        model = np.asarray(m["omega"]) if "omega" in m else ParamVector.from_dict(m["theta"])
        pairs.append((m["lambda"], model))
    rows = [{"lam": p.lam, "tp": p.tp_rate, "tn": p.tn_rate, "edges": p.n_edges_selected}
            for p in evaluate.roc_curve(pairs, truth)]
    evaluate.write_metrics(args.out, rows, ("lam", "tp", "tn", "edges"))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "path": cmd_path, "eval": cmd_eval, "roc": cmd_roc}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # BLAS pools read these when numpy is first imported
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .exceptions import (BPNotConverged, EvaluationError, FitFailure, NotConverged,
                             PairMRFError, StepFailure)

    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except (BPNotConverged, FitFailure, NotConverged, StepFailure, EvaluationError) as exc:
        print(f"pairmrf: numerical failure: {exc}", file=sys.stderr)
        diag = getattr(args, "diagnostics", None)
        if diag is None and args.command in ("fit", "path"):
            diag = args.out + ".diag.json"
        if diag:
            _write_json(diag, {"status": "failed", "error": type(exc).__name__,
                               "message": str(exc),
                               "details": getattr(exc, "diagnostics", None)
                               or getattr(exc, "residuals", None)})
        return EXIT_NUMERIC
    except PairMRFError as exc:
        print(f"pairmrf: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
