"""Command-line interface.

Subcommands: fit-binary, fit-ordinal, fit-density, fit-survival, predict,
cv, elpd, project, simulate, verify, sbc.  Exit codes: 0 success, 2 usage
error, 3 data error, 4 numerical failure, 5 verification-check failure.

Fits write one line-delimited draws file per chain, a summary table of
posterior means and 2.5/50/97.5% quantiles (with split-Rhat when several
chains run), and plot-ready grids for the query points.  A flat key=value
config file may supply any flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys

import numpy as np

from . import density as dens
from . import ordinal as ordmod
from . import survival as surv
from .data import Dataset, Schema, load_dataset, simulate_dunson, write_dataset
from .draws import (PosteriorDraws, combined_rhat_summary, load_draws,
                    save_draws, summarize, write_summary)
from .errors import (ConvergenceError, DataError, DomainError,
                     NumericalOverflowError, SchemaError)
from .evaluation import elpd_loo, kfold_deviance, project_additive
from .verify import (check_dp_property, check_latent_representation,
                     check_link_equivalence, oracle_integrated_marginal,
                     sbc_run)

# (default, source) per model; sources: "paper" = stated default,
# "package" = design decision.
FIT_DEFAULTS = {
    "binary": {"trees": (50, "paper"), "burnin": (2500, "paper"),
               "iters": (2500, "paper"), "thin": (1, "package"),
               "a_gamma": (1.0, "package"), "b_gamma": (1.0, "package")},
    "ordinal": {"trees": (50, "paper"), "burnin": (2500, "paper"),
                "iters": (2500, "paper"), "thin": (1, "package"),
                "a_gamma": (1.0, "package"), "b_gamma": (1.0, "package"),
                "w": (0.5, "package")},
    "density": {"trees": (50, "package"), "burnin": (2000, "paper"),
                "iters": (2000, "paper"), "thin": (1, "package"),
                "Kmax": (25, "package"), "w": (0.5, "package")},
    "survival": {"trees": (50, "package"), "burnin": (2500, "package"),
                 "iters": (2500, "package"), "thin": (1, "package"),
                 "a_lambda": (1.0, "paper"), "b_lambda": (1.0, "paper"),
                 "w": (0.5, "package")},
}


def _read_config_file(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _resolve(args, name, model, cast=float):
    """Flag > config file > model default; returns (value, provenance)."""
    flag = getattr(args, name.replace("-", "_"), None)
    if flag is not None:
        return flag, "user"
    if args.config_values and name in args.config_values:
        return cast(args.config_values[name]), "config"
    default, source = FIT_DEFAULTS[model][name]
    return default, source


def _add_common_fit_flags(p):
    p.add_argument("--data", required=True, help="training CSV path")
    p.add_argument("--predictors", help="comma-separated predictor columns")
    p.add_argument("--categorical", help="comma-separated categorical predictors")
    p.add_argument("--trees", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--iters", type=int, help="post-burn-in iterations")
    p.add_argument("--thin", type=int)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sigma-mu", type=float, help="leaf scale override")
    p.add_argument("--query", help="CSV of query predictor points")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--no-loglik", action="store_true",
                   help="skip the pointwise log-likelihood records")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloglogbart",
        description="Tree-ensemble regression with the complementary log-log link",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-binary", help="binary cloglog/log-log regression")
    _add_common_fit_flags(p)
    p.add_argument("--outcome", required=True)
    p.add_argument("--link", choices=["cloglog", "loglog"], default="cloglog")
    p.add_argument("--augment-zeros", action="store_true")
    p.add_argument("--a-gamma", type=float)
    p.add_argument("--b-gamma", type=float)

    p = sub.add_parser("fit-ordinal", help="ordinal regression (PH or NPH)")
    _add_common_fit_flags(p)
    p.add_argument("--outcome", required=True)
    p.add_argument("--K", type=int, help="number of ordinal levels")
    p.add_argument("--mode", choices=["ph", "nph"], default="ph")
    p.add_argument("--a-gamma", type=float)
    p.add_argument("--b-gamma", type=float)
    p.add_argument("--w", type=float, help="category-slot Dirichlet weight")

    p = sub.add_parser("fit-density", help="conditional density regression")
    _add_common_fit_flags(p)
    p.add_argument("--outcome", required=True)
    p.add_argument("--Kmax", type=int, help="stick truncation level")
    p.add_argument("--mode", choices=["ph", "nph"], default="nph",
                   help="ph shares one r(x); its weight dependence is limited "
                        "to a covariate-driven concentration")
    p.add_argument("--w", type=float)
    p.add_argument("--y-grid", type=int, default=101,
                   help="points in the density output grid")

    p = sub.add_parser("fit-survival", help="piecewise-exponential hazards")
    _add_common_fit_flags(p)
    p.add_argument("--time", required=True)
    p.add_argument("--status", required=True)
    p.add_argument("--bins", type=int, help="override B = ceil(n^(1/3))")
    p.add_argument("--mode", choices=["ph", "nph"], default="ph")
    p.add_argument("--a-lambda", type=float)
    p.add_argument("--b-lambda", type=float)
    p.add_argument("--w", type=float)
    p.add_argument("--t-grid", type=int, default=101)

    p = sub.add_parser("predict", help="evaluate stored draws at new points")
    p.add_argument("--draws", required=True)
    p.add_argument("--data", required=True, help="CSV of predictor points")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--y-grid", type=int, default=101)
    p.add_argument("--t-grid", type=int, default=101)

    p = sub.add_parser("cv", help="k-fold held-out deviance")
    p.add_argument("--model", required=True,
                   choices=["binary", "ordinal", "density", "survival"])
    p.add_argument("--data", required=True)
    p.add_argument("--outcome")
    p.add_argument("--time")
    p.add_argument("--status")
    p.add_argument("--predictors")
    p.add_argument("--categorical")
    p.add_argument("--K", type=int)
    p.add_argument("--mode", choices=["ph", "nph"], default="ph")
    p.add_argument("--compare-mode", choices=["ph", "nph"],
                   help="also fit this mode; report (reference - competitor)")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--trees", type=int, default=50)
    p.add_argument("--burnin", type=int, default=500)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("elpd", help="PSIS-LOO from stored draws")
    p.add_argument("--draws", required=True)

    p = sub.add_parser("project", help="additive posterior projection")
    p.add_argument("--draws", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--outcome")
    p.add_argument("--time")
    p.add_argument("--status")
    p.add_argument("--predictors")
    p.add_argument("--categorical")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("simulate", help="write a benchmark dataset")
    p.add_argument("--dgp", choices=["dunson"], required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="run the identity/theorem checks")
    p.add_argument("--all", action="store_true")
    p.add_argument("--conjugacy", action="store_true")
    p.add_argument("--link", action="store_true")
    p.add_argument("--dp", action="store_true")
    p.add_argument("--latent", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mc-draws", type=int, default=100_000)

    p = sub.add_parser("sbc", help="simulation-based calibration")
    p.add_argument("--model", choices=["ordinal", "survival", "density"],
                   default="ordinal")
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--trees", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--corrupt", action="store_true",
                   help="negative control: corrupt the B statistics")

    return parser


# ---------------------------------------------------------------------------
# Fit plumbing
# ---------------------------------------------------------------------------


def _split_arg(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else None


def _schema_from_args(args, outcome_kind="numeric") -> Schema:
    return Schema(
        outcome=getattr(args, "outcome", None),
        time=getattr(args, "time", None),
        status=getattr(args, "status", None),
        predictors=_split_arg(getattr(args, "predictors", None)),
        categorical=_split_arg(getattr(args, "categorical", None)) or [],
        outcome_kind=outcome_kind,
        K=getattr(args, "K", None),
    )


def _query_matrix(dataset: Dataset, path) -> np.ndarray:
    """Query CSV expanded against the training predictor schema."""
    raw_cols = [c for c in dataset.names
                if dataset.roles[c] == "predictor"]
    schema = Schema(predictors=raw_cols + list(dataset.categorical_levels),
                    categorical=list(dataset.categorical_levels))
    q = load_dataset(path, schema)
    cols = []
    for name in dataset.predictor_names():
        if name in q.names:
            cols.append(q.column(name))
        else:
            raise DataError(f"query file lacks predictor column '{name}'")
    return np.column_stack(cols)


def _chain_seeds(seed: int, chains: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(chains)


def _fit_one_chain(payload):
    kind, kwargs, seq = payload
    rng = np.random.default_rng(seq)
    fitter = {"binary": ordmod.fit_binary, "ordinal": ordmod.fit_ordinal,
              "density": dens.fit_density, "survival": surv.fit_survival}[kind]
    return fitter(rng=rng, **kwargs)


def _run_chains(kind, kwargs, seed, chains) -> list[PosteriorDraws]:
    payloads = [(kind, kwargs, seq) for seq in _chain_seeds(seed, chains)]
    if chains == 1:
        return [_fit_one_chain(payloads[0])]
    workers = min(chains, os.cpu_count() or 1)
    try:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_fit_one_chain, payloads))
    except (OSError, concurrent.futures.process.BrokenProcessPool):
        return [_fit_one_chain(p) for p in payloads]


def _write_fit_outputs(per_chain, args, provenance) -> None:
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    for c, draws in enumerate(per_chain, 1):
        draws.config["defaults_provenance"] = provenance
        draws.config["chains"] = len(per_chain)
        save_draws(draws, os.path.join(out_dir, f"draws_chain{c}.jsonl"))
    if len(per_chain) == 1:
        write_summary(summarize(per_chain[0]), os.path.join(out_dir, "summary.tsv"))
    else:
        rows = combined_rhat_summary(per_chain)
        cols = ["quantity", "mean", "q2.5", "q50", "q97.5", "rhat"]
        with open(os.path.join(out_dir, "summary.tsv"), "w", encoding="utf-8") as fh:
            fh.write("\t".join(cols) + "\n")
            for row in rows:
                fh.write("\t".join(
                    row["quantity"] if c == "quantity" else f"{row[c]:.9g}"
                    for c in cols) + "\n")


def _write_grid(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(f"{v:.9g}" for v in row) + "\n")


def _pmf_grid(per_chain, Xq, path) -> None:
    pmf = np.concatenate([ordmod.predict_ordinal(d, Xq) for d in per_chain])
    mean = pmf.mean(axis=0)
    lo = np.quantile(pmf, 0.025, axis=0)
    hi = np.quantile(pmf, 0.975, axis=0)
    rows = []
    for q in range(Xq.shape[0]):
        for k in range(mean.shape[1]):
            rows.append((q, k + 1, mean[q, k], lo[q, k], hi[q, k]))
    _write_grid(path, ["query", "category", "mean", "q2.5", "q97.5"], rows)


def _density_grid(per_chain, Xq, n_y, path) -> None:
    first = per_chain[0]
    m, sd = first.extras["y_mean"], first.extras["y_sd"]
    y_grid = np.linspace(m - 4.0 * sd, m + 4.0 * sd, n_y)
    rows = []
    for q in range(Xq.shape[0]):
        dens_draws = np.concatenate([
            dens.conditional_density(d, Xq[q], y_grid, query_index=q)
            for d in per_chain])
        mean = dens_draws.mean(axis=0)
        lo = np.quantile(dens_draws, 0.025, axis=0)
        hi = np.quantile(dens_draws, 0.975, axis=0)
        rows.extend((q, y_grid[i], mean[i], lo[i], hi[i]) for i in range(n_y))
    _write_grid(path, ["query", "y", "mean", "q2.5", "q97.5"], rows)


def _survival_grid(per_chain, Xq, y_max, n_t, path) -> None:
    t_grid = np.linspace(0.0, y_max, n_t)
    rows = []
    for q in range(Xq.shape[0]):
        curves = []
        for d in per_chain:
            r = d.params["r_query"][:, q]
            curves.append(surv.survival_function(d, Xq[q], t_grid, r_draws=r))
        curves = np.concatenate(curves)
        mean = curves.mean(axis=0)
        lo = np.quantile(curves, 0.025, axis=0)
        hi = np.quantile(curves, 0.975, axis=0)
        rows.extend((q, t_grid[i], mean[i], lo[i], hi[i]) for i in range(n_t))
    _write_grid(path, ["query", "t", "mean", "q2.5", "q97.5"], rows)


def _cmd_fit(args, model: str) -> int:
    args.config_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
    outcome_kind = {"binary": "binary", "ordinal": "ordinal"}.get(model, "numeric")
    dataset = load_dataset(args.data, _schema_from_args(args, outcome_kind))
    X = dataset.predictors()
    Xq = _query_matrix(dataset, args.query) if args.query else None

    prov = {}

    def get(name, cast=float):
        value, source = _resolve(args, name, model, cast)
        prov[name] = source
        return value

    common = {
        "n_trees": int(get("trees", int)),
        "burnin": int(get("burnin", int)),
        "n_iter": int(get("iters", int)),
        "thin": int(get("thin", int)),
        "seed": args.seed,
        "X_query": Xq,
        "record_loglik": not args.no_loglik,
    }
    prov["sigma_mu"] = "user" if args.sigma_mu is not None else "paper"
    if args.sigma_mu is not None:
        common["sigma_mu"] = args.sigma_mu

    if model == "binary":
        y = dataset.outcome().astype(int)
        kwargs = dict(common, X=X, y=y, link=args.link,
                      augment_zeros=args.augment_zeros,
                      a_gamma=get("a_gamma"), b_gamma=get("b_gamma"))
    elif model == "ordinal":
        y = dataset.outcome().astype(int)
        K = args.K or int(y.max())
        kwargs = dict(common, X=X, y=y, K=K, proportional=(args.mode == "ph"),
                      a_gamma=get("a_gamma"), b_gamma=get("b_gamma"),
                      w_cat=get("w"))
    elif model == "density":
        common.pop("sigma_mu", None)  # density forests use 1/sqrt(T)
        y = dataset.outcome()
        kwargs = dict(common, X=X, y=y, K_max=int(get("Kmax", int)),
                      mode=args.mode, w_cat=get("w"))
    else:
        t, status = dataset.time_status()
        kwargs = dict(common, X=X, y=t, delta=status, mode=args.mode,
                      a_lambda=get("a_lambda"), b_lambda=get("b_lambda"),
                      w_cat=get("w"))
        if args.bins is not None:
            kwargs["n_bins"] = args.bins
            prov["bins"] = "user"
        else:
            prov["bins"] = "paper"

    per_chain = _run_chains(model, kwargs, args.seed, args.chains)
    _write_fit_outputs(per_chain, args, prov)

    if Xq is not None:
        out = args.out_dir
        if model in ("binary", "ordinal"):
            _pmf_grid(per_chain, Xq, os.path.join(out, "pmf_grid.tsv"))
        elif model == "density":
            _density_grid(per_chain, Xq, args.y_grid, os.path.join(out, "density_grid.tsv"))
        else:
            t, _ = dataset.time_status()
            _survival_grid(per_chain, Xq, float(t.max()), args.t_grid,
                           os.path.join(out, "survival_grid.tsv"))
    return 0


def _cmd_predict(args) -> int:
    draws = load_draws(args.draws)
    n_pred = draws.extras["n_predictors"]
    schema = Schema(predictors=None)
    q = load_dataset(args.data, schema)
    Xq = q.matrix
    if Xq.shape[1] != n_pred:
        raise DataError(f"expected {n_pred} predictor columns, got {Xq.shape[1]}")
    os.makedirs(args.out_dir, exist_ok=True)
    if draws.kind in ("binary", "ordinal"):
        _pmf_grid([draws], Xq, os.path.join(args.out_dir, "pmf_grid.tsv"))
    elif draws.kind == "density":
        m, sd = draws.extras["y_mean"], draws.extras["y_sd"]
        y_grid = np.linspace(m - 4 * sd, m + 4 * sd, args.y_grid)
        rows = []
        for qi in range(Xq.shape[0]):
            dd = dens.conditional_density(draws, Xq[qi], y_grid)
            mean = dd.mean(axis=0)
            lo = np.quantile(dd, 0.025, axis=0)
            hi = np.quantile(dd, 0.975, axis=0)
            rows.extend((qi, y_grid[i], mean[i], lo[i], hi[i])
                        for i in range(y_grid.size))
        _write_grid(os.path.join(args.out_dir, "density_grid.tsv"),
                    ["query", "y", "mean", "q2.5", "q97.5"], rows)
    else:
        edges = [e for e in draws.extras["edges"] if e != "inf"]
        t_max = 1.5 * max(edges[-1], 1e-12) if len(edges) > 1 else 1.0
        _survival_grid([draws], Xq, t_max, args.t_grid,
                       os.path.join(args.out_dir, "survival_grid.tsv"))
    return 0


def _cmd_cv(args) -> int:
    outcome_kind = {"binary": "binary", "ordinal": "ordinal"}.get(args.model, "numeric")
    dataset = load_dataset(args.data, _schema_from_args(args, outcome_kind))
    X = dataset.predictors()
    delta = None
    if args.model == "survival":
        y, delta = dataset.time_status()
    else:
        y = dataset.outcome()
        if args.model in ("binary", "ordinal"):
            y = y.astype(int)
    base = {"kind": args.model, "n_trees": args.trees, "burnin": args.burnin,
            "n_iter": args.iters}
    if args.model == "ordinal":
        base["K"] = args.K or int(np.max(y))
        base["proportional"] = args.mode == "ph"
    if args.model in ("survival", "density"):
        base["mode"] = args.mode
    ref = kfold_deviance(base, X, y, folds=args.folds, splits=args.splits,
                         seed=args.seed, delta=delta)
    print(f"deviance[{args.model}:{args.mode}] = {ref.deviance:.6g} "
          f"(per split: {np.array2string(ref.per_split, precision=4)})")
    if args.compare_mode:
        comp_spec = dict(base)
        if args.model == "ordinal":
            comp_spec["proportional"] = args.compare_mode == "ph"
        else:
            comp_spec["mode"] = args.compare_mode
        comp = kfold_deviance(comp_spec, X, y, folds=args.folds,
                              splits=args.splits, seed=args.seed, delta=delta)
        print(f"deviance[{args.model}:{args.compare_mode}] = {comp.deviance:.6g}")
        print(f"difference (reference - competitor) = "
              f"{ref.deviance - comp.deviance:.6g}")
    return 0


def _cmd_elpd(args) -> int:
    draws = load_draws(args.draws)
    if draws.loglik is None:
        raise DataError("draws were saved without pointwise log-likelihoods")
    result = elpd_loo(draws.loglik)
    print(f"elpd_loo = {result.elpd:.4f} (se {result.se:.4f}); "
          f"pareto-k max {result.diagnostics['max_k']:.3f}, "
          f"{result.diagnostics['n_high_k']} points above 0.7")
    return 0


def _cmd_project(args) -> int:
    draws = load_draws(args.draws)
    dataset = load_dataset(args.data, _schema_from_args(args))
    X = dataset.predictors()
    if draws.kind in ("binary", "ordinal"):
        r = ordmod._query_r(draws, X)
    elif draws.kind == "survival":
        r = surv._query_r_survival(draws, X)
    else:
        raise DataError("projection applies to binary/ordinal/survival draws")
    os.makedirs(args.out_dir, exist_ok=True)
    results = []
    if r.ndim == 2:
        results.append(("r", project_additive(r, X)))
    else:
        for k in range(r.shape[2]):
            results.append((f"r_k{k + 1}", project_additive(r[:, :, k], X)))
    names = dataset.predictor_names()
    with open(os.path.join(args.out_dir, "projection_r2.tsv"), "w",
              encoding="utf-8") as fh:
        fh.write("target\tmean_r2\tq2.5\tq97.5\tmean_residual_ratio\n")
        for label, res in results:
            q = np.quantile(res.r_squared, [0.025, 0.975])
            fh.write(f"{label}\t{res.r_squared.mean():.9g}\t{q[0]:.9g}\t"
                     f"{q[1]:.9g}\t{res.residual_ratio.mean():.9g}\n")
    rows = []
    for target_idx, (label, res) in enumerate(results):
        for j, pj in res.partial_effects.items():
            order = np.argsort(X[:, j])
            mean = pj.mean(axis=0)
            lo = np.quantile(pj, 0.025, axis=0)
            hi = np.quantile(pj, 0.975, axis=0)
            rows.extend(
                (target_idx, j, X[order[i], j], mean[order[i]],
                 lo[order[i]], hi[order[i]])
                for i in range(X.shape[0]))
    _write_grid(os.path.join(args.out_dir, "partial_effects.tsv"),
                ["target", "predictor", "x", "mean", "q2.5", "q97.5"], rows)
    print(f"wrote projection summaries for {len(results)} target(s); predictors: "
          f"{', '.join(names)}")
    return 0


def _cmd_simulate(args) -> int:
    dataset = simulate_dunson(args.n, args.seed)
    write_dataset(dataset, args.out)
    print(f"wrote {dataset.n} rows to {args.out}")
    return 0


def _cmd_verify(args) -> int:
    run_all = args.all or not (args.conjugacy or args.link or args.dp or args.latent)
    failures = 0
    rng = np.random.default_rng(args.seed)

    if run_all or args.conjugacy:
        from .forest import LeafStats, integrated_log_marginal
        from .special import LogGammaPrior

        worst = 0.0
        for _ in range(100):
            a = rng.uniform(0.2, 5.0)
            b = rng.uniform(0.2, 5.0)
            A = int(rng.integers(0, 21))
            B = rng.uniform(0.0, 50.0)
            prior = LogGammaPrior(a, b, 1.0)
            got = integrated_log_marginal(
                LeafStats(A=np.array([A]), B=np.array([B])), prior)
            want = oracle_integrated_marginal(a, b, A, B)
            worst = max(worst, abs(got - want) / max(abs(want), 1e-12))
        ok = worst <= 1e-8
        failures += not ok
        print(f"conjugacy: max relative error {worst:.3e} "
              f"{'PASS' if ok else 'FAIL'}")

    if run_all or args.link:
        worst = 0.0
        for _ in range(1000):
            K = int(rng.integers(2, 7))
            gamma = rng.normal(0.0, 2.0, K - 1)
            r = rng.normal(0.0, 2.0)
            worst = max(worst, check_link_equivalence(gamma, r, K))
        ok = worst <= 1e-12
        failures += not ok
        print(f"link-equivalence: max pmf discrepancy {worst:.3e} "
              f"{'PASS' if ok else 'FAIL'}")

    if run_all or args.dp:
        for r in (-1.0, 0.0, 1.0):
            report = check_dp_property(r, max(args.mc_draws, 10_000), rng=rng)
            ok = report.passed(0.01)
            failures += not ok
            print(f"dp-property r={r:+.0f}: KS p={report.pvalue:.4f} vs "
                  f"{report.target} {'PASS' if ok else 'FAIL'}")

    if run_all or args.latent:
        worst = 0.0
        for _ in range(5):
            K = int(rng.integers(2, 6))
            gamma = rng.normal(0.0, 1.0, K - 1)
            r = rng.normal(0.0, 1.0)
            rep = check_latent_representation(gamma, r, max(args.mc_draws, 10_000),
                                              rng=rng)
            worst = max(worst, rep.max_mcse_ratio)
        ok = worst <= 4.0
        failures += not ok
        print(f"latent-representation: max |error| {worst:.2f} MC standard errors "
              f"{'PASS' if ok else 'FAIL'}")

    return 5 if failures else 0


def _cmd_sbc(args) -> int:
    cfg = {}
    for key, name in (("n", "n"), ("K", "K"), ("trees", "n_trees"),
                      ("burnin", "burnin"), ("iters", "n_iter")):
        value = getattr(args, key, None)
        if value is not None:
            cfg[name] = value
    reports = sbc_run(args.model, cfg, args.replications,
                      rng=np.random.default_rng(args.seed), corrupt=args.corrupt)
    failures = 0
    for rep in reports:
        ok = rep.passed(0.005)
        failures += not ok
        print(f"sbc[{args.model}] {rep.parameter}: chi2={rep.chi2:.2f} "
              f"p={rep.pvalue:.5f} over {rep.replications} replications "
              f"{'PASS' if ok else 'FAIL'}")
    if args.corrupt:
        # the control is supposed to fail; flip the exit semantics
        return 0 if failures else 5
    return 5 if failures else 0


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit-binary":
            return _cmd_fit(args, "binary")
        if args.command == "fit-ordinal":
            return _cmd_fit(args, "ordinal")
        if args.command == "fit-density":
            return _cmd_fit(args, "density")
        if args.command == "fit-survival":
            return _cmd_fit(args, "survival")
        if args.command == "predict":
            return _cmd_predict(args)
        if args.command == "cv":
            return _cmd_cv(args)
        if args.command == "elpd":
            return _cmd_elpd(args)
        if args.command == "project":
            return _cmd_project(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "sbc":
            return _cmd_sbc(args)
        parser.error(f"unknown command {args.command}")
    except (DataError, SchemaError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalOverflowError, ConvergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except DomainError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
