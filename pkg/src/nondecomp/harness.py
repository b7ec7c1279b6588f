"""Experiment driver behind the CLI: synthetic generation, fitting,
threshold selection, evaluation, the convergence experiment, the two-method
comparison, and the error-rate check.

Every command is a pure function of its resolved configuration: reruns with
the same config and seed rewrite byte-identical outputs. Repeats and grid
points can run on a thread pool (capped by NONDECOMP_THREADS); rows are
buffered and written in a canonical order, so parallelism never changes
file contents.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, UsageError
from .dataset_io import (
    PlotSeries,
    ResultRow,
    ResultTable,
    SparseDataset,
    append_results_csv,
    emit_plot,
    load_model,
    mask_observations,
    parse_dataset,
    save_model,
    write_dataset,
    write_results_csv,
)
from .estimator import (
    DenseModel,
    ObservationSet,
    SolverConfig,
    fit_alt_min,
    fit_plugin_baseline,
    fit_prox_grad,
    objective,
    predict_scores,
    recovery_error,
)
from .losses import PULossWrapper, get_loss
from .metrics import (
    apply_threshold,
    confusion_grouped,
    confusion_micro,
    eval_metric_info,
    get_metric,
    threshold_sweep,
)
from .sampler import (
    OmegaDistribution,
    PUSpec,
    SyntheticSpec,
    generate_problem,
    pu_flip,
    sample_omega,
)

__all__ = [
    "run_task",
    "cmd_synth",
    "cmd_fit",
    "cmd_threshold",
    "cmd_eval",
    "cmd_convergence",
    "cmd_compare",
    "cmd_rate_check",
    "RateCheckResult",
]


def _threads():
    raw = os.environ.get("NONDECOMP_THREADS", "1")
    try:
        val = int(raw)
    except ValueError:
        raise UsageError(f"NONDECOMP_THREADS must be an integer, got {raw!r}") from None
    return max(1, val)


def _parallel_map(fn, keys):
    """Apply fn to every key, optionally on a thread pool; result dict is
    keyed so callers can iterate in canonical order afterwards."""
    keys = list(keys)
    workers = min(_threads(), len(keys))
    if workers <= 1:
        return {key: fn(key) for key in keys}
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {key: pool.submit(fn, key) for key in keys}
        return {key: futures[key].result() for key in keys}


@dataclass
class Problem:
    """A resolved learning problem: features, full labels, optional truth."""

    X: np.ndarray
    Y: np.ndarray
    W_star: np.ndarray | None
    kind: str  # "synthetic" or "dataset"


def _synthetic_spec(cfg, seed):
    cfg.require_synthetic()
    cov = None
    if cfg.feature_variance != 1.0:
        cov = cfg.feature_variance * np.eye(cfg.d)
    return SyntheticSpec(
        n=cfg.n, L=cfg.L, d=cfg.d, rank=cfg.rank, seed=seed,
        noise_model=cfg.noise_model, theta_star=cfg.theta_star,
        noise_sigma=cfg.noise_sigma, feature_covariance=cov,
        wstar_scale=cfg.wstar_scale,
    )


def _load_problem(cfg, seed):
    if cfg.data_path is not None:
        try:
            with open(cfg.data_path) as fh:
                ds = parse_dataset(fh, format=cfg.data_format)
        except OSError as exc:
            raise UsageError(f"cannot read dataset {cfg.data_path!r}: {exc}") from None
        return Problem(X=ds.to_dense_X(), Y=ds.label_matrix(), W_star=None, kind="dataset")
    X, W_star, Y = generate_problem(_synthetic_spec(cfg, seed))
    return Problem(X=X, Y=Y, W_star=W_star, kind="synthetic")


# test draws use a seed stream far away from the training seeds
_TEST_SEED_OFFSET = 7919


def _fresh_test_split(cfg, W_star, seed):
    """Fresh instances from the same generator and ground truth; keeps the
    evaluation free of memorized training entries."""
    from .sampler import gen_features, sample_labels

    spec = _synthetic_spec(cfg, seed + _TEST_SEED_OFFSET)
    X_t = gen_features(spec)
    Y_t = sample_labels(
        X_t, W_star, cfg.noise_model, spec.seed,
        theta_star=cfg.theta_star, sigma=cfg.noise_sigma,
    )
    return X_t, Y_t


def _binary_required(Y, what):
    if not np.all((Y == 0) | (Y == 1)):
        raise UsageError(f"{what} needs binary labels; the gaussian noise model is real-valued")


def _train_observations(cfg, prob, seed):
    """Observed training entries plus the loss to fit them with."""
    base_loss = get_loss(cfg.loss)
    if cfg.pu_rho > 0.0:
        _binary_required(prob.Y, "positive-unlabeled flipping")
        flipped = pu_flip(prob.Y, PUSpec(cfg.pu_rho), seed)
        n, L = flipped.shape
        rows = np.repeat(np.arange(n), L)
        cols = np.tile(np.arange(L), n)
        obs = ObservationSet(n, L, rows, cols, flipped.ravel().astype(float))
        return obs, PULossWrapper(base_loss, cfg.pu_rho)
    obs = mask_observations(prob.Y, cfg.ratio, OmegaDistribution.uniform(), seed)
    return obs, base_loss


def _solver_config(cfg, loss, seed, regularizer_mode=None):
    return SolverConfig(
        loss=loss,
        lambda_reg=cfg.lambda_reg,
        lambda_c=cfg.lambda_c,
        regularizer_mode=regularizer_mode or cfg.regularizer_mode,
        gamma_clip=cfg.gamma_clip,
        max_iters=cfg.max_iters,
        rel_tol=cfg.rel_tol,
        step_init=cfg.step_init,
        step_shrink=cfg.step_shrink,
        step_growth=cfg.step_growth,
        seed=seed,
    )


def _resolve_k(cfg, prob):
    if cfg.k is not None:
        return cfg.k
    if prob.kind == "synthetic":
        return cfg.rank
    return max(1, round(0.4 * prob.Y.shape[1]))


def _fit_solver(cfg, prob, obs, loss, seed, solver=None):
    solver = solver or cfg.solver
    sconf = _solver_config(cfg, loss, seed)
    if solver == "alt_min":
        return fit_alt_min(prob.X, obs, sconf, _resolve_k(cfg, prob))
    if solver == "prox_grad":
        return fit_prox_grad(prob.X, obs, sconf)
    if solver == "plugin":
        return fit_plugin_baseline(prob.X, obs, cfg.ridge), None
    raise UsageError(f"unknown solver {solver!r}")


def _sweep_group_index(spec, rows, cols):
    if spec.mode == "micro":
        return None
    return rows if spec.mode == "instance" else cols


def _confusion_for(spec, yhat, y, rows, cols):
    if spec.mode == "micro":
        return confusion_micro(yhat, y)
    gi = rows if spec.mode == "instance" else cols
    return confusion_grouped(yhat, y, gi)


def _tune_threshold(spec, z_obs, y_obs, rows, cols):
    """Sweep on the training entries; fall back to the all-negative
    sentinel when no thresholding achieves a positive metric value."""
    result = threshold_sweep(z_obs, y_obs, spec, _sweep_group_index(spec, rows, cols))
    theta = result.theta_hat
    degenerate = False
    if result.value == 0.0:
        theta = float(np.max(z_obs)) + 1.0
        degenerate = True
    return theta, result, degenerate


def _metric_value(spec, z_entries, y_entries, rows, cols, theta):
    yhat = apply_threshold(z_entries, theta)
    return eval_metric_info(spec, _confusion_for(spec, yhat, y_entries, rows, cols))


def _full_grid(n, L):
    return np.repeat(np.arange(n), L), np.tile(np.arange(L), n)


def _ensure_out_dir(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)


def _model_path(cfg):
    return cfg.model_path or os.path.join(cfg.out_dir, "model.txt")


def _fmt(value):
    return repr(float(value))


def _mean_sd(values):
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, sd


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg):
    """Generate a synthetic problem and export it in the dataset format."""
    _ensure_out_dir(cfg)
    spec = _synthetic_spec(cfg, cfg.seed)
    if spec.noise_model == "gaussian":
        raise UsageError("synth export needs a binary noise model")
    X, W_star, Y = generate_problem(spec)
    features = [[(j, float(X[i, j])) for j in range(cfg.d)] for i in range(cfg.n)]
    labels = [set(np.flatnonzero(Y[i] == 1).tolist()) for i in range(cfg.n)]
    ds = SparseDataset(n=cfg.n, d=cfg.d, L=cfg.L, features=features, labels=labels)
    data_path = os.path.join(cfg.out_dir, "dataset.txt")
    with open(data_path, "w") as fh:
        write_dataset(ds, fh)
    truth_path = os.path.join(cfg.out_dir, "wstar.txt")
    with open(truth_path, "w") as fh:
        save_model(DenseModel(W=W_star), fh)
    print(f"synth: wrote {data_path} and {truth_path}")
    return {"data_path": data_path, "wstar_path": truth_path}


def cmd_fit(cfg):
    """Fit the configured solver and persist the model and objective trace."""
    _ensure_out_dir(cfg)
    prob = _load_problem(cfg, cfg.seed)
    obs, loss = _train_observations(cfg, prob, cfg.seed)
    model, report = _fit_solver(cfg, prob, obs, loss, cfg.seed)
    path = _model_path(cfg)
    with open(path, "w") as fh:
        save_model(model, fh)
    trace_path = os.path.join(cfg.out_dir, "trace.csv")
    with open(trace_path, "w") as fh:
        fh.write("iteration,objective\n")
        if report is not None:
            for i, val in enumerate(report.objective_trace):
                fh.write(f"{i},{_fmt(val)}\n")
        else:
            sconf = _solver_config(cfg, loss, cfg.seed)
            val = objective(prob.X, obs, model.W, sconf)
            fh.write(f"0,{_fmt(val)}\n")
    if report is not None:
        print(
            f"fit: solver={cfg.solver} iterations={report.iterations} "
            f"converged={report.converged} objective={report.objective_trace[-1]:.6g} "
            f"rank={report.final_rank} model={path}"
        )
    else:
        print(f"fit: solver={cfg.solver} model={path}")
    return {"model_path": path, "trace_path": trace_path, "report": report}


def cmd_threshold(cfg):
    """Tune the decision threshold on the training observations."""
    path = _model_path(cfg)
    try:
        with open(path) as fh:
            model = load_model(fh)
    except OSError as exc:
        raise UsageError(f"cannot read model {path!r}: {exc}") from None
    prob = _load_problem(cfg, cfg.seed)
    obs, _ = _train_observations(cfg, prob, cfg.seed)
    _binary_required(obs.values, "threshold tuning")
    spec = get_metric(cfg.metric)
    Z = predict_scores(prob.X, model, cfg.gamma_clip)
    z_obs = Z[obs.rows, obs.cols]
    theta, result, degenerate = _tune_threshold(
        spec, z_obs, obs.values.astype(np.int8), obs.rows, obs.cols
    )
    model.theta = theta
    with open(path, "w") as fh:
        save_model(model, fh)
    note = " (degenerate sweep, all-negative fallback)" if degenerate else ""
    print(
        f"threshold: metric={cfg.metric} theta={theta:.6g} "
        f"train_value={result.value:.6g} candidates={result.candidates_evaluated}{note}"
    )
    return {"theta": theta, "train_value": result.value, "degenerate": degenerate}


def _eval_entries(cfg, prob, seed):
    """Evaluation data: the test file when given, a fresh synthetic test
    draw for generated problems, else the training matrix."""
    if cfg.data_path is not None and cfg.test_path is not None:
        try:
            with open(cfg.test_path) as fh:
                test = parse_dataset(fh, format=cfg.data_format)
        except OSError as exc:
            raise UsageError(f"cannot read dataset {cfg.test_path!r}: {exc}") from None
        if test.d != prob.X.shape[1] or test.L != prob.Y.shape[1]:
            raise UsageError("test dataset dimensions do not match the training data")
        return test.to_dense_X(), test.label_matrix(), "test"
    if prob.kind == "synthetic":
        X_t, Y_t = _fresh_test_split(cfg, prob.W_star, seed)
        return X_t, Y_t, "test"
    return prob.X, prob.Y, "train"


def cmd_eval(cfg):
    """Evaluate a thresholded model on the test entries; append result rows."""
    _ensure_out_dir(cfg)
    path = _model_path(cfg)
    try:
        with open(path) as fh:
            model = load_model(fh)
    except OSError as exc:
        raise UsageError(f"cannot read model {path!r}: {exc}") from None
    if model.theta is None:
        raise UsageError("model has no fitted threshold; run the threshold task first")
    prob = _load_problem(cfg, cfg.seed)
    X_e, Y_e, split = _eval_entries(cfg, prob, cfg.seed)
    _binary_required(Y_e, "evaluation")
    rows, cols = _full_grid(*Y_e.shape)
    Z = predict_scores(X_e, model, cfg.gamma_clip)
    z_entries = Z[rows, cols]
    y_entries = Y_e[rows, cols]
    method = "plugin" if cfg.solver == "plugin" else "algorithm1"
    out_rows = []
    for name in cfg.metrics:
        spec = get_metric(name)
        info = _metric_value(spec, z_entries, y_entries, rows, cols, model.theta)
        out_rows.append(
            ResultRow(method, name, split, info.value, 0.0, cfg.config_hash())
        )
        flag = f" degenerate_groups={info.degenerate_groups}" if info.degenerate_groups else ""
        print(f"eval: {name} [{split}] = {info.value:.6g}{flag}")
    results_path = os.path.join(cfg.out_dir, "results.csv")
    append_results_csv(out_rows, results_path)
    return {"rows": out_rows, "results_path": results_path}


def cmd_convergence(cfg):
    """Metric-versus-sampling-ratio experiment for both methods."""
    _ensure_out_dir(cfg)
    cfg.require_synthetic()
    if cfg.noise_model == "gaussian":
        raise UsageError("the convergence experiment needs a binary noise model")
    for m in cfg.methods:
        if m not in ("algorithm1", "plugin"):
            raise UsageError(f"unknown method {m!r}; expected algorithm1 or plugin")
    solver = cfg.solver if cfg.solver != "plugin" else "alt_min"
    specs = {name: get_metric(name) for name in cfg.metrics}

    def run_one(key):
        method, ratio, rep = key
        seed_r = cfg.seed + rep
        spec_cfg = ExperimentConfig(**{**cfg.__dict__, "ratio": ratio})
        prob = _load_problem(spec_cfg, seed_r)
        obs, loss = _train_observations(spec_cfg, prob, seed_r)
        fit_as = solver if method == "algorithm1" else "plugin"
        model, _ = _fit_solver(spec_cfg, prob, obs, loss, seed_r, solver=fit_as)
        Z = predict_scores(prob.X, model, cfg.gamma_clip)
        z_obs = Z[obs.rows, obs.cols]
        y_obs = obs.values.astype(np.int8)
        X_t, Y_t = _fresh_test_split(cfg, prob.W_star, seed_r)
        rows_t, cols_t = _full_grid(*Y_t.shape)
        Z_t = predict_scores(X_t, model, cfg.gamma_clip)
        z_test = Z_t[rows_t, cols_t]
        y_test = Y_t[rows_t, cols_t]
        values = {}
        for name, spec in specs.items():
            theta, _, _ = _tune_threshold(spec, z_obs, y_obs, obs.rows, obs.cols)
            info = _metric_value(spec, z_test, y_test, rows_t, cols_t, theta)
            values[name] = info.value
        return values

    keys = [
        (method, ratio, rep)
        for method in cfg.methods
        for ratio in cfg.ratios
        for rep in range(cfg.repeats)
    ]
    outcomes = _parallel_map(run_one, keys)

    summary = {}
    for method in sorted(cfg.methods):
        for name in cfg.metrics:
            for ratio in cfg.ratios:
                vals = [outcomes[(method, ratio, rep)][name] for rep in range(cfg.repeats)]
                summary[(method, name, ratio)] = _mean_sd(vals)

    chash = cfg.config_hash()
    csv_path = os.path.join(cfg.out_dir, "convergence.csv")
    with open(csv_path, "w") as fh:
        fh.write("method,metric_name,ratio,mean,sd,config_hash\n")
        for (method, name, ratio) in sorted(summary):
            mean, sd = summary[(method, name, ratio)]
            fh.write(f"{method},{name},{_fmt(ratio)},{_fmt(mean)},{_fmt(sd)},{chash}\n")

    plot_paths = []
    for name in cfg.metrics:
        series = []
        for method in sorted(cfg.methods):
            xs = tuple(sorted(cfg.ratios))
            ys = tuple(summary[(method, name, r)][0] for r in xs)
            series.append(PlotSeries(name=method, x=xs, y=ys))
        svg_path = os.path.join(cfg.out_dir, f"convergence_{name}.svg")
        with open(svg_path, "w") as fh:
            emit_plot(series, fh, xlabel="sampling ratio", ylabel=name)
        plot_paths.append(svg_path)

    for (method, name, ratio) in sorted(summary):
        mean, sd = summary[(method, name, ratio)]
        print(f"convergence: {method} {name} ratio={ratio:g} mean={mean:.4f} sd={sd:.4f}")
    return {"summary": summary, "csv_path": csv_path, "plot_paths": plot_paths}


def cmd_compare(cfg):
    """Both methods on a dataset at the configured mask ratio."""
    _ensure_out_dir(cfg)
    if cfg.data_path is None:
        raise UsageError("compare needs data_path pointing at a dataset file")
    prob = _load_problem(cfg, cfg.seed)
    X_e, Y_e, split = _eval_entries(cfg, prob, cfg.seed)
    _binary_required(Y_e, "evaluation")
    solver = cfg.solver if cfg.solver != "plugin" else "alt_min"
    specs = {name: get_metric(name) for name in cfg.metrics}
    rows_f, cols_f = _full_grid(*Y_e.shape)

    def run_one(key):
        method, rep = key
        seed_r = cfg.seed + rep
        obs, loss = _train_observations(cfg, prob, seed_r)
        fit_as = solver if method == "algorithm1" else "plugin"
        model, _ = _fit_solver(cfg, prob, obs, loss, seed_r, solver=fit_as)
        Z_train = predict_scores(prob.X, model, cfg.gamma_clip)
        z_obs = Z_train[obs.rows, obs.cols]
        y_obs = obs.values.astype(np.int8)
        Z_e = predict_scores(X_e, model, cfg.gamma_clip)
        z_entries = Z_e[rows_f, cols_f]
        y_entries = Y_e[rows_f, cols_f]
        values = {}
        for name, spec in specs.items():
            theta, _, _ = _tune_threshold(spec, z_obs, y_obs, obs.rows, obs.cols)
            values[name] = _metric_value(spec, z_entries, y_entries, rows_f, cols_f, theta).value
        return values

    methods = tuple(m for m in cfg.methods if m in ("algorithm1", "plugin"))
    if not methods:
        raise UsageError("compare needs at least one of the methods algorithm1, plugin")
    keys = [(method, rep) for method in methods for rep in range(cfg.repeats)]
    outcomes = _parallel_map(run_one, keys)

    chash = cfg.config_hash()
    table = ResultTable()
    for method in sorted(methods):
        for name in cfg.metrics:
            mean, sd = _mean_sd([outcomes[(method, rep)][name] for rep in range(cfg.repeats)])
            table.add(method, name, split, mean, sd, chash)
    csv_path = os.path.join(cfg.out_dir, "compare.csv")
    with open(csv_path, "w") as fh:
        write_results_csv(table, fh)
    for row in table.rows:
        print(
            f"compare: {row.method} {row.metric_name} [{row.split}] "
            f"= {row.value:.4f} +/- {row.stderr:.4f}"
        )
    return table


@dataclass
class RateCheckResult:
    """Log-log slope of the recovery error plus the per-point errors."""

    slope: float
    points: dict
    csv_path: str


def cmd_rate_check(cfg):
    """Recovery-error decay against the number of observed entries.

    Fits the convex solver at a geometric grid of observation counts,
    regresses log(error) on log(count), and repeats with the score-matrix
    regularizer for contrast.
    """
    _ensure_out_dir(cfg)
    cfg.require_synthetic()
    if cfg.noise_model != "bernoulli_logistic":
        raise UsageError("rate_check needs noise_model = bernoulli_logistic")
    total = cfg.n * cfg.L
    if cfg.omegas is not None:
        grid = tuple(int(m) for m in cfg.omegas)
    else:
        grid = tuple(round(total * 2.0 ** -(cfg.grid_points - 1 - i)) for i in range(cfg.grid_points))
    if len(grid) < 3:
        raise UsageError("rate_check needs at least 3 grid points")
    if any(not 1 <= m <= total for m in grid):
        raise UsageError(f"omega grid must lie in [1, {total}]")

    def run_one(key):
        mode, m, rep = key
        seed_r = cfg.seed + rep
        prob = _load_problem(cfg, seed_r)
        rows, cols = sample_omega(cfg.n, cfg.L, m, OmegaDistribution.uniform(), seed_r)
        obs = ObservationSet(cfg.n, cfg.L, rows, cols, prob.Y[rows, cols].astype(float))
        sconf = _solver_config(cfg, get_loss(cfg.loss), seed_r, regularizer_mode=mode)
        model, _ = fit_prox_grad(prob.X, obs, sconf)
        return recovery_error(model.W, prob.W_star)

    keys = [
        (mode, m, rep)
        for mode in ("param_norm", "score_norm")
        for m in grid
        for rep in range(cfg.repeats)
    ]
    outcomes = _parallel_map(run_one, keys)

    points = {}
    for mode in ("param_norm", "score_norm"):
        for m in grid:
            points[(mode, m)] = _mean_sd([outcomes[(mode, m, rep)] for rep in range(cfg.repeats)])

    log_m = np.log([float(m) for m in grid])
    log_err = np.log([points[("param_norm", m)][0] for m in grid])
    slope = float(np.polyfit(log_m, log_err, 1)[0])

    chash = cfg.config_hash()
    csv_path = os.path.join(cfg.out_dir, "rate_check.csv")
    with open(csv_path, "w") as fh:
        fh.write("mode,omega,error_mean,error_sd,config_hash\n")
        for (mode, m) in sorted(points):
            mean, sd = points[(mode, m)]
            fh.write(f"{mode},{m},{_fmt(mean)},{_fmt(sd)},{chash}\n")

    for (mode, m) in sorted(points):
        mean, sd = points[(mode, m)]
        print(f"rate_check: {mode} omega={m} error={mean:.6g} sd={sd:.3g}")
    print(f"rate_check: param_norm log-log slope = {slope:.4f}")
    return RateCheckResult(slope=slope, points=points, csv_path=csv_path)


_COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "threshold": cmd_threshold,
    "eval": cmd_eval,
    "convergence": cmd_convergence,
    "compare": cmd_compare,
    "rate_check": cmd_rate_check,
}


def run_task(cfg):
    """Dispatch a resolved configuration to its command."""
    try:
        command = _COMMANDS[cfg.task]
    except KeyError:
        raise UsageError(f"unknown task {cfg.task!r}") from None
    return command(cfg)
