"""Estimation of a low-rank parameter matrix from partially observed labels.

The main objective is the empirical proper-loss risk over the observed
entries plus a nuclear-norm penalty on the parameter matrix. Solvers:

* ``fit_prox_grad`` -- proximal gradient with backtracking on the convex
  objective, including the experimental variant that penalizes the nuclear
  norm of the score matrix instead of the parameter matrix.
* ``fit_alt_min`` -- alternating minimization of the rank-k factorization
  with the standard Frobenius surrogate of the nuclear penalty.
* ``fit_plugin_baseline`` -- independent per-label ridge-regularized
  logistic fits, the comparison method that ignores label correlations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .losses import LogisticLoss

__all__ = [
    "ObservationSet",
    "DenseModel",
    "FactoredModel",
    "SolverConfig",
    "FitReport",
    "NumericalError",
    "default_lambda",
    "default_lambda_score_norm",
    "nuclear_norm",
    "objective",
    "grad_empirical",
    "prox_nuclear",
    "fit_prox_grad",
    "fit_alt_min",
    "fit_plugin_baseline",
    "predict_scores",
    "recovery_error",
]

# singular values below this fraction of the largest do not count toward rank
_RANK_CUTOFF = 1e-8


class NumericalError(RuntimeError):
    """Raised when a solver diverges or a factorization fails."""


class ObservationSet:
    """Distinct observed (row, column, label) triples of an n x L matrix."""

    __slots__ = ("n", "L", "rows", "cols", "values")

    def __init__(self, n, L, rows, cols, values):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        if not (rows.shape == cols.shape == values.shape) or rows.ndim != 1:
            raise ValueError("rows, cols and values must be parallel 1-d arrays")
        if rows.size == 0:
            raise ValueError("empty observation set")
        if rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= L:
            raise ValueError("observation indices out of range")
        codes = rows * L + cols
        if len(np.unique(codes)) != len(codes):
            raise ValueError("duplicate (row, col) pairs in observation set")
        self.n = int(n)
        self.L = int(L)
        self.rows = rows
        self.cols = cols
        self.values = values

    @classmethod
    def from_entries(cls, n, L, entries):
        entries = list(entries)
        rows = [e[0] for e in entries]
        cols = [e[1] for e in entries]
        vals = [e[2] for e in entries]
        return cls(n, L, rows, cols, vals)

    @property
    def size(self):
        return self.rows.size

    def __len__(self):
        return self.rows.size


@dataclass
class DenseModel:
    """Parameter matrix W (d x L) plus an optional fitted threshold."""

    W: np.ndarray
    theta: float | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim != 2:
            raise ValueError("W must be a matrix")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("W entries must be finite")


@dataclass
class FactoredModel:
    """Rank-k factorization W = W1 @ W2.T with an optional threshold."""

    W1: np.ndarray
    W2: np.ndarray
    theta: float | None = None

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=float)
        self.W2 = np.asarray(self.W2, dtype=float)
        if self.W1.ndim != 2 or self.W2.ndim != 2:
            raise ValueError("factors must be matrices")
        if self.W1.shape[1] != self.W2.shape[1] or self.W1.shape[1] < 1:
            raise ValueError("factors must share a positive inner dimension")
        if not (np.all(np.isfinite(self.W1)) and np.all(np.isfinite(self.W2))):
            raise ValueError("factor entries must be finite")

    @property
    def k(self):
        return self.W1.shape[1]

    def dense(self):
        return self.W1 @ self.W2.T


@dataclass
class SolverConfig:
    """Knobs shared by the solvers.

    ``lambda_reg=None`` resolves to the sample-size default
    2 * lambda_c / sqrt(m) for m observed entries. ``gamma_clip`` bounds
    predicted scores after the fit; the fit itself is unconstrained.
    """

    loss: object = field(default_factory=LogisticLoss)
    lambda_reg: float | None = None
    lambda_c: float = 1.0
    regularizer_mode: str = "param_norm"
    gamma_clip: float | None = None
    max_iters: int = 300
    rel_tol: float = 1e-6
    step_init: float = 1.0
    step_shrink: float = 0.5
    step_growth: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.lambda_reg is not None and self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not 0 < self.step_shrink < 1:
            raise ValueError("step_shrink must lie in (0, 1)")
        if self.step_growth < 1:
            raise ValueError("step_growth must be >= 1")
        if self.regularizer_mode not in ("param_norm", "score_norm"):
            raise ValueError("regularizer_mode must be param_norm or score_norm")
        if self.gamma_clip is not None and not self.gamma_clip > 0:
            raise ValueError("gamma_clip must be positive")


@dataclass
class FitReport:
    """Objective trajectory and convergence summary of one fit."""

    objective_trace: list
    iterations: int
    converged: bool
    final_rank: int


def default_lambda(n_observed, c=1.0):
    """Sample-size-scaled default regularization weight 2c / sqrt(m)."""
    return 2.0 * c / math.sqrt(n_observed)


def default_lambda_score_norm(n_observed, n, L, c=1.0):
    """Default weight for the score-matrix penalty, which grows with the
    matrix size and therefore carries the extra 1 / min(n, L) scaling."""
    return 2.0 * c * math.sqrt(2.0 * math.log(n + L) / (min(n, L) * n_observed))


def _resolve_lambda(config, obs):
    if config.lambda_reg is not None:
        return float(config.lambda_reg)
    if config.regularizer_mode == "score_norm":
        return default_lambda_score_norm(obs.size, obs.n, obs.L, config.lambda_c)
    return default_lambda(obs.size, config.lambda_c)


def nuclear_norm(A):
    """Sum of singular values."""
    return float(np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False).sum())


def _check_shapes(X, obs, W):
    X = np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    if X.ndim != 2 or W.ndim != 2:
        raise ValueError("X and W must be matrices")
    if X.shape[0] != obs.n:
        raise ValueError(f"X has {X.shape[0]} rows but observations expect {obs.n}")
    if X.shape[1] != W.shape[0]:
        raise ValueError("inner dimensions of X and W do not match")
    if W.shape[1] != obs.L:
        raise ValueError(f"W has {W.shape[1]} columns but observations expect {obs.L}")
    return X, W


def _entry_scores(X, obs, W):
    return (X @ W)[obs.rows, obs.cols]


def _empirical_risk(X, obs, W, loss):
    t = _entry_scores(X, obs, W)
    return float(np.mean(loss.value(t, obs.values)))


def objective(X, obs, W, config):
    """Empirical risk over the observed entries plus the nuclear penalty."""
    X, W = _check_shapes(X, obs, W)
    lam = _resolve_lambda(config, obs)
    if config.regularizer_mode == "param_norm":
        reg = nuclear_norm(W)
    else:
        reg = nuclear_norm(X @ W)
    return _empirical_risk(X, obs, W, config.loss) + lam * reg


def grad_empirical(X, obs, W, loss):
    """Gradient of the empirical-risk term with respect to W (d x L)."""
    X, W = _check_shapes(X, obs, W)
    t = _entry_scores(X, obs, W)
    g = np.asarray(loss.grad_t(t, obs.values), dtype=float) / obs.size
    M = np.zeros((obs.n, obs.L))
    M[obs.rows, obs.cols] = g
    return X.T @ M


def prox_nuclear(A, tau):
    """Singular-value soft thresholding: the proximal map of tau * ||.||_*."""
    A = np.asarray(A, dtype=float)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"SVD failed on a {A.shape[0]}x{A.shape[1]} matrix "
            f"(max |entry| = {np.abs(A).max():.3e})"
        ) from exc
    return (U * np.maximum(s - tau, 0.0)) @ Vt


def _rank_of(A):
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] <= 0.0:
        return 0
    return int(np.count_nonzero(s > _RANK_CUTOFF * s[0]))


def _prox_score_nuclear(A, tau, qr_R, steps=20):
    """Approximate prox of tau * ||X V||_* at A, via the QR trick.

    With X = Q R (reduced), ||X V||_* equals ||R V||_*, so the subproblem
    is solved in the substituted variable U = R V by ``steps`` inner
    proximal-gradient iterations, warm-started at V = A.
    """
    smin = np.linalg.svd(qr_R, compute_uv=False)[-1]
    if smin <= 0:
        raise NumericalError("score-norm mode needs features with full column rank")
    # smooth-part Lipschitz constant is 1/smin^2, so the safe step is its inverse
    eta = smin * smin
    U = qr_R @ A
    for _ in range(steps):
        V = np.linalg.solve(qr_R, U)
        grad = np.linalg.solve(qr_R.T, V - A)
        U = prox_nuclear(U - eta * grad, eta * tau)
    return np.linalg.solve(qr_R, U)


def fit_prox_grad(X, obs, config):
    """Minimize the trace-regularized objective by proximal gradient descent.

    Uses backtracking line search on the smooth part with the configured
    shrink/growth factors, plus a monotonicity safeguard on the full
    objective (required because the score-norm prox is approximate). Stops
    when the relative objective change drops below ``rel_tol`` or after
    ``max_iters`` iterations.

    Returns (DenseModel, FitReport); the objective trace is nonincreasing.
    """
    dummy_W = np.zeros((np.asarray(X).shape[1], obs.L))
    X, W = _check_shapes(X, obs, dummy_W)
    lam = _resolve_lambda(config, obs)
    loss = config.loss
    score_mode = config.regularizer_mode == "score_norm"
    qr_R = None
    if score_mode:
        qr_R = np.linalg.qr(X, mode="r")

    def reg_of(Wm):
        if score_mode:
            return nuclear_norm(qr_R @ Wm)
        return nuclear_norm(Wm)

    def prox_of(A, tau):
        if score_mode:
            return _prox_score_nuclear(A, tau, qr_R)
        return prox_nuclear(A, tau)

    f = _empirical_risk(X, obs, W, loss)
    F = f + lam * reg_of(W)
    trace = [F]
    step = config.step_init
    converged = False

    for it in range(1, config.max_iters + 1):
        G = grad_empirical(X, obs, W, loss)
        accepted = False
        while step >= 1e-18:
            W_new = prox_of(W - step * G, step * lam)
            diff = W_new - W
            f_new = _empirical_risk(X, obs, W_new, loss)
            F_new = f_new + lam * reg_of(W_new)
            if math.isnan(F_new):
                raise NumericalError(f"objective became NaN at iteration {it}")
            quad = f + float(np.sum(G * diff)) + float(np.sum(diff * diff)) / (2.0 * step)
            if f_new <= quad + 1e-12 and F_new <= F + 1e-12:
                accepted = True
                break
            step *= config.step_shrink
        if not accepted:
            break
        trace.append(F_new)
        small_change = abs(F - F_new) <= config.rel_tol * max(1.0, abs(F))
        W, f, F = W_new, f_new, F_new
        step *= config.step_growth
        if small_change:
            converged = True
            break

    report = FitReport(
        objective_trace=trace,
        iterations=len(trace) - 1,
        converged=converged,
        final_rank=_rank_of(W),
    )
    return DenseModel(W=W), report


def _by_column(obs):
    """Index arrays of the observed entries of each column."""
    order = np.argsort(obs.cols, kind="stable")
    sorted_cols = obs.cols[order]
    starts = np.searchsorted(sorted_cols, np.arange(obs.L), side="left")
    ends = np.searchsorted(sorted_cols, np.arange(obs.L), side="right")
    return [order[starts[j]:ends[j]] for j in range(obs.L)]


def _cg_solve(matvec, B, tol=1e-10, max_iter=40):
    """Conjugate gradient for matvec(S) = B over matrices; returns the last
    iterate if curvature turns nonpositive."""
    S = np.zeros_like(B)
    R = B.copy()
    P = R.copy()
    rs = float(np.sum(R * R))
    b_norm = math.sqrt(float(np.sum(B * B)))
    if b_norm == 0.0:
        return S
    for _ in range(max_iter):
        HP = matvec(P)
        denom = float(np.sum(P * HP))
        if denom <= 0.0:
            break
        alpha = rs / denom
        S += alpha * P
        R -= alpha * HP
        rs_new = float(np.sum(R * R))
        if math.sqrt(rs_new) <= tol * b_norm:
            break
        P = R + (rs_new / rs) * P
        rs = rs_new
    return S


def _damped_newton(A, yv, loss, reg, loss_scale, w0, max_iter=50, tol=1e-10):
    """Minimize loss_scale * sum(loss(A w, y)) + reg/2 * ||w||^2 over w."""
    w = np.asarray(w0, dtype=float).copy()
    dim = A.shape[1]
    eye = np.eye(dim)

    def fval(wv):
        t = A @ wv
        return loss_scale * float(np.sum(loss.value(t, yv))) + 0.5 * reg * float(wv @ wv)

    f = fval(w)
    for _ in range(max_iter):
        t = A @ w
        g = loss_scale * (A.T @ np.asarray(loss.grad_t(t, yv), dtype=float)) + reg * w
        if float(np.linalg.norm(g)) < tol:
            break
        h = np.asarray(loss.hess_t(t, yv), dtype=float)
        H = loss_scale * ((A * h[:, None]).T @ A) + (reg + 1e-12) * eye
        try:
            direction = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            direction = g
        slope = float(g @ direction)
        if slope <= 0.0:
            # PU-corrected losses can lose convexity; fall back to gradient
            direction = g
            slope = float(g @ g)
        step = 1.0
        accepted = False
        while step > 1e-12:
            w_new = w - step * direction
            f_new = fval(w_new)
            if f_new <= f - 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = f - f_new
        w, f = w_new, f_new
        if improvement <= 1e-14 * max(1.0, abs(f)):
            break
    return w


def fit_alt_min(X, obs, config, k):
    """Alternating minimization of the rank-k factorization.

    The objective is the empirical risk plus lam/2 * (||W1||_F^2 +
    ||W2||_F^2), the variational surrogate of the nuclear norm at rank k.
    The W2 half-step solves each column's convex fit by damped Newton; the
    W1 half-step takes damped Newton steps whose directions come from
    conjugate gradient on Hessian-vector products. Both half-steps are
    monotone, and the objective trace records the value after every
    half-step (two entries per outer iteration).
    """
    dummy_W = np.zeros((np.asarray(X).shape[1], obs.L))
    X, _ = _check_shapes(X, obs, dummy_W)
    d = X.shape[1]
    if not 1 <= k <= min(d, obs.L):
        raise ValueError(f"rank k must lie in [1, min(d, L)] = [1, {min(d, obs.L)}]")
    lam = _resolve_lambda(config, obs)
    loss = config.loss
    m = obs.size
    rng = np.random.default_rng(np.random.SeedSequence((int(config.seed), 29)))
    scale = 1.0 / math.sqrt(k)
    W1 = rng.standard_normal((d, k)) * scale
    W2 = rng.standard_normal((obs.L, k)) * scale
    cols_idx = _by_column(obs)

    def full_objective(W1m, W2m):
        t = ((X @ W1m) @ W2m.T)[obs.rows, obs.cols]
        emp = float(np.mean(loss.value(t, obs.values)))
        pen = 0.5 * lam * (float(np.sum(W1m * W1m)) + float(np.sum(W2m * W2m)))
        return emp + pen

    def scatter(entry_values):
        M = np.zeros((obs.n, obs.L))
        M[obs.rows, obs.cols] = entry_values
        return M

    def w1_halfstep(W1m, W2m, f_cur):
        for _ in range(3):
            t = ((X @ W1m) @ W2m.T)[obs.rows, obs.cols]
            G1 = X.T @ (scatter(np.asarray(loss.grad_t(t, obs.values), dtype=float) / m)
                        @ W2m) + lam * W1m
            if float(np.sum(G1 * G1)) <= 1e-24:
                break
            h = np.maximum(np.asarray(loss.hess_t(t, obs.values), dtype=float), 0.0) / m

            def hessvec(S):
                u = ((X @ S) @ W2m.T)[obs.rows, obs.cols]
                return X.T @ (scatter(h * u) @ W2m) + (lam + 1e-12) * S

            direction = _cg_solve(hessvec, G1)
            slope = float(np.sum(G1 * direction))
            if slope <= 0.0:
                direction = G1
                slope = float(np.sum(G1 * G1))
            step = 1.0
            accepted = False
            while step > 1e-12:
                cand = W1m - step * direction
                f_cand = full_objective(cand, W2m)
                if f_cand <= f_cur - 1e-4 * step * slope:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            improvement = f_cur - f_cand
            W1m, f_cur = cand, f_cand
            if improvement <= 1e-14 * max(1.0, abs(f_cur)):
                break
        return W1m, f_cur

    F = full_objective(W1, W2)
    if math.isnan(F):
        raise NumericalError("objective NaN at initialization")
    trace = [F]
    converged = False

    for _ in range(config.max_iters):
        W1, f_cur = w1_halfstep(W1, W2, F)
        if math.isnan(f_cur):
            raise NumericalError("objective became NaN during the W1 half-step")
        trace.append(f_cur)

        # W2 half-step: damped Newton, one convex fit per column
        A = X @ W1
        for j in range(obs.L):
            idx = cols_idx[j]
            if idx.size == 0:
                if lam > 0:
                    W2[j] = 0.0
                continue
            W2[j] = _damped_newton(
                A[obs.rows[idx]], obs.values[idx], loss,
                reg=lam, loss_scale=1.0 / m, w0=W2[j], max_iter=4,
            )
        F_new = full_objective(W1, W2)
        if math.isnan(F_new):
            raise NumericalError("objective became NaN during the W2 half-step")
        trace.append(F_new)

        if abs(F - F_new) <= config.rel_tol * max(1.0, abs(F)):
            F = F_new
            converged = True
            break
        F = F_new

    model = FactoredModel(W1=W1, W2=W2)
    report = FitReport(
        objective_trace=trace,
        iterations=(len(trace) - 1) // 2,
        converged=converged,
        final_rank=_rank_of(model.dense()),
    )
    return model, report


def fit_plugin_baseline(X, obs, ridge):
    """Independent per-label logistic fits, the correlation-blind baseline.

    Each label's column is a ridge-regularized logistic regression on that
    label's observed entries; labels with no observations get a zero
    column (score 0, probability one half).
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    dummy_W = np.zeros((np.asarray(X).shape[1], obs.L))
    X, W = _check_shapes(X, obs, dummy_W)
    loss = LogisticLoss()
    cols_idx = _by_column(obs)
    for j in range(obs.L):
        idx = cols_idx[j]
        if idx.size == 0:
            continue
        A = X[obs.rows[idx]]
        yv = obs.values[idx]
        W[:, j] = _damped_newton(
            A, yv, loss, reg=ridge, loss_scale=1.0 / idx.size,
            w0=np.zeros(X.shape[1]),
        )
    return DenseModel(W=W)


def predict_scores(X, model, gamma_clip=None):
    """Score matrix X @ W, optionally clipped to [-gamma_clip, gamma_clip]."""
    X = np.asarray(X, dtype=float)
    if isinstance(model, FactoredModel):
        if X.shape[1] != model.W1.shape[0]:
            raise ValueError("feature dimension does not match the model")
        Z = (X @ model.W1) @ model.W2.T
    else:
        if X.shape[1] != model.W.shape[0]:
            raise ValueError("feature dimension does not match the model")
        Z = X @ model.W
    if gamma_clip is not None:
        Z = np.clip(Z, -gamma_clip, gamma_clip)
    return Z


def recovery_error(W_hat, W_star):
    """Squared Frobenius distance normalized by the number of entries."""
    W_hat = np.asarray(W_hat, dtype=float)
    W_star = np.asarray(W_star, dtype=float)
    if W_hat.shape != W_star.shape:
        raise ValueError("matrices must have the same shape")
    diff = W_hat - W_star
    return float(np.sum(diff * diff) / W_hat.size)
