"""Confusion-count primitives, linear-fractional metric families, and the
threshold sweep that binarizes real scores to maximize a chosen metric.

Predictions and labels live on an observed set of (row, column) entries and
are passed as parallel numpy arrays. Everything here is a pure function of
its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConfusionAggregate",
    "GroupedConfusion",
    "MetricSpec",
    "MetricEval",
    "ThresholdResult",
    "METRIC_REGISTRY",
    "get_metric",
    "confusion_micro",
    "confusion_grouped",
    "eval_metric",
    "eval_metric_info",
    "apply_threshold",
    "threshold_sweep",
]

_MODES = ("micro", "instance", "macro")


@dataclass(frozen=True)
class ConfusionAggregate:
    """Empirical confusion fractions over a group of observed entries.

    tp/fp/fn/tn are averages of the per-entry indicators, so they are
    nonnegative and sum to 1 whenever count > 0.
    """

    tp: float
    fp: float
    fn: float
    tn: float
    count: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0.0:
            raise ValueError("confusion fractions must be nonnegative")
        if self.count > 0 and abs(self.tp + self.fp + self.fn + self.tn - 1.0) > 1e-12:
            raise ValueError("confusion fractions must sum to 1")

    @classmethod
    def from_counts(cls, tp, fp, fn, tn):
        total = tp + fp + fn + tn
        if total <= 0:
            raise ValueError("empty observation set")
        return cls(tp / total, fp / total, fn / total, tn / total, total)


@dataclass(frozen=True)
class GroupedConfusion:
    """Per-group confusion aggregates; groups with no entries are dropped."""

    aggregates: list
    group_ids: np.ndarray
    empty_groups: int

    def __len__(self):
        return len(self.aggregates)

    def __iter__(self):
        return iter(self.aggregates)


@dataclass(frozen=True)
class MetricSpec:
    """Coefficients of a linear-fractional metric of confusion fractions.

    The metric value of one group is
        (a0 + a11*tp + a01*fp + a10*fn + a00*tn)
        / (b0 + b11*tp + b01*fp + b10*fn + b00*tn)
    evaluated on all observed entries jointly (micro), or averaged over
    per-row (instance) or per-column (macro) groups. Groups whose
    denominator falls below ``denominator_floor`` contribute 0 and are
    flagged as degenerate instead of raising.
    """

    a0: float = 0.0
    a11: float = 0.0
    a01: float = 0.0
    a10: float = 0.0
    a00: float = 0.0
    b0: float = 0.0
    b11: float = 0.0
    b01: float = 0.0
    b10: float = 0.0
    b00: float = 0.0
    mode: str = "micro"
    denominator_floor: float = 1e-12

    def __post_init__(self):
        coeffs = (
            self.a0, self.a11, self.a01, self.a10, self.a00,
            self.b0, self.b11, self.b01, self.b10, self.b00,
        )
        if not all(math.isfinite(c) for c in coeffs):
            raise ValueError("metric coefficients must be finite")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if not self.denominator_floor > 0.0:
            raise ValueError("denominator_floor must be positive")


@dataclass(frozen=True)
class MetricEval:
    """Metric value plus how many groups hit the degenerate-denominator path."""

    value: float
    degenerate_groups: int
    groups: int


@dataclass(frozen=True)
class ThresholdResult:
    """Best threshold found by a sweep and the metric value it achieves."""

    theta_hat: float
    value: float
    candidates_evaluated: int


def _f1_spec(mode):
    return MetricSpec(a11=2.0, b11=2.0, b01=1.0, b10=1.0, mode=mode)


METRIC_REGISTRY = {
    "micro_f1": _f1_spec("micro"),
    "instance_f1": _f1_spec("instance"),
    "macro_f1": _f1_spec("macro"),
    "accuracy": MetricSpec(a0=1.0, a01=-1.0, a10=-1.0, b0=1.0, mode="micro"),
    "jaccard": MetricSpec(a11=1.0, b11=1.0, b01=1.0, b10=1.0, mode="micro"),
}


def get_metric(name):
    """Look up a named MetricSpec from the registry."""
    try:
        return METRIC_REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(METRIC_REGISTRY))
        raise ValueError(f"unknown metric {name!r}; expected one of: {known}") from None


def _as_binary(arr, what):
    a = np.asarray(arr)
    if a.size == 0:
        raise ValueError("empty observation set")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{what} must take values in {{0, 1}}")
    return a.astype(np.int8, copy=False)


def _ratio_scalar(spec, tp, fp, fn, tn):
    """One group's metric ratio, or None when the denominator is degenerate."""
    num = spec.a0 + spec.a11 * tp + spec.a01 * fp + spec.a10 * fn + spec.a00 * tn
    den = spec.b0 + spec.b11 * tp + spec.b01 * fp + spec.b10 * fn + spec.b00 * tn
    if den < spec.denominator_floor:
        return None
    return num / den


def _ratio_arrays(spec, tp, fp, fn, tn):
    """Vectorized per-group ratios; degenerate groups contribute 0."""
    num = spec.a0 + spec.a11 * tp + spec.a01 * fp + spec.a10 * fn + spec.a00 * tn
    den = spec.b0 + spec.b11 * tp + spec.b01 * fp + spec.b10 * fn + spec.b00 * tn
    ok = den >= spec.denominator_floor
    vals = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
    return vals, int(np.count_nonzero(~ok))


def confusion_micro(yhat, y):
    """Confusion fractions averaged over all observed entries jointly."""
    yhat = _as_binary(yhat, "predictions")
    y = _as_binary(y, "labels")
    if yhat.shape != y.shape:
        raise ValueError("predictions and labels must be indexed by the same entries")
    pred_pos = yhat == 1
    true_pos = y == 1
    tp = int(np.count_nonzero(pred_pos & true_pos))
    fp = int(np.count_nonzero(pred_pos & ~true_pos))
    fn = int(np.count_nonzero(~pred_pos & true_pos))
    tn = int(np.count_nonzero(~pred_pos & ~true_pos))
    return ConfusionAggregate.from_counts(tp, fp, fn, tn)


def confusion_grouped(yhat, y, group_index, n_groups=None):
    """Confusion fractions per group (rows for instance mode, columns for macro).

    Parameters
    ----------
    group_index : array of the group id of each observed entry.
    n_groups : optional total number of groups, used only to report how many
        groups had no observed entries.

    Returns a GroupedConfusion with one aggregate per non-empty group, in
    ascending group-id order.
    """
    yhat = _as_binary(yhat, "predictions")
    y = _as_binary(y, "labels")
    gi = np.asarray(group_index)
    if not (yhat.shape == y.shape == gi.shape):
        raise ValueError("predictions, labels and group index must be aligned")
    gids, inv = np.unique(gi, return_inverse=True)
    ngrp = len(gids)
    true_pos = y == 1
    pred_pos = yhat == 1
    cnt = np.bincount(inv, minlength=ngrp)
    tp = np.bincount(inv[pred_pos & true_pos], minlength=ngrp)
    fp = np.bincount(inv[pred_pos & ~true_pos], minlength=ngrp)
    fn = np.bincount(inv[~pred_pos & true_pos], minlength=ngrp)
    tn = np.bincount(inv[~pred_pos & ~true_pos], minlength=ngrp)
    aggs = [
        ConfusionAggregate.from_counts(int(tp[g]), int(fp[g]), int(fn[g]), int(tn[g]))
        for g in range(ngrp)
    ]
    empty = int(n_groups) - ngrp if n_groups is not None else 0
    if empty < 0:
        raise ValueError("n_groups smaller than the number of observed groups")
    return GroupedConfusion(aggregates=aggs, group_ids=gids, empty_groups=empty)


def _agg_list(conf):
    if isinstance(conf, GroupedConfusion):
        return conf.aggregates
    if isinstance(conf, ConfusionAggregate):
        raise ValueError("grouped metric modes need a list of per-group aggregates")
    return list(conf)


def eval_metric_info(spec, conf):
    """Evaluate a metric and report degenerate-denominator groups.

    ``conf`` is a single ConfusionAggregate in micro mode, or a sequence of
    per-group aggregates (or a GroupedConfusion) in instance/macro mode.
    """
    if spec.mode == "micro":
        if not isinstance(conf, ConfusionAggregate):
            raise ValueError("micro mode takes a single ConfusionAggregate")
        r = _ratio_scalar(spec, conf.tp, conf.fp, conf.fn, conf.tn)
        if r is None:
            return MetricEval(0.0, 1, 1)
        return MetricEval(r, 0, 1)
    aggs = _agg_list(conf)
    if not aggs:
        raise ValueError("no groups to average")
    tp = np.array([a.tp for a in aggs])
    fp = np.array([a.fp for a in aggs])
    fn = np.array([a.fn for a in aggs])
    tn = np.array([a.tn for a in aggs])
    vals, ndeg = _ratio_arrays(spec, tp, fp, fn, tn)
    return MetricEval(float(vals.sum() / len(aggs)), ndeg, len(aggs))


def eval_metric(spec, conf):
    """Metric value alone; see eval_metric_info for the degenerate flag."""
    return eval_metric_info(spec, conf).value


def apply_threshold(z, theta):
    """Binarize scores: prediction is 1 exactly where z >= theta."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("scores must be finite")
    theta = float(theta)
    if math.isnan(theta):
        raise ValueError("threshold must not be NaN")
    return (z >= theta).astype(np.int8)


def threshold_sweep(z, y, spec, group_index=None):
    """Find the threshold maximizing a metric over all achievable labelings.

    Candidates are the distinct observed scores (a candidate equal to a
    score marks that entry positive) plus one sentinel strictly above the
    maximum, which yields the all-negative labeling. Confusion counts are
    updated incrementally, so the sweep costs O(m log m) in micro mode and
    O(m log m + G * candidates) in the grouped modes, for m observed
    entries and G groups. Ties are broken toward the smallest threshold,
    i.e. the most-positive labeling among the maximizers.

    Returns a ThresholdResult whose ``value`` equals ``eval_metric`` of the
    thresholded labeling exactly (same arithmetic on both paths).
    """
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise ValueError("empty observation set")
    if not np.all(np.isfinite(z)):
        raise ValueError("scores must be finite")
    y = _as_binary(y, "labels")
    if z.shape != y.shape:
        raise ValueError("scores and labels must be indexed by the same entries")
    if spec.mode != "micro":
        if group_index is None:
            raise ValueError(f"{spec.mode} mode needs a group_index")
        group_index = np.asarray(group_index)
        if group_index.shape != z.shape:
            raise ValueError("group_index must align with scores")

    vals_asc, inv = np.unique(z, return_inverse=True)
    n_distinct = len(vals_asc)
    sentinel = float(vals_asc[-1]) + 1.0
    true_pos = y == 1

    if spec.mode == "micro":
        theta, best = _sweep_micro(spec, vals_asc, inv, true_pos, sentinel)
    else:
        theta, best = _sweep_grouped(
            spec, vals_asc, inv, true_pos, group_index, sentinel
        )
    return ThresholdResult(theta_hat=theta, value=best, candidates_evaluated=n_distinct + 1)


def _sweep_micro(spec, vals_asc, inv, true_pos, sentinel):
    total = int(inv.size)
    n_pos = int(np.count_nonzero(true_pos))
    n_neg = total - n_pos
    pos_at = np.bincount(inv[true_pos], minlength=len(vals_asc))
    neg_at = np.bincount(inv[~true_pos], minlength=len(vals_asc))

    def value_at(tp, fp):
        r = _ratio_scalar(
            spec, tp / total, fp / total, (n_pos - tp) / total, (n_neg - fp) / total
        )
        return 0.0 if r is None else r

    tp = 0
    fp = 0
    best_theta = sentinel
    best = value_at(tp, fp)
    for k in range(len(vals_asc) - 1, -1, -1):
        tp += int(pos_at[k])
        fp += int(neg_at[k])
        v = value_at(tp, fp)
        if v >= best:
            best = v
            best_theta = float(vals_asc[k])
    return best_theta, best


def _sweep_grouped(spec, vals_asc, inv, true_pos, group_index, sentinel):
    gids, ginv = np.unique(group_index, return_inverse=True)
    ngrp = len(gids)
    cnt = np.bincount(ginv, minlength=ngrp).astype(np.int64)
    pos_g = np.bincount(ginv[true_pos], minlength=ngrp).astype(np.int64)

    tp_c = np.zeros(ngrp, dtype=np.int64)
    fp_c = np.zeros(ngrp, dtype=np.int64)
    fn_c = pos_g.copy()
    tn_c = cnt - pos_g

    # entries ordered by score value so each candidate flips one contiguous slice
    order = np.argsort(inv, kind="stable")
    inv_sorted = inv[order]
    starts = np.searchsorted(inv_sorted, np.arange(len(vals_asc)), side="left")
    ends = np.searchsorted(inv_sorted, np.arange(len(vals_asc)), side="right")
    entry_group = ginv[order]
    entry_pos = true_pos[order]

    def value_now():
        vals, _ = _ratio_arrays(spec, tp_c / cnt, fp_c / cnt, fn_c / cnt, tn_c / cnt)
        return float(vals.sum() / ngrp)

    best_theta = sentinel
    best = value_now()
    for k in range(len(vals_asc) - 1, -1, -1):
        sel = slice(starts[k], ends[k])
        gsel = entry_group[sel]
        psel = entry_pos[sel]
        np.add.at(tp_c, gsel[psel], 1)
        np.add.at(fp_c, gsel[~psel], 1)
        np.subtract.at(fn_c, gsel[psel], 1)
        np.subtract.at(tn_c, gsel[~psel], 1)
        v = value_now()
        if v >= best:
            best = v
            best_theta = float(vals_asc[k])
    return best_theta, best
