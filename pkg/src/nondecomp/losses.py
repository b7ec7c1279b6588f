"""Strongly proper composite losses, their link functions, and the
positive-unlabeled correction wrapper.

Losses take labels y in {0, 1} and map them internally to the +/-1
convention their margin formulas are written in; the Gaussian likelihood
loss is the exception and consumes real-valued labels directly. All
methods are vectorized over numpy arrays and accept plain scalars.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ProperLoss",
    "LogisticLoss",
    "SquaredLoss",
    "ExponentialLoss",
    "GaussianLoss",
    "PULossWrapper",
    "get_loss",
    "LOSS_NAMES",
    "sigmoid",
    "logit",
]

# exponential-loss derivatives are clamped so solvers cannot blow up
_GRAD_CLAMP = 1e6
# cap on exp() arguments, keeps values finite for extreme scores
_EXP_CAP = 700.0


def sigmoid(t):
    """Numerically stable logistic function 1 / (1 + exp(-t))."""
    t = np.asarray(t, dtype=float)
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logit(p):
    """Inverse of ``sigmoid`` on (0, 1)."""
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def _signed(y):
    """Map {0, 1} labels to {-1, +1}."""
    return 2.0 * np.asarray(y, dtype=float) - 1.0


def _check_prob_open(alpha):
    a = np.asarray(alpha, dtype=float)
    if not np.all((a > 0.0) & (a < 1.0)):
        raise ValueError("alpha must lie strictly inside (0, 1)")
    return a


class ProperLoss:
    """A strongly proper composite loss with link and inverse link.

    Subclasses provide the pointwise value and its score derivatives plus
    the link pair: ``link`` maps a class probability to the score that
    minimizes the conditional risk, ``inv_link`` maps scores back to
    probabilities. Losses that double as an exponential-family negative
    log-likelihood also expose the log-partition function and its
    derivative (the model's mean function), used for sampling and for
    likelihood-based fitting.

    ``strong_properness_modulus`` is stored for documentation purposes
    only and never enters any computation.
    """

    name = "?"
    strong_properness_modulus = float("nan")

    def value(self, t, y):
        raise NotImplementedError

    def grad_t(self, t, y):
        """Derivative of ``value`` with respect to the score t."""
        raise NotImplementedError

    def hess_t(self, t, y):
        """Second derivative of ``value`` in t (for Newton sub-solvers)."""
        raise NotImplementedError

    def link(self, alpha):
        raise NotImplementedError

    def inv_link(self, t):
        raise NotImplementedError

    def log_partition(self, t):
        raise ValueError(f"loss {self.name!r} has no exponential-family pairing")

    def log_partition_grad(self, t):
        raise ValueError(f"loss {self.name!r} has no exponential-family pairing")

    def __repr__(self):
        return f"{type(self).__name__}()"


class LogisticLoss(ProperLoss):
    """log(1 + exp(-y~ t)) with y~ = 2y - 1; the Bernoulli log-likelihood."""

    name = "logistic"
    strong_properness_modulus = 4.0

    def value(self, t, y):
        return np.logaddexp(0.0, -_signed(y) * np.asarray(t, dtype=float))

    def grad_t(self, t, y):
        ys = _signed(y)
        return -ys * sigmoid(-ys * np.asarray(t, dtype=float))

    def hess_t(self, t, y):
        s = sigmoid(t)
        return s * (1.0 - s) + 0.0 * _signed(y)

    def link(self, alpha):
        return logit(_check_prob_open(alpha))

    def inv_link(self, t):
        return sigmoid(t)

    def log_partition(self, t):
        return np.logaddexp(0.0, np.asarray(t, dtype=float))

    def log_partition_grad(self, t):
        return sigmoid(t)


class SquaredLoss(ProperLoss):
    """Margin-form squared loss (1 - y~ t)^2 with y~ = 2y - 1."""

    name = "squared"
    strong_properness_modulus = 2.0

    def value(self, t, y):
        ys = _signed(y)
        return (1.0 - ys * np.asarray(t, dtype=float)) ** 2

    def grad_t(self, t, y):
        ys = _signed(y)
        return -2.0 * ys * (1.0 - ys * np.asarray(t, dtype=float))

    def hess_t(self, t, y):
        ys = _signed(y)
        return 2.0 * ys * ys + 0.0 * np.asarray(t, dtype=float)

    def link(self, alpha):
        return 2.0 * _check_prob_open(alpha) - 1.0

    def inv_link(self, t):
        return np.clip((np.asarray(t, dtype=float) + 1.0) / 2.0, 0.0, 1.0)

    # Gaussian pairing: on real-valued observations the margin form is a
    # rescaled squared error, so it shares the quadratic log-partition.
    def log_partition(self, t):
        t = np.asarray(t, dtype=float)
        return 0.5 * t * t

    def log_partition_grad(self, t):
        return np.asarray(t, dtype=float)


class ExponentialLoss(ProperLoss):
    """exp(-y~ t) with y~ = 2y - 1; gradients clamped to +/-1e6."""

    name = "exponential"
    strong_properness_modulus = 4.0

    def value(self, t, y):
        m = -_signed(y) * np.asarray(t, dtype=float)
        return np.exp(np.minimum(m, _EXP_CAP))

    def grad_t(self, t, y):
        ys = _signed(y)
        g = -ys * np.exp(np.minimum(-ys * np.asarray(t, dtype=float), _EXP_CAP))
        return np.clip(g, -_GRAD_CLAMP, _GRAD_CLAMP)

    def hess_t(self, t, y):
        ys = _signed(y)
        h = ys * ys * np.exp(np.minimum(-ys * np.asarray(t, dtype=float), _EXP_CAP))
        return np.clip(h, 0.0, _GRAD_CLAMP)

    def link(self, alpha):
        return 0.5 * logit(_check_prob_open(alpha))

    def inv_link(self, t):
        return sigmoid(2.0 * np.asarray(t, dtype=float))


class GaussianLoss(ProperLoss):
    """Squared-error likelihood 0.5 (t - y)^2 for real-valued observations.

    Labels pass through unmapped; this is the loss to fit under the
    additive-noise observation model where y is a real number rather than
    a binary draw. Its gradient t - y vanishes exactly at interpolation.
    """

    name = "gaussian"
    strong_properness_modulus = 1.0

    def value(self, t, y):
        diff = np.asarray(t, dtype=float) - np.asarray(y, dtype=float)
        return 0.5 * diff * diff

    def grad_t(self, t, y):
        return np.asarray(t, dtype=float) - np.asarray(y, dtype=float)

    def hess_t(self, t, y):
        return np.ones_like(np.asarray(t, dtype=float) + 0.0 * np.asarray(y, dtype=float))

    def link(self, alpha):
        return np.asarray(_check_prob_open(alpha), dtype=float) + 0.0

    def inv_link(self, t):
        return np.clip(np.asarray(t, dtype=float), 0.0, 1.0)

    def log_partition(self, t):
        t = np.asarray(t, dtype=float)
        return 0.5 * t * t

    def log_partition_grad(self, t):
        return np.asarray(t, dtype=float)


class PULossWrapper:
    """Unbiased correction for one-sided label noise.

    Observed positives are a (1 - rho) thinning of the true positives and
    observed zeros are a mixture of true zeros and flipped positives. The
    corrected loss restores the clean loss in expectation over the flip
    process:

        (1 - rho) * value(t, 1) + rho * value(t, 0) == base.value(t, 1)
        value(t, 0) == base.value(t, 0)

    Gradients and curvatures use the same linear combination.
    """

    def __init__(self, base, rho):
        if not 0.0 <= rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        self.base = base
        self.rho = float(rho)

    @property
    def name(self):
        return f"pu[{self.base.name},rho={self.rho:g}]"

    def _combine(self, fn, t, y):
        y = np.asarray(y, dtype=float)
        ones = np.ones_like(y)
        zeros = np.zeros_like(y)
        on_pos = (fn(t, ones) - self.rho * fn(t, zeros)) / (1.0 - self.rho)
        on_neg = fn(t, zeros)
        return np.where(y == 1.0, on_pos, on_neg)

    def value(self, t, y):
        return self._combine(self.base.value, t, y)

    def grad_t(self, t, y):
        return self._combine(self.base.grad_t, t, y)

    def hess_t(self, t, y):
        return self._combine(self.base.hess_t, t, y)

    def link(self, alpha):
        return self.base.link(alpha)

    def inv_link(self, t):
        return self.base.inv_link(t)

    def __repr__(self):
        return f"PULossWrapper({self.base!r}, rho={self.rho})"


_LOSSES = {
    cls.name: cls for cls in (LogisticLoss, SquaredLoss, ExponentialLoss, GaussianLoss)
}
LOSS_NAMES = tuple(sorted(_LOSSES))


def get_loss(name):
    """Look up a loss by name; raises ValueError for unknown names."""
    try:
        return _LOSSES[name]()
    except KeyError:
        raise ValueError(
            f"unknown loss {name!r}; expected one of: {', '.join(LOSS_NAMES)}"
        ) from None
