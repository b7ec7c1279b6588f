import math

import numpy as np
import pytest

from nondecomp.losses import (
    LOSS_NAMES,
    PULossWrapper,
    get_loss,
    logit,
    sigmoid,
)

ALL = [get_loss(name) for name in LOSS_NAMES]
BINARY = [get_loss(name) for name in ("logistic", "squared", "exponential")]


def central_diff(fn, t, h=1e-6):
    return (fn(t + h) - fn(t - h)) / (2 * h)


def minimize_scalar(fn, lo=-20.0, hi=20.0, iters=200):
    """Ternary search on a convex scalar function."""
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        if fn(m1) < fn(m2):
            hi = m2
        else:
            lo = m1
    return (lo + hi) / 2


class TestValues:
    def test_logistic_symmetric_point(self):
        loss = get_loss("logistic")
        assert loss.value(0.0, 1) == pytest.approx(math.log(2))
        assert loss.value(0.0, 0) == pytest.approx(math.log(2))

    def test_logistic_at_one(self):
        loss = get_loss("logistic")
        assert loss.value(1.0, 1) == pytest.approx(math.log(1 + math.exp(-1)))

    def test_squared_exact_fit(self):
        assert get_loss("squared").value(1.0, 1) == 0.0
        assert get_loss("squared").value(-1.0, 0) == 0.0

    def test_exponential(self):
        assert get_loss("exponential").value(2.0, 1) == pytest.approx(math.exp(-2))

    def test_gaussian_interpolation(self):
        assert get_loss("gaussian").value(0.7, 0.7) == 0.0

    def test_logistic_no_overflow(self):
        loss = get_loss("logistic")
        for t in (-700.0, 700.0):
            for y in (0, 1):
                assert np.isfinite(loss.value(t, y))

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown loss"):
            get_loss("hinge")


class TestGradients:
    def test_logistic_at_zero(self):
        loss = get_loss("logistic")
        assert loss.grad_t(0.0, 1) == pytest.approx(-0.5)
        assert loss.grad_t(0.0, 0) == pytest.approx(0.5)

    def test_squared_stationary_at_margin(self):
        loss = get_loss("squared")
        assert loss.grad_t(1.0, 1) == 0.0
        assert loss.grad_t(-1.0, 0) == 0.0

    @pytest.mark.parametrize("loss", ALL, ids=lambda l: l.name)
    def test_matches_finite_differences(self, loss):
        rng = np.random.default_rng(0)
        for _ in range(250):
            t = float(rng.uniform(-5, 5))
            y = int(rng.integers(0, 2))
            g = float(loss.grad_t(t, y))
            fd = central_diff(lambda tt: float(loss.value(tt, y)), t)
            assert abs(g - fd) / (1.0 + abs(g)) < 1e-5

    def test_exponential_grad_clamped(self):
        loss = get_loss("exponential")
        assert abs(float(loss.grad_t(-800.0, 1))) <= 1e6


class TestLinks:
    @pytest.mark.parametrize("loss", ALL, ids=lambda l: l.name)
    def test_mutually_inverse(self, loss):
        alphas = np.linspace(0.01, 0.99, 99)
        back = loss.inv_link(loss.link(alphas))
        np.testing.assert_allclose(back, alphas, atol=1e-10)

    @pytest.mark.parametrize("loss", ALL, ids=lambda l: l.name)
    def test_inv_link_nondecreasing(self, loss):
        t = np.linspace(-10, 10, 401)
        probs = np.asarray(loss.inv_link(t))
        assert np.all(np.diff(probs) >= -1e-15)

    def test_logistic_link_values(self):
        loss = get_loss("logistic")
        assert loss.link(0.5) == pytest.approx(0.0)
        assert loss.link(0.75) == pytest.approx(math.log(3))
        assert float(loss.inv_link(0.0)) == pytest.approx(0.5)

    @pytest.mark.parametrize("loss", ALL, ids=lambda l: l.name)
    def test_alpha_domain_enforced(self, loss):
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValueError):
                loss.link(bad)

    @pytest.mark.parametrize("loss", BINARY + [get_loss("gaussian")], ids=lambda l: l.name)
    def test_conditional_risk_minimized_at_link(self, loss):
        for eta in (0.2, 0.5, 0.65, 0.9):
            def risk(t):
                return eta * float(loss.value(t, 1)) + (1 - eta) * float(loss.value(t, 0))

            t_star = minimize_scalar(risk)
            assert t_star == pytest.approx(float(loss.link(eta)), abs=1e-6)


class TestExponentialFamilyPairing:
    def test_logistic_log_partition(self):
        loss = get_loss("logistic")
        t = np.linspace(-3, 3, 25)
        np.testing.assert_allclose(loss.log_partition(t), np.log1p(np.exp(t)), atol=1e-12)
        np.testing.assert_allclose(loss.log_partition_grad(t), sigmoid(t), atol=1e-12)

    def test_gaussian_log_partition(self):
        loss = get_loss("gaussian")
        assert float(loss.log_partition(3.0)) == pytest.approx(4.5)
        assert float(loss.log_partition_grad(3.0)) == pytest.approx(3.0)

    def test_exponential_has_no_pairing(self):
        with pytest.raises(ValueError, match="pairing"):
            get_loss("exponential").log_partition(0.0)


class TestPUWrapper:
    def test_rho_zero_is_identity(self):
        base = get_loss("logistic")
        wrapped = PULossWrapper(base, 0.0)
        for t in (-2.0, 0.0, 3.0):
            for y in (0, 1):
                assert float(wrapped.value(t, y)) == pytest.approx(float(base.value(t, y)))
                assert float(wrapped.grad_t(t, y)) == pytest.approx(float(base.grad_t(t, y)))

    def test_half_rho_logistic_at_zero(self):
        wrapped = PULossWrapper(get_loss("logistic"), 0.5)
        assert float(wrapped.value(0.0, 1)) == pytest.approx(math.log(2))

    @pytest.mark.parametrize("base", ALL, ids=lambda l: l.name)
    def test_unbiasedness_identity(self, base):
        ts = np.linspace(-5, 5, 21)
        for rho in np.arange(0.0, 0.95, 0.1):
            wrapped = PULossWrapper(base, rho)
            lhs = (1 - rho) * np.asarray(wrapped.value(ts, 1)) + rho * np.asarray(
                wrapped.value(ts, 0)
            )
            np.testing.assert_allclose(lhs, np.asarray(base.value(ts, 1)), atol=1e-12)
            np.testing.assert_allclose(
                np.asarray(wrapped.value(ts, 0)), np.asarray(base.value(ts, 0)), atol=0
            )

    def test_gradient_same_combination(self):
        base = get_loss("logistic")
        wrapped = PULossWrapper(base, 0.3)
        t = 1.3
        expect = (float(base.grad_t(t, 1)) - 0.3 * float(base.grad_t(t, 0))) / 0.7
        assert float(wrapped.grad_t(t, 1)) == pytest.approx(expect, abs=1e-15)

    def test_rho_domain(self):
        with pytest.raises(ValueError):
            PULossWrapper(get_loss("logistic"), 1.0)
        with pytest.raises(ValueError):
            PULossWrapper(get_loss("logistic"), -0.1)


class TestStableHelpers:
    def test_sigmoid_extremes(self):
        assert float(sigmoid(800.0)) == 1.0
        assert float(sigmoid(-800.0)) == 0.0

    def test_logit_roundtrip(self):
        p = np.linspace(1e-8, 1 - 1e-8, 101)
        np.testing.assert_allclose(sigmoid(logit(p)), p, atol=1e-9)
