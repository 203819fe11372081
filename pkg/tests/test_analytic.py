import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optbid import analytic
from optbid.model import (
    FIRST_PRICE,
    SECOND_PRICE,
    Channel,
    Constant,
    Discrete,
    IntensityProfile,
    PolicyTable,
    Purchase,
    SocialDiscount,
    Subscription,
    Uniform,
)

DISTS = [Constant(0.4), Uniform(0.1, 0.9), Discrete((0.0, 0.2, 0.5, 1.3), (0.1, 0.4, 0.3, 0.2))]


# --- channel functionals -----------------------------------------------------


def test_win_prob_examples():
    assert analytic.win_prob(Uniform(0, 1), 0.5) == 0.5
    assert analytic.win_prob(Constant(0.3), 0.3) == 1.0
    third = Discrete((0.1, 0.2, 0.3), (1 / 3, 1 / 3, 1 / 3))
    assert analytic.win_prob(third, 0.15) == pytest.approx(1 / 3, abs=1e-15)
    assert analytic.win_prob(third, 0.2) == pytest.approx(2 / 3, abs=1e-15)


def test_expected_payment_examples():
    assert analytic.expected_payment(Channel(Uniform(0, 1), FIRST_PRICE), 0.5) == 0.25
    assert analytic.expected_payment(Channel(Uniform(0, 1), SECOND_PRICE), 0.5) == 0.125
    assert analytic.expected_payment(Channel(Constant(0.4), SECOND_PRICE), 0.3) == 0.0


def test_negative_bid_rejected():
    with pytest.raises(ValueError):
        analytic.win_prob(Constant(0.1), -0.01)


def test_vectorized_matches_scalar():
    b = np.linspace(0, 1.5, 31)
    for dist in DISTS:
        for rule in (FIRST_PRICE, SECOND_PRICE):
            ch = Channel(dist, rule)
            vec = analytic.expected_payment(ch, b)
            assert np.array_equal(vec, [analytic.expected_payment(ch, float(x)) for x in b])


@pytest.mark.parametrize("dist", DISTS)
@pytest.mark.parametrize("rule", [FIRST_PRICE, SECOND_PRICE])
def test_functionals_against_sampling(dist, rule):
    # Monte Carlo oracle over draws of the competitor bid
    rng = np.random.default_rng(11)
    B = dist.sample(rng, 400_000)
    for bid in (0.0, 0.15, 0.2, 0.4, 0.55, 1.0, 2.0):
        win = bid >= B
        pay = np.where(win, bid if rule is FIRST_PRICE else B, 0.0)
        se_p = max(win.std() / math.sqrt(B.size), 1e-12)
        se_e = max(pay.std() / math.sqrt(B.size), 1e-12)
        assert abs(analytic.win_prob(dist, bid) - win.mean()) <= 5 * se_p
        assert abs(analytic.expected_payment(Channel(dist, rule), bid) - pay.mean()) <= 5 * se_e


@settings(max_examples=50, deadline=None)
@given(lo=st.floats(0, 2), width=st.floats(0.01, 3), frac=st.floats(-0.2, 1.2))
def test_uniform_truncated_mean_quadrature(lo, width, frac):
    hi = lo + width
    b = max(0.0, lo + frac * width)
    n = 20_000
    x = lo + (np.arange(n) + 0.5) * width / n
    oracle = np.sum(np.where(x <= b, x, 0.0)) / n
    assert analytic.truncated_mean(Uniform(lo, hi), b) == pytest.approx(oracle, abs=2 * width / n * hi)


# --- value functions ------------------------------------------------------


def test_value_purchase_examples():
    eta = IntensityProfile(1, 1)
    assert analytic.value_purchase(Purchase(2, 1), eta, Channel(Constant(0.5)), 0.5) == pytest.approx(3.5 / 3)
    v = analytic.value_purchase(Purchase(3, 1), IntensityProfile(1, 2), Channel(Uniform(0, 1), FIRST_PRICE), 1.0)
    assert v == pytest.approx(1.75)
    assert analytic.value_purchase(Purchase(2, 1), IntensityProfile(1), Channel(Constant(0.5)), 0.0) == 1.0


def test_value_subscription_examples():
    spec = Subscription(1, math.log(2))
    ch = Channel(Uniform(0, 1), FIRST_PRICE)
    assert analytic.value_subscription(spec, IntensityProfile(1), ch, 0.3) == pytest.approx(2 / (1 + math.log(2)))
    eta = IntensityProfile(1, 2)
    assert analytic.value_subscription(spec, eta, ch, 0.3) == pytest.approx(
        analytic.value_purchase(Purchase(2, math.log(2)), eta, ch, 0.3), rel=1e-14)


def test_value_social_discount_examples():
    v = analytic.value_social_discount(SocialDiscount(1, 0), IntensityProfile(0.5, 1), Channel(Constant(0.4)), 0.4)
    assert v == pytest.approx(1.4 / 1.5)
    v = analytic.value_social_discount(SocialDiscount(1, 1), IntensityProfile(1, 1),
                                       Channel(Uniform(0, 1), FIRST_PRICE), 0.5)
    assert v == pytest.approx(0.5)
    with pytest.raises(ZeroDivisionError):
        analytic.value_social_discount(SocialDiscount(1, 0), IntensityProfile(0, 1), Channel(Constant(0.4)), 0.1)


def test_value_social_pair_example():
    eta = IntensityProfile(0.2, 0, 1, 0.8)
    v = analytic.value_social_pair(0.5, eta, Channel(Constant(0.5)), Channel(Constant(0.5)), 1, 0.0, 0.5)
    assert v == pytest.approx(1.25)
    with pytest.raises(ValueError):
        analytic.value_social_pair(1.0, eta, Channel(Constant(0.5)), Channel(Constant(0.5)), 1, 0, 0)


@settings(max_examples=40, deadline=None)
@given(K=st.floats(0.5, 3), rho=st.floats(0.1, 2), eI=st.floats(0, 2), eT=st.floats(0, 3),
       bid=st.floats(0, 1.5), d=st.sampled_from(DISTS), rule=st.sampled_from([FIRST_PRICE, SECOND_PRICE]))
def test_purchase_value_against_time_integral(K, rho, eI, eT, bid, d, rule):
    # oracle: integrate the discounted reward and spend rates against the
    # survival of the uninformed state on a fine time grid
    ch = Channel(d, rule)
    hazard = eI + eT * analytic.win_prob(d, bid)
    spend = eT * analytic.expected_payment(ch, bid)
    t = np.linspace(0, 60 / (hazard + rho), 400_001)
    integrand = np.exp(-(hazard + rho) * t) * (hazard * K - spend)
    oracle = np.trapezoid(integrand, t) if hasattr(np, "trapezoid") else np.trapz(integrand, t)
    assert analytic.value_purchase(Purchase(K, rho), IntensityProfile(eI, eT), ch, bid) == pytest.approx(
        oracle, rel=1e-6, abs=1e-9)


def test_value_population_sums_rows():
    eta = IntensityProfile(0.5, 1, 0, 1)
    pol = PolicyTable(4, (0.4,) * 4, (0,) * 4, (0,) * 4)
    expected = sum(min(1 / (0.5 + k / 4), 1.4 / (1.5 + k / 4)) for k in range(4))
    assert analytic.value_population(1.0, eta, Channel(Constant(0.4)), None, pol) == pytest.approx(expected)


# --- constant competitor bid ------------------------------------------------


def test_dominant_bid_examples():
    assert analytic.dominant_bid_constant(2, 1, 1) == 1.0
    assert analytic.dominant_bid_constant(2, 1, 0) == 2.0
    assert analytic.dominant_bid_constant(2, 1e-12, 1) < 1e-11


def test_thresholds_examples():
    assert analytic.threshold_constant_targeted(1, 0.5, 1, 0.4) == pytest.approx(2.0)
    assert analytic.threshold_constant_targeted(1, 0.5, 0, 0.4) == math.inf
    assert analytic.threshold_constant_targeted(1, 0.5, 2, 1) == pytest.approx(0.25)
    assert analytic.threshold_constant_nontargeted(1, 0.2, 0.8, 0.5) == pytest.approx(0.9 / 1.4)
    assert analytic.threshold_constant_nontargeted(1, 0.5, 0, 1) == pytest.approx(0.5)
    assert analytic.threshold_constant_nontargeted(1, 0.5, 1, 2) == 0.0
    with pytest.raises(ValueError):
        analytic.threshold_constant_targeted(1, 0.5, 1, 0)
    with pytest.raises(ValueError):
        analytic.threshold_constant_nontargeted(1, 0.5, 1, 0)


# --- mean field -------------------------------------------------------------


def test_meanfield_closed_form_examples():
    assert analytic.meanfield_closed_form_targeted(IntensityProfile(0.5, 1, 0, 1), 1, 0.4) == pytest.approx(
        1.4 * math.log(2.5 / 1.5), rel=1e-14)
    assert analytic.meanfield_closed_form_targeted(IntensityProfile(0.5, 1, 0, 2), 1, 1) == pytest.approx(
        0.74582744, abs=1e-8)


@pytest.mark.parametrize("eta, B", [
    (IntensityProfile(0.5, 1, 0, 1), 0.4),   # ads pay off everywhere
    (IntensityProfile(0.5, 1, 0, 2), 1.0),   # ads stop at an interior proportion
    (IntensityProfile(2, 1, 0, 1), 1.0),     # ads never pay off
])
def test_meanfield_closed_form_matches_quadrature(eta, B):
    quad = analytic.meanfield_value(eta, Channel(Constant(B)), None, 1.0, 200_000)
    assert analytic.meanfield_closed_form_targeted(eta, 1.0, B) == pytest.approx(quad, abs=1e-8)


def test_meanfield_inner_solver_and_validation():
    eta = IntensityProfile(1, 0, 0, 1)
    calls = []

    def inner(p, *_):
        calls.append(len(p))
        return 1 / (1 + p)

    assert analytic.meanfield_value(eta, Channel(Constant(1)), None, 1, 1000, inner) == pytest.approx(
        math.log(2), abs=1e-6)
    assert calls == [1000]
    with pytest.raises(ValueError):
        analytic.meanfield_value(eta, Channel(Constant(1)), None, 1, 1)


# --- uniform first-price closed form ---------------------------------------


def test_uniform_closed_form_example():
    cf = analytic.uniform_firstprice_bid(Purchase(3, 1), IntensityProfile(1, 2), Uniform(0, 1))
    assert cf.b_star == pytest.approx(0.58114, abs=1e-5)
    assert cf.b_star == pytest.approx(cf.lambda1 + cf.lambda2 * cf.b_prime_star, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(K=st.floats(0.5, 5), rho=st.floats(0.1, 3), eI=st.floats(0, 3), eT=st.floats(0.1, 5),
       lo=st.floats(0, 1), width=st.floats(0.05, 2))
def test_uniform_closed_form_against_grid(K, rho, eI, eT, lo, width):
    spec, eta, dist = Purchase(K, rho), IntensityProfile(eI, eT), Uniform(lo, lo + width)
    cf = analytic.uniform_firstprice_bid(spec, eta, dist)
    grid = np.linspace(lo, lo + width, 20_001)
    values = analytic.value_purchase(spec, eta, Channel(dist, FIRST_PRICE), grid)
    best = values.max()
    at_cf = analytic.value_purchase(spec, eta, Channel(dist, FIRST_PRICE), cf.b_star)
    assert at_cf >= best - 1e-10 * max(1.0, abs(best))
