import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optbid import analytic, solver
from optbid.model import (
    FIRST_PRICE,
    SECOND_PRICE,
    Channel,
    Constant,
    Discrete,
    IntensityProfile,
    Purchase,
    SocialDiscount,
    SocialPopulation,
    Subscription,
    Uniform,
)

RULES = st.sampled_from([FIRST_PRICE, SECOND_PRICE])


@st.composite
def dists(draw, hi=1.5):
    kind = draw(st.sampled_from(["constant", "uniform", "discrete"]))
    if kind == "constant":
        return Constant(round(draw(st.floats(0, hi)), 3))
    if kind == "uniform":
        lo = round(draw(st.floats(0, hi / 2)), 3)
        return Uniform(lo, lo + round(draw(st.floats(0.05, hi / 2)), 3))
    atoms = sorted(set(round(x, 3) for x in draw(st.lists(st.floats(0, hi), min_size=1, max_size=5))))
    w = np.array(draw(st.lists(st.floats(0.1, 1), min_size=len(atoms), max_size=len(atoms))))
    w = w / w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return Discrete(tuple(atoms), tuple(w))


def static_objective(ch, t, b):
    return t * analytic.win_prob(ch.dist, b) - analytic.expected_payment(ch, b)


# --- smallest_argopt --------------------------------------------------------


def test_smallest_argopt_examples():
    assert solver.smallest_argopt(Channel(Constant(0.4)), 0.93333) == 0.4
    for rule in (FIRST_PRICE, SECOND_PRICE):
        assert solver.smallest_argopt(Channel(Uniform(0, 1), rule), 0.0) == 0.0
    assert solver.smallest_argopt(Channel(Uniform(0, 1), FIRST_PRICE), 1.0) == 0.5


def test_smallest_argopt_at_an_atom_prefers_zero():
    # bidding exactly the target gains nothing under second price
    assert solver.smallest_argopt(Channel(Constant(0.4)), 0.4) == 0.0
    assert solver.smallest_argopt(Channel(Discrete((0.1, 0.3), (0.5, 0.5))), 0.3) == 0.1


@settings(max_examples=150, deadline=None)
@given(d=dists(), rule=RULES, t=st.floats(0, 2))
def test_smallest_argopt_against_scan(d, rule, t):
    ch = Channel(d, rule)
    b = solver.smallest_argopt(ch, t)
    scan = np.unique(np.concatenate((np.linspace(0, 2.5, 25_001), d.breakpoints())))
    vals = static_objective(ch, t, scan)
    best = vals.max()
    assert static_objective(ch, t, b) >= best - 1e-9
    # no scanned bid well below b does as well
    below = scan[scan < b - 1e-3]
    assert np.all(static_objective(ch, t, below) < best - 1e-12) or below.size == 0


def test_smallest_argopt_vectorized():
    ch = Channel(Discrete((0.1, 0.4, 0.6), (0.2, 0.5, 0.3)), FIRST_PRICE)
    t = np.array([0.0, 0.3, 0.7, 1.5])
    assert np.array_equal(solver.smallest_argopt(ch, t), [solver.smallest_argopt(ch, float(x)) for x in t])


# --- single individual -------------------------------------------------------


def brute_force_best(value_fn, bound, dist, maximize):
    grid = np.unique(np.concatenate((np.linspace(0, bound, 200_001),
                                     [x for x in dist.breakpoints() if x <= bound])))
    vals = value_fn(grid)
    return vals.max() if maximize else vals.min()


def test_solve_purchase_examples():
    eta = IntensityProfile(1, 1)
    rep = solver.solve_purchase(Purchase(2, 1), eta, Channel(Constant(0.5)))
    assert rep.bid_min == 0.5
    assert rep.optimal_value == pytest.approx((1 * 2 + 1 * (2 - 0.5)) / 3)
    rep = solver.solve_purchase(Purchase(2, 1), eta, Channel(Constant(1.5)))
    assert rep.bid_min == 0.0
    assert rep.optimal_value == pytest.approx(1.0)
    rep = solver.solve_purchase(Purchase(3, 1), IntensityProfile(1, 2), Channel(Uniform(0, 1), FIRST_PRICE))
    assert rep.bid_min == pytest.approx(0.58114, abs=1e-5)
    assert rep.method is solver.SolveMethod.CLOSED_FORM


def test_solve_subscription_reduction():
    eta, ch = IntensityProfile(1, 1.5), Channel(Uniform(0.1, 1.2), SECOND_PRICE)
    a = solver.solve_subscription(Subscription(1, math.log(2)), eta, ch)
    b = solver.solve_purchase(Purchase(2, math.log(2)), eta, ch)
    assert a.bid_min == pytest.approx(b.bid_min, abs=1e-12)
    assert a.optimal_value == pytest.approx(b.optimal_value, rel=1e-12)
    rep = solver.solve_subscription(Subscription(1, 1), IntensityProfile(1), ch)
    assert rep.bid_min == 0.0
    assert rep.optimal_value == pytest.approx(Subscription(1, 1).K_eff / 2)
    vals = [solver.solve_subscription(Subscription(1, r), eta, ch).optimal_value for r in (0.5, 1, 2)]
    assert vals[0] > vals[1] > vals[2]


def test_solve_social_discount_examples():
    rep = solver.solve_social_discount(SocialDiscount(1, 0), IntensityProfile(0.5, 1), Channel(Constant(0.4)))
    assert rep.bid_min == 0.4
    assert rep.optimal_value == pytest.approx(1.4 / 1.5)
    rep = solver.solve_social_discount(SocialDiscount(1, 0), IntensityProfile(0.5, 1), Channel(Constant(3)))
    assert rep.bid_min == 0.0
    assert rep.optimal_value == pytest.approx(2.0)


@settings(max_examples=40, deadline=None)
@given(K=st.floats(0.5, 3), rho=st.floats(0.1, 2), eI=st.floats(0, 2), eT=st.floats(0, 3),
       d=dists(), rule=RULES)
def test_solve_purchase_against_grid(K, rho, eI, eT, d, rule):
    spec, eta, ch = Purchase(K, rho), IntensityProfile(eI, eT), Channel(d, rule)
    rep = solver.solve_purchase(spec, eta, ch)
    lo, hi = rep.interval
    assert lo <= rep.bid_min <= hi
    assert rep.optimal_value == pytest.approx(analytic.value_purchase(spec, eta, ch, rep.bid_min), abs=1e-9)
    oracle = brute_force_best(lambda b: analytic.value_purchase(spec, eta, ch, b), hi, d, True)
    assert rep.optimal_value >= oracle - 1e-9
    assert rep.optimal_value <= oracle + 1e-4


@settings(max_examples=40, deadline=None)
@given(K=st.floats(0.5, 3), rho=st.floats(0, 2), eI=st.floats(0.05, 2), eT=st.floats(0, 3),
       d=dists(), rule=RULES)
def test_solve_social_discount_against_grid(K, rho, eI, eT, d, rule):
    spec, eta, ch = SocialDiscount(K, rho), IntensityProfile(eI, eT), Channel(d, rule)
    rep = solver.solve_social_discount(spec, eta, ch)
    lo, hi = rep.interval
    assert lo <= rep.bid_min <= rep.optimal_value * (1 + 1e-12) <= hi * (1 + 1e-12)
    oracle = brute_force_best(lambda b: analytic.value_social_discount(spec, eta, ch, b), hi, d, False)
    assert rep.optimal_value <= oracle + 1e-9
    assert rep.optimal_value >= oracle - 1e-4


@settings(max_examples=40, deadline=None)
@given(d=st.floats(0, 3))
def test_dominant_bid_constant_is_optimal(d):
    spec, eta, ch = Purchase(2, 1), IntensityProfile(1, 1), Channel(Constant(d))
    dominant = analytic.dominant_bid_constant(2, 1, 1)
    best = solver.solve_purchase(spec, eta, ch).optimal_value
    assert analytic.value_purchase(spec, eta, ch, dominant) == pytest.approx(best, rel=1e-14)


# --- population ----------------------------------------------------------------


def test_fixed_point_examples():
    eta = IntensityProfile(0.5, 1, 0, 1)
    v = solver.second_price_fixed_point(0.0, eta, Channel(Constant(0.4)), None, 1.0)
    assert v == pytest.approx(1.4 / 1.5, rel=1e-14)
    eta = IntensityProfile(0.5, 0, 0, 1)
    assert solver.second_price_fixed_point(0.5, eta, Channel(Constant(0.4)), None, 1.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        solver.second_price_fixed_point(0.0, IntensityProfile(0.5, 1), Channel(Constant(0.4), FIRST_PRICE), None, 1)


def test_population_M4_example():
    eta = IntensityProfile(0.5, 1, 0, 1)
    rep = solver.solve_social_population(SocialPopulation(1, 4), eta, Channel(Constant(0.4)))
    expected = [min(1 / (0.5 + k / 4), 1.4 / (1.5 + k / 4)) for k in range(4)]
    assert rep.policy.values == pytest.approx(expected, rel=1e-12)
    assert rep.optimal_value == pytest.approx(3.05556, abs=1e-5)


def test_population_M1_reduces_to_social_discount():
    for d, rule in [(Constant(0.4), SECOND_PRICE), (Uniform(0.1, 1.0), FIRST_PRICE),
                    (Discrete((0.2, 0.7), (0.5, 0.5)), FIRST_PRICE)]:
        eta = IntensityProfile(0.5, 1.3)
        pop = solver.solve_social_population(SocialPopulation(1, 1), eta, Channel(d, rule))
        single = solver.solve_social_discount(SocialDiscount(1, 0), eta, Channel(d, rule))
        assert pop.optimal_value == pytest.approx(single.optimal_value, rel=1e-9)
        assert pop.policy.bid_T[0] == pytest.approx(single.bid_min, abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(eI=st.floats(1, 3), eT=st.floats(0, 2), eNT=st.floats(0, 2), eS=st.floats(0, 2),
       dT=dists(1.0), dNT=dists(1.0), rT=RULES, rNT=RULES, k=st.integers(0, 4))
def test_population_row_against_2d_grid(eI, eT, eNT, eS, dT, dNT, rT, rNT, k):
    eta, chT, chNT, p = IntensityProfile(eI, eT, eNT, eS), Channel(dT, rT), Channel(dNT, rNT), k / 5
    v = solver.value_at_p(p, eta, chT, chNT, 1.0)
    v0 = 1 / (eI + p * eS)
    axis = np.linspace(0, v0, 801)
    axT = np.unique(np.concatenate((axis, [x for x in dT.breakpoints() if x <= v0])))
    axN = np.unique(np.concatenate((axis, [x for x in dNT.breakpoints() if x <= v0])))
    grid = analytic.value_social_pair(p, eta, chT, chNT, 1.0, axT[:, None], axN[None, :])
    assert v <= grid.min() + 1e-9
    assert v >= grid.min() - 2e-3


@settings(max_examples=10, deadline=None)
@given(eI=st.floats(0.5, 2), eT=st.floats(0, 2), eNT=st.floats(0, 2), eS=st.floats(0, 2),
       dT=dists(1.0), dNT=dists(1.0), rT=RULES, rNT=RULES, M=st.integers(1, 12))
def test_dichotomy_matches_naive(eI, eT, eNT, eS, dT, dNT, rT, rNT, M):
    eta, chT, chNT = IntensityProfile(eI, eT, eNT, eS), Channel(dT, rT), Channel(dNT, rNT)
    a = solver.solve_social_population(SocialPopulation(1, M), eta, chT, chNT)
    b = solver.solve_social_population(SocialPopulation(1, M), eta, chT, chNT, schedule="naive")
    assert a.policy.values == pytest.approx(b.policy.values, abs=1e-9)
    assert a.policy.bid_T == pytest.approx(b.policy.bid_T, abs=1e-6)
    assert a.policy.bid_NT == pytest.approx(b.policy.bid_NT, abs=1e-6)
    a.policy.check_bounds(1.0, eta)
    for k in range(M):
        assert a.policy.bid_T[k] <= a.policy.values[k] + 1e-12
        assert a.policy.bid_NT[k] <= a.policy.values[k] + 1e-12
    assert np.all(np.diff(a.policy.bid_NT) <= 1e-12)


def test_value_at_p_vectorized_and_scalar_agree():
    eta = IntensityProfile(0.7, 1, 0.5, 1.2)
    chT, chNT = Channel(Uniform(0, 1), FIRST_PRICE), Channel(Discrete((0.1, 0.5), (0.6, 0.4)))
    p = np.linspace(0, 0.95, 11)
    vec = solver.value_at_p(p, eta, chT, chNT, 1.0)
    assert vec == pytest.approx([solver.value_at_p(float(x), eta, chT, chNT, 1.0) for x in p], rel=1e-12)


def test_population_validation():
    with pytest.raises(solver.SolverError):
        solver.solve_social_population(SocialPopulation(1, 2), IntensityProfile(0, 1), Channel(Constant(0.1)))
    with pytest.raises(ValueError):
        solver.solve_social_population(SocialPopulation(1, 2), IntensityProfile(1, 0, 1), Channel(Constant(0.1)))
    with pytest.raises(ValueError):
        solver.solve_social_population(SocialPopulation(1, 2), IntensityProfile(1), Channel(Constant(0.1)),
                                       schedule="random")
