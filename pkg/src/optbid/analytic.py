"""Closed-form value functions, thresholds and optimal bids.

All functionals of the competitor bid law are exact (no sampling). Functions
taking a bid accept either a float or a numpy array and broadcast; a float
in gives a float out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import (
    FIRST_PRICE,
    BidDistribution,
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

ArrayLike = "float | np.ndarray"


def _ret(x, scalar: bool):
    return float(x) if scalar else x


def _check_bid(b) -> tuple[np.ndarray, bool]:
    scalar = np.ndim(b) == 0
    arr = np.asarray(b, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError(f"bid must be >= 0, got {b!r}")
    return arr, scalar


def _discrete_tables(dist: Discrete) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    atoms = np.asarray(dist.atoms)
    w = np.asarray(dist.weights)
    cdf = np.concatenate(([0.0], dist._cum))
    moment = np.concatenate(([0.0], np.cumsum(atoms * w)))
    return atoms, cdf, moment


def win_prob(dist: BidDistribution, b):
    """P[B <= b]: the agent wins ties."""
    arr, scalar = _check_bid(b)
    if isinstance(dist, Constant):
        out = (arr >= dist.value).astype(float)
    elif isinstance(dist, Uniform):
        out = np.clip((arr - dist.lower) / (dist.upper - dist.lower), 0.0, 1.0)
    elif isinstance(dist, Discrete):
        atoms, cdf, _ = _discrete_tables(dist)
        out = cdf[np.searchsorted(atoms, arr, side="right")]
    else:
        raise TypeError(f"unsupported distribution {dist!r}")
    return _ret(out, scalar)


def truncated_mean(dist: BidDistribution, b):
    """E[B 1{B <= b}]."""
    arr, scalar = _check_bid(b)
    if isinstance(dist, Constant):
        out = np.where(arr >= dist.value, dist.value, 0.0)
    elif isinstance(dist, Uniform):
        lo, hi = dist.lower, dist.upper
        m = np.clip(arr, lo, hi)
        out = (m - lo) * (m + lo) / (2.0 * (hi - lo))
    elif isinstance(dist, Discrete):
        atoms, _, moment = _discrete_tables(dist)
        out = moment[np.searchsorted(atoms, arr, side="right")]
    else:
        raise TypeError(f"unsupported distribution {dist!r}")
    return _ret(out, scalar)


def expected_payment(channel: Channel, b):
    """E[c(b, B) 1{b >= B}] under the channel's payment rule."""
    arr, scalar = _check_bid(b)
    if channel.rule is FIRST_PRICE:
        out = arr * win_prob(channel.dist, arr)
    else:
        out = truncated_mean(channel.dist, arr)
    return _ret(out, scalar)


@dataclass(frozen=True)
class ChannelFunctionals:
    win_prob: float
    expected_payment: float


def functionals(channel: Channel, b: float) -> ChannelFunctionals:
    return ChannelFunctionals(win_prob(channel.dist, b), expected_payment(channel, b))


# --------------------------------------------------------------------------
# value of a constant bid


def _safe_div(num, den, what: str, scalar: bool):
    den = np.asarray(den, dtype=float)
    if np.any(den == 0):
        raise ZeroDivisionError(f"{what}: denominator vanishes")
    return _ret(num / den, scalar)


def value_purchase(spec: Purchase, eta: IntensityProfile, ch: Channel, b):
    """Expected discounted profit of bidding ``b`` until the individual buys."""
    arr, scalar = _check_bid(b)
    if spec.rho <= 0:
        raise ValueError("purchase model requires rho > 0")
    P = win_prob(ch.dist, arr)
    E = expected_payment(ch, arr)
    num = eta.eta_I * spec.K + eta.eta_T * (spec.K * P - E)
    den = eta.eta_I + spec.rho + eta.eta_T * P
    return _safe_div(num, den, "value_purchase", scalar)


def value_subscription(spec: Subscription, eta: IntensityProfile, ch: Channel, b):
    """Subscription fees K per unit period, collapsed to a lump sum at the
    time of information."""
    return value_purchase(Purchase(spec.K_eff, spec.rho), eta, ch, b)


def value_social_discount(spec: SocialDiscount, eta: IntensityProfile, ch: Channel, b):
    """Expected discounted cost (danger cost plus ad spend) of bidding ``b``."""
    arr, scalar = _check_bid(b)
    if eta.eta_I + spec.rho == 0:
        raise ZeroDivisionError("value_social_discount: eta_I + rho must be > 0")
    P = win_prob(ch.dist, arr)
    E = expected_payment(ch, arr)
    num = spec.K + eta.eta_T * E
    den = eta.eta_I + spec.rho + eta.eta_T * P
    return _safe_div(num, den, "value_social_discount", scalar)


def value_social_pair(p, eta: IntensityProfile, chT: Channel, chNT: Optional[Channel],
                      K: float, bT, bNT):
    """Cost of moving the informed proportion from ``p`` to ``p + 1/M`` with
    targeted bid ``bT`` and non-targeted bid ``bNT``.

    Non-targeted impressions land on an informed viewer with probability
    ``p``, so their expected spend is scaled by ``1/(1-p)``. ``p``, ``bT`` and
    ``bNT`` broadcast against each other.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr < 0) or np.any(p_arr >= 1):
        raise ValueError(f"proportion must lie in [0, 1), got {p!r}")
    bT_arr, s1 = _check_bid(bT)
    bNT_arr, s2 = _check_bid(bNT)
    scalar = s1 and s2 and np.ndim(p) == 0
    num = K + eta.eta_T * expected_payment(chT, bT_arr)
    den = eta.eta_I + eta.eta_T * win_prob(chT.dist, bT_arr) + p_arr * eta.eta_S
    if eta.eta_NT > 0:
        if chNT is None:
            raise ValueError("eta_NT > 0 requires a non-targeted channel")
        num = num + eta.eta_NT * expected_payment(chNT, bNT_arr) / (1.0 - p_arr)
        den = den + eta.eta_NT * win_prob(chNT.dist, bNT_arr)
    else:
        num = num + 0.0 * bNT_arr
        den = den + 0.0 * bNT_arr
    return _safe_div(num, den, "value_social_pair", scalar)


def value_population(K: float, eta: IntensityProfile, chT: Channel, chNT: Optional[Channel],
                     policy: PolicyTable) -> float:
    """Exact expected total cost of a proportion-based policy (sum over stages)."""
    p = np.arange(policy.M) / policy.M
    stage = value_social_pair(p, eta, chT, chNT, K, np.asarray(policy.bid_T),
                              np.asarray(policy.bid_NT))
    return math.fsum(np.atleast_1d(stage))


# --------------------------------------------------------------------------
# constant competitor bid


def dominant_bid_constant(K: float, rho: float, eta_I: float) -> float:
    """Bid that is optimal in the purchase model whatever the constant
    competitor bid is."""
    if rho < 0 or eta_I < 0:
        raise ValueError("rho and eta_I must be >= 0")
    if rho == 0:
        if eta_I == 0:
            raise ValueError("rho and eta_I cannot both vanish")
        return 0.0
    return rho * K / (eta_I + rho)


def threshold_constant_targeted(K: float, eta_I: float, eta_S: float, B_T: float) -> float:
    """Informed proportion below which the targeted ad is worth displaying.

    Returns +inf (resp. -inf) without social interactions when displaying is
    always (resp. never) worthwhile.
    """
    if B_T <= 0:
        raise ValueError("B_T must be > 0")
    excess = K / B_T - eta_I
    if eta_S == 0:
        return math.inf if excess >= 0 else -math.inf
    return excess / eta_S


def threshold_constant_nontargeted(K: float, eta_I: float, eta_S: float, B_NT: float) -> float:
    """Informed proportion below which non-targeted display is worthwhile
    (negative means never)."""
    if B_NT <= 0:
        raise ValueError("B_NT must be > 0")
    return (K - eta_I * B_NT) / (K + eta_S * B_NT)


# --------------------------------------------------------------------------
# mean-field limit


def meanfield_value(eta: IntensityProfile, chT: Channel, chNT: Optional[Channel], K: float,
                    quad_n: int, inner_solver: Optional[Callable] = None) -> float:
    """Midpoint-rule approximation of the integral of v(p) over [0, 1).

    ``inner_solver(p, eta, chT, chNT, K)`` must accept an array of
    proportions; it defaults to :func:`optbid.solver.value_at_p`.
    """
    if int(quad_n) != quad_n or quad_n < 2:
        raise ValueError(f"quad_n must be an integer >= 2, got {quad_n!r}")
    if inner_solver is None:
        from .solver import value_at_p as inner_solver
    n = int(quad_n)
    nodes = (np.arange(n) + 0.5) / n
    v = np.asarray(inner_solver(nodes, eta, chT, chNT, K), dtype=float)
    return float(np.mean(v))


def meanfield_closed_form_targeted(eta: IntensityProfile, K: float, B_T: float) -> float:
    """Exact integral of v(p) for targeted-only advertising against a
    constant competitor bid ``B_T``."""
    if eta.eta_S <= 0:
        raise ValueError("closed form requires eta_S > 0")
    if eta.eta_NT != 0:
        raise ValueError("closed form requires eta_NT = 0")
    if B_T <= 0:
        raise ValueError("B_T must be > 0")
    eI, eT, eS = eta.eta_I, eta.eta_T, eta.eta_S
    p_star = threshold_constant_targeted(K, eI, eS, B_T)
    with_ads = (K + eT * B_T) / eS
    if p_star >= 1:
        return with_ads * math.log((eI + eT + eS) / (eI + eT))
    if p_star >= 0:
        ratio = K / B_T
        return (with_ads * math.log((eT + ratio) / (eI + eT))
                - (K / eS) * math.log(ratio / (eI + eS)))
    # ads never pay off: integral of the no-ad cost
    return (K / eS) * math.log((eI + eS) / eI)


# --------------------------------------------------------------------------
# uniform competitor bid, first-price purchase model


@dataclass(frozen=True)
class UniformClosedForm:
    lambda1: float
    lambda2: float
    a0: float
    a1: float
    a2: float
    b_prime_star: float
    b_bar: float
    b_star: float


def uniform_firstprice_bid(spec: Purchase, eta: IntensityProfile, dist: Uniform) -> UniformClosedForm:
    """Optimal first-price bid against a uniform competitor bid on
    ``[lower, upper]``, via the change of variable b = lambda1 + lambda2 b'."""
    if eta.eta_T <= 0:
        raise ValueError("closed form requires eta_T > 0")
    lo, hi = dist.lower, dist.upper
    width = hi - lo
    base = eta.eta_I + spec.rho
    lam1 = lo - width * base / eta.eta_T
    lam2 = width / eta.eta_T
    a0 = lam1 * base - spec.K * spec.rho
    a1 = spec.K - lam1 + lam2 * base
    a2 = -lam2
    bp_lo, bp_hi = base, base + eta.eta_T
    bp_star = max(bp_lo, min(bp_hi, math.sqrt(max(a0 / a2, 0.0))))
    radicand = lam2 * (spec.K * spec.rho - lo * base + lam2 * base * base)
    b_bar = lam1 + math.sqrt(max(radicand, 0.0))
    b_star = max(lo, min(hi, b_bar))
    return UniformClosedForm(lam1, lam2, a0, a1, a2, bp_star, b_bar, b_star)
