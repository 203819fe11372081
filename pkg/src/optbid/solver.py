"""Optimal-bid search for the four advertising models.

Every model reduces to minimizing a ratio

    cost(b) = (A + sum_j alpha_j E[c_j 1_j]) / (lam0 + sum_j gamma_j P_j)

over one bid per auction channel. For a candidate value ``v`` the best bids
solve a static problem per channel (:func:`smallest_argopt`), and evaluating
the ratio at those bids gives ``Phi(v)``. Iterating ``Phi`` from any upper
bound decreases monotonically to the optimal cost, so it serves both as the
second-price fixed point and as an exact polish after grid search.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import analytic
from .model import (
    FIRST_PRICE,
    SECOND_PRICE,
    Channel,
    Constant,
    Discrete,
    IntensityProfile,
    PolicyTable,
    Purchase,
    SocialDiscount,
    SocialPopulation,
    Subscription,
    Uniform,
)

TIE_TOL = 1e-12
FP_TOL = 1e-12
FP_MAX_ITER = 10_000
GRID_NODES = 1000
REFINE_FACTOR = 10
REFINE_ROUNDS = 2
LATTICE_DIVISIONS = 100


class SolverError(RuntimeError):
    pass


class SolveMethod(enum.Enum):
    GRID_REFINE = "GridRefine"
    CLOSED_FORM = "ClosedForm"
    FIXED_POINT = "FixedPoint"
    DICHOTOMY = "Dichotomy"


@dataclass(frozen=True)
class SolveReport:
    optimal_value: float
    evaluations: int
    method: SolveMethod
    bid_min: Optional[float] = None
    policy: Optional[PolicyTable] = None
    interval: Optional[tuple[float, float]] = None


# --------------------------------------------------------------------------
# static per-channel problem


def smallest_argopt(channel: Channel, target):
    """Smallest maximizer of ``b -> E[(target - c(b, B)) 1{b >= B}]``.

    Vectorized over ``target``. Nonpositive targets give 0.
    """
    scalar = np.ndim(target) == 0
    t = np.atleast_1d(np.asarray(target, dtype=float))
    dist = channel.dist
    first = channel.rule is FIRST_PRICE
    out = np.zeros_like(t)
    if isinstance(dist, Constant):
        a = dist.value
        out = np.where(a < t, a, 0.0)
    elif isinstance(dist, Uniform):
        lo, hi = dist.lower, dist.upper
        best = (t + lo) / 2.0 if first else t
        out = np.where(t > lo, np.minimum(best, hi), 0.0)
    elif isinstance(dist, Discrete):
        atoms = np.asarray(dist.atoms)
        if not first:
            # the largest atom strictly below the target: adding it to the
            # truncation raises the objective, anything at or above does not
            idx = np.searchsorted(atoms, t, side="left") - 1
            out = np.where(idx >= 0, atoms[np.maximum(idx, 0)], 0.0)
        else:
            cdf = np.asarray(dist._cum)
            gain = (t[:, None] - atoms[None, :]) * cdf[None, :]
            best = gain.max(axis=1)
            ok = gain >= (best - TIE_TOL * np.maximum(1.0, np.abs(best)))[:, None]
            idx = np.argmax(ok, axis=1)
            out = np.where(best > 0, atoms[idx], 0.0)
    else:
        raise TypeError(f"unsupported distribution {dist!r}")
    # a bid that gains no more than bidding zero (within tolerance) is not smallest
    gain = _static_gain(channel, t, out) - _static_gain(channel, t, 0.0)
    out = np.where((t > 0) & (gain > TIE_TOL * np.maximum(1.0, np.abs(t))), out, 0.0)
    return float(out[0]) if scalar else out


def _static_gain(channel: Channel, t, b):
    return t * analytic.win_prob(channel.dist, b) - analytic.expected_payment(channel, b)


# --------------------------------------------------------------------------
# cost-ratio engine shared by every model


def _pair_bids(v, p, eta: IntensityProfile, chT: Channel, chNT: Optional[Channel]):
    v = np.asarray(v, dtype=float)
    bT = smallest_argopt(chT, v) if eta.eta_T > 0 else np.zeros_like(v)
    if eta.eta_NT > 0:
        bNT = smallest_argopt(chNT, (1.0 - p) * v)
    else:
        bNT = np.zeros_like(v)
    return bT, bNT


def _pair_cost(p, eta, chT, chNT, K, bT, bNT):
    return analytic.value_social_pair(p, eta, chT, chNT, K, bT, bNT)


def _iterate(p, eta: IntensityProfile, chT: Channel, chNT: Optional[Channel], K: float,
             v0: np.ndarray, tol: float = FP_TOL, max_iter: int = FP_MAX_ITER):
    """Iterate Phi elementwise from ``v0``; returns (v, iterations, converged mask)."""
    p = np.broadcast_to(np.asarray(p, dtype=float), np.shape(v0)).copy()
    v = np.array(v0, dtype=float)
    active = np.ones(v.shape, dtype=bool)
    iterations = 0
    while active.any() and iterations < max_iter:
        iterations += 1
        pa, va = p[active], v[active]
        bT, bNT = _pair_bids(va, pa, eta, chT, chNT)
        new = _pair_cost(pa, eta, chT, chNT, K, bT, bNT)
        # Phi never increases from an upper bound; guard against rounding
        new = np.minimum(new, va)
        done = np.abs(new - va) <= tol * np.maximum(1.0, va)
        v[active] = new
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return v, iterations, ~active


def _upper_bound(p, eta: IntensityProfile, K: float):
    base = eta.eta_I + np.asarray(p, dtype=float) * eta.eta_S
    if np.any(base <= 0):
        raise SolverError("no-advertising cost is unbounded: eta_I + p eta_S must be > 0")
    return K / base


def _lattice(lo: float, hi: float, step: float, specials: Sequence[float]) -> np.ndarray:
    n = int(math.floor(hi / step + 1e-9)) - int(math.ceil(lo / step - 1e-9)) + 1
    start = math.ceil(lo / step - 1e-9) * step
    nodes = start + step * np.arange(max(n, 0))
    extra = [x for x in specials if lo <= x <= hi]
    nodes = np.concatenate((nodes, [lo, hi], extra))
    return np.unique(np.clip(nodes, lo, hi))


def _breakpoints(ch: Optional[Channel]) -> tuple[float, ...]:
    return () if ch is None else tuple(ch.dist.breakpoints())


def _grid_min(cost_fn, boxes, specials, step):
    """Grid search with two local 10x refinements over a product of boxes.

    ``cost_fn`` takes one broadcastable array per dimension. Returns
    (best point, best cost, evaluations). Ties go to the lexicographically
    smallest point.
    """
    evaluations = 0
    best_x = None
    best_c = math.inf
    windows = list(boxes)
    for round_ in range(REFINE_ROUNDS + 1):
        axes = [_lattice(lo, hi, step, sp) for (lo, hi), sp in zip(windows, specials)]
        mesh = np.meshgrid(*axes, indexing="ij")
        costs = np.asarray(cost_fn(*mesh), dtype=float)
        evaluations += costs.size
        c_min = float(costs.min())
        flat = costs.ravel()
        hit = np.flatnonzero(flat <= c_min + TIE_TOL * max(1.0, abs(c_min)))[0]
        pos = np.unravel_index(hit, costs.shape)
        x = tuple(float(ax[i]) for ax, i in zip(axes, pos))
        if best_x is None or c_min < best_c - TIE_TOL * max(1.0, abs(best_c)) or (
                abs(c_min - best_c) <= TIE_TOL * max(1.0, abs(best_c)) and x < best_x):
            best_x, best_c = x, c_min
        step /= REFINE_FACTOR
        windows = [(max(lo, xi - REFINE_FACTOR * step), min(hi, xi + REFINE_FACTOR * step))
                   for (lo, hi), xi in zip(boxes, best_x)]
    return best_x, best_c, evaluations


# --------------------------------------------------------------------------
# single individual


def _single_cost_terms(A: float, lam0: float, eta: IntensityProfile):
    # a single individual is the population pair problem at p = 0 with no
    # non-targeted channel and lam0 in place of eta_I
    return IntensityProfile(eta_I=lam0, eta_T=eta.eta_T), A


def _minimize_single(A: float, lam0: float, eta: IntensityProfile, ch: Channel):
    """Minimize (A + eta_T E[c 1]) / (lam0 + eta_T P) over [0, A/lam0].

    Returns (bid_min, min cost, evaluations, method).
    """
    reduced, K = _single_cost_terms(A, lam0, eta)
    bound = A / lam0
    if eta.eta_T == 0:
        return 0.0, bound, 1, SolveMethod.CLOSED_FORM
    if isinstance(ch.dist, Constant):
        B = ch.dist.value
        c0 = _pair_cost(0.0, reduced, ch, None, K, 0.0, 0.0)
        cB = _pair_cost(0.0, reduced, ch, None, K, B, 0.0)
        bid = B if cB < c0 else 0.0
        return bid, min(c0, cB), 2, SolveMethod.CLOSED_FORM
    if ch.rule is SECOND_PRICE:
        v, it, ok = _iterate(0.0, reduced, ch, None, K, np.array([bound]))
        evaluations, method, v_star = it, SolveMethod.FIXED_POINT, float(v[0])
        if not ok[0]:
            v_star, evals = _grid_single(reduced, ch, K, bound)
            evaluations += evals
            method = SolveMethod.GRID_REFINE
    else:
        v_seed, evaluations = _grid_single(reduced, ch, K, bound)
        v, it, _ = _iterate(0.0, reduced, ch, None, K, np.array([v_seed]))
        evaluations += it
        v_star, method = float(v[0]), SolveMethod.GRID_REFINE
    bid = float(smallest_argopt(ch, v_star))
    return bid, v_star, evaluations, method


def _grid_single(reduced, ch, K, bound):
    cost = lambda b: _pair_cost(0.0, reduced, ch, None, K, b, 0.0)  # noqa: E731
    step = bound / GRID_NODES
    _, c, evals = _grid_min(cost, [(0.0, bound)], [_breakpoints(ch)], step)
    return c, evals


def solve_purchase(spec: Purchase, eta: IntensityProfile, ch: Channel) -> SolveReport:
    """Maximize the purchase gain over constant bids in [0, rho K/(eta_I + rho)]."""
    lam0 = eta.eta_I + spec.rho
    A = spec.rho * spec.K
    interval = (0.0, A / lam0)
    if (eta.eta_T > 0 and isinstance(ch.dist, Uniform) and ch.rule is FIRST_PRICE):
        cf = analytic.uniform_firstprice_bid(spec, eta, ch.dist)
        bid = cf.b_star if cf.b_star > ch.dist.lower else 0.0
        evaluations, method = 1, SolveMethod.CLOSED_FORM
    else:
        bid, _, evaluations, method = _minimize_single(A, lam0, eta, ch)
    value = analytic.value_purchase(spec, eta, ch, bid)
    return SolveReport(value, evaluations, method, bid_min=bid, interval=interval)


def solve_subscription(spec: Subscription, eta: IntensityProfile, ch: Channel) -> SolveReport:
    return solve_purchase(Purchase(spec.K_eff, spec.rho), eta, ch)


def solve_social_discount(spec: SocialDiscount, eta: IntensityProfile, ch: Channel) -> SolveReport:
    """Minimize the discounted social cost over constant bids in [0, K/(eta_I + rho)]."""
    lam0 = eta.eta_I + spec.rho
    if lam0 <= 0:
        raise SolverError("eta_I + rho must be > 0")
    bid, _, evaluations, method = _minimize_single(spec.K, lam0, eta, ch)
    value = analytic.value_social_discount(spec, eta, ch, bid)
    return SolveReport(value, evaluations, method, bid_min=bid, interval=(0.0, spec.K / lam0))


# --------------------------------------------------------------------------
# population


def _fully_second_price(eta: IntensityProfile, chT: Channel, chNT: Optional[Channel]) -> bool:
    t_ok = eta.eta_T == 0 or chT.rule is SECOND_PRICE
    nt_ok = eta.eta_NT == 0 or (chNT is not None and chNT.rule is SECOND_PRICE)
    return t_ok and nt_ok


def _check_nt(eta: IntensityProfile, chNT: Optional[Channel]) -> None:
    if eta.eta_NT > 0 and chNT is None:
        raise ValueError("eta_NT > 0 requires a non-targeted channel")


def _pair_grid(p: float, eta, chT, chNT, K, boxes=None):
    """Grid-seeded value of one proportion row; returns (seed value, evaluations)."""
    v0 = float(_upper_bound(p, eta, K))
    step = (K / eta.eta_I) / LATTICE_DIVISIONS
    legs = []
    if eta.eta_T > 0:
        legs.append(("T", _breakpoints(chT)))
    if eta.eta_NT > 0:
        legs.append(("NT", _breakpoints(chNT)))
    if not legs:
        return v0, 1
    if boxes is None:
        boxes = {name: (0.0, v0) for name, _ in legs}

    def cost(*xs):
        bids = dict(zip([name for name, _ in legs], xs))
        return _pair_cost(p, eta, chT, chNT, K, bids.get("T", 0.0), bids.get("NT", 0.0))

    _, c, evals = _grid_min(cost, [boxes[name] for name, _ in legs],
                            [sp for _, sp in legs], step)
    return min(c, v0), evals


def _solve_row(p: float, eta, chT, chNT, K, fully_sp: bool, boxes=None):
    """Exact v(p) and smallest bids. Returns (v, bT, bNT, evaluations)."""
    v0 = float(_upper_bound(p, eta, K))
    evaluations = 0
    if fully_sp:
        seed = v0
    else:
        seed, evaluations = _pair_grid(p, eta, chT, chNT, K, boxes)
    v, it, ok = _iterate(p, eta, chT, chNT, K, np.array([seed]))
    evaluations += it
    if not ok[0]:
        seed, evals = _pair_grid(p, eta, chT, chNT, K)
        evaluations += evals
        v = np.array([seed])
    bT, bNT = _pair_bids(v, p, eta, chT, chNT)
    bT, bNT = float(bT[0]), float(bNT[0])
    value = float(_pair_cost(p, eta, chT, chNT, K, bT, bNT))
    if not math.isfinite(value):
        raise SolverError(f"row p={p!r}: non-finite value")
    return value, bT, bNT, evaluations


def second_price_fixed_point(p: float, eta: IntensityProfile, chT: Channel,
                             chNT: Optional[Channel], K: float) -> float:
    """v(p) for fully second-price auctions, by iterating Phi from K/(eta_I + p eta_S)."""
    if not 0 <= p < 1:
        raise ValueError(f"proportion must lie in [0, 1), got {p!r}")
    _check_nt(eta, chNT)
    if not _fully_second_price(eta, chT, chNT):
        raise ValueError("second_price_fixed_point requires second-price channels")
    v0 = float(_upper_bound(p, eta, K))
    v, _, ok = _iterate(p, eta, chT, chNT, K, np.array([v0]))
    if ok[0]:
        return float(v[0])
    seed, _ = _pair_grid(p, eta, chT, chNT, K)
    if not math.isfinite(seed):
        raise SolverError(f"fallback exhausted at p={p!r}")
    return seed


def value_at_p(p, eta: IntensityProfile, chT: Channel, chNT: Optional[Channel], K: float):
    """Optimal pair cost v(p), vectorized over ``p``, for any auction rules."""
    _check_nt(eta, chNT)
    scalar = np.ndim(p) == 0
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any(p_arr < 0) or np.any(p_arr >= 1):
        raise ValueError("proportions must lie in [0, 1)")
    v, _, ok = _iterate(p_arr, eta, chT, chNT, K, _upper_bound(p_arr, eta, K))
    for i in np.flatnonzero(~ok):
        v[i], _ = _pair_grid(float(p_arr[i]), eta, chT, chNT, K)
    return float(v[0]) if scalar else v


def _dichotomy_order(M: int) -> list[tuple[int, int, int]]:
    """Rows in midpoint-first order with their nearest computed neighbours."""
    order: list[tuple[int, int, int]] = []
    stack = [(0, M - 1)]
    while stack:
        a, b = stack.pop()
        if a > b:
            continue
        m = (a + b) // 2
        order.append((m, a - 1, b + 1))
        stack.append((m + 1, b))
        stack.append((a, m - 1))
    return order


def _boxes(k: int, left: int, right: int, M: int, v0: float, eta, bT, bNT):
    def clip(lo, hi):
        lo, hi = max(0.0, lo), min(v0, hi)
        return (lo, hi) if lo <= hi else (0.0, v0)

    lo, hi = 0.0, v0
    if left >= 0:
        hi = bNT[left]
    if right < M:
        lo = bNT[right]
    boxes = {"NT": clip(lo, hi)}
    lo, hi = 0.0, v0
    if eta.eta_NT == 0:
        if left >= 0:
            hi = bT[left]
        if right < M:
            lo = bT[right]
    elif eta.eta_S == 0:
        if left >= 0:
            lo = bT[left]
        if right < M:
            hi = bT[right]
    boxes["T"] = clip(lo, hi)
    return boxes


def solve_social_population(spec: SocialPopulation, eta: IntensityProfile, chT: Channel,
                            chNT: Optional[Channel] = None,
                            schedule: str = "dichotomy") -> SolveReport:
    """Optimal proportion-based policy and minimal total cost.

    ``schedule="dichotomy"`` solves the middle row first and narrows each
    later search box with the monotonicity of the smallest optimal bids;
    ``"naive"`` searches every row over the full box.
    """
    if schedule not in ("dichotomy", "naive"):
        raise ValueError(f"unknown schedule {schedule!r}")
    if eta.eta_I <= 0:
        raise SolverError("population model requires eta_I > 0")
    _check_nt(eta, chNT)
    M, K = spec.M, spec.K
    fully_sp = _fully_second_price(eta, chT, chNT)
    bT = [0.0] * M
    bNT = [0.0] * M
    vals = [0.0] * M
    evaluations = 0
    if schedule == "naive":
        order = [(k, -1, M) for k in range(M)]
    else:
        order = _dichotomy_order(M)
    for k, left, right in order:
        p = k / M
        boxes = None
        if schedule == "dichotomy" and not fully_sp:
            v0 = float(_upper_bound(p, eta, K))
            boxes = _boxes(k, left, right, M, v0, eta, bT, bNT)
        try:
            vals[k], bT[k], bNT[k], ev = _solve_row(p, eta, chT, chNT, K, fully_sp, boxes)
        except (ValueError, ZeroDivisionError) as exc:
            raise SolverError(f"row p={p!r}: {exc}") from exc
        evaluations += ev
    policy = PolicyTable(M, tuple(bT), tuple(bNT), tuple(vals))
    if fully_sp:
        method = SolveMethod.FIXED_POINT
    elif schedule == "dichotomy":
        method = SolveMethod.DICHOTOMY
    else:
        method = SolveMethod.GRID_REFINE
    return SolveReport(policy.total, evaluations, method, policy=policy)
