"""Event-driven Monte Carlo of the Poisson information dynamics.

Paths are simulated in fixed-size blocks, vectorized over the paths of a
block. Block ``j`` draws from its own Philox stream keyed by ``(seed, j)``,
so an estimate depends only on the seed, the block size and the inputs,
never on how many worker threads ran the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, TextIO

import numpy as np

from .model import (
    FIRST_PRICE,
    Channel,
    IntensityProfile,
    PolicyTable,
    Purchase,
    SimEstimate,
    SocialDiscount,
    SocialPopulation,
    Subscription,
)

# exp(-40) ~ 4e-18: discounted contributions past this horizon are below
# double precision relative to the first unit of gain
DISCOUNT_HORIZON = 40.0

KINDS = ("info-site", "targeted-view", "nontargeted-view", "danger", "social")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    paths: int
    seed: int = 0
    max_events_per_path: int = 10**7
    workers: int = 1
    block_size: int = 8192

    def __post_init__(self):
        for name in ("paths", "max_events_per_path", "workers", "block_size"):
            val = getattr(self, name)
            if isinstance(val, bool) or int(val) != val or int(val) < 1:
                raise ValueError(f"{name}: must be a positive integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        seed = self.seed
        if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed: must be an unsigned 64-bit integer, got {seed!r}")
        object.__setattr__(self, "seed", int(seed))


@dataclass(frozen=True)
class Event:
    path: int
    time: float
    kind: str
    individual: int
    won: bool
    payment: float


class EventLog:
    """Collects per-event records; rows are ordered by path then time."""

    def __init__(self):
        self._chunks: list[tuple] = []

    def _add(self, path, time, kind: str, individual, won, payment):
        n = len(path)
        if n:
            self._chunks.append((np.asarray(path), np.asarray(time), np.full(n, KINDS.index(kind)),
                                 np.broadcast_to(individual, (n,)).copy(),
                                 np.broadcast_to(won, (n,)).copy(),
                                 np.broadcast_to(payment, (n,)).astype(float)))

    def events(self) -> list[Event]:
        if not self._chunks:
            return []
        cols = [np.concatenate([c[i] for c in self._chunks]) for i in range(6)]
        order = np.lexsort((cols[1], cols[0]))
        return [Event(int(cols[0][i]), float(cols[1][i]), KINDS[cols[2][i]], int(cols[3][i]),
                      bool(cols[4][i]), float(cols[5][i])) for i in order]

    def write(self, fh: TextIO) -> None:
        fh.write("path\ttime\tkind\tindividual\twon\tpayment\n")
        for ev in self.events():
            fh.write(f"{ev.path}\t{ev.time!r}\t{ev.kind}\t{ev.individual}\t"
                     f"{int(ev.won)}\t{ev.payment!r}\n")

    def __len__(self) -> int:
        return sum(len(c[0]) for c in self._chunks)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _run_blocks(cfg: SimConfig, block_fn: Callable[[np.random.Generator, int, int], np.ndarray]) -> np.ndarray:
    sizes = []
    remaining = cfg.paths
    while remaining > 0:
        sizes.append(min(cfg.block_size, remaining))
        remaining -= sizes[-1]
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))

    def run(j: int) -> np.ndarray:
        return block_fn(_block_rng(cfg.seed, j), int(sizes[j]), int(offsets[j]))

    if cfg.workers == 1 or len(sizes) == 1:
        parts = [run(j) for j in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    return np.concatenate(parts)


def _payment(ch: Channel, bid, B):
    return np.broadcast_to(bid, np.shape(B)).astype(float) if ch.rule is FIRST_PRICE else B


# --------------------------------------------------------------------------
# single individual


def simulate_individual(spec, eta: IntensityProfile, ch: Channel, bid: float, cfg: SimConfig,
                        accrual: bool = False, log: Optional[EventLog] = None) -> SimEstimate:
    """Estimate the gain (purchase, subscription) or cost (social discount) of
    a constant bid.

    Social danger events are simulated literally at rate 1 by default;
    ``accrual=True`` replaces them with the exact discounted integral of the
    danger cost up to the information time.
    """
    if bid < 0 or not math.isfinite(bid):
        raise ValueError(f"bid must be >= 0, got {bid!r}")
    if isinstance(spec, (Purchase, Subscription)):
        social = False
        reward = spec.K_eff if isinstance(spec, Subscription) else spec.K
    elif isinstance(spec, SocialDiscount):
        social = True
        reward = spec.K
    else:
        raise TypeError(f"unsupported model {spec!r}")
    rho = spec.rho
    rate_I, rate_T = eta.eta_I, eta.eta_T
    rate_D = 1.0 if social and not accrual else 0.0
    total = rate_I + rate_T + rate_D
    from .analytic import win_prob
    informable = rate_I > 0 or (rate_T > 0 and win_prob(ch.dist, bid) > 0)
    if social and rho == 0 and not informable:
        raise SimulationError("individual is never informed and costs are undiscounted")
    horizon = DISCOUNT_HORIZON / rho if rho > 0 else math.inf

    def block(rng: np.random.Generator, n: int, offset: int) -> np.ndarray:
        out = np.zeros(n)
        if total == 0:
            return out
        t = np.zeros(n)
        events = 0
        active = np.arange(n)
        while active.size:
            events += 1
            if events > cfg.max_events_per_path:
                raise SimulationError(f"more than {cfg.max_events_per_path} events on a path")
            na = active.size
            t_a = t[active] + rng.exponential(1.0 / total, na)
            t[active] = t_a
            u = rng.random(na) * total
            disc = np.exp(-rho * t_a)
            is_I = u < rate_I
            is_T = ~is_I & (u < rate_I + rate_T)
            is_D = ~(is_I | is_T)
            informed = is_I.copy()
            ti = np.flatnonzero(is_T)
            B = ch.dist.sample(rng, ti.size)
            won = bid >= B
            pay = np.where(won, _payment(ch, bid, B), 0.0)
            if social:
                out[active[ti]] += pay * disc[ti]
                out[active[is_D]] += reward * disc[is_D]
            else:
                out[active[ti]] -= pay * disc[ti]
            informed[ti] = won
            if log is not None:
                paths = active + offset
                log._add(paths[is_I], t_a[is_I], "info-site", 0, False, 0.0)
                log._add(paths[ti], t_a[ti], "targeted-view", 0, won, pay)
                log._add(paths[is_D], t_a[is_D], "danger", 0, False, 0.0)
            done_idx = active[informed]
            if social:
                if accrual:
                    tau = t[done_idx]
                    out[done_idx] += (reward * -np.expm1(-rho * tau) / rho) if rho > 0 else reward * tau
            else:
                out[done_idx] += reward * np.exp(-rho * t[done_idx])
            keep = ~informed & (t_a <= horizon)
            if social and accrual and rho > 0:
                # paths cut at the horizon still owe the danger cost so far
                cut = active[~informed & ~keep]
                out[cut] += reward * -np.expm1(-rho * t[cut]) / rho
            active = active[keep]
        return out

    samples = _run_blocks(cfg, block)
    return SimEstimate.from_samples(samples)


def estimate_value_curve(spec, eta: IntensityProfile, ch: Channel, bids: Sequence[float],
                         cfg: SimConfig, accrual: bool = False) -> list[SimEstimate]:
    """One estimate per bid, all from the same seed (common random numbers)."""
    if len(bids) == 0:
        raise ValueError("bids must be nonempty")
    return [simulate_individual(spec, eta, ch, float(b), cfg, accrual=accrual) for b in bids]


# --------------------------------------------------------------------------
# population


def _nth_uninformed(flags: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Column of the r-th (0-based) uninformed individual in each row."""
    rank = np.cumsum(~flags, axis=1)
    return np.argmax(rank > r[:, None], axis=1)


def simulate_population(spec: SocialPopulation, eta: IntensityProfile, chT: Channel,
                        chNT: Optional[Channel], policy: PolicyTable, cfg: SimConfig,
                        literal_danger: bool = False,
                        log: Optional[EventLog] = None) -> SimEstimate:
    """Estimate the total undiscounted cost of a proportion-based policy.

    Each informed individual informs each uninformed one at rate eta_S/M.
    Danger cost accrues continuously at rate K per uninformed individual;
    ``literal_danger=True`` simulates the unit-rate danger jumps instead.
    """
    if policy.M != spec.M:
        raise ValueError(f"policy has M={policy.M}, model has M={spec.M}")
    if eta.eta_NT > 0 and chNT is None:
        raise ValueError("eta_NT > 0 requires a non-targeted channel")
    M, K = spec.M, spec.K
    bid_T = np.asarray(policy.bid_T)
    bid_NT = np.asarray(policy.bid_NT)
    from .analytic import win_prob
    stuck = [k for k in range(M)
             if eta.eta_I == 0 and k * eta.eta_S == 0
             and (eta.eta_T == 0 or win_prob(chT.dist, float(bid_T[k])) == 0)
             and (eta.eta_NT == 0 or win_prob(chNT.dist, float(bid_NT[k])) == 0)]
    if stuck:
        # states are visited in order, so the first stuck one is reached
        raise SimulationError(f"no informing event possible with {stuck[0]} informed")

    def block(rng: np.random.Generator, n: int, offset: int) -> np.ndarray:
        flags = np.zeros((n, M), dtype=bool)
        k = np.zeros(n, dtype=np.int64)
        t = np.zeros(n)
        cost = np.zeros(n)
        events = 0
        active = np.arange(n)
        while active.size:
            events += 1
            if events > cfg.max_events_per_path:
                raise SimulationError(f"more than {cfg.max_events_per_path} events on a path")
            na = active.size
            kk = k[active]
            unin = (M - kk).astype(float)
            r_I = unin * eta.eta_I
            r_S = unin * kk * eta.eta_S / M
            r_T = unin * eta.eta_T
            r_NT = np.full(na, M * eta.eta_NT)
            r_D = unin if literal_danger else np.zeros(na)
            cum = np.cumsum(np.stack((r_I, r_S, r_T, r_NT, r_D)), axis=0)
            total = cum[-1]
            if np.any(total <= 0):
                raise SimulationError("no event possible: absorption unreachable")
            dt = rng.exponential(1.0, na) / total
            t_a = t[active] + dt
            t[active] = t_a
            if not literal_danger:
                cost[active] += K * unin * dt
            u = rng.random(na) * total
            cat = (u[None, :] >= cum[:-1]).sum(axis=0)
            pick = rng.random(na)
            rows = active
            # individual targeted by the event
            r_unin = np.minimum((pick * unin).astype(np.int64), (M - kk) - 1)
            who = _nth_uninformed(flags[rows], r_unin)
            nt = cat == 3
            who[nt] = np.minimum((pick[nt] * M).astype(np.int64), M - 1)
            newly = (cat == 0) | (cat == 1)
            # targeted auctions
            ti = np.flatnonzero(cat == 2)
            B = chT.dist.sample(rng, ti.size)
            bT = bid_T[kk[ti]]
            won_T = bT >= B
            pay_T = np.where(won_T, _payment(chT, bT, B), 0.0)
            cost[rows[ti]] += pay_T
            newly[ti] = won_T
            # non-targeted auctions, paid even when the viewer already knows
            ni = np.flatnonzero(nt)
            won_NT = np.zeros(ni.size, dtype=bool)
            pay_NT = np.zeros(ni.size)
            if ni.size:
                B = chNT.dist.sample(rng, ni.size)
                bN = bid_NT[kk[ni]]
                won_NT = bN >= B
                pay_NT = np.where(won_NT, _payment(chNT, bN, B), 0.0)
                cost[rows[ni]] += pay_NT
                newly[ni] = won_NT & ~flags[rows[ni], who[ni]]
            di = cat == 4
            cost[rows[di]] += K
            if log is not None:
                paths = rows + offset
                for c, kind in ((0, "info-site"), (1, "social"), (4, "danger")):
                    sel = cat == c
                    ind = who[sel] if c != 4 else -1
                    log._add(paths[sel], t_a[sel], kind, ind, False, 0.0)
                log._add(paths[ti], t_a[ti], "targeted-view", who[ti], won_T, pay_T)
                log._add(paths[ni], t_a[ni], "nontargeted-view", who[ni], won_NT, pay_NT)
            flags[rows[newly], who[newly]] = True
            k[rows[newly]] += 1
            active = active[k[active] < M]
        return cost

    samples = _run_blocks(cfg, block)
    return SimEstimate.from_samples(samples)
