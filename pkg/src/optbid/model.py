"""Domain types shared by the analytic, solver, simulation and CLI layers.

Every type is an immutable dataclass whose constructor validates its
invariants and raises :class:`ModelError` naming the offending field.
Nothing is ever clamped silently.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence, Union

import numpy as np

WEIGHT_TOL = 1e-12


class ModelError(ValueError):
    """Invariant violation while building a domain object."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _real(name: str, value: Any) -> float:
    if isinstance(value, bool):
        raise ModelError(name, f"expected a real number, got {value!r}")
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ModelError(name, f"expected a real number, got {value!r}") from None
    if not math.isfinite(out):
        raise ModelError(name, f"must be finite, got {value!r}")
    return out


def _nonneg(name: str, value: Any) -> float:
    out = _real(name, value)
    if out < 0:
        raise ModelError(name, f"must be >= 0, got {out!r}")
    return out


def _positive(name: str, value: Any) -> float:
    out = _real(name, value)
    if out <= 0:
        raise ModelError(name, f"must be > 0, got {out!r}")
    return out


# --------------------------------------------------------------------------
# competitor bid laws


@dataclass(frozen=True)
class Constant:
    """Competitors' maximal bid is the same value at every auction."""

    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", _nonneg("value", self.value))

    @property
    def support_min(self) -> float:
        return self.value

    @property
    def support_max(self) -> float:
        return self.value

    def breakpoints(self) -> tuple[float, ...]:
        return (self.value,)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, self.value)


@dataclass(frozen=True)
class Uniform:
    """Competitors' maximal bid is uniform on ``[lower, upper]``."""

    lower: float
    upper: float

    def __post_init__(self):
        lower = _nonneg("lower", self.lower)
        upper = _real("upper", self.upper)
        if not lower < upper:
            raise ModelError("upper", f"must exceed lower={lower!r}, got {upper!r}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def support_min(self) -> float:
        return self.lower

    @property
    def support_max(self) -> float:
        return self.upper

    def breakpoints(self) -> tuple[float, ...]:
        return (self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=n)


@dataclass(frozen=True)
class Discrete:
    """Finite law on strictly ascending ``atoms`` with positive ``weights``."""

    atoms: tuple[float, ...]
    weights: tuple[float, ...]
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        atoms = tuple(_nonneg(f"atoms[{i}]", a) for i, a in enumerate(self.atoms))
        weights = tuple(_positive(f"weights[{i}]", w) for i, w in enumerate(self.weights))
        if not atoms:
            raise ModelError("atoms", "must be non-empty")
        if len(atoms) != len(weights):
            raise ModelError("weights", f"expected {len(atoms)} entries, got {len(weights)}")
        for i in range(1, len(atoms)):
            if not atoms[i - 1] < atoms[i]:
                raise ModelError("atoms", f"must be strictly ascending (index {i})")
        total = math.fsum(weights)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ModelError("weights", f"must sum to 1 within {WEIGHT_TOL}, got {total!r}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        cum = np.cumsum(weights)
        cum[-1] = 1.0
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def from_samples(cls, samples: Iterable[float]) -> "Discrete":
        """Empirical law of ``samples``: each observation carries equal weight."""
        values = np.asarray(list(samples), dtype=float)
        if values.size == 0:
            raise ModelError("atoms", "cannot build a law from zero samples")
        atoms, counts = np.unique(values, return_counts=True)
        weights = counts / values.size
        # absorb the fsum residue into the heaviest atom
        weights[np.argmax(weights)] += 1.0 - math.fsum(weights)
        return cls(tuple(atoms.tolist()), tuple(weights.tolist()))

    @property
    def support_min(self) -> float:
        return self.atoms[0]

    @property
    def support_max(self) -> float:
        return self.atoms[-1]

    def breakpoints(self) -> tuple[float, ...]:
        return self.atoms

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = np.searchsorted(self._cum, rng.random(n), side="right")
        return np.asarray(self.atoms)[np.minimum(idx, len(self.atoms) - 1)]


BidDistribution = Union[Constant, Uniform, Discrete]


class AuctionRule(enum.Enum):
    FIRST_PRICE = "first_price"
    SECOND_PRICE = "second_price"

    @classmethod
    def parse(cls, value: Any) -> "AuctionRule":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "_").replace(" ", "_")
        aliases = {"firstprice": "first_price", "secondprice": "second_price",
                   "first": "first_price", "second": "second_price"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ModelError("rule", f"unknown auction rule {value!r}") from None


FIRST_PRICE = AuctionRule.FIRST_PRICE
SECOND_PRICE = AuctionRule.SECOND_PRICE


@dataclass(frozen=True)
class Channel:
    """One auction venue: the competitors' bid law and the payment rule."""

    dist: BidDistribution
    rule: AuctionRule = SECOND_PRICE

    def __post_init__(self):
        if not isinstance(self.dist, (Constant, Uniform, Discrete)):
            raise ModelError("dist", f"unsupported distribution {self.dist!r}")
        object.__setattr__(self, "rule", AuctionRule.parse(self.rule))


# --------------------------------------------------------------------------
# model parameters


@dataclass(frozen=True)
class IntensityProfile:
    """Poisson rates of the browsing processes; the danger rate is fixed to 1."""

    eta_I: float
    eta_T: float = 0.0
    eta_NT: float = 0.0
    eta_S: float = 0.0

    def __post_init__(self):
        for name in ("eta_I", "eta_T", "eta_NT", "eta_S"):
            object.__setattr__(self, name, _nonneg(name, getattr(self, name)))

    def replace(self, **changes: float) -> "IntensityProfile":
        data = {k: getattr(self, k) for k in ("eta_I", "eta_T", "eta_NT", "eta_S")}
        data.update(changes)
        return IntensityProfile(**data)


@dataclass(frozen=True)
class Purchase:
    K: float
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "K", _positive("K", self.K))
        object.__setattr__(self, "rho", _positive("rho", self.rho))


@dataclass(frozen=True)
class Subscription:
    K: float
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "K", _positive("K", self.K))
        object.__setattr__(self, "rho", _positive("rho", self.rho))

    @property
    def K_eff(self) -> float:
        """Lump sum equivalent to receiving K at the start of every unit period."""
        return self.K / -math.expm1(-self.rho)


@dataclass(frozen=True)
class SocialDiscount:
    K: float
    rho: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "K", _positive("K", self.K))
        object.__setattr__(self, "rho", _nonneg("rho", self.rho))


@dataclass(frozen=True)
class SocialPopulation:
    K: float
    M: int

    def __post_init__(self):
        object.__setattr__(self, "K", _positive("K", self.K))
        if isinstance(self.M, bool) or int(self.M) != self.M or int(self.M) < 1:
            raise ModelError("M", f"must be a positive integer, got {self.M!r}")
        object.__setattr__(self, "M", int(self.M))


ModelSpec = Union[Purchase, Subscription, SocialDiscount, SocialPopulation]


@dataclass(frozen=True)
class PolicyTable:
    """Proportion-indexed bids on the grid ``{0, 1/M, ..., (M-1)/M}``."""

    M: int
    bid_T: tuple[float, ...]
    bid_NT: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if isinstance(self.M, bool) or int(self.M) != self.M or int(self.M) < 1:
            raise ModelError("M", f"must be a positive integer, got {self.M!r}")
        M = int(self.M)
        object.__setattr__(self, "M", M)
        for name in ("bid_T", "bid_NT", "values"):
            raw = tuple(getattr(self, name))
            if len(raw) != M:
                raise ModelError(name, f"expected {M} rows, got {len(raw)}")
            check = _nonneg if name != "values" else _real
            object.__setattr__(self, name, tuple(check(f"{name}[{k}]", x) for k, x in enumerate(raw)))

    @property
    def p(self) -> tuple[float, ...]:
        return tuple(k / self.M for k in range(self.M))

    @property
    def total(self) -> float:
        return math.fsum(self.values)

    def check_bounds(self, K: float, eta: IntensityProfile, tol: float = 1e-9) -> None:
        """Raise if any bid exceeds the no-advertising cost K/(eta_I + p eta_S)."""
        for k, p in enumerate(self.p):
            denom = eta.eta_I + p * eta.eta_S
            bound = math.inf if denom == 0 else K / denom
            for name in ("bid_T", "bid_NT"):
                bid = getattr(self, name)[k]
                if bid > bound * (1 + tol) + tol:
                    raise ModelError(f"{name}[{k}]", f"{bid!r} exceeds bound {bound!r}")

    def scaled(self, factor: float) -> "PolicyTable":
        return PolicyTable(self.M, tuple(b * factor for b in self.bid_T),
                           tuple(b * factor for b in self.bid_NT), self.values)


@dataclass(frozen=True)
class SimEstimate:
    mean: float
    std_error: float
    paths: int

    def __post_init__(self):
        object.__setattr__(self, "mean", _real("mean", self.mean))
        object.__setattr__(self, "std_error", _nonneg("std_error", self.std_error))
        if isinstance(self.paths, bool) or int(self.paths) != self.paths or int(self.paths) < 1:
            raise ModelError("paths", f"must be a positive integer, got {self.paths!r}")
        object.__setattr__(self, "paths", int(self.paths))

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "SimEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        mean = float(np.mean(samples))
        sd = float(np.std(samples, ddof=1)) if n > 1 else 0.0
        return cls(mean, sd / math.sqrt(n), n)

    def z_score(self, reference: float) -> float:
        diff = self.mean - reference
        if self.std_error == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / self.std_error


# --------------------------------------------------------------------------
# JSON (de)serialization


def _kind(data: dict, where: str) -> str:
    if not isinstance(data, dict):
        raise ModelError(where, f"expected an object, got {type(data).__name__}")
    kind = data.get("kind")
    if not isinstance(kind, str):
        raise ModelError(f"{where}.kind", "missing or not a string")
    return kind.lower().replace("-", "_")


def _get(data: dict, key: str, where: str) -> Any:
    if key not in data:
        raise ModelError(f"{where}.{key}", "missing")
    return data[key]


def _prefixed(where: str, fn, *args):
    try:
        return fn(*args)
    except ModelError as exc:
        msg = str(exc).split(": ", 1)[-1]
        raise ModelError(f"{where}.{exc.field}", msg) from None


def dist_to_dict(dist: BidDistribution) -> dict:
    if isinstance(dist, Constant):
        return {"kind": "constant", "value": dist.value}
    if isinstance(dist, Uniform):
        return {"kind": "uniform", "lower": dist.lower, "upper": dist.upper}
    return {"kind": "discrete", "atoms": list(dist.atoms), "weights": list(dist.weights)}


def dist_from_dict(data: dict, where: str = "dist") -> BidDistribution:
    kind = _kind(data, where)
    if kind == "constant":
        return _prefixed(where, Constant, _get(data, "value", where))
    if kind == "uniform":
        return _prefixed(where, Uniform, _get(data, "lower", where), _get(data, "upper", where))
    if kind == "discrete":
        if "samples" in data:
            return _prefixed(where, Discrete.from_samples, data["samples"])
        atoms, weights = _get(data, "atoms", where), _get(data, "weights", where)
        if not isinstance(atoms, list) or not isinstance(weights, list):
            raise ModelError(f"{where}.atoms", "atoms and weights must be lists")
        return _prefixed(where, Discrete, tuple(atoms), tuple(weights))
    raise ModelError(f"{where}.kind", f"unknown distribution kind {kind!r}")


def channel_to_dict(ch: Channel) -> dict:
    return {"dist": dist_to_dict(ch.dist), "rule": ch.rule.value}


def channel_from_dict(data: dict, where: str = "channel") -> Channel:
    if not isinstance(data, dict):
        raise ModelError(where, "expected an object")
    dist = dist_from_dict(_get(data, "dist", where), f"{where}.dist")
    return _prefixed(where, Channel, dist, data.get("rule", "second_price"))


def eta_to_dict(eta: IntensityProfile) -> dict:
    return {"eta_I": eta.eta_I, "eta_T": eta.eta_T, "eta_NT": eta.eta_NT, "eta_S": eta.eta_S}


def eta_from_dict(data: dict, where: str = "eta") -> IntensityProfile:
    if not isinstance(data, dict):
        raise ModelError(where, "expected an object")
    unknown = set(data) - {"eta_I", "eta_T", "eta_NT", "eta_S"}
    if unknown:
        raise ModelError(f"{where}.{sorted(unknown)[0]}", "unknown field")
    return _prefixed(where, IntensityProfile, _get(data, "eta_I", where),
                     data.get("eta_T", 0.0), data.get("eta_NT", 0.0), data.get("eta_S", 0.0))


_MODEL_KINDS = {
    "purchase": Purchase,
    "subscription": Subscription,
    "social_discount": SocialDiscount,
    "social_population": SocialPopulation,
}


def model_to_dict(spec: ModelSpec) -> dict:
    kind = {v: k for k, v in _MODEL_KINDS.items()}[type(spec)]
    if isinstance(spec, SocialPopulation):
        return {"kind": kind, "K": spec.K, "M": spec.M}
    return {"kind": kind, "K": spec.K, "rho": spec.rho}


def model_from_dict(data: dict, where: str = "model") -> ModelSpec:
    kind = _kind(data, where)
    cls = _MODEL_KINDS.get(kind)
    if cls is None:
        raise ModelError(f"{where}.kind", f"unknown model kind {kind!r}")
    if cls is SocialPopulation:
        return _prefixed(where, cls, _get(data, "K", where), _get(data, "M", where))
    if cls is SocialDiscount:
        return _prefixed(where, cls, _get(data, "K", where), data.get("rho", 0.0))
    return _prefixed(where, cls, _get(data, "K", where), _get(data, "rho", where))


def policy_to_dict(policy: PolicyTable) -> dict:
    return {"M": policy.M, "p": list(policy.p), "bid_T": list(policy.bid_T),
            "bid_NT": list(policy.bid_NT), "v": list(policy.values)}


def policy_from_dict(data: dict, where: str = "policy") -> PolicyTable:
    if not isinstance(data, dict):
        raise ModelError(where, "expected an object")
    return _prefixed(where, PolicyTable, _get(data, "M", where), _get(data, "bid_T", where),
                     _get(data, "bid_NT", where), data.get("v", data.get("values")))


def estimate_to_dict(est: SimEstimate) -> dict:
    return {"mean": est.mean, "std_error": est.std_error, "paths": est.paths}


def estimate_from_dict(data: dict, where: str = "estimate") -> SimEstimate:
    return _prefixed(where, SimEstimate, _get(data, "mean", where),
                     _get(data, "std_error", where), _get(data, "paths", where))


def policy_rows(policy: PolicyTable) -> list[tuple[float, float, float, float]]:
    """Rows ``(p, bid_T, bid_NT, v)`` in grid order."""
    return list(zip(policy.p, policy.bid_T, policy.bid_NT, policy.values))


def policy_from_rows(rows: Sequence[Sequence[float]]) -> PolicyTable:
    M = len(rows)
    if M == 0:
        raise ModelError("policy", "no rows")
    for k, row in enumerate(rows):
        if abs(float(row[0]) - k / M) > 1e-9:
            raise ModelError(f"policy.p[{k}]", f"expected {k / M!r}, got {row[0]!r}")
    return PolicyTable(M, tuple(r[1] for r in rows), tuple(r[2] for r in rows),
                       tuple(r[3] for r in rows))
