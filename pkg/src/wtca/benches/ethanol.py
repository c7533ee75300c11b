"""Merchant ethanol plant switching between operating modes.

The plant converts corn and natural gas into ethanol and is operational,
mothballed, or abandoned. The exogenous state concatenates the three
forward curves, so its dimension shrinks as maturities expire. Futures
follow a multi-factor lognormal term-structure model with shared factor
shocks; each one-step update is an exact martingale per maturity.

Money is in millions of dollars; quantities follow the plant scale
(million gallons, bushels per gallon, MMBtu per gallon).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..bases import BasisSet, ThetaSet
from ..errors import ConfigError
from ..mdp import ContinuousSim, Label, MdpInstance
from ..seeding import stream

__all__ = [
    "COMMODITIES",
    "EthanolParams",
    "build_ethanol",
    "EthanolBasis",
    "synthetic_market",
    "extend_market",
    "write_curves_csv",
    "read_curves_csv",
    "write_loadings_csv",
    "read_loadings_csv",
]

# order fixes the layout of the concatenated exogenous state
COMMODITIES = ("corn", "gas", "ethanol")

OPERATIONAL = "O"
MOTHBALLED = "M"
ABANDONED = "A"


@dataclass(frozen=True)
class EthanolParams:
    """Operating costs, conversion rates, and the market description.

    curves[c, s] is the initial futures price of commodity c for delivery
    at month s; loadings[c, t, s, l] is that price's exposure to factor l
    over the step from t to t+1 (only entries with s >= t+1 are used).
    """

    horizon: int
    curves: np.ndarray
    loadings: np.ndarray
    discount: float = 0.9983
    mothball_cost: float = 0.50       # one-time, O -> M
    reactivate_cost: float = 2.50     # one-time, M -> O
    production_cost: float = 2.25     # per month at capacity
    suspend_cost: float = 0.5208      # per month suspended
    mothballed_cost: float = 0.02917  # per month mothballed
    salvage: float = 0.0
    corn_per_gal: float = 0.36
    gas_per_gal: float = 0.035
    capacity: float = 8.33
    factors: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        T = self.horizon
        if T < 2:
            raise ConfigError("need at least two stages")
        if not 0.0 < self.discount < 1.0:
            raise ConfigError("discount must lie strictly inside (0, 1)")
        if not self.mothballed_cost < self.suspend_cost:
            raise ConfigError("mothballed upkeep must undercut suspension")
        if min(self.capacity, self.corn_per_gal, self.gas_per_gal) <= 0.0:
            raise ConfigError("conversion rates and capacity must be positive")
        curves = np.asarray(self.curves, dtype=np.float64)
        loadings = np.asarray(self.loadings, dtype=np.float64)
        if curves.shape[0] != 3 or curves.shape[1] < T:
            raise ConfigError("curves must cover all three commodities to maturity")
        if np.any(curves <= 0.0) or not np.all(np.isfinite(curves)):
            raise ConfigError("curve prices must be positive and finite")
        if loadings.ndim != 4 or loadings.shape[:3] != (3, T - 1, curves.shape[1]):
            raise ConfigError("loadings must be shaped (commodity, stage, maturity, factor)")
        if not np.all(np.isfinite(loadings)):
            raise ConfigError("loadings must be finite")
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "factors", loadings.shape[3])


def _spots(W: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # state layout: corn maturities, then gas, then ethanol, m entries each
    return W[:, 0], W[:, m], W[:, 2 * m]


def build_ethanol(params: EthanolParams) -> MdpInstance:
    p = params
    T = p.horizon
    spread_gain = p.capacity

    def step(t: int, W: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        m = T - t
        n = W.shape[0]
        z = rng.standard_normal((n, p.factors))
        out = np.empty((n, 3 * (m - 1)))
        for c in range(3):
            load = p.loadings[c, t, t + 1:T, :]            # (m-1, L)
            drift = -0.5 * np.sum(load * load, axis=1)
            seg = W[:, c * m + 1:(c + 1) * m]
            out[:, c * (m - 1):(c + 1) * (m - 1)] = seg * np.exp(z @ load.T + drift)
        return out

    exo = ContinuousSim(
        initial=np.concatenate([p.curves[c, :T] for c in range(3)]),
        step=step,
        dims=tuple(3 * (T - t) for t in range(T)),
    )

    live = {
        OPERATIONAL: (ABANDONED, "P", "S", MOTHBALLED),
        MOTHBALLED: (ABANDONED, MOTHBALLED, "R"),
        ABANDONED: (ABANDONED,),
    }

    def actions_of(t: int, x: Label):
        if t == T - 1:
            return (ABANDONED,)
        return live[x]

    def transition_of(t, x, a, w_next):
        if a == ABANDONED:
            return ABANDONED
        if a in ("P", "S", "R"):
            return OPERATIONAL
        return MOTHBALLED  # a == "M"

    def transition_batch_of(t, x, a, W_next):
        return np.full(W_next.shape[0], transition_of(t, x, a, None))

    def reward_of(t, x, w, a):
        if (x, a) == (OPERATIONAL, "P"):
            m = T - t
            spread = w[2 * m] - p.corn_per_gal * w[0] - p.gas_per_gal * w[m]
            return spread * spread_gain - p.production_cost
        return _flat_reward(p, x, a)

    def reward_batch_of(t, x, W, a):
        if (x, a) == (OPERATIONAL, "P"):
            corn, gas, eth = _spots(W, T - t)
            spread = eth - p.corn_per_gal * corn - p.gas_per_gal * gas
            return spread * spread_gain - p.production_cost
        return np.full(W.shape[0], _flat_reward(p, x, a))

    endogenous = ((OPERATIONAL,),) + ((OPERATIONAL, MOTHBALLED, ABANDONED),) * (T - 1)
    return MdpInstance(
        horizon=T,
        discount=p.discount,
        endogenous=endogenous,
        initial_label=OPERATIONAL,
        exogenous=exo,
        actions_of=actions_of,
        transition_of=transition_of,
        reward_of=reward_of,
        name=f"ethanol-T{T}-L{p.factors}",
        reward_batch_of=reward_batch_of,
        transition_batch_of=transition_batch_of,
    )


def _flat_reward(p: EthanolParams, x: Label, a: str) -> float:
    if a == ABANDONED:
        return 0.0 if x == ABANDONED else p.salvage
    if (x, a) == (OPERATIONAL, "S"):
        return -p.suspend_cost
    if (x, a) == (OPERATIONAL, MOTHBALLED):
        return -p.mothball_cost
    if (x, a) == (MOTHBALLED, MOTHBALLED):
        return -p.mothballed_cost
    if (x, a) == (MOTHBALLED, "R"):
        return -p.reactivate_cost
    raise ConfigError(f"no reward row for state {x!r}, action {a!r}")


class EthanolBasis(BasisSet):
    """Constant, Fourier terms, and capped price levels, tripled per mode.

    Block t holds one weight group per endogenous mode in (O, M, A) order;
    the abandoned group's features are identically zero, pinning its value
    to zero. Fourier frequencies are indexed by time to maturity, so the
    same coefficient tracks the s-months-out price at every stage. Price
    components are price / price_cap clipped at one.
    """

    def __init__(self, horizon: int, theta: ThetaSet, price_cap: float):
        if price_cap <= 0.0:
            raise ConfigError("price cap must be positive")
        if theta.freq.shape[1] < 3 * horizon:
            raise ConfigError("Fourier coefficients must cover all maturities")
        self.horizon = horizon
        self.theta = theta
        self.price_cap = float(price_cap)
        T = horizon
        self._cols = [
            np.concatenate([c * T + np.arange(T - t) for c in range(3)])
            for t in range(T)
        ]

    def group_width(self, t: int) -> int:
        return 1 + self.theta.count + 3 * (self.horizon - t)

    def width(self, t: int) -> int:
        return 3 * self.group_width(t)

    def features_batch(self, t: int, xs, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        m = 3 * (self.horizon - t)
        if W.shape[1] != m:
            raise ConfigError(f"stage {t} expects dimension {m}, got {W.shape[1]}")
        n = W.shape[0]
        gw = self.group_width(t)
        base = np.empty((n, gw))
        base[:, 0] = 1.0
        freq = self.theta.freq[:, self._cols[t]]
        base[:, 1:1 + self.theta.count] = np.cos(self.theta.phase + W @ freq.T)
        base[:, 1 + self.theta.count:] = np.minimum(W / self.price_cap, 1.0)
        base /= np.sqrt(gw)

        out = np.zeros((n, 3 * gw))
        groups = (OPERATIONAL, MOTHBALLED)  # abandoned stays zero
        if isinstance(xs, str):
            if xs in groups:
                g = groups.index(xs)
                out[:, g * gw:(g + 1) * gw] = base
            return out
        xs = np.asarray(xs)
        for g, x in enumerate(groups):
            rows = xs == x
            out[rows, g * gw:(g + 1) * gw] = base[rows]
        return out

    def describe(self) -> dict:
        return {"kind": "ethanol", "fourier": self.theta.count,
                "rho": self.theta.rho, "seed": self.theta.seed,
                "price_cap": self.price_cap}


def synthetic_market(T: int, factors: int = 8,
                     seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stand-in forward curves and factor loadings.

    Curves sit near typical corn/gas/ethanol levels with a mild seasonal
    wiggle. Loadings decay geometrically in time to maturity, and the
    three commodities mix a shared factor direction with their own, which
    correlates their shocks.
    """
    if T < 2 or factors < 1:
        raise ConfigError("need T >= 2 and at least one factor")
    rng = stream(seed, "fixture")
    levels = np.array([6.0, 4.0, 2.5])
    months = np.arange(T)
    curves = np.empty((3, T))
    for c in range(3):
        wiggle = 0.04 * np.sin(2 * np.pi * (months + 3 * c) / 12.0)
        tilt = 0.002 * months
        curves[c] = levels[c] * np.exp(wiggle + tilt)

    monthly_vol = np.array([0.07, 0.10, 0.08])
    decay = 0.85
    shared = rng.normal(size=factors)
    mix = np.empty((3, factors))
    for c in range(3):
        own = rng.normal(size=factors)
        v = 0.6 * shared + 0.8 * own
        mix[c] = v / np.linalg.norm(v)

    loadings = np.zeros((3, T - 1, T, factors))
    for t in range(T - 1):
        q = np.arange(1, T - t)  # months to maturity at the step's end
        scale = decay ** (q - 1.0)
        for c in range(3):
            loadings[c, t, t + 1:T, :] = (
                monthly_vol[c] * scale[:, None] * mix[c][None, :])
    return curves, loadings


def extend_market(curves: np.ndarray, loadings: np.ndarray,
                  months: int = 12) -> tuple[np.ndarray, np.ndarray]:
    """Push the horizon out by repeating the last `months` of data.

    Appended maturities copy the final `months` maturities and appended
    stages copy the final `months` stages, so a 24-month market extends
    to 36 months by repeating maturities 12-23.
    """
    curves = np.asarray(curves, dtype=np.float64)
    loadings = np.asarray(loadings, dtype=np.float64)
    T = curves.shape[1]
    if months < 1 or months > T:
        raise ConfigError("extension must be between 1 and the current horizon")
    new_curves = np.concatenate([curves, curves[:, T - months:]], axis=1)
    by_maturity = np.concatenate(
        [loadings, loadings[:, :, T - months:, :]], axis=2)
    by_stage = np.concatenate(
        [by_maturity, by_maturity[:, loadings.shape[1] - months:, :, :]], axis=1)
    return new_curves, by_stage


def write_curves_csv(path, curves: np.ndarray) -> None:
    curves = np.asarray(curves, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["commodity", "maturity", "price"])
        for c, name in enumerate(COMMODITIES):
            for s in range(curves.shape[1]):
                out.writerow([name, s, repr(float(curves[c, s]))])


def read_curves_csv(path) -> np.ndarray:
    cols = {name: {} for name in COMMODITIES}
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        try:
            for row in rows:
                cols[row["commodity"]][int(row["maturity"])] = float(row["price"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed curves file {path}: {exc}") from exc
    lengths = {len(v) for v in cols.values()}
    if len(lengths) != 1 or 0 in lengths:
        raise ConfigError(f"curves file {path} must cover all three commodities")
    T = lengths.pop()
    curves = np.empty((3, T))
    for c, name in enumerate(COMMODITIES):
        if sorted(cols[name]) != list(range(T)):
            raise ConfigError(f"curves file {path} has maturity gaps for {name}")
        curves[c] = [cols[name][s] for s in range(T)]
    return curves


def write_loadings_csv(path, loadings: np.ndarray) -> None:
    loadings = np.asarray(loadings, dtype=np.float64)
    _, S, M, L = loadings.shape
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["commodity", "stage", "maturity", "factor", "value"])
        for c, name in enumerate(COMMODITIES):
            for t in range(S):
                for s in range(M):
                    for l in range(L):
                        v = loadings[c, t, s, l]
                        if v != 0.0:
                            out.writerow([name, t, s, l, repr(float(v))])


def read_loadings_csv(path) -> np.ndarray:
    entries = []
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        try:
            for row in rows:
                entries.append((COMMODITIES.index(row["commodity"]),
                                int(row["stage"]), int(row["maturity"]),
                                int(row["factor"]), float(row["value"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed loadings file {path}: {exc}") from exc
    if not entries:
        raise ConfigError(f"loadings file {path} is empty")
    S = 1 + max(e[1] for e in entries)
    M = 1 + max(e[2] for e in entries)
    L = 1 + max(e[3] for e in entries)
    loadings = np.zeros((3, S, M, L))
    for c, t, s, l, v in entries:
        loadings[c, t, s, l] = v
    return loadings
