"""Multi-asset Bermudan max-call with a knock-out barrier.

Monthly exercise dates, independent geometric Brownian assets under the
risk-neutral measure, and an up-and-out barrier on the running maximum
checked at every exercise date. Stopping or a barrier breach kills the
option; a dead option earns nothing forever.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bases import BasisSet, ThetaSet
from ..errors import ConfigError
from ..mdp import ContinuousSim, Label, MdpInstance

__all__ = ["BermudanParams", "build_bermudan", "BermudanBasis"]

ALIVE = "alive"
OUT = "out"


@dataclass(frozen=True)
class BermudanParams:
    """Market and contract parameters, annualized where applicable."""

    assets: int
    initial_price: float
    horizon: int
    strike: float = 100.0
    barrier: float = 170.0
    dt: float = 1.0 / 12.0
    vol: float = 0.20
    rate: float = 0.05

    def __post_init__(self) -> None:
        if self.assets < 1:
            raise ConfigError("need at least one asset")
        if self.horizon < 2:
            raise ConfigError("need at least two exercise dates")
        if not 0.0 < self.strike < self.barrier:
            raise ConfigError("require barrier > strike > 0")
        if min(self.initial_price, self.dt, self.vol, self.rate) <= 0.0:
            raise ConfigError("prices, dt, vol and rate must all be positive")

    @property
    def discount(self) -> float:
        return float(np.exp(-self.rate * self.dt))


def build_bermudan(params: BermudanParams) -> MdpInstance:
    p = params
    drift = (p.rate - 0.5 * p.vol**2) * p.dt
    sd = p.vol * np.sqrt(p.dt)

    def step(t: int, W: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(W.shape)
        return W * np.exp(drift + sd * z)

    exo = ContinuousSim(
        initial=np.full(p.assets, float(p.initial_price)),
        step=step,
        dims=(p.assets,) * p.horizon,
    )

    def actions_of(t: int, x: Label):
        return ("stop", "continue") if x == ALIVE else ("hold",)

    # barrier is monitored at exercise dates: a breach in w_next kills the
    # option entering t+1, matching the max-of-indicators update rule
    def transition_of(t, x, a, w_next):
        if x == OUT or a == "stop":
            return OUT
        if w_next is not None and float(np.max(w_next)) >= p.barrier:
            return OUT
        return ALIVE

    def transition_batch_of(t, x, a, W_next):
        n = W_next.shape[0]
        if x == OUT or a == "stop":
            return np.full(n, OUT)
        return np.where(W_next.max(axis=1) >= p.barrier, OUT, ALIVE)

    def reward_of(t, x, w, a):
        if x == ALIVE and a == "stop":
            return max(float(np.max(w)) - p.strike, 0.0)
        return 0.0

    def reward_batch_of(t, x, W, a):
        if x == ALIVE and a == "stop":
            return np.maximum(W.max(axis=1) - p.strike, 0.0)
        return np.zeros(W.shape[0])

    start = ALIVE if p.initial_price < p.barrier else OUT
    endogenous = ((start,),) + ((ALIVE, OUT),) * (p.horizon - 1)
    return MdpInstance(
        horizon=p.horizon,
        discount=p.discount,
        endogenous=endogenous,
        initial_label=start,
        exogenous=exo,
        actions_of=actions_of,
        transition_of=transition_of,
        reward_of=reward_of,
        name=f"bermudan-N{p.assets}-T{p.horizon}-w{p.initial_price:g}",
        reward_batch_of=reward_batch_of,
        transition_batch_of=transition_batch_of,
    )


class BermudanBasis(BasisSet):
    """Constant, scaled payoff, and random Fourier features on live options.

    The payoff component is payoff_scale * (max_q w_q - strike)^+ divided
    by the barrier-strike gap and clipped at one. The clip keeps the
    unit-norm guarantee for any scale choice. Every column carries the
    alive indicator: a knocked-out or exercised option is worth exactly
    zero, and zeroing the whole row encodes that instead of asking the
    regression to cancel live-state columns against dead-state samples.
    """

    def __init__(self, params: BermudanParams, theta: ThetaSet,
                 payoff_scale: float = 1.0):
        if theta.freq.shape[1] != params.assets:
            raise ConfigError("Fourier coefficients must match the asset count")
        if payoff_scale <= 0.0:
            raise ConfigError("payoff scale must be positive")
        self.params = params
        self.theta = theta
        self.payoff_scale = float(payoff_scale)
        self.horizon = params.horizon

    def width(self, t: int) -> int:
        return 2 + self.theta.count

    def features_batch(self, t: int, xs, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        p = self.params
        if W.shape[1] != p.assets:
            raise ConfigError(f"expected {p.assets} asset prices, got {W.shape[1]}")
        n = W.shape[0]
        if isinstance(xs, str):
            active = 1.0 if xs == ALIVE else 0.0
        else:
            active = (np.asarray(xs) == ALIVE).astype(np.float64)
        out = np.empty((n, self.width(t)))
        out[:, 0] = 1.0
        pay = np.maximum(W.max(axis=1) - p.strike, 0.0)
        scaled = self.payoff_scale * pay / (p.barrier - p.strike)
        out[:, 1] = np.minimum(scaled, 1.0)
        out[:, 2:] = np.cos(self.theta.phase + W @ self.theta.freq.T)
        if isinstance(active, float):
            out *= active
        else:
            out *= active[:, None]
        return out / np.sqrt(self.width(t))

    def describe(self) -> dict:
        return {"kind": "bermudan", "fourier": self.theta.count,
                "rho": self.theta.rho, "seed": self.theta.seed,
                "payoff_scale": self.payoff_scale}
