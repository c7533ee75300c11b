"""Parallel stochastic block coordinate descent over stage blocks.

One algorithm covers three regimes through the (n, tau) pair: stage-wise
parallel updates (n = tau = T), plain stochastic gradient descent on the
full vector (n = tau = 1), and partial parallelism via tau-nice subsets
(uniform fixed-cardinality-tau block subsets, 1 <= tau <= n = T).

Per iteration: draw one exogenous path, get the stochastic gradient from the
objective oracle, update the sampled blocks by a curvature-scaled projected
step, and fold the iterate into a weighted running average, which is the
returned solution.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bases import Weights
from .errors import ConfigError, NumericError
from .formulations import CurvatureWeights
from .mdp import sample_path, sample_path_batch
from .seeding import stream

__all__ = [
    "SolverConfig",
    "SolverTrace",
    "step_size",
    "averaging_weight",
    "project_block",
    "sample_blocks",
    "run",
]

TRACE_BATCH = 64


def step_size(k: int) -> float:
    """alpha_k = 1 / (2 sqrt(k+1)) for k >= 1."""
    if k < 1:
        raise ConfigError("step index starts at 1")
    return 0.5 / np.sqrt(k + 1.0)


def averaging_weight(k: int, n: int, tau: int) -> float:
    """theta_k = n^2 alpha_{k-1} - (n^2 - tau^2) alpha_k for k >= 2.

    Positive whenever the step sizes decrease (theta_k >= tau^2 alpha_k).
    """
    if k < 2:
        raise ConfigError("averaging starts at the second iterate")
    return n * n * step_size(k - 1) - (n * n - tau * tau) * step_size(k)


def project_block(block: np.ndarray, radius: float) -> np.ndarray:
    """Componentwise clamp onto [-radius, radius] (the box factorizes)."""
    if radius <= 0:
        raise ConfigError("projection radius must be positive")
    return np.clip(block, -radius, radius)


def sample_blocks(rng: np.random.Generator, n: int, tau: int) -> np.ndarray:
    """Tau-nice draw: a uniform subset of exactly tau of the n blocks."""
    return np.sort(rng.choice(n, size=tau, replace=False))


@dataclass(frozen=True)
class SolverConfig:
    iterations: int                      # K: iterates beta^1 .. beta^K
    n_blocks: int                        # n: 1 or the horizon T
    tau: int
    nu: CurvatureWeights | np.ndarray
    radius: float = 1e4
    seed: int = 0
    cadence: int = 1000
    checkpoints: tuple[int, ...] = ()
    threads: int = 1
    warn_fraction: float = 0.9

    def __post_init__(self) -> None:
        nu = self.nu.nu if isinstance(self.nu, CurvatureWeights) else np.asarray(
            self.nu, dtype=np.float64)
        object.__setattr__(self, "nu", nu)
        if self.iterations < 2:
            raise ConfigError("need at least two iterates")
        if not 1 <= self.tau <= self.n_blocks:
            raise ConfigError("need 1 <= tau <= n")
        if self.radius <= 0:
            raise ConfigError("radius must be positive")
        if not (nu > 0).all():
            raise ConfigError("curvature weights must be strictly positive")
        if nu.shape != (self.n_blocks,):
            raise ConfigError("curvature length must equal the block count")
        if self.cadence < 1:
            raise ConfigError("trace cadence must be positive")
        if self.threads < 1:
            raise ConfigError("thread count must be positive")
        if any(c < 1 or c > self.iterations for c in self.checkpoints):
            raise ConfigError("checkpoints must lie in [1, K]")


@dataclass
class SolverTrace:
    ks: list[int] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    checkpoints: dict[int, Weights] = field(default_factory=dict)

    def rows(self):
        return zip(self.ks, self.objective, self.grad_norm, self.wall_ms)


def _grad_norm(grad: Weights) -> float:
    return float(np.sqrt(sum(float(b @ b) for b in grad.blocks)))


def _minibatch_objective(oracle, beta: Weights, seed: int, k: int,
                         pool: ThreadPoolExecutor | None) -> float:
    """64-path sampled objective at the current iterate; diagnostics only.

    Paths and inner draws come from per-(k, path) substreams, so the value
    does not depend on the worker count.
    """
    instance = oracle.spec.instance
    batch = sample_path_batch(instance, TRACE_BATCH, stream(seed, "trace", k))

    def one(i: int) -> float:
        v, _ = oracle.value_and_gradient(beta, batch.path(i),
                                         stream(seed, "trace", k, i))
        return v

    if pool is None:
        vals = [one(i) for i in range(TRACE_BATCH)]
    else:
        vals = list(pool.map(one, range(TRACE_BATCH)))
    return float(np.mean(vals))


def run(oracle, config: SolverConfig) -> tuple[Weights, Weights, SolverTrace]:
    """Minimize the oracle's smoothed objective; returns (average, final, trace).

    The average is the theta-weighted mean of iterates 2..K. Deterministic in
    the master seed for any thread count.
    """
    spec = oracle.spec
    T = spec.horizon
    n, tau = config.n_blocks, config.tau
    if n not in (1, T):
        raise ConfigError("block partitions: 1 (joint) or one per stage")

    basis = spec.basis
    beta = Weights([np.zeros(basis.width(t)) for t in range(T)])
    acc = Weights([np.zeros(basis.width(t)) for t in range(T)])
    weight_sum = 0.0

    rng_path = stream(config.seed, "path")
    rng_inner = stream(config.seed, "inner")
    rng_blocks = stream(config.seed, "blocks") if tau < n else None

    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    trace = SolverTrace()
    checkpoints = set(config.checkpoints)
    if 1 in checkpoints:
        trace.checkpoints[1] = beta.copy()

    try:
        for k in range(1, config.iterations):
            t0 = time.perf_counter()
            path = sample_path(spec.instance, rng=rng_path)
            if rng_blocks is None:
                picked = range(n)
            else:
                picked = sample_blocks(rng_blocks, n, tau)
            try:
                value, grad = oracle.value_and_gradient(beta, path, rng_inner)
            except Exception as exc:
                raise NumericError(f"gradient oracle failed at iteration {k}: "
                                   f"{exc}") from exc
            alpha = step_size(k)
            if n == 1:
                if 0 in picked:
                    scale = alpha / config.nu[0]
                    for t in range(T):
                        beta.blocks[t] = project_block(
                            beta.blocks[t] - scale * grad.blocks[t], config.radius)
            else:
                for i in picked:
                    beta.blocks[i] = project_block(
                        beta.blocks[i] - (alpha / config.nu[i]) * grad.blocks[i],
                        config.radius)

            k_next = k + 1  # index of the iterate just produced
            theta = averaging_weight(k_next, n, tau)
            for t in range(T):
                acc.blocks[t] += theta * beta.blocks[t]
            weight_sum += theta

            if k_next in checkpoints:
                trace.checkpoints[k_next] = Weights(
                    [b / weight_sum for b in acc.blocks])

            if k % config.cadence == 0 or k_next == config.iterations:
                est = _minibatch_objective(oracle, beta, config.seed, k_next, pool)
                trace.ks.append(k_next)
                trace.objective.append(est)
                trace.grad_norm.append(_grad_norm(grad))
                trace.wall_ms.append((time.perf_counter() - t0) * 1e3)
    finally:
        if pool is not None:
            pool.shutdown()

    average = Weights([b / weight_sum for b in acc.blocks])
    top = max(max(np.abs(b).max() for b in average.blocks),
              max(np.abs(b).max() for b in beta.blocks))
    if top > config.warn_fraction * config.radius:
        warnings.warn(
            f"weights reached {top:.3g}, above {config.warn_fraction:.0%} of the "
            f"feasible radius {config.radius:.3g}; the box may be binding",
            RuntimeWarning, stacklevel=2)
    return average, beta, trace
