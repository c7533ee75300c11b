"""Monte Carlo bounds and regression fitters around a value approximation.

Lower bounds simulate the greedy one-step lookahead policy on independent
paths. Upper bounds average the penalized anticipative inner problem; the
penalty has conditional mean zero, so the estimate is valid for arbitrary
weights and tightens as the approximation improves. The two regression
fitters (backward fitted value iteration, and the post-fit that converts
jointly trained weights into regression-consistent ones) share one
rank-revealing least squares core.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr, solve_triangular

from .bases import (BasisSet, Weights, conditional_expectation, draw_inner,
                    vfa, vfa_batch)
from .errors import ConfigError, RegressionError
from .formulations import ObjectiveSpec, PoOracle
from .mdp import (ContinuousSim, FiniteSupport, MdpInstance, Obs,
                  sample_path, sample_path_batch)
from .seeding import stream

__all__ = [
    "BoundEstimate",
    "PolicySpec",
    "greedy_action",
    "lower_bound",
    "dual_penalty",
    "upper_bound",
    "rank_revealing_ols",
    "lsm_fit",
    "po_post_regression",
]


@dataclass(frozen=True)
class BoundEstimate:
    mean: float
    se: float
    paths: int

    def __post_init__(self) -> None:
        if self.paths < 2:
            raise ConfigError("a bound estimate needs at least two paths")
        if not np.isfinite(self.mean) or not self.se >= 0.0:
            raise ConfigError("bound statistics must be finite, se >= 0")


def _estimate(values: np.ndarray) -> BoundEstimate:
    n = len(values)
    return BoundEstimate(float(np.mean(values)),
                         float(np.std(values, ddof=1) / np.sqrt(n)), n)


@dataclass(frozen=True)
class PolicySpec:
    """Greedy policy induced by a value approximation.

    inner counts the common-random-number draws used per decision to
    estimate continuation values under ContinuousSim models.
    """

    basis: BasisSet
    weights: Weights
    inner: int = 500

    def __post_init__(self) -> None:
        if self.inner < 1:
            raise ConfigError("need at least one inner sample per decision")


def _action_value(policy: PolicySpec, instance: MdpInstance, t: int,
                  x, a, w_t: Obs, samples: np.ndarray | None) -> float:
    score = instance.reward(t, x, w_t.value, a)
    if t < instance.horizon - 1:
        expected = conditional_expectation(policy.basis, instance, t, x, a,
                                           w_t, m=policy.inner, samples=samples)
        score += instance.discount * float(
            policy.weights.blocks[t + 1] @ expected)
    return score


def greedy_action(policy: PolicySpec, instance: MdpInstance, t: int, x,
                  w_t: Obs, rng: np.random.Generator | None = None):
    """Argmax of reward plus discounted continuation; ties keep action order."""
    samples = None
    if (t < instance.horizon - 1
            and isinstance(instance.exogenous, ContinuousSim)):
        if rng is None:
            raise ConfigError("continuous models need an rng for inner draws")
        samples = draw_inner(instance, t, w_t.value, policy.inner, rng)
    best_a, best = None, -np.inf
    for a in instance.actions(t, x):
        score = _action_value(policy, instance, t, x, a, w_t, samples)
        if score > best:
            best_a, best = a, score
    return best_a


def lower_bound(policy: PolicySpec, instance: MdpInstance, paths: int,
                seed: int) -> BoundEstimate:
    """Mean discounted reward of the greedy rollout; expectation <= V*."""
    if paths < 2:
        raise ConfigError("need at least two evaluation paths")
    finite = isinstance(instance.exogenous, FiniteSupport)
    gamma, T = instance.discount, instance.horizon
    cache: dict[tuple, tuple] = {}
    totals = np.empty(paths)
    for i in range(paths):
        path = sample_path(instance, rng=stream(seed, "eval-path", i))
        rng = None if finite else stream(seed, "eval-inner", i, 0)
        x, total = instance.initial_label, 0.0
        for t in range(T):
            w = path.at(t)
            if finite:
                key = (t, w.atom, x)
                hit = cache.get(key)
                if hit is None:
                    a = greedy_action(policy, instance, t, x, w)
                    hit = (a, instance.reward(t, x, w.value, a))
                    cache[key] = hit
                a, r = hit
            else:
                a = greedy_action(policy, instance, t, x, w, rng)
                r = instance.reward(t, x, w.value, a)
            total += gamma**t * r
            if t < T - 1:
                x = instance.step_label(t, x, a, path.at(t + 1).value)
        totals[i] = total
    return _estimate(totals)


def dual_penalty(basis: BasisSet, weights: Weights, instance: MdpInstance,
                 t: int, x, a, w_t: Obs, w_next: Obs, m: int = 500,
                 rng: np.random.Generator | None = None) -> float:
    """gamma * (vfa at the realized next state - its conditional mean)."""
    if t >= instance.horizon - 1:
        return 0.0
    x_next = instance.step_label(t, x, a, w_next.value)
    actual = vfa(basis, weights, t + 1, x_next, w_next.value)
    expected = float(weights.blocks[t + 1] @ conditional_expectation(
        basis, instance, t, x, a, w_t, m=m, rng=rng))
    return instance.discount * (actual - expected)


def upper_bound(basis: BasisSet, weights: Weights, instance: MdpInstance,
                paths: int, m: int = 500, seed: int = 0) -> BoundEstimate:
    """Mean penalized anticipative value over paths; expectation >= V*."""
    if paths < 2:
        raise ConfigError("need at least two evaluation paths")
    spec = ObjectiveSpec("po", 1.0, basis, instance, m_train=m)
    oracle = PoOracle(spec)
    finite = isinstance(instance.exogenous, FiniteSupport)
    values = np.empty(paths)
    for i in range(paths):
        path = sample_path(instance, rng=stream(seed, "eval-path", i))
        rng = None if finite else stream(seed, "eval-inner", i, 1)
        values[i] = oracle.exact_inner(weights, path, rng=rng)
    return _estimate(values)


def rank_revealing_ols(features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Least squares via pivoted QR; columns beyond the rank get zero weight."""
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    q, r, piv = qr(features, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag[0] * max(features.shape) * np.finfo(np.float64).eps
    rank = int(np.count_nonzero(diag > tol)) if diag.size and diag[0] > 0 else 0
    out = np.zeros(features.shape[1])
    if rank:
        rhs = (q.T @ targets)[:rank]
        out[piv[:rank]] = solve_triangular(r[:rank, :rank], rhs)
    return out


def _stage_rows(basis: BasisSet, instance: MdpInstance, t: int,
                W_t: np.ndarray, labels) -> np.ndarray:
    n = W_t.shape[0]
    return np.vstack([basis.features_batch(t, [x] * n, W_t) for x in labels])


def _check_rows(paths: int, width: int, t: int) -> None:
    if paths < width + 1:
        raise RegressionError(
            f"stage {t}: {width} basis columns need at least {width + 1} "
            f"paths, got {paths}")


def lsm_fit(instance: MdpInstance, basis: BasisSet, paths: int,
            seed: int) -> Weights:
    """Backward fitted value iteration on a common set of sample paths.

    Stage t regresses, for every endogenous state, the best one-step value
    (reward plus discounted fitted value at the realized next state on the
    same path) onto the stage-t features. The regression supplies the
    conditional averaging over the next exogenous step.
    """
    T, gamma = instance.horizon, instance.discount
    batch = sample_path_batch(instance, paths, stream(seed, "path"))
    weights = Weights.zeros(basis, T)
    for t in reversed(range(T)):
        _check_rows(paths, basis.width(t), t)
        labels = instance.endogenous[t]
        W_t = batch.values[t]
        targets = []
        for x in labels:
            best = np.full(paths, -np.inf)
            for a in instance.actions(t, x):
                score = instance.reward_batch(t, x, W_t, a)
                if t < T - 1:
                    W_next = batch.values[t + 1]
                    xs_next = instance.step_label_batch(t, x, a, W_next)
                    score = score + gamma * vfa_batch(basis, weights, t + 1,
                                                      xs_next, W_next)
                np.maximum(best, score, out=best)
            targets.append(best)
        rows = _stage_rows(basis, instance, t, W_t, labels)
        weights.blocks[t] = rank_revealing_ols(rows, np.concatenate(targets))
    return weights


def po_post_regression(weights: Weights, instance: MdpInstance,
                       basis: BasisSet, paths: int, seed: int,
                       m: int = 100) -> Weights:
    """Refit stage weights to the hard penalized anticipative values.

    Jointly trained weights enter the upper bound only through the penalty;
    this regression turns them into stagewise fitted values on fresh paths,
    so the greedy policy and both bounds see regression-consistent weights.
    """
    T, gamma = instance.horizon, instance.discount
    batch = sample_path_batch(instance, paths, stream(seed, "path"))
    finite = isinstance(instance.exogenous, FiniteSupport)
    oracle = PoOracle(ObjectiveSpec("po", 1.0, basis, instance, m_train=m))
    tables = [np.empty((paths, len(instance.endogenous[t]))) for t in range(T)]
    for i in range(paths):
        path = batch.path(i)
        rng = None if finite else stream(seed, "inner", i)
        stages = oracle.stage_data(path, rng)
        values = oracle.hard_values(weights, stages)
        for t in range(T):
            tables[t][i] = values[t] / gamma**t
    out = Weights.zeros(basis, T)
    for t in range(T):
        _check_rows(paths, basis.width(t), t)
        W_t = batch.values[t]
        feats, targets = [], []
        for xi, x in enumerate(instance.endogenous[t]):
            col = tables[t][:, xi]
            keep = np.isfinite(col)  # labels with no feasible pair hold -inf
            if not keep.any():
                continue
            feats.append(basis.features_batch(t, [x] * int(keep.sum()),
                                              W_t[keep]))
            targets.append(col[keep])
        out.blocks[t] = rank_revealing_ols(np.vstack(feats),
                                           np.concatenate(targets))
    return out
