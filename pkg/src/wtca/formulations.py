"""Smoothed max-of-affine training objectives and their gradients.

Two value-function fitting objectives share one machinery:

* the stage-coupled Bellman-deviation objective ("wtca"), a sum over stages
  of a discounted max over feasible (state, action) pairs, where each affine
  term touches at most the two adjacent stage blocks; and
* the penalized anticipative objective ("po"), a single max over full-horizon
  action sequences whose terms span every stage block except block 0.

Both are smoothed by temperature-sigma log-sum-exp. Values, per-block
stochastic gradients, ESO curvature weights, and exact (enumeration-based)
references for finite-support instances all live here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bases import BasisSet, Weights, conditional_expectation, draw_inner, vfa
from .errors import ConfigError
from .mdp import (ContinuousSim, ExoPath, FiniteSupport, MdpInstance, Obs,
                  chain_marginals, count_action_sequences, enumerate_pairs,
                  enumerate_paths)

__all__ = [
    "ObjectiveSpec",
    "AffineFamily",
    "CurvatureWeights",
    "lse",
    "lse_gradient",
    "wtca_component",
    "wtca_stochastic_gradient",
    "wtca_expected_objective",
    "wtca_expected_gradient",
    "hard_delta",
    "WtcaOracle",
    "PoOracle",
    "po_soft_value",
    "po_marginals",
    "po_exact_inner",
    "po_stochastic_gradient",
    "po_expected_objective",
    "pair_counts",
    "curvature",
    "po_curvature_tight",
    "wtca_curvature_tight",
    "chi_squared_estimate",
]


@dataclass(frozen=True)
class ObjectiveSpec:
    """Everything needed to evaluate one smoothed objective."""

    kind: str                 # "wtca" | "po"
    sigma: float
    basis: BasisSet
    instance: MdpInstance
    m_train: int = 100
    radius: float = 1e4

    def __post_init__(self) -> None:
        if self.kind not in ("wtca", "po"):
            raise ConfigError(f"unknown formulation {self.kind!r}")
        if self.sigma <= 0:
            raise ConfigError("smoothing temperature must be positive")
        if self.radius <= 0:
            raise ConfigError("feasible-box radius must be positive")
        if self.m_train < 1:
            raise ConfigError("need at least one inner draw")

    @property
    def horizon(self) -> int:
        return self.instance.horizon


@dataclass
class AffineFamily:
    """One max-of-affine component: scale * max_u (a(u).beta + b(u)).

    Coefficients are stored per stage block as dense (|U|, B_block) slabs;
    blocks absent from `rows` are zero.
    """

    component: int
    scale: float
    pairs: tuple
    rows: dict[int, np.ndarray]
    intercepts: np.ndarray

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(sorted(self.rows))

    def values(self, weights: Weights) -> np.ndarray:
        v = self.intercepts.copy()
        for b, slab in self.rows.items():
            v += slab @ weights.blocks[b]
        return v


def _softmax_shifted(v: np.ndarray, sigma: float) -> tuple[float, np.ndarray]:
    """(log-sum-exp of v/sigma times sigma, softmax weights), overflow-safe."""
    m = v.max()
    e = np.exp((v - m) / sigma)
    z = e.sum()
    return m + sigma * np.log(z), e / z


def lse(family: AffineFamily, weights: Weights, sigma: float) -> float:
    if len(family.intercepts) == 0:
        raise ConfigError("empty affine family")
    soft, _ = _softmax_shifted(family.values(weights), sigma)
    return family.scale * soft


def lse_gradient(family: AffineFamily, weights: Weights,
                 sigma: float) -> dict[int, np.ndarray]:
    """Per-block slices of the smoothed-max gradient: scale * A^T softmax."""
    if len(family.intercepts) == 0:
        raise ConfigError("empty affine family")
    _, p = _softmax_shifted(family.values(weights), sigma)
    return {b: family.scale * (slab.T @ p) for b, slab in family.rows.items()}


def _lse_value_gradient(family, weights, sigma):
    soft, p = _softmax_shifted(family.values(weights), sigma)
    grads = {b: family.scale * (slab.T @ p) for b, slab in family.rows.items()}
    return family.scale * soft, grads


def _inner_samples(spec: ObjectiveSpec, t: int, w_t: np.ndarray,
                   rng: np.random.Generator | None) -> np.ndarray | None:
    """One CRN batch shared by every pair compared at this (t, w_t)."""
    if not isinstance(spec.instance.exogenous, ContinuousSim):
        return None
    if rng is None:
        raise ConfigError("continuous exogenous models need a random stream")
    return draw_inner(spec.instance, t, w_t, spec.m_train, rng)


def wtca_component(spec: ObjectiveSpec, t: int, w_t: Obs,
                   rng: np.random.Generator | None = None) -> AffineFamily:
    """Stage-t Bellman-deviation family at exogenous state w_t.

    Rows for t >= 1 carry -phi_t(x, w_t) in block t and gamma * E[phi_{t+1}]
    in block t+1. The stage-0 component absorbs the approximate initial value,
    so its rows touch block 1 only and beta_0 never receives gradient.
    """
    inst, basis, gamma, T = spec.instance, spec.basis, spec.instance.discount, spec.horizon
    pairs = enumerate_pairs(inst, t)
    rows: dict[int, np.ndarray] = {}
    intercepts = np.array([inst.reward(t, x, w_t.value, a) for x, a in pairs])

    if t >= 1:
        slab = np.empty((len(pairs), basis.width(t)))
        for i, (x, _) in enumerate(pairs):
            slab[i] = -basis.features(t, x, w_t.value)
        rows[t] = slab
    if t < T - 1:
        samples = _inner_samples(spec, t, w_t.value, rng)
        slab = np.empty((len(pairs), basis.width(t + 1)))
        for i, (x, a) in enumerate(pairs):
            slab[i] = gamma * conditional_expectation(
                basis, inst, t, x, a, w_t, m=spec.m_train, samples=samples)
        rows[t + 1] = slab
    return AffineFamily(component=t, scale=gamma**t, pairs=pairs,
                        rows=rows, intercepts=intercepts)


class WtcaOracle:
    """Sampled value/gradient provider for the stage-coupled objective.

    Finite-support instances cache each stage family by atom index: the
    families are weight-independent, so one construction serves every
    iteration. Continuous instances rebuild with fresh inner draws per call.
    """

    def __init__(self, spec: ObjectiveSpec):
        if spec.kind != "wtca":
            raise ConfigError("oracle requires a wtca spec")
        self.spec = spec
        self._cache: dict[tuple[int, int], AffineFamily] = {}
        self._finite = isinstance(spec.instance.exogenous, FiniteSupport)

    def family(self, t: int, w_t: Obs,
               rng: np.random.Generator | None = None) -> AffineFamily:
        if self._finite and w_t.atom is not None:
            key = (t, w_t.atom)
            fam = self._cache.get(key)
            if fam is None:
                fam = self._cache[key] = wtca_component(self.spec, t, w_t)
            return fam
        return wtca_component(self.spec, t, w_t, rng)

    def value_and_gradient(self, weights: Weights, path: ExoPath,
                           rng: np.random.Generator | None = None
                           ) -> tuple[float, Weights]:
        spec = self.spec
        total = 0.0
        grad = Weights([np.zeros(spec.basis.width(t)) for t in range(spec.horizon)])
        for t in range(spec.horizon):
            fam = self.family(t, path.at(t), rng)
            val, slices = _lse_value_gradient(fam, weights, spec.sigma)
            total += val
            for b, g in slices.items():
                grad.blocks[b] += g
        return total, grad


def wtca_stochastic_gradient(spec: ObjectiveSpec, weights: Weights, path: ExoPath,
                             rng: np.random.Generator | None = None,
                             oracle: WtcaOracle | None = None
                             ) -> tuple[Weights, float]:
    oracle = oracle or WtcaOracle(spec)
    value, grad = oracle.value_and_gradient(weights, path, rng)
    return grad, value


def hard_delta(spec: ObjectiveSpec, weights: Weights, t: int, w_t: Obs,
               rng: np.random.Generator | None = None) -> float:
    """Unsmoothed maximum Bellman deviation at (t, w_t); first pair wins ties."""
    fam = wtca_component(spec, t, w_t, rng)
    best = float(fam.values(weights).max())
    if t == 0:
        x0 = spec.instance.initial_label
        best -= vfa(spec.basis, weights, 0, x0, w_t.value)
    return best


def _require_finite(instance: MdpInstance) -> FiniteSupport:
    if not isinstance(instance.exogenous, FiniteSupport):
        raise ConfigError("exact expectations need a finite-support model")
    return instance.exogenous


def wtca_expected_objective(spec: ObjectiveSpec, weights: Weights,
                            smooth: bool = True) -> float:
    """Exact F(beta): stage components depend on w_t only, so the expectation
    is a marginal-weighted sum over atoms."""
    exo = _require_finite(spec.instance)
    marg = chain_marginals(spec.instance)
    oracle = WtcaOracle(spec)
    total = 0.0
    for t in range(spec.horizon):
        for k in np.nonzero(marg[t])[0]:
            fam = oracle.family(t, Obs(exo.atoms[t][k], int(k)))
            if smooth:
                total += marg[t][k] * lse(fam, weights, spec.sigma)
            else:
                total += marg[t][k] * fam.scale * float(fam.values(weights).max())
    return total


def wtca_expected_gradient(spec: ObjectiveSpec, weights: Weights) -> Weights:
    exo = _require_finite(spec.instance)
    marg = chain_marginals(spec.instance)
    oracle = WtcaOracle(spec)
    grad = Weights([np.zeros(spec.basis.width(t)) for t in range(spec.horizon)])
    for t in range(spec.horizon):
        for k in np.nonzero(marg[t])[0]:
            fam = oracle.family(t, Obs(exo.atoms[t][k], int(k)))
            for b, g in lse_gradient(fam, weights, spec.sigma).items():
                grad.blocks[b] += marg[t][k] * g
    return grad


@dataclass
class _PoStage:
    """Everything stage t contributes to the penalized trajectory objective."""

    pairs: tuple
    rewards: np.ndarray            # gamma^t * r_t per pair
    crows: np.ndarray | None       # (|U_t|, B_{t+1}) penalty rows, None at T-1
    next_index: np.ndarray | None  # stage-(t+1) label index per pair


class PoOracle:
    """Soft/hard penalized anticipative DP with forward-backward marginals.

    The trajectory objective is additive in (stage, endogenous state), so the
    log-sum-exp over exponentially many action sequences factorizes into a
    backward recursion over labels; marginals come from one forward pass.
    """

    def __init__(self, spec: ObjectiveSpec):
        if spec.kind != "po":
            raise ConfigError("oracle requires a po spec")
        self.spec = spec
        self._finite = isinstance(spec.instance.exogenous, FiniteSupport)
        self._crow_cache: dict[tuple[int, int, int], np.ndarray] = {}
        self._label_index = [spec.instance.label_index(t)
                             for t in range(spec.instance.horizon)]

    def _crow(self, t: int, w_t: Obs, w_next: Obs,
              samples: np.ndarray | None) -> np.ndarray:
        """Penalty rows gamma^{t+1} (E[phi_{t+1}|w_t] - phi_{t+1}(actual))."""
        spec = self.spec
        inst, basis, gamma = spec.instance, spec.basis, spec.instance.discount
        key = None
        if self._finite and w_t.atom is not None and w_next.atom is not None:
            key = (t, w_t.atom, w_next.atom)
            hit = self._crow_cache.get(key)
            if hit is not None:
                return hit
        pairs = enumerate_pairs(inst, t)
        slab = np.empty((len(pairs), basis.width(t + 1)))
        for i, (x, a) in enumerate(pairs):
            expected = conditional_expectation(basis, inst, t, x, a, w_t,
                                               m=spec.m_train, samples=samples)
            x_next = inst.step_label(t, x, a, w_next.value)
            actual = basis.features(t + 1, x_next, w_next.value)
            slab[i] = gamma**(t + 1) * (expected - actual)
        if key is not None:
            self._crow_cache[key] = slab
        return slab

    def stage_data(self, path: ExoPath,
                   rng: np.random.Generator | None = None) -> list[_PoStage]:
        spec = self.spec
        inst, gamma, T = spec.instance, spec.instance.discount, spec.horizon
        out = []
        for t in range(T):
            w_t = path.at(t)
            pairs = enumerate_pairs(inst, t)
            rewards = gamma**t * np.array(
                [inst.reward(t, x, w_t.value, a) for x, a in pairs])
            crows = next_index = None
            if t < T - 1:
                w_next = path.at(t + 1)
                samples = _inner_samples(spec, t, w_t.value, rng)
                crows = self._crow(t, w_t, w_next, samples)
                next_index = np.array(
                    [self._label_index[t + 1][inst.step_label(t, x, a, w_next.value)]
                     for x, a in pairs])
            out.append(_PoStage(pairs, rewards, crows, next_index))
        return out

    def _pair_values(self, stage: _PoStage, weights: Weights, t: int) -> np.ndarray:
        g = stage.rewards.copy()
        if stage.crows is not None:
            g += stage.crows @ weights.blocks[t + 1]
        return g

    def soft_values(self, weights: Weights, stages: list[_PoStage]
                    ) -> list[np.ndarray]:
        """Backward pass: per-stage arrays of soft values over labels."""
        spec, inst, T = self.spec, self.spec.instance, self.spec.horizon
        sigma = spec.sigma
        values: list[np.ndarray] = [None] * T
        nxt = None
        for t in reversed(range(T)):
            stage = stages[t]
            g = self._pair_values(stage, weights, t)
            if stage.next_index is not None:
                g = g + nxt[stage.next_index]
            cur = np.empty(len(inst.endogenous[t]))
            for xi, x in enumerate(inst.endogenous[t]):
                mask = [i for i, (px, _) in enumerate(stage.pairs) if px == x]
                if not mask:
                    cur[xi] = -np.inf  # label unreachable via the pair set
                    continue
                soft, _ = _softmax_shifted(g[mask], sigma)
                cur[xi] = soft
            values[t] = cur
            nxt = cur
        return values

    def soft_value(self, weights: Weights, path: ExoPath,
                   rng: np.random.Generator | None = None) -> float:
        stages = self.stage_data(path, rng)
        values = self.soft_values(weights, stages)
        x0 = self._label_index[0][self.spec.instance.initial_label]
        return float(values[0][x0])

    def marginals(self, weights: Weights, path: ExoPath,
                  rng: np.random.Generator | None = None,
                  stages: list[_PoStage] | None = None
                  ) -> list[np.ndarray]:
        """Per-stage Gibbs mass over enumerate_pairs(t); each sums to 1."""
        spec, inst, T = self.spec, self.spec.instance, self.spec.horizon
        sigma = spec.sigma
        stages = stages or self.stage_data(path, rng)
        values = self.soft_values(weights, stages)
        out = []
        occupancy = np.zeros(len(inst.endogenous[0]))
        occupancy[self._label_index[0][inst.initial_label]] = 1.0
        for t in range(T):
            stage = stages[t]
            g = self._pair_values(stage, weights, t)
            if stage.next_index is not None:
                g = g + values[t + 1][stage.next_index]
            p = np.zeros(len(stage.pairs))
            nxt_occ = np.zeros(len(inst.endogenous[t + 1])) if t < T - 1 else None
            for i, (x, _) in enumerate(stage.pairs):
                xi = self._label_index[t][x]
                if occupancy[xi] == 0.0:
                    continue
                # conditional choice probability within state x
                p[i] = occupancy[xi] * np.exp((g[i] - values[t][xi]) / sigma)
                if nxt_occ is not None:
                    nxt_occ[stage.next_index[i]] += p[i]
            out.append(p)
            if nxt_occ is not None:
                occupancy = nxt_occ
        return out

    def value_and_gradient(self, weights: Weights, path: ExoPath,
                           rng: np.random.Generator | None = None
                           ) -> tuple[float, Weights]:
        spec = self.spec
        stages = self.stage_data(path, rng)
        values = self.soft_values(weights, stages)
        x0 = self._label_index[0][spec.instance.initial_label]
        probs = self.marginals(weights, path, stages=stages)
        grad = Weights([np.zeros(spec.basis.width(t)) for t in range(spec.horizon)])
        for t, stage in enumerate(stages):
            if stage.crows is not None:
                grad.blocks[t + 1] += stage.crows.T @ probs[t]
        return float(values[0][x0]), grad

    def hard_values(self, weights: Weights, stages: list[_PoStage]
                    ) -> list[np.ndarray]:
        """Backward max pass: penalized anticipative values over labels.

        Entries are in time-0 units (stage t carries gamma^t); labels with no
        feasible pair at a stage hold -inf.
        """
        inst, T = self.spec.instance, self.spec.horizon
        values: list[np.ndarray] = [None] * T
        nxt = None
        for t in reversed(range(T)):
            stage = stages[t]
            g = self._pair_values(stage, weights, t)
            if stage.next_index is not None:
                g = g + nxt[stage.next_index]
            cur = np.full(len(inst.endogenous[t]), -np.inf)
            for i, (x, _) in enumerate(stage.pairs):
                xi = self._label_index[t][x]
                if g[i] > cur[xi]:
                    cur[xi] = g[i]
            values[t] = cur
            nxt = cur
        return values

    def exact_inner(self, weights: Weights, path: ExoPath,
                    m_eval: int | None = None,
                    rng: np.random.Generator | None = None) -> float:
        """Hard penalized DP along one path (the upper-bound integrand)."""
        spec = self.spec
        if m_eval is not None and m_eval != spec.m_train:
            spec = ObjectiveSpec(spec.kind, spec.sigma, spec.basis, spec.instance,
                                 m_train=m_eval, radius=spec.radius)
            oracle = PoOracle(spec)
            stages = oracle.stage_data(path, rng)
        else:
            oracle = self
            stages = self.stage_data(path, rng)
        values = oracle.hard_values(weights, stages)
        return float(values[0][self._label_index[0][spec.instance.initial_label]])


def po_soft_value(spec: ObjectiveSpec, weights: Weights, path: ExoPath,
                  rng: np.random.Generator | None = None) -> float:
    return PoOracle(spec).soft_value(weights, path, rng)


def po_marginals(spec: ObjectiveSpec, weights: Weights, path: ExoPath,
                 rng: np.random.Generator | None = None) -> list[np.ndarray]:
    return PoOracle(spec).marginals(weights, path, rng)


def po_exact_inner(spec: ObjectiveSpec, weights: Weights, path: ExoPath,
                   m_eval: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    return PoOracle(spec).exact_inner(weights, path, m_eval, rng)


def po_stochastic_gradient(spec: ObjectiveSpec, weights: Weights, path: ExoPath,
                           rng: np.random.Generator | None = None,
                           oracle: PoOracle | None = None
                           ) -> tuple[Weights, float]:
    oracle = oracle or PoOracle(spec)
    value, grad = oracle.value_and_gradient(weights, path, rng)
    return grad, value


def po_expected_objective(spec: ObjectiveSpec, weights: Weights,
                          smooth: bool = True, cap: int = 10**6) -> float:
    """Exact E over exogenous paths of the (soft or hard) inner value."""
    _require_finite(spec.instance)
    oracle = PoOracle(spec)
    total = 0.0
    for path, prob in enumerate_paths(spec.instance, cap):
        if smooth:
            total += prob * oracle.soft_value(weights, path)
        else:
            total += prob * oracle.exact_inner(weights, path)
    return total


def pair_counts(instance: MdpInstance) -> np.ndarray:
    return np.array([len(enumerate_pairs(instance, t))
                     for t in range(instance.horizon)], dtype=np.float64)


@dataclass(frozen=True)
class CurvatureWeights:
    nu: np.ndarray
    provenance: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=np.float64))
        if not (self.nu > 0).all():
            raise ConfigError("curvature weights must be strictly positive")


def _eso_factor(kappa: float, n: int, tau: int) -> float:
    return 1.0 + (kappa - 1.0) * (tau - 1.0) / max(1, n - 1)


def curvature(spec: ObjectiveSpec, n: int, tau: int,
              L: np.ndarray | None = None) -> CurvatureWeights:
    """ESO curvature weights for n blocks under tau-nice sampling.

    Closed forms cover the stage partition (n = T) and the single-block
    partition (n = 1). Any other n requires user-supplied per-component
    block Lipschitz constants L, shaped (components, n).
    """
    if not 1 <= tau <= n:
        raise ConfigError("need 1 <= tau <= n")
    T = spec.horizon
    gamma, sigma = spec.instance.discount, spec.sigma

    if L is not None:
        L = np.asarray(L, dtype=np.float64)
        if L.ndim != 2 or L.shape[1] != n:
            raise ConfigError("L must be shaped (components, n)")
        kappas = (L > 0).sum(axis=1)
        nu = np.zeros(n)
        for j in range(L.shape[0]):
            nu += _eso_factor(kappas[j], n, tau) * L[j]
        return CurvatureWeights(nu, "user-supplied")

    counts = pair_counts(spec.instance)
    if spec.kind == "wtca":
        # per-stage Lipschitz bound gamma^t (1+gamma^2) |U_t| / sigma with
        # coupling width 2 (blocks t and t+1)
        stage_l = counts * (1 + gamma**2) * gamma**np.arange(T) / sigma
        if n == T:
            factor = _eso_factor(2.0, n, tau)
            nu = np.zeros(T)
            for i in range(T):
                for t in (i - 1, i):
                    if 0 <= t < T:
                        nu[i] += factor * stage_l[t]
            return CurvatureWeights(nu, "closed-form wtca")
        if n == 1:
            return CurvatureWeights(np.array([stage_l.sum()]), "closed-form wtca")
        raise ConfigError("closed-form curvature covers n in {1, T} only")

    n_seq = count_action_sequences(spec.instance)
    if n == T:
        if tau == n:
            nu = 4 * T * gamma**(2 * np.arange(T)) * n_seq / sigma
        else:
            nu = np.full(T, 4 * tau * gamma**2 * n_seq / (sigma * (1 - gamma**2)))
        return CurvatureWeights(nu, "closed-form po")
    if n == 1:
        return CurvatureWeights(
            np.array([4 * gamma**2 * n_seq / (sigma * (1 - gamma**2))]),
            "closed-form po")
    raise ConfigError("closed-form curvature covers n in {1, T} only")


def po_curvature_tight(spec: ObjectiveSpec, n: int, tau: int) -> CurvatureWeights:
    """Sequence-count-free curvature for the penalized objective.

    The Gibbs-weighted Hessian of a smoothed max-of-affine is dominated by
    sigma^{-1} max_u a_i(u) a_i(u)^T per block, and every block-i row of the
    penalized objective has norm at most 2 gamma^i. That gives block
    Lipschitz constants 4 gamma^{2i} / sigma independent of how many action
    sequences exist, which is what makes long horizons trainable.
    """
    if spec.kind != "po":
        raise ConfigError("tight curvature applies to the po formulation")
    if not 1 <= tau <= n:
        raise ConfigError("need 1 <= tau <= n")
    T = spec.horizon
    gamma, sigma = spec.instance.discount, spec.sigma
    if n == T:
        L = (4.0 * gamma**(2 * np.arange(T)) / sigma)[None, :]
        return curvature(spec, n, tau, L=L)
    if n == 1:
        total = 4.0 * (gamma**(2 * np.arange(T))).sum() / sigma
        return curvature(spec, 1, 1, L=np.array([[total]]))
    raise ConfigError("tight curvature covers n in {1, T} only")


def wtca_curvature_tight(spec: ObjectiveSpec, n: int, tau: int, *,
                         samples: int = 64, seed: int = 0) -> CurvatureWeights:
    """Curvature from measured family rows instead of pair counts.

    The closed form in curvature() charges every (state, action) pair a unit
    row norm, which is the right order for one-hot bases and far too coarse
    for dense normalized features. The Gibbs Hessian of one stage family is
    bounded per block by gamma^t spread^2 / (4 sigma), where spread is the
    largest row difference inside the block slab (the row common to every
    pair cancels, so a block the family touches uniformly costs nothing).
    Spreads are averaged exactly over the atom marginals for finite support
    and over sampled paths otherwise. Stage partition only.
    """
    if spec.kind != "wtca":
        raise ConfigError("tight curvature here covers the stage-coupled objective")
    if n != spec.horizon:
        raise ConfigError("measured curvature needs the stage partition")
    if samples < 1:
        raise ConfigError("need at least one probe sample")
    from .mdp import sample_path
    from .seeding import stream

    T = spec.horizon
    gamma, sigma = spec.instance.discount, spec.sigma
    oracle = WtcaOracle(spec)
    L = np.zeros((T, n))

    def add(t: int, fam: AffineFamily, prob: float) -> None:
        for b, slab in fam.rows.items():
            diff = slab[:, None, :] - slab[None, :, :]
            spread_sq = float((diff**2).sum(axis=2).max())
            L[t, b] += prob * gamma**t * spread_sq / (4.0 * sigma)

    if isinstance(spec.instance.exogenous, FiniteSupport):
        exo = spec.instance.exogenous
        for t, marginal in enumerate(chain_marginals(spec.instance)):
            for k, prob in enumerate(marginal):
                if prob > 0.0:
                    add(t, oracle.family(t, Obs(exo.atoms[t][k], k)), float(prob))
    else:
        rng = stream(seed, "probe")
        for _ in range(samples):
            path = sample_path(spec.instance, rng=rng)
            for t in range(T):
                add(t, oracle.family(t, path.at(t), rng), 1.0 / samples)

    kappas = (L > 0).sum(axis=1)
    nu = np.zeros(n)
    for j in range(T):
        nu += _eso_factor(kappas[j], n, tau) * L[j]
    if (nu <= 0.0).any():
        # blocks no family touches (block 0 by construction) never receive
        # gradient either; any positive weight keeps the update well defined
        fill = nu[nu > 0.0].min() if (nu > 0.0).any() else 1.0
        nu[nu <= 0.0] = fill
    return CurvatureWeights(nu, "measured wtca")


def make_oracle(spec: ObjectiveSpec):
    return WtcaOracle(spec) if spec.kind == "wtca" else PoOracle(spec)


def chi_squared_estimate(spec: ObjectiveSpec, weights: Weights,
                         nu: CurvatureWeights, n_paths: int,
                         rng: np.random.Generator,
                         inner_rng: np.random.Generator | None = None) -> float:
    """Sample variance of the stochastic gradient in the nu-weighted dual
    norm. Diagnostic only; nothing downstream gates on it."""
    from .mdp import sample_path_batch

    if n_paths < 2:
        raise ConfigError("variance needs at least two paths")
    oracle = make_oracle(spec)
    grads = []
    batch = sample_path_batch(spec.instance, n_paths, rng)
    for i in range(n_paths):
        _, g = oracle.value_and_gradient(weights, batch.path(i), inner_rng)
        grads.append(g)
    T = spec.horizon
    nu_arr = nu.nu
    if nu_arr.shape[0] == T:
        block_of = lambda t: t
    elif nu_arr.shape[0] == 1:
        block_of = lambda t: 0
    else:
        raise ConfigError("curvature length matches neither T nor 1")
    total = 0.0
    for t in range(T):
        stack = np.stack([g.blocks[t] for g in grads])
        centered = stack - stack.mean(axis=0)
        total += (centered**2).sum() / (nu_arr[block_of(t)] * (n_paths - 1))
    return total
