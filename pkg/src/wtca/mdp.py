"""Finite-horizon MDP model and exact dynamic-programming oracle.

The state at stage t splits into an endogenous label x_t, which the action
moves deterministically, and an exogenous vector w_t, which follows a Markov
process unaffected by actions. The horizon is T stages 0..T-1, the terminal
value is identically zero, and rewards are discounted by gamma per stage.

Endogenous transitions may read the *next* exogenous value (a barrier option
dies when the next observed price crosses the barrier), so the transition
callable has signature (t, x, a, w_next) with w_next possibly None for
instances that ignore it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, FeasibilityError, SizeError
from .seeding import stream

Label = str
Action = str

__all__ = [
    "Obs",
    "ExoPath",
    "FiniteSupport",
    "ContinuousSim",
    "MdpInstance",
    "DpSolution",
    "endogenous_step",
    "sample_path",
    "sample_path_batch",
    "exact_value",
    "enumerate_pairs",
    "enumerate_paths",
    "count_action_sequences",
    "chain_marginals",
    "reward_scaled",
    "tabular_instance",
    "instance_to_json",
    "instance_from_json",
]


class Obs(NamedTuple):
    """One exogenous observation: vector value plus, on finite-support models,
    the atom index it came from (None for continuous simulators)."""

    value: np.ndarray
    atom: int | None = None


@dataclass(frozen=True)
class ExoPath:
    """An exogenous trajectory (w_0, ..., w_{T-1})."""

    values: tuple[np.ndarray, ...]
    atoms: tuple[int, ...] | None = None

    def __len__(self) -> int:
        return len(self.values)

    def at(self, t: int) -> Obs:
        return Obs(self.values[t], None if self.atoms is None else self.atoms[t])


@dataclass(frozen=True)
class FiniteSupport:
    """Exogenous model on per-stage finite supports with row-stochastic
    stage-to-stage transition matrices."""

    atoms: tuple[np.ndarray, ...]        # stage t -> (n_t, dim_t)
    transitions: tuple[np.ndarray, ...]  # stage t in 0..T-2 -> (n_t, n_{t+1})
    initial_atom: int = 0

    def __post_init__(self) -> None:
        atoms = tuple(np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in self.atoms)
        trans = tuple(np.asarray(p, dtype=np.float64) for p in self.transitions)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "transitions", trans)
        if len(trans) != len(atoms) - 1:
            raise ConfigError("need one transition matrix per stage boundary")
        for t, p in enumerate(trans):
            if p.shape != (atoms[t].shape[0], atoms[t + 1].shape[0]):
                raise ConfigError(f"transition {t} has shape {p.shape}, expected "
                                  f"{(atoms[t].shape[0], atoms[t + 1].shape[0])}")
            if np.any(p < 0):
                raise ConfigError(f"transition {t} has negative entries")
            rows = p.sum(axis=1)
            if np.max(np.abs(rows - 1.0)) > 1e-12:
                raise ConfigError(f"transition {t} rows must sum to 1 within 1e-12")
        if not 0 <= self.initial_atom < atoms[0].shape[0]:
            raise ConfigError("initial atom index out of range")
        # Row CDFs, precomputed for inverse-CDF sampling.
        object.__setattr__(self, "_cdfs", tuple(np.cumsum(p, axis=1) for p in trans))

    @property
    def horizon(self) -> int:
        return len(self.atoms)

    def n_atoms(self, t: int) -> int:
        return self.atoms[t].shape[0]

    def dim(self, t: int) -> int:
        return self.atoms[t].shape[1]

    def sample_next(self, t: int, atom: int, rng: np.random.Generator) -> int:
        cdf = self._cdfs[t][atom]
        return int(np.searchsorted(cdf, rng.random(), side="right"))

    def locate(self, t: int, value: np.ndarray) -> int:
        """Atom index whose vector equals `value` exactly."""
        hits = np.where((self.atoms[t] == np.asarray(value, dtype=np.float64)).all(axis=1))[0]
        if hits.size == 0:
            raise ConfigError(f"value {value!r} is not an atom of stage {t}")
        return int(hits[0])


@dataclass(frozen=True)
class ContinuousSim:
    """Exogenous model given by a one-step simulator.

    `step(t, W, rng)` maps a batch W of shape (n, dim_t) to the next-stage
    batch of shape (n, dim_{t+1}); identical (t, W, stream state) give
    bit-identical output.
    """

    initial: np.ndarray
    step: Callable[[int, np.ndarray, np.random.Generator], np.ndarray]
    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=np.float64))
        if self.initial.shape != (self.dims[0],):
            raise ConfigError("initial vector does not match dims[0]")

    @property
    def horizon(self) -> int:
        return len(self.dims)

    def dim(self, t: int) -> int:
        return self.dims[t]


@dataclass(frozen=True)
class MdpInstance:
    horizon: int
    discount: float
    endogenous: tuple[tuple[Label, ...], ...]
    initial_label: Label
    exogenous: FiniteSupport | ContinuousSim
    actions_of: Callable[[int, Label], tuple[Action, ...]]
    transition_of: Callable[[int, Label, Action, np.ndarray | None], Label]
    reward_of: Callable[[int, Label, np.ndarray, Action], float]
    name: str = "mdp"
    # Optional vectorized variants; fall back to python loops when absent.
    reward_batch_of: Callable[[int, Label, np.ndarray, Action], np.ndarray] | None = None
    transition_batch_of: Callable[[int, Label, Action, np.ndarray], np.ndarray] | None = None
    tabular: dict | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.discount < 1.0:
            raise ConfigError("discount must lie strictly inside (0, 1)")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if len(self.endogenous) != self.horizon:
            raise ConfigError("need one endogenous label set per stage")
        for t, labels in enumerate(self.endogenous):
            if len(set(labels)) != len(labels) or not labels:
                raise ConfigError(f"stage {t} labels must be nonempty and unique")
        if self.initial_label not in self.endogenous[0]:
            raise ConfigError("initial endogenous label not in stage-0 label set")
        if self.exogenous.horizon != self.horizon:
            raise ConfigError("exogenous model horizon does not match")

    # Thin accessors; feasibility checks live in endogenous_step.
    def actions(self, t: int, x: Label) -> tuple[Action, ...]:
        return self.actions_of(t, x)

    def step_label(self, t: int, x: Label, a: Action, w_next: np.ndarray | None) -> Label:
        return self.transition_of(t, x, a, w_next)

    def reward(self, t: int, x: Label, w: np.ndarray, a: Action) -> float:
        return float(self.reward_of(t, x, w, a))

    def reward_batch(self, t: int, x: Label, W: np.ndarray, a: Action) -> np.ndarray:
        if self.reward_batch_of is not None:
            return np.asarray(self.reward_batch_of(t, x, W, a), dtype=np.float64)
        return np.array([self.reward_of(t, x, w, a) for w in W], dtype=np.float64)

    def step_label_batch(self, t: int, x: Label, a: Action, W_next: np.ndarray) -> np.ndarray:
        if self.transition_batch_of is not None:
            return np.asarray(self.transition_batch_of(t, x, a, W_next))
        return np.array([self.transition_of(t, x, a, w) for w in W_next])

    def dim(self, t: int) -> int:
        return self.exogenous.dim(t)

    def initial_obs(self) -> Obs:
        exo = self.exogenous
        if isinstance(exo, FiniteSupport):
            return Obs(exo.atoms[0][exo.initial_atom], exo.initial_atom)
        return Obs(exo.initial, None)

    def label_index(self, t: int) -> dict[Label, int]:
        return {x: i for i, x in enumerate(self.endogenous[t])}


def endogenous_step(instance: MdpInstance, t: int, x: Label, a: Action,
                    w_next: np.ndarray | None = None) -> Label:
    """Deterministic endogenous transition h; rejects infeasible actions."""
    if a not in instance.actions(t, x):
        raise FeasibilityError(f"action {a!r} infeasible at stage {t}, state {x!r}")
    return instance.step_label(t, x, a, w_next)


def sample_path(instance: MdpInstance, seed: int | None = None, *,
                rng: np.random.Generator | None = None) -> ExoPath:
    """One exogenous trajectory; deterministic given the seed or generator."""
    if rng is None:
        rng = stream(0 if seed is None else seed, "path")
    exo = instance.exogenous
    if isinstance(exo, FiniteSupport):
        ks = [exo.initial_atom]
        for t in range(instance.horizon - 1):
            ks.append(exo.sample_next(t, ks[-1], rng))
        return ExoPath(tuple(exo.atoms[t][k] for t, k in enumerate(ks)), tuple(ks))
    w = exo.initial[None, :]
    values = [exo.initial]
    for t in range(instance.horizon - 1):
        w = exo.step(t, w, rng)
        values.append(w[0])
    return ExoPath(tuple(values), None)


@dataclass(frozen=True)
class PathBatch:
    """n exogenous trajectories stored stage-major for vectorized consumers."""

    values: tuple[np.ndarray, ...]             # stage t -> (n, dim_t)
    atoms: tuple[np.ndarray, ...] | None = None  # stage t -> (n,), FiniteSupport only

    @property
    def n_paths(self) -> int:
        return self.values[0].shape[0]

    def path(self, i: int) -> ExoPath:
        atoms = None if self.atoms is None else tuple(int(k[i]) for k in self.atoms)
        return ExoPath(tuple(v[i] for v in self.values), atoms)


def sample_path_batch(instance: MdpInstance, n: int,
                      rng: np.random.Generator) -> PathBatch:
    exo = instance.exogenous
    T = instance.horizon
    if isinstance(exo, FiniteSupport):
        ks = [np.full(n, exo.initial_atom, dtype=np.intp)]
        for t in range(T - 1):
            u = rng.random(n)
            cdf = exo._cdfs[t]
            nxt = np.empty(n, dtype=np.intp)
            for atom in np.unique(ks[-1]):
                sel = ks[-1] == atom
                nxt[sel] = np.searchsorted(cdf[atom], u[sel], side="right")
            ks.append(nxt)
        values = tuple(exo.atoms[t][ks[t]] for t in range(T))
        return PathBatch(values, tuple(ks))
    W = np.tile(exo.initial, (n, 1))
    values = [W]
    for t in range(T - 1):
        W = exo.step(t, W, rng)
        values.append(W)
    return PathBatch(tuple(values), None)


@dataclass(frozen=True)
class DpSolution:
    """Exact backward-induction solution on a finite-support instance."""

    value: float
    tables: tuple[np.ndarray, ...]   # stage t -> (|X_t|, n_t) optimal values
    policy: tuple[np.ndarray, ...]   # stage t -> (|X_t|, n_t) argmax action index

    def value_at(self, instance: MdpInstance, t: int, x: Label, atom: int) -> float:
        return float(self.tables[t][instance.label_index(t)[x], atom])


def exact_value(instance: MdpInstance, cap: int = 10**6) -> DpSolution:
    """Backward Bellman recursion over (t, x, atom); finite support only."""
    exo = instance.exogenous
    if not isinstance(exo, FiniteSupport):
        raise ConfigError("exact_value needs a FiniteSupport exogenous model")
    T, gamma = instance.horizon, instance.discount
    total = sum(len(instance.endogenous[t]) * exo.n_atoms(t) for t in range(T))
    if total > cap:
        raise SizeError(f"{total} (t,x,atom) triples exceed cap {cap}")

    tables: list[np.ndarray] = [None] * T  # type: ignore[list-item]
    policy: list[np.ndarray] = [None] * T  # type: ignore[list-item]
    next_table = None  # (|X_{t+1}|, n_{t+1})
    for t in range(T - 1, -1, -1):
        labels = instance.endogenous[t]
        n_atoms = exo.n_atoms(t)
        vals = np.full((len(labels), n_atoms), -np.inf)
        args = np.zeros((len(labels), n_atoms), dtype=np.intp)
        for ix, x in enumerate(labels):
            acts = instance.actions(t, x)
            if not acts:
                raise ConfigError(f"no feasible action at stage {t}, state {x!r}")
            for k in range(n_atoms):
                w = exo.atoms[t][k]
                best, best_a = -np.inf, 0
                for ia, a in enumerate(acts):
                    q = instance.reward(t, x, w, a)
                    if t < T - 1:
                        idx_next = instance.label_index(t + 1)
                        row = exo.transitions[t][k]
                        cont = 0.0
                        for k2 in np.nonzero(row)[0]:
                            x2 = instance.step_label(t, x, a, exo.atoms[t + 1][k2])
                            cont += row[k2] * next_table[idx_next[x2], k2]
                        q += gamma * cont
                    if q > best:
                        best, best_a = q, ia
                vals[ix, k] = best
                args[ix, k] = best_a
        tables[t] = vals
        policy[t] = args
        next_table = vals
    ix0 = instance.label_index(0)[instance.initial_label]
    return DpSolution(float(tables[0][ix0, exo.initial_atom]),
                      tuple(tables), tuple(policy))


def enumerate_pairs(instance: MdpInstance, t: int) -> tuple[tuple[Label, Action], ...]:
    """Feasible (x, a) pairs at stage t in (label index, action index) order.

    At t=0 the endogenous state is pinned to the initial label, so only its
    actions appear. This ordering defines the index set used everywhere
    downstream (affine families, marginals, tie-breaking).
    """
    if not 0 <= t < instance.horizon:
        raise ConfigError(f"stage {t} outside horizon {instance.horizon}")
    if t == 0:
        x0 = instance.initial_label
        return tuple((x0, a) for a in instance.actions(0, x0))
    return tuple((x, a)
                 for x in instance.endogenous[t]
                 for a in instance.actions(t, x))


def enumerate_paths(instance: MdpInstance, cap: int = 10**6) -> Iterator[tuple[ExoPath, float]]:
    """All exogenous trajectories with positive probability, with weights."""
    exo = instance.exogenous
    if not isinstance(exo, FiniteSupport):
        raise ConfigError("enumerate_paths needs a FiniteSupport exogenous model")
    T = instance.horizon
    count = 1.0
    for t in range(T - 1):
        count *= max(1, int(np.count_nonzero(exo.transitions[t], axis=1).max()))
        if count > cap:
            raise SizeError(f"path count exceeds cap {cap}")

    def walk(t: int, ks: list[int], prob: float) -> Iterator[tuple[ExoPath, float]]:
        if t == T - 1:
            yield ExoPath(tuple(exo.atoms[s][k] for s, k in enumerate(ks)), tuple(ks)), prob
            return
        row = exo.transitions[t][ks[-1]]
        for k2 in np.nonzero(row)[0]:
            yield from walk(t + 1, ks + [int(k2)], prob * row[k2])

    yield from walk(0, [exo.initial_atom], 1.0)


def count_action_sequences(instance: MdpInstance) -> float:
    """Number of feasible action sequences, counted by forward recursion.

    Transitions are resolved with w_next=None; models whose endogenous step
    branches on the next exogenous value must treat None as the
    maximal-branching case, which makes this an upper bound there.
    """
    T = instance.horizon
    counts: dict[Label, float] = {x: float(len(instance.actions(T - 1, x)))
                                  for x in instance.endogenous[T - 1]}
    for t in range(T - 2, -1, -1):
        counts = {
            x: float(sum(counts[instance.step_label(t, x, a, None)]
                         for a in instance.actions(t, x)))
            for x in instance.endogenous[t]
        }
    return counts[instance.initial_label]


def reward_scaled(instance: MdpInstance, factor: float) -> MdpInstance:
    """View of the instance with every reward multiplied by factor.

    Training at payoff scale lambda runs on reward_scaled(inst, 1/lambda)
    and multiplies the fitted weights back by lambda; greedy decisions are
    invariant under that pairing. The tabular document is dropped because
    it would describe the unscaled rewards.
    """
    if factor <= 0.0:
        raise ConfigError("reward scale factor must be positive")
    base_reward, base_batch = instance.reward_of, instance.reward_batch_of
    return replace(
        instance,
        reward_of=lambda t, x, w, a: factor * base_reward(t, x, w, a),
        reward_batch_of=None if base_batch is None else (
            lambda t, x, W, a: factor * np.asarray(base_batch(t, x, W, a))),
        tabular=None,
    )


def chain_marginals(instance: MdpInstance) -> tuple[np.ndarray, ...]:
    """Per-stage atom distributions of the finite-support chain."""
    exo = instance.exogenous
    if not isinstance(exo, FiniteSupport):
        raise ConfigError("chain_marginals needs a FiniteSupport exogenous model")
    p = np.zeros(exo.n_atoms(0))
    p[exo.initial_atom] = 1.0
    out = [p]
    for t in range(instance.horizon - 1):
        p = p @ exo.transitions[t]
        out.append(p)
    return tuple(out)


# ---------------------------------------------------------------------------
# Tabular construction and JSON round-trip


def tabular_instance(T: int, gamma: float, stages: Sequence[dict],
                     endogenous: Sequence[dict], rewards: Sequence[dict],
                     initial: dict, name: str = "fixture") -> MdpInstance:
    """Build an instance from pure tables (the fixture JSON schema).

    stages[t]:    {"atoms": [[...], ...], "transition": [[...], ...] | None}
    endogenous[t]: {"labels": [...], "actions": {x: [a, ...]},
                    "step": {x: {a: next label}}}   (step unused at t=T-1)
    rewards[t]:   {x: {a: [reward per atom]}}
    initial:      {"x": label, "atom": index}
    """
    atoms = tuple(np.asarray(stages[t]["atoms"], dtype=np.float64) for t in range(T))
    transitions = tuple(np.asarray(stages[t]["transition"], dtype=np.float64)
                        for t in range(T - 1))
    exo = FiniteSupport(atoms, transitions, initial_atom=int(initial["atom"]))

    labels = tuple(tuple(endogenous[t]["labels"]) for t in range(T))
    act_tables = [dict(endogenous[t]["actions"]) for t in range(T)]
    step_tables = [dict(endogenous[t].get("step") or {}) for t in range(T)]
    reward_tables = [
        {x: {a: np.asarray(rs, dtype=np.float64) for a, rs in per_x.items()}
         for x, per_x in rewards[t].items()}
        for t in range(T)
    ]

    for t in range(T):
        for x in labels[t]:
            if not act_tables[t].get(x):
                raise ConfigError(f"stage {t} state {x!r} has no feasible actions")
            for a in act_tables[t][x]:
                if t < T - 1:
                    x2 = step_tables[t].get(x, {}).get(a)
                    if x2 not in labels[t + 1]:
                        raise ConfigError(f"step table maps ({t},{x},{a}) to {x2!r}, "
                                          f"not a stage-{t + 1} label")
                r = reward_tables[t].get(x, {}).get(a)
                if r is None or len(r) != exo.n_atoms(t):
                    raise ConfigError(f"reward table missing or wrong length at ({t},{x},{a})")

    atom_lookup = [{k: i for i, k in enumerate(map(tuple, atoms[t]))} for t in range(T)]

    def actions_of(t: int, x: Label) -> tuple[Action, ...]:
        return tuple(act_tables[t][x])

    def transition_of(t: int, x: Label, a: Action, w_next) -> Label:
        return step_tables[t][x][a]

    def reward_of(t: int, x: Label, w: np.ndarray, a: Action) -> float:
        return float(reward_tables[t][x][a][atom_lookup[t][tuple(np.asarray(w, dtype=np.float64))]])

    def reward_batch_of(t: int, x: Label, W: np.ndarray, a: Action) -> np.ndarray:
        table = reward_tables[t][x][a]
        idx = [atom_lookup[t][tuple(w)] for w in np.asarray(W, dtype=np.float64)]
        return table[idx]

    doc = {
        "T": T, "gamma": float(gamma), "name": name,
        "initial": {"x": initial["x"], "atom": int(initial["atom"])},
        "stages": [{"atoms": np.asarray(stages[t]["atoms"], dtype=np.float64).tolist(),
                    "transition": (np.asarray(stages[t]["transition"], dtype=np.float64).tolist()
                                   if t < T - 1 else None)}
                   for t in range(T)],
        "endogenous": [{"labels": list(labels[t]),
                        "actions": {x: list(act_tables[t][x]) for x in labels[t]},
                        "step": {x: dict(step_tables[t].get(x, {})) for x in labels[t]}}
                       for t in range(T)],
        "rewards": [{x: {a: reward_tables[t][x][a].tolist() for a in act_tables[t][x]}
                     for x in labels[t]} for t in range(T)],
    }

    return MdpInstance(
        horizon=T, discount=float(gamma), endogenous=labels,
        initial_label=initial["x"], exogenous=exo,
        actions_of=actions_of, transition_of=transition_of, reward_of=reward_of,
        reward_batch_of=reward_batch_of, name=name, tabular=doc,
    )


def instance_to_json(instance: MdpInstance) -> str:
    if instance.tabular is None:
        raise ConfigError("only tabular (FiniteSupport) instances serialize to JSON")
    return json.dumps(instance.tabular, indent=1)


def instance_from_json(text: str) -> MdpInstance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"fixture document is not valid JSON: {exc}") from exc
    for key in ("T", "gamma", "stages", "endogenous", "rewards", "initial"):
        if key not in doc:
            raise ConfigError(f"fixture document missing key {key!r}")
    return tabular_instance(int(doc["T"]), float(doc["gamma"]), doc["stages"],
                            doc["endogenous"], doc["rewards"], doc["initial"],
                            name=doc.get("name", "fixture"))
