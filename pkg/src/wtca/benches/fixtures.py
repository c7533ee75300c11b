"""Small finite-support instances with hand-checkable optimal values.

These are the oracle problems used throughout the test suite: stopping
chains, two-mode switching chains, single-action chains, and randomized
instances small enough for brute-force enumeration.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..mdp import MdpInstance, tabular_instance
from ..seeding import stream

__all__ = [
    "two_stage",
    "single_chain",
    "stopping_chain",
    "switching_chain",
    "random_fixture",
    "make_finite_fixture",
]

# Discounts below are capped just under 1: the undiscounted textbook examples
# stay inside the strict gamma in (0,1) contract at <= 1e-9 error.
NEAR_ONE = 1.0 - 1e-12


def two_stage() -> MdpInstance:
    """Stop now for 4, or wait for a coin flip over {0, 10}. Optimum 5."""
    stages = [
        {"atoms": [[4.0]], "transition": [[0.5, 0.5]]},
        {"atoms": [[0.0], [10.0]], "transition": None},
    ]
    endogenous = [
        {"labels": ["open"], "actions": {"open": ["stop", "continue"]},
         "step": {"open": {"stop": "done", "continue": "open"}}},
        {"labels": ["open", "done"],
         "actions": {"open": ["stop", "continue"], "done": ["hold"]}},
    ]
    rewards = [
        {"open": {"stop": [4.0], "continue": [0.0]}},
        {"open": {"stop": [0.0, 10.0], "continue": [0.0, 0.0]},
         "done": {"hold": [0.0, 0.0]}},
    ]
    return tabular_instance(2, NEAR_ONE, stages, endogenous, rewards,
                            {"x": "open", "atom": 0}, name="two-stage")


def single_chain(T: int = 4, gamma: float = 0.9) -> MdpInstance:
    """One state, one action, deterministic chain paying t+1 at stage t."""
    stages = []
    for t in range(T):
        stages.append({"atoms": [[float(t + 1)]],
                       "transition": None if t == T - 1 else [[1.0]]})
    endogenous = [{"labels": ["go"], "actions": {"go": ["advance"]},
                   "step": {"go": {"advance": "go"}}} for _ in range(T)]
    rewards = [{"go": {"advance": [float(t + 1)]}} for t in range(T)]
    return tabular_instance(T, gamma, stages, endogenous, rewards,
                            {"x": "go", "atom": 0}, name="single-chain")


def _row_stochastic(rng: np.random.Generator, n: int, m: int) -> list[list[float]]:
    raw = rng.uniform(0.2, 1.0, size=(n, m))
    return (raw / raw.sum(axis=1, keepdims=True)).tolist()


def stopping_chain(T: int = 5, n_atoms: int = 4, gamma: float = 0.95,
                   seed: int = 20240, scale: float = 1.0) -> MdpInstance:
    """Optimal-stopping chain: stop pays the current scalar atom, once.

    scale multiplies the atom values (and with them every reward and the
    optimal value). Small scales keep the weight space close to the origin,
    which shortens first-order training on an otherwise identical instance.
    """
    if scale <= 0.0:
        raise ConfigError("scale must be positive")
    rng = stream(seed, "fixture")
    stages = []
    for t in range(T):
        vals = np.sort(rng.uniform(0.0, 10.0, size=n_atoms)) * scale
        stages.append({"atoms": [[float(v)] for v in vals],
                       "transition": None if t == T - 1 else
                       _row_stochastic(rng, n_atoms, n_atoms)})
    endogenous, rewards = [], []
    for t in range(T):
        labels = ["open"] if t == 0 else ["open", "done"]
        actions = {"open": ["stop", "continue"]}
        step = {"open": {"stop": "done", "continue": "open"}}
        stop_pay = [row[0] for row in stages[t]["atoms"]]
        table = {"open": {"stop": stop_pay, "continue": [0.0] * n_atoms}}
        if t > 0:
            actions["done"] = ["hold"]
            step["done"] = {"hold": "done"}
            table["done"] = {"hold": [0.0] * n_atoms}
        endogenous.append({"labels": labels, "actions": actions, "step": step})
        rewards.append(table)
    return tabular_instance(T, gamma, stages, endogenous, rewards,
                            {"x": "open", "atom": 0}, name="stopping-chain")


def switching_chain(T: int = 4, n_atoms: int = 3, gamma: float = 0.9,
                    switch_cost: float = 0.4, seed: int = 31) -> MdpInstance:
    """Two-mode chain: hi earns the atom value, lo earns a third of it,
    switching modes costs a fee. Every pair stays feasible, so |U_t| = 4."""
    rng = stream(seed, "fixture")
    stages = []
    for t in range(T):
        vals = rng.uniform(-1.0, 3.0, size=n_atoms)
        stages.append({"atoms": [[float(v)] for v in vals],
                       "transition": None if t == T - 1 else
                       _row_stochastic(rng, n_atoms, n_atoms)})
    endogenous, rewards = [], []
    for t in range(T):
        vals = [row[0] for row in stages[t]["atoms"]]
        endogenous.append({
            "labels": ["lo", "hi"],
            "actions": {"lo": ["stay", "switch"], "hi": ["stay", "switch"]},
            "step": {"lo": {"stay": "lo", "switch": "hi"},
                     "hi": {"stay": "hi", "switch": "lo"}},
        })
        rewards.append({
            "lo": {"stay": [v / 3.0 for v in vals],
                   "switch": [v / 3.0 - switch_cost for v in vals]},
            "hi": {"stay": list(vals),
                   "switch": [v - switch_cost for v in vals]},
        })
    return tabular_instance(T, gamma, stages, endogenous, rewards,
                            {"x": "lo", "atom": 0}, name="switching-chain")


def random_fixture(seed: int, T: int | None = None, max_labels: int = 3,
                   max_actions: int = 3, max_atoms: int = 3) -> MdpInstance:
    """Randomized small instance for enumeration oracles.

    Per-stage label counts, per-state action sets, transition rows, rewards
    and atom values are all drawn from the seed. Every state keeps at least
    one feasible action and every action maps into the next stage's labels.
    """
    rng = stream(seed, "fixture")
    if T is None:
        T = int(rng.integers(2, 7))
    gamma = float(rng.uniform(0.8, 0.99))
    n_labels = [int(rng.integers(1, max_labels + 1)) for _ in range(T)]
    label_names = [[f"s{i}" for i in range(n)] for n in n_labels]
    action_names = ["a", "b", "c"][:max_actions]

    stages, endogenous, rewards = [], [], []
    for t in range(T):
        n_at = int(rng.integers(2, max_atoms + 1))
        atoms = rng.uniform(-2.0, 2.0, size=(n_at, 1))
        stages.append({"atoms": atoms.tolist(), "transition": None})
        actions, step, table = {}, {}, {}
        for x in label_names[t]:
            k = int(rng.integers(1, len(action_names) + 1))
            acts = action_names[:k]
            actions[x] = list(acts)
            if t < T - 1:
                step[x] = {a: label_names[t + 1][int(rng.integers(0, n_labels[t + 1]))]
                           for a in acts}
            table[x] = {a: rng.uniform(-1.0, 1.0, size=n_at).tolist() for a in acts}
        endogenous.append({"labels": list(label_names[t]), "actions": actions,
                           "step": step})
        rewards.append(table)
    for t in range(T - 1):
        n0 = len(stages[t]["atoms"])
        n1 = len(stages[t + 1]["atoms"])
        stages[t]["transition"] = _row_stochastic(rng, n0, n1)
    x0 = label_names[0][int(rng.integers(0, n_labels[0]))]
    atom0 = int(rng.integers(0, len(stages[0]["atoms"])))
    return tabular_instance(T, gamma, stages, endogenous, rewards,
                            {"x": x0, "atom": atom0}, name=f"random-{seed}")


_KINDS = {
    "two-stage": two_stage,
    "single-chain": single_chain,
    "stopping-chain": stopping_chain,
    "switching-chain": switching_chain,
    "random": random_fixture,
}


def make_finite_fixture(spec: dict) -> MdpInstance:
    """Build a named fixture from {"kind": ..., **params}."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    maker = _KINDS.get(kind)
    if maker is None:
        raise ConfigError(f"unknown fixture kind {kind!r}; choose from "
                          f"{sorted(_KINDS)}")
    try:
        return maker(**spec)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for fixture {kind!r}: {exc}") from exc
