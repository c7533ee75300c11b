import numpy as np
import pytest

from wtca import mdp
from wtca.benches import fixtures


@pytest.fixture(scope="session")
def two_stage_inst():
    return fixtures.two_stage()


@pytest.fixture(scope="session")
def stopping_inst():
    return fixtures.stopping_chain()


@pytest.fixture(scope="session")
def switching_inst():
    return fixtures.switching_chain()


@pytest.fixture(scope="session")
def stopping_solution(stopping_inst):
    return mdp.exact_value(stopping_inst)


def continuous_twin(instance, name="continuous-twin"):
    """Same chain rebuilt on a ContinuousSim that samples by inverse CDF."""
    exo = instance.exogenous

    def step(t, W, rng):
        # recover current atoms from values (scalar supports, exact match)
        cur = np.array([exo.locate(t, w) for w in W])
        u = rng.random(W.shape[0])
        cdfs = np.cumsum(exo.transitions[t], axis=1)
        nxt = np.array([int(np.searchsorted(cdfs[k], ui, side="right"))
                        for k, ui in zip(cur, u)])
        return exo.atoms[t + 1][nxt]

    sim = mdp.ContinuousSim(initial=exo.atoms[0][exo.initial_atom], step=step,
                            dims=tuple(exo.dim(t) for t in range(instance.horizon)))
    return mdp.MdpInstance(
        horizon=instance.horizon, discount=instance.discount,
        endogenous=instance.endogenous, initial_label=instance.initial_label,
        exogenous=sim, actions_of=instance.actions_of,
        transition_of=instance.transition_of, reward_of=instance.reward_of,
        name=name)


def bellman_reference(instance):
    """Independent plain-recursion Bellman oracle (no tables, no vectorization)."""
    exo = instance.exogenous

    def value(t, x, atom):
        if t == instance.horizon:
            return 0.0
        w = exo.atoms[t][atom]
        best = -np.inf
        for a in instance.actions(t, x):
            r = instance.reward(t, x, w, a)
            cont = 0.0
            if t < instance.horizon - 1:
                for j, p in enumerate(exo.transitions[t][atom]):
                    if p == 0.0:
                        continue
                    x2 = instance.step_label(t, x, a, exo.atoms[t + 1][j])
                    cont += p * value(t + 1, x2, j)
            best = max(best, r + instance.discount * cont)
        return best

    return value(0, instance.initial_label, exo.initial_atom)
