"""MDP core: construction, sampling, exact DP oracle, enumeration."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wtca import mdp
from wtca.benches import fixtures
from wtca.errors import ConfigError, FeasibilityError, SizeError
from wtca.seeding import stream

from conftest import bellman_reference


def test_discount_strictly_inside_unit_interval():
    inst = fixtures.single_chain()
    for bad in (0.0, 1.0, 1.2, -0.1):
        with pytest.raises(ConfigError):
            mdp.MdpInstance(
                horizon=inst.horizon, discount=bad, endogenous=inst.endogenous,
                initial_label=inst.initial_label, exogenous=inst.exogenous,
                actions_of=inst.actions_of, transition_of=inst.transition_of,
                reward_of=inst.reward_of, name="bad")


def test_transition_rows_must_be_stochastic():
    with pytest.raises(ConfigError):
        mdp.FiniteSupport(atoms=(np.zeros((2, 1)), np.zeros((2, 1))),
                          transitions=(np.array([[0.6, 0.5], [0.5, 0.5]]),))
    with pytest.raises(ConfigError):
        mdp.FiniteSupport(atoms=(np.zeros((2, 1)), np.zeros((2, 1))),
                          transitions=(np.array([[1.1, -0.1], [0.5, 0.5]]),))


def test_endogenous_step_rejects_infeasible(stopping_inst):
    with pytest.raises(FeasibilityError) as err:
        mdp.endogenous_step(stopping_inst, 1, "done", "stop")
    msg = str(err.value)
    assert "1" in msg and "done" in msg and "stop" in msg


def test_endogenous_step_moves_along_table(stopping_inst):
    assert mdp.endogenous_step(stopping_inst, 0, "open", "stop") == "done"
    assert mdp.endogenous_step(stopping_inst, 0, "open", "continue") == "open"


def test_sample_path_deterministic_in_seed(stopping_inst):
    p1 = mdp.sample_path(stopping_inst, seed=123)
    p2 = mdp.sample_path(stopping_inst, seed=123)
    p3 = mdp.sample_path(stopping_inst, seed=124)
    assert p1.atoms == p2.atoms
    for a, b in zip(p1.values, p2.values):
        assert np.array_equal(a, b)
    assert len(p1) == stopping_inst.horizon
    assert any(x != y for x, y in zip(p1.atoms, p3.atoms)) or p1.atoms != p3.atoms


def test_identity_chain_repeats_initial_atom():
    stages = [{"atoms": [[1.0], [2.0]],
               "transition": [[1.0, 0.0], [0.0, 1.0]] if t < 2 else None}
              for t in range(3)]
    endo = [{"labels": ["s"], "actions": {"s": ["a"]},
             "step": {"s": {"a": "s"}}} for _ in range(3)]
    rew = [{"s": {"a": [0.0, 0.0]}} for _ in range(3)]
    inst = mdp.tabular_instance(3, 0.9, stages, endo, rew, {"x": "s", "atom": 1})
    path = mdp.sample_path(inst, seed=7)
    assert path.atoms == (1, 1, 1)
    assert all(v[0] == 2.0 for v in path.values)


def test_path_batch_matches_single_paths(stopping_inst):
    batch = mdp.sample_path_batch(stopping_inst, 6, stream(99, "path"))
    assert batch.n_paths == 6
    for i in range(6):
        p = batch.path(i)
        assert len(p) == stopping_inst.horizon
        for t in range(stopping_inst.horizon):
            assert p.atoms[t] < stopping_inst.exogenous.n_atoms(t)
            np.testing.assert_array_equal(
                p.values[t], stopping_inst.exogenous.atoms[t][p.atoms[t]])


def test_sample_path_marginals_match_chain(stopping_inst):
    n = 10**5
    batch = mdp.sample_path_batch(stopping_inst, n, stream(5, "path"))
    marg = mdp.chain_marginals(stopping_inst)
    for t in range(stopping_inst.horizon):
        counts = np.bincount(batch.atoms[t],
                             minlength=stopping_inst.exogenous.n_atoms(t))
        tv = 0.5 * np.abs(counts / n - marg[t]).sum()
        assert tv <= 4.0 / np.sqrt(n)


def test_exact_value_two_stage(two_stage_inst):
    sol = mdp.exact_value(two_stage_inst)
    assert abs(sol.value - 5.0) <= 1e-9


def test_exact_value_one_stage_single_action():
    stages = [{"atoms": [[0.0]], "transition": None}]
    endo = [{"labels": ["s"], "actions": {"s": ["a"]}, "step": {}}]
    rew = [{"s": {"a": [5.0]}}]
    inst = mdp.tabular_instance(1, 0.5, stages, endo, rew, {"x": "s", "atom": 0})
    assert mdp.exact_value(inst).value == 5.0


def test_exact_value_zero_rewards_is_zero():
    inst = fixtures.single_chain()
    zeroed = [{"go": {"advance": [0.0]}} for _ in range(inst.horizon)]
    doc = json.loads(mdp.instance_to_json(inst))
    doc["rewards"] = zeroed
    zinst = mdp.instance_from_json(json.dumps(doc))
    assert mdp.exact_value(zinst).value == 0.0


def test_exact_value_single_chain_closed_form():
    inst = fixtures.single_chain(T=4, gamma=0.9)
    expect = sum(0.9**t * (t + 1) for t in range(4))
    assert abs(mdp.exact_value(inst).value - expect) < 1e-12


@pytest.mark.parametrize("seed", range(8))
def test_exact_value_matches_plain_recursion(seed):
    inst = fixtures.random_fixture(seed)
    assert abs(mdp.exact_value(inst).value - bellman_reference(inst)) < 1e-10


def test_exact_value_monotone_in_discount():
    base = fixtures.stopping_chain(gamma=0.95)
    lower = fixtures.stopping_chain(gamma=0.6)
    assert mdp.exact_value(lower).value <= mdp.exact_value(base).value + 1e-12


def test_exact_value_invariant_under_relabeling(stopping_inst):
    doc = json.loads(mdp.instance_to_json(stopping_inst))
    rename = {"open": "alpha", "done": "omega"}
    for t in range(doc["T"]):
        e = doc["endogenous"][t]
        e["labels"] = [rename[x] for x in e["labels"]]
        e["actions"] = {rename[x]: a for x, a in e["actions"].items()}
        e["step"] = {rename[x]: {a: rename[x2] for a, x2 in m.items()}
                     for x, m in e["step"].items()}
        doc["rewards"][t] = {rename[x]: r for x, r in doc["rewards"][t].items()}
    doc["initial"]["x"] = "alpha"
    relabeled = mdp.instance_from_json(json.dumps(doc))
    assert abs(mdp.exact_value(relabeled).value
               - mdp.exact_value(stopping_inst).value) < 1e-12


def test_exact_value_cap_raises_size_error(stopping_inst):
    with pytest.raises(SizeError):
        mdp.exact_value(stopping_inst, cap=3)


def test_exact_value_tables_and_policy(stopping_inst, stopping_solution):
    sol = stopping_solution
    T = stopping_inst.horizon
    assert len(sol.tables) == T and len(sol.policy) == T
    # last stage: stopping when open pays the atom, so the value table is the
    # positive part of the atom values
    atoms = stopping_inst.exogenous.atoms[T - 1][:, 0]
    np.testing.assert_allclose(sol.tables[T - 1][0], np.maximum(atoms, 0.0))
    assert sol.value == pytest.approx(sol.value_at(stopping_inst, 0, "open",
                                                   stopping_inst.exogenous.initial_atom))


def test_enumerate_pairs_order_and_t0(stopping_inst):
    assert mdp.enumerate_pairs(stopping_inst, 0) == (("open", "stop"), ("open", "continue"))
    assert mdp.enumerate_pairs(stopping_inst, 2) == (
        ("open", "stop"), ("open", "continue"), ("done", "hold"))


def test_enumerate_paths_probabilities_sum_to_one(stopping_inst):
    paths = list(mdp.enumerate_paths(stopping_inst))
    assert len(paths) == 4**4  # initial atom fixed, 4 choices at each later stage
    total = sum(p for _, p in paths)
    assert abs(total - 1.0) < 1e-12
    seen = {tuple(path.atoms) for path, _ in paths}
    assert len(seen) == len(paths)


def test_enumerate_paths_cap():
    with pytest.raises(SizeError):
        list(mdp.enumerate_paths(fixtures.stopping_chain(), cap=10))


def test_count_action_sequences_stopping(stopping_inst):
    # stop at one of the 5 stages, or continue through all of them
    assert mdp.count_action_sequences(stopping_inst) == 6.0


def test_chain_marginals_sum_to_one(switching_inst):
    for m in mdp.chain_marginals(switching_inst):
        assert abs(m.sum() - 1.0) < 1e-12
        assert (m >= 0).all()


def test_fixture_json_roundtrip_bit_exact(stopping_inst):
    text = mdp.instance_to_json(stopping_inst)
    again = mdp.instance_to_json(mdp.instance_from_json(text))
    assert text == again


def test_instance_from_json_rejects_garbage():
    with pytest.raises(ConfigError):
        mdp.instance_from_json("{not json")
    with pytest.raises(ConfigError):
        mdp.instance_from_json(json.dumps({"T": 2}))


def test_make_finite_fixture_dispatch():
    inst = fixtures.make_finite_fixture({"kind": "stopping-chain", "T": 3})
    assert inst.horizon == 3
    with pytest.raises(ConfigError):
        fixtures.make_finite_fixture({"kind": "nope"})
    with pytest.raises(ConfigError):
        fixtures.make_finite_fixture({"kind": "stopping-chain", "bogus": 1})


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_random_fixture_valid_and_solvable(seed):
    inst = fixtures.random_fixture(seed)
    assert 2 <= inst.horizon <= 6
    sol = mdp.exact_value(inst)
    assert np.isfinite(sol.value)
    # feasibility: every tabled action leads to a next-stage label
    for t in range(inst.horizon - 1):
        for x in inst.endogenous[t]:
            for a in inst.actions(t, x):
                assert inst.step_label(t, x, a, None) in inst.endogenous[t + 1]


def test_stream_registry_rejects_unknown():
    with pytest.raises(KeyError):
        stream(1, "no-such-stream")
    with pytest.raises(ValueError):
        stream(1, "path", -1)


def test_streams_distinct_and_reproducible():
    a = stream(42, "path").random(3)
    b = stream(42, "path").random(3)
    c = stream(42, "inner").random(3)
    d = stream(43, "path").random(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
