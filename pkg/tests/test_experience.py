"""Factored experience store tests."""

import numpy as np
import pytest

from fcps.errors import ContractError
from fcps.experience import (
    AugmentedSample,
    Context,
    ExperienceStore,
    Outcome,
    RolloutRecord,
    her_augment,
    reevaluate,
    reevaluate_targets,
)
from fcps.optim import SearchSpace


class DistanceReward:
    """-||target - achieved|| - 0.05 v^2 with v stored as the last stat."""

    def __call__(self, target, outcome, params):
        return float(self.batch(np.asarray(target)[None, :],
                                outcome.stats[None, :], params[None, :])[0])

    def batch(self, targets, stats, params):
        delta = targets - stats[:, :2]
        dist = np.sqrt(np.sum(delta * delta, axis=1))
        return -dist - 0.05 * stats[:, 2] * stats[:, 2]


def make_record(i):
    outcome = Outcome(stats=[1.0 + i, 2.0, 0.5 + 0.1 * i],
                      achieved_target=[1.0 + i, 2.0])
    reward = DistanceReward()(np.array([0.0, 0.0]), outcome,
                              np.array([0.3, 0.4, 0.5 + 0.1 * i]))
    return RolloutRecord(env_context=[0.2 * i], params=[0.3, 0.4, 0.5 + 0.1 * i],
                         outcome=outcome, actual_reward=reward)


def test_context_split_and_round_trip():
    c = Context(target=[1.0, 2.0], env=[3.0])
    assert np.array_equal(c.full, [1.0, 2.0, 3.0])
    back = Context.from_full(c.full, env_dim=1)
    assert np.array_equal(back.target, c.target)
    assert np.array_equal(back.env, c.env)
    empty_env = Context(target=[1.0, 2.0], env=np.zeros(0))
    assert empty_env.full.shape == (2,)
    with pytest.raises(ContractError):
        Context.from_full(np.zeros(2), env_dim=3)
    with pytest.raises(ContractError):
        Context(target=[np.nan], env=[])


def test_context_validate_against_boxes():
    c = Context(target=[0.5, 0.5], env=[2.0])
    c.validate(SearchSpace([0.0, 0.0], [1.0, 1.0]), SearchSpace([0.0], [3.0]))
    with pytest.raises(ContractError):
        c.validate(SearchSpace([0.0, 0.0], [0.4, 1.0]), None)
    with pytest.raises(ContractError):
        c.validate(None, SearchSpace([0.0], [1.0]))


def test_record_validation_and_immutability():
    r = make_record(0)
    assert not r.params.flags.writeable
    assert not r.outcome.stats.flags.writeable
    with pytest.raises(ContractError):
        RolloutRecord(env_context=[0.0], params=[0.0], outcome="not an outcome",
                      actual_reward=0.0)
    with pytest.raises(ContractError):
        RolloutRecord(env_context=[0.0], params=[0.0],
                      outcome=Outcome([0.0], [0.0]), actual_reward=np.nan)
    raw = np.array([1.0, 2.0])
    rec = RolloutRecord(env_context=raw, params=[0.0],
                        outcome=Outcome([0.0], [0.0]), actual_reward=0.0)
    raw[0] = 99.0
    assert rec.env_context[0] == 1.0 and raw.flags.writeable


def test_store_append_order_and_views():
    store = ExperienceStore()
    for i in range(4):
        store.append(make_record(i))
    assert len(store) == 4
    assert store.env_contexts().shape == (4, 1)
    assert store.params().shape == (4, 3)
    assert store.outcome_stats().shape == (4, 3)
    assert store.achieved_targets().shape == (4, 2)
    assert store.reduced_inputs().shape == (4, 4)
    assert np.array_equal(store.reduced_inputs()[:, 0], store.env_contexts()[:, 0])
    assert np.allclose([r.env_context[0] for r in store], [0.0, 0.2, 0.4, 0.6])


def test_store_space_validation():
    store = ExperienceStore(env_space=SearchSpace([0.0], [1.0]),
                            param_space=SearchSpace([0.0] * 3, [1.0] * 3))
    store.append(make_record(1))
    with pytest.raises(ContractError):
        store.append(RolloutRecord(env_context=[2.0], params=[0.0] * 3,
                                   outcome=Outcome([0.0] * 3, [0.0] * 2),
                                   actual_reward=0.0))
    bad_params = RolloutRecord(env_context=[0.0], params=[0.0, 0.0, 7.0],
                               outcome=Outcome([0.0] * 3, [0.0] * 2),
                               actual_reward=0.0)
    with pytest.raises(ContractError):
        store.append(bad_params)
    assert len(store) == 1


def test_store_rejects_dimension_drift():
    store = ExperienceStore()
    store.append(make_record(0))
    with pytest.raises(ContractError):
        store.append(RolloutRecord(env_context=[0.0, 0.0], params=[0.0] * 3,
                                   outcome=Outcome([0.0] * 3, [0.0] * 2),
                                   actual_reward=0.0))


def test_reevaluate_batched_matches_naive_loop_bitwise():
    store = ExperienceStore()
    for i in range(6):
        store.append(make_record(i))
    fn = DistanceReward()
    target = np.array([1.5, 2.5])
    inputs, batched = reevaluate(store, fn, target)
    naive = np.array([fn(target, r.outcome, r.params) for r in store])
    assert np.array_equal(batched, naive)
    assert inputs.shape == (6, 4)


def test_reevaluate_inputs_do_not_depend_on_target():
    store = ExperienceStore()
    for i in range(5):
        store.append(make_record(i))
    fn = DistanceReward()
    in1, r1 = reevaluate(store, fn, [0.0, 0.0])
    in2, r2 = reevaluate(store, fn, [5.0, -3.0])
    assert np.array_equal(in1, in2)
    assert not np.array_equal(r1, r2)


def test_reevaluate_at_collection_target_recovers_actual_reward():
    store = ExperienceStore()
    for i in range(4):
        store.append(make_record(i))
    _, rewards = reevaluate(store, DistanceReward(), [0.0, 0.0])
    assert np.array_equal(rewards, store.actual_rewards())


def test_reevaluate_known_arithmetic():
    # achieved (1,1), v = 1, query target (1,2): distance 1 plus 0.05
    outcome = Outcome(stats=[1.0, 1.0, 1.0], achieved_target=[1.0, 1.0])
    store = ExperienceStore()
    store.append(RolloutRecord(env_context=[], params=[0.0, 0.0, 1.0],
                               outcome=outcome, actual_reward=-0.05))
    _, rewards = reevaluate(store, DistanceReward(), [1.0, 2.0])
    assert rewards[0] == pytest.approx(-1.05, abs=1e-12)


def test_reevaluate_scalar_fallback_without_batch():
    store = ExperienceStore()
    for i in range(3):
        store.append(make_record(i))
    fn = DistanceReward()
    plain = lambda t, o, p: fn(t, o, p)  # noqa: E731 - hides the batch attribute
    target = np.array([0.3, 0.7])
    _, with_batch = reevaluate(store, fn, target)
    _, without_batch = reevaluate(store, plain, target)
    assert np.array_equal(with_batch, without_batch)


def test_reevaluate_targets_grid():
    store = ExperienceStore()
    for i in range(4):
        store.append(make_record(i))
    fn = DistanceReward()
    grid = np.array([[0.0, 0.0], [1.0, 2.0]])
    out = reevaluate_targets(store, fn, grid)
    assert out.shape == (2, 4)
    for j, t in enumerate(grid):
        assert np.array_equal(out[j], reevaluate(store, fn, t)[1])
    with pytest.raises(ContractError):
        reevaluate_targets(store, fn, np.zeros(2))


def test_empty_store_reevaluate():
    inputs, rewards = reevaluate(ExperienceStore(), DistanceReward(), [0.0, 0.0])
    assert inputs.shape == (0, 0) and rewards.shape == (0,)


def test_her_augment_uses_achieved_target():
    record = make_record(2)
    sample = her_augment(record, DistanceReward())
    assert isinstance(sample, AugmentedSample)
    # context = (achieved target, env context)
    assert np.array_equal(sample.context[:2], record.outcome.achieved_target)
    assert np.array_equal(sample.context[2:], record.env_context)
    assert np.array_equal(sample.params, record.params)
    # distance term vanishes, only the speed penalty remains
    v = record.outcome.stats[2]
    assert sample.reward == pytest.approx(-0.05 * v * v, abs=1e-12)
    # source record untouched
    assert record.outcome.achieved_target[0] == 3.0


def test_jsonl_round_trip_is_exact(tmp_path):
    store = ExperienceStore()
    rng = np.random.default_rng(3)
    for _ in range(5):
        stats = rng.standard_normal(3) * 10
        store.append(RolloutRecord(
            env_context=rng.standard_normal(1),
            params=rng.standard_normal(3) / 7,
            outcome=Outcome(stats, stats[:2]),
            actual_reward=float(rng.standard_normal()),
        ))
    path = tmp_path / "rollouts.jsonl"
    store.save_jsonl(path)
    back = ExperienceStore.load_jsonl(path)
    assert len(back) == 5
    for a, b in zip(store, back):
        assert np.array_equal(a.env_context, b.env_context)
        assert np.array_equal(a.params, b.params)
        assert np.array_equal(a.outcome.stats, b.outcome.stats)
        assert np.array_equal(a.outcome.achieved_target, b.outcome.achieved_target)
        assert a.actual_reward == b.actual_reward


def test_jsonl_rejects_garbage(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("not json\n")
    with pytest.raises(ContractError):
        ExperienceStore.load_jsonl(path)
