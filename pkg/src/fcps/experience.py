"""Factored experience store: rollout records, re-evaluation, relabeling.

A context splits into a target part (enters only the reward) and an
environment part (enters only the dynamics).  Because of that split a
rollout record needs to keep just the environment context, the controller
parameters, and the outcome's reward-sufficient statistics: the whole store
can then be re-scored under any query target without touching the
simulator.  The collection-time reward is cached on the record so online
performance accounting is unaffected by later re-evaluations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import ContractError
from .optim import SearchSpace


def _clean_vector(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 1:
        raise ContractError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Context:
    """Task context: target part plus (possibly empty) environment part."""

    target: np.ndarray
    env: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target", _clean_vector(self.target, "target"))
        object.__setattr__(self, "env", _clean_vector(self.env, "env"))

    @property
    def full(self) -> np.ndarray:
        """Concatenated (target, env) vector; env columns trail."""
        return np.concatenate([self.target, self.env])

    @classmethod
    def from_full(cls, vector, env_dim: int) -> "Context":
        vector = np.asarray(vector, dtype=float)
        if env_dim < 0 or env_dim > vector.shape[0]:
            raise ContractError("env_dim out of range")
        split = vector.shape[0] - env_dim
        return cls(target=vector[:split], env=vector[split:])

    def validate(self, target_space: SearchSpace | None,
                 env_space: SearchSpace | None) -> None:
        if target_space is not None and not target_space.contains(self.target,
                                                                  atol=1e-9):
            raise ContractError("target context outside its box")
        if env_space is not None and not env_space.contains(self.env, atol=1e-9):
            raise ContractError("environment context outside its box")


@dataclass(frozen=True)
class Outcome:
    """Reward-sufficient statistics of one trajectory."""

    stats: np.ndarray
    achieved_target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "stats", _clean_vector(self.stats, "stats"))
        object.__setattr__(
            self, "achieved_target",
            _clean_vector(self.achieved_target, "achieved_target"))


@dataclass(frozen=True)
class RolloutRecord:
    """One executed rollout: what ran, what happened, what it earned."""

    env_context: np.ndarray
    params: np.ndarray
    outcome: Outcome
    actual_reward: float

    def __post_init__(self):
        object.__setattr__(
            self, "env_context", _clean_vector(self.env_context, "env_context"))
        object.__setattr__(self, "params", _clean_vector(self.params, "params"))
        if not isinstance(self.outcome, Outcome):
            raise ContractError("outcome must be an Outcome")
        if not np.isfinite(self.actual_reward):
            raise ContractError("actual_reward must be finite")
        object.__setattr__(self, "actual_reward", float(self.actual_reward))


@dataclass(frozen=True)
class AugmentedSample:
    """A relabeled sample: the rollout treated as if it had been on target."""

    context: np.ndarray
    params: np.ndarray
    reward: float

    def __post_init__(self):
        object.__setattr__(self, "context", _clean_vector(self.context, "context"))
        object.__setattr__(self, "params", _clean_vector(self.params, "params"))
        if not np.isfinite(self.reward):
            raise ContractError("reward must be finite")
        object.__setattr__(self, "reward", float(self.reward))


class ExperienceStore:
    """Append-only rollout log; iteration order is insertion order."""

    def __init__(self, env_space: SearchSpace | None = None,
                 param_space: SearchSpace | None = None):
        self.env_space = env_space
        self.param_space = param_space
        self._records: list[RolloutRecord] = []

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[RolloutRecord]:
        return iter(self._records)

    def __getitem__(self, index: int) -> RolloutRecord:
        return self._records[index]

    @property
    def records(self) -> tuple[RolloutRecord, ...]:
        return tuple(self._records)

    def append(self, record: RolloutRecord) -> None:
        if self.env_space is not None:
            if record.env_context.shape != (self.env_space.dim,):
                raise ContractError(
                    f"env context has shape {record.env_context.shape}, store "
                    f"expects ({self.env_space.dim},)")
            if not self.env_space.contains(record.env_context, atol=1e-9):
                raise ContractError("env context outside the store's box")
        if self.param_space is not None:
            if record.params.shape != (self.param_space.dim,):
                raise ContractError(
                    f"params has shape {record.params.shape}, store expects "
                    f"({self.param_space.dim},)")
            if not self.param_space.contains(record.params, atol=1e-9):
                raise ContractError("params outside the store's box")
        if self._records:
            first = self._records[0]
            if record.env_context.shape != first.env_context.shape:
                raise ContractError("env context dimension changed mid-store")
            if record.params.shape != first.params.shape:
                raise ContractError("parameter dimension changed mid-store")
            if record.outcome.stats.shape != first.outcome.stats.shape:
                raise ContractError("outcome dimension changed mid-store")
        self._records.append(record)

    # -- matrix views -------------------------------------------------------

    def env_contexts(self) -> np.ndarray:
        if not self._records:
            return np.zeros((0, 0))
        return np.array([r.env_context for r in self._records])

    def params(self) -> np.ndarray:
        if not self._records:
            return np.zeros((0, 0))
        return np.array([r.params for r in self._records])

    def actual_rewards(self) -> np.ndarray:
        return np.array([r.actual_reward for r in self._records])

    def outcome_stats(self) -> np.ndarray:
        if not self._records:
            return np.zeros((0, 0))
        return np.array([r.outcome.stats for r in self._records])

    def achieved_targets(self) -> np.ndarray:
        if not self._records:
            return np.zeros((0, 0))
        return np.array([r.outcome.achieved_target for r in self._records])

    def reduced_inputs(self) -> np.ndarray:
        """The (env context, params) input matrix shared by all query targets."""
        if not self._records:
            return np.zeros((0, 0))
        return np.hstack([self.env_contexts(), self.params()])

    # -- persistence --------------------------------------------------------

    def save_jsonl(self, path) -> None:
        lines = []
        for r in self._records:
            lines.append(json.dumps({
                "env_context": r.env_context.tolist(),
                "params": r.params.tolist(),
                "stats": r.outcome.stats.tolist(),
                "achieved_target": r.outcome.achieved_target.tolist(),
                "actual_reward": r.actual_reward,
            }))
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load_jsonl(cls, path, env_space: SearchSpace | None = None,
                   param_space: SearchSpace | None = None) -> "ExperienceStore":
        store = cls(env_space, param_space)
        for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ContractError(f"line {line_no} is not valid JSON: {exc}") from exc
            store.append(RolloutRecord(
                env_context=np.array(obj["env_context"], dtype=float),
                params=np.array(obj["params"], dtype=float),
                outcome=Outcome(np.array(obj["stats"], dtype=float),
                                np.array(obj["achieved_target"], dtype=float)),
                actual_reward=float(obj["actual_reward"]),
            ))
        return store


# ---------------------------------------------------------------------------
# re-evaluation
# ---------------------------------------------------------------------------

# reward_fn(target, outcome, params) -> float; an optional reward_fn.batch
# taking (targets, stats, params) matrices must agree with it bit-for-bit.
RewardFn = Callable[[np.ndarray, Outcome, np.ndarray], float]


def reevaluate(store: ExperienceStore, reward_fn: RewardFn,
               target) -> tuple[np.ndarray, np.ndarray]:
    """Score the whole store under a query target.

    Returns the (env context, params) input matrix and the per-record
    rewards, in insertion order.  Outcomes are never re-simulated; the
    inputs are identical whatever the target.
    """
    target = _clean_vector(target, "target")
    inputs = store.reduced_inputs()
    if len(store) == 0:
        return inputs, np.zeros(0)
    batch = getattr(reward_fn, "batch", None)
    if batch is not None:
        tiled = np.broadcast_to(target, (len(store), target.shape[0]))
        rewards = np.asarray(batch(tiled, store.outcome_stats(), store.params()),
                             dtype=float)
    else:
        rewards = np.array([reward_fn(target, r.outcome, r.params) for r in store])
    return inputs, rewards


def reevaluate_targets(store: ExperienceStore, reward_fn: RewardFn,
                       targets) -> np.ndarray:
    """Reward matrix of shape (n_targets, n_records), one row per target."""
    targets = np.asarray(targets, dtype=float)
    if targets.ndim != 2:
        raise ContractError("targets must be a (n, d) matrix")
    return np.array([reevaluate(store, reward_fn, t)[1] for t in targets])


# ---------------------------------------------------------------------------
# relabeling
# ---------------------------------------------------------------------------


def her_augment(record: RolloutRecord, reward_fn: RewardFn) -> AugmentedSample:
    """Relabel one rollout with the target it actually achieved.

    The sample's context is (achieved target, env context) and its reward is
    the rollout's reward under that achieved target; for a pure-distance
    reward the distance term vanishes.  The source record is not modified.
    """
    achieved = record.outcome.achieved_target
    reward = reward_fn(achieved, record.outcome, record.params)
    return AugmentedSample(
        context=np.concatenate([achieved, record.env_context]),
        params=record.params,
        reward=float(reward),
    )
