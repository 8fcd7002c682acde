"""Experiment runner: configs, context sampling, evaluation protocols, files.

A config binds an environment, a learner setup, and an episode budget; the
runner executes every seed in the seed list with rng streams derived from
(master seed, algorithm tag, run seed) so runs are reproducible regardless
of execution order.  Outputs are JSON plus two CSV shapes; bytes are
deterministic so re-emitting is idempotent.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import sim
from .acquisition import AcqConfig
from .algorithms import LearnerConfig, make_learner, run_episode
from .errors import ContractError, NumericalError
from .experience import Context
from .optim import SearchSpace

PASSIVE_EPISODES = 150
ACTIVE_EPISODES = 100
DEFAULT_SEEDS = tuple(range(10))
ACTIVE_ALGORITHMS = ("aces", "faces")


# ---------------------------------------------------------------------------
# environments
# ---------------------------------------------------------------------------


class CannonEnvironment:
    """Projectile task over one generated hilly world; no env context."""

    id = "cannon"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.world = sim.CannonWorld.generate(seed=self.seed)
        self.target_space = sim.CANNON_TARGET_SPACE
        self.env_space = SearchSpace(np.zeros(0), np.zeros(0))
        self.theta_space = sim.CANNON_PARAM_SPACE
        self.reward_fn = sim.CannonReward()

    def rollout(self, env_context, theta, train_mode, rng):
        params = sim.LaunchParams.from_vector(theta)
        return sim.cannon_rollout(self.world, params, train_mode=train_mode,
                                  rng=rng)

    def replay_metadata(self) -> dict:
        return {"id": self.id, "seed": self.seed,
                "world": self.world.replay_metadata()}


class ActiveCannonEnvironment(CannonEnvironment):
    """Cannon task whose target context carries the shoot indicator."""

    id = "active-cannon"

    def __init__(self, seed: int):
        super().__init__(seed)
        self.target_space = sim.ACTIVE_CANNON_TARGET_SPACE
        self.reward_fn = sim.ActiveCannonReward()


class ThrowerEnvironment:
    """Ball throwing via a movement primitive; start position is env context."""

    id = "thrower"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.world = sim.ThrowerWorld()
        self.target_space = sim.THROWER_TARGET_SPACE
        self.env_space = sim.THROWER_START_SPACE
        self.theta_space = sim.THROWER_PARAM_SPACE
        self.reward_fn = sim.ThrowerReward()

    def rollout(self, env_context, theta, train_mode, rng):
        # the thrower has no training-time actuation noise
        return sim.thrower_rollout(self.world, env_context, theta, rng=rng)

    def replay_metadata(self) -> dict:
        return {"id": self.id, "seed": self.seed,
                "world": self.world.replay_metadata()}


ENVIRONMENTS = {
    "cannon": CannonEnvironment,
    "active-cannon": ActiveCannonEnvironment,
    "thrower": ThrowerEnvironment,
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    environment: str = "cannon"
    environment_seed: int = 0
    master_seed: int = 0
    episodes: int = PASSIVE_EPISODES
    evaluation_period: int = 10
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    grid_shape: tuple[int, int] = (15, 15)
    context_boxes: tuple | None = None   # optional union of target sub-boxes
    algorithms: tuple[str, ...] | None = None  # study-mode comparison set
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    def __post_init__(self):
        if self.environment not in ENVIRONMENTS:
            raise ContractError(f"unknown environment id {self.environment!r}")
        if self.episodes < 1:
            raise ContractError("episode budget must be at least 1")
        if self.evaluation_period < 1:
            raise ContractError("evaluation period must be at least 1")
        if not self.seeds:
            raise ContractError("seed list must not be empty")
        if len(self.grid_shape) != 2 or min(self.grid_shape) < 1:
            raise ContractError("grid shape must be two positive integers")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "grid_shape",
                           tuple(int(g) for g in self.grid_shape))
        if self.context_boxes is not None:
            boxes = tuple(
                (tuple(float(v) for v in lo), tuple(float(v) for v in hi))
                for lo, hi in self.context_boxes)
            if not boxes:
                raise ContractError("context box union must not be empty")
            object.__setattr__(self, "context_boxes", boxes)
        if self.algorithms is not None:
            object.__setattr__(self, "algorithms",
                               tuple(str(a) for a in self.algorithms))

    @property
    def algorithm(self) -> str:
        return self.learner.algorithm


def config_to_dict(config: ExperimentConfig) -> dict:
    raw = asdict(config)

    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        if isinstance(value, np.generic):
            return value.item()
        return value

    return plain(raw)


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    learner = data.pop("learner", {})
    learner = dict(learner)
    acquisition = learner.pop("acquisition", {})
    learner_cfg = LearnerConfig(acquisition=AcqConfig(**acquisition), **learner)
    for key in ("seeds", "grid_shape", "algorithms"):
        if data.get(key) is not None:
            data[key] = tuple(data[key])
    if data.get("context_boxes") is not None:
        data["context_boxes"] = tuple(
            (tuple(lo), tuple(hi)) for lo, hi in data["context_boxes"])
    return ExperimentConfig(learner=learner_cfg, **data)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def build_environment(config: ExperimentConfig):
    return ENVIRONMENTS[config.environment](config.environment_seed)


def _target_boxes(config: ExperimentConfig, environment) -> list[SearchSpace]:
    if config.context_boxes is None:
        return [environment.target_space]
    boxes = []
    for lo, hi in config.context_boxes:
        box = SearchSpace(lo, hi)
        if box.dim != environment.target_space.dim \
                or not environment.target_space.contains(box.lower, atol=1e-9) \
                or not environment.target_space.contains(box.upper, atol=1e-9):
            raise ContractError("context box leaves the target bounds")
        boxes.append(box)
    return boxes


def sample_context(environment, rng: np.random.Generator,
                   boxes: list[SearchSpace] | None = None) -> Context:
    """One draw from the context distribution: uniform over the target box
    (or volume-weighted uniform over a box union) times the env box."""
    if boxes is None:
        boxes = [environment.target_space]
    if len(boxes) == 1:
        box = boxes[0]
    else:
        volumes = np.array([float(np.prod(b.span)) for b in boxes])
        box = boxes[rng.choice(len(boxes), p=volumes / volumes.sum())]
    target = box.sample_uniform(1, rng)[0]
    env = environment.env_space.sample_uniform(1, rng)[0]
    return Context(target=target, env=env)


def evaluation_grid(environment, shape: tuple[int, int]) -> list[Context]:
    """Evaluation contexts: a grid over the first two target dimensions.

    Any further target dimensions are pinned at their lower bound (for the
    indicator-extended task that fixes "shoot" mode); the environment
    context is pinned at its box center.
    """
    space = environment.target_space
    if space.dim < 2:
        raise ContractError("evaluation grid needs a 2-d (or wider) target box")
    xs = np.linspace(space.lower[0], space.upper[0], shape[0])
    ys = np.linspace(space.lower[1], space.upper[1], shape[1])
    rest = space.lower[2:]
    env = environment.env_space.center
    contexts = []
    for x in xs:
        for y in ys:
            target = np.concatenate([[x, y], rest])
            contexts.append(Context(target=target, env=env.copy()))
    return contexts


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunResult:
    online_rewards: np.ndarray        # (n_seeds, episodes)
    offline_rewards: np.ndarray       # (n_seeds, n_evaluations)
    offline_episodes: tuple[int, ...]
    wall_clock: float
    replay: dict

    def __post_init__(self):
        online = np.asarray(self.online_rewards, dtype=float)
        offline = np.asarray(self.offline_rewards, dtype=float)
        episodes = self.replay["config"]["episodes"]
        if online.ndim != 2 or online.shape[1] != episodes:
            raise ContractError("online reward rows must match the budget")
        if offline.ndim != 2 or offline.shape[1] != len(self.offline_episodes):
            raise ContractError("offline columns must match evaluation points")
        object.__setattr__(self, "online_rewards", online)
        object.__setattr__(self, "offline_rewards", offline)
        object.__setattr__(self, "offline_episodes",
                           tuple(int(e) for e in self.offline_episodes))


def derive_rng_streams(master_seed: int, algorithm: str, run_seed: int):
    """Deterministic (learner seed, context rng, rollout rng) for one run."""
    tag_digest = int.from_bytes(
        hashlib.blake2b(algorithm.encode(), digest_size=4).digest(), "little")
    root = np.random.SeedSequence([int(master_seed), tag_digest, int(run_seed)])
    learner_seq, context_seq, rollout_seq = root.spawn(3)
    learner_seed = int(learner_seq.generate_state(1)[0])
    return learner_seed, np.random.default_rng(context_seq), \
        np.random.default_rng(rollout_seq)


def offline_eval_per_context(learner, contexts, environment) -> np.ndarray:
    """Greedy, noise-free reward at each evaluation context."""
    rewards = np.zeros(len(contexts))
    for i, ctx in enumerate(contexts):
        theta = learner.select_greedy(ctx)
        outcome = environment.rollout(ctx.env, theta, train_mode=False,
                                      rng=None)
        rewards[i] = environment.reward_fn(ctx.target, outcome, theta)
    return rewards


def offline_eval(learner, contexts, environment) -> float:
    return float(offline_eval_per_context(learner, contexts, environment).mean())


def _run_one_seed(config: ExperimentConfig, environment, boxes, grid,
                  run_seed: int):
    learner_seed, context_rng, rollout_rng = derive_rng_streams(
        config.master_seed, config.algorithm, run_seed)
    learner_cfg = replace(config.learner, rng_seed=learner_seed)
    learner = make_learner(learner_cfg, environment.target_space,
                           environment.env_space, environment.theta_space,
                           environment.reward_fn)
    online, offline = [], []
    for episode in range(1, config.episodes + 1):
        if learner.requires_context:
            context = sample_context(environment, context_rng, boxes)
        else:
            context = None
        record = run_episode(learner, environment, context, rollout_rng)
        online.append(record.actual_reward)
        if episode % config.evaluation_period == 0:
            offline.append(offline_eval(learner, grid, environment))
    return learner, online, offline


def run(config: ExperimentConfig, *, partial_dir=None) -> RunResult:
    """Execute every seed in the config; abort serializes partial rows."""
    environment = build_environment(config)
    boxes = _target_boxes(config, environment)
    grid = evaluation_grid(environment, config.grid_shape)
    offline_episodes = tuple(
        e for e in range(config.evaluation_period, config.episodes + 1,
                         config.evaluation_period))
    started = time.perf_counter()
    replay = {
        "config": config_to_dict(config),
        "environment": environment.replay_metadata(),
    }
    online_rows, offline_rows = [], []
    try:
        for run_seed in config.seeds:
            _, online, offline = _run_one_seed(config, environment, boxes,
                                               grid, run_seed)
            online_rows.append(online)
            offline_rows.append(offline)
    except (ContractError, NumericalError, FloatingPointError) as err:
        if partial_dir is not None:
            path = Path(partial_dir) / "partial_result.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            payload = {"replay": replay, "error": str(err),
                       "completed_seeds": list(config.seeds[:len(online_rows)]),
                       "online_rewards": online_rows,
                       "offline_rewards": offline_rows}
            path.write_text(json.dumps(payload, sort_keys=True, indent=2),
                            encoding="utf-8")
        raise
    return RunResult(
        online_rewards=np.array(online_rows),
        offline_rewards=np.array(offline_rows).reshape(len(config.seeds),
                                                       len(offline_episodes)),
        offline_episodes=offline_episodes,
        wall_clock=time.perf_counter() - started,
        replay=replay,
    )


def cumulative_online(result: RunResult, t: int) -> float:
    """Mean over seeds of the summed first ``t`` online rewards."""
    budget = result.online_rewards.shape[1]
    if not 0 <= t <= budget:
        raise ContractError(f"t must lie in [0, {budget}]")
    if t == 0:
        return 0.0
    return float(result.online_rewards[:, :t].sum(axis=1).mean())


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def quadrant_boxes(target_space: SearchSpace) -> tuple:
    """The two closed training quadrants of a 2-d target box (x<=0, y>=0)
    and (x>=0, y<=0), as config-ready bounds."""
    lo, hi = target_space.lower, target_space.upper
    return (
        ((float(lo[0]), 0.0), (0.0, float(hi[1]))),
        ((0.0, float(lo[1])), (float(hi[0]), 0.0)),
    )


def in_seen_quadrant(target) -> bool:
    x, y = float(target[0]), float(target[1])
    return (x <= 0.0 and y >= 0.0) or (x >= 0.0 and y <= 0.0)


def generalization_study(config: ExperimentConfig) -> dict:
    """Train on the restricted quadrant union, evaluate on the full grid.

    Returns per-seed and mean rewards for the seen and unseen halves of the
    evaluation grid, plus their difference, for the config's algorithm.
    """
    environment = build_environment(config)
    config = replace(config, context_boxes=quadrant_boxes(
        environment.target_space))
    boxes = _target_boxes(config, environment)
    grid = evaluation_grid(environment, config.grid_shape)
    seen_mask = np.array([in_seen_quadrant(c.target) for c in grid])
    seen_rows, unseen_rows = [], []
    for run_seed in config.seeds:
        learner, _, _ = _run_one_seed(config, environment, boxes, grid,
                                      run_seed)
        rewards = offline_eval_per_context(learner, grid, environment)
        seen_rows.append(float(rewards[seen_mask].mean()))
        unseen_rows.append(float(rewards[~seen_mask].mean()))
    seen_mean = float(np.mean(seen_rows))
    unseen_mean = float(np.mean(unseen_rows))
    return {
        "algorithm": config.algorithm,
        "seen_per_seed": seen_rows,
        "unseen_per_seed": unseen_rows,
        "seen_mean": seen_mean,
        "unseen_mean": unseen_mean,
        "difference": seen_mean - unseen_mean,
    }


def active_study(config: ExperimentConfig) -> RunResult:
    """Active-learning run: the learner chooses contexts; evaluation fixes
    the indicator at zero over the small grid."""
    if config.algorithm not in ACTIVE_ALGORITHMS:
        raise ContractError(
            f"active study needs an active algorithm, got {config.algorithm!r}")
    if config.environment != "active-cannon":
        raise ContractError("active study runs on the indicator-extended task")
    if config.grid_shape == ExperimentConfig.grid_shape:
        config = replace(config, grid_shape=(8, 8))
    return run(config)


def study(config: ExperimentConfig) -> list[tuple[ExperimentConfig, RunResult]]:
    """Run the comparison set (config.algorithms or the single tag)."""
    tags = config.algorithms or (config.algorithm,)
    results = []
    for tag in tags:
        tagged = replace(config, learner=replace(config.learner, algorithm=tag),
                         algorithms=None)
        results.append((tagged, run(tagged)))
    return results


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------


def _format(value: float) -> str:
    return repr(float(value))


def emit(results, out_dir) -> list[Path]:
    """Write runs.json, long.csv, and summary.csv; byte-deterministic."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for config, result in results:
        entries.append({
            "config": config_to_dict(config),
            "replay": result.replay,
            "offline_episodes": list(result.offline_episodes),
            "online_rewards": [[float(v) for v in row]
                               for row in result.online_rewards],
            "offline_rewards": [[float(v) for v in row]
                                for row in result.offline_rewards],
        })
    runs_path = out / "runs.json"
    runs_path.write_text(json.dumps(entries, sort_keys=True, indent=2) + "\n",
                         encoding="utf-8")

    long_buf = io.StringIO()
    writer = csv.writer(long_buf, lineterminator="\n")
    writer.writerow(["episode", "seed", "algorithm", "online_reward",
                     "offline_reward_or_blank"])
    for config, result in results:
        eval_index = {e: i for i, e in enumerate(result.offline_episodes)}
        for row, seed in enumerate(config.seeds):
            for episode in range(1, config.episodes + 1):
                offline = ""
                if episode in eval_index:
                    offline = _format(
                        result.offline_rewards[row, eval_index[episode]])
                writer.writerow([episode, seed, config.algorithm,
                                 _format(result.online_rewards[row,
                                                               episode - 1]),
                                 offline])
    long_path = out / "long.csv"
    long_path.write_text(long_buf.getvalue(), encoding="utf-8")

    summary_buf = io.StringIO()
    writer = csv.writer(summary_buf, lineterminator="\n")
    writer.writerow(["algorithm", "episode", "offline_mean", "offline_std"])
    for config, result in results:
        for i, episode in enumerate(result.offline_episodes):
            column = result.offline_rewards[:, i]
            writer.writerow([config.algorithm, episode,
                             _format(column.mean()), _format(column.std())])
    summary_path = out / "summary.csv"
    summary_path.write_text(summary_buf.getvalue(), encoding="utf-8")
    return [runs_path, long_path, summary_path]


def load_results(path) -> list[tuple[ExperimentConfig, RunResult]]:
    """Inverse of :func:`emit` for the JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    results = []
    for entry in entries:
        config = config_from_dict(entry["config"])
        result = RunResult(
            online_rewards=np.array(entry["online_rewards"], dtype=float),
            offline_rewards=np.array(entry["offline_rewards"],
                                     dtype=float).reshape(
                len(config.seeds), len(entry["offline_episodes"])),
            offline_episodes=tuple(entry["offline_episodes"]),
            wall_clock=0.0,
            replay=entry["replay"],
        )
        results.append((config, result))
    return results
