"""Upper-level policy learners with a uniform episode-loop interface.

Passive learners receive a context and pick controller parameters; active
learners pick the context too.  The selection rules are pure functions so
they can be tested in isolation; the learner classes add data bookkeeping
and hyperparameter refit scheduling on top.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from . import gp, optim
from .acquisition import AcqConfig, JointEsEngine, EnsembleEsEngine, \
    RepresenterSet, gp_ucb
from .errors import ContractError
from .experience import Context, ExperienceStore, Outcome, RolloutRecord, \
    her_augment, reevaluate, reevaluate_targets
from .optim import SearchSpace

ALGORITHMS = ("bo-cps", "bo-fcps", "bo-fcps-her", "aces", "faces", "c-reps")

# initial space-filling rollouts before the acquisition takes over, used when
# the config leaves init_episodes unset; scaled to each model's input
# dimensionality, since a joint model over (context, theta) needs far more
# coverage to become identifiable than a factored model over theta alone
DEFAULT_INIT_EPISODES = {"bo-cps": 20, "bo-fcps-her": 20, "aces": 20,
                         "bo-fcps": 10, "faces": 10, "c-reps": 0}
ACQUISITION_KINDS = ("ucb", "es", "random")


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: str = "bo-fcps"
    acquisition: AcqConfig = field(default_factory=AcqConfig)
    acquisition_kind: str = "ucb"
    n_representers: int = 200
    init_episodes: int | None = None
    refit_warmup: int = 20
    refit_period: int = 5
    refit_restarts: int = 2
    creps_epsilon: float = 0.5
    creps_period: int = 30
    direct_evals: int | None = 150
    refine_starts: int = 2
    refine_iters: int = 25
    rng_seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractError(f"unknown algorithm tag {self.algorithm!r}")
        if self.acquisition_kind not in ACQUISITION_KINDS:
            raise ContractError(
                f"unknown acquisition kind {self.acquisition_kind!r}")
        if self.creps_epsilon <= 0:
            raise ContractError("creps_epsilon must be positive")
        if self.creps_period < 2:
            raise ContractError("creps_period must be at least 2")
        if self.n_representers < 1:
            raise ContractError("n_representers must be at least 1")
        if self.init_episodes is not None and self.init_episodes < 0:
            raise ContractError("init_episodes must be non-negative")
        if self.refit_warmup < 0 or self.refit_period < 1:
            raise ContractError("refit schedule must be non-negative/positive")
        if self.refine_starts < 1 or self.refine_iters < 0:
            raise ContractError("refinement settings out of range")


# ---------------------------------------------------------------------------
# shared GP selection machinery
# ---------------------------------------------------------------------------


def _initial_hyperparams(dim: int) -> gp.KernelHyperparams:
    # inputs are scaled to the unit box and targets standardized before the
    # kernel sees them, so these are sane generic starting points
    return gp.KernelHyperparams(
        signal_variance=1.0,
        lengthscales=np.full(dim, 0.3),
        noise_variance=1e-2,
    )


def _hyperparam_bounds(dim: int) -> list[tuple[float, float]]:
    # log-space search box for refits, in unit-scaled input and standardized
    # target coordinates; the lengthscale floor keeps the marginal likelihood
    # away from noise-free memorization basins, which rollout noise rules out
    signal = (np.log(1e-2), np.log(1e2))
    lengthscale = (np.log(0.03), np.log(10.0))
    # noise floor inside the band of reward jitter the actuation noise
    # produces (roughly 5e-4 to 3e-3 in standardized units, varying with
    # terrain slope and shot speed); exact-interpolation basins sit below it
    # and stay unreachable, which matters for hindsight relabels whose
    # synthetic rows are noise-free by construction
    noise = (np.log(1.5e-3), np.log(1.0))
    return [signal] + [lengthscale] * dim + [noise]


def _hyperparam_prior(dim: int) -> list[tuple[float, float]]:
    # weak lognormal pulls on the same log coordinates, turning refits into
    # MAP fits; small early datasets then keep every lengthscale moderate,
    # so the acquisition retains a gradient in all directions instead of
    # writing one off as irrelevant and collapsing exploration onto a slice.
    # The noise center sits at the reward jitter actuation noise produces.
    signal = (np.log(1.0), 2.0)
    lengthscale = (np.log(0.4), 1.0)
    noise = (np.log(3e-3), 1.5)
    return [signal] + [lengthscale] * dim + [noise]


def _maximize(objective, space: SearchSpace, cfg: LearnerConfig):
    return optim.global_then_local(
        objective, space,
        direct_evals=cfg.direct_evals,
        refine_starts=cfg.refine_starts,
        refine_iters=cfg.refine_iters,
        vectorized=True,
    )


def _ucb_over_theta(model, prefix: np.ndarray, theta_space: SearchSpace,
                    kappa: float, cfg: LearnerConfig) -> np.ndarray:
    prefix = np.asarray(prefix, dtype=float)

    def objective(thetas):
        pts = np.hstack([np.broadcast_to(prefix, (thetas.shape[0],
                                                  prefix.shape[0])), thetas])
        mean, var = gp.predict_batch(model, pts)
        return gp_ucb(mean, np.sqrt(var), kappa)

    theta, _ = _maximize(objective, theta_space, cfg)
    return theta


def bocps_select(dataset, query_context: Context, context_space: SearchSpace,
                 theta_space: SearchSpace, hyperparams, cfg: LearnerConfig,
                 *, kappa: float | None = None) -> np.ndarray:
    """GP-UCB over theta under one joint reward model on (context, theta).

    The dataset is the (inputs, rewards) pair with full context columns
    first; rewards are the collection-time rewards.
    """
    inputs, rewards = dataset
    input_space = context_space.concat(theta_space)
    model = gp.fit(inputs, rewards, hyperparams, input_space=input_space,
                   standardize=True)
    k = cfg.acquisition.kappa if kappa is None else kappa
    return _ucb_over_theta(model, query_context.full, theta_space, k, cfg)


def bofcps_her_select(dataset, query_context: Context,
                      context_space: SearchSpace, theta_space: SearchSpace,
                      hyperparams, cfg: LearnerConfig,
                      *, kappa: float | None = None) -> np.ndarray:
    """Same machinery as plain joint-model selection; the dataset is
    expected to carry one relabeled sample per rollout."""
    return bocps_select(dataset, query_context, context_space, theta_space,
                        hyperparams, cfg, kappa=kappa)


def _reduced_dataset(store: ExperienceStore, reward_fn, target,
                     env_dim: int, theta_dim: int):
    inputs, rewards = reevaluate(store, reward_fn, target)
    if len(store) == 0:
        inputs = np.zeros((0, env_dim + theta_dim))
    return inputs, rewards


def bofcps_select(store: ExperienceStore, reward_fn, query_context: Context,
                  env_space: SearchSpace, theta_space: SearchSpace,
                  hyperparams, cfg: LearnerConfig,
                  *, kappa: float | None = None) -> np.ndarray:
    """GP-UCB under the query-target-specific reward model on (env, theta)."""
    inputs, rewards = _reduced_dataset(store, reward_fn, query_context.target,
                                       env_space.dim, theta_space.dim)
    input_space = env_space.concat(theta_space)
    model = gp.fit(inputs, rewards, hyperparams, input_space=input_space,
                   standardize=True)
    k = cfg.acquisition.kappa if kappa is None else kappa
    return _ucb_over_theta(model, query_context.env, theta_space, k, cfg)


def aces_select(dataset, context_space: SearchSpace, theta_space: SearchSpace,
                hyperparams, cfg: LearnerConfig,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Joint (context, theta) query maximizing summed information gain."""
    inputs, rewards = dataset
    joint_space = context_space.concat(theta_space)
    model = gp.fit(inputs, rewards, hyperparams, input_space=joint_space,
                   standardize=True)
    reps = RepresenterSet.sample(context_space, theta_space,
                                 cfg.n_representers,
                                 cfg.acquisition.n_candidates, rng)
    engine = JointEsEngine(model, reps, cfg.acquisition, rng=rng)
    best, _ = _maximize(engine.gains, joint_space, cfg)
    d = context_space.dim
    return best[:d], best[d:]


def faces_select(store: ExperienceStore, reward_fn,
                 target_space: SearchSpace, env_space: SearchSpace,
                 theta_space: SearchSpace, hyperparams, cfg: LearnerConfig,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Factored active query: maximize summed gain of per-target models.

    One shared-input model per representer context, each trained on the
    store re-scored under that representer's target; the query ranges over
    (env context, theta) only.
    """
    context_space = target_space.concat(env_space)
    reps = RepresenterSet.sample(context_space, theta_space,
                                 cfg.n_representers,
                                 cfg.acquisition.n_candidates, rng,
                                 env_dim=env_space.dim)
    inputs = store.reduced_inputs()
    if len(store) == 0:
        inputs = np.zeros((0, env_space.dim + theta_space.dim))
    reward_matrix = reevaluate_targets(store, reward_fn, reps.target_contexts)
    input_space = env_space.concat(theta_space)
    ensemble = gp.fit_shared_inputs(inputs, reward_matrix.T, hyperparams,
                                    input_space=input_space, standardize=True)
    acq = cfg.acquisition
    if env_space.dim == 0:
        engine = EnsembleEsEngine(ensemble, reps.shared_candidates(), acq,
                                  rng=rng)
        objective = engine.gains
    else:
        # per-branch singleton engines share one set of common random draws
        z = rng.standard_normal((acq.n_candidates, acq.n_function_draws))
        u = rng.standard_normal(acq.n_fantasies)
        engines = []
        for c in range(reps.n_contexts):
            branch = gp.ensemble_branch_model(ensemble, c)
            singleton = RepresenterSet(reps.env_contexts[c][None, :],
                                       reps.candidates[c][None, :, :])
            engines.append(JointEsEngine(branch, singleton, acq, draws=(z, u)))

        def objective(queries):
            total = engines[0].gains(queries)
            for engine in engines[1:]:
                total = total + engine.gains(queries)
            return total

    best, _ = _maximize(objective, input_space, cfg)
    d = env_space.dim
    return best[:d], best[d:]


# ---------------------------------------------------------------------------
# C-REPS
# ---------------------------------------------------------------------------


def creps_features(contexts) -> np.ndarray:
    """Feature map [1, s, s*s] applied row-wise."""
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    ones = np.ones((contexts.shape[0], 1))
    return np.hstack([ones, contexts, contexts * contexts])


def creps_feature_dim(context_dim: int) -> int:
    return 1 + 2 * context_dim


@dataclass(frozen=True)
class CrepsPolicy:
    """Linear-Gaussian policy over squared context features."""

    weights: np.ndarray  # (feature dim, theta dim)
    cov: np.ndarray      # (theta dim, theta dim)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        c = np.array(self.cov, dtype=float)
        if w.ndim != 2 or c.shape != (w.shape[1], w.shape[1]):
            raise ContractError("weights must be (features, dims) and cov square")
        if not np.allclose(c, c.T, atol=1e-9):
            raise ContractError("policy covariance must be symmetric")
        if np.linalg.eigvalsh(c)[0] <= 0:
            raise ContractError("policy covariance must be positive definite")
        w.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "cov", c)

    @classmethod
    def initial(cls, context_dim: int, theta_space: SearchSpace) -> "CrepsPolicy":
        # context-independent start centered in the box: zero weights in
        # box-normalized coordinates, which keeps the initial mean free of
        # the box's position relative to the origin. One standard deviation
        # spans half the box, so early rollouts probe well beyond any single
        # mode and the entropy-bounded updates have real coverage to
        # contract from.
        weights = np.zeros((creps_feature_dim(context_dim), theta_space.dim))
        weights[0] = theta_space.center
        cov = np.diag((theta_space.span / 2.0) ** 2)
        return cls(weights=weights, cov=cov)

    def mean_params(self, context_full) -> np.ndarray:
        return creps_features(context_full)[0] @ self.weights

    def sample(self, context_full, rng: np.random.Generator) -> np.ndarray:
        mean = self.mean_params(context_full)
        chol = np.linalg.cholesky(self.cov)
        return mean + chol @ rng.standard_normal(mean.shape[0])


_ETA_BOUNDS = (1e-6, 1e6)
_V_BOUND = 1e4


def creps_dual(eta: float, v: np.ndarray, features: np.ndarray,
               rewards: np.ndarray, epsilon: float) -> tuple[float, np.ndarray]:
    """Dual value and its gradient with respect to (eta, v)."""
    advantages = (rewards - features @ v) / eta
    log_z = logsumexp(advantages) - np.log(len(rewards))
    weights = softmax(advantages)
    mean_features = features.mean(axis=0)
    value = eta * epsilon + v @ mean_features + eta * log_z
    grad_eta = epsilon + log_z - weights @ advantages
    grad_v = mean_features - features.T @ weights
    return float(value), np.concatenate([[grad_eta], grad_v])


def _dual_weights(eta, v, features, rewards):
    return softmax((rewards - features @ v) / eta)


def _empirical_kl(weights: np.ndarray) -> float:
    # KL of the weight distribution from uniform over the batch
    n = weights.shape[0]
    positive = weights[weights > 0]
    return float(np.sum(positive * np.log(n * positive)))


def creps_update(contexts, params, rewards, policy: CrepsPolicy,
                 epsilon: float) -> tuple[CrepsPolicy, dict]:
    """One relative-entropy-constrained weighted-ML policy update.

    Returns the new policy plus diagnostics including the empirical KL of
    the sample weights, which is forced under ``epsilon`` by raising the
    temperature if the dual solution overshoots numerically.
    """
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    params = np.atleast_2d(np.asarray(params, dtype=float))
    rewards = np.asarray(rewards, dtype=float)
    n = rewards.shape[0]
    features = creps_features(contexts)
    if n < features.shape[1] + 1:
        raise ContractError("batch smaller than feature dimension + 1")
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")

    lo, hi = _ETA_BOUNDS
    space = SearchSpace(
        np.concatenate([[np.log(lo)], np.full(features.shape[1], -_V_BOUND)]),
        np.concatenate([[np.log(hi)], np.full(features.shape[1], _V_BOUND)]))

    def neg_dual(x):
        value, _ = creps_dual(np.exp(x[0]), x[1:], features, rewards, epsilon)
        return -value

    def neg_grad(x):
        eta = np.exp(x[0])
        _, grad = creps_dual(eta, x[1:], features, rewards, epsilon)
        grad = grad.copy()
        grad[0] *= eta  # chain rule through the log parameterization
        return -grad

    x0 = np.concatenate([[np.log(np.clip(np.std(rewards), 1.0, hi / 10))],
                         np.zeros(features.shape[1])])
    best, _ = optim.lbfgs_refine(neg_dual, space, x0, max_iters=200,
                                 grad=neg_grad)
    eta, v = float(np.exp(best[0])), best[1:]
    weights = _dual_weights(eta, v, features, rewards)

    if not np.all(np.isfinite(weights)) or eta >= hi / 2:
        warnings.warn("relative-entropy dual diverged; keeping previous policy")
        return policy, {"eta": eta, "v": v, "kl": np.nan, "applied": False}

    # numerical dual solutions can overshoot the bound slightly; raising the
    # temperature with v fixed restores it (weights flatten as eta grows)
    if _empirical_kl(weights) > epsilon:
        eta_hi = eta
        while _empirical_kl(_dual_weights(eta_hi, v, features, rewards)) > epsilon:
            eta_hi *= 2.0
            if eta_hi > hi:
                break
        eta_lo = eta_hi / 2.0
        for _ in range(60):
            mid = 0.5 * (eta_lo + eta_hi)
            if _empirical_kl(_dual_weights(mid, v, features, rewards)) > epsilon:
                eta_lo = mid
            else:
                eta_hi = mid
        eta = eta_hi
        weights = _dual_weights(eta, v, features, rewards)

    # weighted maximum-likelihood refit of the linear-Gaussian policy
    wf = features * weights[:, None]
    gram = features.T @ wf + 1e-9 * np.eye(features.shape[1])
    gains = np.linalg.solve(gram, wf.T @ params)
    residuals = params - features @ gains
    cov = (residuals * weights[:, None]).T @ residuals
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    cov = (eigvecs * np.maximum(eigvals, 1e-6)) @ eigvecs.T
    new_policy = CrepsPolicy(weights=gains, cov=cov)
    return new_policy, {"eta": eta, "v": v, "kl": _empirical_kl(weights),
                        "weights": weights, "applied": True}


# ---------------------------------------------------------------------------
# learner classes
# ---------------------------------------------------------------------------


class _BoLearnerBase:
    """Shared bookkeeping: store, context log, refit schedule, rng."""

    requires_context = True

    def __init__(self, target_space: SearchSpace, env_space: SearchSpace,
                 theta_space: SearchSpace, reward_fn, cfg: LearnerConfig):
        self.target_space = target_space
        self.env_space = env_space
        self.theta_space = theta_space
        self.context_space = target_space.concat(env_space)
        self.reward_fn = reward_fn
        self.cfg = cfg
        self.store = ExperienceStore(env_space, theta_space)
        self.episodes = 0
        self._contexts_full: list[np.ndarray] = []
        self._rng = np.random.default_rng(cfg.rng_seed)
        n_init = cfg.init_episodes
        if n_init is None:
            n_init = DEFAULT_INIT_EPISODES[cfg.algorithm]
        self._init_plan = (theta_space.sample_latin(n_init, self._rng)
                           if n_init > 0 else np.zeros((0, theta_space.dim)))
        self._hyperparams: gp.KernelHyperparams | None = None
        self._last_refit = 0

    def observe(self, context: Context, theta, outcome: Outcome,
                reward: float) -> RolloutRecord:
        context.validate(self.target_space, self.env_space)
        record = RolloutRecord(env_context=context.env, params=theta,
                              outcome=outcome, actual_reward=reward)
        self.store.append(record)
        self._contexts_full.append(context.full)
        self.episodes += 1
        return record

    def _joint_dataset(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._contexts_full:
            dim = self.context_space.dim + self.theta_space.dim
            return np.zeros((0, dim)), np.zeros(0)
        contexts = np.array(self._contexts_full)
        return np.hstack([contexts, self.store.params()]), \
            self.store.actual_rewards()

    def _init_theta(self) -> np.ndarray | None:
        # space-filling warm start: until every plan row has been spent, the
        # acquisition has never seen some directions varied and cannot rank
        # them, so letting it choose would collapse exploration onto the
        # slice the model happens to call relevant first
        i = len(self.store)
        if i < len(self._init_plan):
            return self._init_plan[i].copy()
        return None

    def _refit_due(self) -> bool:
        n = len(self.store)
        if n < 2:
            return False
        return n <= self.cfg.refit_warmup \
            or n - self._last_refit >= self.cfg.refit_period

    def _scheduled_hyperparams(self, inputs, targets,
                               input_space) -> gp.KernelHyperparams:
        if self._hyperparams is None:
            self._hyperparams = _initial_hyperparams(input_space.dim)
        if self._refit_due():
            model = gp.fit(inputs, targets, self._hyperparams,
                           input_space=input_space, standardize=True)
            model = gp.refit(model, restarts=self.cfg.refit_restarts,
                             rng=self._rng,
                             bounds=_hyperparam_bounds(input_space.dim),
                             prior=_hyperparam_prior(input_space.dim))
            self._hyperparams = model.hyperparams
            self._last_refit = len(self.store)
        return self._hyperparams


class BocpsLearner(_BoLearnerBase):
    """Joint reward model on (context, theta), trained on collection-time
    rewards; selection is GP-UCB over theta."""

    def select(self, context: Context) -> np.ndarray:
        dataset = self._joint_dataset()
        hyperparams = self._scheduled_hyperparams(
            *dataset, self.context_space.concat(self.theta_space))
        planned = self._init_theta()
        if planned is not None:
            return planned
        return bocps_select(dataset, context, self.context_space,
                            self.theta_space, hyperparams, self.cfg)

    def select_greedy(self, context: Context) -> np.ndarray:
        hyperparams = self._hyperparams or _initial_hyperparams(
            self.context_space.dim + self.theta_space.dim)
        return bocps_select(self._joint_dataset(), context, self.context_space,
                            self.theta_space, hyperparams, self.cfg, kappa=0.0)


class BofcpsLearner(_BoLearnerBase):
    """Target-specific reward models on (env, theta) via re-evaluation."""

    def _input_space(self) -> SearchSpace:
        return self.env_space.concat(self.theta_space)

    def _maybe_refit(self, refit_target) -> gp.KernelHyperparams:
        # hyperparameters are tuned on the dataset re-scored at a concrete
        # query target; a fixed reference point would bias the relevance
        # estimates toward whatever directions that one target ignores
        inputs, rewards = _reduced_dataset(
            self.store, self.reward_fn, refit_target,
            self.env_space.dim, self.theta_space.dim)
        return self._scheduled_hyperparams(inputs, rewards, self._input_space())

    def select(self, context: Context) -> np.ndarray:
        hyperparams = self._maybe_refit(context.target)
        planned = self._init_theta()
        if planned is not None:
            return planned
        kind = self.cfg.acquisition_kind
        if kind == "random":
            return self.theta_space.sample_uniform(1, self._rng)[0]
        if kind == "es":
            return self._select_es(context, hyperparams)
        return bofcps_select(self.store, self.reward_fn, context,
                             self.env_space, self.theta_space, hyperparams,
                             self.cfg)

    def _select_es(self, context: Context,
                   hyperparams: gp.KernelHyperparams) -> np.ndarray:
        inputs, rewards = _reduced_dataset(
            self.store, self.reward_fn, context.target,
            self.env_space.dim, self.theta_space.dim)
        model = gp.fit(inputs, rewards, hyperparams,
                       input_space=self._input_space(), standardize=True)
        acq = self.cfg.acquisition
        candidates = self.theta_space.sample_latin(acq.n_candidates, self._rng)
        reps = RepresenterSet(context.env[None, :], candidates[None, :, :])
        engine = JointEsEngine(model, reps, acq, rng=self._rng)
        prefix = context.env

        def objective(thetas):
            pts = np.hstack([np.broadcast_to(prefix, (thetas.shape[0],
                                                      prefix.shape[0])),
                             thetas])
            return engine.gains(pts)

        theta, _ = _maximize(objective, self.theta_space, self.cfg)
        return theta

    def select_greedy(self, context: Context) -> np.ndarray:
        hyperparams = self._hyperparams or _initial_hyperparams(
            self._input_space().dim)
        return bofcps_select(self.store, self.reward_fn, context,
                             self.env_space, self.theta_space, hyperparams,
                             self.cfg, kappa=0.0)


class BofcpsHerLearner(_BoLearnerBase):
    """Joint-model selection over data augmented with relabeled rollouts."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._augmented: list[tuple[np.ndarray, np.ndarray, float]] = []

    def observe(self, context, theta, outcome, reward):
        record = super().observe(context, theta, outcome, reward)
        sample = her_augment(record, self.reward_fn)
        self._augmented.append((sample.context, sample.params, sample.reward))
        return record

    def select(self, context: Context) -> np.ndarray:
        dataset = self._dataset_with_relabels()
        hyperparams = self._scheduled_hyperparams(
            *dataset, self.context_space.concat(self.theta_space))
        planned = self._init_theta()
        if planned is not None:
            return planned
        return bofcps_her_select(dataset, context, self.context_space,
                                 self.theta_space, hyperparams, self.cfg)

    def select_greedy(self, context: Context) -> np.ndarray:
        hyperparams = self._hyperparams or _initial_hyperparams(
            self.context_space.dim + self.theta_space.dim)
        return bofcps_her_select(self._dataset_with_relabels(), context,
                                 self.context_space, self.theta_space,
                                 hyperparams, self.cfg, kappa=0.0)

    def _dataset_with_relabels(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._contexts_full:
            dim = self.context_space.dim + self.theta_space.dim
            return np.zeros((0, dim)), np.zeros(0)
        rows, values = [], []
        for ctx, record, (aug_ctx, aug_theta, aug_reward) in zip(
                self._contexts_full, self.store.records, self._augmented):
            rows.append(np.concatenate([ctx, record.params]))
            values.append(record.actual_reward)
            rows.append(np.concatenate([aug_ctx, aug_theta]))
            values.append(aug_reward)
        return np.array(rows), np.array(values)


class AcesLearner(BocpsLearner):
    """Active joint-space learner: picks (context, theta) queries."""

    requires_context = False

    def select_query(self) -> tuple[Context, np.ndarray]:
        dataset = self._joint_dataset()
        hyperparams = self._scheduled_hyperparams(
            *dataset, self.context_space.concat(self.theta_space))
        planned = self._init_theta()
        if planned is not None:
            ctx_vec = self.context_space.sample_uniform(1, self._rng)[0]
            return Context.from_full(ctx_vec, self.env_space.dim), planned
        ctx_vec, theta = aces_select(dataset, self.context_space,
                                     self.theta_space, hyperparams, self.cfg,
                                     self._rng)
        return Context.from_full(ctx_vec, self.env_space.dim), theta


class FacesLearner(BofcpsLearner):
    """Active factored learner: picks (env context, theta); the commanded
    target is indifferent for learning and drawn uniformly for logging."""

    requires_context = False

    def select_query(self) -> tuple[Context, np.ndarray]:
        # hyperparameter refits rotate over uniformly drawn targets, matching
        # the distribution of representer branches the ensemble models
        refit_target = self.target_space.sample_uniform(1, self._rng)[0]
        hyperparams = self._maybe_refit(refit_target)
        theta = self._init_theta()
        if theta is not None:
            env_q = self.env_space.sample_uniform(1, self._rng)[0]
        else:
            env_q, theta = faces_select(self.store, self.reward_fn,
                                        self.target_space, self.env_space,
                                        self.theta_space, hyperparams, self.cfg,
                                        self._rng)
        target = self.target_space.sample_uniform(1, self._rng)[0]
        return Context(target=target, env=env_q), theta


class CrepsLearner:
    """Episodic relative-entropy policy search baseline."""

    requires_context = True

    def __init__(self, target_space: SearchSpace, env_space: SearchSpace,
                 theta_space: SearchSpace, reward_fn, cfg: LearnerConfig):
        self.target_space = target_space
        self.env_space = env_space
        self.theta_space = theta_space
        self.context_space = target_space.concat(env_space)
        self.reward_fn = reward_fn
        self.cfg = cfg
        feature_dim = creps_feature_dim(self.context_space.dim)
        if cfg.creps_period < feature_dim + 1:
            raise ContractError(
                f"creps_period must be at least {feature_dim + 1} for "
                f"{self.context_space.dim}-dimensional contexts")
        self.store = ExperienceStore(env_space, theta_space)
        self.policy = CrepsPolicy.initial(self.context_space.dim, theta_space)
        self.episodes = 0
        self.kl_history: list[float] = []
        self._rng = np.random.default_rng(cfg.rng_seed)
        self._batch: list[tuple[np.ndarray, np.ndarray, float]] = []
        self._contexts_full: list[np.ndarray] = []

    def select(self, context: Context) -> np.ndarray:
        theta = self.policy.sample(context.full, self._rng)
        return self.theta_space.clip(theta)

    def select_greedy(self, context: Context) -> np.ndarray:
        return self.theta_space.clip(self.policy.mean_params(context.full))

    def observe(self, context: Context, theta, outcome: Outcome,
                reward: float) -> RolloutRecord:
        context.validate(self.target_space, self.env_space)
        record = RolloutRecord(env_context=context.env, params=theta,
                              outcome=outcome, actual_reward=reward)
        self.store.append(record)
        self._contexts_full.append(context.full)
        self._batch.append((context.full, np.asarray(theta, dtype=float),
                            float(reward)))
        self.episodes += 1
        if len(self._batch) >= self.cfg.creps_period:
            contexts = np.array([b[0] for b in self._batch])
            params = np.array([b[1] for b in self._batch])
            rewards = np.array([b[2] for b in self._batch])
            self.policy, info = creps_update(contexts, params, rewards,
                                             self.policy,
                                             self.cfg.creps_epsilon)
            if info.get("applied", False):
                self.kl_history.append(info["kl"])
            self._batch = []
        return record


def make_learner(cfg: LearnerConfig, target_space: SearchSpace,
                 env_space: SearchSpace, theta_space: SearchSpace, reward_fn):
    """Instantiate the learner named by the config's algorithm tag."""
    classes = {
        "bo-cps": BocpsLearner,
        "bo-fcps": BofcpsLearner,
        "bo-fcps-her": BofcpsHerLearner,
        "aces": AcesLearner,
        "faces": FacesLearner,
        "c-reps": CrepsLearner,
    }
    return classes[cfg.algorithm](target_space, env_space, theta_space,
                                  reward_fn, cfg)


def run_episode(learner, environment, context: Context | None,
                rng: np.random.Generator) -> RolloutRecord:
    """One learning episode: select, roll out with training noise, record.

    Passive learners require the harness-sampled context; active learners
    are handed None and choose their own query.
    """
    if context is None:
        if learner.requires_context:
            raise ContractError("passive learner needs a harness context")
        context, theta = learner.select_query()
    else:
        theta = learner.select(context)
    theta = np.asarray(theta, dtype=float)
    if not learner.theta_space.contains(theta, atol=1e-9):
        raise ContractError("selected parameters left their box")
    outcome = environment.rollout(context.env, theta, train_mode=True, rng=rng)
    reward = environment.reward_fn(context.target, outcome, theta)
    return learner.observe(context, theta, outcome, float(reward))
