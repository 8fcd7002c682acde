"""Self-contained environments: a 3-D toy cannon and a DMP-based thrower.

The cannon shoots from the origin over random hilly terrain at ground
targets; its controller parameters are horizontal orientation, vertical
angle, and launch speed.  The thrower integrates a dynamic movement
primitive from a start position, releases a ball with the end-effector's
final state, and scores the ballistic landing point.  Both environments
satisfy the factorization premise: the commanded target never enters the
dynamics, so outcomes can be re-scored under arbitrary targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .experience import Outcome
from .optim import SearchSpace

# cannon boxes: theta = (alpha, beta, v), targets on the ground plane
CANNON_PARAM_SPACE = SearchSpace(
    [0.0, 0.01, 0.1], [2.0 * math.pi, math.pi / 2 - 0.2, 5.0])
CANNON_TARGET_SPACE = SearchSpace([-11.0, -11.0], [11.0, 11.0])
# active variant appends the shoot indicator to the target context
ACTIVE_CANNON_TARGET_SPACE = SearchSpace([-11.0, -11.0, 0.0], [11.0, 11.0, 1.0])

# flat launch pad: terrain is masked to zero inside PAD_RADIUS and blends
# smoothly up to full height at PAD_BLEND_RADIUS; generated hill centers
# stay outside the blend region so each keeps its nominal peak
PAD_RADIUS = 1.5
PAD_BLEND_RADIUS = 3.0


@dataclass(frozen=True)
class Hill:
    center: np.ndarray
    height: float
    width: float

    def __post_init__(self):
        center = np.array(self.center, dtype=float)
        if center.shape != (2,):
            raise ContractError("hill center must be a 2-vector")
        center.flags.writeable = False
        object.__setattr__(self, "center", center)
        if not (self.height >= 0 and np.isfinite(self.height)):
            raise ContractError("hill height must be non-negative")
        if not (self.width > 0 and np.isfinite(self.width)):
            raise ContractError("hill width must be positive")


@dataclass(frozen=True)
class CannonWorld:
    gravity: float = 1.0
    hills: tuple[Hill, ...] = ()
    launch_noise_deg: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.gravity <= 0:
            raise ContractError("gravity must be positive")
        if self.launch_noise_deg < 0:
            raise ContractError("launch noise must be non-negative")

    @classmethod
    def generate(cls, seed: int, n_hills: int = 4, gravity: float = 1.0,
                 launch_noise_deg: float = 1.0) -> "CannonWorld":
        rng = np.random.default_rng(seed)
        hills = []
        while len(hills) < n_hills:
            center = rng.uniform(CANNON_TARGET_SPACE.lower,
                                 CANNON_TARGET_SPACE.upper)
            if np.hypot(center[0], center[1]) < PAD_BLEND_RADIUS:
                continue
            height = rng.uniform(0.5, 2.0)
            width = rng.uniform(1.5, 3.0)
            hills.append(Hill(center, height, width))
        return cls(gravity=gravity, hills=tuple(hills),
                   launch_noise_deg=launch_noise_deg, seed=seed)

    def replay_metadata(self) -> dict:
        return {
            "kind": "cannon",
            "gravity": self.gravity,
            "launch_noise_deg": self.launch_noise_deg,
            "seed": self.seed,
            "hills": [{"center": h.center.tolist(), "height": h.height,
                       "width": h.width} for h in self.hills],
        }


@dataclass(frozen=True)
class LaunchParams:
    alpha: float
    beta: float
    v: float

    def __post_init__(self):
        if not CANNON_PARAM_SPACE.contains(self.as_vector, atol=1e-9):
            raise ContractError("launch parameters outside their box")

    @property
    def as_vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.v])

    @classmethod
    def from_vector(cls, theta) -> "LaunchParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (3,):
            raise ContractError("launch parameter vector must have 3 entries")
        return cls(alpha=float(theta[0]), beta=float(theta[1]), v=float(theta[2]))


def _pad_mask(r):
    # C2-smooth 0 -> 1 ramp between the pad edge and the blend radius
    u = np.clip((r - PAD_RADIUS) / (PAD_BLEND_RADIUS - PAD_RADIUS), 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def terrain_elevation(world: CannonWorld, x, y):
    """Ground height at (x, y); zero on the launch pad around the origin."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    total = np.zeros(np.broadcast_shapes(x.shape, y.shape))
    for h in world.hills:
        d2 = (x - h.center[0]) ** 2 + (y - h.center[1]) ** 2
        total += h.height * np.exp(-d2 / (2.0 * h.width**2))
    masked = _pad_mask(np.hypot(x, y)) * total
    if masked.ndim == 0:
        return float(masked)
    return masked


_LANDING_DT = 0.01
_LANDING_TMAX = 100.0


def _first_landing_time(world: CannonWorld, vel: np.ndarray) -> float:
    """First t > 0 where the ballistic arc meets the terrain."""
    g = world.gravity
    vz = vel[2]

    def gap(t):
        z = vz * t - 0.5 * g * t * t
        return z - terrain_elevation(world, vel[0] * t, vel[1] * t)

    # terrain never dips below the z = 0 plane, so the flat-ground landing
    # time bounds the search horizon
    t_flat = max(2.0 * vz / g, 0.0)
    if t_flat > _LANDING_TMAX:
        raise ContractError("trajectory exceeds the landing time horizon")
    hi = _LANDING_DT
    if t_flat > _LANDING_DT:
        grid = np.arange(_LANDING_DT, t_flat + 2 * _LANDING_DT, _LANDING_DT)
        z = vz * grid - 0.5 * g * grid * grid
        gaps = z - terrain_elevation(world, vel[0] * grid, vel[1] * grid)
        below = gaps <= 0.0
        if not np.any(below):
            raise ContractError("ballistic arc never re-enters the terrain")
        first = int(np.argmax(below))
        hi = grid[first]
    lo = max(hi - _LANDING_DT, 0.0)
    # the set {t: arc above ground} starts at 0+, so bisect its boundary
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    t_land = 0.5 * (lo + hi)
    if abs(gap(t_land)) > 1e-8:
        raise ContractError("landing refinement failed to meet tolerance")
    return t_land


def cannon_rollout(world: CannonWorld, params, train_mode: bool = False,
                   rng: np.random.Generator | None = None) -> Outcome:
    """Fire once; the outcome stores the landing point and commanded speed.

    In train mode both angles are perturbed by independent Gaussian noise of
    ``world.launch_noise_deg`` degrees; the commanded target never enters.
    """
    if isinstance(params, LaunchParams):
        launch = params
    else:
        launch = LaunchParams.from_vector(params)
    alpha, beta = launch.alpha, launch.beta
    if train_mode:
        if rng is None:
            raise ContractError("train-mode rollouts need an rng")
        sigma = math.radians(world.launch_noise_deg)
        alpha = alpha + sigma * rng.standard_normal()
        beta = beta + sigma * rng.standard_normal()
    vel = launch.v * np.array([
        math.cos(beta) * math.cos(alpha),
        math.cos(beta) * math.sin(alpha),
        math.sin(beta),
    ])
    t_land = _first_landing_time(world, vel)
    landing = np.array([vel[0] * t_land, vel[1] * t_land])
    return Outcome(stats=np.array([landing[0], landing[1], launch.v]),
                   achieved_target=landing)


class CannonReward:
    """R = -||target - achieved|| - 0.05 v^2, with v the commanded speed."""

    def __call__(self, target, outcome: Outcome, params=None) -> float:
        target = np.asarray(target, dtype=float)
        return float(self.batch(target[None, :], outcome.stats[None, :],
                                None if params is None
                                else np.asarray(params)[None, :])[0])

    def batch(self, targets, stats, params=None):
        targets = np.asarray(targets, dtype=float)
        stats = np.asarray(stats, dtype=float)
        delta = targets - stats[:, :2]
        dist = np.sqrt(np.sum(delta * delta, axis=1))
        return -dist - 0.05 * stats[:, 2] * stats[:, 2]


class ActiveCannonReward:
    """Cannon reward gated by the shoot indicator in the target context.

    With the indicator above 0.1 the task is "don't shoot": the reward is
    the negated norm of the commanded parameter vector.  The indicator is a
    pure target-type context; it never enters the rollout.
    """

    indicator_threshold = 0.1

    def __init__(self):
        self._base = CannonReward()

    def __call__(self, target, outcome: Outcome, params=None) -> float:
        target = np.asarray(target, dtype=float)
        if params is None:
            raise ContractError("active cannon reward needs the parameter vector")
        return float(self.batch(target[None, :], outcome.stats[None, :],
                                np.asarray(params, dtype=float)[None, :])[0])

    def batch(self, targets, stats, params=None):
        targets = np.asarray(targets, dtype=float)
        if params is None:
            raise ContractError("active cannon reward needs the parameter matrix")
        params = np.asarray(params, dtype=float)
        shoot = self._base.batch(targets[:, :2], stats)
        hold = -np.sqrt(np.sum(params * params, axis=1))
        return np.where(targets[:, 2] <= self.indicator_threshold, shoot, hold)


# ---------------------------------------------------------------------------
# dynamic movement primitives
# ---------------------------------------------------------------------------

DMP_SPRING = 625.0 / 4.0
DMP_DAMPING = 25.0
DMP_PHASE_DECAY = 25.0 / 3.0
DMP_BASIS_COUNT = 25


@dataclass(frozen=True)
class DmpParams:
    """Critically damped trajectory generator with a learned forcing term."""

    shape_weights: np.ndarray  # (basis count, spatial dims)
    goal: np.ndarray
    goal_velocity: np.ndarray
    duration: float
    spring: float = DMP_SPRING
    damping: float = DMP_DAMPING

    def __post_init__(self):
        w = np.array(self.shape_weights, dtype=float)
        if w.ndim != 2 or w.shape[0] < 2:
            raise ContractError("shape_weights must be (basis count >= 2, dims)")
        w.flags.writeable = False
        object.__setattr__(self, "shape_weights", w)
        goal = np.array(self.goal, dtype=float)
        gvel = np.array(self.goal_velocity, dtype=float)
        if goal.shape != (w.shape[1],) or gvel.shape != (w.shape[1],):
            raise ContractError("goal and goal_velocity must match weight dims")
        goal.flags.writeable = False
        gvel.flags.writeable = False
        object.__setattr__(self, "goal", goal)
        object.__setattr__(self, "goal_velocity", gvel)
        if not (self.duration > 0 and np.isfinite(self.duration)):
            raise ContractError("duration must be positive")
        if abs(self.damping - 2.0 * math.sqrt(self.spring)) > 1e-9:
            raise ContractError("damping must equal 2*sqrt(spring)")

    @property
    def n_basis(self) -> int:
        return self.shape_weights.shape[0]

    @property
    def dims(self) -> int:
        return self.shape_weights.shape[1]


def _basis_centers(n_basis: int) -> tuple[np.ndarray, np.ndarray]:
    # centers traced by the phase at equally spaced normalized times
    times = np.linspace(0.0, 1.0, n_basis)
    centers = np.exp(-DMP_PHASE_DECAY * times)
    gaps = np.diff(centers)
    widths = 1.0 / (2.0 * gaps**2)
    widths = np.append(widths, widths[-1])
    return centers, widths


def _forcing_features_for(z, centers, widths) -> np.ndarray:
    # normalized, phase-gated basis activations
    z = np.atleast_1d(np.asarray(z, dtype=float))
    phi = np.exp(-widths[None, :] * (z[:, None] - centers[None, :]) ** 2)
    return z[:, None] * phi / np.sum(phi, axis=1, keepdims=True)


def dmp_integrate(p: DmpParams, y0, dt: float, n_steps: int,
                  v0=None) -> tuple[np.ndarray, np.ndarray]:
    """RK4 integration; returns positions and real-time velocities per step.

    The system runs in normalized time so that scaling ``duration`` and
    ``dt`` together reproduces the same path.  A goal moving linearly into
    (goal, goal_velocity) at the final time makes nonzero end velocities
    exact tracking solutions rather than steady-state lags.
    """
    if dt <= 0 or n_steps < 1:
        raise ContractError("dt must be positive and n_steps at least 1")
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (p.dims,):
        raise ContractError(f"start state must have shape ({p.dims},)")
    v0 = np.zeros(p.dims) if v0 is None else np.asarray(v0, dtype=float)
    if v0.shape != (p.dims,):
        raise ContractError(f"start velocity must have shape ({p.dims},)")

    du = dt / p.duration
    centers, widths = _basis_centers(p.n_basis)
    ramp = p.duration * p.goal_velocity  # goal speed in normalized time

    def accel(u, y, yd):
        z = math.exp(-DMP_PHASE_DECAY * u)
        moving_goal = p.goal - ramp * (1.0 - u)
        force = _forcing_features_for(z, centers, widths)[0] @ p.shape_weights
        return p.spring * (moving_goal - y) - p.damping * yd \
            + p.damping * ramp + force

    positions = np.empty((n_steps + 1, p.dims))
    velocities = np.empty((n_steps + 1, p.dims))
    y, yd = y0.copy(), v0 * p.duration
    positions[0], velocities[0] = y, yd / p.duration
    u = 0.0
    for k in range(n_steps):
        a1 = accel(u, y, yd)
        k1y, k1v = yd, a1
        a2 = accel(u + du / 2, y + du / 2 * k1y, yd + du / 2 * k1v)
        k2y, k2v = yd + du / 2 * k1v, a2
        a3 = accel(u + du / 2, y + du / 2 * k2y, yd + du / 2 * k2v)
        k3y, k3v = yd + du / 2 * k2v, a3
        a4 = accel(u + du, y + du * k3y, yd + du * k3v)
        k4y, k4v = yd + du * k3v, a4
        y = y + du / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        yd = yd + du / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        u += du
        positions[k + 1], velocities[k + 1] = y, yd / p.duration
    return positions, velocities


def dmp_imitate(demo: np.ndarray, basis_count: int, duration: float) -> np.ndarray:
    """Least-squares shape weights reproducing a demonstrated path.

    The demo rows are positions sampled uniformly over ``duration``; the
    goal state is taken from the demo's end.
    """
    demo = np.asarray(demo, dtype=float)
    if demo.ndim != 2 or demo.shape[0] < 5:
        raise ContractError("demo must be (n >= 5 samples, dims)")
    if basis_count < 2:
        raise ContractError("need at least two basis functions")
    n = demo.shape[0] - 1
    du = 1.0 / n
    u = np.linspace(0.0, 1.0, n + 1)
    vel = np.gradient(demo, du, axis=0)  # normalized-time derivatives
    acc = np.gradient(vel, du, axis=0)

    goal = demo[-1]
    ramp = vel[-1]  # == duration * goal_velocity
    moving_goal = goal[None, :] - ramp[None, :] * (1.0 - u)[:, None]
    forcing = acc - DMP_SPRING * (moving_goal - demo) + DMP_DAMPING * vel \
        - DMP_DAMPING * ramp[None, :]

    centers, widths = _basis_centers(basis_count)
    z = np.exp(-DMP_PHASE_DECAY * u)
    design = _forcing_features_for(z, centers, widths)
    weights, *_ = np.linalg.lstsq(design, forcing, rcond=None)
    return weights


def imitate_params(demo: np.ndarray, basis_count: int,
                   duration: float) -> DmpParams:
    """Full DMP fitted to a demo: weights plus its end state as the goal."""
    demo = np.asarray(demo, dtype=float)
    weights = dmp_imitate(demo, basis_count, duration)
    n = demo.shape[0] - 1
    vel = np.gradient(demo, 1.0 / n, axis=0)
    return DmpParams(shape_weights=weights, goal=demo[-1],
                     goal_velocity=vel[-1] / duration, duration=duration)


# ---------------------------------------------------------------------------
# thrower
# ---------------------------------------------------------------------------

# axis 1 is height; ground is the height = 0 plane and landings are the
# (axis 0, axis 2) coordinates
THROWER_GRAVITY = 9.81
THROWER_GOAL_SPACE = SearchSpace([-0.5, 1.0, -0.5], [0.5, 1.5, 0.5])
THROWER_GOAL_VEL_SPACE = SearchSpace([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
THROWER_PARAM_SPACE = THROWER_GOAL_SPACE.concat(THROWER_GOAL_VEL_SPACE)
THROWER_START_SPACE = SearchSpace([-0.2, 0.8, -0.2], [0.2, 1.2, 0.2])
THROWER_TARGET_SPACE = SearchSpace([-1.0, -1.0], [1.0, 1.0])


def _minimum_jerk(start, end, n_samples: int) -> np.ndarray:
    u = np.linspace(0.0, 1.0, n_samples)[:, None]
    blend = 10 * u**3 - 15 * u**4 + 6 * u**5
    return np.asarray(start)[None, :] + blend * (np.asarray(end)
                                                 - np.asarray(start))[None, :]


@dataclass(frozen=True)
class ThrowerWorld:
    gravity: float = THROWER_GRAVITY
    duration: float = 1.0
    dt: float = 0.01
    shape_weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.gravity <= 0 or self.duration <= 0 or self.dt <= 0:
            raise ContractError("gravity, duration, and dt must be positive")
        weights = self.shape_weights
        if weights is None:
            demo = _minimum_jerk(THROWER_START_SPACE.center,
                                 THROWER_GOAL_SPACE.center, 101)
            weights = dmp_imitate(demo, DMP_BASIS_COUNT, self.duration)
        weights = np.array(weights, dtype=float)
        weights.flags.writeable = False
        object.__setattr__(self, "shape_weights", weights)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def replay_metadata(self) -> dict:
        return {"kind": "thrower", "gravity": self.gravity,
                "duration": self.duration, "dt": self.dt}


def ballistic_landing(position, velocity, gravity: float) -> np.ndarray:
    """Ground-plane landing point of a released ball; axis 1 is height."""
    position = np.asarray(position, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    h, vh = position[1], velocity[1]
    if h <= 0:
        return np.array([position[0], position[2]])
    t = (vh + math.sqrt(vh * vh + 2.0 * gravity * h)) / gravity
    return np.array([position[0] + velocity[0] * t,
                     position[2] + velocity[2] * t])


def thrower_rollout(world: ThrowerWorld, env_context, theta,
                    rng: np.random.Generator | None = None) -> Outcome:
    """Run the DMP from the start position and release into free flight.

    theta stacks the commanded goal and goal velocity; the ball takes the
    final DMP state exactly.  The rollout is deterministic; rng is accepted
    for interface uniformity.
    """
    start = np.asarray(env_context, dtype=float)
    if not THROWER_START_SPACE.contains(start, atol=1e-9):
        raise ContractError("start position outside its box")
    theta = np.asarray(theta, dtype=float)
    if not THROWER_PARAM_SPACE.contains(theta, atol=1e-9):
        raise ContractError("thrower parameters outside their box")
    params = DmpParams(shape_weights=world.shape_weights, goal=theta[:3],
                       goal_velocity=theta[3:], duration=world.duration)
    positions, velocities = dmp_integrate(params, start, world.dt, world.n_steps)
    landing = ballistic_landing(positions[-1], velocities[-1], world.gravity)
    return Outcome(stats=landing, achieved_target=landing)


class ThrowerReward:
    """R = -||target - achieved landing||."""

    def __call__(self, target, outcome: Outcome, params=None) -> float:
        target = np.asarray(target, dtype=float)
        return float(self.batch(target[None, :], outcome.stats[None, :])[0])

    def batch(self, targets, stats, params=None):
        targets = np.asarray(targets, dtype=float)
        stats = np.asarray(stats, dtype=float)
        delta = targets - stats[:, :2]
        return -np.sqrt(np.sum(delta * delta, axis=1))
