"""Scripted peeling expert: surface-following waypoints and demo episodes.

The planner lays waypoints one nominal skin thickness below the pristine
surface, oriented along the local tangent. The demo driver descends from
the hover pose, then tracks the waypoints with proportional pose feedback,
optionally corrupting the commanded depth with smooth noise and stopping
early, which produces the graded-quality spread the learners train on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arm import Pose2, wrap_angle
from .controller import ControllerGains
from .errors import IntegrationDivergedError, ContractViolationError
from .grading import QualScore, grade_trajectory
from .loop import START_X_FRACTION, PeelSession
from .observe import Observation
from .policy import clamp_action
from .produce import PeelTrace, ProduceProfile, make_produce
from .rewards import PerStepReward, reward_trajectory, reward_values
from .seeding import derive_seed, rng_from

N_WAYPOINTS = 20
#: Outer steps before cutting starts: a descent to just above the skin
#: followed by a two-step pierce. The first DESCENT_STEPS samples stay
#: contact-free, which force standardization relies on for its bias
#: estimate.
DESCENT_STEPS = 10
APPROACH_STEPS = DESCENT_STEPS + 2


def plan_surface_trajectory(
    profile: ProduceProfile,
    n_waypoints: int = N_WAYPOINTS,
    depth: float | None = None,
    inset: float = START_X_FRACTION,
) -> list[Pose2]:
    """Produce-local cutting waypoints offset below the pristine surface.

    Waypoints advance monotonically in x from one inset end to the other;
    each sits `depth` below the surface (default: nominal skin thickness)
    and is oriented along the local surface tangent so the blade normal
    agrees with the surface normal.
    """
    if n_waypoints < 2:
        raise ContractViolationError("need at least two waypoints")
    if not 0.0 < inset < 0.5:
        raise ContractViolationError("inset must lie in (0, 0.5)")
    if depth is None:
        depth = profile.t_nom
    L = profile.length
    # Waypoints are equally spaced along the surface arc, not along x, so
    # steep sections get proportionally more of them and the per-step
    # blade motion stays roughly constant. x stays strictly monotone.
    xs = profile.xs
    seg = np.hypot(np.diff(xs), np.diff(profile.surface_original))
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    arc_lo = float(np.interp(inset * L, xs, arc))
    arc_hi = float(np.interp((1.0 - inset) * L, xs, arc))
    targets = np.linspace(arc_lo, arc_hi, n_waypoints)
    out = []
    for c in targets:
        x = float(np.interp(c, arc, xs))
        y = profile.height_at(x, original=True) - depth
        theta = math.atan(profile.slope_at(x))
        out.append(Pose2(x, y, theta))
    return out


def surface_arc_length(profile: ProduceProfile, inset: float = START_X_FRACTION) -> float:
    """Arc length of the pristine surface between the two inset ends."""
    xs = profile.xs
    seg = np.hypot(np.diff(xs), np.diff(profile.surface_original))
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    lo = float(np.interp(inset * profile.length, xs, arc))
    hi = float(np.interp((1.0 - inset) * profile.length, xs, arc))
    return hi - lo


def feedback_action(session: PeelSession, target_local: Pose2) -> np.ndarray:
    """Pose delta from the measured blade pose to a local-frame target."""
    measured = session.knife_pose_local()
    return np.array([
        target_local.x - measured.x,
        target_local.y - measured.y,
        wrap_angle(target_local.theta - measured.theta),
    ])


def _depth_deviation(noise: float, u: np.ndarray, rng) -> np.ndarray:
    """Smooth per-waypoint depth error: a constant offset plus a wobble."""
    g0 = rng.standard_normal()
    g1 = rng.standard_normal()
    freq = rng.uniform(1.0, 2.5)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    return noise * (0.7 * g0 + 0.7 * g1 * np.sin(2.0 * math.pi * freq * u + phase))


def plan_demo_targets(
    profile: ProduceProfile,
    hover: Pose2,
    rng,
    depth_noise: float = 0.0,
    early_stop_prob: float = 0.0,
) -> list[Pose2]:
    """Full outer-step target sequence for one scripted episode.

    Starts with a vertical descent from the hover pose to just above the
    skin, a two-step pierce deep enough to beat the skin toughness, a
    gentle ease into the first cutting segment, then the (possibly
    noise-corrupted, possibly truncated) surface traverse.
    """
    # Cap the per-step blade travel at ~6 mm by adding waypoints on
    # high-curvature produce.
    n_wp = max(N_WAYPOINTS, 1 + math.ceil(surface_arc_length(profile) / 0.006))
    waypoints = plan_surface_trajectory(profile, n_waypoints=n_wp)
    u = np.arange(len(waypoints)) / (len(waypoints) - 1)
    dev = _depth_deviation(depth_noise, u, rng)
    noisy = [
        Pose2(w.x, w.y - d, w.theta) for w, d in zip(waypoints, dev)
    ]
    n_traverse = len(noisy) - 1
    if early_stop_prob > 0.0 and rng.random() < early_stop_prob:
        n_traverse = int(rng.integers(2, max(3, len(noisy) // 2)))

    # Descend at least far enough that the normal force beats the skin
    # toughness; on steep starts the nominal depth alone sits below the
    # piercing threshold.
    x0 = noisy[0].x
    slope0 = profile.slope_at(x0)
    pierce_depth = max(
        profile.t_nom,
        1.15 * profile.skin_toughness * math.hypot(1.0, slope0) / profile.flesh_stiffness,
    )
    y_pierce = min(noisy[0].y, profile.height_at(x0, original=True) - pierce_depth)

    targets: list[Pose2] = []
    y_skin = profile.height_at(x0, original=True) + 0.001
    for k in range(1, DESCENT_STEPS + 1):
        frac = k / DESCENT_STEPS
        targets.append(Pose2(x0, hover.y + (y_skin - hover.y) * frac, noisy[0].theta))
    for frac in (0.5, 1.0):
        targets.append(Pose2(x0, y_skin + (y_pierce - y_skin) * frac, noisy[0].theta))
    # Ease out of the pierce: splitting the first cutting segment keeps
    # the blade from corner-cutting into a steep face from standstill.
    first, second = noisy[0], noisy[1]
    for frac in (0.25, 0.55):
        targets.append(Pose2(
            first.x + (second.x - first.x) * frac,
            first.y + (second.y - first.y) * frac,
            first.theta + wrap_angle(second.theta - first.theta) * frac,
        ))
    targets.extend(noisy[1 : n_traverse + 1])
    return targets


@dataclass
class DemoResult:
    """One expert episode with everything the dataset and graders need."""

    category: str
    seed: int
    observations: list[Observation]
    actions: np.ndarray
    rewards: np.ndarray
    reward_steps: list[PerStepReward]
    trace: PeelTrace
    profile: ProduceProfile
    qual: QualScore
    flagged: bool
    diverged: bool
    clip_events: int
    ik_failures: int

    def __post_init__(self):
        if self.actions.shape != (len(self.observations), 3):
            raise ContractViolationError("one action per observation required")
        if self.rewards.shape != (len(self.observations),):
            raise ContractViolationError("one reward per observation required")


def generate_demo(
    category: str,
    seed: int,
    *,
    depth_noise: float = 0.0,
    early_stop_prob: float = 0.0,
    task: str | None = None,
    gains: ControllerGains | None = None,
    profile: ProduceProfile | None = None,
    ik_config=None,
) -> DemoResult:
    """Run one scripted peeling episode and grade it.

    `depth_noise` is the waypoint depth error scale in meters; episodes
    whose inner loop diverges are returned flagged with empty arrays so
    collectors can drop them without losing the event.
    """
    if profile is None:
        profile = make_produce(derive_seed(seed, "produce"), category)
    task = task if task is not None else category.removesuffix("-like")
    rng = rng_from(seed, "demo-noise")

    session = PeelSession(profile, gains=gains, max_steps=1,
                          ik_config=ik_config)
    targets = plan_demo_targets(
        profile, session.start_pose_local(), rng,
        depth_noise=depth_noise, early_stop_prob=early_stop_prob,
    )
    session = PeelSession(profile, gains=gains, max_steps=len(targets) + 2,
                          ik_config=ik_config)
    obs = session.reset()

    observations: list[Observation] = []
    actions: list[np.ndarray] = []
    diverged = False
    try:
        for target in targets:
            act = clamp_action(feedback_action(session, target))
            observations.append(obs)
            actions.append(act.delta)
            obs = session.step(act.delta)
    except IntegrationDivergedError:
        diverged = True

    if diverged or len(session.trace) == 0:
        return DemoResult(
            category=category, seed=seed,
            observations=[], actions=np.zeros((0, 3)), rewards=np.zeros(0),
            reward_steps=[], trace=session.trace, profile=profile,
            qual=QualScore(0, "discard"), flagged=True, diverged=diverged,
            clip_events=session.clip_events, ik_failures=session.ik_failures,
        )

    qual = grade_trajectory(session.trace, profile)
    reward_steps = reward_trajectory(session.trace, profile, task)
    return DemoResult(
        category=category, seed=seed,
        observations=observations, actions=np.asarray(actions),
        rewards=reward_values(reward_steps), reward_steps=reward_steps,
        trace=session.trace, profile=profile, qual=qual,
        flagged=False, diverged=False,
        clip_events=session.clip_events, ik_failures=session.ik_failures,
    )
