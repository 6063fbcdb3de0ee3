"""Closed-loop policy evaluation, rollout agents, and the ablation grid.

Agents map observations to pose-delta actions inside a live peel
session. The evaluator replays a fixed ladder of produce seeds for each
agent so comparisons across policies share episodes, grades every trace,
and aggregates success/score/reward statistics, with CSV and JSON
writers for downstream analysis. The ablation grid finetunes one policy
per weighting scheme on a shared dataset and evaluates all of them on
the same episode ladder, recording per-cell failures instead of
aborting the grid.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import ControllerGains
from .errors import ContractViolationError, IntegrationDivergedError
from .expert import feedback_action, plan_demo_targets
from .finetune import (
    SCHEMES,
    FinetuneConfig,
    FinetuneResult,
    RewardModel,
    compose_action,
    encode_trajectories,
    finetune,
)
from .grading import QualScore, grade_trajectory
from .loop import PeelSession
from .policy import ACTION_DIM, DiffusionPolicy, clamp_action
from .produce import CATEGORIES, ProduceProfile, make_produce
from .rewards import apply_density, reward_trajectory, reward_values
from .seeding import derive_seed, rng_from

#: Outer 10 Hz steps granted per evaluation episode. Scripted episodes
#: need roughly 45-60 steps to finish a full traverse, so this budget
#: lets a competent policy complete the peel while still bounding the
#: cost of a policy that wanders.
DEFAULT_EPISODE_STEPS = 64


# ------------------------------------------------------------------ agents


class ZeroActionAgent:
    """Holds the blade at the hover pose; the no-op failure floor."""

    name = "zero-action"

    def begin(self, session: PeelSession, seed: int) -> None:
        pass

    def act(self, obs, step_index: int):
        return np.zeros(ACTION_DIM)


class ScriptedAgent:
    """The scripted expert repackaged as a closed-loop agent.

    Replaying it through the evaluator must reproduce demo-quality
    peels, which pins the evaluator's episode mechanics to the same
    code path the dataset was collected with.
    """

    name = "scripted-expert"

    def __init__(self, depth_noise: float = 0.0, early_stop_prob: float = 0.0):
        self.depth_noise = float(depth_noise)
        self.early_stop_prob = float(early_stop_prob)
        self._session: PeelSession | None = None
        self._targets = []

    def begin(self, session: PeelSession, seed: int) -> None:
        rng = rng_from(seed, "demo-noise")
        self._targets = plan_demo_targets(
            session.profile, session.start_pose_local(), rng,
            depth_noise=self.depth_noise, early_stop_prob=self.early_stop_prob,
        )
        self._session = session

    def act(self, obs, step_index: int):
        if step_index >= len(self._targets):
            return None
        target = self._targets[step_index]
        return clamp_action(feedback_action(self._session, target)).delta


class DiffusionAgent:
    """Samples a diffusion policy once per outer step."""

    def __init__(self, policy: DiffusionPolicy, label: str = "diffusion"):
        self.policy = policy
        self.name = label
        self._seed = 0

    def begin(self, session: PeelSession, seed: int) -> None:
        self._seed = seed

    def act(self, obs, step_index: int):
        encoded = self.policy.encode_observation(obs)
        action = self.policy.diffusion_sample(
            encoded, derive_seed(self._seed, "act", step_index)
        )
        return action.delta


class ResidualAgent:
    """Frozen-base diffusion sample plus a learned residual correction.

    The residual is conditioned on the latent, the base action, and the
    reward model's penultimate feature (zeros when no reward model was
    used during finetuning), mirroring how it was trained.
    """

    def __init__(
        self,
        base: DiffusionPolicy,
        residual,
        reward_model: RewardModel | None = None,
        label: str = "residual",
    ):
        self.base = base
        self.residual = residual
        self.reward_model = reward_model
        self.name = label
        self._seed = 0

    def begin(self, session: PeelSession, seed: int) -> None:
        self._seed = seed

    def act(self, obs, step_index: int):
        encoded = self.base.encode_observation(obs)
        a = self.base.sample_normalized(
            encoded.z, derive_seed(self._seed, "act", step_index)
        )
        a_base = clamp_action(self.base.denormalize_action(a)).delta
        if self.reward_model is None:
            h = np.zeros(self.residual.h_dim)
        else:
            _, h = self.reward_model.predict(encoded.z, a_base)
        a_res = self.residual.correction(encoded.z, a_base, h)
        return compose_action(a_base, a_res).delta


def agent_for_result(
    result: FinetuneResult,
    base: DiffusionPolicy,
    reward_model: RewardModel | None,
) -> DiffusionAgent | ResidualAgent:
    """Wrap a finetune artifact in the agent that matches its scheme."""
    if result.policy is not None:
        return DiffusionAgent(result.policy, label=result.scheme)
    return ResidualAgent(base, result.residual, reward_model, label=result.scheme)


# ---------------------------------------------------------------- episodes


@dataclass(frozen=True)
class EpisodeResult:
    """Grades and counters for one evaluated episode."""

    index: int
    seed: int
    score: int
    descriptor: str
    success: bool
    mean_reward: float
    steps: int
    clip_events: int
    ik_failures: int
    diverged: bool


def run_policy_episode(
    agent,
    category: str,
    seed: int,
    *,
    task: str | None = None,
    max_steps: int = DEFAULT_EPISODE_STEPS,
    gains: ControllerGains | None = None,
    profile: ProduceProfile | None = None,
    ik_config=None,
    index: int = 0,
) -> EpisodeResult:
    """Roll one agent through one produce instance and grade the trace.

    A diverging inner loop ends the episode instead of propagating; the
    partial trace is graded like any other and the episode is flagged.
    """
    if profile is None:
        if category not in CATEGORIES:
            raise ContractViolationError(f"unknown category {category!r}")
        profile = make_produce(derive_seed(seed, "produce"), category)
    task = task if task is not None else profile.category.removesuffix("-like")

    session = PeelSession(profile, gains=gains, max_steps=max_steps,
                          ik_config=ik_config)
    obs = session.reset()
    agent.begin(session, seed)
    diverged = False
    t = 0
    try:
        while not session.done:
            action = agent.act(obs, t)
            if action is None:
                break
            obs = session.step(np.asarray(action, dtype=float))
            t += 1
    except IntegrationDivergedError:
        diverged = True

    if len(session.trace) == 0:
        qual = QualScore(0, "discard")
        mean_reward = 0.0
    else:
        qual = grade_trajectory(session.trace, profile)
        rewards = reward_values(reward_trajectory(session.trace, profile, task))
        mean_reward = float(np.mean(rewards)) if rewards.size else 0.0

    return EpisodeResult(
        index=index,
        seed=seed,
        score=qual.score,
        descriptor=qual.descriptor,
        success=qual.success,
        mean_reward=mean_reward,
        steps=len(session.trace),
        clip_events=session.clip_events,
        ik_failures=session.ik_failures,
        diverged=diverged,
    )


@dataclass
class EvaluationResult:
    """Aggregate statistics over a ladder of evaluated episodes."""

    label: str
    category: str
    seed: int
    episodes: list[EpisodeResult]
    wall_time_s: float

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    @property
    def success_rate(self) -> float:
        return float(np.mean([e.success for e in self.episodes]))

    @property
    def mean_score(self) -> float:
        return float(np.mean([e.score for e in self.episodes]))

    @property
    def mean_reward(self) -> float:
        return float(np.mean([e.mean_reward for e in self.episodes]))

    @property
    def n_diverged(self) -> int:
        return sum(e.diverged for e in self.episodes)

    def summary(self) -> dict:
        return {
            "label": self.label,
            "category": self.category,
            "seed": self.seed,
            "n_episodes": self.n_episodes,
            "success_rate": self.success_rate,
            "mean_score": self.mean_score,
            "mean_reward": self.mean_reward,
            "n_diverged": self.n_diverged,
            "clip_events": sum(e.clip_events for e in self.episodes),
            "ik_failures": sum(e.ik_failures for e in self.episodes),
            "score_histogram": {
                str(s): sum(1 for e in self.episodes if e.score == s)
                for s in range(10)
            },
            "wall_time_s": self.wall_time_s,
        }


def evaluate(
    agent,
    category: str,
    n_episodes: int,
    seed: int,
    *,
    task: str | None = None,
    max_steps: int = DEFAULT_EPISODE_STEPS,
    gains: ControllerGains | None = None,
    ik_config=None,
    label: str | None = None,
    episode_seeds: tuple[int, ...] | None = None,
) -> EvaluationResult:
    """Evaluate one agent over a deterministic ladder of episodes.

    Episode i always uses produce seed derive(seed, "episode", i), so two
    agents evaluated with the same (category, n_episodes, seed) face the
    same produce instances. Passing `episode_seeds` pins the ladder
    explicitly instead — e.g. to the seeds stored in a dataset, which
    replays the exact produce instances the dataset was collected on
    (training-distribution benchmark).
    """
    if episode_seeds is not None:
        if len(episode_seeds) < 1:
            raise ContractViolationError("episode_seeds must be nonempty")
        ladder = [int(s) for s in episode_seeds]
    else:
        if n_episodes < 1:
            raise ContractViolationError("n_episodes must be positive")
        ladder = [derive_seed(seed, "episode", i) for i in range(n_episodes)]
    started = time.perf_counter()
    episodes = []
    for i, episode_seed in enumerate(ladder):
        episodes.append(
            run_policy_episode(
                agent, category, episode_seed,
                task=task, max_steps=max_steps, gains=gains,
                ik_config=ik_config, index=i,
            )
        )
    return EvaluationResult(
        label=label if label is not None else getattr(agent, "name", "agent"),
        category=category,
        seed=seed,
        episodes=episodes,
        wall_time_s=time.perf_counter() - started,
    )


# ----------------------------------------------------------------- writers

EPISODE_CSV_FIELDS = (
    "index", "seed", "score", "descriptor", "success", "mean_reward",
    "steps", "clip_events", "ik_failures", "diverged",
)


def write_episode_csv(path, result: EvaluationResult) -> None:
    """Per-episode rows; bools rendered as 0/1 for easy aggregation."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EPISODE_CSV_FIELDS)
        writer.writeheader()
        for e in result.episodes:
            writer.writerow({
                "index": e.index,
                "seed": e.seed,
                "score": e.score,
                "descriptor": e.descriptor,
                "success": int(e.success),
                "mean_reward": f"{e.mean_reward:.6f}",
                "steps": e.steps,
                "clip_events": e.clip_events,
                "ik_failures": e.ik_failures,
                "diverged": int(e.diverged),
            })


def write_summary_json(path, summaries) -> None:
    """Dump one or many evaluation summaries as sorted, indented JSON."""
    path = Path(path)
    path.write_text(json.dumps(summaries, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------- ablation

#: The pseudo-scheme evaluated without any finetuning.
BASE_CELL = "base"


@dataclass
class AblationCell:
    """One grid cell: a scheme/density pair, its grades, or its error."""

    scheme: str
    density: str = "per-step"
    cell: str = ""
    success_rate: float = float("nan")
    mean_score: float = float("nan")
    mean_reward: float = float("nan")
    n_diverged: int = 0
    final_loss: float = float("nan")
    finetune_seconds: float = 0.0
    evaluate_seconds: float = 0.0
    error: str | None = None
    result: EvaluationResult | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.cell:
            self.cell = self.scheme


def ablate(
    base: DiffusionPolicy,
    trajectories: list[dict],
    reward_model: RewardModel | None,
    category: str,
    seed: int,
    *,
    schemes=(BASE_CELL,) + SCHEMES,
    densities=("per-step",),
    n_episodes: int = 10,
    max_steps: int = DEFAULT_EPISODE_STEPS,
    task: str | None = None,
    gains: ControllerGains | None = None,
    ik_config=None,
    config_overrides: dict | None = None,
    episode_seeds: tuple[int, ...] | None = None,
) -> list[AblationCell]:
    """Finetune and evaluate one policy per scheme/density on shared episodes.

    All cells share the evaluation seed ladder (optionally pinned via
    `episode_seeds`); a failing cell records its error string and the
    grid continues. The "base" pseudo-scheme evaluates the unmodified
    base policy as the comparison floor and appears once regardless of
    the density axis. Density variants transform the trajectories'
    annotated rewards, so a multi-density grid requires the annotated
    reward source — under model-predicted rewards every density cell
    would be the same run.
    """
    overrides = dict(config_overrides or {})
    if not densities:
        raise ContractViolationError("densities must be nonempty")
    if len(densities) > 1 and overrides.get(
            "reward_source", "model-predicted") != "annotated":
        raise ContractViolationError(
            "a reward-density grid requires reward_source='annotated'")

    encode_trajectories(base, trajectories)
    by_density = {
        d: [dict(t, rewards=apply_density(np.asarray(t["rewards"], float), d))
            for t in trajectories]
        for d in densities
    }
    eval_seed = derive_seed(seed, "ablate-eval")
    cells = []
    for scheme in schemes:
        for density in densities if scheme != BASE_CELL else densities[:1]:
            if scheme == BASE_CELL:
                cell = AblationCell(scheme=scheme, density="-", cell=BASE_CELL)
            else:
                cell_id = (scheme if len(densities) == 1
                           else f"{scheme}+{density}")
                cell = AblationCell(scheme=scheme, density=density,
                                    cell=cell_id)
            try:
                if scheme == BASE_CELL:
                    agent = DiffusionAgent(base, label=BASE_CELL)
                else:
                    cfg = FinetuneConfig(scheme=scheme, **overrides)
                    t0 = time.perf_counter()
                    result = finetune(
                        base, by_density[density], reward_model, cfg,
                        derive_seed(seed, "finetune", scheme, density),
                    )
                    cell.finetune_seconds = time.perf_counter() - t0
                    cell.final_loss = result.final_loss
                    agent = agent_for_result(result, base, reward_model)
                run = evaluate(
                    agent, category, n_episodes, eval_seed,
                    task=task, max_steps=max_steps, gains=gains,
                    ik_config=ik_config, label=cell.cell,
                    episode_seeds=episode_seeds,
                )
                cell.result = run
                cell.success_rate = run.success_rate
                cell.mean_score = run.mean_score
                cell.mean_reward = run.mean_reward
                cell.n_diverged = run.n_diverged
                cell.evaluate_seconds = run.wall_time_s
            except (ContractViolationError, ValueError,
                    FloatingPointError) as exc:
                cell.error = f"{type(exc).__name__}: {exc}"
            cells.append(cell)
    return cells


ABLATION_CSV_FIELDS = (
    "cell", "scheme", "density", "success_rate", "mean_score", "mean_reward",
    "n_diverged", "final_loss", "finetune_seconds", "evaluate_seconds",
    "error",
)


def write_ablation_csv(path, cells: list[AblationCell]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_CSV_FIELDS)
        writer.writeheader()
        for c in cells:
            writer.writerow({
                "cell": c.cell,
                "scheme": c.scheme,
                "density": c.density,
                "success_rate": f"{c.success_rate:.4f}",
                "mean_score": f"{c.mean_score:.4f}",
                "mean_reward": f"{c.mean_reward:.6f}",
                "n_diverged": c.n_diverged,
                "final_loss": f"{c.final_loss:.6f}",
                "finetune_seconds": f"{c.finetune_seconds:.2f}",
                "evaluate_seconds": f"{c.evaluate_seconds:.2f}",
                "error": c.error or "",
            })
