"""Demonstration collection: noise-tiered expert episodes to dataset files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import PeelDataset, TrajectoryRecord, save_dataset
from .errors import ContractViolationError
from .expert import DemoResult, generate_demo
from .produce import CATEGORIES, make_produce
from .seeding import derive_seed, rng_from

#: Waypoint depth-noise scales in units of nominal skin thickness,
#: the fraction of demos drawn at each, and the per-tier probability of
#: stopping the stroke early.
NOISE_TIERS = (0.0, 0.5, 1.5)
TIER_MIX = (0.5, 0.3, 0.2)
TIER_EARLY_STOP = (0.0, 0.0, 0.15)

DEFAULT_DEMO_COUNTS = {"small": 50, "medium": 150, "large": 200}


def standardize_forces(forces: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Remove per-channel sensor bias estimated from the first 10 samples.

    Returns (standardized, bias, flagged); traces shorter than 10 samples
    use every sample for the estimate and come back flagged.
    """
    forces = np.asarray(forces, dtype=float)
    if forces.ndim != 2 or forces.shape[1] != 3:
        raise ContractViolationError("forces must have shape (T, 3)")
    if forces.shape[0] == 0:
        raise ContractViolationError("forces must be nonempty")
    window = min(10, forces.shape[0])
    bias = np.mean(forces[:window], axis=0)
    return forces - bias, bias, window < 10


def demo_to_record(demo: DemoResult, noise: float) -> TrajectoryRecord:
    """Pack one non-flagged demo into its storage form."""
    if demo.flagged:
        raise ContractViolationError("flagged demos cannot become records")
    images = np.stack([o.depth_image for o in demo.observations])
    joints = np.stack([o.joint_angles for o in demo.observations])
    # Observation t carries the force measured before action t (zero at
    # reset), so the stored rows shift the trace forces by one step;
    # reconstruction then reproduces exactly what the policy saw live.
    trace_forces = np.stack([s.force for s in demo.trace])
    raw_forces = np.vstack([np.zeros((1, 3)), trace_forces[:-1]])
    forces, bias, flagged = standardize_forces(raw_forces)
    if flagged:
        raise ContractViolationError("trace too short for force standardization")
    return TrajectoryRecord(
        category=demo.category,
        seed=demo.seed,
        noise=noise,
        score=demo.qual.score,
        descriptor=demo.qual.descriptor,
        images=images,
        forces=forces,
        joints=joints,
        actions=np.asarray(demo.actions, dtype=float),
        rewards=np.asarray(demo.rewards, dtype=float),
        force_bias=bias,
        clip_events=demo.clip_events,
        ik_failures=demo.ik_failures,
    )


@dataclass
class CollectResult:
    """Outcome of one collection run."""

    path: Path
    n_collected: int
    n_flagged: int
    tier_counts: tuple[int, int, int]


def collect(
    category: str,
    n_demos: int,
    seed: int,
    out_path: str | Path,
    *,
    task: str | None = None,
    noise_tiers: tuple[float, ...] = NOISE_TIERS,
    tier_mix: tuple[float, ...] = TIER_MIX,
    tier_early_stop: tuple[float, ...] = TIER_EARLY_STOP,
    gains=None,
    ik_config=None,
) -> CollectResult:
    """Generate expert demos across noise tiers and write one dataset file.

    Tier noise scales are in units of each produce's nominal skin
    thickness. Diverged episodes are counted and excluded; extra seeds are
    drawn so the file still holds `n_demos` trajectories when possible.
    """
    if category not in CATEGORIES:
        raise ContractViolationError(f"unknown category {category!r}")
    if n_demos < 1:
        raise ContractViolationError("n_demos must be >= 1")
    if len(noise_tiers) != len(tier_mix) or len(noise_tiers) != len(tier_early_stop):
        raise ContractViolationError("tier settings must have equal lengths")
    mix = np.asarray(tier_mix, dtype=float)
    if np.any(mix < 0) or not np.isclose(mix.sum(), 1.0):
        raise ContractViolationError("tier_mix must be a probability vector")
    task = task if task is not None else category.removesuffix("-like")

    tier_rng = rng_from(seed, "tier-assignment")
    records: list[TrajectoryRecord] = []
    tier_counts = [0] * len(noise_tiers)
    n_flagged = 0
    attempt = 0
    max_attempts = 2 * n_demos
    while len(records) < n_demos and attempt < max_attempts:
        tier = int(tier_rng.choice(len(noise_tiers), p=mix))
        demo_seed = derive_seed(seed, "demo", attempt)
        attempt += 1
        profile = make_produce(derive_seed(demo_seed, "produce"), category)
        demo = generate_demo(
            category, demo_seed,
            depth_noise=noise_tiers[tier] * profile.t_nom,
            early_stop_prob=tier_early_stop[tier],
            task=task,
            profile=profile,
            gains=gains,
            ik_config=ik_config,
        )
        if demo.flagged:
            n_flagged += 1
            continue
        records.append(demo_to_record(demo, noise=noise_tiers[tier]))
        tier_counts[tier] += 1

    if len(records) < n_demos:
        raise ContractViolationError(
            f"collected only {len(records)}/{n_demos} demos; too many flagged"
        )
    header = {
        "category": category,
        "task": task,
        "seed": seed,
        "noise_tiers": list(noise_tiers),
        "tier_mix": list(tier_mix),
        "tier_early_stop": list(tier_early_stop),
        "n_flagged": n_flagged,
    }
    path = save_dataset(out_path, header, records)
    return CollectResult(
        path=path,
        n_collected=len(records),
        n_flagged=n_flagged,
        tier_counts=tuple(tier_counts),
    )


def dataset_to_training_arrays(data: PeelDataset):
    """Flatten a dataset into (observations, actions) for cloning."""
    observations = []
    actions = []
    for traj in data.trajectories:
        observations.extend(traj.to_observations())
        actions.append(traj.actions)
    if not observations:
        raise ContractViolationError("dataset holds no steps")
    return observations, np.concatenate(actions)


def dataset_to_trajectory_dicts(data: PeelDataset) -> list[dict]:
    """Trajectory dicts (observations/actions/rewards) for finetuning."""
    out = []
    for traj in data.trajectories:
        out.append({
            "observations": traj.to_observations(),
            "actions": traj.actions.copy(),
            "rewards": traj.rewards.copy(),
        })
    return out
