"""Orchestration: wire dataset files into the three learners.

These helpers sit between the storage layer and the learning code: they
flatten datasets into training views, apply the chosen reward-density
variant, and stamp every run with a manifest holding the seeds, config
hash, and artifact hashes needed to reproduce it bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .dataset import PeelDataset
from .datagen import dataset_to_training_arrays, dataset_to_trajectory_dicts
from .errors import ContractViolationError
from .finetune import (
    FinetuneConfig,
    FinetuneResult,
    RewardModel,
    finetune,
    train_reward_model,
)
from .policy import DiffusionPolicy, train_diffusion_policy
from .rewards import DENSITY_MODES, apply_density
from .seeding import derive_seed


def train_base_policy(
    data: PeelDataset,
    seed: int,
    *,
    epochs: int = 20,
    batch_size: int = 32,
    lr: float = 1e-3,
    dropout_rate: float = 0.1,
) -> tuple[DiffusionPolicy, list[float]]:
    """Behavior-clone a diffusion policy on every step of a dataset."""
    observations, actions = dataset_to_training_arrays(data)
    policy = DiffusionPolicy(
        dropout_rate=dropout_rate, seed=derive_seed(seed, "base-init")
    )
    losses = train_diffusion_policy(
        policy, observations, actions,
        epochs=epochs, batch_size=batch_size, lr=lr,
        seed=derive_seed(seed, "base-train"),
    )
    return policy, losses


def reward_examples_from_dataset(
    base: DiffusionPolicy, data: PeelDataset, density: str = "per-step"
) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """(latent, action, reward) triples under a reward-density variant."""
    if density not in DENSITY_MODES:
        raise ContractViolationError(f"unknown density mode {density!r}")
    examples = []
    for traj in data.trajectories:
        z, _ = base._encode_batch(traj.to_observations(), mode="eval")
        rewards = apply_density(traj.rewards, density)
        for i in range(len(traj)):
            examples.append((z[i], traj.actions[i], float(rewards[i])))
    if not examples:
        raise ContractViolationError("dataset holds no steps")
    return examples


def train_reward_from_dataset(
    base: DiffusionPolicy,
    data: PeelDataset,
    seed: int,
    *,
    density: str = "per-step",
    epochs: int = 60,
    batch_size: int = 64,
    lr: float = 1e-3,
) -> tuple[RewardModel, float]:
    """Fit the combined-reward regressor on frozen-base latents."""
    examples = reward_examples_from_dataset(base, data, density)
    return train_reward_model(
        examples, epochs=epochs, seed=derive_seed(seed, "reward-train"),
        lr=lr, batch_size=batch_size,
    )


def finetune_from_dataset(
    base: DiffusionPolicy,
    data: PeelDataset,
    reward_model: RewardModel | None,
    cfg: FinetuneConfig,
    seed: int,
    *,
    density: str = "per-step",
) -> FinetuneResult:
    """Run one finetuning scheme against a dataset file's trajectories.

    The density variant transforms the stored per-step rewards before
    they reach the weighting machinery; it only matters when the config
    reads annotated rewards rather than reward-model predictions.
    """
    if density not in DENSITY_MODES:
        raise ContractViolationError(f"unknown density mode {density!r}")
    trajectories = dataset_to_trajectory_dicts(data)
    for traj in trajectories:
        traj["rewards"] = apply_density(traj["rewards"], density)
    return finetune(base, trajectories, reward_model, cfg, seed)


# --------------------------------------------------------------- manifests


def config_hash(config: dict) -> str:
    """Stable hash of a JSON-serializable config dict."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def file_sha256(path) -> str:
    """SHA-256 of a file's bytes, for pinning inputs in manifests."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_manifest(
    verb: str,
    config: dict,
    seed: int,
    *,
    artifacts: dict | None = None,
    metrics: dict | None = None,
    inputs: dict | None = None,
) -> dict:
    """Run manifest: everything needed to reproduce the run."""
    return {
        "verb": verb,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": inputs or {},
        "artifacts": artifacts or {},
        "metrics": metrics or {},
    }


def write_manifest(path, manifest: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path
