"""Disk persistence for trained artifacts.

Every artifact is a binary parameter container plus a JSON sidecar
carrying its architecture description; `load_artifact` dispatches on the
sidecar's `kind` field. Policies additionally store their action
normalizer bounds as two trailing arrays so a reloaded policy samples
identically to the one that was saved.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractViolationError
from .finetune import RESIDUAL_HIDDEN, ResidualPolicy, RewardModel
from .nn import load_params, save_params
from .policy import DiffusionPolicy

ARTIFACT_SUFFIX = ".pbnn"


def _check_path(path) -> Path:
    path = Path(path)
    if path.suffix != ARTIFACT_SUFFIX:
        raise ContractViolationError(
            f"artifact files must end with {ARTIFACT_SUFFIX!r}"
        )
    return path


def save_policy(path, policy: DiffusionPolicy) -> Path:
    path = _check_path(path)
    arrays = policy.params() + [policy.action_low, policy.action_high]
    save_params(path, arrays, policy.describe())
    return path


def load_policy(path) -> DiffusionPolicy:
    path = _check_path(path)
    arrays, meta = load_params(path)
    if meta.get("kind") != "diffusion-policy":
        raise ContractViolationError(f"{path} does not hold a diffusion policy")
    policy = DiffusionPolicy(
        state_dim=int(meta["state_dim"]),
        T=int(meta["T"]),
        beta_start=float(meta["beta_start"]),
        beta_end=float(meta["beta_end"]),
        horizon=int(meta["horizon"]),
        dropout_rate=float(meta["visual"]["dropout_rate"]),
        seed=0,
    )
    policy.set_params(arrays[:-2])
    policy.action_low = np.asarray(arrays[-2], dtype=float)
    policy.action_high = np.asarray(arrays[-1], dtype=float)
    return policy


def save_reward_model(path, model: RewardModel) -> Path:
    path = _check_path(path)
    save_params(path, model.params(), model.describe())
    return path


def load_reward_model(path) -> RewardModel:
    path = _check_path(path)
    arrays, meta = load_params(path)
    if meta.get("kind") != "reward-model":
        raise ContractViolationError(f"{path} does not hold a reward model")
    model = RewardModel(
        z_dim=int(meta["z_dim"]), action_dim=int(meta["action_dim"]), seed=0
    )
    model.set_params(arrays)
    return model


def save_residual(path, residual: ResidualPolicy) -> Path:
    path = _check_path(path)
    save_params(path, residual.params(), residual.describe())
    return path


def load_residual(path) -> ResidualPolicy:
    path = _check_path(path)
    arrays, meta = load_params(path)
    if meta.get("kind") != "residual-policy":
        raise ContractViolationError(f"{path} does not hold a residual policy")
    residual = ResidualPolicy(
        z_dim=int(meta["z_dim"]),
        action_dim=int(meta["action_dim"]),
        h_dim=int(meta["h_dim"]),
        seed=0,
        hidden_dim=int(meta.get("hidden_dim", RESIDUAL_HIDDEN)),
    )
    residual.set_params(arrays)
    return residual


_LOADERS = {
    "diffusion-policy": load_policy,
    "reward-model": load_reward_model,
    "residual-policy": load_residual,
}


def load_artifact(path):
    """Load any saved artifact, dispatching on its sidecar `kind`."""
    path = _check_path(path)
    _, meta = load_params(path)
    kind = meta.get("kind")
    if kind not in _LOADERS:
        raise ContractViolationError(f"unknown artifact kind {kind!r} in {path}")
    return _LOADERS[kind](path)
