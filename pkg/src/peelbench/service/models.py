"""Request/response schemas for the workbench service.

Every verb takes explicit input paths and an output directory; the
handlers derive file names inside it, so a client only ever needs to
remember one directory per run. Float aggregates that can be undefined
(failed ablation cells) are nullable rather than NaN so responses stay
strict JSON.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..datagen import NOISE_TIERS, TIER_EARLY_STOP, TIER_MIX
from ..evaluate import DEFAULT_EPISODE_STEPS
from ..finetune import SCHEMES
from ..produce import CATEGORIES


class CollectRequest(BaseModel):
    category: str = "apple-like"
    n_demos: int = Field(default=50, ge=1)
    seed: int = 0
    out_dir: str
    name: str = "demos"
    task: str | None = None
    noise_tiers: list[float] = Field(default_factory=lambda: list(NOISE_TIERS))
    tier_mix: list[float] = Field(default_factory=lambda: list(TIER_MIX))
    tier_early_stop: list[float] = Field(
        default_factory=lambda: list(TIER_EARLY_STOP))
    gains: str | None = None
    ik_damping: float | None = None
    ik_null_gain: float | None = None


class CollectResponse(BaseModel):
    path: str
    n_collected: int
    n_flagged: int
    tier_counts: list[int]
    summary: dict
    manifest_path: str


class GradeRequest(BaseModel):
    demos: str
    out_dir: str
    gains: str | None = None


class GradeRow(BaseModel):
    index: int
    seed: int
    noise: float
    stored_score: int
    replayed_score: int
    descriptor: str
    match: bool


class GradeResponse(BaseModel):
    n_trajectories: int
    all_match: bool
    success_rate: float
    score_histogram: dict[str, int]
    rows: list[GradeRow]
    csv_path: str


class TrainBaseRequest(BaseModel):
    demos: str
    seed: int = 0
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=32, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    dropout_rate: float = Field(default=0.1, ge=0.0, lt=1.0)
    out_dir: str


class TrainBaseResponse(BaseModel):
    policy_path: str
    policy_hash: str
    n_steps: int
    losses: list[float]
    final_loss: float
    manifest_path: str


class TrainRewardRequest(BaseModel):
    demos: str
    base: str
    seed: int = 0
    density: str = "per-step"
    epochs: int = Field(default=60, ge=1)
    batch_size: int = Field(default=64, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    out_dir: str


class TrainRewardResponse(BaseModel):
    model_path: str
    model_hash: str
    final_loss: float
    manifest_path: str


class FinetuneRequest(BaseModel):
    demos: str
    base: str
    reward_model: str | None = None
    scheme: str = "ours"
    seed: int = 0
    reward_density: str = "per-step"
    reward_source: str = "model-predicted"
    beta: float = 5.0
    alpha_reg: float = 1e-3
    filter_fraction: float = 0.5
    iql_expectile: float = 0.7
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=64, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    out_dir: str


class FinetuneResponse(BaseModel):
    scheme: str
    residual_path: str | None
    policy_path: str | None
    base_hash: str
    final_loss: float
    n_retained: int
    manifest_path: str


class EvaluateRequest(BaseModel):
    category: str = "apple-like"
    n_episodes: int = Field(default=20, ge=1)
    seed: int = 0
    agent: str = "policy"  # policy | scripted | zero
    base: str | None = None
    residual: str | None = None
    reward_model: str | None = None
    task: str | None = None
    max_steps: int = Field(default=DEFAULT_EPISODE_STEPS, ge=1)
    gains: str | None = None
    ik_damping: float | None = None
    ik_null_gain: float | None = None
    depth_noise: float = 0.0
    early_stop_prob: float = 0.0
    label: str | None = None
    episode_seeds: list[int] | None = None
    episode_seeds_from: str | None = None  # dataset path; replay its produce
    out_dir: str


class EpisodeRow(BaseModel):
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


class EvaluateResponse(BaseModel):
    label: str
    category: str
    n_episodes: int
    success_rate: float
    mean_score: float
    mean_reward: float
    n_diverged: int
    episodes: list[EpisodeRow]
    csv_path: str
    summary_path: str
    manifest_path: str


class AblateRequest(BaseModel):
    demos: str
    base: str
    reward_model: str | None = None
    category: str = "apple-like"
    schemes: list[str] = Field(default_factory=lambda: ["base", *SCHEMES])
    densities: list[str] = Field(default_factory=lambda: ["per-step"])
    n_episodes: int = Field(default=10, ge=1)
    seed: int = 0
    max_steps: int = Field(default=DEFAULT_EPISODE_STEPS, ge=1)
    task: str | None = None
    reward_source: str = "model-predicted"
    beta: float = 5.0
    alpha_reg: float = 1e-3
    epochs: int = Field(default=30, ge=1)
    episode_seeds: list[int] | None = None
    episode_seeds_from: str | None = None  # dataset path; replay its produce
    out_dir: str


class CellRow(BaseModel):
    cell: str
    scheme: str
    density: str
    success_rate: float | None
    mean_score: float | None
    mean_reward: float | None
    n_diverged: int
    error: str | None


class AblateResponse(BaseModel):
    cells: list[CellRow]
    csv_path: str
    manifest_path: str


class InspectRequest(BaseModel):
    path: str


class InspectResponse(BaseModel):
    kind: str
    info: dict


class HealthResponse(BaseModel):
    status: str
    version: str
    categories: list[str] = Field(default_factory=lambda: list(CATEGORIES))
