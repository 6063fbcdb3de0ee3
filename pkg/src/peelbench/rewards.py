"""Hybrid per-step reward: thickness-table lookup, overlap smoothing,
ordinal-quality lookup, and the piecewise combination.

The segment-level thickness grades become a per-step quantitative
signal (uniform within a segment, linearly interpolated across segment
overlaps); the whole-trajectory quality score contributes a scalar
qualitative value blended in wherever the quantitative signal clears a
threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError
from .grading import (
    QUALITY_DESCRIPTORS,
    ThicknessCategory,
    grade_segments,
    grade_trajectory,
)
from .produce import PeelTrace, ProduceProfile

TASKS = ("apple", "potato", "cucumber")
DENSITY_MODES = ("per-step", "per-step-binary", "per-60", "per-traj")

_QUANT_APPLE = {
    ThicknessCategory.BELOW_NOMINAL: 0.3,
    ThicknessCategory.NOMINAL: 1.0,
    ThicknessCategory.SLIGHTLY_ABOVE_NOMINAL: 0.8,
    ThicknessCategory.ABOVE_NOMINAL: 0.3,
    ThicknessCategory.EXCESSIVE: 0.0,
    ThicknessCategory.NOT_APPLICABLE: 0.0,
}
_QUANT_POTATO = {
    ThicknessCategory.BELOW_NOMINAL: 0.5,
    ThicknessCategory.NOMINAL: 1.0,
    ThicknessCategory.SLIGHTLY_ABOVE_NOMINAL: 0.5,
    ThicknessCategory.ABOVE_NOMINAL: 0.1,
    ThicknessCategory.EXCESSIVE: 0.0,
    ThicknessCategory.NOT_APPLICABLE: 0.0,
}
# Ordinal quality values; the ladder is non-uniform (no 0.7 rung).
_QUAL_LADDER = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 0.9, 1.0)

#: Combination weight per task; cucumber has no published tables and
#: reuses the potato settings (overridable via RewardConfig).
_ALPHA = {"apple": 0.85, "potato": 0.75, "cucumber": 0.75}


@dataclass(frozen=True)
class RewardConfig:
    """Tables and constants of the hybrid reward for one task."""

    task: str
    quant_table: dict[ThicknessCategory, float]
    qual_table: dict[int, float]
    tau: float = 0.1
    alpha: float = 0.85
    L: int = 15
    O: int = 3

    def __post_init__(self):
        if set(self.quant_table) != set(ThicknessCategory):
            raise ContractViolationError("quant_table must cover every category")
        if set(self.qual_table) != set(range(10)):
            raise ContractViolationError("qual_table must cover scores 0..9")
        for v in list(self.quant_table.values()) + list(self.qual_table.values()):
            if not 0.0 <= v <= 1.0:
                raise ContractViolationError("table values must lie in [0,1]")
        if not 0.0 <= self.tau < 1.0:
            raise ContractViolationError("tau must lie in [0,1)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractViolationError("alpha must lie in [0,1]")
        if not self.L > self.O >= 0:
            raise ContractViolationError("need L > O >= 0")

    @classmethod
    def for_task(cls, task: str) -> "RewardConfig":
        if task not in TASKS:
            raise ContractViolationError(f"unknown task {task!r}")
        quant = _QUANT_APPLE if task == "apple" else _QUANT_POTATO
        return cls(
            task=task,
            quant_table=dict(quant),
            qual_table={i: v for i, v in enumerate(_QUAL_LADDER)},
            tau=0.1,
            alpha=_ALPHA[task],
            L=15,
            O=3,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "task": self.task,
                "quant_table": {c.value: v for c, v in sorted(
                    self.quant_table.items(), key=lambda kv: kv[0].value)},
                "qual_table": {str(k): v for k, v in sorted(self.qual_table.items())},
                "tau": self.tau,
                "alpha": self.alpha,
                "L": self.L,
                "O": self.O,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "RewardConfig":
        doc = json.loads(text)
        by_value = {c.value: c for c in ThicknessCategory}
        return cls(
            task=doc["task"],
            quant_table={by_value[k]: float(v) for k, v in doc["quant_table"].items()},
            qual_table={int(k): float(v) for k, v in doc["qual_table"].items()},
            tau=float(doc["tau"]),
            alpha=float(doc["alpha"]),
            L=int(doc["L"]),
            O=int(doc["O"]),
        )


@dataclass(frozen=True)
class PerStepReward:
    """One timestep's reward with its combination branch."""

    r: float
    provenance: str  # "quant-only" | "combined"

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ContractViolationError("reward must lie in [0,1]")
        if self.provenance not in ("quant-only", "combined"):
            raise ContractViolationError("unknown provenance")


def quant_reward(category: ThicknessCategory, task: str) -> float:
    return RewardConfig.for_task(task).quant_table[category]


def qual_reward(score: int, task: str) -> float:
    if score not in range(10):
        raise ContractViolationError("score must lie in 0..9")
    return RewardConfig.for_task(task).qual_table[score]


def expand_and_smooth(
    segment_rewards: list[float], L: int, O: int, T: int
) -> np.ndarray:
    """Per-step vector from segment rewards tiling T with stride L-O.

    Each segment's reward fills its frames uniformly; the O frames
    shared by adjacent segments are replaced with the interpolation
    (1-a_i)*r_prev + a_i*r_next, a_i = (i+1)/(O+1), in frame order.
    """
    stride = L - O
    starts = [k * stride for k in range(len(segment_rewards))]
    expected = _expected_segment_count(L, O, T)
    if len(segment_rewards) != expected:
        raise ContractViolationError(
            f"tiling mismatch: T={T}, L={L}, O={O} needs {expected} segments, "
            f"got {len(segment_rewards)}"
        )
    if starts and starts[-1] + L < T:
        raise ContractViolationError(
            f"tiling mismatch: {len(segment_rewards)} segments cover at most "
            f"{starts[-1] + L} steps, trace has {T}"
        )
    out = np.empty(T)
    ends = [min(s + L, T) for s in starts]
    for r, s, e in zip(segment_rewards, starts, ends):
        out[s:e] = r
    for k in range(len(starts) - 1):
        lo = starts[k + 1]
        hi = min(ends[k], T)
        for i, frame in enumerate(range(lo, hi)):
            a = (i + 1) / (O + 1)
            out[frame] = (1.0 - a) * segment_rewards[k] + a * segment_rewards[k + 1]
    return out


def _expected_segment_count(L: int, O: int, T: int) -> int:
    if T <= 0:
        raise ContractViolationError("T must be positive")
    if T < L:
        return 1
    stride = L - O
    full = (T - L) // stride + 1
    return full + (1 if full * stride < T else 0)


def combine(r_quant_t: float, r_qual: float, cfg: RewardConfig) -> PerStepReward:
    """Piecewise blend: quant passes through below tau, else convex mix."""
    if not 0.0 <= r_quant_t <= 1.0 or not 0.0 <= r_qual <= 1.0:
        raise ContractViolationError("reward inputs must lie in [0,1]")
    if r_quant_t < cfg.tau:
        return PerStepReward(r_quant_t, "quant-only")
    return PerStepReward(
        cfg.alpha * r_quant_t + (1.0 - cfg.alpha) * r_qual, "combined"
    )


def reward_trajectory(
    trace: PeelTrace,
    profile: ProduceProfile,
    task: str = "apple",
    cfg: RewardConfig | None = None,
) -> list[PerStepReward]:
    """Per-step hybrid rewards for a full trace."""
    if cfg is None:
        cfg = RewardConfig.for_task(task)
    segments = grade_segments(trace, profile, L=cfg.L, O=cfg.O)
    seg_rewards = [cfg.quant_table[s.category] for s in segments]
    quant_steps = expand_and_smooth(seg_rewards, cfg.L, cfg.O, len(trace))
    r_qual = cfg.qual_table[grade_trajectory(trace, profile).score]
    return [combine(float(rq), r_qual, cfg) for rq in quant_steps]


def reward_values(steps: list[PerStepReward]) -> np.ndarray:
    return np.array([p.r for p in steps])


def apply_density(rewards: np.ndarray, mode: str) -> np.ndarray:
    """Reward-density variants derived from the per-step signal."""
    r = np.asarray(rewards, dtype=float)
    if mode == "per-step":
        return r.copy()
    if mode == "per-step-binary":
        return (r >= 0.5).astype(float)
    if mode == "per-60":
        out = np.empty_like(r)
        for s in range(0, r.size, 60):
            out[s : s + 60] = r[s : s + 60].mean()
        return out
    if mode == "per-traj":
        return np.full_like(r, r.mean())
    raise ContractViolationError(f"unknown density mode {mode!r}")
