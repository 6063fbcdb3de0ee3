"""Deterministic grading oracle for peel traces.

Grading is pure: it derives everything from the trace and the produce's
pristine geometry (``surface_original``), never from the mutated
heightfield, so the same trace always grades identically regardless of
when the profile is inspected.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError
from .produce import PeelTrace, ProduceProfile

#: Depth-ratio band edges (depth / t_nom) for the thickness categories.
RHO_BELOW = 0.5
RHO_NOMINAL = 1.25
RHO_SLIGHTLY_ABOVE = 1.75
RHO_ABOVE = 2.5
#: Max depth ratio beyond which a trajectory counts as gouged.
RHO_GOUGE = 3.0
#: Fraction of cross-section area whose removal destroys the produce.
DESTROY_AREA_FRACTION = 0.25
#: A sample counts toward stroke coverage once this fraction of the
#: nominal skin thickness has been removed there.
COVERAGE_DEPTH_FRACTION = 0.3
#: Coverage-fraction band edges for stroke length classification.
COVERAGE_TOO_SHORT = 0.15
COVERAGE_SHORT = 0.33
COVERAGE_MID = 0.66


class ThicknessCategory(enum.Enum):
    """Discrete peel-thickness classes for a trace segment."""

    NOT_APPLICABLE = "N/A"
    BELOW_NOMINAL = "below nominal"
    NOMINAL = "nominal"
    SLIGHTLY_ABOVE_NOMINAL = "slightly above nominal"
    ABOVE_NOMINAL = "above nominal"
    EXCESSIVE = "excessive"


#: Ordering used by the band-monotonicity property (thin → thick).
CATEGORY_ORDER = (
    ThicknessCategory.BELOW_NOMINAL,
    ThicknessCategory.NOMINAL,
    ThicknessCategory.SLIGHTLY_ABOVE_NOMINAL,
    ThicknessCategory.ABOVE_NOMINAL,
    ThicknessCategory.EXCESSIVE,
)

QUALITY_DESCRIPTORS = {
    0: "discard",
    1: "too low",
    2: "too high",
    3: "too short",
    4: "short, thick",
    5: "short, thin",
    6: "mid, thick",
    7: "long, thick",
    8: "mid, thin",
    9: "long, thin",
}


def categorize_ratio(rho: float) -> ThicknessCategory:
    """Thickness category for a mean depth ratio rho = depth / t_nom."""
    if rho < RHO_BELOW:
        return ThicknessCategory.BELOW_NOMINAL
    if rho < RHO_NOMINAL:
        return ThicknessCategory.NOMINAL
    if rho < RHO_SLIGHTLY_ABOVE:
        return ThicknessCategory.SLIGHTLY_ABOVE_NOMINAL
    if rho < RHO_ABOVE:
        return ThicknessCategory.ABOVE_NOMINAL
    return ThicknessCategory.EXCESSIVE


@dataclass(frozen=True)
class GradedSegment:
    """One graded slice of a trace."""

    start: int
    length: int
    category: ThicknessCategory
    mean_ratio: float
    truncated: bool = False


@dataclass(frozen=True)
class QualScore:
    """Whole-trajectory ordinal quality score with its descriptor."""

    score: int
    descriptor: str

    def __post_init__(self):
        if self.score not in QUALITY_DESCRIPTORS:
            raise ContractViolationError("score must be an integer in 0..9")
        if QUALITY_DESCRIPTORS[self.score] != self.descriptor:
            raise ContractViolationError(
                f"descriptor {self.descriptor!r} does not match score {self.score}"
            )

    @property
    def success(self) -> bool:
        return self.score > 3


def _segment_category(steps, t_nom: float) -> tuple[ThicknessCategory, float]:
    if not any(s.in_contact for s in steps):
        return ThicknessCategory.NOT_APPLICABLE, 0.0
    rho = float(np.mean([s.cut_depth for s in steps])) / t_nom
    return categorize_ratio(rho), rho


def grade_segments(
    trace: PeelTrace, profile: ProduceProfile, L: int = 15, O: int = 3
) -> list[GradedSegment]:
    """Grade length-L windows of the trace with O steps of overlap."""
    if len(trace) == 0:
        raise ContractViolationError("trace must be nonempty")
    if not L > O >= 0:
        raise ContractViolationError("need L > O >= 0")
    steps = trace.steps
    stride = L - O
    if len(steps) < L:
        cat, rho = _segment_category(steps, profile.t_nom)
        return [GradedSegment(0, len(steps), cat, rho, truncated=True)]
    out = []
    start = 0
    while start + L <= len(steps):
        window = steps[start : start + L]
        cat, rho = _segment_category(window, profile.t_nom)
        out.append(GradedSegment(start, L, cat, rho))
        start += stride
    if start < len(steps):
        window = steps[start:]
        cat, rho = _segment_category(window, profile.t_nom)
        out.append(GradedSegment(start, len(window), cat, rho, truncated=True))
    return out


def removal_envelope(trace: PeelTrace, profile: ProduceProfile) -> np.ndarray:
    """Per-sample removal depth implied by the trace's cutting passes.

    Replays the recorded knife path: between consecutive cutting steps
    the cut depth is linearly interpolated across the grid samples the
    edge swept, and overlapping passes keep the deepest cut.
    """
    xs = profile.xs
    env = np.zeros_like(xs)
    prev = None
    for step in trace.steps:
        cur = (step.pose.x, step.cut_depth) if step.cut_depth > 0.0 else None
        if cur is not None:
            x1, d1 = cur
            if prev is not None:
                x0, d0 = prev
            else:
                x0, d0 = x1, d1
            lo, hi = (x0, x1) if x0 <= x1 else (x1, x0)
            sel = (xs >= lo) & (xs <= hi)
            if np.any(sel):
                if hi - lo > 1e-12:
                    frac = (xs[sel] - x0) / (x1 - x0)
                    depth = d0 + frac * (d1 - d0)
                else:
                    depth = d1
                env[sel] = np.maximum(env[sel], depth)
            else:
                i = int(np.clip(round(x1 / (xs[1] - xs[0])), 0, xs.size - 1))
                env[i] = max(env[i], d1)
        prev = cur
    return env


def grade_trajectory(trace: PeelTrace, profile: ProduceProfile) -> QualScore:
    """Whole-trajectory ordinal quality score (0-9)."""
    if len(trace) == 0:
        raise ContractViolationError("trace must be nonempty")
    t_nom = profile.t_nom
    depths = np.array([s.cut_depth for s in trace.steps])
    cutting = depths > 0.0

    env = removal_envelope(trace, profile)
    removed_area = float(np.trapezoid(env, profile.xs))
    if removed_area > DESTROY_AREA_FRACTION * profile.cross_section_area():
        return QualScore(0, QUALITY_DESCRIPTORS[0])
    if np.any(depths / t_nom >= RHO_GOUGE):
        return QualScore(1, QUALITY_DESCRIPTORS[1])
    if not np.any(cutting):
        return QualScore(2, QUALITY_DESCRIPTORS[2])

    coverage = float(np.mean(env >= COVERAGE_DEPTH_FRACTION * t_nom))
    if coverage < COVERAGE_TOO_SHORT:
        return QualScore(3, QUALITY_DESCRIPTORS[3])
    mean_rho = float(np.mean(depths[cutting])) / t_nom
    thin = mean_rho < RHO_NOMINAL
    if coverage < COVERAGE_SHORT:
        score = 5 if thin else 4
    elif coverage < COVERAGE_MID:
        score = 8 if thin else 6
    else:
        score = 9 if thin else 7
    return QualScore(score, QUALITY_DESCRIPTORS[score])
