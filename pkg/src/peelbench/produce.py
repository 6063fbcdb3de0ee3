"""Synthetic produce: seeded heightfield profiles and knife contact.

A produce item is a planar cross-section heightfield y = s(x) with a
skin layer. The knife is a point edge: penetration below the current
surface produces a spring normal force plus Coulomb drag; once the
normal force exceeds the skin's cut-initiation threshold the edge slices,
permanently lowering the surface behind it as it travels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .arm import Pose2
from .errors import ContractViolationError
from .seeding import rng_from

CATEGORIES = ("cucumber-like", "apple-like", "potato-like")

#: Heightfield sample count.
N_SAMPLES = 256
#: Coulomb drag coefficient of blade on flesh.
FRICTION_MU = 0.3

# Per-category parameter ranges: (length, dome height, nominal skin
# thickness, flesh stiffness, skin toughness, undulation amplitude).
# Toughness sits well below stiffness*t_nom so a blade reaching nominal
# depth always pierces the skin.
_CATEGORY_RANGES = {
    "cucumber-like": {
        "length": (0.24, 0.30),
        "height": (0.030, 0.040),
        "t_nom": (0.0018, 0.0024),
        "stiffness": (400.0, 700.0),
        "toughness": (0.25, 0.45),
        "undulation": (0.0004, 0.0010),
    },
    "apple-like": {
        "length": (0.14, 0.18),
        "height": (0.055, 0.075),
        "t_nom": (0.0012, 0.0018),
        "stiffness": (500.0, 900.0),
        "toughness": (0.30, 0.50),
        "undulation": (0.0003, 0.0008),
    },
    "potato-like": {
        "length": (0.16, 0.22),
        "height": (0.040, 0.055),
        "t_nom": (0.0022, 0.0030),
        "stiffness": (600.0, 1000.0),
        "toughness": (0.45, 0.85),
        "undulation": (0.0010, 0.0022),
    },
}


@dataclass
class ProduceProfile:
    """Planar produce cross-section with original and current surfaces."""

    category: str
    length: float
    surface: np.ndarray            # current (mutated) heightfield
    surface_original: np.ndarray   # pristine heightfield, never mutated
    skin_thickness: np.ndarray     # per-sample thickness field
    t_nom: float                   # nominal thickness for grading ratios
    flesh_stiffness: float
    skin_toughness: float
    seed: int

    def __post_init__(self):
        self.surface = np.asarray(self.surface, dtype=float)
        self.surface_original = np.asarray(self.surface_original, dtype=float)
        self.skin_thickness = np.asarray(self.skin_thickness, dtype=float)
        if self.category not in CATEGORIES:
            raise ContractViolationError(f"unknown category {self.category!r}")
        if self.length <= 0:
            raise ContractViolationError("length must be positive")
        if self.surface.shape != self.surface_original.shape or self.surface.ndim != 1:
            raise ContractViolationError("surface arrays must be matching 1-D grids")
        if np.any(self.skin_thickness <= 0):
            raise ContractViolationError("skin_thickness must be positive everywhere")
        if self.flesh_stiffness <= 0 or self.skin_toughness <= 0:
            raise ContractViolationError("stiffness and toughness must be positive")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.surface.size)

    def height_at(self, x: float, original: bool = False) -> float:
        """Linearly interpolated surface height; produce-local frame."""
        surf = self.surface_original if original else self.surface
        return float(np.interp(x, self.xs, surf))

    def slope_at(self, x: float) -> float:
        xs = self.xs
        dx = xs[1] - xs[0]
        i = int(np.clip((x - xs[0]) / dx, 0, xs.size - 2))
        return float((self.surface[i + 1] - self.surface[i]) / dx)

    def thickness_at(self, x: float) -> float:
        return float(np.interp(x, self.xs, self.skin_thickness))

    def removed_area(self) -> float:
        """Cross-section area removed so far (trapezoid integration)."""
        return float(np.trapezoid(self.surface_original - self.surface, self.xs))

    def cross_section_area(self) -> float:
        return float(np.trapezoid(self.surface_original, self.xs))

    def pristine_copy(self) -> "ProduceProfile":
        return replace(
            self,
            surface=self.surface_original.copy(),
            surface_original=self.surface_original.copy(),
            skin_thickness=self.skin_thickness.copy(),
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "category": self.category,
                "length": self.length,
                "surface": self.surface.tolist(),
                "surface_original": self.surface_original.tolist(),
                "skin_thickness": self.skin_thickness.tolist(),
                "t_nom": self.t_nom,
                "flesh_stiffness": self.flesh_stiffness,
                "skin_toughness": self.skin_toughness,
                "seed": self.seed,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ProduceProfile":
        doc = json.loads(text)
        return cls(
            category=doc["category"],
            length=float(doc["length"]),
            surface=np.asarray(doc["surface"], dtype=float),
            surface_original=np.asarray(doc["surface_original"], dtype=float),
            skin_thickness=np.asarray(doc["skin_thickness"], dtype=float),
            t_nom=float(doc["t_nom"]),
            flesh_stiffness=float(doc["flesh_stiffness"]),
            skin_toughness=float(doc["skin_toughness"]),
            seed=int(doc["seed"]),
        )


def make_produce(seed: int, category: str) -> ProduceProfile:
    """Deterministic produce profile for a (seed, category) pair."""
    if category not in CATEGORIES:
        raise ContractViolationError(f"unknown category {category!r}")
    ranges = _CATEGORY_RANGES[category]
    rng = rng_from(seed, "produce", category)

    def draw(name):
        lo, hi = ranges[name]
        return float(rng.uniform(lo, hi))

    length = draw("length")
    height = draw("height")
    t_nom = draw("t_nom")
    stiffness = draw("stiffness")
    toughness = draw("toughness")
    undulation = draw("undulation")

    xs = np.linspace(0.0, length, N_SAMPLES)
    u = xs / length
    # Smooth dome with flattened shoulders; zero height at both ends.
    base = height * np.sin(math.pi * u) ** 0.8
    bumps = np.zeros_like(xs)
    for k in range(2, 6):
        amp = undulation * float(rng.uniform(0.3, 1.0)) / k
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        bumps += amp * np.sin(2.0 * math.pi * k * u + phase)
    # Taper undulation toward the ends so the surface stays non-negative.
    surface = np.maximum(base + bumps * np.sin(math.pi * u), 0.0)
    surface[0] = surface[-1] = 0.0

    thickness = t_nom * (
        1.0
        + 0.1 * np.sin(2.0 * math.pi * u * float(rng.uniform(1.0, 3.0)) + float(rng.uniform(0.0, 6.28)))
    )
    thickness = np.maximum(thickness, 0.25 * t_nom)

    return ProduceProfile(
        category=category,
        length=length,
        surface=surface.copy(),
        surface_original=surface.copy(),
        skin_thickness=thickness,
        t_nom=t_nom,
        flesh_stiffness=stiffness,
        skin_toughness=toughness,
        seed=int(seed),
    )


@dataclass
class KnifeState:
    """Knife edge pose plus contact bookkeeping (produce-local frame)."""

    edge_pos: Pose2
    in_contact: bool = False
    cut_depth: float = 0.0
    cutting: bool = False
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.cut_depth < 0:
            raise ContractViolationError("cut_depth must be >= 0")


def contact_step(
    profile: ProduceProfile, knife: KnifeState, dt: float
) -> tuple[KnifeState, np.ndarray]:
    """Advance contact/cutting state; returns force on the knife.

    Force model: penetration delta below the current surface gives a
    normal force stiffness*delta along the local surface normal and a
    Coulomb drag mu*normal opposing tangential motion. Cutting latches
    when the normal force exceeds the skin toughness and unlatches on
    loss of contact; while latched the strip behind the travelling edge
    is lowered to the edge height (permanent removal).
    """
    x = knife.edge_pos.x
    y = knife.edge_pos.y
    zero = np.zeros(3)
    if not 0.0 <= x <= profile.length:
        return (
            KnifeState(knife.edge_pos, False, 0.0, False, knife.velocity),
            zero,
        )

    delta = profile.height_at(x) - y
    if delta <= 0.0:
        return (
            KnifeState(knife.edge_pos, False, 0.0, False, knife.velocity),
            zero,
        )

    slope = profile.slope_at(x)
    scale = 1.0 / math.hypot(1.0, slope)
    # delta is the vertical gap; the elastic force responds to the normal
    # penetration delta*scale, which keeps steep faces from producing
    # outsized lateral forces.
    normal_mag = profile.flesh_stiffness * delta * scale
    n_hat = np.array([-slope * scale, scale])
    t_hat = np.array([scale, slope * scale])

    vx, vy = knife.velocity
    v_tan = vx * t_hat[0] + vy * t_hat[1]
    friction = -FRICTION_MU * normal_mag * math.copysign(1.0, v_tan) if abs(v_tan) > 1e-9 else 0.0

    force = np.array(
        [normal_mag * n_hat[0] + friction * t_hat[0],
         normal_mag * n_hat[1] + friction * t_hat[1],
         0.0]
    )

    cutting = knife.cutting or normal_mag > profile.skin_toughness
    cut_depth = 0.0
    if cutting:
        cut_depth = max(profile.height_at(x, original=True) - y, 0.0)
        # The edge sweeps a straight segment this step; material above
        # the swept path is removed permanently.
        x_prev = x - vx * dt
        y_prev = y - vy * dt
        lo, hi = (x_prev, x) if x_prev <= x else (x, x_prev)
        xs = profile.xs
        sel = (xs >= max(lo, 0.0)) & (xs <= min(hi, profile.length))
        if np.any(sel):
            if hi - lo > 1e-12:
                frac = (xs[sel] - x_prev) / (x - x_prev)
                path_y = y_prev + frac * (y - y_prev)
            else:
                path_y = y
            profile.surface[sel] = np.minimum(profile.surface[sel], path_y)

    return KnifeState(knife.edge_pos, True, cut_depth, cutting, knife.velocity), force


@dataclass
class TraceStep:
    """One 10 Hz record of a peeling run (produce-local knife pose)."""

    t: float
    pose: Pose2
    cut_depth: float
    force: np.ndarray
    arc_progress: float
    in_contact: bool = False


@dataclass
class PeelTrace:
    """Chronological 10 Hz trace of one peeling episode."""

    steps: list[TraceStep] = field(default_factory=list)

    def append(self, step: TraceStep) -> None:
        if self.steps and step.t <= self.steps[-1].t:
            raise ContractViolationError("trace time must be strictly increasing")
        if step.cut_depth < 0:
            raise ContractViolationError("cut_depth must be >= 0")
        self.steps.append(step)

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)
