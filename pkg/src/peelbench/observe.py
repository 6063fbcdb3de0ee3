"""Tiny orthographic observation synthesis for the peel environment.

Renders the produce cross-section and blade segment into a 24x32
two-channel image (grayscale intensity, height-coded depth masked to
the scene), with exact ground-truth masks, plus the proprioceptive and
force channels policies consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm import Pose2
from .errors import ContractViolationError
from .produce import KnifeState, ProduceProfile

IMAGE_HEIGHT = 24
IMAGE_WIDTH = 32
#: Viewport margin around the produce extent [m].
VIEW_MARGIN = 0.02
#: Rendered blade segment length [m].
BLADE_LENGTH = 0.03
#: Camera reference plane height; depth = clip(plane - y, 0, DEPTH_CLIP).
DEPTH_CLIP = 0.2
#: Force normalization full-scale [N or N*m per channel].
FORCE_SCALE = 5.0

_GRAY_BACKGROUND = 0.08
_GRAY_PRODUCE = 0.55
_GRAY_KNIFE = 0.95


@dataclass
class Observation:
    """One policy observation frame."""

    depth_image: np.ndarray          # (H, W, 2): grayscale, masked depth
    knife_mask: np.ndarray           # (H, W) binary
    produce_mask: np.ndarray         # (H, W) binary
    force: np.ndarray                # (3,) normalized to [-1, 1]
    joint_angles: np.ndarray
    last_action: np.ndarray          # (3,) delta end-effector pose
    force_clipped: int = 0           # channels clipped during normalization

    def __post_init__(self):
        self.depth_image = np.asarray(self.depth_image, dtype=float)
        self.knife_mask = np.asarray(self.knife_mask, dtype=float)
        self.produce_mask = np.asarray(self.produce_mask, dtype=float)
        self.force = np.asarray(self.force, dtype=float)
        self.joint_angles = np.asarray(self.joint_angles, dtype=float)
        self.last_action = np.asarray(self.last_action, dtype=float)
        if self.depth_image.shape != (IMAGE_HEIGHT, IMAGE_WIDTH, 2):
            raise ContractViolationError("depth_image must be (H, W, 2)")
        for mask in (self.knife_mask, self.produce_mask):
            if mask.shape != (IMAGE_HEIGHT, IMAGE_WIDTH):
                raise ContractViolationError("masks must be (H, W)")
            if not np.all((mask == 0.0) | (mask == 1.0)):
                raise ContractViolationError("masks must be binary")
        if self.force.shape != (3,):
            raise ContractViolationError("force must be a 3-vector")
        if np.any(np.abs(self.force) > 1.0):
            raise ContractViolationError("normalized force must lie in [-1, 1]")
        if self.last_action.shape != (3,):
            raise ContractViolationError("last_action must be a 3-vector")
        if np.any(self.depth_image < 0.0) or np.any(self.depth_image > 1.0):
            raise ContractViolationError("image values must lie in [0, 1]")


def _viewport(profile: ProduceProfile | None) -> tuple[float, float, float, float]:
    if profile is None:
        x_lo, x_hi = -VIEW_MARGIN, 0.3 + VIEW_MARGIN
    else:
        x_lo, x_hi = -VIEW_MARGIN, profile.length + VIEW_MARGIN
    height = (x_hi - x_lo) * IMAGE_HEIGHT / IMAGE_WIDTH
    y_lo = -VIEW_MARGIN
    return x_lo, x_hi, y_lo, y_lo + height


def pixel_of(x: float, y: float, profile: ProduceProfile | None) -> tuple[int, int]:
    """(row, col) of the pixel containing a scene point; row 0 is the top."""
    x_lo, x_hi, y_lo, y_hi = _viewport(profile)
    col = int((x - x_lo) / (x_hi - x_lo) * IMAGE_WIDTH)
    row = int((y_hi - y) / (y_hi - y_lo) * IMAGE_HEIGHT)
    return row, col


def normalize_force(force_raw: np.ndarray) -> tuple[np.ndarray, int]:
    """Scale a standardized force 3-vector into [-1, 1], counting clips."""
    f = np.asarray(force_raw, dtype=float) / FORCE_SCALE
    clipped = int(np.sum(np.abs(f) > 1.0))
    return np.clip(f, -1.0, 1.0), clipped


def render_observation(
    profile: ProduceProfile | None,
    knife: KnifeState | None,
    arm_q: np.ndarray,
    force_raw: np.ndarray,
    last_action: np.ndarray,
) -> Observation:
    """Deterministic orthographic render of the current scene."""
    x_lo, x_hi, y_lo, y_hi = _viewport(profile)
    cols = x_lo + (np.arange(IMAGE_WIDTH) + 0.5) / IMAGE_WIDTH * (x_hi - x_lo)
    rows = y_hi - (np.arange(IMAGE_HEIGHT) + 0.5) / IMAGE_HEIGHT * (y_hi - y_lo)

    produce_mask = np.zeros((IMAGE_HEIGHT, IMAGE_WIDTH))
    if profile is not None:
        heights = np.interp(cols, profile.xs, profile.surface, left=0.0, right=0.0)
        inside_x = (cols >= 0.0) & (cols <= profile.length)
        produce_mask = (
            inside_x[None, :]
            & (rows[:, None] >= 0.0)
            & (rows[:, None] <= heights[None, :])
        ).astype(float)

    knife_mask = np.zeros((IMAGE_HEIGHT, IMAGE_WIDTH))
    if knife is not None:
        theta = knife.edge_pos.theta
        ts = np.linspace(0.0, BLADE_LENGTH, 64)
        pxs = knife.edge_pos.x + ts * np.cos(theta)
        pys = knife.edge_pos.y + ts * np.sin(theta)
        for px, py in zip(pxs, pys):
            r, c = pixel_of(px, py, profile)
            if 0 <= r < IMAGE_HEIGHT and 0 <= c < IMAGE_WIDTH:
                knife_mask[r, c] = 1.0

    gray = np.full((IMAGE_HEIGHT, IMAGE_WIDTH), _GRAY_BACKGROUND)
    gray[produce_mask == 1.0] = _GRAY_PRODUCE
    gray[knife_mask == 1.0] = _GRAY_KNIFE

    union = np.maximum(knife_mask, produce_mask)
    depth = np.clip((DEPTH_CLIP - rows[:, None]) / DEPTH_CLIP, 0.0, 1.0)
    depth = np.broadcast_to(depth, (IMAGE_HEIGHT, IMAGE_WIDTH)) * union

    force, clipped = normalize_force(force_raw)
    return Observation(
        depth_image=np.stack([gray, depth], axis=-1),
        knife_mask=knife_mask,
        produce_mask=produce_mask,
        force=force,
        joint_angles=np.asarray(arm_q, dtype=float).copy(),
        last_action=np.asarray(last_action, dtype=float).copy(),
        force_clipped=clipped,
    )
