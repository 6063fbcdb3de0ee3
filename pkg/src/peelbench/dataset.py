"""Demonstration dataset serialization: gzipped JSONL, one trajectory per line.

Line one is a header object; every following line is one trajectory with
its per-step images, forces, and joint angles packed as base64-encoded
little-endian float32 buffers and the small arrays (actions, rewards)
stored as plain JSON lists. Files are written with a zeroed gzip
timestamp so identical content yields identical bytes.
"""

from __future__ import annotations

import base64
import gzip
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolationError
from .observe import IMAGE_HEIGHT, IMAGE_WIDTH, Observation, normalize_force

FORMAT_NAME = "peel-dataset"
FORMAT_VERSION = 1
FILE_SUFFIX = ".peel.jsonl.gz"

_GRAY_KNIFE = 0.95
_GRAY_PRODUCE = 0.55


def encode_f32(arr: np.ndarray) -> str:
    """Base64 of the array flattened to little-endian float32."""
    return base64.b64encode(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()
    ).decode("ascii")


def decode_f32(text: str, shape: tuple[int, ...]) -> np.ndarray:
    buf = base64.b64decode(text.encode("ascii"))
    arr = np.frombuffer(buf, dtype="<f4")
    expected = int(np.prod(shape)) if shape else arr.size
    if arr.size != expected:
        raise ContractViolationError(
            f"encoded buffer holds {arr.size} floats, expected {expected}"
        )
    return arr.reshape(shape).astype(float)


@dataclass
class TrajectoryRecord:
    """One episode as stored on disk (arrays already decoded)."""

    category: str
    seed: int
    noise: float
    score: int
    descriptor: str
    images: np.ndarray   # (T, 24, 32, 2)
    forces: np.ndarray   # (T, 3), bias-standardized
    joints: np.ndarray   # (T, 3)
    actions: np.ndarray  # (T, 3)
    rewards: np.ndarray  # (T,)
    force_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    clip_events: int = 0
    ik_failures: int = 0

    def __post_init__(self):
        T = self.images.shape[0]
        if self.images.shape != (T, IMAGE_HEIGHT, IMAGE_WIDTH, 2):
            raise ContractViolationError("images must be (T, 24, 32, 2)")
        for name, arr, shape in (
            ("forces", self.forces, (T, 3)),
            ("joints", self.joints, (T, 3)),
            ("actions", self.actions, (T, 3)),
            ("rewards", self.rewards, (T,)),
        ):
            if arr.shape != shape:
                raise ContractViolationError(f"{name} must have shape {shape}")

    def __len__(self) -> int:
        return self.images.shape[0]

    def to_observations(self) -> list[Observation]:
        """Rebuild per-step observations for the policy encoders.

        Masks come from the stored gray levels, so produce pixels hidden
        behind the knife stay out of the produce mask (the encoders never
        read the masks; only the image channels, forces, and joints feed
        the policy). The force channel is re-normalized from the
        standardized raw forces; `last_action` is the previous step's
        action (zero at the start).
        """
        out = []
        for t in range(len(self)):
            gray = self.images[t, :, :, 0]
            knife = (np.abs(gray - _GRAY_KNIFE) < 1e-3).astype(float)
            produce = (np.abs(gray - _GRAY_PRODUCE) < 1e-3).astype(float)
            force, clipped = normalize_force(self.forces[t])
            last = self.actions[t - 1] if t > 0 else np.zeros(3)
            out.append(Observation(
                depth_image=self.images[t],
                knife_mask=knife,
                produce_mask=produce,
                force=force,
                joint_angles=self.joints[t],
                last_action=last,
                force_clipped=clipped,
            ))
        return out

    def to_json_line(self) -> str:
        doc = {
            "category": self.category,
            "seed": self.seed,
            "noise": self.noise,
            "score": self.score,
            "descriptor": self.descriptor,
            "steps": len(self),
            "images_b64": encode_f32(self.images),
            "forces_b64": encode_f32(self.forces),
            "joints_b64": encode_f32(self.joints),
            "actions": [[float(v) for v in row] for row in self.actions],
            "rewards": [float(v) for v in self.rewards],
            "force_bias": [float(v) for v in self.force_bias],
            "clip_events": self.clip_events,
            "ik_failures": self.ik_failures,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "TrajectoryRecord":
        doc = json.loads(line)
        T = int(doc["steps"])
        return cls(
            category=doc["category"],
            seed=int(doc["seed"]),
            noise=float(doc["noise"]),
            score=int(doc["score"]),
            descriptor=doc["descriptor"],
            images=decode_f32(doc["images_b64"], (T, IMAGE_HEIGHT, IMAGE_WIDTH, 2)),
            forces=decode_f32(doc["forces_b64"], (T, 3)),
            joints=decode_f32(doc["joints_b64"], (T, 3)),
            actions=np.asarray(doc["actions"], dtype=float).reshape(T, 3),
            rewards=np.asarray(doc["rewards"], dtype=float),
            force_bias=np.asarray(doc["force_bias"], dtype=float),
            clip_events=int(doc["clip_events"]),
            ik_failures=int(doc["ik_failures"]),
        )


@dataclass
class PeelDataset:
    """A demonstration file in memory: header plus trajectory records."""

    header: dict
    trajectories: list[TrajectoryRecord]

    def __len__(self) -> int:
        return len(self.trajectories)

    def summary(self) -> dict:
        scores = [t.score for t in self.trajectories]
        steps = [len(t) for t in self.trajectories]
        hist = {s: scores.count(s) for s in sorted(set(scores))}
        return {
            "n_trajectories": len(self),
            "total_steps": int(sum(steps)),
            "category": self.header.get("category"),
            "task": self.header.get("task"),
            "score_histogram": {str(k): v for k, v in hist.items()},
            "success_rate": float(np.mean([s > 3 for s in scores])) if scores else 0.0,
            "mean_reward": float(np.mean([float(np.mean(t.rewards)) for t in self.trajectories]))
            if scores else 0.0,
        }


def check_dataset_path(path: str | Path) -> Path:
    path = Path(path)
    if not str(path).endswith(FILE_SUFFIX):
        raise ContractViolationError(f"dataset files must end with {FILE_SUFFIX!r}")
    return path


def save_dataset(path: str | Path, header: dict, trajectories: list[TrajectoryRecord]) -> Path:
    """Write header + trajectories; identical content gives identical bytes."""
    path = check_dataset_path(path)
    full_header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "n_trajectories": len(trajectories),
        **header,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        with gzip.GzipFile(filename="", mode="wb", fileobj=f, mtime=0) as gz:
            gz.write(json.dumps(full_header, sort_keys=True,
                                separators=(",", ":")).encode() + b"\n")
            for traj in trajectories:
                gz.write(traj.to_json_line().encode() + b"\n")
    return path


def load_dataset(path: str | Path) -> PeelDataset:
    path = check_dataset_path(path)
    with gzip.open(path, "rt", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln]
    if not lines:
        raise ContractViolationError("dataset file is empty")
    header = json.loads(lines[0])
    if header.get("format") != FORMAT_NAME:
        raise ContractViolationError("not a peel dataset (bad format field)")
    if int(header.get("version", -1)) != FORMAT_VERSION:
        raise ContractViolationError(
            f"unsupported dataset version {header.get('version')!r}"
        )
    trajectories = [TrajectoryRecord.from_json_line(ln) for ln in lines[1:]]
    if len(trajectories) != int(header["n_trajectories"]):
        raise ContractViolationError("trajectory count disagrees with header")
    return PeelDataset(header, trajectories)
