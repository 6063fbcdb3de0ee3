"""Weighted least-squares inverse kinematics with adaptive joint weights.

Each joint's weight shrinks with the leverage of its Jacobian column, so
the solver prefers moving low-leverage (distal) joints; a null-space
projector in the same weighted metric drifts redundant motion toward a
default pose without disturbing the end effector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .arm import ArmModel, Pose2, forward_kinematics, jacobian, wrap_angle
from .errors import ContractViolationError, SolverSingularityError


@dataclass(frozen=True)
class IkConfig:
    """Solver parameters; `position_only` drops the orientation row."""

    damping: float = 1e-6
    weight_epsilon: float = 1e-3
    null_space_gain: float = 0.1
    q_default: tuple[float, ...] = ()
    max_iters: int = 100
    pos_tol: float = 1e-4
    ang_tol: float = 1e-3
    position_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "q_default", tuple(float(v) for v in self.q_default))
        if self.damping < 0:
            raise ContractViolationError("damping must be >= 0")
        if self.weight_epsilon <= 0:
            raise ContractViolationError("weight_epsilon must be > 0")
        if self.null_space_gain < 0:
            raise ContractViolationError("null_space_gain must be >= 0")
        if self.max_iters < 1:
            raise ContractViolationError("max_iters must be >= 1")
        if self.pos_tol <= 0 or self.ang_tol <= 0:
            raise ContractViolationError("tolerances must be > 0")

    def to_json(self) -> str:
        return json.dumps(
            {
                "damping": self.damping,
                "weight_epsilon": self.weight_epsilon,
                "null_space_gain": self.null_space_gain,
                "q_default": list(self.q_default),
                "max_iters": self.max_iters,
                "pos_tol": self.pos_tol,
                "ang_tol": self.ang_tol,
                "position_only": self.position_only,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "IkConfig":
        doc = json.loads(text)
        doc["q_default"] = tuple(doc.get("q_default", ()))
        return cls(**doc)


def adaptive_weights(J: np.ndarray, weight_epsilon: float) -> np.ndarray:
    """Per-joint weights w_i = 1/(eps + ||column_i(J)||)."""
    J = np.asarray(J, dtype=float)
    if not np.all(np.isfinite(J)):
        raise ContractViolationError("Jacobian must be finite")
    if weight_epsilon <= 0:
        raise ContractViolationError("weight_epsilon must be > 0")
    return 1.0 / (weight_epsilon + np.linalg.norm(J, axis=0))


def pose_error(model: ArmModel, q: np.ndarray, target: Pose2, position_only: bool) -> np.ndarray:
    """Task-space error vector (dx, dy[, dtheta]) with the angle wrapped."""
    pose = forward_kinematics(model, q)
    e = [target.x - pose.x, target.y - pose.y]
    if not position_only:
        e.append(wrap_angle(target.theta - pose.theta))
    return np.asarray(e)


def _task_jacobian(model: ArmModel, q: np.ndarray, position_only: bool) -> np.ndarray:
    J = jacobian(model, q)
    return J[:2] if position_only else J


def solve_step(model: ArmModel, q: np.ndarray, target: Pose2, cfg: IkConfig) -> np.ndarray:
    """One damped weighted least-squares step plus null-space drift."""
    q = np.asarray(q, dtype=float)
    if q.shape != (model.dof,):
        raise ContractViolationError(f"q must have length {model.dof}")
    J = _task_jacobian(model, q, cfg.position_only)
    e = pose_error(model, q, target, cfg.position_only)
    w = adaptive_weights(J, cfg.weight_epsilon)
    winv = w**2  # diagonal of W^-1 for the metric W = diag(1/w_i^2)
    JWJt = (J * winv) @ J.T
    A = JWJt + cfg.damping * np.eye(J.shape[0])
    if cfg.damping == 0.0 and np.linalg.cond(A) > 1e12:
        raise SolverSingularityError(
            "normal matrix is singular with damping=0; set damping > 0"
        )
    try:
        x = np.linalg.solve(A, e)
    except np.linalg.LinAlgError as exc:
        raise SolverSingularityError(
            "normal matrix is singular with damping=0; set damping > 0"
        ) from exc
    dq = winv * (J.T @ x)

    if cfg.null_space_gain > 0.0 and cfg.q_default:
        q_default = np.asarray(cfg.q_default, dtype=float)
        if q_default.shape != (model.dof,):
            raise ContractViolationError("q_default must have length dof")
        # Exact weighted projector (no damping) so J @ n vanishes to
        # machine precision away from singularities.
        P = (winv[:, None] * J.T) @ np.linalg.pinv(JWJt) @ J
        N = np.eye(model.dof) - P
        dq = dq + cfg.null_space_gain * (N @ (q_default - q))
    return dq


def _within_tol(e: np.ndarray, cfg: IkConfig) -> bool:
    if math.hypot(e[0], e[1]) > cfg.pos_tol:
        return False
    return cfg.position_only or abs(e[2]) <= cfg.ang_tol


def solve(
    model: ArmModel, q0: np.ndarray, target: Pose2, cfg: IkConfig
) -> tuple[np.ndarray, int, bool]:
    """Iterate `solve_step` until tolerance or iteration budget runs out."""
    q = np.asarray(q0, dtype=float).copy()
    if _within_tol(pose_error(model, q, target, cfg.position_only), cfg):
        return q, 0, True
    for i in range(1, cfg.max_iters + 1):
        q = q + solve_step(model, q, target, cfg)
        if _within_tol(pose_error(model, q, target, cfg.position_only), cfg):
            return q, i, True
    return q, cfg.max_iters, False


def restart_seeds(q0: np.ndarray, cfg: IkConfig, dof: int) -> list[np.ndarray]:
    """Deterministic ladder of start configurations for global solving.

    Plain iteration can stall on the wrong elbow branch of a workspace
    fold; the ladder covers branch flips and base-joint rotations.
    """
    q0 = np.asarray(q0, dtype=float)
    qd = np.asarray(cfg.q_default, dtype=float) if cfg.q_default else np.zeros(dof)
    flip = qd.copy()
    flip[1:] *= -1.0
    rot_plus, rot_minus = qd.copy(), qd.copy()
    rot_plus[0] += 1.4
    rot_minus[0] -= 1.4
    return [q0, flip, -flip, rot_plus, rot_minus]


def solve_multistart(
    model: ArmModel, q0: np.ndarray, target: Pose2, cfg: IkConfig
) -> tuple[np.ndarray, int, bool]:
    """`solve` with deterministic restarts across elbow branches.

    Returns the first converged solution; `iterations` accumulates across
    attempts. Falls back to the best-effort result of the first start.
    """
    total = 0
    best = None
    for seed in restart_seeds(q0, cfg, model.dof):
        q, iters, ok = solve(model, seed, target, cfg)
        total += iters
        if best is None:
            best = q
        if ok:
            return q, total, True
    return best, total, False
