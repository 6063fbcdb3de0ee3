"""Planar n-link arm: kinematics and forward dynamics.

Links are modeled as point masses at their centers of mass, which keeps
the mass matrix, Coriolis terms, and gravity vector analytic while
exercising every term the impedance controller needs. Gravity acts in -y.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, IntegrationDivergedError

TWO_PI = 2.0 * math.pi

# Plant integration rate ceiling; matches the controller's 500 Hz loop.
MAX_DT = 0.002


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - a) % TWO_PI


@dataclass(frozen=True)
class ArmModel:
    """Kinematic and dynamic description of a planar serial chain."""

    link_lengths: tuple[float, ...]
    link_masses: tuple[float, ...]
    link_coms: tuple[float, ...]
    gravity: float = 9.81
    joint_damping: tuple[float, ...] = ()

    def __post_init__(self):
        n = len(self.link_lengths)
        object.__setattr__(self, "link_lengths", tuple(float(v) for v in self.link_lengths))
        object.__setattr__(self, "link_masses", tuple(float(v) for v in self.link_masses))
        object.__setattr__(self, "link_coms", tuple(float(v) for v in self.link_coms))
        damping = self.joint_damping or tuple(0.0 for _ in range(n))
        object.__setattr__(self, "joint_damping", tuple(float(v) for v in damping))
        if len(self.link_masses) != n or len(self.link_coms) != n or len(self.joint_damping) != n:
            raise ContractViolationError("link parameter lists must share one length")
        if any(v <= 0 for v in self.link_lengths) or any(v <= 0 for v in self.link_masses):
            raise ContractViolationError("link lengths and masses must be strictly positive")
        if any(not 0.0 <= c <= 1.0 for c in self.link_coms):
            raise ContractViolationError("center-of-mass fractions must lie in [0, 1]")
        if self.gravity < 0:
            raise ContractViolationError("gravity must be >= 0")

    @property
    def dof(self) -> int:
        return len(self.link_lengths)

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    def to_json(self) -> str:
        return json.dumps(
            {
                "link_lengths": list(self.link_lengths),
                "link_masses": list(self.link_masses),
                "link_coms": list(self.link_coms),
                "gravity": self.gravity,
                "joint_damping": list(self.joint_damping),
                "dof": self.dof,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ArmModel":
        doc = json.loads(text)
        model = cls(
            link_lengths=tuple(doc["link_lengths"]),
            link_masses=tuple(doc["link_masses"]),
            link_coms=tuple(doc["link_coms"]),
            gravity=float(doc.get("gravity", 9.81)),
            joint_damping=tuple(doc.get("joint_damping", ())),
        )
        if "dof" in doc and int(doc["dof"]) != model.dof:
            raise ContractViolationError("dof field disagrees with link count")
        return model


#: Workbench default: well-conditioned 3-link arm (not a paper value).
DEFAULT_ARM = ArmModel(
    link_lengths=(0.30, 0.25, 0.10),
    link_masses=(2.0, 1.5, 0.5),
    link_coms=(0.5, 0.5, 0.5),
    gravity=9.81,
    joint_damping=(0.1, 0.1, 0.1),
)


@dataclass
class JointState:
    """Joint positions and velocities."""

    q: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.dq = np.asarray(self.dq, dtype=float)
        if self.q.shape != self.dq.shape or self.q.ndim != 1:
            raise ContractViolationError("q and dq must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.dq))):
            raise ContractViolationError("joint state entries must be finite")

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.dq.copy())


@dataclass(frozen=True)
class Pose2:
    """Planar pose; theta is wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta)):
            raise ContractViolationError("pose entries must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)


def _check_q(model: ArmModel, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.dof,):
        raise ContractViolationError(
            f"expected q of length {model.dof}, got shape {q.shape}"
        )
    return q


def forward_kinematics(model: ArmModel, q: np.ndarray) -> Pose2:
    """End-effector pose from serial-chain composition."""
    q = _check_q(model, q)
    phi = np.cumsum(q)
    lengths = np.asarray(model.link_lengths)
    x = float(np.sum(lengths * np.cos(phi)))
    y = float(np.sum(lengths * np.sin(phi)))
    return Pose2(x, y, wrap_angle(float(np.sum(q))))


def jacobian(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Analytic end-effector Jacobian, rows (xdot, ydot, thetadot)."""
    q = _check_q(model, q)
    phi = np.cumsum(q)
    lengths = np.asarray(model.link_lengths)
    sx = lengths * np.sin(phi)
    cx = lengths * np.cos(phi)
    # Column k sums contributions of links k..n-1 (reverse cumulative sum).
    J = np.empty((3, model.dof))
    J[0] = -np.cumsum(sx[::-1])[::-1]
    J[1] = np.cumsum(cx[::-1])[::-1]
    J[2] = 1.0
    return J


def _com_kinematics(model: ArmModel, q: np.ndarray, dq: np.ndarray | None = None):
    """Per-link COM positions, translational Jacobians, and optionally dJ/dt.

    COM i sits at sum_{j<i} L_j u(phi_j) + c_i L_i u(phi_i) with
    u(phi) = (cos phi, sin phi).
    """
    n = model.dof
    phi = np.cumsum(q)
    lengths = np.asarray(model.link_lengths)
    coms = np.asarray(model.link_coms)
    c, s = np.cos(phi), np.sin(phi)

    # eff[i, j] = effective length of link j in the chain to COM i.
    eff = np.zeros((n, n))
    for i in range(n):
        eff[i, :i] = lengths[:i]
        eff[i, i] = coms[i] * lengths[i]

    positions = np.stack([eff @ c, eff @ s], axis=1)  # (n, 2)

    # J_i[:, k] = sum_{j >= k} eff[i, j] * u'(phi_j); u' = (-sin, cos).
    jacs = np.zeros((n, 2, n))
    for i in range(n):
        gx = -eff[i] * s
        gy = eff[i] * c
        jacs[i, 0] = np.cumsum(gx[::-1])[::-1]
        jacs[i, 1] = np.cumsum(gy[::-1])[::-1]

    if dq is None:
        return positions, jacs, None

    # d/dt of u'(phi_j) is -u(phi_j) * phid_j with phid_j = sum_{k<=j} dq_k.
    phid = np.cumsum(dq)
    djacs = np.zeros_like(jacs)
    for i in range(n):
        gx = -eff[i] * c * phid
        gy = -eff[i] * s * phid
        djacs[i, 0] = np.cumsum(gx[::-1])[::-1]
        djacs[i, 1] = np.cumsum(gy[::-1])[::-1]
    return positions, jacs, djacs


def potential_energy(model: ArmModel, q: np.ndarray) -> float:
    """Gravitational potential energy sum(m_i * g * y_i)."""
    q = _check_q(model, q)
    positions, _, _ = _com_kinematics(model, q)
    masses = np.asarray(model.link_masses)
    return float(np.sum(masses * model.gravity * positions[:, 1]))


def gravity_torque(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Joint torques that exactly cancel the gravity load at q.

    Equals dU/dq for U = sum(m_i * g * y_i); applying this torque makes a
    resting arm a fixed point of the dynamics.
    """
    q = _check_q(model, q)
    _, jacs, _ = _com_kinematics(model, q)
    masses = np.asarray(model.link_masses)
    tau = np.zeros(model.dof)
    for i in range(model.dof):
        tau += masses[i] * model.gravity * jacs[i, 1]
    return tau


def mass_matrix(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Joint-space mass matrix for point-mass links."""
    q = _check_q(model, q)
    _, jacs, _ = _com_kinematics(model, q)
    masses = np.asarray(model.link_masses)
    M = np.zeros((model.dof, model.dof))
    for i in range(model.dof):
        M += masses[i] * jacs[i].T @ jacs[i]
    return M


def bias_torque(model: ArmModel, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """Coriolis/centrifugal generalized forces sum(m_i J_i^T Jdot_i dq)."""
    q = _check_q(model, q)
    dq = np.asarray(dq, dtype=float)
    _, jacs, djacs = _com_kinematics(model, q, dq)
    masses = np.asarray(model.link_masses)
    c = np.zeros(model.dof)
    for i in range(model.dof):
        c += masses[i] * jacs[i].T @ (djacs[i] @ dq)
    return c


def kinetic_energy(model: ArmModel, state: JointState) -> float:
    return float(0.5 * state.dq @ mass_matrix(model, state.q) @ state.dq)


def step_dynamics(
    model: ArmModel,
    state: JointState,
    applied_torque: np.ndarray,
    external_wrench: np.ndarray,
    dt: float,
) -> JointState:
    """Semi-implicit Euler step of the full rigid-body equation.

    M qdd + bias + dU/dq + D dq = applied_torque + J^T external_wrench;
    velocities integrate first, then positions use the new velocity.
    """
    if not 0.0 < dt <= MAX_DT + 1e-15:
        raise ContractViolationError(f"dt must be in (0, {MAX_DT}], got {dt}")
    q = _check_q(model, state.q)
    dq = np.asarray(state.dq, dtype=float)
    tau = np.asarray(applied_torque, dtype=float)
    wrench = np.asarray(external_wrench, dtype=float)
    if tau.shape != (model.dof,):
        raise ContractViolationError("applied_torque length must equal dof")
    if wrench.shape != (3,):
        raise ContractViolationError("external_wrench must be (fx, fy, tau_z)")

    damping = np.asarray(model.joint_damping)
    rhs = (
        tau
        + jacobian(model, q).T @ wrench
        - gravity_torque(model, q)
        - bias_torque(model, q, dq)
        - damping * dq
    )
    qdd = np.linalg.solve(mass_matrix(model, q), rhs)
    dq_new = dq + qdd * dt
    q_new = q + dq_new * dt
    finite = np.isfinite(q_new) & np.isfinite(dq_new)
    if not np.all(finite):
        raise IntegrationDivergedError(int(np.argmin(finite)))
    return JointState(q_new, dq_new)
