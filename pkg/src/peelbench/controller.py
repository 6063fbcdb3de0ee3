"""Torque-level joint-space impedance controller with compliance adaptation.

The controller tracks a desired joint trajectory through an internal
*nominal* state that yields under sensed torque: the task torque drives
the nominal state toward the desired one, a low-pass filtered copy of the
sensed torque pushes back through a reflected-inertia term, and a
friction-like coupling softly drags the nominal state toward the sensed
plant so the two cannot drift apart during long contacts.

All gain matrices are diagonal and stored as per-joint vectors. State is
a value: every operation returns fresh arrays and `control_step` returns
the updated state alongside the command.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .arm import JointState
from .errors import ContractViolationError

#: Inner control-loop period (500 Hz).
DT_CONTROL = 0.002


def _positive_vector(name: str, values) -> tuple[float, ...]:
    vec = tuple(float(v) for v in values)
    if not vec or any(v <= 0 for v in vec):
        raise ContractViolationError(f"{name} must be a non-empty positive vector")
    return vec


@dataclass(frozen=True)
class ControllerGains:
    """Diagonal gain vectors plus the torque-filter coefficient."""

    kp: tuple[float, ...]
    kd: tuple[float, ...]
    kr: tuple[float, ...]
    kl: tuple[float, ...]
    klp: tuple[float, ...]
    filter_alpha: float

    def __post_init__(self):
        object.__setattr__(self, "kp", _positive_vector("kp", self.kp))
        object.__setattr__(self, "kd", _positive_vector("kd", self.kd))
        object.__setattr__(self, "kr", _positive_vector("kr", self.kr))
        object.__setattr__(self, "kl", _positive_vector("kl", self.kl))
        object.__setattr__(self, "klp", _positive_vector("klp", self.klp))
        n = len(self.kp)
        if any(len(v) != n for v in (self.kd, self.kr, self.kl, self.klp)):
            raise ContractViolationError("gain vectors must share one length")
        if not 0.0 < self.filter_alpha <= 1.0:
            raise ContractViolationError("filter_alpha must lie in (0, 1]")

    @property
    def dof(self) -> int:
        return len(self.kp)

    def scaled(self, **factors: float) -> "ControllerGains":
        """Return a copy with named gain vectors multiplied by a factor."""
        fields = {
            "kp": self.kp, "kd": self.kd, "kr": self.kr,
            "kl": self.kl, "klp": self.klp,
        }
        for name, factor in factors.items():
            if name not in fields:
                raise ContractViolationError(f"unknown gain field {name!r}")
            fields[name] = tuple(v * factor for v in fields[name])
        return ControllerGains(filter_alpha=self.filter_alpha, **fields)

    def to_dict(self) -> dict:
        return {
            "filter_alpha": self.filter_alpha,
            "kp": list(self.kp),
            "kd": list(self.kd),
            "kr": list(self.kr),
            "kl": list(self.kl),
            "klp": list(self.klp),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ControllerGains":
        try:
            return cls(
                kp=doc["kp"], kd=doc["kd"], kr=doc["kr"], kl=doc["kl"],
                klp=doc["klp"], filter_alpha=float(doc["filter_alpha"]),
            )
        except KeyError as missing:
            raise ContractViolationError(f"gain preset missing field {missing}") from None


def load_gains(preset_or_path: str) -> ControllerGains:
    """Load gains from a bundled preset name or a JSON file path."""
    packaged = resources.files("peelbench") / "presets" / f"{preset_or_path}.json"
    if packaged.is_file():
        return ControllerGains.from_dict(json.loads(packaged.read_text()))
    path = Path(preset_or_path)
    if path.is_file():
        return ControllerGains.from_dict(json.loads(path.read_text()))
    raise ContractViolationError(f"unknown gain preset or path: {preset_or_path!r}")


def available_presets() -> list[str]:
    folder = resources.files("peelbench") / "presets"
    return sorted(p.name[: -len(".json")] for p in folder.iterdir() if p.name.endswith(".json"))


@dataclass(frozen=True)
class ControllerState:
    """Nominal joint state plus torque-filter memory."""

    q_n: np.ndarray
    dq_n: np.ndarray
    tau_f: np.ndarray
    initialized: bool

    @classmethod
    def fresh(cls, dof: int) -> "ControllerState":
        return cls(np.zeros(dof), np.zeros(dof), np.zeros(dof), False)


@dataclass(frozen=True)
class ControlCommand:
    """Commanded torque and its two additive parts."""

    tau_c: np.ndarray
    tau_task: np.ndarray
    tau_coupling: np.ndarray


def _vec(name: str, v, dof: int) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (dof,):
        raise ContractViolationError(f"{name} must have shape ({dof},), got {arr.shape}")
    return arr


def task_torque(
    gains: ControllerGains,
    q_n: np.ndarray,
    dq_n: np.ndarray,
    desired: JointState,
    gravity_comp: np.ndarray,
) -> np.ndarray:
    """Tracking torque -Kp(q_n - q_d) - Kd(dq_n - dq_d) + gravity_comp."""
    dof = gains.dof
    q_n = _vec("q_n", q_n, dof)
    dq_n = _vec("dq_n", dq_n, dof)
    q_d = _vec("q_d", desired.q, dof)
    dq_d = _vec("dq_d", desired.dq, dof)
    g = _vec("gravity_comp", gravity_comp, dof)
    return -np.asarray(gains.kp) * (q_n - q_d) - np.asarray(gains.kd) * (dq_n - dq_d) + g


def filter_torque(tau_f_prev: np.ndarray, tau_sensed: np.ndarray, filter_alpha: float) -> np.ndarray:
    """One first-order low-pass update of the sensed-torque filter."""
    if not 0.0 < filter_alpha <= 1.0:
        raise ContractViolationError("filter_alpha must lie in (0, 1]")
    prev = np.asarray(tau_f_prev, dtype=float)
    cur = np.asarray(tau_sensed, dtype=float)
    return filter_alpha * cur + (1.0 - filter_alpha) * prev


def nominal_acceleration(
    gains: ControllerGains, tau_task: np.ndarray, tau_filtered: np.ndarray
) -> np.ndarray:
    """Compliance update: the filtered torque discrepancy over Kr."""
    dof = gains.dof
    t = _vec("tau_task", tau_task, dof)
    f = _vec("tau_filtered", tau_filtered, dof)
    return (t - f) / np.asarray(gains.kr)


def integrate_nominal(
    q_n: np.ndarray, dq_n: np.ndarray, ddq_n: np.ndarray, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Semi-implicit Euler: velocity first, then position with the new velocity."""
    if dt <= 0:
        raise ContractViolationError("dt must be positive")
    dq_new = np.asarray(dq_n, dtype=float) + np.asarray(ddq_n, dtype=float) * dt
    q_new = np.asarray(q_n, dtype=float) + dq_new * dt
    return q_new, dq_new


def coupling_torque(
    gains: ControllerGains, q_n: np.ndarray, dq_n: np.ndarray, sensed: JointState
) -> np.ndarray:
    """Friction-like pull of the sensed plant toward the nominal state."""
    dof = gains.dof
    q_n = _vec("q_n", q_n, dof)
    dq_n = _vec("dq_n", dq_n, dof)
    q_s = _vec("q_s", sensed.q, dof)
    dq_s = _vec("dq_s", sensed.dq, dof)
    krkl = np.asarray(gains.kr) * np.asarray(gains.kl)
    return krkl * ((dq_n - dq_s) + np.asarray(gains.klp) * (q_n - q_s))


def control_step(
    gains: ControllerGains,
    state: ControllerState,
    desired: JointState,
    sensed: JointState,
    tau_sensed: np.ndarray,
    gravity_comp: np.ndarray,
    dt: float = DT_CONTROL,
) -> tuple[ControlCommand, ControllerState]:
    """One full controller tick: exactly one filter update and one integration.

    The task and coupling torques are evaluated at the current nominal
    state; integration then advances that state for the next tick. On the
    first call the nominal state is seeded from the sensed state and the
    filter from the sensed torque, so startup produces no transient.
    """
    dof = gains.dof
    tau_s = _vec("tau_sensed", tau_sensed, dof)
    if not state.initialized:
        state = ControllerState(
            np.asarray(sensed.q, dtype=float).copy(),
            np.asarray(sensed.dq, dtype=float).copy(),
            tau_s.copy(),
            True,
        )
    tau_t = task_torque(gains, state.q_n, state.dq_n, desired, gravity_comp)
    tau_f = filter_torque(state.tau_f, tau_s, gains.filter_alpha)
    ddq_n = nominal_acceleration(gains, tau_t, tau_f)
    tau_cpl = coupling_torque(gains, state.q_n, state.dq_n, sensed)
    q_n, dq_n = integrate_nominal(state.q_n, state.dq_n, ddq_n, dt)
    command = ControlCommand(tau_t + tau_cpl, tau_t, tau_cpl)
    return command, ControllerState(q_n, dq_n, tau_f, True)
