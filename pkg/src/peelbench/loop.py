"""Closed-loop simulation: 500 Hz inner control loop utilities.

`simulate_jointspace` wires the impedance controller to the rigid-body
plant for pure joint-space experiments (gain tuning, disturbance sweeps).
The task-level 10 Hz session that layers actions, contact, and
observations on top lives in `PeelSession` below.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .arm import (
    DEFAULT_ARM,
    ArmModel,
    JointState,
    Pose2,
    forward_kinematics,
    gravity_torque,
    jacobian,
    step_dynamics,
    wrap_angle,
)
from .controller import (
    DT_CONTROL,
    ControllerGains,
    ControllerState,
    control_step,
    load_gains,
)
from .errors import ContractViolationError, IntegrationDivergedError
from .ik import IkConfig, solve, solve_multistart
from .observe import Observation, render_observation
from .policy import clamp_action
from .produce import KnifeState, PeelTrace, ProduceProfile, TraceStep, contact_step


@dataclass
class JointTrace:
    """Time series recorded from a joint-space closed-loop run."""

    t: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    q_d: np.ndarray
    q_n: np.ndarray
    tau_c: np.ndarray


def simulate_jointspace(
    model: ArmModel,
    gains: ControllerGains,
    q0: np.ndarray,
    reference: Callable[[float], JointState],
    duration: float,
    *,
    disturbance: Callable[[float], np.ndarray] | None = None,
    disturbance_sensed: bool = True,
    dt: float = DT_CONTROL,
) -> JointTrace:
    """Run the impedance controller against the plant for `duration` seconds.

    `reference(t)` supplies the desired joint state. `disturbance(t)`, if
    given, is an extra joint torque applied to the plant; it is included
    in the sensed torque only when `disturbance_sensed` is true, which
    distinguishes a load the joint torque sensors see from one they do
    not (e.g. unmodeled friction).
    """
    q0 = np.asarray(q0, dtype=float)
    plant = JointState(q0.copy(), np.zeros(model.dof))
    ctrl = ControllerState.fresh(model.dof)
    zero_wrench = np.zeros(3)
    steps = int(round(duration / dt))
    tau_prev = gravity_torque(model, plant.q)  # sensor reading before the first command

    t_log = np.empty(steps)
    q_log = np.empty((steps, model.dof))
    dq_log = np.empty((steps, model.dof))
    qd_log = np.empty((steps, model.dof))
    qn_log = np.empty((steps, model.dof))
    tau_log = np.empty((steps, model.dof))

    for k in range(steps):
        t = k * dt
        desired = reference(t)
        d = disturbance(t) if disturbance is not None else None
        tau_sensed = tau_prev
        if d is not None and disturbance_sensed:
            tau_sensed = tau_sensed + d
        grav = gravity_torque(model, plant.q)
        cmd, ctrl = control_step(gains, ctrl, desired, plant, tau_sensed, grav, dt)
        applied = cmd.tau_c if d is None else cmd.tau_c + d
        plant = step_dynamics(model, plant, applied, zero_wrench, dt)
        tau_prev = cmd.tau_c

        t_log[k] = t
        q_log[k] = plant.q
        dq_log[k] = plant.dq
        qd_log[k] = desired.q
        qn_log[k] = ctrl.q_n
        tau_log[k] = cmd.tau_c

    return JointTrace(t_log, q_log, dq_log, qd_log, qn_log, tau_log)


def step_response_metrics(trace: JointTrace, q0: np.ndarray, q_target: np.ndarray) -> dict:
    """Settle time and overshoot of a step from q0 to q_target.

    Settle time is the last instant any joint sits outside a band of 2 %
    of its step size (floor 1e-3 rad) around the target; overshoot is the
    worst per-joint excursion beyond the target as a fraction of the step.
    """
    q0 = np.asarray(q0, dtype=float)
    q_target = np.asarray(q_target, dtype=float)
    step = q_target - q0
    scale = np.maximum(np.abs(step), 1e-9)
    band = np.maximum(0.02 * np.abs(step), 1e-3)

    err = np.abs(trace.q - q_target)
    outside = np.any(err > band, axis=1)
    settle = float(trace.t[outside][-1] + DT_CONTROL) if np.any(outside) else 0.0

    signed = (trace.q - q_target) * np.sign(step)
    overshoot = float(np.max(np.maximum(signed, 0.0) / scale))
    final_err = float(np.max(err[-1]))
    return {"settle_time": settle, "overshoot": overshoot, "final_error": final_err}


#: Outer action period (10 Hz); each action spans 50 inner control ticks.
OUTER_DT = 0.1
INNER_STEPS_PER_ACTION = int(round(OUTER_DT / DT_CONTROL))

#: Produce-local x of the session start pose, as a fraction of length.
START_X_FRACTION = 0.02

#: Start-pose height above the surface (meters).
HOVER_CLEARANCE = 0.02

#: Workbench mounting of the produce-local origin in the arm frame.
DEFAULT_MOUNT = (0.12, -0.22)

#: Joint-speed ceiling beyond which the closed loop counts as diverged.
MAX_JOINT_SPEED = 50.0

#: Session IK configuration; the elbow-up rest posture keeps the weighted
#: null-space pull away from the workspace boundary.
DEFAULT_IK_CONFIG = IkConfig(q_default=(-0.9, 1.0, 0.3))


class PeelSession:
    """Task-level peeling episode: 10 Hz pose deltas over the 500 Hz loop.

    Each action is an end-effector pose delta applied to the measured
    pose; inverse kinematics turns the target into a joint-space ramp
    that the impedance controller tracks for one outer period while the
    blade interacts with the produce. The produce sits at a fixed mount
    offset, so world and produce-local frames differ by a translation.
    """

    def __init__(
        self,
        profile: ProduceProfile,
        *,
        arm: ArmModel | None = None,
        gains: ControllerGains | None = None,
        mount: tuple[float, float] = DEFAULT_MOUNT,
        max_steps: int = 40,
        hover_clearance: float = HOVER_CLEARANCE,
        ik_config: IkConfig | None = None,
    ):
        self.profile = profile
        self.arm = arm if arm is not None else DEFAULT_ARM
        self.gains = gains if gains is not None else load_gains("planar3-v1")
        if self.gains.dof != self.arm.dof:
            raise ContractViolationError("gain preset dof disagrees with the arm")
        self.mount = (float(mount[0]), float(mount[1]))
        if max_steps < 1:
            raise ContractViolationError("max_steps must be >= 1")
        self.max_steps = int(max_steps)
        self.hover_clearance = float(hover_clearance)
        self.ik_config = ik_config if ik_config is not None else DEFAULT_IK_CONFIG
        self._started = False

    # ---------------------------------------------------------- frames
    def to_local(self, pose: Pose2) -> Pose2:
        return Pose2(pose.x - self.mount[0], pose.y - self.mount[1], pose.theta)

    def to_world(self, pose: Pose2) -> Pose2:
        return Pose2(pose.x + self.mount[0], pose.y + self.mount[1], pose.theta)

    def ee_pose(self) -> Pose2:
        """Measured end-effector (blade edge) pose in the arm frame."""
        return forward_kinematics(self.arm, self._plant.q)

    def knife_pose_local(self) -> Pose2:
        return self.to_local(self.ee_pose())

    def start_pose_local(self) -> Pose2:
        """Hover pose above the first approach point."""
        x0 = START_X_FRACTION * self.profile.length
        y0 = self.profile.height_at(x0, original=True) + self.hover_clearance
        theta0 = np.arctan(self.profile.slope_at(x0))
        return Pose2(x0, y0, theta0)

    # ---------------------------------------------------------- episode
    def reset(self) -> Observation:
        target = self.to_world(self.start_pose_local())
        q0, _, ok = solve_multistart(
            self.arm, np.asarray(self.ik_config.q_default, dtype=float),
            target, self.ik_config,
        )
        if not ok:
            raise ContractViolationError(
                "start pose unreachable; adjust mount or profile"
            )
        self._plant = JointState(q0, np.zeros(self.arm.dof))
        self._ctrl = ControllerState.fresh(self.arm.dof)
        self._tau_prev = gravity_torque(self.arm, q0)
        self._knife = KnifeState(self.knife_pose_local())
        self._q_desired = q0.copy()
        self._last_force = np.zeros(3)
        self._last_action = np.zeros(3)
        self.trace = PeelTrace()
        self.steps_taken = 0
        self.clip_events = 0
        self.ik_failures = 0
        self._started = True
        return self._observe()

    @property
    def done(self) -> bool:
        return self._started and self.steps_taken >= self.max_steps

    def _observe(self) -> Observation:
        return render_observation(
            self.profile, self._knife, self._plant.q,
            self._last_force, self._last_action,
        )

    def step(self, action) -> Observation:
        """Apply one pose-delta action and run one outer period.

        The delta moves a persistent desired pose (not the measured one),
        so the joint reference stays smooth while residual tracking error
        is the caller's to observe and correct on the next action.
        """
        if not self._started:
            raise ContractViolationError("call reset() before step()")
        if self.done:
            raise ContractViolationError("episode budget exhausted")
        act = clamp_action(np.asarray(action, dtype=float))
        self.clip_events += act.clipped

        anchor = forward_kinematics(self.arm, self._q_desired)
        target = Pose2(
            anchor.x + act.delta[0],
            anchor.y + act.delta[1],
            wrap_angle(anchor.theta + act.delta[2]),
        )
        q_goal, _, ok = solve(self.arm, self._q_desired, target, self.ik_config)
        if not ok:
            q_goal = self._q_desired
            self.ik_failures += 1
        q_from = self._q_desired.copy()
        dq_ramp = (q_goal - q_from) / OUTER_DT

        for k in range(1, INNER_STEPS_PER_ACTION + 1):
            frac = k / INNER_STEPS_PER_ACTION
            desired = JointState(q_from + (q_goal - q_from) * frac, dq_ramp)

            pose_local = self.knife_pose_local()
            J = jacobian(self.arm, self._plant.q)
            v = J @ self._plant.dq
            knife_in = KnifeState(
                pose_local, self._knife.in_contact, self._knife.cut_depth,
                self._knife.cutting, (float(v[0]), float(v[1])),
            )
            self._knife, force = contact_step(self.profile, knife_in, DT_CONTROL)

            tau_sensed = self._tau_prev + J.T @ force
            grav = gravity_torque(self.arm, self._plant.q)
            cmd, self._ctrl = control_step(
                self.gains, self._ctrl, desired, self._plant,
                tau_sensed, grav, DT_CONTROL,
            )
            self._plant = step_dynamics(self.arm, self._plant, cmd.tau_c, force, DT_CONTROL)
            self._tau_prev = cmd.tau_c
            speed = np.abs(self._plant.dq)
            if np.max(speed) > MAX_JOINT_SPEED:
                raise IntegrationDivergedError(int(np.argmax(speed)))
            self._last_force = force

        self._q_desired = q_goal
        self.steps_taken += 1
        self._last_action = act.delta.copy()
        pose_local = self.knife_pose_local()
        self.trace.append(TraceStep(
            t=self.steps_taken * OUTER_DT,
            pose=pose_local,
            cut_depth=self._knife.cut_depth,
            force=self._last_force.copy(),
            arc_progress=float(np.clip(pose_local.x / self.profile.length, 0.0, 1.0)),
            in_contact=self._knife.in_contact,
        ))
        return self._observe()
