"""IK solver checks: weight rule, projector property, convergence."""

import math

import numpy as np
import pytest

from peelbench.arm import DEFAULT_ARM, Pose2, forward_kinematics, jacobian
from peelbench.errors import ContractViolationError, SolverSingularityError
from peelbench.ik import (
    IkConfig,
    adaptive_weights,
    pose_error,
    solve,
    solve_multistart,
    solve_step,
)

Q_DEFAULT = (0.6, -0.9, 0.3)


def config(**kw) -> IkConfig:
    base = dict(q_default=Q_DEFAULT)
    base.update(kw)
    return IkConfig(**base)


class TestAdaptiveWeights:
    def test_zero_column_gets_maximum_weight(self):
        J = np.array([[0.0, 1.0], [0.0, 2.0], [0.0, 0.5]])
        w = adaptive_weights(J, 1e-3)
        assert w[0] == pytest.approx(1.0 / 1e-3)
        assert w[0] > w[1]

    def test_weight_ratio_tracks_column_norms(self):
        J = np.array([[2.0, 1.0], [0.0, 0.0]])
        w = adaptive_weights(J, 1e-9)
        assert w[1] / w[0] == pytest.approx(2.0, rel=1e-6)

    def test_straight_arm_base_weight_smallest(self):
        w = adaptive_weights(jacobian(DEFAULT_ARM, np.zeros(3)), 1e-3)
        assert w[0] < w[1] < w[2]

    def test_scaling_a_column_decreases_its_weight(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            J = rng.normal(size=(3, 3))
            w0 = adaptive_weights(J, 1e-3)
            J2 = J.copy()
            J2[:, 1] *= 3.0
            w1 = adaptive_weights(J2, 1e-3)
            assert w1[1] < w0[1]
            assert w1[0] == w0[0] and w1[2] == w0[2]

    def test_config_validation(self):
        with pytest.raises(ContractViolationError):
            IkConfig(weight_epsilon=0.0)
        with pytest.raises(ContractViolationError):
            IkConfig(damping=-1.0)
        with pytest.raises(ContractViolationError):
            adaptive_weights(np.array([[np.inf]]), 1e-3)

    def test_config_json_round_trip(self):
        cfg = config(position_only=True, damping=1e-5)
        assert IkConfig.from_json(cfg.to_json()) == cfg


class TestSolveStep:
    def test_zero_error_at_default_pose_gives_zero_step(self):
        q = np.asarray(Q_DEFAULT)
        target = forward_kinematics(DEFAULT_ARM, q)
        dq = solve_step(DEFAULT_ARM, q, target, config())
        assert np.allclose(dq, 0.0, atol=1e-12)

    def test_null_space_step_preserves_pose_and_approaches_default(self):
        # Position-only task on a 3-joint arm leaves one redundant
        # direction for the null-space drive to use. Descent toward the
        # default pose is guaranteed in the solver's weighted metric
        # (the projector is orthogonal in W, not in the plain norm).
        cfg = config(position_only=True)
        q = np.asarray(Q_DEFAULT) + np.array([0.3, -0.2, 0.4])
        target_pose = forward_kinematics(DEFAULT_ARM, q)
        target = Pose2(target_pose.x, target_pose.y, 0.0)
        dq = solve_step(DEFAULT_ARM, q, target, cfg)
        J = jacobian(DEFAULT_ARM, q)[:2]
        assert np.linalg.norm(dq) > 1e-6
        assert np.linalg.norm(J @ dq) <= 1e-8 * np.linalg.norm(dq)
        w_metric = 1.0 / adaptive_weights(J, cfg.weight_epsilon) ** 2

        def wnorm(v):
            return float(np.sqrt(np.sum(w_metric * v * v)))

        d0 = wnorm(q - np.asarray(Q_DEFAULT))
        d1 = wnorm(q + dq - np.asarray(Q_DEFAULT))
        assert d1 < d0

    def test_null_space_component_annihilated_by_jacobian(self):
        rng = np.random.default_rng(1)
        cfg = config(position_only=True, null_space_gain=0.0)
        for _ in range(25):
            q = rng.uniform(-1.2, 1.2, size=3)
            target_pose = forward_kinematics(DEFAULT_ARM, q)
            target = Pose2(target_pose.x, target_pose.y, 0.0)
            with_null = config(position_only=True)
            dq_null = solve_step(DEFAULT_ARM, q, target, with_null) - solve_step(
                DEFAULT_ARM, q, target, cfg
            )
            n = np.linalg.norm(dq_null)
            if n < 1e-12:
                continue
            J = jacobian(DEFAULT_ARM, q)[:2]
            assert np.linalg.norm(J @ dq_null) <= 1e-8 * n

    def test_singular_with_zero_damping_raises(self):
        # Fully stretched arm: the position rows lose rank in one direction.
        cfg = config(damping=0.0, position_only=False, null_space_gain=0.0)
        with pytest.raises(SolverSingularityError):
            solve_step(DEFAULT_ARM, np.zeros(3), Pose2(0.7, 0.0, 0.0), cfg)

    def test_deterministic(self):
        q = np.array([0.5, -0.4, 0.2])
        target = Pose2(0.35, 0.25, 1.0)
        a = solve_step(DEFAULT_ARM, q, target, config())
        b = solve_step(DEFAULT_ARM, q, target, config())
        assert np.array_equal(a, b)


class TestSolve:
    def test_already_at_target_converges_in_zero_iterations(self):
        q = np.asarray(Q_DEFAULT)
        target = forward_kinematics(DEFAULT_ARM, q)
        q_sol, iters, ok = solve(DEFAULT_ARM, q, target, config())
        assert ok and iters == 0
        assert np.array_equal(q_sol, q)

    def test_unreachable_target_reports_failure(self):
        target = Pose2(DEFAULT_ARM.reach + 0.2, 0.0, 0.0)
        q_sol, iters, ok = solve(DEFAULT_ARM, np.asarray(Q_DEFAULT), target, config())
        assert not ok
        assert iters == config().max_iters
        assert np.all(np.isfinite(q_sol))

    def test_random_reachable_targets_converge(self):
        # Plain iteration stalls on the wrong elbow branch for a few
        # percent of far targets; the multistart wrapper is the intended
        # entry point for cold solves.
        rng = np.random.default_rng(7)
        cfg = config()
        failures = 0
        for _ in range(100):
            q_goal = rng.uniform(-1.3, 1.3, size=3)
            target = forward_kinematics(DEFAULT_ARM, q_goal)
            q_sol, _, ok = solve_multistart(DEFAULT_ARM, np.asarray(Q_DEFAULT), target, cfg)
            if not ok:
                failures += 1
                continue
            e = pose_error(DEFAULT_ARM, q_sol, target, cfg.position_only)
            assert math.hypot(e[0], e[1]) <= cfg.pos_tol
            assert abs(e[2]) <= cfg.ang_tol
        assert failures <= 1

    def test_convergence_certificate(self):
        rng = np.random.default_rng(9)
        cfg = config(position_only=True)
        for _ in range(30):
            q_goal = rng.uniform(-1.3, 1.3, size=3)
            pose = forward_kinematics(DEFAULT_ARM, q_goal)
            target = Pose2(pose.x, pose.y, 0.0)
            q_sol, _, ok = solve(DEFAULT_ARM, np.asarray(Q_DEFAULT), target, cfg)
            if ok:
                e = pose_error(DEFAULT_ARM, q_sol, target, True)
                assert math.hypot(e[0], e[1]) <= cfg.pos_tol
