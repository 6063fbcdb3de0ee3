"""Closed-loop joint-space behavior with the shipped planar preset."""

import numpy as np
import pytest

from peelbench.arm import DEFAULT_ARM, JointState
from peelbench.controller import load_gains
from peelbench.loop import simulate_jointspace, step_response_metrics

Q_HOME = np.array([0.6, -0.9, 0.3])


def hold(target):
    t = np.asarray(target, dtype=float)
    return lambda _t: JointState(t, np.zeros(3))


class TestPlanarPreset:
    def test_per_joint_step_settles_fast_without_overshoot(self):
        gains = load_gains("planar3-v1")
        steps = np.array([0.25, 0.20, 0.15])
        for j in range(3):
            target = Q_HOME.copy()
            target[j] += steps[j]
            trace = simulate_jointspace(DEFAULT_ARM, gains, Q_HOME, hold(target), 3.0)
            err = np.abs(trace.q[:, j] - target[j])
            band = max(0.02 * steps[j], 1e-3)
            outside = err > band
            settle = trace.t[outside][-1] if outside.any() else 0.0
            overshoot = np.max((trace.q[:, j] - target[j]) * np.sign(steps[j])) / steps[j]
            assert settle < 2.0
            assert overshoot < 0.20

    def test_step_metrics_helper(self):
        gains = load_gains("planar3-v1")
        target = Q_HOME + np.array([0.25, -0.20, 0.15])
        trace = simulate_jointspace(DEFAULT_ARM, gains, Q_HOME, hold(target), 3.0)
        m = step_response_metrics(trace, Q_HOME, target)
        assert m["final_error"] < 1e-6
        assert m["settle_time"] < 2.0

    def test_tracks_smooth_reference(self):
        gains = load_gains("planar3-v1")
        amp = np.array([0.15, 0.12, 0.10])
        omega = 2.0

        def reference(t):
            ramp = min(t / 0.5, 1.0)
            return JointState(
                Q_HOME + ramp * amp * np.sin(omega * t),
                ramp * amp * omega * np.cos(omega * t),
            )

        trace = simulate_jointspace(DEFAULT_ARM, gains, Q_HOME, reference, 4.0)
        tail = trace.t > 1.0
        err = np.max(np.abs(trace.q[tail] - trace.q_d[tail]))
        assert err < 0.02


class TestDisturbanceCompliance:
    def test_unsensed_load_rests_at_kp_compliance(self):
        gains = load_gains("planar3-v1")
        delta = np.array([0.5, 0.5, 0.05])
        trace = simulate_jointspace(
            DEFAULT_ARM, gains, Q_HOME, hold(Q_HOME), 4.0,
            disturbance=lambda t: delta, disturbance_sensed=False,
        )
        offset = trace.q[-1] - Q_HOME
        assert np.allclose(offset, delta / np.asarray(gains.kp), rtol=0.05)

    def test_unsensed_offset_shrinks_as_kp_grows(self):
        base = load_gains("planar3-v1")
        delta = np.array([0.5, 0.5, 0.05])
        norms = []
        for factor in (1.0, 2.0, 4.0):
            gains = base.scaled(kp=factor)
            trace = simulate_jointspace(
                DEFAULT_ARM, gains, Q_HOME, hold(Q_HOME), 4.0,
                disturbance=lambda t: delta, disturbance_sensed=False,
            )
            norms.append(float(np.max(np.abs(trace.q[-1] - Q_HOME))))
        assert norms[0] > norms[1] > norms[2]

    def test_sensed_load_rests_at_coupling_compliance(self):
        gains = load_gains("planar3-v1")
        delta = np.array([0.5, 0.5, 0.05])
        trace = simulate_jointspace(
            DEFAULT_ARM, gains, Q_HOME, hold(Q_HOME), 6.0,
            disturbance=lambda t: delta, disturbance_sensed=True,
        )
        stiffness = np.asarray(gains.kr) * np.asarray(gains.kl) * np.asarray(gains.klp)
        offset = trace.q[-1] - Q_HOME
        assert np.allclose(offset, delta / stiffness, rtol=0.05, atol=2e-4)

    def test_commanded_torque_stays_bounded_under_load(self):
        gains = load_gains("planar3-v1")
        delta = np.array([0.5, 0.5, 0.05])
        trace = simulate_jointspace(
            DEFAULT_ARM, gains, Q_HOME, hold(Q_HOME), 5.0,
            disturbance=lambda t: delta, disturbance_sensed=True,
        )
        assert np.max(np.abs(trace.tau_c)) < 50.0


def test_simulation_deterministic():
    gains = load_gains("planar3-v1")
    target = Q_HOME + 0.1
    a = simulate_jointspace(DEFAULT_ARM, gains, Q_HOME, hold(target), 1.0)
    b = simulate_jointspace(DEFAULT_ARM, gains, Q_HOME, hold(target), 1.0)
    assert np.array_equal(a.q, b.q)
    assert np.array_equal(a.tau_c, b.tau_c)
