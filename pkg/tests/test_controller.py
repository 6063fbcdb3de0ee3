"""Impedance-controller unit checks.

The reference oracle here recodes each controller equation inline from
scratch (plain loops over floats) so a transcription error in the library
cannot hide in a shared helper.
"""

import numpy as np
import pytest

from peelbench.arm import JointState
from peelbench.controller import (
    DT_CONTROL,
    ControllerGains,
    ControllerState,
    available_presets,
    control_step,
    coupling_torque,
    filter_torque,
    integrate_nominal,
    load_gains,
    nominal_acceleration,
    task_torque,
)
from peelbench.errors import ContractViolationError

KINOVA = load_gains("kinova7-paper")
GAINS3 = ControllerGains(
    kp=KINOVA.kp[:3], kd=KINOVA.kd[:3], kr=KINOVA.kr[:3],
    kl=KINOVA.kl[:3], klp=KINOVA.klp[:3], filter_alpha=KINOVA.filter_alpha,
)


class TestPresets:
    def test_bundled_names(self):
        names = available_presets()
        assert "kinova7-paper" in names
        assert "planar3-v1" in names

    def test_seven_dof_preset_values_exact(self):
        g = KINOVA
        assert g.filter_alpha == 0.01
        assert g.kr == (0.3, 0.3, 0.3, 0.3, 0.18, 0.18, 0.18)
        assert g.kl == (106.2, 100.8, 106.2, 106.2, 131.4, 106.2, 106.2)
        assert g.klp == (11.89, 25.52, 22.0, 22.0, 22.0, 22.0, 22.0)
        assert g.kp == (382.2, 296.4, 347.1, 400.0, 200.0, 200.0, 200.0)
        assert g.kd == (21.0, 17.5, 10.0, 10.0, 5.0, 5.0, 5.0)

    def test_round_trip_and_path_loading(self, tmp_path):
        import json

        p = tmp_path / "custom.json"
        p.write_text(json.dumps(GAINS3.to_dict()))
        assert load_gains(str(p)) == GAINS3

    def test_unknown_preset_rejected(self):
        with pytest.raises(ContractViolationError):
            load_gains("no-such-preset")

    def test_nonpositive_gains_rejected(self):
        with pytest.raises(ContractViolationError):
            ControllerGains(kp=(0.0,), kd=(1,), kr=(1,), kl=(1,), klp=(1,), filter_alpha=0.5)
        with pytest.raises(ContractViolationError):
            ControllerGains(kp=(1,), kd=(1,), kr=(1,), kl=(1,), klp=(1,), filter_alpha=0.0)


class TestTaskTorque:
    def test_zero_error_passes_gravity_through(self):
        d = JointState(np.zeros(3), np.zeros(3))
        g = np.array([1.0, 2.0, 3.0])
        out = task_torque(GAINS3, d.q, d.dq, d, g)
        assert np.array_equal(out, g)

    def test_position_error_scales_by_kp(self):
        d = JointState(np.zeros(3), np.zeros(3))
        out = task_torque(GAINS3, np.array([0.01, 0.0, 0.0]), np.zeros(3), d, np.zeros(3))
        assert out == pytest.approx([-3.822, 0.0, 0.0], abs=1e-12)

    def test_matches_elementwise_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            q_n, dq_n, q_d, dq_d, g = rng.normal(size=(5, 3))
            out = task_torque(GAINS3, q_n, dq_n, JointState(q_d, dq_d), g)
            for i in range(3):
                ref = -GAINS3.kp[i] * (q_n[i] - q_d[i]) - GAINS3.kd[i] * (dq_n[i] - dq_d[i]) + g[i]
                assert abs(out[i] - ref) <= 1e-12


class TestFilter:
    def test_constant_input_is_fixed_point(self):
        c = np.array([2.0, -1.0, 0.5])
        f = c.copy()
        for _ in range(100):
            f = filter_torque(f, c, 0.01)
        assert np.array_equal(f, c)

    def test_geometric_approach_from_zero(self):
        c = np.array([1.0, -2.0, 3.0])
        f = np.zeros(3)
        for k in range(1, 500):
            f = filter_torque(f, c, 0.01)
            expected = c * (1.0 - 0.99**k)
            assert np.allclose(f, expected, atol=1e-12)

    def test_output_bounded_by_history(self):
        rng = np.random.default_rng(1)
        f = np.zeros(1)
        for _ in range(200):
            x = rng.choice([-1.0, 1.0], size=1)
            f = filter_torque(f, x, 0.3)
            assert abs(f[0]) <= 1.0 + 1e-15


class TestNominalAcceleration:
    def test_zero_discrepancy(self):
        t = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(nominal_acceleration(GAINS3, t, t), np.zeros(3))

    def test_division_by_kr(self):
        out = nominal_acceleration(GAINS3, np.array([0.3, -0.6, 0.0]), np.zeros(3))
        assert out == pytest.approx([1.0, -2.0, 0.0], abs=1e-12)

    def test_matches_elementwise_formula(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            t, f = rng.normal(size=(2, 3))
            out = nominal_acceleration(GAINS3, t, f)
            for i in range(3):
                assert abs(out[i] - (t[i] - f[i]) / GAINS3.kr[i]) <= 1e-12


class TestIntegrateNominal:
    def test_zero_acceleration(self):
        q, dq = integrate_nominal(np.zeros(3), np.ones(3), np.zeros(3), 0.002)
        assert np.array_equal(q, np.full(3, 0.002))
        assert np.array_equal(dq, np.ones(3))

    def test_velocity_first_ordering(self):
        # From rest, one step moves by a*dt^2, not a*dt^2/2.
        a = np.array([1.0, -2.0, 3.0])
        q, dq = integrate_nominal(np.zeros(3), np.zeros(3), a, 0.002)
        assert np.allclose(q, a * 0.002**2, atol=1e-18)
        assert np.allclose(dq, a * 0.002, atol=1e-18)

    def test_long_run_matches_recurrence(self):
        a = np.array([0.7])
        dt = 0.002
        q, dq = np.array([0.1]), np.array([-0.2])
        for _ in range(1000):
            q, dq = integrate_nominal(q, dq, a, dt)
        k = 1000
        dq_ref = -0.2 + k * 0.7 * dt
        q_ref = 0.1 + k * (-0.2) * dt + 0.7 * dt * dt * k * (k + 1) / 2
        assert q[0] == pytest.approx(q_ref, abs=1e-9)
        assert dq[0] == pytest.approx(dq_ref, abs=1e-9)


class TestCoupling:
    def test_zero_when_aligned(self):
        s = JointState(np.array([0.1, 0.2, 0.3]), np.array([1.0, 2.0, 3.0]))
        out = coupling_torque(GAINS3, s.q, s.dq, s)
        assert np.array_equal(out, np.zeros(3))

    def test_stiffness_product(self):
        s = JointState(np.zeros(3), np.zeros(3))
        out = coupling_torque(GAINS3, np.array([0.01, 0.0, 0.0]), np.zeros(3), s)
        assert out[0] == pytest.approx(0.3 * 106.2 * 11.89 * 0.01, abs=1e-12)
        assert out[1] == out[2] == 0.0

    def test_pulls_sensed_toward_nominal(self):
        s = JointState(np.zeros(3), np.zeros(3))
        out = coupling_torque(GAINS3, np.array([0.05, 0.05, 0.05]), np.zeros(3), s)
        assert np.all(out > 0)


def reference_step(gains, q_n, dq_n, tau_f, q_d, dq_d, q_s, dq_s, tau_s, grav, dt):
    """Scalar-loop recoding of the full controller tick."""
    n = gains.dof
    tau_task = [
        -gains.kp[i] * (q_n[i] - q_d[i]) - gains.kd[i] * (dq_n[i] - dq_d[i]) + grav[i]
        for i in range(n)
    ]
    tau_f2 = [gains.filter_alpha * tau_s[i] + (1 - gains.filter_alpha) * tau_f[i] for i in range(n)]
    ddq = [(tau_task[i] - tau_f2[i]) / gains.kr[i] for i in range(n)]
    tau_cpl = [
        gains.kr[i] * gains.kl[i] * ((dq_n[i] - dq_s[i]) + gains.klp[i] * (q_n[i] - q_s[i]))
        for i in range(n)
    ]
    dq_n2 = [dq_n[i] + ddq[i] * dt for i in range(n)]
    q_n2 = [q_n[i] + dq_n2[i] * dt for i in range(n)]
    tau_c = [tau_task[i] + tau_cpl[i] for i in range(n)]
    return (
        np.array(tau_c), np.array(tau_task), np.array(tau_cpl),
        np.array(q_n2), np.array(dq_n2), np.array(tau_f2),
    )


class TestControlStep:
    def test_equilibrium_passes_gravity_exactly(self):
        q = np.array([0.1, 0.2, 0.3])
        g = np.array([4.0, -1.0, 0.5])
        sensed = JointState(q, np.zeros(3))
        state = ControllerState(q.copy(), np.zeros(3), g.copy(), True)
        cmd, _ = control_step(GAINS3, state, sensed, sensed, g, g)
        assert np.array_equal(cmd.tau_c, g)

    def test_command_is_sum_of_parts(self):
        rng = np.random.default_rng(3)
        state = ControllerState.fresh(3)
        for _ in range(100):
            desired = JointState(rng.normal(size=3), rng.normal(size=3))
            sensed = JointState(rng.normal(size=3), rng.normal(size=3))
            cmd, state = control_step(
                GAINS3, state, desired, sensed, rng.normal(size=3), rng.normal(size=3)
            )
            assert np.array_equal(cmd.tau_c, cmd.tau_task + cmd.tau_coupling)

    def test_first_call_seeds_from_sensed(self):
        sensed = JointState(np.array([0.3, -0.2, 0.5]), np.array([0.1, 0.0, -0.1]))
        tau_s = np.array([1.0, 2.0, 3.0])
        desired = JointState(np.zeros(3), np.zeros(3))
        _, state = control_step(GAINS3, ControllerState.fresh(3), desired, sensed, tau_s, np.zeros(3))
        # After one tick the filter holds the seed (alpha*c + (1-alpha)*c, so
        # equal to within an ulp of rounding).
        assert np.allclose(state.tau_f, tau_s, rtol=1e-15, atol=0.0)

    def test_unit_alpha_gives_affine_nominal(self):
        # With alpha=1 the filtered torque equals the task torque whenever
        # tau_s is fed back as tau_task, so the nominal state coasts.
        gains = ControllerGains(
            kp=(10.0, 10.0), kd=(1.0, 1.0), kr=(0.5, 0.5),
            kl=(5.0, 5.0), klp=(2.0, 2.0), filter_alpha=1.0,
        )
        q_n0 = np.array([0.1, -0.3])
        v = np.array([0.2, 0.4])
        sensed = JointState(q_n0, v)
        desired = JointState(np.array([1.0, 1.0]), np.zeros(2))
        state = ControllerState.fresh(2)
        dt = DT_CONTROL
        for k in range(200):
            tau_task_now = task_torque(
                gains,
                state.q_n if state.initialized else q_n0,
                state.dq_n if state.initialized else v,
                desired,
                np.zeros(2),
            )
            _, state = control_step(gains, state, desired, sensed, tau_task_now, np.zeros(2))
            expected_q = q_n0 + v * dt * (k + 1)
            assert np.allclose(state.q_n, expected_q, atol=1e-12)
            assert np.allclose(state.dq_n, v, atol=1e-12)

    def test_matches_scalar_reference_over_many_steps(self):
        rng = np.random.default_rng(4)
        q_s = rng.normal(size=3)
        dq_s = rng.normal(size=3)
        tau_s = rng.normal(size=3)
        state = ControllerState.fresh(3)
        q_n, dq_n, tau_f = q_s.copy(), dq_s.copy(), tau_s.copy()
        first = True
        for _ in range(300):
            desired = JointState(rng.normal(size=3), rng.normal(size=3))
            grav = rng.normal(size=3)
            if not first:
                tau_s = rng.normal(size=3)
            cmd, state = control_step(
                GAINS3, state, desired, JointState(q_s, dq_s), tau_s, grav
            )
            ref = reference_step(
                GAINS3, q_n, dq_n, tau_f, desired.q, desired.dq, q_s, dq_s, tau_s, grav, DT_CONTROL
            )
            assert np.max(np.abs(cmd.tau_c - ref[0])) <= 1e-12
            assert np.max(np.abs(state.q_n - ref[3])) <= 1e-12
            assert np.max(np.abs(state.dq_n - ref[4])) <= 1e-12
            assert np.max(np.abs(state.tau_f - ref[5])) <= 1e-12
            q_n, dq_n, tau_f = ref[3], ref[4], ref[5]
            q_s = q_s + rng.normal(scale=0.01, size=3)
            dq_s = rng.normal(size=3)
            first = False

    def test_deterministic(self):
        def run():
            state = ControllerState.fresh(3)
            out = []
            for k in range(50):
                desired = JointState(np.full(3, 0.1 * k), np.zeros(3))
                sensed = JointState(np.full(3, 0.05 * k), np.full(3, 0.01))
                cmd, state = control_step(
                    GAINS3, state, desired, sensed, np.full(3, 0.2), np.zeros(3)
                )
                out.append(cmd.tau_c.copy())
            return np.array(out)

        assert np.array_equal(run(), run())
