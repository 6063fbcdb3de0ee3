"""Produce generation, knife contact, grading, and observation tests.

Oracles here are independent reimplementations: trapezoid area checks
against closed-form geometry, hand-computed contact forces, and
hand-built traces with known depth profiles.
"""

import numpy as np
import pytest

from peelbench.arm import Pose2
from peelbench.errors import ContractViolationError
from peelbench.grading import (
    CATEGORY_ORDER,
    QUALITY_DESCRIPTORS,
    GradedSegment,
    QualScore,
    ThicknessCategory,
    categorize_ratio,
    grade_segments,
    grade_trajectory,
    removal_envelope,
)
from peelbench.observe import (
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    normalize_force,
    pixel_of,
    render_observation,
)
from peelbench.produce import (
    CATEGORIES,
    KnifeState,
    PeelTrace,
    ProduceProfile,
    TraceStep,
    contact_step,
    make_produce,
)


def flat_profile(height=0.03, length=0.2, stiffness=500.0, toughness=0.8, t_nom=0.002):
    """Hand-built slab profile: flat top, exact closed-form geometry."""
    surface = np.full(256, height)
    return ProduceProfile(
        category="cucumber-like",
        length=length,
        surface=surface.copy(),
        surface_original=surface.copy(),
        skin_thickness=np.full(256, t_nom),
        t_nom=t_nom,
        flesh_stiffness=stiffness,
        skin_toughness=toughness,
        seed=0,
    )


def run_stroke(profile, depth, x_start=0.0, x_end=None, speed=0.1, dt=0.002):
    """Drive the knife along the surface at constant depth below original."""
    if x_end is None:
        x_end = profile.length
    n = max(int(abs(x_end - x_start) / (speed * dt)), 2)
    xs = np.linspace(x_start, x_end, n)
    knife_states = []
    forces = []
    prev = None
    for x in xs:
        y = profile.height_at(x, original=True) - depth
        vel = ((x - prev[0]) / dt, (y - prev[1]) / dt) if prev else (speed, 0.0)
        knife = KnifeState(Pose2(x, y, 2.6), velocity=vel)
        if knife_states:
            knife.cutting = knife_states[-1].cutting
            knife.in_contact = knife_states[-1].in_contact
        knife, force = contact_step(profile, knife, dt)
        knife_states.append(knife)
        forces.append(force)
        prev = (x, y)
    return knife_states, forces


# ---------------------------------------------------------------- produce


class TestMakeProduce:
    def test_determinism_bit_identical(self):
        for cat in CATEGORIES:
            a = make_produce(42, cat)
            b = make_produce(42, cat)
            assert a.to_json() == b.to_json()

    def test_distinct_seeds_differ(self):
        a = make_produce(1, "apple-like")
        b = make_produce(2, "apple-like")
        assert not np.array_equal(a.surface, b.surface)

    def test_cucumber_lower_curvature_than_apple_over_50_seeds(self):
        def max_curvature(p):
            dx = p.xs[1] - p.xs[0]
            return np.max(np.abs(np.diff(p.surface_original, 2))) / dx**2

        cuc = [max_curvature(make_produce(s, "cucumber-like")) for s in range(50)]
        app = [max_curvature(make_produce(s, "apple-like")) for s in range(50)]
        assert np.mean(cuc) < np.mean(app)
        assert np.max(cuc) < np.min(app)

    def test_skin_thickness_positive_for_1000_seeds(self):
        for seed in range(1000):
            cat = CATEGORIES[seed % 3]
            p = make_produce(seed, cat)
            assert np.all(p.skin_thickness > 0.0)

    def test_surface_nonnegative_and_ends_at_zero(self):
        p = make_produce(7, "potato-like")
        assert np.all(p.surface_original >= 0.0)
        assert p.surface_original[0] == 0.0 and p.surface_original[-1] == 0.0

    def test_unknown_category_rejected(self):
        with pytest.raises(ContractViolationError):
            make_produce(0, "durian-like")

    def test_json_round_trip(self):
        p = make_produce(3, "apple-like")
        q = ProduceProfile.from_json(p.to_json())
        assert np.array_equal(p.surface, q.surface)
        assert p.skin_toughness == q.skin_toughness


# ----------------------------------------------------------- contact_step


class TestContactStep:
    def test_above_surface_zero_force(self):
        p = flat_profile()
        knife = KnifeState(Pose2(0.1, 0.05, 2.6))
        new, force = contact_step(p, knife, 0.002)
        assert np.array_equal(force, np.zeros(3))
        assert not new.in_contact and new.cut_depth == 0.0

    def test_one_mm_penetration_gives_half_newton_no_cut(self):
        p = flat_profile(stiffness=500.0, toughness=0.8)
        knife = KnifeState(Pose2(0.1, 0.03 - 0.001, 2.6))
        new, force = contact_step(p, knife, 0.002)
        # Flat top: normal is +y, hence force = (0, 0.5, 0) exactly.
        assert force == pytest.approx([0.0, 0.5, 0.0], abs=1e-12)
        assert new.in_contact and not new.cutting and new.cut_depth == 0.0
        assert np.array_equal(p.surface, p.surface_original)

    def test_friction_opposes_tangential_motion(self):
        p = flat_profile(stiffness=500.0, toughness=0.8)
        knife = KnifeState(Pose2(0.1, 0.029, 2.6), velocity=(0.1, 0.0))
        _, force = contact_step(p, knife, 0.002)
        assert force[1] == pytest.approx(0.5, abs=1e-12)
        assert force[0] == pytest.approx(-0.3 * 0.5, abs=1e-12)
        knife = KnifeState(Pose2(0.1, 0.029, 2.6), velocity=(-0.1, 0.0))
        _, force = contact_step(p, knife, 0.002)
        assert force[0] == pytest.approx(0.3 * 0.5, abs=1e-12)

    def test_torque_channel_always_zero(self):
        p = flat_profile()
        knife = KnifeState(Pose2(0.05, 0.028, 2.6), velocity=(0.1, 0.0))
        _, force = contact_step(p, knife, 0.002)
        assert force[2] == 0.0

    def test_outside_extent_zero_force_no_error(self):
        p = flat_profile()
        for x in (-0.01, 0.25):
            knife = KnifeState(Pose2(x, -1.0, 2.6))
            new, force = contact_step(p, knife, 0.002)
            assert np.array_equal(force, np.zeros(3))
            assert not new.in_contact

    def test_cut_latch_requires_toughness_then_persists(self):
        p = flat_profile(stiffness=500.0, toughness=0.8)
        # 1 mm penetration: 0.5 N < 0.8 N, no cut.
        k1, _ = contact_step(p, KnifeState(Pose2(0.1, 0.029, 2.6)), 0.002)
        assert not k1.cutting
        # 2 mm penetration: 1.0 N > 0.8 N, cut begins.
        k2 = KnifeState(Pose2(0.1, 0.028, 2.6), in_contact=True)
        k2, _ = contact_step(p, k2, 0.002)
        assert k2.cutting and k2.cut_depth == pytest.approx(0.002, abs=1e-12)
        # Latched state persists at shallow penetration while in contact.
        k3 = KnifeState(Pose2(0.1005, 0.0295, 2.6), cutting=True, velocity=(0.25, 0.75))
        k3, _ = contact_step(p, k3, 0.002)
        assert k3.cutting
        # Contact loss resets the latch.
        k4 = KnifeState(Pose2(0.102, 0.05, 2.6), cutting=True)
        k4, _ = contact_step(p, k4, 0.002)
        assert not k4.cutting and not k4.in_contact

    def test_full_stroke_removes_t_nom_times_length_within_2pct(self):
        p = flat_profile(height=0.03, length=0.2, toughness=0.3, t_nom=0.002)
        run_stroke(p, depth=0.002)
        expected = 0.002 * 0.2
        assert p.removed_area() == pytest.approx(expected, rel=0.02)

    def test_dome_stroke_area_conservation(self):
        p = make_produce(11, "cucumber-like")
        run_stroke(p, depth=p.t_nom, x_start=0.0, x_end=p.length)
        measured = p.removed_area()
        assert measured == pytest.approx(p.t_nom * p.length, rel=0.02)

    def test_removal_is_permanent_and_monotone(self):
        p = flat_profile(toughness=0.3)
        run_stroke(p, depth=0.002, x_start=0.0, x_end=0.1)
        first = p.surface.copy()
        knife = KnifeState(Pose2(0.15, 0.05, 2.6))
        contact_step(p, knife, 0.002)
        assert np.array_equal(p.surface, first)
        run_stroke(p, depth=0.003, x_start=0.0, x_end=0.1)
        assert np.all(p.surface <= first + 1e-15)

    def test_cut_depth_measured_against_original_surface(self):
        p = flat_profile(toughness=0.3)
        run_stroke(p, depth=0.002, x_start=0.0, x_end=0.1)
        # Second, deeper pass over cut ground still reports depth vs original.
        states, _ = run_stroke(p, depth=0.003, x_start=0.0, x_end=0.1)
        deep = [s.cut_depth for s in states if s.cutting]
        assert deep and max(deep) == pytest.approx(0.003, abs=1e-9)

    def test_negative_cut_depth_rejected(self):
        with pytest.raises(ContractViolationError):
            KnifeState(Pose2(0, 0, 0), cut_depth=-0.001)


# ---------------------------------------------------------------- grading


def make_trace(depths, xs=None, contact=None, dt=0.1):
    trace = PeelTrace()
    n = len(depths)
    if xs is None:
        xs = np.linspace(0.0, 0.2, n)
    if contact is None:
        contact = [d > 0 for d in depths]
    for i, (d, x) in enumerate(zip(depths, xs)):
        trace.append(
            TraceStep(
                t=i * dt,
                pose=Pose2(x, 0.0, 2.6),
                cut_depth=d,
                force=np.zeros(3),
                arc_progress=x,
                in_contact=bool(contact[i]),
            )
        )
    return trace


class TestGradeSegments:
    def test_ratio_bands(self):
        assert categorize_ratio(0.2) is ThicknessCategory.BELOW_NOMINAL
        assert categorize_ratio(0.5) is ThicknessCategory.NOMINAL
        assert categorize_ratio(1.0) is ThicknessCategory.NOMINAL
        assert categorize_ratio(1.25) is ThicknessCategory.SLIGHTLY_ABOVE_NOMINAL
        assert categorize_ratio(1.75) is ThicknessCategory.ABOVE_NOMINAL
        assert categorize_ratio(2.5) is ThicknessCategory.EXCESSIVE

    def test_constant_nominal_depth_every_segment_nominal(self):
        p = flat_profile(t_nom=0.002)
        trace = make_trace([0.002] * 45)
        segs = grade_segments(trace, p, L=15, O=3)
        assert all(s.category is ThicknessCategory.NOMINAL for s in segs)

    def test_no_contact_every_segment_na(self):
        p = flat_profile()
        trace = make_trace([0.0] * 30)
        segs = grade_segments(trace, p, L=15, O=3)
        assert all(s.category is ThicknessCategory.NOT_APPLICABLE for s in segs)

    def test_39_steps_L15_O3_gives_starts_0_12_24_plus_truncated(self):
        p = flat_profile()
        trace = make_trace([0.002] * 39)
        segs = grade_segments(trace, p, L=15, O=3)
        assert [s.start for s in segs] == [0, 12, 24, 36]
        assert [s.truncated for s in segs] == [False, False, False, True]
        assert [s.length for s in segs] == [15, 15, 15, 3]

    def test_short_trace_single_truncated_segment(self):
        p = flat_profile()
        segs = grade_segments(make_trace([0.002] * 7), p, L=15, O=3)
        assert len(segs) == 1 and segs[0].truncated and segs[0].length == 7

    def test_band_monotonicity_under_depth_scaling(self):
        p = flat_profile(t_nom=0.002)
        rng = np.random.default_rng(0)
        base = rng.uniform(0.0005, 0.003, size=45)
        order = {cat: i for i, cat in enumerate(CATEGORY_ORDER)}
        prev = None
        for factor in (1.0, 1.3, 1.8, 2.6):
            segs = grade_segments(make_trace(list(base * factor)), p, L=15, O=3)
            ranks = [order[s.category] for s in segs]
            if prev is not None:
                assert all(r >= q for r, q in zip(ranks, prev))
            prev = ranks

    def test_bad_window_params_rejected(self):
        p = flat_profile()
        with pytest.raises(ContractViolationError):
            grade_segments(make_trace([0.002] * 20), p, L=3, O=3)
        with pytest.raises(ContractViolationError):
            grade_segments(PeelTrace(), p)

    def test_grading_purity(self):
        p = flat_profile()
        trace = make_trace(list(np.linspace(0, 0.003, 40)))
        a = grade_segments(trace, p, L=15, O=3)
        b = grade_segments(trace, p, L=15, O=3)
        assert a == b


class TestGradeTrajectory:
    def test_descriptor_table(self):
        assert QUALITY_DESCRIPTORS == {
            0: "discard",
            1: "too low",
            2: "too high",
            3: "too short",
            4: "short, thick",
            5: "short, thin",
            6: "mid, thick",
            7: "long, thick",
            8: "mid, thin",
            9: "long, thin",
        }

    def test_full_length_nominal_stroke_scores_9_long_thin(self):
        p = flat_profile(t_nom=0.002)
        trace = make_trace([0.002] * 40, xs=np.linspace(0.0, 0.2, 40))
        score = grade_trajectory(trace, p)
        assert score.score == 9 and score.descriptor == "long, thin"
        assert score.success

    def test_zero_contact_scores_2_too_high(self):
        p = flat_profile()
        trace = make_trace([0.0] * 20)
        score = grade_trajectory(trace, p)
        assert score.score == 2 and score.descriptor == "too high"
        assert not score.success

    def test_gouge_scores_1_too_low(self):
        p = flat_profile(t_nom=0.002)
        depths = [0.002] * 10 + [0.007] + [0.002] * 10
        trace = make_trace(depths, xs=np.linspace(0.0, 0.05, 21))
        score = grade_trajectory(trace, p)
        assert score.score == 1 and score.descriptor == "too low"

    def test_destroyed_produce_scores_0_discard(self):
        p = flat_profile(height=0.01, t_nom=0.002)
        trace = make_trace([0.006] * 40, xs=np.linspace(0.0, 0.2, 40))
        # 6 mm over the full length on a 10 mm slab removes 60% > 25%.
        score = grade_trajectory(trace, p)
        assert score.score == 0 and score.descriptor == "discard"

    def test_tiny_coverage_scores_3_too_short(self):
        p = flat_profile(t_nom=0.002)
        trace = make_trace(
            [0.002] * 5 + [0.0] * 35,
            xs=np.concatenate([np.linspace(0.0, 0.02, 5), np.full(35, 0.19)]),
        )
        score = grade_trajectory(trace, p)
        assert score.score == 3 and score.descriptor == "too short"

    def test_coverage_by_thickness_grid(self):
        p = flat_profile(t_nom=0.002)

        def stroke(cover, depth):
            n = 40
            xs = np.linspace(0.0, cover * 0.2, n)
            return make_trace([depth] * n, xs=xs)

        assert grade_trajectory(stroke(0.25, 0.002), p).score == 5   # short, thin
        assert grade_trajectory(stroke(0.25, 0.0035), p).score == 4  # short, thick
        assert grade_trajectory(stroke(0.50, 0.002), p).score == 8   # mid, thin
        assert grade_trajectory(stroke(0.50, 0.0035), p).score == 6  # mid, thick
        assert grade_trajectory(stroke(0.95, 0.002), p).score == 9   # long, thin
        assert grade_trajectory(stroke(0.95, 0.0035), p).score == 7  # long, thick

    def test_success_rule_score_above_3(self):
        for s, d in QUALITY_DESCRIPTORS.items():
            assert QualScore(s, d).success == (s > 3)

    def test_descriptor_mismatch_rejected(self):
        with pytest.raises(ContractViolationError):
            QualScore(9, "discard")

    def test_envelope_interpolates_between_sparse_samples(self):
        p = flat_profile(t_nom=0.002)
        # Two cutting samples 40 mm apart: envelope must bridge the gap.
        trace = make_trace([0.002, 0.002], xs=[0.05, 0.09])
        env = removal_envelope(trace, p)
        sel = (p.xs >= 0.05) & (p.xs <= 0.09)
        assert np.all(env[sel] == pytest.approx(0.002, abs=1e-12))
        assert np.all(env[p.xs < 0.049] == 0.0)

    def test_end_to_end_simulated_stroke_grades_9(self):
        p = make_produce(5, "cucumber-like")
        states, forces = run_stroke(p, depth=p.t_nom, dt=0.002)
        # Downsample the 500 Hz rollout to the 10 Hz trace rate.
        trace = PeelTrace()
        for i in range(0, len(states), 50):
            s = states[i]
            trace.append(
                TraceStep(
                    t=i * 0.002,
                    pose=s.edge_pos,
                    cut_depth=s.cut_depth,
                    force=forces[i],
                    arc_progress=s.edge_pos.x,
                    in_contact=s.in_contact,
                )
            )
        score = grade_trajectory(trace, p.pristine_copy())
        assert score.score == 9


# ------------------------------------------------------------ observation


class TestRenderObservation:
    def test_empty_scene_zero_masks_and_depth(self):
        obs = render_observation(None, None, np.zeros(3), np.zeros(3), np.zeros(3))
        assert np.array_equal(obs.produce_mask, np.zeros((IMAGE_HEIGHT, IMAGE_WIDTH)))
        assert np.array_equal(obs.knife_mask, np.zeros((IMAGE_HEIGHT, IMAGE_WIDTH)))
        assert np.array_equal(obs.depth_image[:, :, 1], np.zeros((IMAGE_HEIGHT, IMAGE_WIDTH)))

    def test_pixel_under_blade_sets_knife_mask(self):
        p = flat_profile()
        knife = KnifeState(Pose2(0.1, 0.035, 1.2))
        obs = render_observation(p, knife, np.zeros(3), np.zeros(3), np.zeros(3))
        r, c = pixel_of(0.1, 0.035, p)
        assert obs.knife_mask[r, c] == 1.0

    def test_produce_mask_covers_dome_interior(self):
        p = make_produce(2, "apple-like")
        obs = render_observation(p, None, np.zeros(3), np.zeros(3), np.zeros(3))
        mid = p.length / 2
        r, c = pixel_of(mid, p.height_at(mid) / 2, p)
        assert obs.produce_mask[r, c] == 1.0
        r, c = pixel_of(mid, p.height_at(mid) + 0.05, p)
        assert obs.produce_mask[r, c] == 0.0

    def test_depth_zero_outside_masks_and_in_unit_range(self):
        p = make_produce(2, "apple-like")
        knife = KnifeState(Pose2(0.08, 0.09, 1.8))
        obs = render_observation(p, knife, np.zeros(3), np.zeros(3), np.zeros(3))
        union = np.maximum(obs.knife_mask, obs.produce_mask)
        assert np.all(obs.depth_image[:, :, 1][union == 0.0] == 0.0)
        assert np.all(obs.depth_image >= 0.0) and np.all(obs.depth_image <= 1.0)

    def test_render_determinism(self):
        p = make_produce(9, "potato-like")
        knife = KnifeState(Pose2(0.05, 0.04, 2.0))
        a = render_observation(p, knife, np.ones(3), np.array([0.1, -0.2, 0.0]), np.zeros(3))
        b = render_observation(p, knife, np.ones(3), np.array([0.1, -0.2, 0.0]), np.zeros(3))
        assert np.array_equal(a.depth_image, b.depth_image)
        assert np.array_equal(a.force, b.force)

    def test_force_normalization_and_clip_count(self):
        f, clipped = normalize_force(np.array([2.5, -10.0, 0.0]))
        assert f == pytest.approx([0.5, -1.0, 0.0])
        assert clipped == 1
        obs = render_observation(None, None, np.zeros(3), np.array([7.0, -9.0, 1.0]), np.zeros(3))
        assert obs.force_clipped == 2
        assert np.all(np.abs(obs.force) <= 1.0)

    def test_invalid_mask_rejected(self):
        obs = render_observation(None, None, np.zeros(3), np.zeros(3), np.zeros(3))
        from peelbench.observe import Observation

        bad = obs.knife_mask.copy()
        bad[0, 0] = 0.5
        with pytest.raises(ContractViolationError):
            Observation(
                depth_image=obs.depth_image,
                knife_mask=bad,
                produce_mask=obs.produce_mask,
                force=obs.force,
                joint_angles=obs.joint_angles,
                last_action=obs.last_action,
            )
