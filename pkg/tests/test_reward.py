"""Tests for reward terms, the stage machine, tracking metrics and reference files."""

from __future__ import annotations

import math

import numpy as np
import pytest

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.transforms import RigidTransform, quat_from_axis_angle
from dexmimic.reward.metrics import (
    containment_fraction,
    episode_metrics,
    metrics_from_errors,
    place_inside_success,
    relocate_success,
)
from dexmimic.reward.reference import (
    ReferenceFrame,
    ReferenceTrajectory,
    read_reference,
    write_reference,
)
from dexmimic.reward.stages import (
    RewardStageMachine,
    Stage,
    stage_transition,
    staged_reward,
)
from dexmimic.reward.terms import (
    RewardConfig,
    RewardVariant,
    angular_distance,
    manipulation_step_reward,
    object_term,
    pregrasp_step_reward,
)
from dexmimic.sim.shapes import BodyShape
from tests.conftest import line_reference

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


class TestPregraspReward:
    """The exponential fingertip kernel."""

    def test_zero_error(self):
        tips = np.ones((4, 3))
        assert pregrasp_step_reward(tips, tips) == 10.0

    @pytest.mark.parametrize(
        ("squared", "expected"), [(0.1, 3.678794411714423), (0.01, 9.048374180359595)],
    )
    def test_golden_values(self, squared, expected):
        tips = np.zeros((4, 3))
        ref = tips.copy()
        ref[0, 0] = math.sqrt(squared)
        assert pregrasp_step_reward(tips, ref) == pytest.approx(expected, abs=1e-9)

    def test_strictly_decreasing(self):
        tips = np.zeros((2, 3))
        values = []
        for d in (0.0, 0.01, 0.05, 0.2):
            ref = tips.copy()
            ref[1, 2] = d
            values.append(pregrasp_step_reward(tips, ref))
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            pregrasp_step_reward(np.zeros((4, 3)), np.zeros((3, 3)))


class TestAngularDistance:
    """Rotation distance modulo quaternion sign."""

    def test_identity(self):
        assert angular_distance(IDENTITY, IDENTITY) == 0.0

    def test_quarter_turn(self):
        rz = quat_from_axis_angle([0, 0, 1], math.pi / 2)
        assert angular_distance(rz, IDENTITY) == pytest.approx(math.pi / 2, abs=1e-12)

    def test_double_cover(self, rng):
        q = _random_unit(rng)
        assert angular_distance(q, -q) == pytest.approx(0.0, abs=1e-7)

    def test_non_unit_rejected(self):
        with pytest.raises(InvalidInputError):
            angular_distance(np.array([2.0, 0.0, 0.0, 0.0]), IDENTITY)

    def test_metric_axioms(self, rng):
        for _ in range(1000):
            a, b, c = (_random_unit(rng) for _ in range(3))
            ab, bc, ac = angular_distance(a, b), angular_distance(b, c), angular_distance(a, c)
            assert ab == pytest.approx(angular_distance(b, a), abs=1e-12)
            assert ac <= ab + bc + 1e-9
            assert 0.0 <= ab <= math.pi


class TestObjectTerm:
    """Object position and orientation tracking kernel."""

    def test_exact_match(self):
        pose = RigidTransform.from_translation([0.1, 0.2, 0.3])
        assert object_term(pose, pose) == 1.0

    def test_position_error(self):
        ref = RigidTransform()
        pose = RigidTransform.from_translation([0.1, 0.0, 0.0])
        assert object_term(pose, ref) == pytest.approx(math.exp(-0.5), abs=1e-9)

    def test_rotation_error(self):
        pose = RigidTransform(rotation=quat_from_axis_angle([0, 0, 1], math.pi / 2))
        assert object_term(pose, RigidTransform()) == pytest.approx(
            math.exp(-2.5 * math.pi), abs=1e-9,
        )

    def test_rigid_invariance(self, rng):
        g = RigidTransform(rotation=_random_unit(rng), translation=rng.normal(size=3))
        pose = RigidTransform(rotation=_random_unit(rng), translation=rng.normal(scale=0.1, size=3))
        ref = RigidTransform(rotation=_random_unit(rng), translation=rng.normal(scale=0.1, size=3))
        assert object_term(g @ pose, g @ ref) == pytest.approx(object_term(pose, ref), abs=1e-9)


class TestManipulationReward:
    """Weighted sum of hand, object, contact and lift terms."""

    def _frame(self) -> ReferenceFrame:
        return ReferenceFrame(
            q=np.zeros(3), tips=np.zeros((4, 3)), obj_pos=np.zeros(3), obj_quat=IDENTITY,
        )

    def test_perfect_tracking_full_contact_lifted(self):
        reward = manipulation_step_reward(
            np.zeros((4, 3)), RigidTransform(), 4, True, self._frame(),
        )
        assert reward == pytest.approx(18.0, abs=1e-9)

    def test_perfect_tracking_no_contact(self):
        reward = manipulation_step_reward(
            np.zeros((4, 3)), RigidTransform(), 0, False, self._frame(),
        )
        assert reward == pytest.approx(14.0, abs=1e-9)

    def test_large_errors_stay_positive(self):
        far = RigidTransform.from_translation([1.0, 0.0, 0.0])
        reward = manipulation_step_reward(np.ones((4, 3)), far, 0, False, self._frame())
        assert 0.0 < reward < 1e-6

    def test_no_manipulation_hand_variant(self):
        reward = manipulation_step_reward(
            np.zeros((4, 3)), RigidTransform(), 4, True, self._frame(),
            variant=RewardVariant.NO_MANIPULATION_HAND,
        )
        assert reward == pytest.approx(14.0, abs=1e-9)

    def test_upper_bound(self, rng):
        bound = 4.0 + 10.0 + 0.5 * 4 + 2.0
        for _ in range(50):
            tips = rng.normal(scale=0.02, size=(4, 3))
            pose = RigidTransform(rotation=_random_unit(rng), translation=rng.normal(size=3) * 0.02)
            reward = manipulation_step_reward(
                tips, pose, int(rng.integers(0, 5)), bool(rng.integers(0, 2)), self._frame(),
            )
            assert 0.0 < reward <= bound


class TestStageMachine:
    """Pre-grasp to manipulation switching."""

    def test_switches_when_pregrasp_reached(self):
        ref = line_reference()
        machine = RewardStageMachine(ref.pregrasp_len, ref.length, elapsed=ref.pregrasp_len)
        tips = ref.tips[ref.pregrasp_len] + np.array([0.01, 0.0, 0.0])
        assert stage_transition(tips, ref, machine).stage is Stage.MANIPULATION

    def test_stays_before_pregrasp_length(self):
        ref = line_reference()
        machine = RewardStageMachine(ref.pregrasp_len, ref.length, elapsed=ref.pregrasp_len - 1)
        tips = ref.tips[ref.pregrasp_len]
        assert stage_transition(tips, ref, machine).stage is Stage.PRE_GRASP

    def test_grace_window_forces_switch(self):
        ref = line_reference()
        far = ref.tips[0] + 1.0
        waiting = RewardStageMachine(ref.pregrasp_len, ref.length, elapsed=ref.pregrasp_len + 9)
        assert stage_transition(far, ref, waiting).stage is Stage.PRE_GRASP
        forced = RewardStageMachine(ref.pregrasp_len, ref.length, elapsed=ref.pregrasp_len + 10)
        assert stage_transition(far, ref, forced).stage is Stage.MANIPULATION

    def test_never_switches_back(self):
        ref = line_reference()
        machine = RewardStageMachine(
            ref.pregrasp_len, ref.length, stage=Stage.MANIPULATION, elapsed=0,
        )
        assert stage_transition(ref.tips[0] + 1.0, ref, machine).stage is Stage.MANIPULATION

    def test_cursor_freezes_at_reference_length(self):
        machine = RewardStageMachine(2, 4, elapsed=4).advance()
        assert machine.cursor == 4
        assert machine.elapsed == 5

    def test_grace_window_fires_past_reference_end(self):
        ref = line_reference(length=20, pregrasp=15)
        far = ref.tips[0] + 1.0
        machine = RewardStageMachine.for_reference(ref, RewardConfig())
        for _ in range(200):
            machine = stage_transition(far, ref, machine).advance()
            if machine.stage is Stage.MANIPULATION:
                break
        assert machine.stage is Stage.MANIPULATION
        assert machine.elapsed == ref.pregrasp_len + 10 + 1
        assert machine.cursor == ref.length

    def test_staged_reward_pregrasp(self):
        ref = line_reference()
        machine = RewardStageMachine.for_reference(ref, RewardConfig())
        reward, nxt = staged_reward(
            machine, ref, RewardConfig(),
            tips=ref.tips[0], palm_pos=np.zeros(3), object_pose=ref.object_pose(0),
            contacts=0, lifted=False,
        )
        assert reward == pytest.approx(10.0)
        assert nxt.cursor == 1

    def test_palm_reward_variant(self):
        ref = line_reference()
        config = RewardConfig(variant=RewardVariant.NO_PREGRASP_HAND)
        machine = RewardStageMachine.for_reference(ref, config)
        reward, _ = staged_reward(
            machine, ref, config,
            tips=ref.tips[0] + 1.0, palm_pos=ref.obj_pos[0], object_pose=ref.object_pose(0),
            contacts=0, lifted=False,
        )
        assert reward == pytest.approx(10.0)


class TestMetrics:
    """Tracking errors, success thresholds and containment."""

    def test_perfect_tracking(self):
        ref = line_reference()
        m = episode_metrics(ref.obj_pos, ref.tips, ref)
        assert (m.object_error, m.hand_error, m.object_tracked, m.hand_tracked) == (0, 0, 1, 1)

    def test_object_error_arithmetic(self):
        m = metrics_from_errors([0.005, 0.02, 0.008], [0.0, 0.0, 0.0])
        assert m.object_error == pytest.approx(0.011)
        assert m.object_tracked == pytest.approx(2 / 3)

    def test_hand_threshold(self):
        m = metrics_from_errors([0.0, 0.0], [0.06, 0.06])
        assert m.hand_tracked == 0.0

    def test_metrics_rigid_invariance(self, rng):
        ref = line_reference()
        achieved_obj = ref.obj_pos + rng.normal(scale=0.01, size=ref.obj_pos.shape)
        achieved_tips = ref.tips + rng.normal(scale=0.02, size=ref.tips.shape)
        g = RigidTransform(rotation=_random_unit(rng), translation=rng.normal(size=3))
        moved = ReferenceTrajectory(
            q=ref.q, tips=g.apply(ref.tips.reshape(-1, 3)).reshape(ref.tips.shape),
            obj_pos=g.apply(ref.obj_pos), obj_quat=ref.obj_quat, pregrasp_len=ref.pregrasp_len,
            target_pos=g.apply(ref.target_pos), target_quat=ref.target_quat, base_dof=None,
        )
        a = episode_metrics(achieved_obj, achieved_tips, ref)
        b = episode_metrics(
            g.apply(achieved_obj),
            g.apply(achieved_tips.reshape(-1, 3)).reshape(achieved_tips.shape),
            moved,
        )
        assert a.object_error == pytest.approx(b.object_error, abs=1e-9)
        assert a.hand_error == pytest.approx(b.hand_error, abs=1e-9)

    @pytest.mark.parametrize(
        ("distance", "expected"),
        [(0.02, (True, True)), (0.05, (True, False)), (0.15, (False, False))],
    )
    def test_relocate_success(self, distance, expected):
        assert relocate_success(np.array([distance, 0.0, 0.0]), np.zeros(3)) == expected

    def test_containment_fully_inside(self):
        obj = BodyShape("sphere", (0.02,))
        mug = BodyShape("box", (0.1, 0.1, 0.1), attachment="container")
        assert containment_fraction(obj, RigidTransform(), mug, RigidTransform()) == 1.0

    def test_containment_disjoint(self):
        obj = BodyShape("sphere", (0.02,))
        mug = BodyShape("box", (0.1, 0.1, 0.1), attachment="container")
        far = RigidTransform.from_translation([1.0, 0.0, 0.0])
        assert containment_fraction(obj, far, mug, RigidTransform()) == 0.0

    def test_containment_half_space(self):
        ball = BodyShape("sphere", (1.0,))
        below = BodyShape("box", (10.0, 10.0, 10.0), attachment="container")
        fraction = containment_fraction(
            ball, RigidTransform(), below, RigidTransform.from_translation([0.0, 0.0, -10.0]),
            samples=20000,
        )
        assert fraction == pytest.approx(0.5, abs=0.02)
        assert place_inside_success(fraction) == (fraction >= 0.5)

    def test_containment_counts_overlap_once(self):
        cube = BodyShape("box", (1.0, 1.0, 1.0))
        lower_half = BodyShape(
            "box", (1.0, 1.0, 0.5), offset=RigidTransform.from_translation([0.0, 0.0, -0.5]),
        )
        below = BodyShape("box", (10.0, 10.0, 10.0), attachment="container")
        fraction = containment_fraction(
            [cube, lower_half], RigidTransform(),
            below, RigidTransform.from_translation([0.0, 0.0, -10.0]),
            samples=20000,
        )
        assert fraction == pytest.approx(0.5, abs=0.02)

    def test_containment_is_seeded(self):
        ball = BodyShape("capsule", (0.02, 0.1))
        box = BodyShape("box", (0.05, 0.05, 0.05), attachment="container")
        pose = RigidTransform.from_translation([0.05, 0.0, 0.0])
        a = containment_fraction(ball, pose, box, RigidTransform(), seed=4)
        b = containment_fraction(ball, pose, box, RigidTransform(), seed=4)
        assert a == b


class TestReferenceFile:
    """JSON-lines reference round trip and validation."""

    def test_round_trip_bytes(self, box_reference, tmp_path):
        path = tmp_path / "ref.jsonl"
        write_reference(box_reference, path)
        again = tmp_path / "ref2.jsonl"
        write_reference(read_reference(path), again)
        assert again.read_bytes() == path.read_bytes()

    def test_pregrasp_bounds(self):
        with pytest.raises(InvalidInputError, match="T_p"):
            line_reference(length=5, pregrasp=5)

    def test_truncated_file(self, box_reference, tmp_path):
        path = tmp_path / "ref.jsonl"
        write_reference(box_reference, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]))
        with pytest.raises(InvalidInputError, match="0..T_r-1"):
            read_reference(path)
