"""Tests for rigid transforms, chain loading and forward kinematics."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.chain import (
    chain_from_dict,
    chain_to_dict,
    clamp_to_limits,
    desk_hand_description,
    fingertip_positions,
    forward_kinematics,
    link_jacobian,
    link_matrices,
    load_chain,
    mean_pose,
)
from dexmimic.kinematics.transforms import (
    RigidTransform,
    expmap_to_quat,
    look_at,
    quat_from_axis_angle,
    quat_to_expmap,
    quat_to_matrix,
    slerp,
)
from tests.conftest import planar_chain_dict


def _random_transform(rng: np.random.Generator) -> RigidTransform:
    q = rng.normal(size=4)
    return RigidTransform(rotation=q / np.linalg.norm(q), translation=rng.normal(size=3))


def _random_q(chain, rng: np.random.Generator) -> np.ndarray:
    lo = np.where(np.isfinite(chain.lower), chain.lower, -math.pi)
    hi = np.where(np.isfinite(chain.upper), chain.upper, math.pi)
    return rng.uniform(lo, hi)


# ---------------------------------------------------------------------------
# RigidTransform
# ---------------------------------------------------------------------------

class TestRigidTransform:
    """Composition, inverse and pose conversions."""

    def test_inverse_composes_to_identity(self, rng):
        for _ in range(20):
            g = _random_transform(rng)
            ident = g.inverse() @ g
            np.testing.assert_allclose(ident.as_matrix(), np.eye(4), atol=1e-9)

    def test_composition_is_associative(self, rng):
        a, b, c = (_random_transform(rng) for _ in range(3))
        left = ((a @ b) @ c).as_matrix()
        right = (a @ (b @ c)).as_matrix()
        np.testing.assert_allclose(left, right, atol=1e-9)

    def test_composed_rotation_stays_unit(self, rng):
        g = _random_transform(rng)
        for _ in range(100):
            g = g @ _random_transform(rng)
        assert abs(np.linalg.norm(g.rotation) - 1.0) < 1e-9

    def test_pose7_round_trip(self, rng):
        g = _random_transform(rng)
        back = RigidTransform.from_pose7(g.as_pose7())
        np.testing.assert_array_equal(back.as_pose7(), g.as_pose7())

    def test_apply_matches_matrix(self, rng):
        g = _random_transform(rng)
        pts = rng.normal(size=(10, 3))
        expected = pts @ g.as_matrix()[:3, :3].T + g.translation
        np.testing.assert_allclose(g.apply(pts), expected, atol=1e-12)

    def test_rotation_z_about_pivot_fixes_pivot(self):
        pivot = [0.3, -0.2, 0.1]
        g = RigidTransform.from_rotation_z(1.1, pivot=pivot)
        np.testing.assert_allclose(g.apply(np.array(pivot)), pivot, atol=1e-12)

    def test_is_valid_rejects_non_unit(self):
        assert not RigidTransform(rotation=[2.0, 0.0, 0.0, 0.0]).is_valid()


class TestQuaternionHelpers:
    """Exponential map and slerp."""

    def test_expmap_round_trip(self, rng):
        for _ in range(20):
            r = rng.uniform(-1.0, 1.0, size=3)
            np.testing.assert_allclose(quat_to_expmap(expmap_to_quat(r)), r, atol=1e-9)

    def test_slerp_midpoint(self):
        a = np.array([1.0, 0.0, 0.0, 0.0])
        b = quat_from_axis_angle([0, 0, 1], math.pi / 2)
        mid = slerp(a, b, 0.5)
        np.testing.assert_allclose(mid, quat_from_axis_angle([0, 0, 1], math.pi / 4), atol=1e-12)

    def test_slerp_takes_shorter_arc_for_antipodal_sign(self):
        a = np.array([1.0, 0.0, 0.0, 0.0])
        b = -quat_from_axis_angle([0, 0, 1], 0.2)
        mid = slerp(a, b, 0.5)
        np.testing.assert_allclose(
            quat_to_matrix(mid), quat_to_matrix(quat_from_axis_angle([0, 0, 1], 0.1)), atol=1e-9,
        )

    def test_look_at_points_z_axis_at_target(self):
        cam = look_at([0.0, -1.0, 1.0], [0.0, 0.0, 0.0])
        forward = quat_to_matrix(cam.rotation)[:, 2]
        np.testing.assert_allclose(forward, np.array([0.0, 1.0, -1.0]) / math.sqrt(2), atol=1e-12)


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------

class TestForwardKinematics:
    """Planar oracles, base equivariance and the Jacobian."""

    def test_single_joint_zero(self, one_link_chain):
        np.testing.assert_allclose(fingertip_positions(one_link_chain, [0.0])[0], [1, 0, 0])

    def test_single_joint_quarter_turn(self, one_link_chain):
        tip = fingertip_positions(one_link_chain, [math.pi / 2])[0]
        np.testing.assert_allclose(tip, [0, 1, 0], atol=1e-12)

    def test_two_link_planar(self, two_link_chain):
        tip = fingertip_positions(two_link_chain, [math.pi / 2, math.pi / 2])[0]
        np.testing.assert_allclose(tip, [-1, 1, 0], atol=1e-12)

    def test_dimension_mismatch_raises(self, two_link_chain):
        with pytest.raises(InvalidInputError):
            forward_kinematics(two_link_chain, [0.0])

    def test_fingertips_match_fk_link_poses(self, desk_hand, rng):
        q = _random_q(desk_hand, rng)
        poses = forward_kinematics(desk_hand, q)
        tips = fingertip_positions(desk_hand, q)
        for k, link in enumerate(desk_hand.fingertips):
            np.testing.assert_allclose(tips[k], poses[link].translation, atol=1e-12)

    def test_planar_matches_matrix_oracle(self, two_link_chain, rng):
        for _ in range(100):
            q = rng.uniform(-math.pi, math.pi, size=2)
            a, b = q
            expected = [math.cos(a) + math.cos(a + b), math.sin(a) + math.sin(a + b), 0.0]
            np.testing.assert_allclose(
                fingertip_positions(two_link_chain, q)[0], expected, atol=1e-9,
            )

    def test_base_equivariance(self, desk_hand, rng):
        g = _random_transform(rng)
        q = _random_q(desk_hand, rng)
        moved = desk_hand.with_base(g @ desk_hand.base)
        for a, b in zip(forward_kinematics(moved, q), forward_kinematics(desk_hand, q)):
            np.testing.assert_allclose(a.as_matrix(), (g @ b).as_matrix(), atol=1e-9)

    def test_tip_lipschitz_in_q(self, two_link_chain, rng):
        for _ in range(50):
            q = rng.uniform(-math.pi, math.pi, size=2)
            dq = rng.uniform(-1e-4, 1e-4, size=2)
            after = fingertip_positions(two_link_chain, q + dq)
            moved = np.linalg.norm(after - fingertip_positions(two_link_chain, q))
            assert moved <= 2.0 * np.linalg.norm(dq) + 1e-12

    def test_jacobian_matches_finite_differences(self, desk_hand, rng):
        h = 1e-6
        for _ in range(20):
            q = _random_q(desk_hand, rng)
            link = desk_hand.fingertips[rng.integers(desk_hand.num_fingertips)]
            jac = link_jacobian(desk_hand, q, link)
            numeric = np.empty_like(jac)
            for k in range(desk_hand.dof):
                dq = np.zeros(desk_hand.dof)
                dq[k] = h
                up = link_matrices(desk_hand, q + dq)[link, :3, 3]
                down = link_matrices(desk_hand, q - dq)[link, :3, 3]
                numeric[:, k] = (up - down) / (2 * h)
            np.testing.assert_allclose(jac, numeric, atol=1e-5)


class TestLimits:
    """Clamping and the mean pose."""

    def test_clamp_componentwise(self):
        chain = chain_from_dict(planar_chain_dict([1.0, 1.0, 1.0], limits=1.0))
        np.testing.assert_array_equal(clamp_to_limits(chain, [-3, 0.5, 2]), [-1, 0.5, 1])

    def test_clamp_is_idempotent(self, desk_hand, rng):
        q = rng.normal(scale=3.0, size=desk_hand.dof)
        once = clamp_to_limits(desk_hand, q)
        np.testing.assert_array_equal(clamp_to_limits(desk_hand, once), once)

    def test_mean_pose_midpoints(self):
        raw = planar_chain_dict([1.0, 1.0])
        raw["links"][0]["joint"]["limits"] = [[0.0, 2.0]]
        raw["links"][1]["joint"]["limits"] = [[-math.pi, math.pi]]
        np.testing.assert_allclose(mean_pose(chain_from_dict(raw)), [1.0, 0.0])

    def test_mean_pose_unbounded_rotation_is_zero(self, desk_hand):
        base = desk_hand.dof_offsets[desk_hand.free_base]
        np.testing.assert_array_equal(mean_pose(desk_hand)[base + 3:base + 6], 0.0)


class TestFreeBaseFrame:
    def test_follows_chain_base(self, desk_hand):
        base = RigidTransform.from_translation([0.2, 0.0, 0.1])
        frame = desk_hand.with_base(base).free_base_frame()
        expected = base @ desk_hand.free_base_frame()
        np.testing.assert_allclose(frame.as_matrix(), expected.as_matrix(), atol=1e-12)

    def test_chain_without_free_base(self, two_link_chain):
        with pytest.raises(InvalidInputError, match="no free base"):
            two_link_chain.free_base_frame()


class TestChainFiles:
    """Description loading and validation."""

    def test_round_trip(self, desk_hand, tmp_path):
        path = tmp_path / "hand.json"
        path.write_text(json.dumps(chain_to_dict(desk_hand)))
        loaded = load_chain(path)
        assert loaded.dof == desk_hand.dof == 18
        assert loaded.num_fingertips == 4
        assert chain_to_dict(loaded) == chain_to_dict(desk_hand)

    def test_rejects_misordered_parent(self):
        raw = planar_chain_dict([1.0, 1.0])
        raw["links"][0], raw["links"][1] = raw["links"][1], raw["links"][0]
        with pytest.raises(InvalidInputError, match="declared before"):
            chain_from_dict(raw)

    def test_rejects_missing_palm(self):
        raw = planar_chain_dict([1.0])
        raw["palm"] = "nowhere"
        with pytest.raises(InvalidInputError):
            chain_from_dict(raw)

    def test_rejects_no_fingertips(self):
        raw = planar_chain_dict([1.0])
        raw["fingertips"] = []
        with pytest.raises(InvalidInputError, match="fingertip"):
            chain_from_dict(raw)

    def test_rejects_inverted_limits(self):
        raw = planar_chain_dict([1.0])
        raw["links"][0]["joint"]["limits"] = [[1.0, -1.0]]
        with pytest.raises(InvalidInputError, match="lower <= upper"):
            chain_from_dict(raw)

    def test_desk_hand_has_shape_per_link(self):
        raw = desk_hand_description()
        attached = {s["attachment"] for s in raw["shapes"]}
        assert {link["name"] for link in raw["links"]} == attached
