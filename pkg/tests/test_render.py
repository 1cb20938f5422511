"""Homography warping and novel-view rendering against per-pixel oracles."""

import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from mpijpeg.errors import GeometryError
from mpijpeg.mpi import (
    CameraModel,
    MpiStack,
    PoseSamplerConfig,
    RelativePose,
    composite,
    default_depths,
)
from mpijpeg.render import (
    plane_homography,
    render_novel_view,
    sample_render_pose,
    warp_plane,
)


def warp_oracle(plane: np.ndarray, depth: float, pose: RelativePose,
                cam: CameraModel) -> np.ndarray:
    """Independent scalar warp: project each target pixel, bilinear by hand."""
    h, w, c = plane.shape
    k = cam.matrix
    fwd = pose.rotation + np.outer(pose.translation, [0.0, 0.0, 1.0]) / depth
    hmat = k @ np.linalg.inv(fwd) @ np.linalg.inv(k)
    out = np.zeros((h, w, c))
    for y in range(h):
        for x in range(w):
            sx, sy, sw = hmat @ np.array([x, y, 1.0])
            if sw <= 1e-9:
                continue
            sx, sy = sx / sw, sy / sw
            x0, y0 = int(np.floor(sx)), int(np.floor(sy))
            fx, fy = sx - x0, sy - y0
            acc = np.zeros(c)
            for dy, wy in ((0, 1 - fy), (1, fy)):
                for dx, wx in ((0, 1 - fx), (1, fx)):
                    xi, yi = x0 + dx, y0 + dy
                    if 0 <= xi < w and 0 <= yi < h:
                        acc += wy * wx * plane[yi, xi]
            out[y, x] = acc
    return out


def render_oracle(stack: MpiStack, pose: RelativePose, cam: CameraModel) -> np.ndarray:
    planes = stack.numpy().astype(np.float64)
    out = np.zeros((stack.height, stack.width, 3))
    for i in range(stack.num_planes):
        rgba = warp_oracle(planes[i], float(stack.depths[i]), pose, cam)
        a = rgba[..., 3:]
        out = rgba[..., :3] * a + out * (1 - a)
    return out


def small_pose(rng) -> RelativePose:
    rotation = Rotation.from_euler("XYZ", rng.uniform(-5, 5, 3), degrees=True).as_matrix()
    return RelativePose(rotation, rng.uniform(-0.4, 0.4, 3))


class TestWarpPlane:
    def test_identity_is_bit_exact(self):
        plane = torch.rand(9, 13, 4, dtype=torch.float64)
        out = warp_plane(plane, 5.0, RelativePose.identity(), CameraModel.centered(13, 9))
        assert torch.equal(out, plane)

    def test_pure_x_translation_shifts_content(self):
        # a plane at depth d shifts by fx*tx/d pixels
        cam = CameraModel.centered(16, 16, focal=8.0)
        depth, tx = 4.0, 1.0  # shift = 8*1/4 = 2 px
        plane = torch.zeros(16, 16, 4, dtype=torch.float64)
        plane[8, 5] = torch.tensor([1.0, 0.5, 0.25, 1.0], dtype=torch.float64)
        pose = RelativePose(np.eye(3), np.array([tx, 0.0, 0.0]))
        out = warp_plane(plane, depth, pose, cam)
        assert torch.allclose(out[8, 7], plane[8, 5], atol=1e-9)
        assert out[8, 5].abs().max() < 1e-9

    def test_translation_matches_oracle(self):
        rng = np.random.default_rng(0)
        plane = rng.random((16, 16, 4))
        cam = CameraModel.centered(16, 16)
        pose = RelativePose(np.eye(3), np.array([0.3, -0.2, 0.15]))
        got = warp_plane(torch.tensor(plane), 3.0, pose, cam).numpy()
        expect = warp_oracle(plane, 3.0, pose, cam)
        assert np.abs(got - expect).max() < 1e-9

    def test_rotation_only_matches_oracle(self):
        rng = np.random.default_rng(1)
        plane = rng.random((16, 16, 4))
        cam = CameraModel.centered(16, 16)
        rotation = Rotation.from_euler("XYZ", [4.0, -6.0, 2.0], degrees=True).as_matrix()
        pose = RelativePose(rotation, np.zeros(3))
        got = warp_plane(torch.tensor(plane), 7.0, pose, cam).numpy()
        expect = warp_oracle(plane, 7.0, pose, cam)
        assert np.abs(got - expect).max() < 1e-9

    def test_out_of_frustum_is_transparent(self):
        plane = torch.ones(8, 8, 4, dtype=torch.float64)
        cam = CameraModel.centered(8, 8, focal=8.0)
        pose = RelativePose(np.eye(3), np.array([20.0, 0.0, 0.0]))  # shift 20*8/2=80 px
        out = warp_plane(plane, 2.0, pose, cam)
        assert torch.equal(out, torch.zeros_like(plane))

    def test_warp_is_linear_in_the_image(self):
        rng = np.random.default_rng(2)
        x = torch.tensor(rng.random((12, 12, 4)))
        y = torch.tensor(rng.random((12, 12, 4)))
        cam = CameraModel.centered(12, 12)
        pose = small_pose(rng)
        a, b = 0.6, 0.4
        lhs = warp_plane(a * x + b * y, 4.0, pose, cam)
        rhs = a * warp_plane(x, 4.0, pose, cam) + b * warp_plane(y, 4.0, pose, cam)
        assert (lhs - rhs).abs().max() < 1e-6

    def test_degenerate_geometry_raises(self):
        cam = CameraModel.centered(8, 8)
        # translation straight back by the plane depth collapses the plane
        pose = RelativePose(np.eye(3), np.array([0.0, 0.0, -2.0]))
        with pytest.raises(GeometryError):
            plane_homography(2.0, pose, cam)

    def test_negative_depth_raises(self):
        with pytest.raises(GeometryError):
            plane_homography(-1.0, RelativePose.identity(), CameraModel.centered(8, 8))


class TestRenderNovelView:
    def test_identity_pose_equals_composite(self):
        rng = np.random.default_rng(3)
        stack = MpiStack(torch.tensor(rng.random((32, 8, 8, 4))), default_depths(32))
        out = render_novel_view(stack, RelativePose.identity(), CameraModel.centered(8, 8))
        assert torch.equal(out, composite(stack))

    def test_matches_oracle_on_random_stacks(self):
        rng = np.random.default_rng(4)
        for trial in range(20):
            stack = MpiStack(
                torch.tensor(rng.random((4, 16, 16, 4))), default_depths(4)
            )
            cam = CameraModel.centered(16, 16)
            pose = small_pose(rng)
            got = render_novel_view(stack, pose, cam).numpy()
            expect = render_oracle(stack, pose, cam)
            assert np.abs(got - expect).max() < 1e-5, f"trial {trial}"

    def test_full_stack_shape_and_range(self):
        rng = np.random.default_rng(5)
        stack = MpiStack(torch.tensor(rng.random((32, 12, 20, 4))), default_depths(32))
        out = render_novel_view(stack, small_pose(rng), CameraModel.centered(20, 12))
        assert out.shape == (12, 20, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_gradient_flows_to_planes(self):
        rng = np.random.default_rng(6)
        planes = torch.tensor(rng.random((4, 8, 8, 4)), requires_grad=True)
        stack_out = render_novel_view(
            MpiStack(planes, default_depths(4)),
            small_pose(rng),
            CameraModel.centered(8, 8),
        )
        stack_out.sum().backward()
        assert planes.grad is not None
        assert planes.grad.abs().sum() > 0


class TestPoseSampler:
    def test_degenerate_ranges_give_identity(self):
        pose = sample_render_pose(PoseSamplerConfig(0.0, 0.0), np.random.default_rng(0))
        assert pose.is_identity

    def test_samples_respect_ranges(self):
        cfg = PoseSamplerConfig()
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            pose = sample_render_pose(cfg, rng)
            assert np.abs(pose.translation).max() <= 0.5
            angles = Rotation.from_matrix(pose.rotation).as_euler("XYZ", degrees=True)
            assert np.abs(angles).max() <= 8.0 + 1e-9

    def test_same_seed_same_pose(self):
        cfg = PoseSamplerConfig()
        p1 = sample_render_pose(cfg, np.random.default_rng(99))
        p2 = sample_render_pose(cfg, np.random.default_rng(99))
        assert np.array_equal(p1.rotation, p2.rotation)
        assert np.array_equal(p1.translation, p2.translation)

    def test_rotations_are_valid(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            pose = sample_render_pose(PoseSamplerConfig(), rng)
            assert np.abs(pose.rotation.T @ pose.rotation - np.eye(3)).max() < 1e-9


class TestRelativePose:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(GeometryError):
            RelativePose(np.eye(3) * 1.1, np.zeros(3))

    def test_rejects_reflection(self):
        m = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(GeometryError):
            RelativePose(m, np.zeros(3))
