"""Self-supervision losses: values against direct oracles, gradients against FD."""

import numpy as np
import pytest

from mvskit.losses import (
    LossWeights,
    depth_consistency_loss,
    image_gradient,
    photometric_loss,
    smoothness_loss,
    ssim_loss,
    total_loss,
)
from mvskit.maps import DepthMap, ImageGrid
from mvskit.warping import warp_image

from oracles import (
    depth_consistency_direct,
    fd_check,
    photometric_direct,
    pick_pixels,
    smooth_kink_free,
    smoothness_direct,
    ssim_direct,
    warp_cell_safe_mask,
)


def _views(scene, ref_idx=0, src_idx=(1, 2)):
    ref = scene.views[ref_idx]
    srcs = [scene.views[i] for i in src_idx]
    return (
        ref.image,
        [s.image for s in srcs],
        ref.depth,
        ref.camera,
        [s.camera for s in srcs],
    )


def zero_weights(**kw):
    base = dict(
        lambda_pc=0.0, lambda_dc=0.0, lambda_dc_high=0.0,
        lambda_dc_low=0.0, lambda_ssim=0.0, lambda_smooth=0.0,
    )
    base.update(kw)
    return LossWeights(**base)


class TestImageGradient:
    def test_constant_image_zero_gradient(self):
        gx, gy = image_gradient(np.full((6, 7, 3), 0.3))
        assert (gx == 0).all() and (gy == 0).all()

    def test_linear_ramp(self):
        W, H = 12, 5
        ramp = np.tile(np.arange(W) / (W - 1), (H, 1))[..., None]
        gx, gy = image_gradient(ramp)
        np.testing.assert_allclose(gx[:, : W - 1, 0], 1.0 / (W - 1), atol=1e-15)
        assert (gx[:, -1] == 0).all()
        assert (gy == 0).all()

    def test_random_image_bit_exact_forward_difference(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 1, size=(9, 8, 3))
        gx, gy = image_gradient(img)
        assert (gx[:, :-1] == img[:, 1:] - img[:, :-1]).all()
        assert (gy[:-1, :] == img[1:, :] - img[:-1, :]).all()


class TestPhotometric:
    def test_ground_truth_depth_gives_tiny_loss(self, plane_scene):
        ref, srcs, depth, cam, cams = _views(plane_scene, 0, (1, 2, 3, 4))
        rep = photometric_loss(ref, srcs, depth, cam, cams)
        assert 0 <= rep.total < 1e-3

    def test_empty_masks_flagged_zero(self, plane_scene):
        ref, srcs, depth, cam, cams = _views(plane_scene)
        invalid = DepthMap(np.zeros(depth.shape), np.zeros(depth.shape, dtype=bool))
        rep = photometric_loss(ref, srcs, invalid, cam, cams)
        assert rep.total == 0.0
        assert len(rep.flags) == len(srcs)
        assert all("empty_mask" in f for f in rep.flags)

    def test_value_matches_direct_oracle(self, arc_scene):
        ref, srcs, depth, cam, cams = _views(arc_scene, 2, (0, 4, 6))
        rep = photometric_loss(ref, srcs, depth, cam, cams)
        warps = [warp_image(s, depth, cam, c) for s, c in zip(srcs, cams)]
        want = photometric_direct(
            ImageGrid.as_grid(ref).data,
            [w.warped for w in warps],
            [w.mask for w in warps],
        )
        assert rep.total == pytest.approx(want, rel=1e-12)

    def test_gradient_matches_fd(self, arc_scene):
        ref, srcs, depth0, cam, cams = _views(arc_scene, 1, (3, 5))
        rng = np.random.default_rng(17)
        d = depth0.data * (1 + 0.02 * rng.standard_normal(depth0.shape))
        depth = DepthMap(d, depth0.valid)
        rep = photometric_loss(ref, srcs, depth, cam, cams, with_grad=True)

        def f(dd):
            return photometric_loss(ref, srcs, DepthMap(dd, depth0.valid), cam, cams).total

        safe = warp_cell_safe_mask(depth, cam, cams)
        pixels = pick_pixels(rng, safe, 80)
        assert fd_check(f, rep.grad_depth, d, pixels) < 1e-3


class TestSSIM:
    def test_identical_images_score_zero(self, plane_scene):
        img = plane_scene.views[0].image
        mask = np.ones(img.shape[:2], dtype=bool)
        res = ssim_loss(img, img, mask)
        assert res.value == pytest.approx(0.0, abs=1e-12)

    def test_inverted_textured_patch_scores_high(self):
        rng = np.random.default_rng(4)
        a = 0.5 + 0.25 * np.sin(np.linspace(0, 20, 16 * 16)).reshape(16, 16, 1)
        a = a + 0.05 * rng.standard_normal(a.shape)
        a = np.clip(a, 0, 1)
        res = ssim_loss(a, 1.0 - a, np.ones((16, 16), dtype=bool))
        assert res.value > 0.4

    def test_value_matches_scalar_oracle(self, arc_scene):
        ref = arc_scene.views[2]
        src = arc_scene.views[4]
        warp = warp_image(src.image, ref.depth, ref.camera, src.camera)
        got = ssim_loss(ref.image, warp.warped, warp.mask).value
        want = ssim_direct(ref.image.data, warp.warped, warp.mask)
        assert got == pytest.approx(want, rel=1e-10)

    def test_no_valid_window_flagged(self):
        img = np.full((8, 8, 1), 0.5)
        res = ssim_loss(img, img, np.zeros((8, 8), dtype=bool))
        assert res.value == 0.0
        assert any("no_valid_window" in f for f in res.flags)

    def test_gradient_wrt_warped_matches_fd(self):
        rng = np.random.default_rng(8)
        ref = rng.uniform(0.2, 0.8, size=(12, 14, 3))
        warped = np.clip(ref + 0.1 * rng.standard_normal(ref.shape), 0, 1)
        mask = np.ones((12, 14), dtype=bool)
        res = ssim_loss(ref, warped, mask, with_grad=True)
        worst = 0.0
        for _ in range(60):
            y, x, c = rng.integers(0, 12), rng.integers(0, 14), rng.integers(0, 3)
            h = 1e-6
            up, dn = warped.copy(), warped.copy()
            up[y, x, c] += h
            dn[y, x, c] -= h
            fd = (ssim_loss(ref, up, mask).value - ssim_loss(ref, dn, mask).value) / (2 * h)
            rel = abs(res.grad_warped[y, x, c] - fd) / max(abs(fd), 1e-9)
            worst = max(worst, rel)
        assert worst < 1e-3


class TestSmoothness:
    def test_constant_depth_is_zero(self, plane_scene):
        v = plane_scene.views[0]
        rep = smoothness_loss(v.depth, v.image)
        assert rep.total == pytest.approx(0.0, abs=1e-15)

    def test_step_on_image_edge_scores_lower(self):
        H, W = 16, 16
        d = np.full((H, W), 2.0)
        d[:, W // 2 :] = 3.0
        edge_img = np.full((H, W, 1), 0.2)
        edge_img[:, W // 2 :] = 0.8  # image edge aligned with the depth step
        flat_img = np.full((H, W, 1), 0.5)
        dm = DepthMap.from_array(d)
        on_edge = smoothness_loss(dm, edge_img).total
        on_flat = smoothness_loss(dm, flat_img).total
        assert on_edge < on_flat

    def test_value_matches_direct_oracle(self, arc_scene):
        v = arc_scene.views[3]
        rng = np.random.default_rng(5)
        d = np.where(v.depth.valid, v.depth.data * (1 + 0.05 * rng.standard_normal(v.depth.shape)), 0.0)
        dm = DepthMap(d, v.depth.valid)
        got = smoothness_loss(dm, v.image).total
        want = smoothness_direct(dm.data, dm.valid, v.image.data)
        assert got == pytest.approx(want, rel=1e-12)

    def test_all_invalid_flagged_zero(self):
        dm = DepthMap(np.zeros((8, 8)), np.zeros((8, 8), dtype=bool))
        rep = smoothness_loss(dm, np.full((8, 8, 1), 0.5))
        assert rep.total == 0.0
        assert "smoothness:all_invalid" in rep.flags

    def test_gradient_matches_fd_away_from_kinks(self, plane_scene):
        v = plane_scene.views[0]
        rng = np.random.default_rng(6)
        d = v.depth.data * (1 + 0.04 * rng.standard_normal(v.depth.shape))
        dm = DepthMap(d, v.depth.valid)
        rep = smoothness_loss(dm, v.image, with_grad=True)

        def f(dd):
            return smoothness_loss(DepthMap(dd, v.depth.valid), v.image).total

        H, W = d.shape
        pixels = []
        while len(pixels) < 60:
            y, x = rng.integers(0, H), rng.integers(0, W)
            if smooth_kink_free(d, dm.valid, y, x, 1e-3 * d[y, x]):
                pixels.append((y, x))
        assert fd_check(f, rep.grad_depth, d, pixels) < 1e-3


class TestDepthConsistency:
    def test_student_equals_pseudo_is_zero(self, plane_scene):
        d = plane_scene.views[0].depth
        for w in (LossWeights(), zero_weights(lambda_dc=3.0)):
            rep = depth_consistency_loss(d, d, weights=w)
            assert rep.total == 0.0

    def test_hand_built_4x4_vs_scalar_loop(self):
        student = np.array(
            [[1.0, 2.0, 3.0, 4.0],
             [2.0, 2.5, 3.5, 4.5],
             [1.5, 2.2, 3.2, 4.2],
             [1.1, 2.1, 3.1, 4.1]]
        )
        pseudo = student + np.array(
            [[0.1, -0.2, 0.0, 0.3],
             [0.0, 0.05, -0.05, 0.2],
             [0.4, 0.0, 0.1, -0.1],
             [0.0, 0.0, 0.2, 0.0]]
        )
        valid = np.ones((4, 4), dtype=bool)
        valid[3, 0] = False
        sm, pm = DepthMap(student, valid), DepthMap.from_array(pseudo)
        w = zero_weights(lambda_dc=1.0)
        rep = depth_consistency_loss(sm, pm, weights=w)
        want = depth_consistency_direct(student, pseudo, valid & pm.valid)
        assert rep.total == pytest.approx(want, rel=1e-14)

    def test_partition_recombination_identity(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            student = rng.uniform(1, 5, size=(12, 13))
            pseudo = student + rng.normal(0, 0.3, size=(12, 13))
            pseudo = np.clip(pseudo, 0.1, None)
            region = rng.uniform(size=(12, 13)) < rng.uniform(0.2, 0.8)
            sm, pm = DepthMap.from_array(student), DepthMap.from_array(pseudo)
            vd = sm.valid & pm.valid
            n_h = int((vd & region).sum())
            n_l = int((vd & ~region).sum())
            if n_h == 0 or n_l == 0:
                continue
            lam = 0.37
            w_region = zero_weights(lambda_dc_high=lam, lambda_dc_low=lam)
            w_single = zero_weights(lambda_dc=lam)
            rep_r = depth_consistency_loss(sm, pm, region_mask=region, weights=w_region)
            rep_s = depth_consistency_loss(sm, pm, weights=w_single)
            v_h = rep_r.components["depth_consistency_high"]
            v_l = rep_r.components["depth_consistency_low"]
            recombined = (n_h * v_h + n_l * v_l) / (n_h + n_l)
            assert abs(recombined - rep_s.components["depth_consistency"]) < 1e-12

    def test_empty_partition_flagged(self):
        d = DepthMap.from_array(np.full((4, 4), 2.0))
        rep = depth_consistency_loss(d, d, region_mask=np.ones((4, 4), dtype=bool))
        assert "depth_consistency:low:empty" in rep.flags

    def test_gradient_is_exact_for_quadratic(self):
        rng = np.random.default_rng(11)
        student = rng.uniform(1, 5, size=(8, 9))
        pseudo = np.clip(student + rng.normal(0, 0.2, size=(8, 9)), 0.5, None)
        sm, pm = DepthMap.from_array(student), DepthMap.from_array(pseudo)
        w = zero_weights(lambda_dc=0.7)
        rep = depth_consistency_loss(sm, pm, weights=w, with_grad=True)

        def f(dd):
            return depth_consistency_loss(DepthMap.from_array(dd), pm, weights=w).total

        pixels = [(int(y), int(x)) for y, x in rng.integers(0, 8, size=(25, 2))]
        assert fd_check(f, rep.grad_depth, student, pixels, h_rel=1e-4) < 1e-6


class TestTotalLoss:
    def test_all_zero_weights(self, plane_scene):
        ref, srcs, depth, cam, cams = _views(plane_scene)
        rep = total_loss(ref, srcs, depth, cam, cams, pseudo=depth,
                         weights=zero_weights(), with_grad=True)
        assert rep.total == 0.0
        assert (rep.grad_depth == 0).all()

    def test_total_is_weighted_sum_of_components(self, arc_scene):
        ref, srcs, depth, cam, cams = _views(arc_scene, 3, (1, 5))
        rng = np.random.default_rng(12)
        pseudo = DepthMap(depth.data * (1 + 0.02 * rng.standard_normal(depth.shape)), depth.valid)
        rep = total_loss(ref, srcs, depth, cam, cams, pseudo=pseudo)
        want = sum(rep.weights[k] * rep.components[k] for k in rep.components)
        assert rep.total == pytest.approx(want, abs=1e-12)
        # default weighting reproduces the four-term baseline objective
        assert rep.weights["photometric"] == 0.8
        assert rep.weights["depth_consistency"] == 0.1
        assert rep.weights["ssim"] == 0.2
        assert rep.weights["smoothness"] == 0.0067

    def test_region_mode_uses_partition_weights(self, arc_scene):
        ref, srcs, depth, cam, cams = _views(arc_scene, 3, (1, 5))
        region = np.zeros(depth.shape, dtype=bool)
        region[:, :32] = True
        rep = total_loss(ref, srcs, depth, cam, cams, pseudo=depth, region_mask=region)
        assert rep.weights["depth_consistency_high"] == 0.5
        assert rep.weights["depth_consistency_low"] == 0.1
        assert "depth_consistency" not in rep.components

    def test_linearity_in_weights(self, plane_scene):
        ref, srcs, depth, cam, cams = _views(plane_scene, 1, (0, 3))
        rng = np.random.default_rng(13)
        d = DepthMap(depth.data * (1 + 0.03 * rng.standard_normal(depth.shape)), depth.valid)
        w = LossWeights()
        r1 = total_loss(ref, srcs, d, cam, cams, pseudo=depth, weights=w)
        r2 = total_loss(ref, srcs, d, cam, cams, pseudo=depth, weights=w.scaled(2.0))
        assert r2.total == pytest.approx(2.0 * r1.total, rel=1e-12)

    def test_perturbing_masked_pixel_changes_nothing(self, arc_scene):
        # Sphere silhouette pixels are invalid in the reference depth map.
        ref, srcs, depth, cam, cams = _views(arc_scene, 0, (2, 4))
        invalid_ys, invalid_xs = np.nonzero(~depth.valid)
        assert len(invalid_ys) > 0
        base = total_loss(ref, srcs, depth, cam, cams, pseudo=depth)
        d2 = depth.data.copy()
        d2[invalid_ys[0], invalid_xs[0]] = 7.77
        rep2 = total_loss(ref, srcs, DepthMap(d2, depth.valid), cam, cams, pseudo=depth)
        assert rep2.total == base.total

    def test_components_nonnegative_and_grad_zero_on_invalid(self, arc_scene):
        ref, srcs, depth, cam, cams = _views(arc_scene, 2, (0, 6))
        rng = np.random.default_rng(14)
        d = DepthMap(
            np.where(depth.valid, depth.data * (1 + 0.05 * rng.standard_normal(depth.shape)), 0.0),
            depth.valid,
        )
        rep = total_loss(ref, srcs, d, cam, cams, pseudo=depth, with_grad=True)
        assert all(v >= 0 for v in rep.components.values())
        assert np.isfinite(rep.grad_depth[d.valid]).all()
        assert (rep.grad_depth[~d.valid] == 0).all()

    def test_gradient_matches_fd(self, arc_scene):
        ref, srcs, depth0, cam, cams = _views(arc_scene, 1, (3, 5))
        rng = np.random.default_rng(15)
        d = depth0.data * (1 + 0.02 * rng.standard_normal(depth0.shape))
        depth = DepthMap(d, depth0.valid)
        pseudo = depth0
        rep = total_loss(ref, srcs, depth, cam, cams, pseudo=pseudo, with_grad=True)

        def f(dd):
            return total_loss(ref, srcs, DepthMap(dd, depth0.valid), cam, cams, pseudo=pseudo).total

        safe = warp_cell_safe_mask(depth, cam, cams)
        pixels = [
            p for p in pick_pixels(rng, safe, 120)
            if smooth_kink_free(d, depth.valid, *p, 1e-3 * d[p])
        ][:60]
        assert len(pixels) >= 30
        assert fd_check(f, rep.grad_depth, d, pixels) < 1e-3
