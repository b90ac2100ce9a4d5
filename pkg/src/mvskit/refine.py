"""Gradient-descent depth refinement driving the losses end to end.

Each iteration mirrors the two-branch training step:

1. The *teacher* selects top-K sources per view, produces pseudo-depths
   (by default a forward-splat median of source depth observations) and
   refreshes the gallery. The teacher is frozen: no derivative state is
   allocated during its evaluation, which the gradient-buffer meter can
   verify. The ``freeze_teacher=False`` ablation makes the teacher also
   evaluate its own loss with gradients, the way an unfrozen branch would.
2. The cross-view check partitions the reference pseudo-depth into
   high/low-quality regions.
3. The *student* samples its sources by view score (or top-K under the
   ablation), evaluates the total loss with gradients and takes a descent
   step on the reference depth, clamped to the camera's depth range.

The teacher never sees the student's state, so pseudo-depths are bitwise
identical whether or not the student runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cross_view import CheckConfig, DepthGallery, quality_mask
from .errors import ContractError, RefinementDiverged
from .geometry import _cam_rays, _project_unchecked
from .instrument import GradMemoryMeter
from .losses import LossWeights, total_loss
from .maps import DepthMap, as_image_array
from .view_selection import ViewScoreMatrix, sample_by_score, select_top_k


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 200
    step_size: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    n_teacher: int = 5          # views in the teacher branch, reference included
    n_student: int = 4          # views in the student branch, reference included
    seed: int = 0
    gallery_cadence: int = 1    # refresh pseudo-depths every this many iterations
    check: CheckConfig = field(default_factory=CheckConfig)
    freeze_teacher: bool = True
    student_policy: str = "score"    # "score" (sampled) | "top_k" (ablation)
    use_region_weights: bool = True  # False: single global dc weight
    normalize_step: bool = True      # per-pixel unit-magnitude gradient steps

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if self.step_size <= 0:
            raise ContractError("step size must be positive")
        if self.student_policy not in ("score", "top_k"):
            raise ContractError(f"unknown student policy {self.student_policy!r}")


@dataclass(frozen=True)
class MemoryReport:
    teacher_grad_bytes: int
    student_grad_bytes: int
    peak_iteration_bytes: int


class WarpMedianTeacher:
    """Pseudo-depth from per-view depth observations via forward-splat median.

    Every valid pixel of each selected source is lifted to 3D and projected
    into the target view; the pseudo-depth at a target pixel is the median
    of the candidates that landed there (nearest pixel). Co-visible regions
    come out accurate while occluded or uncovered regions come out wrong or
    empty, which is what the quality check is there to detect.
    """

    def __init__(self, depths, cams):
        self.depths = list(depths)
        self.cams = list(cams)

    def __call__(self, view_id: int, source_ids) -> tuple[DepthMap, np.ndarray]:
        cam_t = self.cams[view_id]
        H, W = cam_t.image_size
        idx_parts, z_parts = [], []
        for s in source_ids:
            depth_s = self.depths[s]
            cam_s = self.cams[s]
            v = depth_s.valid
            if not v.any():
                continue
            rays = _cam_rays(cam_s)[v]
            pts = cam_s.center + depth_s.data[v][:, None] * (rays @ cam_s.R)
            pix, z = _project_unchecked(pts, cam_t)
            xi = np.rint(pix[:, 0]).astype(np.int64)
            yi = np.rint(pix[:, 1]).astype(np.int64)
            ok = (z > 0) & (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
            idx_parts.append(yi[ok] * W + xi[ok])
            z_parts.append(z[ok])
        data = np.zeros(H * W)
        valid = np.zeros(H * W, dtype=bool)
        if idx_parts:
            idx = np.concatenate(idx_parts)
            z = np.concatenate(z_parts)
            order = np.lexsort((z, idx))
            idx, z = idx[order], z[order]
            uniq, starts, counts = np.unique(idx, return_index=True, return_counts=True)
            lo = starts + (counts - 1) // 2
            hi = starts + counts // 2
            data[uniq] = 0.5 * (z[lo] + z[hi])
            valid[uniq] = True
        depth = DepthMap(data.reshape(H, W), valid.reshape(H, W))
        conf = depth.valid.astype(np.float64)
        return depth, conf


class NoisyGroundTruthTeacher:
    """Ground-truth depths with fixed multiplicative noise, for controlled runs."""

    def __init__(self, depths, noise_rel: float = 0.0, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.pseudo = []
        for d in depths:
            factor = 1.0 + noise_rel * rng.standard_normal(d.shape)
            self.pseudo.append(DepthMap(d.data * factor, d.valid))

    def __call__(self, view_id: int, source_ids) -> tuple[DepthMap, np.ndarray]:
        d = self.pseudo[view_id]
        return d, d.valid.astype(np.float64)


def check_config_for(n_views: int, base: CheckConfig = CheckConfig()) -> CheckConfig:
    """Clamp the check's source count (and tau4 if needed) to the rig size."""
    S = min(base.n_sources, n_views - 1)
    return CheckConfig(
        tau1=base.tau1, tau2=base.tau2, tau3=base.tau3,
        tau4=min(base.tau4, S), n_sources=S,
    )


def refine_depth(
    init: DepthMap,
    images,
    cams,
    ref: int,
    scores: ViewScoreMatrix,
    pseudo_provider=None,
    cfg: RefineConfig = RefineConfig(),
    meter: GradMemoryMeter | None = None,
):
    """Iteratively refine the reference depth map by descending the total loss.

    Returns the refined map and a per-iteration trace of loss components.
    Raises RefinementDiverged if the loss becomes non-finite.
    """
    n = len(images)
    if not (0 <= ref < n) or len(cams) != n:
        raise ContractError("reference index / camera list mismatch")
    cam_ref = cams[ref]
    if init.shape != cam_ref.image_size:
        raise ContractError("initial depth does not match the reference camera")
    if pseudo_provider is None:
        raise ContractError("a pseudo-depth provider is required")

    check = check_config_for(n, cfg.check)
    rng = np.random.default_rng(cfg.seed)
    gallery = DepthGallery()
    check_sources = select_top_k(scores, ref, check.n_sources)
    refresh_ids = [ref] + check_sources
    imgs = [as_image_array(im) for im in images]
    d_min, d_max = cam_ref.depth_range

    depth = init
    trace = []
    teacher_k = min(cfg.n_teacher - 1, n - 1)
    region = None
    for it in range(cfg.iterations):
        if it % cfg.gallery_cadence == 0:
            _run_teacher(
                refresh_ids, imgs, cams, scores, pseudo_provider, gallery,
                teacher_k, cfg, meter,
            )
            # The mask depends only on the gallery, so recompute it on refresh.
            region = (
                quality_mask(ref, gallery, cams, check_sources, check)
                if cfg.use_region_weights
                else None
            )

        if cfg.student_policy == "score":
            student_srcs = sample_by_score(scores, ref, min(cfg.n_student - 1, n - 1), rng)
        else:
            student_srcs = select_top_k(scores, ref, min(cfg.n_student - 1, n - 1))

        if meter is not None:
            with meter.section("student"):
                report = _student_loss(imgs, cams, depth, ref, student_srcs, gallery, region, cfg)
        else:
            report = _student_loss(imgs, cams, depth, ref, student_srcs, gallery, region, cfg)

        if not np.isfinite(report.total):
            raise RefinementDiverged(it)

        g = report.grad_depth
        if cfg.normalize_step:
            step = np.where(np.abs(g) > 0, cfg.step_size * np.sign(g), 0.0)
        else:
            step = cfg.step_size * g
        new = np.clip(depth.data - step, d_min, d_max)
        depth = DepthMap(np.where(depth.valid, new, depth.data), depth.valid)

        entry = {"total": report.total}
        entry.update(report.components)
        entry["mask_ratio"] = region.ratio if region is not None else float("nan")
        trace.append(entry)
        if meter is not None:
            meter.new_iteration()
    return depth, trace


def _run_teacher(refresh_ids, imgs, cams, scores, provider, gallery, k, cfg, meter):
    def produce():
        for v in refresh_ids:
            srcs = select_top_k(scores, v, k)
            pseudo, conf = provider(v, srcs)
            if not cfg.freeze_teacher:
                # Unfrozen ablation: the teacher evaluates its own loss with
                # gradient state, as a trainable weak branch would.
                total_loss(
                    imgs[v], [imgs[s] for s in srcs], pseudo, cams[v],
                    [cams[s] for s in srcs], pseudo=None, weights=cfg.weights,
                    with_grad=True,
                )
            gallery.update(v, pseudo, conf)

    if meter is not None:
        with meter.section("teacher"):
            produce()
    else:
        produce()


def _student_loss(imgs, cams, depth, ref, student_srcs, gallery, region, cfg):
    return total_loss(
        imgs[ref],
        [imgs[s] for s in student_srcs],
        depth,
        cams[ref],
        [cams[s] for s in student_srcs],
        pseudo=gallery.get(ref).depth,
        weights=cfg.weights,
        region_mask=region,
        with_grad=True,
    )


def memory_probe(
    init: DepthMap,
    images,
    cams,
    ref: int,
    scores: ViewScoreMatrix,
    pseudo_provider,
    cfg: RefineConfig,
):
    """Run a refinement under the gradient-buffer meter.

    Returns (refined, trace, MemoryReport). With the teacher frozen the
    teacher section must report exactly 0 bytes.
    """
    with GradMemoryMeter() as meter:
        refined, trace = refine_depth(
            init, images, cams, ref, scores, pseudo_provider, cfg, meter=meter
        )
    report = MemoryReport(
        teacher_grad_bytes=meter.bytes_for("teacher"),
        student_grad_bytes=meter.bytes_for("student"),
        peak_iteration_bytes=meter.peak_iteration_bytes,
    )
    return refined, trace, report
