"""Online cross-view checking: depth gallery, re-projection errors, quality mask.

The two-hop check for a reference pixel p1 with pseudo-depth D1: lift to
3D, project into a source view (p_i), look up the cached source
pseudo-depth there (nearest neighbor -- bilinear would mix depths across
discontinuities), re-lift and project back to the reference, giving p1_hat
and depth D1_hat. Errors are e_pixel = |p1 - p1_hat| and e_depth =
|D1_hat - D1| / D1. A pixel is high-quality when its confidence clears
tau1 and at least tau4 of the S source views pass both error thresholds;
hops that leave bounds, hit invalid depth, or land behind a camera count
as failing.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError
from .geometry import Camera, _project_unchecked
from .maps import DepthMap
from .warping import _warp_terms


@dataclass(frozen=True)
class CheckConfig:
    """Thresholds of the cross-view quality check."""

    tau1: float = 0.5     # confidence gate
    tau2: float = 0.5     # pixel re-projection error, pixels
    tau3: float = 0.01    # relative depth re-projection error
    tau4: int = 4         # minimum number of passing source views
    n_sources: int = 10   # number of source views S entering the sum

    def __post_init__(self):
        if self.tau2 <= 0 or self.tau3 <= 0:
            raise ContractError("tau2 and tau3 must be positive")
        if not (1 <= self.tau4 <= self.n_sources):
            raise ContractError("need 1 <= tau4 <= n_sources")


@dataclass(frozen=True)
class QualityMask:
    """High-quality partition of a pseudo-depth map, with pass counts."""

    mask: np.ndarray          # (H, W) bool
    pass_counts: np.ndarray   # (H, W) int

    @property
    def ratio(self) -> float:
        """avg(M): fraction of pixels marked high-quality."""
        return float(self.mask.mean())


class GalleryEntry(NamedTuple):
    depth: DepthMap
    confidence: np.ndarray
    version: int


class DepthGallery:
    """Keyed store of cached pseudo-depth + confidence maps, updated online.

    Entries are immutable tuples swapped in atomically under a lock, so a
    reader always sees a complete (depth, confidence, version) snapshot and
    the version strictly increases per view.
    """

    def __init__(self):
        self._entries: dict[int, GalleryEntry] = {}
        self._lock = threading.Lock()

    def update(self, view_id: int, depth: DepthMap, confidence) -> GalleryEntry:
        confidence = np.asarray(confidence, dtype=np.float64)
        if confidence.shape != depth.shape:
            raise ContractError("confidence dimensions must match the depth map")
        if confidence.min() < 0.0 or confidence.max() > 1.0:
            raise ContractError("confidence values must lie in [0, 1]")
        confidence = confidence.copy()
        confidence.setflags(write=False)
        with self._lock:
            old = self._entries.get(view_id)
            entry = GalleryEntry(depth, confidence, (old.version if old else 0) + 1)
            self._entries[view_id] = entry
        return entry

    def get(self, view_id: int) -> GalleryEntry:
        try:
            return self._entries[view_id]
        except KeyError:
            raise ContractError(f"gallery holds no entry for view {view_id}") from None

    def __contains__(self, view_id: int) -> bool:
        return view_id in self._entries

    def view_ids(self) -> list[int]:
        return sorted(self._entries)


def _two_hop(ref_depth: DepthMap, src_depth: DepthMap, cam_ref: Camera, cam_src: Camera):
    """Shared reproject-and-return math; also used by fusion.

    Returns (e_pixel, e_depth, defined, reproj_depth, hop1_coords) where
    reproj_depth is the reference-frame depth of the returned point.
    """
    coords, _, hop1_ok, _ = _warp_terms(ref_depth, cam_ref, cam_src)

    Hs, Ws = cam_src.image_size
    xi = np.clip(np.rint(coords[..., 0]).astype(np.int64), 0, Ws - 1)
    yi = np.clip(np.rint(coords[..., 1]).astype(np.int64), 0, Hs - 1)
    src_d = src_depth.data[yi, xi]
    src_ok = src_depth.valid[yi, xi]

    # Re-lift the continuous source location with the sampled depth.
    ones = np.ones(coords.shape[:-1] + (1,))
    h = np.concatenate([coords, ones], axis=-1)
    safe_d = np.where(src_ok, src_d, 1.0)
    x_cam = safe_d[..., None] * (h @ cam_src.K_inv().T)
    world = (x_cam - cam_src.t) @ cam_src.R

    p_back, z_back = _project_unchecked(world, cam_ref)
    defined = hop1_ok & src_ok & (z_back > 0)

    H, W = cam_ref.image_size
    gx, gy = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    e_pixel = np.hypot(p_back[..., 0] - gx, p_back[..., 1] - gy)
    d_ref = np.where(ref_depth.valid, ref_depth.data, 1.0)
    e_depth = np.abs(z_back - ref_depth.data) / d_ref

    inf = np.inf
    e_pixel = np.where(defined, e_pixel, inf)
    e_depth = np.where(defined, e_depth, inf)
    reproj_depth = np.where(defined, z_back, 0.0)
    return e_pixel, e_depth, defined, reproj_depth, coords


def reprojection_errors(
    ref_depth: DepthMap, src_depth: DepthMap, cam_ref: Camera, cam_src: Camera
):
    """Two-hop re-projection errors per reference pixel.

    Returns (e_pixel, e_depth, defined); undefined pixels carry +inf errors
    so threshold comparisons fail there rather than raising.
    """
    e_pixel, e_depth, defined, _, _ = _two_hop(ref_depth, src_depth, cam_ref, cam_src)
    return e_pixel, e_depth, defined


def quality_mask(
    ref_id: int,
    gallery: DepthGallery,
    cams,
    source_ids,
    cfg: CheckConfig = CheckConfig(),
) -> QualityMask:
    """High-quality mask of the reference pseudo-depth map.

    ``M = (confidence > tau1) * [sum_i (e_pixel < tau2)(e_depth < tau3) >= tau4]``
    with the sum over exactly ``cfg.n_sources`` source views; undefined
    pixel-pair checks count as failing.
    """
    source_ids = list(source_ids)
    if len(source_ids) != cfg.n_sources:
        raise ContractError(
            f"expected {cfg.n_sources} source views, got {len(source_ids)}"
        )
    ref_entry = gallery.get(ref_id)
    counts = np.zeros(ref_entry.depth.shape, dtype=np.int64)
    for sid in source_ids:
        src_entry = gallery.get(sid)
        e_px, e_d, defined = reprojection_errors(
            ref_entry.depth, src_entry.depth, cams[ref_id], cams[sid]
        )
        counts += (defined & (e_px < cfg.tau2) & (e_d < cfg.tau3)).astype(np.int64)
    mask = (ref_entry.confidence > cfg.tau1) & (counts >= cfg.tau4)
    return QualityMask(mask=mask, pass_counts=counts)
