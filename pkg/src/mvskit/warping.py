"""Cross-view warping of images through a reference depth map.

Per reference pixel ``p`` with depth ``d``, the source-view location is

    proj = K_src (R_rel (d K_ref^{-1} [p, 1]) + t_rel),   coords = proj_xy / proj_z

followed by differentiable bilinear sampling of the source image. A binary
validity mask marks pixels whose warp target is usable: reference depth
valid, lifted point in front of the source camera, and coordinates inside
[0, W-1] x [0, H-1]. Out-of-bounds samples return 0 and are masked rather
than clamped, so masked values can never leak into loss sums.

``warp_image(with_grad=True)`` also returns the exact chain-rule derivative
of each warped intensity w.r.t. the reference depth (projection derivative
is analytic; the sampling derivative uses the bilinear cell weights, with
the right-continuous cell at integer coordinates).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .geometry import Camera
from .maps import DepthMap, as_image_array
from . import instrument

# Tolerance on the in-bounds test so exact-boundary targets (e.g. self-warp
# onto pixel 0 or W-1) survive the roundoff of K @ K^{-1}.
_BOUNDS_EPS = 1e-9


@dataclass(frozen=True)
class WarpResult:
    """Source image resampled into the reference frame."""

    warped: np.ndarray        # (H, W, C), zero where mask is False
    mask: np.ndarray          # (H, W) bool
    src_coords: np.ndarray    # (H, W, 2) continuous source pixel coordinates
    dwarped_ddepth: np.ndarray | None = None   # (H, W, C)


def _warp_terms(depth_ref: DepthMap, cam_ref: Camera, cam_src: Camera):
    """Shared projection math: coords, proj_depth, mask and d(coords)/d(depth)."""
    H, W = cam_ref.image_size
    if depth_ref.shape != (H, W):
        raise ContractError(
            f"depth map shape {depth_ref.shape} does not match camera image size {(H, W)}"
        )
    from .geometry import relative_transform, _cam_rays

    rel = relative_transform(cam_ref, cam_src)
    R_rel, t_rel = rel[:3, :3], rel[:3, 3]
    rays = _cam_rays(cam_ref)                      # (H, W, 3), K_ref^{-1} h
    d = depth_ref.data

    dirs_src = rays @ R_rel.T                      # d * dirs_src + t_rel = x_src
    x_src = d[..., None] * dirs_src + t_rel
    proj_depth = x_src[..., 2]

    proj = x_src @ cam_src.K.T
    z = proj[..., 2]
    z_safe = np.where(np.abs(z) < 1e-12, 1.0, z)
    coords = proj[..., :2] / z_safe[..., None]

    Hs, Ws = cam_src.image_size
    in_bounds = (
        (coords[..., 0] >= -_BOUNDS_EPS)
        & (coords[..., 0] <= Ws - 1.0 + _BOUNDS_EPS)
        & (coords[..., 1] >= -_BOUNDS_EPS)
        & (coords[..., 1] <= Hs - 1.0 + _BOUNDS_EPS)
        & np.isfinite(coords).all(axis=-1)
    )
    mask = depth_ref.valid & (proj_depth > 0.0) & in_bounds

    # d proj / d depth is the constant per-pixel vector K_src (R_rel K_ref^{-1} h).
    dproj = dirs_src @ cam_src.K.T                 # (H, W, 3)
    dcoords = (dproj[..., :2] * z_safe[..., None] - proj[..., :2] * dproj[..., 2:3]) / (
        z_safe[..., None] ** 2
    )
    return coords, proj_depth, mask, dcoords


def warp_coordinates(depth_ref: DepthMap, cam_ref: Camera, cam_src: Camera):
    """Project every reference pixel into the source view via its depth.

    Returns
    -------
    coords : (H, W, 2) array
        Continuous source-image coordinates.
    proj_depth : (H, W) array
        Source-camera-frame depth of each lifted point.
    mask : (H, W) bool array
        True iff reference depth valid, proj_depth > 0, coords in bounds.
    """
    coords, proj_depth, mask, _ = _warp_terms(depth_ref, cam_ref, cam_src)
    return coords, proj_depth, mask


def _gather(img: np.ndarray, yi: np.ndarray, xi: np.ndarray) -> np.ndarray:
    H, W = img.shape[:2]
    yi = np.clip(yi, 0, H - 1)
    xi = np.clip(xi, 0, W - 1)
    return img[yi, xi]


def _bilinear_terms(img: np.ndarray, coords: np.ndarray):
    """Bilinear sample plus the sample's derivative w.r.t. x and y."""
    H, W = img.shape[:2]
    x = coords[..., 0]
    y = coords[..., 1]
    finite = np.isfinite(x) & np.isfinite(y)
    xs = np.where(finite, x, -1.0)
    ys = np.where(finite, y, -1.0)
    inb = (
        (xs >= -_BOUNDS_EPS) & (xs <= W - 1.0 + _BOUNDS_EPS)
        & (ys >= -_BOUNDS_EPS) & (ys <= H - 1.0 + _BOUNDS_EPS)
    )

    # Right-continuous cell: [floor(x), floor(x)+1], shifted left only at the
    # far edge so x = W-1 still reads a full cell with weight 1 on the edge.
    x0 = np.clip(np.floor(xs), 0, max(W - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(ys), 0, max(H - 2, 0)).astype(np.int64)
    fx = np.clip(xs - x0, 0.0, 1.0)[..., None]
    fy = np.clip(ys - y0, 0.0, 1.0)[..., None]

    p00 = _gather(img, y0, x0)
    p01 = _gather(img, y0, x0 + 1)
    p10 = _gather(img, y0 + 1, x0)
    p11 = _gather(img, y0 + 1, x0 + 1)

    top = p00 * (1.0 - fx) + p01 * fx
    bot = p10 * (1.0 - fx) + p11 * fx
    val = top * (1.0 - fy) + bot * fy

    dval_dx = (p01 - p00) * (1.0 - fy) + (p11 - p10) * fy
    dval_dy = bot - top

    keep = inb[..., None]
    return np.where(keep, val, 0.0), np.where(keep, dval_dx, 0.0), np.where(keep, dval_dy, 0.0)


def bilinear_sample(img, coords) -> np.ndarray:
    """Bilinearly interpolate ``img`` at continuous pixel coordinates.

    ``coords`` has shape (..., 2) ordered (x, y). Samples outside
    [0, W-1] x [0, H-1] return 0; interior integer coordinates reproduce the
    input exactly.
    """
    img = as_image_array(img)
    coords = np.asarray(coords, dtype=np.float64)
    val, _, _ = _bilinear_terms(img, coords)
    return val


def warp_image(
    src,
    depth_ref: DepthMap,
    cam_ref: Camera,
    cam_src: Camera,
    with_grad: bool = False,
) -> WarpResult:
    """Resample the source image into the reference frame via the depth map.

    With ``with_grad``, the result carries d(warped)/d(depth): the analytic
    projection derivative chained through the bilinear sampling weights.
    Warped intensities are zeroed wherever the mask is false.
    """
    img = as_image_array(src)
    Hs, Ws = cam_src.image_size
    if img.shape[:2] != (Hs, Ws):
        raise ContractError(
            f"source image shape {img.shape[:2]} does not match camera image size {(Hs, Ws)}"
        )
    coords, _, mask, dcoords = _warp_terms(depth_ref, cam_ref, cam_src)
    val, dval_dx, dval_dy = _bilinear_terms(img, coords)

    m = mask[..., None]
    warped = np.where(m, val, 0.0)
    grad = None
    if with_grad:
        grad = dval_dx * dcoords[..., 0:1] + dval_dy * dcoords[..., 1:2]
        grad = np.where(m, grad, 0.0)
        instrument.record_grad_buffer(grad.nbytes)
    return WarpResult(warped=warped, mask=mask, src_coords=coords, dwarped_ddepth=grad)
