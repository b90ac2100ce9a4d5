"""Self-supervision objectives with analytic gradients w.r.t. the depth map.

Terms
-----
photometric
    Per source view: masked squared intensity error plus masked squared
    error of forward-difference image gradients, each normalized by the
    view's valid-pixel count, then summed (not averaged) over views.
ssim
    Mean over valid 3x3 windows of (1 - SSIM)/2, C1 = 0.01^2, C2 = 0.03^2,
    summed over source views. Gradient is returned w.r.t. the warped image
    and chained through the warp derivative by :func:`total_loss`.
smoothness
    Edge-aware first-order smoothness of the mean-normalized depth:
    mean(|dx d^| exp(-|dx I|)) + mean(|dy d^| exp(-|dy I|)), with
    d^ = depth / mean(valid depth). The gradient flows through the
    normalizer as well (full quotient rule).
depth consistency
    Mean squared difference to a frozen pseudo-depth, either with one
    global weight or split into high/low-quality regions that each
    normalize by their own pixel count. No gradient ever flows into the
    pseudo-depth.

Squared error is summed over channels per pixel before any normalization.
All reductions are plain sequential numpy sums, so results are bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .geometry import Camera
from .maps import DepthMap, as_image_array
from .warping import WarpResult, warp_image
from . import instrument

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    """Term weights; the defaults are the empirically set values."""

    lambda_pc: float = 0.8
    lambda_dc: float = 0.1
    lambda_dc_high: float = 0.5
    lambda_dc_low: float = 0.1
    lambda_ssim: float = 0.2
    lambda_smooth: float = 0.0067

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not (np.isfinite(v) and v >= 0):
                raise ContractError(f"loss weight {name} must be finite and >= 0")

    def scaled(self, c: float) -> "LossWeights":
        return LossWeights(*(c * v for v in self.__dict__.values()))


@dataclass(frozen=True)
class LossReport:
    """A loss value with its per-term breakdown.

    ``total == sum(weights[k] * components[k])`` to within roundoff;
    ``grad_depth`` is finite on valid pixels and exactly 0 on invalid ones.
    """

    total: float
    components: dict[str, float]
    weights: dict[str, float]
    grad_depth: np.ndarray | None = None
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class SSIMLoss:
    value: float
    grad_warped: np.ndarray | None = None
    flags: tuple[str, ...] = ()


def image_gradient(img):
    """Forward-difference spatial gradients, last column/row zero-padded.

    Returns (d/dx, d/dy) as (H, W, C) arrays: ``gx[y, x] = I[y, x+1] - I[y, x]``.
    """
    a = as_image_array(img)
    if a.shape[0] < 2 or a.shape[1] < 2:
        raise ContractError("image_gradient needs H, W >= 2")
    gx = np.zeros_like(a)
    gy = np.zeros_like(a)
    gx[:, :-1] = a[:, 1:] - a[:, :-1]
    gy[:-1, :] = a[1:, :] - a[:-1, :]
    return gx, gy


def _shift_right(a: np.ndarray) -> np.ndarray:
    """a[y, x-1] with zero fill at x = 0 (transpose of the forward x-diff)."""
    out = np.zeros_like(a)
    out[:, 1:] = a[:, :-1]
    return out


def _shift_down(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[1:, :] = a[:-1, :]
    return out


def _photometric_one_view(ref: np.ndarray, warp: WarpResult, with_grad: bool):
    """Masked squared error on intensities and image gradients, one view."""
    m = warp.mask.astype(np.float64)
    n = m.sum()
    if n == 0:
        return 0.0, None, True
    w = warp.warped
    diff = w - ref
    gxw, gyw = image_gradient(w)
    gxr, gyr = image_gradient(ref)
    Gx = gxw - gxr
    Gy = gyw - gyr

    m3 = m[..., None]
    value = (
        float(np.sum(m3 * diff**2))
        + float(np.sum(m3 * Gx**2))
        + float(np.sum(m3 * Gy**2))
    ) / n

    grad = None
    if with_grad:
        dW = warp.dwarped_ddepth
        sx = m3 * Gx
        sy = m3 * Gy
        # d(gx[k])/d(depth_j) is nonzero for k = j (weight -1) and k = j-1x (+1).
        gterm = (
            m3 * diff
            + _shift_right(sx) - sx
            + _shift_down(sy) - sy
        )
        grad = (2.0 / n) * np.sum(gterm * dW, axis=-1)
    return value, grad, False


def photometric_loss(
    ref,
    srcs,
    depth: DepthMap,
    cam_ref: Camera,
    cam_srcs,
    with_grad: bool = False,
) -> LossReport:
    """Photometric consistency summed over source views.

    Each view contributes masked squared differences of intensities and of
    forward-difference image gradients, normalized by that view's valid
    count. Views with an empty mask contribute 0 and are flagged.
    """
    if len(srcs) < 1 or len(srcs) != len(cam_srcs):
        raise ContractError("need >= 1 source view with matching cameras")
    warps = [
        warp_image(src, depth, cam_ref, cam, with_grad=with_grad)
        for src, cam in zip(srcs, cam_srcs)
    ]
    return _photometric_from_warps(ref, warps, with_grad)


def _photometric_from_warps(ref, warps, with_grad: bool) -> LossReport:
    ref_a = as_image_array(ref)
    total = 0.0
    grad = np.zeros(ref_a.shape[:2]) if with_grad else None
    flags = []
    for j, warp in enumerate(warps):
        value, g, empty = _photometric_one_view(ref_a, warp, with_grad)
        total += value
        if empty:
            flags.append(f"photometric:view{j}:empty_mask")
        elif with_grad:
            grad += g
    if with_grad:
        instrument.record_grad_buffer(grad.nbytes)
    return LossReport(
        total=total,
        components={"photometric": total},
        weights={"photometric": 1.0},
        grad_depth=grad,
        flags=tuple(flags),
    )


def _box3(a: np.ndarray) -> np.ndarray:
    """Sum over 3x3 windows; output covers window centers (H-2, W-2)."""
    return (
        a[:-2, :-2] + a[:-2, 1:-1] + a[:-2, 2:]
        + a[1:-1, :-2] + a[1:-1, 1:-1] + a[1:-1, 2:]
        + a[2:, :-2] + a[2:, 1:-1] + a[2:, 2:]
    )


def _box3_scatter(w: np.ndarray, shape) -> np.ndarray:
    """Transpose of :func:`_box3`: spread window values back onto pixels."""
    out = np.zeros(shape, dtype=np.float64)
    H, W = shape[0], shape[1]
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out[dy:H - 2 + dy, dx:W - 2 + dx] += w
    return out


def ssim_loss(ref, warped, mask, with_grad: bool = False) -> SSIMLoss:
    """Structural dissimilarity (1 - SSIM)/2 over valid 3x3 windows.

    A window is valid when fully inside the image and all nine mask pixels
    are true. Returns the mean over valid windows and channels, and the
    gradient w.r.t. the warped image.
    """
    x = as_image_array(warped)
    y = as_image_array(ref)
    if x.shape != y.shape:
        raise ContractError("ssim_loss inputs must have identical shapes")
    H, W, C = x.shape
    if H < 3 or W < 3:
        return SSIMLoss(0.0, np.zeros_like(x) if with_grad else None, ("ssim:no_valid_window",))
    mask = np.asarray(mask, dtype=bool)
    vw = _box3(mask.astype(np.float64)) == 9.0
    n_w = int(vw.sum())
    if n_w == 0:
        return SSIMLoss(0.0, np.zeros_like(x) if with_grad else None, ("ssim:no_valid_window",))

    vw3 = vw[..., None]
    m1 = _box3(x) / 9.0
    m2 = _box3(y) / 9.0
    q1 = _box3(x * x) / 9.0
    q2 = _box3(y * y) / 9.0
    q12 = _box3(x * y) / 9.0

    A1 = 2.0 * m1 * m2 + SSIM_C1
    A2 = 2.0 * (q12 - m1 * m2) + SSIM_C2
    B1 = m1**2 + m2**2 + SSIM_C1
    B2 = (q1 - m1**2) + (q2 - m2**2) + SSIM_C2
    D = B1 * B2
    S = (A1 * A2) / D

    denom = n_w * C
    value = max(0.0, float(np.sum(np.where(vw3, (1.0 - S) / 2.0, 0.0))) / denom)

    grad = None
    if with_grad:
        dL_dS = np.where(vw3, -0.5 / denom, 0.0)
        dS_dm1 = (2.0 * m2 * (A2 - A1) - S * 2.0 * m1 * (B2 - B1)) / D
        dS_dq1 = -S / B2
        dS_dq12 = 2.0 * A1 / D
        w1 = dL_dS * dS_dm1 / 9.0
        w2 = dL_dS * dS_dq1 / 9.0
        w3 = dL_dS * dS_dq12 / 9.0
        grad = (
            _box3_scatter(w1, x.shape)
            + _box3_scatter(w2, x.shape) * 2.0 * x
            + _box3_scatter(w3, x.shape) * y
        )
        instrument.record_grad_buffer(grad.nbytes)
    return SSIMLoss(value, grad, ())


def smoothness_loss(depth: DepthMap, ref, with_grad: bool = False) -> LossReport:
    """Edge-aware smoothness of mean-normalized depth.

    Depth differences are penalized where the reference image is flat
    (weight exp(-|grad I|), channel-averaged) and forgiven across image
    edges. Normalizing by the valid-pixel mean decouples the value from
    absolute scene scale; the gradient includes the normalizer term.
    """
    a = as_image_array(ref)
    if a.shape[:2] != depth.shape:
        raise ContractError("depth and image dimensions must match")
    v = depth.valid
    n_v = int(v.sum())
    if n_v == 0:
        g = np.zeros(depth.shape) if with_grad else None
        return LossReport(0.0, {"smoothness": 0.0}, {"smoothness": 1.0}, g, ("smoothness:all_invalid",))

    d = depth.data
    mu = float(d[v].mean())
    gx_i, gy_i = image_gradient(a)
    wx = np.exp(-np.abs(gx_i).mean(axis=-1))
    wy = np.exp(-np.abs(gy_i).mean(axis=-1))

    px = np.zeros_like(v)
    px[:, :-1] = v[:, :-1] & v[:, 1:]
    py = np.zeros_like(v)
    py[:-1, :] = v[:-1, :] & v[1:, :]
    n_x = int(px.sum())
    n_y = int(py.sum())

    dx = np.zeros_like(d)
    dx[:, :-1] = d[:, 1:] - d[:, :-1]
    dy = np.zeros_like(d)
    dy[:-1, :] = d[1:, :] - d[:-1, :]

    tx = np.where(px, np.abs(dx) * wx, 0.0)
    ty = np.where(py, np.abs(dy) * wy, 0.0)
    Tx = float(tx.sum())
    Ty = float(ty.sum())
    flags = []
    if n_x == 0 and n_y == 0:
        flags.append("smoothness:no_valid_pairs")
    value = ((Tx / n_x if n_x else 0.0) + (Ty / n_y if n_y else 0.0)) / mu

    grad = None
    if with_grad:
        sx = np.where(px, np.sign(dx) * wx, 0.0)
        sy = np.where(py, np.sign(dy) * wy, 0.0)
        grad = np.zeros_like(d)
        if n_x:
            grad += (_shift_right(sx) - sx) / n_x
        if n_y:
            grad += (_shift_down(sy) - sy) / n_y
        grad /= mu
        # Quotient-rule term from the valid-pixel-mean normalizer.
        grad -= np.where(v, value / mu / n_v, 0.0)
        grad = np.where(v, grad, 0.0)
        instrument.record_grad_buffer(grad.nbytes)
    return LossReport(value, {"smoothness": value}, {"smoothness": 1.0}, grad, tuple(flags))


def depth_consistency_loss(
    student: DepthMap,
    pseudo: DepthMap,
    region_mask=None,
    weights: LossWeights = LossWeights(),
    with_grad: bool = False,
) -> LossReport:
    """Squared depth error against a frozen pseudo-depth map.

    Without ``region_mask``: one global mean over jointly valid pixels,
    scaled by ``lambda_dc``. With a region mask: high- and low-quality
    partitions each take the mean over their own pixel count and their own
    weight. The pseudo map is a constant; no gradient flows into it.
    """
    if student.shape != pseudo.shape:
        raise ContractError("student and pseudo depth dimensions must match")
    vd = student.valid & pseudo.valid
    diff = np.where(vd, student.data - pseudo.data, 0.0)
    flags = []

    def _partition(sel_mask, name):
        n = int(sel_mask.sum())
        if n == 0:
            flags.append(f"depth_consistency:{name}:empty")
            return 0.0, None
        value = float(np.sum(np.where(sel_mask, diff**2, 0.0))) / n
        g = (2.0 / n) * np.where(sel_mask, diff, 0.0) if with_grad else None
        return value, g

    if region_mask is None:
        value, g = _partition(vd, "all")
        total = weights.lambda_dc * value
        grad = weights.lambda_dc * g if with_grad and g is not None else (
            np.zeros(student.shape) if with_grad else None
        )
        components = {"depth_consistency": value}
        wmap = {"depth_consistency": weights.lambda_dc}
    else:
        rm = np.asarray(region_mask.mask if hasattr(region_mask, "mask") else region_mask, dtype=bool)
        if rm.shape != student.shape:
            raise ContractError("region mask dimensions must match depth")
        v_h, g_h = _partition(vd & rm, "high")
        v_l, g_l = _partition(vd & ~rm, "low")
        total = weights.lambda_dc_high * v_h + weights.lambda_dc_low * v_l
        grad = None
        if with_grad:
            grad = np.zeros(student.shape)
            if g_h is not None:
                grad += weights.lambda_dc_high * g_h
            if g_l is not None:
                grad += weights.lambda_dc_low * g_l
        components = {"depth_consistency_high": v_h, "depth_consistency_low": v_l}
        wmap = {
            "depth_consistency_high": weights.lambda_dc_high,
            "depth_consistency_low": weights.lambda_dc_low,
        }
    if with_grad and grad is not None:
        instrument.record_grad_buffer(grad.nbytes)
    return LossReport(total, components, wmap, grad, tuple(flags))


def total_loss(
    ref,
    srcs,
    depth: DepthMap,
    cam_ref: Camera,
    cam_srcs,
    pseudo: DepthMap | None = None,
    weights: LossWeights = LossWeights(),
    region_mask=None,
    with_grad: bool = False,
) -> LossReport:
    """Weighted combination of all objectives with one shared warp pass.

    With ``region_mask`` the depth-consistency term uses the two-weight
    partition form; otherwise the single global weight. The gradient is
    the weighted sum of the component gradients.
    """
    ref_a = as_image_array(ref)
    warps = [
        warp_image(src, depth, cam_ref, cam, with_grad=with_grad)
        for src, cam in zip(srcs, cam_srcs)
    ]
    pc = _photometric_from_warps(ref_a, warps, with_grad)

    ssim_value = 0.0
    ssim_grad = np.zeros(depth.shape) if with_grad else None
    flags = list(pc.flags)
    for j, warp in enumerate(warps):
        s = ssim_loss(ref_a, warp.warped, warp.mask, with_grad=with_grad)
        ssim_value += s.value
        flags.extend(f"{f}:view{j}" for f in s.flags)
        if with_grad and s.grad_warped is not None:
            ssim_grad += np.sum(s.grad_warped * warp.dwarped_ddepth, axis=-1)

    sm = smoothness_loss(depth, ref_a, with_grad=with_grad)
    flags.extend(sm.flags)

    components = {
        "photometric": pc.total,
        "ssim": ssim_value,
        "smoothness": sm.total,
    }
    wmap = {
        "photometric": weights.lambda_pc,
        "ssim": weights.lambda_ssim,
        "smoothness": weights.lambda_smooth,
    }
    total = (
        weights.lambda_pc * pc.total
        + weights.lambda_ssim * ssim_value
        + weights.lambda_smooth * sm.total
    )
    grad = None
    if with_grad:
        grad = (
            weights.lambda_pc * pc.grad_depth
            + weights.lambda_ssim * ssim_grad
            + weights.lambda_smooth * sm.grad_depth
        )

    if pseudo is not None:
        dc = depth_consistency_loss(depth, pseudo, region_mask, weights, with_grad)
        components.update(dc.components)
        wmap.update(dc.weights)
        flags.extend(dc.flags)
        total += dc.total
        if with_grad:
            grad += dc.grad_depth

    if with_grad:
        grad = np.where(depth.valid, grad, 0.0)
    return LossReport(total, components, wmap, grad, tuple(flags))
