"""Ground-truth scene generator: analytic surfaces, procedural texture, rigs.

Every pixel's depth comes from an exact ray-surface intersection (no
rasterization error) and every image intensity is a Lambertian texture
evaluated at the 3D hit point, so co-visible pixels in different views see
identical values. Scenes therefore serve as oracles for warping, losses,
cross-view checks and fusion.

World conventions match the camera model: y points down, z points away
from the default rig. Surfaces:

- ``plane``: fronto-parallel plane z = plane_depth.
- ``sphere``: centered on the z axis; nearest positive quadratic root.
- ``step``: two fronto-parallel half-planes split at world x, nearest
  intersection wins, which yields exact occlusion boundaries.

The texture is a sum of three incommensurate 3-D sinusoids, clipped to
[0.1, 0.9]: band-limited enough for bilinear resampling, gradient-rich
enough for photometric losses to have signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .geometry import Camera, _cam_rays, _project_unchecked
from .maps import DepthMap, ImageGrid


@dataclass(frozen=True)
class RigSpec:
    """Camera rig: ``line`` (parallel axes along x) or ``arc`` (look-at)."""

    count: int = 5
    kind: str = "line"
    spacing: float = 0.12          # line: center distance; arc: degrees between views
    radius: float = 4.0            # arc only: distance from look_at
    look_at: tuple[float, float, float] = (0.0, 0.0, 4.0)
    height: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    surface: str = "plane"         # plane | sphere | step
    resolution: tuple[int, int] = (64, 80)
    rig: RigSpec = field(default_factory=RigSpec)
    depth_range: tuple[float, float] = (1.0, 12.0)
    focal: float | None = None     # pixels; default 1.2 * W
    channels: int = 3
    texture_seed: int = 7
    texture_frequency: float = 0.8  # dominant spatial frequency, cycles per scene unit
    plane_depth: float = 4.0
    sphere_center: tuple[float, float, float] = (0.0, 0.0, 5.0)
    sphere_radius: float = 2.0
    step_depths: tuple[float, float] = (3.2, 4.8)
    step_split_x: float = 0.0
    noise_sigma: float = 0.0       # optional additive Gaussian image noise
    noise_seed: int = 0

    def __post_init__(self):
        H, W = self.resolution
        if H < 16 or W < 16:
            raise ContractError("resolution must be at least 16x16")
        if self.rig.count < 2:
            raise ContractError("rig needs at least 2 cameras")
        if self.surface not in ("plane", "sphere", "step"):
            raise ContractError(f"unknown surface kind {self.surface!r}")


@dataclass(frozen=True)
class SceneView:
    image: ImageGrid
    depth: DepthMap
    camera: Camera


@dataclass(frozen=True)
class Scene:
    views: list[SceneView]
    anchors: np.ndarray              # (A, 3) world points on the surface
    anchor_visibility: np.ndarray    # (A, n_views) bool
    spec: SceneSpec

    @property
    def cameras(self) -> list[Camera]:
        return [v.camera for v in self.views]

    @property
    def images(self) -> list[ImageGrid]:
        return [v.image for v in self.views]

    @property
    def depths(self) -> list[DepthMap]:
        return [v.depth for v in self.views]


def _look_at_rotation(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    fwd = target - center
    nf = np.linalg.norm(fwd)
    if nf < 1e-12:
        raise ContractError("camera center coincides with look-at target")
    z = fwd / nf
    hint = np.array([0.0, 1.0, 0.0])
    x = np.cross(hint, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        hint = np.array([0.0, 0.0, 1.0])
        x = np.cross(hint, z)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=0)


def rig_cameras(spec: SceneSpec) -> list[Camera]:
    """Instantiate the rig's cameras with shared intrinsics."""
    H, W = spec.resolution
    f = spec.focal if spec.focal is not None else 1.2 * W
    K = np.array([[f, 0.0, (W - 1) / 2.0], [0.0, f, (H - 1) / 2.0], [0.0, 0.0, 1.0]])
    rig = spec.rig
    cams = []
    for i in range(rig.count):
        if rig.kind == "line":
            cx = (i - (rig.count - 1) / 2.0) * rig.spacing
            center = np.array([cx, rig.height, 0.0])
            R = np.eye(3)
        elif rig.kind == "arc":
            ang = np.deg2rad((i - (rig.count - 1) / 2.0) * rig.spacing)
            target = np.asarray(rig.look_at, dtype=np.float64)
            center = target + rig.radius * np.array([np.sin(ang), 0.0, -np.cos(ang)])
            center = center + np.array([0.0, rig.height, 0.0])
            R = _look_at_rotation(center, target)
        else:
            raise ContractError(f"unknown rig kind {rig.kind!r}")
        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = -R @ center
        cams.append(Camera(K=K, T=T, image_size=(H, W), depth_range=spec.depth_range))
    return cams


class _Texture:
    """Sum of three incommensurate 3-D sinusoids per channel, in [0.1, 0.9]."""

    _SCALES = (1.0, np.sqrt(2.0), np.sqrt(3.0))
    _AMPS = (0.18, 0.13, 0.09)

    def __init__(self, seed: int, frequency: float, channels: int):
        rng = np.random.default_rng(seed)
        self.dirs = []
        self.phases = []
        for _ in range(channels):
            d = rng.normal(size=(3, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            d *= 2.0 * np.pi * frequency * np.asarray(self._SCALES)[:, None]
            self.dirs.append(d)
            self.phases.append(rng.uniform(0, 2 * np.pi, size=3))
        self.channels = channels

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate at (..., 3) world points; returns (..., C) in [0.1, 0.9]."""
        out = []
        for c in range(self.channels):
            v = np.full(pts.shape[:-1], 0.5)
            for k in range(3):
                v = v + self._AMPS[k] * np.sin(pts @ self.dirs[c][k] + self.phases[c][k])
            out.append(v)
        return np.clip(np.stack(out, axis=-1), 0.1, 0.9)


def _intersect(spec: SceneSpec, origin: np.ndarray, dirs: np.ndarray):
    """Nearest positive ray parameter per pixel; t equals camera-frame depth."""
    dz = dirs[..., 2]
    eps = 1e-12
    if spec.surface == "plane":
        dz_safe = np.where(np.abs(dz) < eps, eps, dz)
        t = (spec.plane_depth - origin[2]) / dz_safe
        valid = (np.abs(dz) > eps) & (t > eps)
        return np.where(valid, t, np.nan), valid
    if spec.surface == "sphere":
        C = np.asarray(spec.sphere_center, dtype=np.float64)
        oc = origin - C
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * (dirs @ oc)
        c = float(oc @ oc) - spec.sphere_radius**2
        disc = b * b - 4.0 * a * c
        has = disc >= 0
        sq = np.sqrt(np.where(has, disc, 0.0))
        t1 = (-b - sq) / (2.0 * a)
        t2 = (-b + sq) / (2.0 * a)
        t = np.where(t1 > eps, t1, t2)
        valid = has & (t > eps)
        return np.where(valid, t, np.nan), valid
    # step: two half-planes, nearest hit wins (exact occlusion).
    z_near, z_far = spec.step_depths
    ts = []
    for z0, keep_left in ((z_near, True), (z_far, False)):
        dz_safe = np.where(np.abs(dz) < eps, eps, dz)
        t = (z0 - origin[2]) / dz_safe
        hit_x = origin[0] + t * dirs[..., 0]
        side = hit_x < spec.step_split_x if keep_left else hit_x >= spec.step_split_x
        ok = (np.abs(dz) > eps) & (t > eps) & side
        ts.append(np.where(ok, t, np.inf))
    t = np.minimum(ts[0], ts[1])
    valid = np.isfinite(t)
    return np.where(valid, t, np.nan), valid


def render(spec: SceneSpec) -> Scene:
    """Render all rig views plus stratified surface anchors with visibility."""
    cams = rig_cameras(spec)
    tex = _Texture(spec.texture_seed, spec.texture_frequency, spec.channels)
    noise_rng = np.random.default_rng(spec.noise_seed)

    views = []
    d_min, d_max = spec.depth_range
    for cam in cams:
        dirs = _cam_rays(cam) @ cam.R          # world-space, camera-z component 1
        origin = cam.center
        t, valid = _intersect(spec, origin, dirs)
        if not valid.any():
            raise ContractError("camera sees no surface")
        dvals = np.where(valid, t, 0.0)
        if dvals[valid].min() < d_min or dvals[valid].max() > d_max:
            raise ContractError("surface leaves the declared depth range")
        pts = origin + np.where(valid, t, 0.0)[..., None] * dirs
        img = np.where(valid[..., None], tex(pts), 0.0)
        if spec.noise_sigma > 0:
            img = img + noise_rng.normal(0.0, spec.noise_sigma, size=img.shape)
            img = np.clip(img, 0.0, 1.0)
        views.append(
            SceneView(
                image=ImageGrid(img),
                depth=DepthMap(dvals, valid),
                camera=cam,
            )
        )

    anchors, vis = _surface_anchors(spec, views)
    return Scene(views=views, anchors=anchors, anchor_visibility=vis, spec=spec)


def _surface_anchors(spec: SceneSpec, views: list[SceneView], grid: int = 10):
    """Stratified surface samples lifted from view 0, with per-view visibility."""
    view0 = views[0]
    H, W = spec.resolution
    rng = np.random.default_rng(spec.texture_seed + 1)
    pts = []
    for gy in range(grid):
        for gx in range(grid):
            y = int((gy + rng.uniform(0.25, 0.75)) * H / grid)
            x = int((gx + rng.uniform(0.25, 0.75)) * W / grid)
            if not view0.depth.valid[y, x]:
                continue
            d = view0.depth.data[y, x]
            ray = view0.camera.K_inv() @ np.array([x, y, 1.0])
            pts.append(view0.camera.center + d * (view0.camera.R.T @ ray))
    if not pts:
        raise ContractError("no valid anchor samples on the surface")
    anchors = np.asarray(pts)

    vis = np.zeros((len(anchors), len(views)), dtype=bool)
    for j, view in enumerate(views):
        pix, z = _project_unchecked(anchors, view.camera)
        xi = np.clip(np.rint(pix[:, 0]).astype(int), 0, W - 1)
        yi = np.clip(np.rint(pix[:, 1]).astype(int), 0, H - 1)
        inb = (
            (pix[:, 0] >= 0) & (pix[:, 0] <= W - 1)
            & (pix[:, 1] >= 0) & (pix[:, 1] <= H - 1)
            & (z > 0)
        )
        seen = view.depth.valid[yi, xi] & (
            np.abs(view.depth.data[yi, xi] - z) < 1e-3 * np.maximum(z, 1e-12) + 1e-9
        )
        vis[:, j] = inb & seen
    return anchors, vis


def stereo_pair(
    baseline: float = 0.2,
    plane_depth: float = 4.0,
    resolution: tuple[int, int] = (48, 64),
    **kw,
) -> Scene:
    """Convenience two-view pure-x-translation rig over a fronto-parallel plane."""
    spec = SceneSpec(
        surface="plane",
        resolution=resolution,
        rig=RigSpec(count=2, kind="line", spacing=baseline),
        plane_depth=plane_depth,
        **kw,
    )
    return render(spec)
