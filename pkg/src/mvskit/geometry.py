"""Pinhole camera model: projection, back-projection, relative transforms.

Conventions, fixed for the whole package:

- ``T`` maps world to camera coordinates: ``x_cam = R @ x_world + t``.
- The camera looks along +z of its own frame; *depth* is the camera-frame
  z coordinate, not the ray length.
- Pixel (0, 0) is the center of the top-left pixel; ``x`` indexes columns,
  ``y`` indexes rows.
- All math is double precision; single precision appears only at the
  image/depth file boundary.

All operations are pure functions over immutable inputs and broadcast over
leading array dimensions, so a single call handles one point or a grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError

_ROT_TOL = 1e-9


class Pixel(NamedTuple):
    """Continuous image coordinates (column x, row y)."""

    x: float
    y: float


class Point3(NamedTuple):
    """World-space point in scene units."""

    x: float
    y: float
    z: float


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics ``K``, world-to-camera transform ``T``.

    Parameters
    ----------
    K : (3, 3) array
        Upper-triangular intrinsic matrix with positive focal entries.
    T : (4, 4) array
        Rigid world-to-camera transform; rotation block orthonormal.
    image_size : (int, int)
        (H, W) in pixels.
    depth_range : (float, float)
        (d_min, d_max) in scene units, 0 < d_min < d_max.
    """

    K: np.ndarray
    T: np.ndarray
    image_size: tuple[int, int]
    depth_range: tuple[float, float]

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        T = np.asarray(self.T, dtype=np.float64)
        if K.shape != (3, 3):
            raise ContractError(f"K must be 3x3, got {K.shape}")
        if T.shape != (4, 4):
            raise ContractError(f"T must be 4x4, got {T.shape}")
        if not (np.isfinite(K).all() and np.isfinite(T).all()):
            raise ContractError("camera matrices must be finite")
        if abs(K[1, 0]) > 0 or abs(K[2, 0]) > 0 or abs(K[2, 1]) > 0:
            raise ContractError("K must be upper-triangular")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ContractError("focal entries of K must be positive")
        R = T[:3, :3]
        if abs(np.linalg.det(R) - 1.0) > _ROT_TOL:
            raise ContractError("rotation block of T must have det 1")
        if np.max(np.abs(R @ R.T - np.eye(3))) > _ROT_TOL:
            raise ContractError("rotation block of T must be orthonormal")
        if np.max(np.abs(T[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 0:
            raise ContractError("last row of T must be [0, 0, 0, 1]")
        H, W = self.image_size
        if not (int(H) > 0 and int(W) > 0):
            raise ContractError(f"image_size must be positive, got {self.image_size}")
        d_min, d_max = self.depth_range
        if not (0 < d_min < d_max):
            raise ContractError(f"need 0 < d_min < d_max, got {self.depth_range}")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "image_size", (int(H), int(W)))
        object.__setattr__(self, "depth_range", (float(d_min), float(d_max)))
        self.K.setflags(write=False)
        self.T.setflags(write=False)

    @property
    def R(self) -> np.ndarray:
        return self.T[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.T[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def K_inv(self) -> np.ndarray:
        return np.linalg.inv(self.K)


def invert_rigid(T: np.ndarray) -> np.ndarray:
    """Invert a rigid 4x4 transform using the closed form [R.T | -R.T t]."""
    T = np.asarray(T, dtype=np.float64)
    out = np.eye(4)
    R = T[:3, :3]
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def project(pt, cam: Camera):
    """Project world point(s) into the image plane.

    Parameters
    ----------
    pt : array-like, shape (..., 3)
    cam : Camera

    Returns
    -------
    pix : (..., 2) array
        Image coordinates after perspective division.
    depth : (...) array or scalar
        Camera-frame z. May be negative (point behind camera); the caller
        decides what to do with it.

    Raises
    ------
    ContractError
        If any point lies within 1e-12 of the principal plane (z ~ 0),
        where perspective division is undefined.
    """
    pt = np.asarray(pt, dtype=np.float64)
    x_cam = pt @ cam.R.T + cam.t
    z = x_cam[..., 2]
    if np.any(np.abs(z) < 1e-12):
        raise ContractError("projection at infinity: camera-frame z within 1e-12 of 0")
    h = x_cam @ cam.K.T
    pix = h[..., :2] / h[..., 2:3]
    if pt.ndim == 1:
        return pix, float(z)
    return pix, z


def backproject(pix, depth, cam: Camera):
    """Lift pixel(s) at given depth(s) to world space.

    ``pix`` has shape (..., 2); ``depth`` broadcasts against its leading
    dimensions. Inverse of :func:`project`: the returned points satisfy
    ``project(result, cam) == (pix, depth)``.

    Raises
    ------
    ContractError
        If any depth is not strictly positive.
    """
    pix = np.asarray(pix, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise ContractError("backproject requires strictly positive depth")
    ones = np.ones(pix.shape[:-1] + (1,))
    h = np.concatenate([pix, ones], axis=-1)
    x_cam = depth[..., None] * (h @ cam.K_inv().T)
    return (x_cam - cam.t) @ cam.R


def relative_transform(ref: Camera, src: Camera) -> np.ndarray:
    """Rigid transform taking reference-camera-frame points to the source frame.

    For a point ``x_ref`` in the reference camera frame,
    ``x_src = M[:3, :3] @ x_ref + M[:3, 3]``. ``relative_transform(c, c)``
    is the identity up to roundoff.
    """
    return src.T @ invert_rigid(ref.T)


def _cam_rays(cam: Camera) -> np.ndarray:
    """Unnormalized camera-frame ray directions (z = 1) for every pixel center.

    Returns an (H, W, 3) grid: ``K^{-1} [x, y, 1]`` per pixel.
    """
    H, W = cam.image_size
    xs = np.arange(W, dtype=np.float64)
    ys = np.arange(H, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    h = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    return h @ cam.K_inv().T


def _project_unchecked(x, cam: Camera):
    """Like :func:`project` but never raises: returns (pix, z) with garbage
    coordinates wherever z ~ 0. Internal helper for masked pipelines."""
    x = np.asarray(x, dtype=np.float64)
    x_cam = x @ cam.R.T + cam.t
    z = x_cam[..., 2]
    h = x_cam @ cam.K.T
    safe = np.where(np.abs(h[..., 2]) < 1e-12, 1.0, h[..., 2])
    pix = h[..., :2] / safe[..., None]
    return pix, z
