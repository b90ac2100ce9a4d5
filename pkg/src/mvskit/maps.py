"""Grid containers shared by every module: depth maps and intensity images.

``DepthMap`` carries metric depths plus a per-pixel validity flag; anything
non-finite or non-positive is invalid (real depth maps contain holes, so
invalid pixels mask out rather than error). ``ImageGrid`` holds H x W x C
intensities in [0, 1] with C in {1, 3}. Validity masks are plain bool arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class DepthMap:
    """H x W metric depths with a validity flag per pixel."""

    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if data.ndim != 2:
            raise ContractError(f"depth map must be 2-D, got shape {data.shape}")
        if valid.shape != data.shape:
            raise ContractError("validity mask shape must match depth data")
        # A pixel can never be valid with a non-finite or non-positive depth.
        valid = valid & np.isfinite(data) & (data > 0)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)
        self.data.setflags(write=False)
        self.valid.setflags(write=False)

    @classmethod
    def from_array(cls, data, valid=None) -> "DepthMap":
        data = np.asarray(data, dtype=np.float64)
        if valid is None:
            valid = np.ones(data.shape, dtype=bool)
        return cls(data, valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class ImageGrid:
    """H x W x C intensities in [0, 1], C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ContractError(f"image must be HxWxC with C in {{1,3}}, got {data.shape}")
        if not np.isfinite(data).all():
            raise ContractError("image intensities must be finite")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ContractError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", data)
        self.data.setflags(write=False)

    @classmethod
    def as_grid(cls, img) -> "ImageGrid":
        """Coerce an ImageGrid or raw array to an ImageGrid."""
        return img if isinstance(img, cls) else cls(np.asarray(img))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


def as_image_array(img) -> np.ndarray:
    """Return the (H, W, C) float64 array behind an ImageGrid or raw array."""
    return ImageGrid.as_grid(img).data
