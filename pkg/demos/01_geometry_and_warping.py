"""Cameras, projection, and cross-view warping on a synthetic stereo pair.

Renders a textured fronto-parallel plane from two cameras separated by a
pure x baseline, verifies the closed-form disparity law f*b/d, and warps
the source image into the reference frame.
"""

import numpy as np

import mvskit as mk

# A 4-unit-deep plane seen by two cameras 0.25 units apart.
baseline, depth = 0.23, 4.0  # 5.52 px disparity: off-grid, so resampling is exercised
scene = mk.stereo_pair(baseline=baseline, plane_depth=depth, resolution=(64, 80))
ref, src = scene.views
f = ref.camera.K[0, 0]

print(f"focal length  : {f:.1f} px")
print(f"expected disparity f*b/d = {f * baseline / depth:.3f} px")

coords, proj_depth, mask = mk.warp_coordinates(ref.depth, ref.camera, src.camera)
W = ref.depth.shape[1]
gx = np.arange(W, dtype=float)[None, :]
disparity = gx - coords[..., 0]
print(f"measured disparity        = {disparity[mask].mean():.3f} px "
      f"(spread {np.ptp(disparity[mask]):.2e})")

# Warping the source image through the true depth reproduces the reference
# up to bilinear resampling error.
result = mk.warp_image(src.image, ref.depth, ref.camera, src.camera)
err = np.abs(result.warped - ref.image.data)[result.mask]
print(f"valid warp coverage       = {result.mask.mean():.1%}")
print(f"max photometric residual  = {err.max():.4f} (bilinear resampling only)")

# Round-trip sanity of the camera model itself.
pix = np.array([[10.0, 20.0], [55.5, 31.25]])
d = np.array([3.0, 5.5])
world = mk.backproject(pix, d, ref.camera)
pix2, d2 = mk.project(world, ref.camera)
print(f"project(backproject(.)) residual = {np.abs(pix2 - pix).max():.2e} px")
