"""Online cross-view checking: depth gallery, two-hop errors, quality mask.

Caches per-view pseudo-depths in the gallery, computes the high-quality
mask of the reference view, then corrupts the cached entry and watches the
mask collapse.
"""

import numpy as np

import mvskit as mk

scene = mk.render(mk.SceneSpec(
    surface="step",
    resolution=(48, 64),
    rig=mk.RigSpec(count=8, kind="line", spacing=0.16),
    step_depths=(3.2, 4.8),
))
n = len(scene.views)
cams = scene.cameras

gallery = mk.DepthGallery()
for i, view in enumerate(scene.views):
    gallery.update(i, view.depth, np.ones(view.depth.shape) * view.depth.valid)

cfg = mk.CheckConfig(tau1=0.5, tau2=0.5, tau3=0.01, tau4=4, n_sources=7)
ref = 5  # a right-of-center view: left sources see its far plane occluded
srcs = [j for j in range(n) if j != ref]

e_px, e_d, defined = mk.reprojection_errors(
    gallery.get(ref).depth, gallery.get(3).depth, cams[ref], cams[3]
)
print(f"two-hop errors vs view 3: median e_pixel {np.median(e_px[defined]):.2e} px, "
      f"median e_depth {np.median(e_d[defined]):.2e}")

qm = mk.quality_mask(ref, gallery, cams, srcs, cfg)
print(f"clean gallery     : avg(M) = {qm.ratio:.3f}")
print(f"pass-count histogram: {np.bincount(qm.pass_counts.ravel(), minlength=8).tolist()}")

# Pixels in the occlusion band next to the depth step fail in the sources
# that cannot see them; well-observed flat surface passes everywhere.
step_cols = qm.pass_counts[:, 26:32].mean()
flat_cols = qm.pass_counts[:, 12:24].mean()
print(f"mean pass count near the step {step_cols:.2f} vs on flat surface {flat_cols:.2f}")

# Now corrupt the reference pseudo-depth by 3% relative noise: every pixel
# violates the 1% depth-consistency threshold and the mask collapses.
rng = np.random.default_rng(0)
vr = scene.views[ref]
noisy = mk.DepthMap(vr.depth.data * (1 + 0.03 + 0.01 * rng.uniform(size=vr.depth.shape)),
                    vr.depth.valid)
gallery.update(ref, noisy, np.ones(vr.depth.shape))
print(f"gallery version of view {ref} is now {gallery.get(ref).version}")
qm2 = mk.quality_mask(ref, gallery, cams, srcs, cfg)
print(f"corrupted gallery : avg(M) = {qm2.ratio:.3f}")
