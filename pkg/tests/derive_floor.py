"""Re-derive the finite-difference descent floor used by acceptance test 7.

Run from the repository root:

    python tests/derive_floor.py

Takes a couple of minutes: 200 iterations of 9-color finite-difference
gradients at 64x80. The printed init/floor MAEs are the constants frozen
in tests/test_acceptance.py; re-run this script if the scene generator,
selection plumbing, or refinement configuration changes.
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np

import mvskit as mk
from mvskit.refine import RefineConfig, WarpMedianTeacher, check_config_for
from mvskit.view_selection import compute_view_scores
from oracles import fd_descent

ACCEPT_SCENE = dict(
    surface="plane",
    resolution=(64, 80),
    rig=mk.RigSpec(count=11, kind="line", spacing=0.08),
    plane_depth=4.0,
)
ACCEPT_NOISE_SEED = 42
ACCEPT_CFG = dict(iterations=200, step_size=0.002, seed=1)


def acceptance_problem():
    """The exact scene/init/config acceptance test 7 optimizes."""
    scene = mk.render(mk.SceneSpec(**ACCEPT_SCENE))
    scores = compute_view_scores(scene.cameras, scene.anchors, scene.anchor_visibility)
    ref = 5
    gt = scene.views[ref].depth
    rng = np.random.default_rng(ACCEPT_NOISE_SEED)
    init = mk.DepthMap(gt.data * (1 + 0.05 * rng.standard_normal(gt.shape)), gt.valid)
    teacher = WarpMedianTeacher([v.depth for v in scene.views], scene.cameras)
    cfg = RefineConfig(check=check_config_for(len(scene.views)), **ACCEPT_CFG)
    return scene, scores, ref, gt, init, teacher, cfg


if __name__ == "__main__":
    scene, scores, ref, gt, init, teacher, cfg = acceptance_problem()
    mae0 = float(np.abs(init.data - gt.data)[gt.valid].mean())
    t0 = time.time()
    _, maes = fd_descent(init, scene.images, scene.cameras, ref, scores, teacher, cfg, gt=gt)
    print(f"init MAE        : {mae0:.8f}")
    print(f"fd-descent floor: {maes[-1]:.8f}   ({time.time() - t0:.0f} s)")
