import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mvskit.geometry import Camera
from mvskit.synthetic import RigSpec, SceneSpec, render


def random_camera(rng, image_size=(48, 64), depth_range=(1.0, 20.0)) -> Camera:
    """A valid random camera: random rotation (QR), bounded translation."""
    A = rng.standard_normal((3, 3))
    Q, R = np.linalg.qr(A)
    Q = Q @ np.diag(np.sign(np.diag(R)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    T = np.eye(4)
    T[:3, :3] = Q
    T[:3, 3] = rng.uniform(-2, 2, size=3)
    H, W = image_size
    f = rng.uniform(0.8, 1.6) * W
    K = np.array([[f, 0, (W - 1) / 2], [0, f * rng.uniform(0.9, 1.1), (H - 1) / 2], [0, 0, 1.0]])
    return Camera(K=K, T=T, image_size=image_size, depth_range=depth_range)


@pytest.fixture(scope="session")
def plane_scene():
    """5 views on a line rig over a textured fronto-parallel plane."""
    return render(
        SceneSpec(
            surface="plane",
            resolution=(48, 64),
            rig=RigSpec(count=5, kind="line", spacing=0.12),
            plane_depth=4.0,
        )
    )


@pytest.fixture(scope="session")
def arc_scene():
    """7 views on an arc rig around a sphere; richer geometry, occlusions."""
    return render(
        SceneSpec(
            surface="sphere",
            resolution=(48, 64),
            rig=RigSpec(count=7, kind="arc", spacing=3.0, radius=5.0, look_at=(0.0, 0.0, 5.0)),
            sphere_center=(0.0, 0.0, 5.0),
            sphere_radius=2.2,
            depth_range=(1.0, 12.0),
        )
    )


@pytest.fixture(scope="session")
def step_scene():
    """8 views over a two-plane depth step: exact occlusion boundaries."""
    return render(
        SceneSpec(
            surface="step",
            resolution=(48, 64),
            rig=RigSpec(count=8, kind="line", spacing=0.16),
            step_depths=(3.2, 4.8),
            step_split_x=0.0,
        )
    )
