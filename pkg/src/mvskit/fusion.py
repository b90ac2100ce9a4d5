"""Depth-map fusion into a single point cloud.

A pixel of a reference view survives when its confidence clears the
photometric threshold and at least ``tau4`` source views pass the two-hop
geometric check under ``tau2``/``tau3``. Surviving pixels are lifted with
the average of the mutually consistent depth observations (reference depth
plus the re-projected depths of passing sources) and emitted once: a
deterministic voxel hash (cell size half the reference pixel footprint)
suppresses points whose cell an earlier view already claimed. Suppression
keyed on surviving 3D points keeps the point count monotone under
threshold tightening, which per-source-pixel consumption does not.
Views are processed in ascending id order, so output is deterministic
byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cross_view import CheckConfig, _two_hop
from .errors import ContractError
from .geometry import backproject
from .maps import as_image_array


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray     # (N, 3) float64 world coordinates
    colors: np.ndarray     # (N, 3) float64 in [0, 1]
    view_ids: np.ndarray   # (N,) int64 reference view of each point

    def __post_init__(self):
        if len(self.points) and not np.isfinite(self.points).all():
            raise ContractError("point cloud coordinates must be finite")

    def __len__(self) -> int:
        return len(self.points)


def fuse(
    depths,
    confidences,
    images,
    cams,
    pairs=None,
    geom_cfg: CheckConfig | None = None,
    conf_threshold: float = 0.5,
    dedup_cell: float | None = None,
) -> PointCloud:
    """Filter and merge per-view depth maps into one point cloud.

    Parameters
    ----------
    depths, confidences, images, cams : per-view sequences, index = view id
    pairs : optional dict view id -> source view ids; defaults to all others
    geom_cfg : thresholds for the geometric check (tau2, tau3, tau4)
    conf_threshold : photometric gate on the confidence map
    dedup_cell : voxel edge for duplicate suppression; defaults to half the
        median pixel footprint of view 0 (median depth / focal length)
    """
    n = len(depths)
    if n < 2:
        raise ContractError("fusion needs at least 2 views")
    if not (len(confidences) == len(images) == len(cams) == n):
        raise ContractError("per-view inputs must have equal length")
    cfg = geom_cfg if geom_cfg is not None else CheckConfig(n_sources=n - 1, tau4=min(4, n - 1))
    if pairs is None:
        pairs = {i: [j for j in range(n) if j != i] for i in range(n)}
    if dedup_cell is None:
        d0 = depths[0]
        if not d0.valid.any():
            raise ContractError("view 0 has no valid depth to size the dedup cell")
        dedup_cell = 0.5 * float(np.median(d0.data[d0.valid])) / float(cams[0].K[0, 0])

    claimed: set[tuple[int, int, int]] = set()
    out_pts, out_cols, out_ids = [], [], []

    for ref in range(n):
        depth_ref = depths[ref]
        H, W = depth_ref.shape
        srcs = list(pairs.get(ref, []))
        if not srcs:
            continue
        count = np.zeros((H, W), dtype=np.int64)
        depth_sum = depth_ref.data.copy()
        for s in srcs:
            e_px, e_d, defined, reproj, _ = _two_hop(
                depth_ref, depths[s], cams[ref], cams[s]
            )
            ok = defined & (e_px < cfg.tau2) & (e_d < cfg.tau3)
            count += ok
            depth_sum += np.where(ok, reproj, 0.0)

        final = (
            depth_ref.valid
            & (np.asarray(confidences[ref]) > conf_threshold)
            & (count >= cfg.tau4)
        )
        if not final.any():
            continue
        avg_depth = depth_sum / (1.0 + count)

        ys, xs = np.nonzero(final)
        pix = np.stack([xs, ys], axis=-1).astype(np.float64)
        pts = backproject(pix, avg_depth[ys, xs], cams[ref])

        # One point per voxel cell, first view (then row-major pixel) wins.
        # The cell key comes from the raw (unaveraged) lift so it does not
        # move with the thresholds; only then is the count monotone.
        raw_pts = backproject(pix, depth_ref.data[ys, xs], cams[ref])
        cells = np.floor(raw_pts / dedup_cell).astype(np.int64)
        keep = np.zeros(len(pts), dtype=bool)
        for i, key in enumerate(map(tuple, cells)):
            if key not in claimed:
                claimed.add(key)
                keep[i] = True
        if not keep.any():
            continue

        img = as_image_array(images[ref])
        cols = img[ys[keep], xs[keep]]
        if cols.shape[1] == 1:
            cols = np.repeat(cols, 3, axis=1)
        out_pts.append(pts[keep])
        out_cols.append(cols)
        out_ids.append(np.full(int(keep.sum()), ref, dtype=np.int64))

    if not out_pts:
        empty3 = np.zeros((0, 3))
        return PointCloud(empty3, empty3.copy(), np.zeros(0, dtype=np.int64))
    return PointCloud(
        np.concatenate(out_pts), np.concatenate(out_cols), np.concatenate(out_ids)
    )


_PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex {n}
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
end_header
"""


_PLY_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
)


def write_ply(cloud: PointCloud, path) -> None:
    """Write a binary little-endian PLY: float32 xyz + uint8 rgb per vertex."""
    n = len(cloud)
    rec = np.empty(n, dtype=_PLY_DTYPE)
    pts = cloud.points.astype(np.float32)
    cols = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    for i, name in enumerate(("x", "y", "z")):
        rec[name] = pts[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        rec[name] = cols[:, i]
    try:
        with open(path, "wb") as f:
            f.write(_PLY_HEADER.format(n=n).encode("ascii"))
            f.write(rec.tobytes())
    except OSError as e:
        raise OSError(f"failed to write PLY {path!r}: {e}") from e
