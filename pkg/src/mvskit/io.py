"""File formats and dataset layout.

Depth and confidence maps travel as grayscale PFM (``Pf``), images as
binary PPM (``P6``, PNG optional via Pillow), masks as binary PGM
(``P5``), cameras as MVSNet-style text files, and view pairings as
``pair.txt``. Byte-level details live in ``docs/formats.md``. Parsing is
whitespace-tolerant and locale-independent; parse failures carry the byte
offset.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .geometry import Camera
from .maps import DepthMap, ImageGrid

DEFAULT_DEPTH_COUNT = 192


def _next_token(buf: bytes, pos: int, path) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n and buf[pos : pos + 1].isspace():
        pos += 1
    if pos >= n:
        raise ParseError(f"{path}: unexpected end of file at byte {pos}")
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def _token_float(buf: bytes, pos: int, path) -> tuple[float, int]:
    tok, pos = _next_token(buf, pos, path)
    try:
        return float(tok), pos
    except ValueError:
        raise ParseError(
            f"{path}: expected a number near byte {pos}, got {tok[:20]!r}"
        ) from None


# --------------------------------------------------------------------------
# PFM


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM into a float32 (H, W) array (top-down rows)."""
    buf = Path(path).read_bytes()
    magic, pos = _next_token(buf, 0, path)
    if magic == b"PF":
        raise ParseError(f"{path}: color PFM ('PF') where a grayscale map ('Pf') is required")
    if magic != b"Pf":
        raise ParseError(f"{path}: not a PFM file (magic {magic[:4]!r} at byte 0)")
    w_f, pos = _token_float(buf, pos, path)
    h_f, pos = _token_float(buf, pos, path)
    scale, pos = _token_float(buf, pos, path)
    W, H = int(w_f), int(h_f)
    if W <= 0 or H <= 0:
        raise ParseError(f"{path}: bad dimensions {W}x{H}")
    if scale == 0:
        raise ParseError(f"{path}: scale must be nonzero")
    pos += 1  # exactly one whitespace byte separates header and payload
    need = W * H * 4
    if len(buf) - pos < need:
        raise ParseError(
            f"{path}: truncated payload at byte {len(buf)} (need {pos + need} bytes)"
        )
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=W * H, offset=pos)
    return np.flipud(data.reshape(H, W)).astype(np.float32)  # PFM rows are bottom-up


def write_pfm(path, data: np.ndarray) -> None:
    """Write a float32 grayscale PFM, little-endian (scale -1.0)."""
    a = np.asarray(data, dtype=np.float32)
    if a.ndim != 2:
        raise ContractError(f"PFM payload must be 2-D, got shape {a.shape}")
    H, W = a.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (W, H))
        f.write(np.flipud(a).astype("<f4").tobytes())


def read_depth(path) -> DepthMap:
    """Read a PFM as a depth map; NaN/inf and non-positive values are invalid."""
    raw = read_pfm(path).astype(np.float64)
    finite = np.isfinite(raw)
    return DepthMap(np.where(finite, raw, 0.0), finite)


def write_depth(path, depth: DepthMap) -> None:
    """Write a depth map as PFM; invalid pixels are stored as NaN."""
    write_pfm(path, np.where(depth.valid, depth.data, np.nan).astype(np.float32))


def read_confidence(path) -> np.ndarray:
    """Read a PFM as a confidence map in [0, 1]; non-finite reads as 0."""
    raw = read_pfm(path).astype(np.float64)
    conf = np.where(np.isfinite(raw), raw, 0.0)
    if conf.min() < 0.0 or conf.max() > 1.0:
        raise ParseError(f"{path}: confidence values outside [0, 1]")
    return conf


# --------------------------------------------------------------------------
# MVSNet camera text files


def read_camera(path, image_size: tuple[int, int], depth_count: int = DEFAULT_DEPTH_COUNT) -> Camera:
    """Parse an MVSNet camera file: extrinsic 4x4, intrinsic 3x3, depth line.

    The final line is ``d_min interval [count [d_max]]``; when d_max is
    absent it is reconstructed as ``d_min + interval * count`` (count
    defaulting to ``depth_count``). ``image_size`` comes from the paired
    image or depth map since the format does not store it.
    """
    buf = Path(path).read_bytes()
    tok, pos = _next_token(buf, 0, path)
    if tok.lower() != b"extrinsic":
        raise ParseError(f"{path}: missing 'extrinsic' section (got {tok[:20]!r})")
    T = np.empty(16)
    for i in range(16):
        T[i], pos = _token_float(buf, pos, path)
    tok, pos = _next_token(buf, pos, path)
    if tok.lower() != b"intrinsic":
        raise ParseError(f"{path}: missing 'intrinsic' section (got {tok[:20]!r})")
    K = np.empty(9)
    for i in range(9):
        K[i], pos = _token_float(buf, pos, path)

    tail = []
    while True:
        try:
            v, pos = _token_float(buf, pos, path)
        except ParseError:
            break
        tail.append(v)
    if len(tail) < 2 or len(tail) > 4:
        raise ParseError(f"{path}: depth line needs 2-4 numbers, got {len(tail)}")
    d_min, interval = tail[0], tail[1]
    if len(tail) == 4:
        d_max = tail[3]
    else:
        count = tail[2] if len(tail) == 3 else depth_count
        d_max = d_min + interval * count
    return Camera(
        K=K.reshape(3, 3), T=T.reshape(4, 4),
        image_size=image_size, depth_range=(d_min, d_max),
    )


def write_camera(path, cam: Camera, depth_count: int = DEFAULT_DEPTH_COUNT) -> None:
    """Write the MVSNet camera format with full float64 precision."""
    d_min, d_max = cam.depth_range
    interval = (d_max - d_min) / depth_count
    lines = ["extrinsic"]
    lines += [" ".join("%.17g" % v for v in row) for row in cam.T]
    lines.append("")
    lines.append("intrinsic")
    lines += [" ".join("%.17g" % v for v in row) for row in cam.K]
    lines.append("")
    lines.append("%.17g %.17g %d %.17g" % (d_min, interval, depth_count, d_max))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# --------------------------------------------------------------------------
# pair.txt


def read_pair(path) -> dict[int, list[tuple[int, float]]]:
    """Read MVSNet pair.txt: per view, the scored source list."""
    buf = Path(path).read_bytes()
    v, pos = _token_float(buf, 0, path)
    n = int(v)
    out: dict[int, list[tuple[int, float]]] = {}
    for _ in range(n):
        v, pos = _token_float(buf, pos, path)
        ref = int(v)
        v, pos = _token_float(buf, pos, path)
        k = int(v)
        entries = []
        for _ in range(k):
            sid, pos = _token_float(buf, pos, path)
            score, pos = _token_float(buf, pos, path)
            entries.append((int(sid), float(score)))
        out[ref] = entries
    return out


def write_pair(path, pairs: dict[int, list[tuple[int, float]]]) -> None:
    lines = [str(len(pairs))]
    for ref in sorted(pairs):
        lines.append(str(ref))
        entries = pairs[ref]
        lines.append(
            " ".join([str(len(entries))] + ["%d %.9g" % (sid, sc) for sid, sc in entries])
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# --------------------------------------------------------------------------
# Images and masks


def write_ppm(path, img) -> None:
    """Write an image as binary PPM (P6, maxval 255)."""
    a = ImageGrid.as_grid(img).data
    if a.shape[2] == 1:
        a = np.repeat(a, 3, axis=2)
    b = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    H, W = b.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (W, H))
        f.write(b.tobytes())


def read_ppm(path) -> ImageGrid:
    buf = Path(path).read_bytes()
    magic, pos = _next_token(buf, 0, path)
    if magic != b"P6":
        raise ParseError(f"{path}: not a binary PPM (magic {magic[:4]!r})")
    w, pos = _token_float(buf, pos, path)
    h, pos = _token_float(buf, pos, path)
    maxval, pos = _token_float(buf, pos, path)
    if maxval != 255:
        raise ParseError(f"{path}: only maxval 255 is supported, got {maxval}")
    W, H = int(w), int(h)
    pos += 1
    need = W * H * 3
    if len(buf) - pos < need:
        raise ParseError(f"{path}: truncated payload at byte {len(buf)}")
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return ImageGrid(data.reshape(H, W, 3).astype(np.float64) / 255.0)


def write_pgm(path, mask: np.ndarray) -> None:
    """Write a boolean mask as binary PGM (P5): 255 = true, 0 = false."""
    m = np.asarray(mask)
    b = np.where(m.astype(bool), 255, 0).astype(np.uint8)
    H, W = b.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (W, H))
        f.write(b.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic, pos = _next_token(buf, 0, path)
    if magic != b"P5":
        raise ParseError(f"{path}: not a binary PGM (magic {magic[:4]!r})")
    w, pos = _token_float(buf, pos, path)
    h, pos = _token_float(buf, pos, path)
    maxval, pos = _token_float(buf, pos, path)
    W, H = int(w), int(h)
    pos += 1
    need = W * H
    if len(buf) - pos < need:
        raise ParseError(f"{path}: truncated payload at byte {len(buf)}")
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return data.reshape(H, W) > (maxval / 2)


def write_image(path, img) -> None:
    """Write PPM or PNG depending on the extension (PNG needs Pillow)."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ppm":
        write_ppm(path, img)
    elif ext == ".png":
        from PIL import Image

        a = ImageGrid.as_grid(img).data
        if a.shape[2] == 1:
            a = np.repeat(a, 3, axis=2)
        Image.fromarray(np.clip(np.rint(a * 255), 0, 255).astype(np.uint8)).save(path)
    else:
        raise ContractError(f"unsupported image extension {ext!r}")


def read_image(path) -> ImageGrid:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ppm":
        return read_ppm(path)
    if ext == ".png":
        from PIL import Image

        a = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
        return ImageGrid(a)
    raise ContractError(f"unsupported image extension {ext!r}")


# --------------------------------------------------------------------------
# Anchors


def write_anchors(path, anchors: np.ndarray, visibility: np.ndarray) -> None:
    """Anchor points with per-view visibility: 'A n', then 'x y z f0 f1 ...'."""
    A, n = visibility.shape
    lines = ["%d %d" % (A, n)]
    for p, flags in zip(anchors, visibility):
        lines.append(
            " ".join(["%.17g" % v for v in p] + [str(int(f)) for f in flags])
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_anchors(path) -> tuple[np.ndarray, np.ndarray]:
    buf = Path(path).read_bytes()
    a_f, pos = _token_float(buf, 0, path)
    n_f, pos = _token_float(buf, pos, path)
    A, n = int(a_f), int(n_f)
    anchors = np.empty((A, 3))
    vis = np.empty((A, n), dtype=bool)
    for i in range(A):
        for j in range(3):
            anchors[i, j], pos = _token_float(buf, pos, path)
        for j in range(n):
            v, pos = _token_float(buf, pos, path)
            vis[i, j] = bool(int(v))
    return anchors, vis


# --------------------------------------------------------------------------
# Dataset layout


@dataclass(frozen=True)
class DatasetLayout:
    """Directory convention shared by the CLI subcommands."""

    root: Path

    @property
    def images(self) -> Path:
        return self.root / "images"

    @property
    def depths(self) -> Path:
        return self.root / "depths"

    @property
    def confidences(self) -> Path:
        return self.root / "confidences"

    @property
    def masks(self) -> Path:
        return self.root / "masks"

    @property
    def cams(self) -> Path:
        return self.root / "cams"

    @property
    def pair_file(self) -> Path:
        return self.root / "pair.txt"

    @property
    def anchors_file(self) -> Path:
        return self.root / "anchors.txt"

    def view_ids(self) -> list[int]:
        if not self.cams.is_dir():
            raise FileNotFoundError(f"no cams/ directory under {self.root}")
        ids = []
        for name in os.listdir(self.cams):
            if name.endswith("_cam.txt"):
                ids.append(int(name[: -len("_cam.txt")]))
        if not ids:
            raise FileNotFoundError(f"no camera files in {self.cams}")
        return sorted(ids)

    def image_path(self, i: int) -> Path:
        for ext in (".ppm", ".png"):
            p = self.images / f"{i:08d}{ext}"
            if p.exists():
                return p
        return self.images / f"{i:08d}.ppm"

    def depth_path(self, i: int) -> Path:
        return self.depths / f"{i:08d}.pfm"

    def confidence_path(self, i: int) -> Path:
        return self.confidences / f"{i:08d}.pfm"

    def mask_path(self, i: int) -> Path:
        return self.masks / f"{i:08d}.pgm"

    def cam_path(self, i: int) -> Path:
        return self.cams / f"{i:08d}_cam.txt"


def write_scene(scene, root, image_format: str = "ppm") -> DatasetLayout:
    """Write a rendered scene in the directory layout the CLI consumes."""
    layout = DatasetLayout(Path(root))
    for d in (layout.images, layout.depths, layout.confidences, layout.cams):
        d.mkdir(parents=True, exist_ok=True)
    for i, view in enumerate(scene.views):
        write_image(layout.images / f"{i:08d}.{image_format}", view.image)
        write_depth(layout.depth_path(i), view.depth)
        write_pfm(layout.confidence_path(i), view.depth.valid.astype(np.float32))
        write_camera(layout.cam_path(i), view.camera)
    from .view_selection import compute_view_scores

    scores = compute_view_scores(scene.cameras, scene.anchors, scene.anchor_visibility)
    n = scores.n_views
    pairs = {}
    for ref in range(n):
        order = sorted((j for j in range(n) if j != ref), key=lambda j: (-scores.score[ref, j], j))
        pairs[ref] = [(j, scores.score[ref, j]) for j in order]
    write_pair(layout.pair_file, pairs)
    write_anchors(layout.anchors_file, scene.anchors, scene.anchor_visibility)
    return layout


@dataclass(frozen=True)
class DatasetBundle:
    """All per-view data loaded from a dataset directory."""

    images: list[ImageGrid]
    depths: list[DepthMap]
    confidences: list[np.ndarray]
    cameras: list[Camera]
    pairs: dict[int, list[tuple[int, float]]]


def load_dataset(root, with_images: bool = True) -> DatasetBundle:
    layout = DatasetLayout(Path(root))
    ids = layout.view_ids()
    if ids != list(range(len(ids))):
        raise ContractError(f"view ids must be dense starting at 0, got {ids}")
    depths = [read_depth(layout.depth_path(i)) for i in ids]
    images = []
    confidences = []
    cameras = []
    for i in ids:
        H, W = depths[i].shape
        cameras.append(read_camera(layout.cam_path(i), image_size=(H, W)))
        p = layout.confidence_path(i)
        confidences.append(read_confidence(p) if p.exists() else np.ones((H, W)))
        if with_images:
            images.append(read_image(layout.image_path(i)))
    pairs = read_pair(layout.pair_file) if layout.pair_file.exists() else {}
    return DatasetBundle(images, depths, confidences, cameras, pairs)
