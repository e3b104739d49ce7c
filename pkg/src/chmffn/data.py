"""Hyperspectral cube I/O, normalization, patch extraction, stratified
splitting, and seeded synthetic scene generation.

On-disk format: a JSON header {height, width, bands, dtype, order, byte_order}
next to a raw data file. Cubes are little-endian float32 in band-sequential
order (all of band 0, then band 1, ...); ground truth is a single-band
unsigned-byte raster of 0/1. The header's optional "data" field names the data
file; otherwise it is the header path with .json swapped for .bin.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Rng
from .errors import DataError

__all__ = [
    "HyperCube",
    "BiTemporalScene",
    "SplitIndex",
    "PatchPair",
    "Rect",
    "load_cube",
    "write_cube",
    "load_gt",
    "write_gt",
    "normalize_bands",
    "reflect_index",
    "extract_patch",
    "extract_patch_array",
    "pad_reflect",
    "stratified_split",
    "synth_scene",
    "synth_scene_details",
    "load_scene",
    "write_scene",
]

CUBE_DTYPE = "f32"
GT_DTYPE = "u8"
BSQ = "bsq"
LITTLE = "le"


@dataclass
class HyperCube:
    """In-memory cube: float32 array shaped (bands, height, width)."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise DataError(f"cube must be (bands, height, width), got {self.data.shape}")
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        if not np.isfinite(self.data).all():
            raise DataError("cube contains non-finite values")
        if min(self.data.shape) < 1:
            raise DataError(f"cube has an empty dimension: {self.data.shape}")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class BiTemporalScene:
    """Co-registered cube pair plus the 0/1 change raster."""

    t1: HyperCube
    t2: HyperCube
    gt: np.ndarray

    def __post_init__(self):
        if self.t1.data.shape != self.t2.data.shape:
            raise DataError(f"t1 {self.t1.data.shape} and t2 {self.t2.data.shape} differ")
        if self.gt.shape != (self.t1.height, self.t1.width):
            raise DataError(f"gt shape {self.gt.shape} does not match cubes")
        if self.gt.dtype != np.uint8:
            self.gt = self.gt.astype(np.uint8)
        bad = set(np.unique(self.gt)) - {0, 1}
        if bad:
            raise DataError(f"gt values must be 0/1, found {sorted(bad)}")


@dataclass
class SplitIndex:
    """Row/col coordinates of the train and test pixels."""

    train: np.ndarray
    test: np.ndarray
    ratio: float
    seed: int


@dataclass
class PatchPair:
    """One training/eval sample: co-located patches from both dates."""

    p1: np.ndarray
    p2: np.ndarray
    label: int
    row: int
    col: int


@dataclass(frozen=True)
class Rect:
    """Half-open rectangle [row0, row1) x [col0, col1)."""

    row0: int
    row1: int
    col0: int
    col1: int

    @property
    def area(self) -> int:
        return max(0, self.row1 - self.row0) * max(0, self.col1 - self.col0)


# ---------------------------------------------------------------------------
# file I/O


def _read_header(header_path: str) -> dict:
    try:
        with open(header_path, "r", encoding="utf-8") as fh:
            header = json.load(fh)
    except FileNotFoundError as e:
        raise DataError(f"header not found: {header_path}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"header is not valid JSON: {header_path}: {e}") from e
    for key in ("height", "width", "bands", "dtype", "order", "byte_order"):
        if key not in header:
            raise DataError(f"header missing '{key}': {header_path}")
    if header["order"] != BSQ:
        raise DataError(f"unsupported sample order {header['order']!r} (only '{BSQ}')")
    if header["byte_order"] != LITTLE:
        raise DataError(f"unsupported byte order {header['byte_order']!r} (only '{LITTLE}')")
    for key in ("height", "width", "bands"):
        if not isinstance(header[key], int) or header[key] < 1:
            raise DataError(f"header '{key}' must be a positive integer: {header_path}")
    return header


def _resolve_data_path(header_path: str, header: dict, data_path: Optional[str]) -> str:
    if data_path is not None:
        return data_path
    if "data" in header:
        return os.path.join(os.path.dirname(header_path), header["data"])
    root, _ = os.path.splitext(header_path)
    return root + ".bin"


def _read_raw(path: str, expected_bytes: int) -> bytes:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError as e:
        raise DataError(f"data file not found: {path}") from e
    if len(raw) != expected_bytes:
        raise DataError(f"data file {path} holds {len(raw)} bytes, expected {expected_bytes}")
    return raw


def load_cube(header_path: str, data_path: Optional[str] = None) -> HyperCube:
    """Load a float32 BSQ cube described by a JSON header."""
    header = _read_header(header_path)
    if header["dtype"] != CUBE_DTYPE:
        raise DataError(f"cube dtype must be '{CUBE_DTYPE}', got {header['dtype']!r}")
    b, h, w = header["bands"], header["height"], header["width"]
    raw = _read_raw(_resolve_data_path(header_path, header, data_path), 4 * b * h * w)
    arr = np.frombuffer(raw, dtype="<f4").reshape(b, h, w).copy()
    if not np.isfinite(arr).all():
        raise DataError(f"cube contains non-finite values: {header_path}")
    return HyperCube(arr)


def write_cube(cube: HyperCube, header_path: str, data_path: Optional[str] = None) -> None:
    if data_path is None:
        root, _ = os.path.splitext(header_path)
        data_path = root + ".bin"
    header = {
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "dtype": CUBE_DTYPE,
        "order": BSQ,
        "byte_order": LITTLE,
        "data": os.path.basename(data_path),
    }
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(data_path, "wb") as fh:
        fh.write(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())


def load_gt(header_path: str, data_path: Optional[str] = None) -> np.ndarray:
    """Load a 0/1 uint8 change raster described by a JSON header."""
    header = _read_header(header_path)
    if header["dtype"] != GT_DTYPE:
        raise DataError(f"gt dtype must be '{GT_DTYPE}', got {header['dtype']!r}")
    if header["bands"] != 1:
        raise DataError(f"gt must be single-band, got {header['bands']}")
    h, w = header["height"], header["width"]
    raw = _read_raw(_resolve_data_path(header_path, header, data_path), h * w)
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
    bad = set(np.unique(arr)) - {0, 1}
    if bad:
        raise DataError(f"gt values must be 0/1, found {sorted(bad)}")
    return arr


def write_gt(gt: np.ndarray, header_path: str, data_path: Optional[str] = None) -> None:
    if gt.ndim != 2:
        raise DataError(f"gt must be 2-d, got {gt.shape}")
    if data_path is None:
        root, _ = os.path.splitext(header_path)
        data_path = root + ".bin"
    header = {
        "height": int(gt.shape[0]),
        "width": int(gt.shape[1]),
        "bands": 1,
        "dtype": GT_DTYPE,
        "order": BSQ,
        "byte_order": LITTLE,
        "data": os.path.basename(data_path),
    }
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(data_path, "wb") as fh:
        fh.write(np.ascontiguousarray(gt, dtype=np.uint8).tobytes())


def load_scene(t1_header: str, t2_header: str, gt_header: str) -> BiTemporalScene:
    return BiTemporalScene(load_cube(t1_header), load_cube(t2_header), load_gt(gt_header))


def write_scene(scene: BiTemporalScene, out_dir: str) -> dict:
    """Write t1/t2/gt under ``out_dir``; returns the three header paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "t1": os.path.join(out_dir, "t1.json"),
        "t2": os.path.join(out_dir, "t2.json"),
        "gt": os.path.join(out_dir, "gt.json"),
    }
    write_cube(scene.t1, paths["t1"])
    write_cube(scene.t2, paths["t2"])
    write_gt(scene.gt, paths["gt"])
    return paths


# ---------------------------------------------------------------------------
# normalization and patches


def normalize_bands(cube: HyperCube) -> HyperCube:
    """Min-max rescale each band to [0, 1] independently; constant bands map
    to all zeros. Applying it twice equals applying it once, bit for bit."""
    data = cube.data.astype(np.float32, copy=True)
    lo = data.min(axis=(1, 2), keepdims=True)
    hi = data.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    flat = (span == 0)
    span = np.where(flat, np.float32(1.0), span)
    out = (data - lo) / span
    out = np.where(np.broadcast_to(flat, out.shape), np.float32(0.0), out)
    return HyperCube(out)


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Map arbitrary integer indices into [0, n) by mirror reflection without
    repeating the edge sample; a length-1 axis always maps to 0."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    wrapped = np.abs(idx) % period
    return np.where(wrapped >= n, period - wrapped, wrapped)


def pad_reflect(arr: np.ndarray, pad: int) -> np.ndarray:
    """Reflection-pad the two trailing spatial axes of (bands, h, w) by ``pad``."""
    h, w = arr.shape[-2], arr.shape[-1]
    ri = reflect_index(np.arange(-pad, h + pad), h)
    ci = reflect_index(np.arange(-pad, w + pad), w)
    return arr[..., ri[:, None], ci[None, :]]


def extract_patch_array(data: np.ndarray, row: int, col: int, patch: int) -> np.ndarray:
    """Patch of (bands, patch, patch) centered on (row, col) with mirrored
    out-of-bounds samples; the center element is always the pixel itself."""
    if patch < 1 or patch % 2 == 0:
        raise DataError(f"patch must be odd and positive, got {patch}")
    _, h, w = data.shape
    if not (0 <= row < h and 0 <= col < w):
        raise DataError(f"center ({row},{col}) outside {h}x{w} image")
    half = patch // 2
    ri = reflect_index(np.arange(row - half, row + half + 1), h)
    ci = reflect_index(np.arange(col - half, col + half + 1), w)
    return data[:, ri[:, None], ci[None, :]]


def extract_patch(scene: BiTemporalScene, row: int, col: int, patch: int) -> PatchPair:
    return PatchPair(
        p1=extract_patch_array(scene.t1.data, row, col, patch).astype(np.float64),
        p2=extract_patch_array(scene.t2.data, row, col, patch).astype(np.float64),
        label=int(scene.gt[row, col]),
        row=row,
        col=col,
    )


# ---------------------------------------------------------------------------
# splitting


def stratified_split(gt: np.ndarray, ratio: float, seed: int, allow_empty_train: bool = False) -> SplitIndex:
    """Draw floor(ratio * count) training pixels from each class uniformly at
    random; everything else becomes test. Requires both classes present, and by
    default rejects a ratio so small that a class contributes no training pixels."""
    if not (0.0 < ratio < 1.0):
        raise DataError(f"split ratio must lie in (0,1), got {ratio}")
    gt = np.asarray(gt)
    rng = Rng(seed)
    train_parts, test_parts = [], []
    for value in (1, 0):
        coords = np.argwhere(gt == value)
        if coords.shape[0] == 0:
            raise DataError(f"class {value} has no pixels; cannot stratify")
        take = int(ratio * coords.shape[0])
        if take == 0 and not allow_empty_train:
            raise DataError(
                f"ratio {ratio} yields zero training pixels for class {value} ({coords.shape[0]} available)"
            )
        order = rng.permutation(coords.shape[0])
        train_parts.append(coords[order[:take]])
        test_parts.append(coords[order[take:]])
    return SplitIndex(
        train=np.concatenate(train_parts, axis=0),
        test=np.concatenate(test_parts, axis=0),
        ratio=ratio,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# synthetic scenes


def _smooth_spectrum(rng: Rng, bands: int, n_bumps: int = 3, base: float = 0.2) -> np.ndarray:
    """Random smooth curve over the band axis: a small Gaussian mixture."""
    grid = np.arange(bands, dtype=np.float64)
    centers = rng.uniform(0, bands - 1 if bands > 1 else 1, n_bumps)
    widths = rng.uniform(max(1.0, bands / 8.0), max(2.0, bands / 3.0), n_bumps)
    amps = rng.uniform(0.2, 1.0, n_bumps)
    curve = np.full(bands, base)
    for c, w, a in zip(centers, widths, amps):
        curve += a * np.exp(-0.5 * ((grid - c) / w) ** 2)
    return curve


def synth_scene_details(
    height: int,
    width: int,
    bands: int,
    n_change_rects: int,
    noise_sigma: float,
    seed: int,
    n_materials: int = 4,
) -> tuple[BiTemporalScene, list[Rect]]:
    """Build a scene and return it together with the generated change rectangles.

    Date 1 tiles the image with blocky regions of smooth random spectra; date 2
    copies it, applies one smooth spectral shift per rectangle (clipped to the
    image), and adds Gaussian noise everywhere when noise_sigma > 0. The ground
    truth is the union of the rectangles, so with zero rectangles and zero noise
    the two dates are bit-identical.
    """
    if height < 1 or width < 1 or bands < 1:
        raise DataError(f"scene dims must be positive, got {height}x{width}x{bands}")
    if n_change_rects < 0:
        raise DataError(f"n_change_rects must be >= 0, got {n_change_rects}")
    if noise_sigma < 0:
        raise DataError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rng = Rng(seed)
    spectra = np.stack([_smooth_spectrum(rng, bands) for _ in range(n_materials)])
    block = 4
    hb = (height + block - 1) // block
    wb = (width + block - 1) // block
    ids = rng.integers(0, n_materials, (hb, wb))
    material = np.repeat(np.repeat(ids, block, axis=0), block, axis=1)[:height, :width]
    t1 = spectra[material].transpose(2, 0, 1)

    t2 = t1.copy()
    gt = np.zeros((height, width), dtype=np.uint8)
    rects: list[Rect] = []
    max_h = max(2, height // 2)
    max_w = max(2, width // 2)
    for _ in range(n_change_rects):
        r0 = int(rng.integers(0, height))
        c0 = int(rng.integers(0, width))
        rh = int(rng.integers(2, max_h + 1))
        rw = int(rng.integers(2, max_w + 1))
        rect = Rect(r0, min(height, r0 + rh), c0, min(width, c0 + rw))
        rects.append(rect)
        shift = _smooth_spectrum(rng, bands, base=0.0)
        shift *= 0.8 / max(1e-9, np.abs(shift).max())
        sign = 1.0 if rng.uniform(0.0, 1.0) < 0.5 else -1.0
        t2[:, rect.row0 : rect.row1, rect.col0 : rect.col1] += sign * shift[:, None, None]
        gt[rect.row0 : rect.row1, rect.col0 : rect.col1] = 1
    if noise_sigma > 0:
        t2 = t2 + rng.normal(0.0, noise_sigma, t2.shape)
    scene = BiTemporalScene(
        HyperCube(t1.astype(np.float32)),
        HyperCube(t2.astype(np.float32)),
        gt,
    )
    return scene, rects


def synth_scene(height: int, width: int, bands: int, n_change_rects: int, noise_sigma: float, seed: int) -> BiTemporalScene:
    """Seeded synthetic bi-temporal scene; see synth_scene_details."""
    return synth_scene_details(height, width, bands, n_change_rects, noise_sigma, seed)[0]
