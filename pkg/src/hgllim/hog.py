"""Pyramid gradient-orientation descriptor on a fixed 64x64 face patch.

The descriptor concatenates, coarse to fine, block-normalized orientation
histograms computed over square cells of 32, 16 and 8 pixels. Blocks are
2x2 cells with stride one cell, each flattened to 4 cells x 8 unsigned
orientation bins and L2-normalized, giving (1 + 9 + 49) * 32 = 1888 values.
Votes are magnitude weighted and bilinearly interpolated both across the two
nearest orientation bins and across the four nearest cells.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import parallel
from .errors import ContractError, DataError

__all__ = ["BoundingBox", "PATCH_SIZE", "CELL_SIZES", "N_BINS",
           "DESCRIPTOR_DIM", "preprocess", "phog", "extract", "extract_batch",
           "to_grayscale", "equalize", "resize_bilinear"]

PATCH_SIZE = 64
CELL_SIZES = (32, 16, 8)
N_BINS = 8
BLOCK_NORM_EPS = 1e-5
MIN_BOX_AREA = 4.0

DESCRIPTOR_DIM = sum((PATCH_SIZE // cell - 1) ** 2 for cell in CELL_SIZES) \
    * 4 * N_BINS
assert DESCRIPTOR_DIM == 1888

# Images are processed in fixed-size groups so batch extraction parallelizes
# while staying byte-identical for any worker count.
_BATCH_CHUNK = 16


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates; position is the top-left corner."""

    x: float
    y: float
    width: float
    height: float

    def __post_init__(self):
        vals = (self.x, self.y, self.width, self.height)
        if not all(np.isfinite(v) for v in vals):
            raise ContractError("bounding box has non-finite coordinates")
        if self.width <= 0.0 or self.height <= 0.0:
            raise ContractError("bounding box sides must be positive")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + 0.5 * self.width, self.y + 0.5 * self.height)

    @property
    def size(self) -> float:
        """Scalar box size: geometric mean of the sides."""
        return float(np.sqrt(self.width * self.height))

    def shifted(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + float(dx), self.y + float(dy),
                           self.width, self.height)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.width, self.height)


def to_grayscale(image) -> np.ndarray:
    """Float64 grayscale in [0, 1] from uint8/float, gray or RGB(A) input."""
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[2] in (3, 4):
        arr = arr[:, :, :3]
        if arr.dtype == np.uint8:
            arr = arr.astype(np.float64) / 255.0
        else:
            arr = arr.astype(np.float64)
        gray = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
    elif arr.ndim == 2:
        if arr.dtype == np.uint8:
            gray = arr.astype(np.float64) / 255.0
        else:
            gray = arr.astype(np.float64)
    else:
        raise DataError(f"unsupported image shape {arr.shape}")
    if not np.all(np.isfinite(gray)):
        raise DataError("image contains non-finite values")
    return gray


def _reflect_indices(idx: np.ndarray, size: int) -> np.ndarray:
    # Mirror reflection with edge repeat: ..., 1, 0 | 0, 1, ..., s-1 | s-1, ...
    period = 2 * size
    m = np.mod(idx, period)
    return np.where(m < size, m, period - 1 - m)


def crop_patch(gray: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Integer-pixel crop of the box; out-of-image parts are mirror-padded.

    Refuses boxes that do not touch the image at all or are degenerate
    (area below 4 square pixels).
    """
    height, width = gray.shape
    if box.width * box.height < MIN_BOX_AREA:
        raise DataError(
            f"bounding box area {box.width * box.height:.2f} px^2 is below "
            f"the minimum of {MIN_BOX_AREA:.0f}")
    x0 = int(np.floor(box.x + 0.5))
    y0 = int(np.floor(box.y + 0.5))
    w = max(1, int(np.floor(box.width + 0.5)))
    h = max(1, int(np.floor(box.height + 0.5)))
    if x0 >= width or y0 >= height or x0 + w <= 0 or y0 + h <= 0:
        raise DataError(
            f"bounding box {box.as_tuple()} does not intersect the "
            f"{width}x{height} image")
    rows = _reflect_indices(y0 + np.arange(h), height)
    cols = _reflect_indices(x0 + np.arange(w), width)
    return gray[np.ix_(rows, cols)]


def resize_bilinear(src: np.ndarray, out_h: int = PATCH_SIZE,
                    out_w: int = PATCH_SIZE) -> np.ndarray:
    """Bilinear resampling with half-pixel-centered coordinates."""
    h, w = src.shape
    ry = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    rx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ry).astype(int)
    x0 = np.floor(rx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ry - y0)[:, None]
    fx = (rx - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1.0 - fx) + src[np.ix_(y0, x1)] * fx
    bottom = src[np.ix_(y1, x0)] * (1.0 - fx) + src[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bottom * fy


def equalize(patch: np.ndarray) -> np.ndarray:
    """256-level histogram equalization; a constant patch passes through."""
    levels = np.clip(np.floor(patch * 255.0 + 0.5).astype(int), 0, 255)
    hist = np.bincount(levels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = int(cdf[cdf > 0][0])
    denom = levels.size - cdf_min
    if denom == 0:
        return patch.copy()
    lut = np.floor((cdf - cdf_min) * (255.0 / denom) + 0.5)
    return lut[levels] / 255.0


def preprocess(image, box: BoundingBox) -> np.ndarray:
    """Grayscale crop, resized to 64x64 and histogram equalized."""
    if not isinstance(box, BoundingBox):
        box = BoundingBox(*box)
    gray = to_grayscale(image)
    crop = crop_patch(gray, box)
    return equalize(resize_bilinear(crop))


def _cell_histograms(mag: np.ndarray, orient_bin: np.ndarray,
                     cell: int) -> np.ndarray:
    """Bilinear scatter of magnitude votes into an (n, n, bins) cell grid."""
    n = PATCH_SIZE // cell
    coords = (np.arange(PATCH_SIZE) + 0.5) / cell - 0.5
    c0 = np.floor(coords).astype(int)
    frac = coords - c0
    b0 = np.floor(orient_bin).astype(int)
    fb = orient_bin - b0
    bins = (np.mod(b0, N_BINS), np.mod(b0 + 1, N_BINS))
    bin_weights = (1.0 - fb, fb)
    hist = np.zeros(n * n * N_BINS)
    for rows, row_w in ((c0, 1.0 - frac), (c0 + 1, frac)):
        row_ok = (rows >= 0) & (rows < n)
        for cols, col_w in ((c0, 1.0 - frac), (c0 + 1, frac)):
            col_ok = (cols >= 0) & (cols < n)
            valid = row_ok[:, None] & col_ok[None, :]
            if not valid.any():
                continue
            cell_idx = (np.clip(rows, 0, n - 1)[:, None] * n
                        + np.clip(cols, 0, n - 1)[None, :])
            spatial_w = mag * row_w[:, None] * col_w[None, :]
            for b, bw in zip(bins, bin_weights):
                flat = cell_idx * N_BINS + b
                votes = spatial_w * bw
                hist += np.bincount(flat[valid].ravel(),
                                    weights=votes[valid].ravel(),
                                    minlength=n * n * N_BINS)
    return hist.reshape(n, n, N_BINS)


def phog(patch: np.ndarray) -> np.ndarray:
    """Pyramid descriptor of a preprocessed 64x64 patch."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (PATCH_SIZE, PATCH_SIZE):
        raise ContractError(
            f"patch must be {PATCH_SIZE}x{PATCH_SIZE}, got {patch.shape}")
    if not np.all(np.isfinite(patch)):
        raise ContractError("patch contains non-finite values")
    gx = np.empty_like(patch)
    gy = np.empty_like(patch)
    gx[:, 1:-1] = patch[:, 2:] - patch[:, :-2]
    gx[:, 0] = patch[:, 1] - patch[:, 0]
    gx[:, -1] = patch[:, -1] - patch[:, -2]
    gy[1:-1, :] = patch[2:, :] - patch[:-2, :]
    gy[0, :] = patch[1, :] - patch[0, :]
    gy[-1, :] = patch[-1, :] - patch[-2, :]
    mag = np.hypot(gx, gy)
    theta = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    # continuous bin coordinate; bin b is centered at (b + 0.5) * 22.5 deg
    orient_bin = theta * (N_BINS / 180.0) - 0.5
    pieces = []
    for cell in CELL_SIZES:
        hist = _cell_histograms(mag, orient_bin, cell)
        win = sliding_window_view(hist, (2, 2), axis=(0, 1))
        blocks = win.transpose(0, 1, 3, 4, 2).reshape(-1, 4 * N_BINS)
        norms = np.sqrt(np.einsum("bi,bi->b", blocks, blocks)
                        + BLOCK_NORM_EPS ** 2)
        pieces.append((blocks / norms[:, None]).ravel())
    return np.concatenate(pieces)


def extract(image, box: BoundingBox) -> np.ndarray:
    """Descriptor of one image/box pair."""
    return phog(preprocess(image, box))


def extract_batch(items, workers: int = 1) -> np.ndarray:
    """Descriptors for a sequence of (image, box) pairs, row per item."""
    items = list(items)
    n = len(items)
    if n == 0:
        return np.zeros((0, DESCRIPTOR_DIM))

    def block(sl: slice) -> np.ndarray:
        rows = [extract(image, box) for image, box in items[sl]]
        return np.vstack(rows)

    blocks = parallel.map_chunks(block, n, workers, chunk=_BATCH_CHUNK)
    return blocks[0] if len(blocks) == 1 else np.vstack(blocks)
