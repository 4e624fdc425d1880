"""Global scene descriptors for scene-similarity retrieval.

Two complementary views of a grayscale image, both computed on a 128x128
canonical resize:

* a Gabor-energy grid: 32 zero-mean complex Gabor filters (4 scales x 8
  orientations) applied by circular FFT convolution, with the magnitude
  response averaged over a 4x4 spatial grid (512 values);
* oriented-gradient histograms: 9 unsigned orientation bins over 8x8-pixel
  cells, 2x2-cell blocks at stride 1 with L2-hys normalization (8100 values).

The combined scene descriptor concatenates the two blocks after L2-normalizing
each, giving scale-free distances that weight both parts comparably.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import ndimage

from .validation import as_float_array

CANONICAL_SIZE = 128
GABOR_SCALES = 4
GABOR_ORIENTATIONS = 8
GABOR_GRID = 4
HOG_CELL = 8
HOG_BINS = 9
GIST_DIM = GABOR_SCALES * GABOR_ORIENTATIONS * GABOR_GRID * GABOR_GRID
_HOG_CELLS = CANONICAL_SIZE // HOG_CELL
HOG_DIM = (_HOG_CELLS - 1) * (_HOG_CELLS - 1) * 4 * HOG_BINS
SCENE_DIM = GIST_DIM + HOG_DIM


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment (constant in, constant out)."""
    image = as_float_array(image, "image", ndim=2)
    h, w = image.shape
    if (h, w) == (height, width):
        return image.copy()
    rows = (np.arange(height) + 0.5) * h / height - 0.5
    cols = (np.arange(width) + 0.5) * w / width - 0.5
    grid = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(image, grid, order=1, mode="nearest")


def _gabor_kernel(frequency: float, theta: float) -> np.ndarray:
    """Zero-mean complex Gabor kernel, L1-normalized by magnitude."""
    sigma = 0.56 / frequency
    half = int(min(CANONICAL_SIZE // 2 - 1, max(3, round(3.5 * sigma))))
    y, x = np.mgrid[-half:half + 1, -half:half + 1]
    envelope = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    carrier = np.exp(2j * np.pi * frequency * (x * np.cos(theta) + y * np.sin(theta)))
    kernel = envelope * carrier
    kernel -= kernel.mean()  # no response to constant input
    kernel /= np.abs(kernel).sum()
    return kernel


@lru_cache(maxsize=4)
def _gabor_bank(size: int) -> np.ndarray:
    """Frequency-domain transfer functions, shape (scales*orients, size, size)."""
    transfers = []
    for s in range(GABOR_SCALES):
        frequency = 0.25 / (2 ** s)
        for o in range(GABOR_ORIENTATIONS):
            theta = o * np.pi / GABOR_ORIENTATIONS
            kernel = _gabor_kernel(frequency, theta)
            canvas = np.zeros((size, size), dtype=complex)
            kh, kw = kernel.shape
            canvas[:kh, :kw] = kernel
            canvas = np.roll(canvas, (-(kh // 2), -(kw // 2)), axis=(0, 1))
            transfers.append(np.fft.fft2(canvas))
    bank = np.stack(transfers)
    bank.setflags(write=False)
    return bank


def gist_descriptor(image: np.ndarray) -> np.ndarray:
    """Gabor-energy grid descriptor, shape (512,), scale-major ordering."""
    img = resize_bilinear(image, CANONICAL_SIZE, CANONICAL_SIZE)
    spectrum = np.fft.fft2(img)
    bank = _gabor_bank(CANONICAL_SIZE)
    block = CANONICAL_SIZE // GABOR_GRID
    out = np.empty((bank.shape[0], GABOR_GRID, GABOR_GRID))
    for i, transfer in enumerate(bank):
        energy = np.abs(np.fft.ifft2(spectrum * transfer))
        out[i] = energy.reshape(GABOR_GRID, block, GABOR_GRID, block).mean(axis=(1, 3))
    return out.reshape(-1)


def hog_descriptor(image: np.ndarray) -> np.ndarray:
    """Unsigned oriented-gradient histogram descriptor, shape (8100,)."""
    img = resize_bilinear(image, CANONICAL_SIZE, CANONICAL_SIZE)
    gy, gx = np.gradient(img)
    magnitude = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((angle / np.pi * HOG_BINS).astype(int), HOG_BINS - 1)

    rows, cols = np.indices(img.shape)
    flat = ((rows // HOG_CELL) * _HOG_CELLS + (cols // HOG_CELL)) * HOG_BINS + bins
    hist = np.bincount(flat.ravel(), weights=magnitude.ravel(),
                       minlength=_HOG_CELLS * _HOG_CELLS * HOG_BINS)
    cells = hist.reshape(_HOG_CELLS, _HOG_CELLS, HOG_BINS)

    blocks = np.concatenate([cells[:-1, :-1], cells[:-1, 1:],
                             cells[1:, :-1], cells[1:, 1:]], axis=2)

    def _l2(v: np.ndarray) -> np.ndarray:
        norm = np.sqrt((v * v).sum(axis=2, keepdims=True))
        return v / np.maximum(norm, 1e-12)

    blocks = np.minimum(_l2(blocks), 0.2)  # L2-hys: normalize, clip, renormalize
    return _l2(blocks).reshape(-1)


def scene_descriptor(image: np.ndarray) -> np.ndarray:
    """Concatenated L2-normalized Gabor-energy and gradient-histogram blocks."""
    def _unit(v: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(v))
        return v / norm if norm > 0 else v

    return np.concatenate([_unit(gist_descriptor(image)),
                           _unit(hog_descriptor(image))])
