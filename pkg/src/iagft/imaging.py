"""Grayscale image I/O, 8x8 block tiling, and local moment maps.

Images are single-channel, 8-bit, stored as (height, width) uint8 arrays.
The native file format is binary PGM (P5, maxval 255); 8-bit grayscale PNG
is accepted on read. Color inputs are rejected rather than converted.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

BLOCK_SIZE = 8

# Local statistics window: 11x11 Gaussian, sigma 1.5, normalized to sum 1.
MOMENT_WINDOW = 11
MOMENT_SIGMA = 1.5


class FormatError(ValueError):
    """Unsupported or corrupt image file."""


@dataclass(eq=False)
class ImageGray:
    """Single-channel 8-bit image. `pixels` is a (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.pixels)
        if a.ndim != 2 or a.size == 0:
            raise ValueError(f"expected a non-empty 2-D pixel array, got shape {a.shape}")
        if a.dtype != np.uint8:
            if np.any((a < 0) | (a > 255)) or not np.issubdtype(a.dtype, np.integer):
                raise ValueError("pixel values must be integers in [0, 255]")
            a = a.astype(np.uint8)
        self.pixels = a

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def samples(self) -> np.ndarray:
        """Row-major flat view of the pixel values."""
        return self.pixels.reshape(-1)


@dataclass(eq=False)
class BlockGrid:
    """Image cut into raster-ordered 8x8 blocks, level-shifted by -128.

    `blocks` has shape (n_blocks, 64) in float64; padding (if any) replicates
    the last row/column so tile/assemble round-trips exactly.
    """

    blocks: np.ndarray
    width: int
    height: int
    padded_width: int
    padded_height: int
    block_size: int = BLOCK_SIZE


@dataclass(eq=False)
class LocalStatsMap:
    """Per-pixel Gaussian-weighted local mean and variance."""

    mu: np.ndarray
    var: np.ndarray


def load_image(path: str | os.PathLike) -> ImageGray:
    """Read a grayscale image from a P5 PGM or an 8-bit grayscale PNG.

    Raises FileNotFoundError if the path does not exist and FormatError for
    anything that is not 8-bit single-channel data.
    """
    path = os.fspath(path)
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"P5":
        return _parse_pgm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _load_png(path)
    if data[:2] in (b"P2", b"P3", b"P6"):
        raise FormatError(f"{path}: only binary PGM (P5) is supported")
    raise FormatError(f"{path}: unrecognized image format")


def save_image(img: ImageGray, path: str | os.PathLike) -> None:
    """Write `img` as a binary PGM (P5, maxval 255)."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(img.pixels.tobytes())


def _parse_pgm(data: bytes) -> ImageGray:
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        fields.append(data[start:pos])
    try:
        width, height, maxval = (int(t) for t in fields)
    except ValueError:
        raise FormatError("malformed PGM header") from None
    if width <= 0 or height <= 0:
        raise FormatError("PGM dimensions must be positive")
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval} (must be 255)")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos : pos + width * height]
    if len(payload) != width * height:
        raise FormatError("PGM payload shorter than header promises")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return ImageGray(pixels.copy())


def _load_png(path: str) -> ImageGray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode != "L":
            raise FormatError(
                f"{path}: PNG mode {im.mode!r} not supported (8-bit grayscale only)"
            )
        pixels = np.asarray(im, dtype=np.uint8)
    return ImageGray(pixels)


def _tile_array(a: np.ndarray, block_size: int = BLOCK_SIZE) -> tuple[np.ndarray, int, int]:
    """Pad by edge replication to block multiples and cut into raster-order blocks."""
    h, w = a.shape
    ph = -(-h // block_size) * block_size
    pw = -(-w // block_size) * block_size
    padded = np.pad(a, ((0, ph - h), (0, pw - w)), mode="edge")
    blocks = (
        padded.reshape(ph // block_size, block_size, pw // block_size, block_size)
        .swapaxes(1, 2)
        .reshape(-1, block_size * block_size)
    )
    return blocks, pw, ph


def _untile_array(blocks: np.ndarray, pw: int, ph: int, block_size: int = BLOCK_SIZE) -> np.ndarray:
    n_rows = ph // block_size
    n_cols = pw // block_size
    return (
        blocks.reshape(n_rows, n_cols, block_size, block_size)
        .swapaxes(1, 2)
        .reshape(ph, pw)
    )


def tile_blocks(img: ImageGray) -> BlockGrid:
    """Cut an image into 8x8 blocks in raster order.

    The image is padded to block multiples by replicating the last row and
    column, and every sample is level-shifted by -128 into [-128, 127].
    """
    blocks, pw, ph = _tile_array(img.pixels.astype(np.float64))
    return BlockGrid(blocks - 128.0, img.width, img.height, pw, ph)


def assemble(grid: BlockGrid) -> ImageGray:
    """Invert tile_blocks: undo the level shift, crop padding, clamp to [0, 255].

    Fractional values round half away from zero before clamping.
    """
    bs = grid.block_size
    if grid.padded_width % bs or grid.padded_height % bs:
        raise ValueError("padded dimensions are not block multiples")
    n_expect = (grid.padded_width // bs) * (grid.padded_height // bs)
    if grid.blocks.shape != (n_expect, bs * bs):
        raise ValueError(
            f"block array shape {grid.blocks.shape} inconsistent with geometry "
            f"{grid.padded_width}x{grid.padded_height}"
        )
    if not (grid.padded_width - bs < grid.width <= grid.padded_width):
        raise ValueError("stored width inconsistent with padded width")
    if not (grid.padded_height - bs < grid.height <= grid.padded_height):
        raise ValueError("stored height inconsistent with padded height")
    padded = _untile_array(grid.blocks, grid.padded_width, grid.padded_height, bs)
    vals = padded[: grid.height, : grid.width] + 128.0
    vals = np.copysign(np.floor(np.abs(vals) + 0.5), vals)
    return ImageGray(np.clip(vals, 0, 255).astype(np.uint8))


def gaussian_window(size: int = MOMENT_WINDOW, sigma: float = MOMENT_SIGMA) -> np.ndarray:
    """2-D Gaussian weights normalized to sum 1."""
    half = (size - 1) / 2
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def local_moments(img: ImageGray | np.ndarray) -> LocalStatsMap:
    """Gaussian-weighted local mean and variance at every pixel.

    Uses the 11x11, sigma 1.5 window with symmetric reflection at borders.
    Variance is clamped at zero against floating-point cancellation.
    """
    a = img.pixels if isinstance(img, ImageGray) else np.asarray(img)
    a = a.astype(np.float64)
    k = gaussian_window()
    mu = correlate(a, k, mode="reflect")
    ex2 = correlate(a * a, k, mode="reflect")
    var = np.maximum(ex2 - mu * mu, 0.0)
    return LocalStatsMap(mu=mu, var=var)
