#!/usr/bin/env python3
"""
Synthetic perturbations of test images: random pixel corruption and random block occlusion.

Both act on 8-bit pixels before normalization and return the perturbation mask, so tests
and experiments know exactly which pixels were touched.
"""

import math
from typing import Tuple

import numpy as np

from coding_types import DomainError, floor_fraction
from image_io import GrayImage


def _check_fraction(fraction: float, upper_inclusive: bool = True) -> None:
    ok = 0.0 <= fraction <= 1.0 if upper_inclusive else 0.0 <= fraction < 1.0
    if not ok:
        raise DomainError(f'fraction out of range: {fraction}')


def corrupt_pixels(img: GrayImage, fraction: float, rng: np.random.Generator) -> Tuple[GrayImage, np.ndarray]:
    """
    Replace floor(fraction * area) distinct random pixels by uniform values in [0, 255].

    Returns:
        (corrupted image, boolean mask of shape (height, width))
    """
    _check_fraction(fraction)
    count = floor_fraction(fraction, img.size)
    mask = np.zeros(img.size, dtype=bool)
    pixels = img.pixels.ravel().copy()
    if count:
        chosen = rng.choice(img.size, size=count, replace=False)
        pixels[chosen] = rng.integers(0, 256, size=count, dtype=np.int64).astype(np.uint8)
        mask[chosen] = True
    shape = (img.height, img.width)
    return GrayImage(pixels.reshape(shape)), mask.reshape(shape)


def block_side(fraction: float, width: int, height: int) -> int:
    """Side of the square block covering about fraction of the image, clamped to fit."""
    side = int(math.floor(math.sqrt(fraction * width * height) + 0.5))
    return min(side, width, height)


def occlude_block(img: GrayImage, fraction: float, patch: GrayImage,
                  rng: np.random.Generator) -> Tuple[GrayImage, np.ndarray]:
    """
    Paste a square crop of an unrelated image at a random position.

    The block side is round(sqrt(fraction * area)); its top-left corner is uniform over all
    positions where the block fits entirely. The centre crop of the patch is used.

    Returns:
        (occluded image, boolean mask of shape (height, width))
    """
    _check_fraction(fraction, upper_inclusive=False)
    side = block_side(fraction, img.width, img.height)
    mask = np.zeros((img.height, img.width), dtype=bool)
    if side == 0:
        return img, mask
    if patch.height < side or patch.width < side:
        raise DomainError(f'occlusion patch {patch.width}x{patch.height} is smaller than the {side}x{side} block')

    top = int(rng.integers(0, img.height - side + 1))
    left = int(rng.integers(0, img.width - side + 1))
    crop_top = (patch.height - side) // 2
    crop_left = (patch.width - side) // 2
    pixels = img.pixels.copy()
    pixels[top:top + side, left:left + side] = patch.pixels[crop_top:crop_top + side, crop_left:crop_left + side]
    mask[top:top + side, left:left + side] = True
    return GrayImage(pixels), mask


def default_patch(size: int = 128) -> GrayImage:
    """
    The bundled unrelated occluder: a fixed high-contrast texture of rings over a checkerboard.

    Deterministic, so occlusion benchmarks do not depend on an external file.
    """
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    centre = (size - 1) / 2.0
    radius = np.hypot(rows - centre, cols - centre)
    rings = 0.5 + 0.5 * np.cos(radius * 0.7)
    checker = ((rows // 6 + cols // 6) % 2).astype(np.float64)
    values = 255.0 * (0.6 * rings + 0.4 * checker)
    return GrayImage(np.clip(np.rint(values), 0, 255).astype(np.uint8))
