#!/usr/bin/env python3
"""
8-bit grayscale images: reading PGM (P5) and PNG, optional resize, writing maps back out.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image

from coding_types import DatasetError, DomainError, normalize


@dataclass(frozen=True)
class GrayImage:
    """Row-major 8-bit intensities; pixels has shape (height, width)."""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2 or pixels.size == 0:
            raise DomainError(f'gray image needs a non-empty 2-D array, got shape {pixels.shape}')
        if pixels.dtype != np.uint8:
            if np.any(pixels < 0) or np.any(pixels > 255):
                raise DomainError('gray image intensities must lie in [0, 255]')
            pixels = pixels.astype(np.uint8)
        pixels = pixels.copy()
        pixels.setflags(write=False)
        object.__setattr__(self, 'pixels', pixels)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def size(self) -> int:
        return self.width * self.height

    def flatten(self) -> np.ndarray:
        return self.pixels.astype(np.float64).ravel()

    def unit_vector(self) -> np.ndarray:
        """Row-major pixels scaled to unit l2 norm."""
        return normalize(self.flatten())


def read_image(path, size: Optional[Tuple[int, int]] = None) -> GrayImage:
    """
    Load a PGM or PNG file as 8-bit grayscale.

    Args:
        path: Image file
        size: Optional (width, height) to resize to (bilinear)
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f'image not found: {path}')
    try:
        with Image.open(path) as image:
            image = image.convert('L')
            if size is not None and image.size != tuple(size):
                image = image.resize(tuple(size), Image.Resampling.BILINEAR)
            return GrayImage(np.asarray(image, dtype=np.uint8))
    except (OSError, ValueError) as exc:
        raise DatasetError(f'cannot read image {path}: {exc}') from exc


def write_image(image: GrayImage, path) -> None:
    """Write as PGM (P5) or PNG depending on the suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image.pixels)).save(path)


def vector_to_image(values, height: int, width: int, scale: Optional[float] = None) -> GrayImage:
    """
    Render a length height*width vector as an image.

    With scale set the values are multiplied by it (weights in [0, 1] use 255);
    otherwise they are stretched to [0, 255].
    """
    values = np.asarray(values, dtype=np.float64).reshape(height, width)
    if scale is None:
        low, high = values.min(), values.max()
        values = (values - low) * (255.0 / (high - low)) if high > low else np.zeros_like(values)
    else:
        values = values * scale
    return GrayImage(np.clip(np.rint(values), 0, 255).astype(np.uint8))
