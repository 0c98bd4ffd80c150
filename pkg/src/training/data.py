"""
Image folders and seeded random-crop batching.

Training crops are square with a side drawn uniformly from the multiples of
64 inside ``[crop_min, crop_max]`` (capped by the smallest training image);
all crops of one batch share the side.  Validation uses deterministic
centre crops.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import torch

from src.config import DataSection
from src.errors import ConfigurationError, ImageReadError
from src.pipeline.image_io import center_crop_to_multiple, list_images, load_image

logger = logging.getLogger(__name__)

CROP_MULTIPLE = 64


class ImageFolder:
    """Every PNG/PPM under one directory, decoded once and held in memory."""

    def __init__(self, directory: Path, *, limit: int | None = None) -> None:
        self.directory = Path(directory)
        self.images: list[torch.Tensor] = []
        self.names: list[str] = []
        for path in list_images(self.directory):
            img = load_image(path)
            if min(img.shape[-2:]) < CROP_MULTIPLE:
                logger.warning(
                    "[data] skipping %s: %dx%d is below %d px",
                    path.name, img.shape[-2], img.shape[-1], CROP_MULTIPLE,
                )
                continue
            self.images.append(img[0])
            self.names.append(path.name)
            if limit is not None and len(self.images) >= limit:
                break
        if not self.images:
            raise ImageReadError(f"no usable images in {self.directory}")
        logger.info("[data] %d image(s) from %s", len(self.images), self.directory)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def min_side(self) -> int:
        return min(min(img.shape[-2:]) for img in self.images)


def crop_sides(crop_min: int, crop_max: int, limit: int | None = None) -> list[int]:
    hi = crop_max if limit is None else min(crop_max, limit)
    sides = [s for s in range(crop_min, hi + 1) if s % CROP_MULTIPLE == 0]
    if not sides:
        raise ConfigurationError(
            f"no multiple of {CROP_MULTIPLE} in [{crop_min}, {hi}] for random crops"
        )
    return sides


@dataclass
class CropSampler:
    """Infinite stream of ``B x 3 x S x S`` batches driven by one generator."""

    folder: ImageFolder
    data: DataSection
    seed: int

    def __post_init__(self) -> None:
        self.sides = crop_sides(self.data.crop_min, self.data.crop_max, self.folder.min_side)
        self.generator = torch.Generator().manual_seed(self.seed)

    def _randint(self, high: int) -> int:
        return int(torch.randint(high, (1,), generator=self.generator))

    def batch(self) -> torch.Tensor:
        side = self.sides[self._randint(len(self.sides))]
        crops = []
        for _ in range(self.data.batch_size):
            img = self.folder.images[self._randint(len(self.folder))]
            h, w = img.shape[-2:]
            top = self._randint(h - side + 1)
            left = self._randint(w - side + 1)
            crops.append(img[:, top : top + side, left : left + side])
        return torch.stack(crops)

    def __iter__(self) -> Iterator[torch.Tensor]:
        while True:
            yield self.batch()


def validation_batches(folder: ImageFolder) -> list[torch.Tensor]:
    """One ``1 x 3 x H x W`` tensor per image, centre-cropped to a multiple of 64."""
    return [
        center_crop_to_multiple(img.unsqueeze(0), CROP_MULTIPLE, name=name)
        for img, name in zip(folder.images, folder.names)
    ]
