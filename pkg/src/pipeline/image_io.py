"""PNG / PPM image I/O via Pillow; tensors are 1 x 3 x H x W in [0, 1]."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from src.errors import ImageReadError, ShapeError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES: tuple[str, ...] = (".png", ".ppm")


def load_image(path: Path) -> torch.Tensor:
    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise ImageReadError(f"{path}: only PNG and PPM images are supported")
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageReadError(f"cannot decode {path}: {exc}") from exc
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).unsqueeze(0).float() / 255.0


def save_image(x: torch.Tensor, path: Path) -> Path:
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ShapeError("save_image writes one image at a time")
        x = x[0]
    arr = (x.detach().cpu().clamp(0.0, 1.0) * 255.0).round().to(torch.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.permute(1, 2, 0).numpy()).save(path, format="PNG")
    return path


def center_crop_to_multiple(x: torch.Tensor, multiple: int = 64, *, name: str = "image") -> torch.Tensor:
    h, w = x.shape[-2:]
    nh, nw = h - h % multiple, w - w % multiple
    if nh == 0 or nw == 0:
        raise ShapeError(f"{name} is {h}x{w}; need at least {multiple}x{multiple}")
    if (nh, nw) != (h, w):
        logger.warning(
            "[image-io] %s is %dx%d, not a multiple of %d; centre-cropping to %dx%d",
            name, h, w, multiple, nh, nw,
        )
        top, left = (h - nh) // 2, (w - nw) // 2
        x = x[..., top : top + nh, left : left + nw]
    return x


def list_images(directory: Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageReadError(f"image directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
