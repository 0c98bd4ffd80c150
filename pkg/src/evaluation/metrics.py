"""
Distortion metrics.

``msssim`` uses the Gaussian-window SSIM kernel of ``pytorch_msssim`` but
picks its own number of dyadic scales so that small crops still get a value:
the largest ``L <= 5`` with ``min(H, W) > 10 * 2**(L - 1)``, with the
standard weights renormalised over the first ``L`` scales.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
# private helpers; signatures checked against the pinned pytorch-msssim 1.0.x
from pytorch_msssim.ssim import _fspecial_gauss_1d, _ssim

from src.errors import ShapeError

PSNR_CAP_DB = 100.0
MSSSIM_WEIGHTS: tuple[float, ...] = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WIN_SIZE = 11
_WIN_SIGMA = 1.5


def _check_pair(x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"metric inputs differ in shape: {tuple(x.shape)} vs {tuple(y.shape)}")


def psnr(x: torch.Tensor, y: torch.Tensor) -> float:
    _check_pair(x, y)
    mse = float(torch.mean((x.double() - y.double()) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def msssim_levels(height: int, width: int) -> int:
    """
    Scales that fit the short side.  Mirrors pytorch_msssim.ms_ssim's own
    assert, ``min(H, W) > (win_size - 1) * 2**(levels - 1)`` with an 11-tap
    window, so a 160 px side gets 4 scales rather than 5.
    """
    side = min(height, width)
    levels = 0
    for level in range(1, len(MSSSIM_WEIGHTS) + 1):
        if side > 10 * 2 ** (level - 1):
            levels = level
    if levels == 0:
        raise ShapeError(f"{height}x{width} is too small for a single MS-SSIM scale")
    return levels


def msssim(x: torch.Tensor, y: torch.Tensor) -> float:
    _check_pair(x, y)
    if x.ndim == 3:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    levels = msssim_levels(*x.shape[-2:])
    weights = torch.tensor(MSSSIM_WEIGHTS[:levels], dtype=torch.float64)
    weights = (weights / weights.sum()).to(x.dtype)

    win = _fspecial_gauss_1d(_WIN_SIZE, _WIN_SIGMA).repeat([x.shape[1], 1, 1, 1])
    mcs = []
    ssim_per_channel = None
    for level in range(levels):
        ssim_per_channel, cs = _ssim(x, y, data_range=1.0, win=win, size_average=False)
        if level < levels - 1:
            mcs.append(torch.relu(cs))
            padding = [s % 2 for s in x.shape[2:]]
            x = F.avg_pool2d(x, kernel_size=2, padding=padding)
            y = F.avg_pool2d(y, kernel_size=2, padding=padding)
    stacked = torch.stack(mcs + [torch.relu(ssim_per_channel)], dim=0)
    value = torch.prod(stacked ** weights.view(-1, 1, 1), dim=0)
    return float(value.mean())
