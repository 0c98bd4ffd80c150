"""
Range-code the quantized anchor latents.

The hyper-latent is coded first with one table per channel taken from the
factorized density; the main latent follows with one discretised-Gaussian
table per element, parameterised from the (decoded) hyper-latent.  Both
streams visit elements in C order and clamp symbols to ``SUPPORT``.
"""
from __future__ import annotations

import logging

import numpy as np
import torch

from src.codec.anchor_codec import AnchorCodec
from src.codec.range_coder import RangeDecoder, RangeEncoder, gaussian_pmf, pmf_to_cum
from src.errors import ShapeError

logger = logging.getLogger(__name__)

SUPPORT: tuple[int, int] = (-128, 127)
_CHUNK = 4096


def _clamp_symbols(values: torch.Tensor) -> np.ndarray:
    lower, upper = SUPPORT
    symbols = torch.round(values).to(torch.int64)
    clipped = int(((symbols < lower) | (symbols > upper)).sum())
    if clipped:
        logger.debug("[codec] %d symbols clamped to [%d, %d]", clipped, lower, upper)
    return symbols.clamp(lower, upper).cpu().numpy()


def _hyper_cum(codec: AnchorCodec) -> np.ndarray:
    return pmf_to_cum(codec.hyper_density.pmf_table(*SUPPORT))


def _gaussian_cums(means: np.ndarray, scales: np.ndarray):
    for start in range(0, means.size, _CHUNK):
        stop = min(start + _CHUNK, means.size)
        yield start, pmf_to_cum(gaussian_pmf(means[start:stop], scales[start:stop], *SUPPORT))


@torch.no_grad()
def encode_streams(codec: AnchorCodec, y_q: torch.Tensor, h_q: torch.Tensor) -> tuple[bytes, bytes]:
    """Returns ``(hyper_payload, latent_payload)`` for a single image."""
    if y_q.shape[0] != 1 or h_q.shape[0] != 1:
        raise ShapeError("streams are coded one image at a time (batch size 1)")
    lower = SUPPORT[0]

    h_sym = _clamp_symbols(h_q)[0]
    hyper_cum = _hyper_cum(codec)
    enc = RangeEncoder()
    for c in range(h_sym.shape[0]):
        for s in h_sym[c].ravel():
            enc.encode(int(s), hyper_cum[c], lower)
    hyper_payload = enc.finish()

    h_coded = torch.from_numpy(h_sym[None]).to(h_q.dtype).to(h_q.device)
    params = codec.entropy_parameters(h_coded)
    means = params.means[0].double().cpu().numpy().ravel()
    scales = params.scales[0].double().cpu().numpy().ravel()
    y_sym = _clamp_symbols(y_q)[0].ravel()
    enc = RangeEncoder()
    for start, cums in _gaussian_cums(means, scales):
        for offset, row in enumerate(cums):
            enc.encode(int(y_sym[start + offset]), row, lower)
    latent_payload = enc.finish()
    return hyper_payload, latent_payload


@torch.no_grad()
def decode_streams(
    codec: AnchorCodec,
    hyper_payload: bytes,
    latent_payload: bytes,
    image_size: tuple[int, int],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Inverse of ``encode_streams``; *image_size* is ``(height, width)``."""
    height, width = image_size
    lower = SUPPORT[0]
    device = next(codec.parameters()).device
    dtype = next(codec.parameters()).dtype

    h_shape = (codec.hyper_channels, height // 64, width // 64)
    hyper_cum = _hyper_cum(codec)
    dec = RangeDecoder(hyper_payload)
    per_channel = h_shape[1] * h_shape[2]
    h_sym = np.array(
        [dec.decode(hyper_cum[c], lower) for c in range(h_shape[0]) for _ in range(per_channel)],
        dtype=np.int64,
    ).reshape(h_shape)
    dec.finish()
    h_q = torch.from_numpy(h_sym[None]).to(dtype).to(device)

    params = codec.entropy_parameters(h_q)
    means = params.means[0].double().cpu().numpy().ravel()
    scales = params.scales[0].double().cpu().numpy().ravel()
    dec = RangeDecoder(latent_payload)
    y_sym = np.empty(means.size, dtype=np.int64)
    for start, cums in _gaussian_cums(means, scales):
        for offset, row in enumerate(cums):
            y_sym[start + offset] = dec.decode(row, lower)
    dec.finish()
    y_shape = (1, codec.anchor_channels, height // 16, width // 16)
    y_q = torch.from_numpy(y_sym.reshape(y_shape)).to(dtype).to(device)
    return y_q, h_q
