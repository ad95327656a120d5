"""Image file I/O: loading, resizing, mask decoding, PNG export."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor

from .exceptions import LoadError


def load_image(path, size: int) -> Tensor:
    """Decode an image to a (3, size, size) float tensor in [0, 1].

    Grayscale inputs are expanded to 3 identical channels; resizing is
    bilinear.
    """
    try:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((size, size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, ValueError) as e:
        raise LoadError(f"cannot read image '{path}': {e}") from e
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def load_mask(path, size: int) -> Tensor:
    """Decode an 8-bit grayscale mask to {0, 1}: white (>=128) maps to 1."""
    try:
        with Image.open(path) as im:
            im = im.convert("L").resize((size, size), Image.NEAREST)
            arr = np.asarray(im)
    except (OSError, ValueError) as e:
        raise LoadError(f"cannot read mask '{path}': {e}") from e
    return torch.from_numpy((arr >= 128).astype(np.float32))


def save_image(image: Tensor, path) -> None:
    """Write a (3, H, W) [0, 1] tensor as a lossless 8-bit RGB PNG."""
    arr = image.detach().clamp(0, 1).mul(255).round().byte()
    arr = arr.permute(1, 2, 0).cpu().numpy()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
