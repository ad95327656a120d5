"""Grad-CAM attribution maps and user-specified target maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .backbone import ClassifierHandle, FeatureBundle, forward_with_features


@dataclass
class AttributionMap:
    """Spatial attribution map (H, W), max-normalized to [0, 1].

    All-zero maps are allowed and marked ``degenerate`` instead of being
    divided by zero.
    """

    values: Tensor
    degenerate: bool = False


def cam_from_bundle(bundle: FeatureBundle, layer: str, class_index: int,
                    out_size: tuple[int, int], channel_weights=None) -> AttributionMap:
    """Grad-CAM map from an existing forward bundle.

    Channel weights are the spatial mean of the class-logit gradient w.r.t.
    the layer activation and are detached, so backpropagating through the map
    stays first-order. The activation itself remains in the graph. Passing
    ``channel_weights`` reuses precomputed weights instead.
    """
    if layer not in bundle.activations:
        raise KeyError(f"layer '{layer}' missing from bundle")
    act = bundle.activations[layer]
    if channel_weights is None:
        logit = bundle.logits[0, class_index]
        grad = torch.autograd.grad(logit, act, retain_graph=True, create_graph=False)[0]
        weights = grad.mean(dim=(2, 3)).detach()
    else:
        weights = channel_weights.detach().reshape(1, -1)
    cam = F.relu((weights[:, :, None, None] * act).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam, size=out_size, mode="bilinear", align_corners=False)
    m = cam[0, 0]
    peak = m.max()
    if float(peak.detach()) <= 0:
        return AttributionMap(values=m, degenerate=True)
    return AttributionMap(values=m / peak)


def grad_cam(handle: ClassifierHandle, image: Tensor, class_index: int,
             layer: str) -> AttributionMap:
    """Grad-CAM attribution of ``class_index`` at ``layer``, sized like the image."""
    if not 0 <= class_index < handle.class_count:
        raise ValueError(f"class index {class_index} out of range [0, {handle.class_count})")
    if image.dim() == 3:
        image = image.unsqueeze(0)
    x = image.detach().clone().requires_grad_(True)
    bundle = forward_with_features(handle, x, (layer,))
    return cam_from_bundle(bundle, layer, class_index, image.shape[-2:])


def gaussian_target(center: tuple[int, int], sigma: float,
                    size: tuple[int, int]) -> AttributionMap:
    """Gaussian blob target map with peak 1 at ``center`` (row, col)."""
    h, w = size
    r, c = center
    if not (0 <= r < h and 0 <= c < w):
        raise ValueError(f"center {center} out of bounds for size {size}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rows = torch.arange(h, dtype=torch.float32)
    cols = torch.arange(w, dtype=torch.float32)
    rr, cc = torch.meshgrid(rows, cols, indexing="ij")
    values = torch.exp(-((rr - r) ** 2 + (cc - c) ** 2) / (2.0 * sigma ** 2))
    return AttributionMap(values=values)


def mask_from_attribution(attr: AttributionMap, percentile: float = 60.0) -> Tensor:
    # Convenience heuristic only: 1 outside the high-attribution region.
    values = attr.values.detach()
    thresh = torch.quantile(values.flatten().float(), percentile / 100.0)
    return (values < thresh).to(values.dtype)


def to_grayscale(attr: AttributionMap) -> np.ndarray:
    """8-bit grayscale export (values x255, rounded)."""
    v = attr.values.detach().cpu().numpy()
    return np.clip(np.rint(v * 255.0), 0, 255).astype(np.uint8)
