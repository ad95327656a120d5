"""Differentiable losses and regularizers for guided classifier inversion."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn.functional as F
from torch import Tensor

from .attribution import AttributionMap, cam_from_bundle
from .backbone import (
    ClassifierHandle,
    FeatureStats,
    channel_stats,
    forward_with_features,
)
from .critic import CriticState, critic_score

MODES = ("standard", "deepinversion-baseline", "position", "shape", "style",
         "counterfactual")

_NORM_EPS = 1e-24  # keeps the L2 norm's gradient zero (not NaN) at exact match


@dataclass
class LossWeights:
    """Scaling weights of the synthesis objective."""

    alpha: float = 1e-4        # total-variation weight
    beta: float = 1e-5         # L2 pixel weight
    lam: float = 5.0           # distribution-matching weight
    gamma: float = 10.0        # patch-consistency weight (stage 2; stage 1 uses 0)
    nu: float = 10.0           # location weight
    baseline_weight: float = 5.0       # dataset-statistics term weight
    counterfactual_weight: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"weight '{name}' must be >= 0, got {value}")


@dataclass
class MaskPair:
    """0-1 region masks; 1 outside the discriminant region, 0 inside."""

    r_q: Tensor
    r_0: Tensor

    def __post_init__(self):
        for name, mask in (("r_q", self.r_q), ("r_0", self.r_0)):
            bad = ~((mask == 0) | (mask == 1))
            if bool(bad.any()):
                raise ValueError(f"mask '{name}' has non-binary entries")


def _l2(diff: Tensor) -> Tensor:
    return (diff.pow(2).sum() + _NORM_EPS).sqrt()


def class_loss(logits: Tensor, target_class: int) -> Tensor:
    """Cross-entropy of softmax(logits) against the target class."""
    logits = logits.flatten()
    if not 0 <= target_class < logits.numel():
        raise ValueError(
            f"class index {target_class} out of range [0, {logits.numel()})"
        )
    target = torch.tensor([target_class])
    return F.cross_entropy(logits.unsqueeze(0), target)


def tv(image: Tensor) -> Tensor:
    """Anisotropic total variation: absolute adjacent-pixel differences."""
    if image.shape[-1] < 2 or image.shape[-2] < 2:
        raise ValueError("tv needs at least 2 pixels per spatial axis")
    dh = (image[..., 1:, :] - image[..., :-1, :]).abs().sum()
    dw = (image[..., :, 1:] - image[..., :, :-1]).abs().sum()
    return dh + dw


def r_img(image: Tensor, alpha: float, beta: float) -> Tensor:
    """Image prior: alpha * TV + beta * sum of squared pixel values."""
    return alpha * tv(image) + beta * image.pow(2).sum()


def _check_channels(stats_a: FeatureStats, stats_b: FeatureStats, layer: str):
    ca, cb = stats_a.channels(layer), stats_b.channels(layer)
    if ca != cb:
        raise ValueError(f"channel-count mismatch at layer '{layer}': {ca} vs {cb}")


def r_dm_per_layer(stats_a: FeatureStats, stats_b: FeatureStats, phi) -> dict:
    """Per-layer distribution matching terms (unsquared L2 on mean and std)."""
    terms = {}
    for layer in phi:
        _check_channels(stats_a, stats_b, layer)
        mu_a, sig_a = stats_a.per_layer[layer]
        mu_b, sig_b = stats_b.per_layer[layer]
        terms[layer] = _l2(mu_a - mu_b) + _l2(sig_a - sig_b)
    return terms


def r_dm(stats_a: FeatureStats, stats_b: FeatureStats, phi) -> Tensor:
    """Feature distribution matching over the layer set."""
    terms = r_dm_per_layer(stats_a, stats_b, phi)
    if not terms:
        return torch.zeros(())
    return sum(terms.values())


def r_feat(stats_x: FeatureStats, stats_d: FeatureStats, phi) -> Tensor:
    """Dataset-statistics regularizer: squared norms on means and variances."""
    total = torch.zeros(())
    for layer in phi:
        _check_channels(stats_x, stats_d, layer)
        mu_x, sig_x = stats_x.per_layer[layer]
        mu_d, sig_d = stats_d.per_layer[layer]
        total = total + (mu_x - mu_d).pow(2).sum() + (sig_x.pow(2) - sig_d.pow(2)).pow(2).sum()
    return total


def r_pc(critic: CriticState, image: Tensor) -> Tensor:
    """Patch consistency: negative mean critic patch score."""
    return -critic_score(critic, image)


def r_loc(attr_map, target_map) -> Tensor:
    """Euclidean distance between an attribution map and its target."""
    m = attr_map.values if isinstance(attr_map, AttributionMap) else attr_map
    a0 = target_map.values if isinstance(target_map, AttributionMap) else target_map
    if m.shape != a0.shape:
        raise ValueError(f"map shape mismatch: {tuple(m.shape)} vs {tuple(a0.shape)}")
    return _l2(m - a0.to(m.dtype))


def r_cou(x_hat: Tensor, x_query: Tensor, x_cf: Tensor, masks: MaskPair,
          phi_q, handle: ClassifierHandle) -> Tensor:
    """Counterfactual regularizer.

    L1 match to the query outside the discriminant region, plus distribution
    matching between the pixel-masked synthesized and counterfactual images.
    """
    if x_hat.shape[-2:] != x_query.shape[-2:] or x_hat.shape[-2:] != x_cf.shape[-2:]:
        raise ValueError("images must share spatial size")
    r_q = masks.r_q.to(x_hat.dtype)
    r_0 = masks.r_0.to(x_hat.dtype)
    keep = (r_q * (x_query - x_hat)).abs().sum()

    masked_hat = (1.0 - r_q) * x_hat
    masked_cf = (1.0 - r_0) * x_cf
    stats_hat = channel_stats(forward_with_features(handle, masked_hat, phi_q), phi_q)
    stats_cf = channel_stats(forward_with_features(handle, masked_cf, phi_q), phi_q)
    return keep + r_dm(stats_hat, stats_cf, phi_q)


@dataclass
class ObjectiveInputs:
    """Everything total_objective needs besides the image being optimized."""

    handle: ClassifierHandle
    weights: LossWeights
    y_star: int
    phi: tuple = ()
    target_stats: Optional[FeatureStats] = None
    data_stats: Optional[FeatureStats] = None          # deepinversion-baseline
    clip_stats: Optional[FeatureStats] = None          # shape
    phi_c: tuple = ()
    phi_r: tuple = ()
    style_stats: Optional[FeatureStats] = None         # style
    phi_s: tuple = ()
    target_map: Optional[AttributionMap] = None        # position
    cam_layer: Optional[str] = None
    query_image: Optional[Tensor] = None               # counterfactual
    cf_image: Optional[Tensor] = None
    masks: Optional[MaskPair] = None
    phi_q: tuple = ()
    critic: Optional[CriticState] = None


def _val(t) -> float:
    return float(t.detach()) if isinstance(t, Tensor) else float(t)


def _require(value, name, mode):
    if value is None or (isinstance(value, tuple) and not value):
        raise ValueError(f"mode '{mode}' requires '{name}'")
    return value


def total_objective(mode: str, x_hat: Tensor, inputs: ObjectiveInputs):
    """Full synthesis objective for one mode.

    Returns (total scalar tensor, breakdown). The breakdown maps term names to
    weighted float contributions ("class", "r_img", "r_dm", "r_feat", "r_loc",
    "r_cou", "r_pc", "total"); "r_dm/<layer>" entries decompose "r_dm".
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode '{mode}'; expected one of {MODES}")
    w = inputs.weights
    breakdown: dict[str, float] = {}

    forward_layers = set()
    if mode == "style":
        forward_layers |= set(_require(inputs.phi_s, "phi_s", mode))
    elif mode == "shape":
        forward_layers |= set(_require(inputs.phi_c, "phi_c", mode))
        forward_layers |= set(_require(inputs.phi_r, "phi_r", mode))
    else:
        forward_layers |= set(inputs.phi)
    if mode == "position":
        forward_layers.add(_require(inputs.cam_layer, "cam_layer", mode))
    bundle = forward_with_features(inputs.handle, x_hat, sorted(forward_layers))

    terms: list[Tensor] = []

    if mode != "style":
        ce = class_loss(bundle.logits[0], inputs.y_star)
        terms.append(ce)
        breakdown["class"] = _val(ce)

    prior = r_img(x_hat, w.alpha, w.beta)
    terms.append(prior)
    breakdown["r_img"] = _val(prior)

    def add_dm(stats_ref, phi):
        stats_x = channel_stats(bundle, phi)
        per_layer = r_dm_per_layer(stats_x, stats_ref, phi)
        for layer, value in per_layer.items():
            key = f"r_dm/{layer}"
            breakdown[key] = breakdown.get(key, 0.0) + w.lam * _val(value)
        if per_layer:
            total = w.lam * sum(per_layer.values())
            terms.append(total)
            return stats_x, total
        return stats_x, None

    dm_total = torch.zeros(())
    if mode == "shape":
        _require(inputs.clip_stats, "clip_stats", mode)
        _require(inputs.target_stats, "target_stats", mode)
        _, t1 = add_dm(inputs.clip_stats, inputs.phi_c)
        _, t2 = add_dm(inputs.target_stats, inputs.phi_r)
        dm_total = (t1 if t1 is not None else 0) + (t2 if t2 is not None else 0)
    elif mode == "style":
        _require(inputs.style_stats, "style_stats", mode)
        _, t1 = add_dm(inputs.style_stats, inputs.phi_s)
        dm_total = t1 if t1 is not None else torch.zeros(())
    else:
        if inputs.phi:
            _require(inputs.target_stats, "target_stats", mode)
            _, t1 = add_dm(inputs.target_stats, inputs.phi)
            dm_total = t1 if t1 is not None else torch.zeros(())
    breakdown["r_dm"] = _val(dm_total)

    if mode == "deepinversion-baseline":
        _require(inputs.data_stats, "data_stats", mode)
        stats_x = channel_stats(bundle, inputs.phi)
        feat = w.baseline_weight * r_feat(stats_x, inputs.data_stats, inputs.phi)
        terms.append(feat)
        breakdown["r_feat"] = _val(feat)

    if mode == "position":
        _require(inputs.target_map, "target_map", mode)
        cam = cam_from_bundle(bundle, inputs.cam_layer, inputs.y_star,
                              x_hat.shape[-2:])
        loc = w.nu * r_loc(cam, inputs.target_map)
        terms.append(loc)
        breakdown["r_loc"] = _val(loc)

    if mode == "counterfactual":
        _require(inputs.query_image, "query_image", mode)
        _require(inputs.cf_image, "cf_image", mode)
        _require(inputs.masks, "masks", mode)
        _require(inputs.phi_q, "phi_q", mode)
        cou = w.counterfactual_weight * r_cou(
            x_hat, inputs.query_image, inputs.cf_image, inputs.masks,
            inputs.phi_q, inputs.handle,
        )
        terms.append(cou)
        breakdown["r_cou"] = _val(cou)

    if inputs.critic is not None and w.gamma > 0:
        pc = w.gamma * r_pc(inputs.critic, x_hat)
        terms.append(pc)
        breakdown["r_pc"] = _val(pc)

    total = sum(terms)
    breakdown["total"] = _val(total)
    return total, breakdown
