"""Pre-trained classifier wrapper with activation taps and feature statistics.

The classifier is only ever read: it is put in eval mode at load time and its
parameters are frozen. Activations are tapped post-activation at the named
block outputs.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import Tensor, nn

from .exceptions import LoadError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

RESNET50_TAPS = ("conv1_1", "conv2_3", "conv3_4", "conv4_6")
TINY_TAPS = ("t1", "t2", "t3")

# tap-layer names per known architecture, resolvable without loading weights
KNOWN_ARCHITECTURES = {
    "resnet50-imagenet": RESNET50_TAPS,
    "tiny-test-net": TINY_TAPS,
}

_STD_EPS = 1e-16  # keeps sqrt differentiable at zero variance


@dataclass
class ClassifierHandle:
    """Frozen classifier plus tap metadata. Immutable after load."""

    architecture_id: str
    model: nn.Module
    class_count: int
    tap_layers: tuple[str, ...]
    tap_modules: dict[str, nn.Module]
    input_mean: Tensor
    input_std: Tensor
    # layer name -> (running mean, running variance), both length channels
    stored_dataset_stats: dict[str, tuple[Tensor, Tensor]] = field(default_factory=dict)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.model.parameters()).dtype


@dataclass
class FeatureBundle:
    """Per-layer activations and final logits from one forward pass."""

    activations: dict[str, Tensor]
    logits: Tensor


@dataclass
class FeatureStats:
    """Channel-wise (mean, std) vectors per layer."""

    per_layer: dict[str, tuple[Tensor, Tensor]]

    def layers(self):
        return tuple(self.per_layer)

    def channels(self, layer: str) -> int:
        return self.per_layer[layer][0].numel()


def weights_cache_dir() -> Path:
    env = os.environ.get("IMAGINE_WEIGHTS_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "imgsynth" / "weights"


def _load_resnet50(weights_source) -> ClassifierHandle:
    from torchvision.models import resnet50

    if weights_source == "registry":
        path = weights_cache_dir() / "resnet50-imagenet.pt"
    else:
        path = Path(weights_source)
    if not path.exists():
        raise LoadError(f"resnet50-imagenet weights not found at {path}")
    model = resnet50(weights=None)
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except Exception as e:  # noqa: BLE001 - surface any corruption as LoadError
        raise LoadError(f"failed to load resnet50 weights from {path}: {e}") from e

    taps = {
        "conv1_1": model.relu,       # stem output, 64 ch
        "conv2_3": model.layer1,     # 256 ch
        "conv3_4": model.layer2,     # 512 ch
        "conv4_6": model.layer3,     # 1024 ch
    }
    bns = {
        "conv1_1": model.bn1,
        "conv2_3": model.layer1[-1].bn3,
        "conv3_4": model.layer2[-1].bn3,
        "conv4_6": model.layer3[-1].bn3,
    }
    stats = {
        name: (bn.running_mean.detach().clone(), bn.running_var.detach().clone())
        for name, bn in bns.items()
    }
    return _finalize_handle(
        "resnet50-imagenet", model, 1000, RESNET50_TAPS, taps,
        IMAGENET_MEAN, IMAGENET_STD, stats,
    )


def _finalize_handle(arch, model, class_count, tap_layers, tap_modules,
                     mean, std, stats) -> ClassifierHandle:
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    dtype = next(model.parameters()).dtype
    return ClassifierHandle(
        architecture_id=arch,
        model=model,
        class_count=class_count,
        tap_layers=tuple(tap_layers),
        tap_modules=dict(tap_modules),
        input_mean=torch.tensor(mean, dtype=dtype).view(3, 1, 1),
        input_std=torch.tensor(std, dtype=dtype).view(3, 1, 1),
        stored_dataset_stats=stats,
    )


def load_classifier(architecture_id: str, weights_source="registry") -> ClassifierHandle:
    """Load a frozen classifier with tap layers and dataset statistics.

    ``weights_source`` is either the string "registry" (resolve from the local
    weights cache, overridable via IMAGINE_WEIGHTS_DIR) or an explicit path.
    """
    if architecture_id == "resnet50-imagenet":
        return _load_resnet50(weights_source)
    if architecture_id == "tiny-test-net":
        from . import testkit

        return testkit.load_tiny(weights_source)
    raise LoadError(
        f"unknown architecture '{architecture_id}'; known: "
        + ", ".join(sorted(KNOWN_ARCHITECTURES))
    )


def forward_with_features(handle: ClassifierHandle, images: Tensor,
                          phi) -> FeatureBundle:
    """Differentiable forward pass returning logits and activations at ``phi``.

    ``images`` is a pixel-space batch (B, 3, H, W) or a single image
    (3, H, W) with values in [0, 1]; input normalization is applied here.
    """
    if images.dim() == 3:
        images = images.unsqueeze(0)
    if images.dim() != 4 or images.shape[1] != 3:
        raise ValueError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
    phi = tuple(phi)
    unknown = [name for name in phi if name not in handle.tap_layers]
    if unknown:
        raise KeyError(
            f"unknown tap layer(s) {unknown}; available: {list(handle.tap_layers)}"
        )

    x = (images.to(handle.dtype) - handle.input_mean) / handle.input_std

    captured: dict[str, Tensor] = {}
    hooks = []

    def make_hook(name):
        def hook(_module, _inputs, output):
            captured[name] = output
        return hook

    for name in phi:
        hooks.append(handle.tap_modules[name].register_forward_hook(make_hook(name)))
    try:
        logits = handle.model(x)
    finally:
        for h in hooks:
            h.remove()
    return FeatureBundle(activations={name: captured[name] for name in phi},
                         logits=logits)


def channel_stats(bundle: FeatureBundle, phi) -> FeatureStats:
    """Channel-wise mean and population std over batch and spatial axes."""
    per_layer = {}
    for name in phi:
        if name not in bundle.activations:
            raise KeyError(f"layer '{name}' missing from bundle")
        act = bundle.activations[name]
        mu = act.mean(dim=(0, 2, 3))
        var = act.var(dim=(0, 2, 3), unbiased=False)
        per_layer[name] = (mu, (var + _STD_EPS).sqrt())
    return FeatureStats(per_layer)


def dataset_stats(handle: ClassifierHandle, phi) -> FeatureStats:
    """Stored training-set statistics (std recovered from running variance)."""
    per_layer = {}
    for name in phi:
        if name not in handle.tap_layers:
            raise KeyError(f"'{name}' is not a tap layer of {handle.architecture_id}")
        if name not in handle.stored_dataset_stats:
            raise KeyError(f"no stored dataset statistics for layer '{name}'")
        mean, var = handle.stored_dataset_stats[name]
        per_layer[name] = (mean, var.clamp_min(0).sqrt())
    return FeatureStats(per_layer)


def parameter_checksum(handle: ClassifierHandle) -> str:
    """SHA-256 over the classifier's parameters and buffers."""
    h = hashlib.sha256()
    state = handle.model.state_dict()
    for key in sorted(state):
        h.update(key.encode())
        h.update(state[key].detach().cpu().numpy().tobytes())
    return h.hexdigest()
