"""Desk-scale fixtures and independent oracles.

The oracles here deliberately share no code with the main modules: statistics
and convolutions are recomputed with explicit python loops in double
precision, and gradients with central finite differences.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import ClassifierHandle, TINY_TAPS, _finalize_handle
from .exceptions import LoadError

TINY_CHANNELS = (8, 16, 32)
TINY_CLASSES = 10
TINY_WEIGHT_SEED = 0


class TinyClassifier(nn.Module):
    """Three stride-2 conv blocks (8/16/32 ch), GAP, linear head to 10 classes."""

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, stride=2, padding=1)
        self.relu1 = nn.ReLU()
        self.conv2 = nn.Conv2d(8, 16, 3, stride=2, padding=1)
        self.relu2 = nn.ReLU()
        self.conv3 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.relu3 = nn.ReLU()
        self.fc = nn.Linear(32, TINY_CLASSES)

    def forward(self, x):
        x = self.relu1(self.conv1(x))
        x = self.relu2(self.conv2(x))
        x = self.relu3(self.conv3(x))
        x = x.mean(dim=(2, 3))
        return self.fc(x)


def tiny_state_dict(seed: int = TINY_WEIGHT_SEED) -> dict:
    """Deterministic weights for TinyClassifier, keyed by seed."""
    gen = torch.Generator().manual_seed(seed)
    model = TinyClassifier()
    state = {}
    for key, param in model.state_dict().items():
        if key.endswith("weight"):
            state[key] = torch.randn(param.shape, generator=gen) * 0.3
        else:
            state[key] = torch.randn(param.shape, generator=gen) * 0.1
    return state


def load_tiny(weights_source="registry", dtype: torch.dtype = torch.float32) -> ClassifierHandle:
    """Build the tiny test classifier handle with synthetic running stats."""
    model = TinyClassifier()
    if weights_source == "registry":
        model.load_state_dict(tiny_state_dict())
    else:
        path = Path(weights_source)
        if not path.exists():
            raise LoadError(f"tiny-test-net weights not found at {path}")
        try:
            model.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
        except Exception as e:  # noqa: BLE001
            raise LoadError(f"failed to load tiny-test-net weights from {path}: {e}") from e
    model = model.to(dtype)
    taps = {"t1": model.relu1, "t2": model.relu2, "t3": model.relu3}
    stats = {
        name: (torch.zeros(c, dtype=dtype), torch.ones(c, dtype=dtype))
        for name, c in zip(TINY_TAPS, TINY_CHANNELS)
    }
    return _finalize_handle(
        "tiny-test-net", model, TINY_CLASSES, TINY_TAPS, taps,
        (0.5, 0.5, 0.5), (0.5, 0.5, 0.5), stats,
    )


def finite_diff_grad(loss_fn, image: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    """Central-difference gradient of a scalar image loss, in double precision."""
    x = image.detach().to(torch.float64).clone()
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        lp = float(loss_fn(x).detach())
        flat[i] = orig - eps
        lm = float(loss_fn(x).detach())
        flat[i] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise ValueError(f"non-finite loss at probe coordinate {i}")
        gflat[i] = (lp - lm) / (2.0 * eps)
    return grad


def stat_oracle(activations) -> tuple[np.ndarray, np.ndarray]:
    """Loop-based channel mean and population std over batch and space."""
    a = np.asarray(activations, dtype=np.float64)
    b, c, h, w = a.shape
    n = b * h * w
    mu = np.zeros(c)
    sigma = np.zeros(c)
    for ci in range(c):
        s = 0.0
        for bi in range(b):
            for hi in range(h):
                for wi in range(w):
                    s += a[bi, ci, hi, wi]
        m = s / n
        sq = 0.0
        for bi in range(b):
            for hi in range(h):
                for wi in range(w):
                    sq += (a[bi, ci, hi, wi] - m) ** 2
        mu[ci] = m
        sigma[ci] = np.sqrt(sq / n)
    return mu, sigma


def _conv_oracle(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                 stride: int, pad: int) -> np.ndarray:
    cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    xp = np.zeros((cin, h + 2 * pad, w + 2 * pad))
    xp[:, pad:pad + h, pad:pad + w] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((cout, oh, ow))
    for co in range(cout):
        for oy in range(oh):
            for ox in range(ow):
                s = bias[co]
                for ci in range(cin):
                    for ky in range(kh):
                        for kx in range(kw):
                            s += weight[co, ci, ky, kx] * xp[ci, oy * stride + ky, ox * stride + kx]
                out[co, oy, ox] = s
    return out


def forward_oracle(handle: ClassifierHandle, image) -> tuple[dict, np.ndarray]:
    """Explicit-loop forward pass through the tiny classifier.

    Takes a pixel-space image (3, H, W) in [0, 1], applies the handle's input
    normalization, and returns ({tap: activation (1, C, h, w)}, logits (1, 10)).
    """
    state = {k: v.detach().cpu().numpy().astype(np.float64)
             for k, v in handle.model.state_dict().items()}
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 4:
        x = x[0]
    mean = handle.input_mean.detach().cpu().numpy().astype(np.float64)
    std = handle.input_std.detach().cpu().numpy().astype(np.float64)
    x = (x - mean) / std

    acts = {}
    for tap, layer in zip(TINY_TAPS, ("conv1", "conv2", "conv3")):
        x = _conv_oracle(x, state[f"{layer}.weight"], state[f"{layer}.bias"], 2, 1)
        x = np.maximum(x, 0.0)
        acts[tap] = x[np.newaxis]

    pooled = x.mean(axis=(1, 2))
    logits = state["fc.weight"] @ pooled + state["fc.bias"]
    return acts, logits[np.newaxis]
