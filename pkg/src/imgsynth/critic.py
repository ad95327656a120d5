"""Fully-convolutional patch critic trained with a gradient-penalty Wasserstein loss.

The critic scores every sliding receptive-field patch in one convolutional
pass; the image-level score is the mean of the patch score map.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor, nn


@dataclass(frozen=True)
class CriticConfig:
    layer_count: int = 4
    channel_widths: tuple[int, ...] = (64, 128, 256, 1)
    kernel_size: int = 4
    strides: tuple[int, ...] = (2, 2, 2, 1)
    leak: float = 0.2
    gradient_penalty_weight: float = 10.0
    critic_steps_per_image_step: int = 1
    learning_rate: float = 5e-4

    @property
    def receptive_field(self) -> int:
        r, jump = 1, 1
        for stride in self.strides:
            r += (self.kernel_size - 1) * jump
            jump *= stride
        return r


def _build_net(config: CriticConfig, dtype: torch.dtype) -> nn.Sequential:
    k = config.kernel_size
    padding = k // 2 if k % 2 == 1 else max(k // 2 - 1, 0)
    layers = []
    in_ch = 3
    for i, (out_ch, stride) in enumerate(zip(config.channel_widths, config.strides)):
        layers.append(nn.Conv2d(in_ch, out_ch, k, stride=stride, padding=padding))
        if i < config.layer_count - 1:
            layers.append(nn.LeakyReLU(config.leak))
        in_ch = out_ch
    return nn.Sequential(*layers).to(dtype)


@dataclass
class CriticState:
    net: nn.Sequential
    optimizer: torch.optim.Adam
    config: CriticConfig
    generator: torch.Generator
    step: int = 0
    diagnostics: list = field(default_factory=list)


def init_critic(config: CriticConfig, seed: int,
                dtype: torch.dtype = torch.float32) -> CriticState:
    """Seed-deterministic critic: conv weights N(0, 0.02), zero biases."""
    if config.channel_widths[-1] != 1:
        raise ValueError("final critic layer must output a 1-channel score map")
    net = _build_net(config, dtype)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in net:
            if isinstance(module, nn.Conv2d):
                module.weight.copy_(
                    torch.randn(module.weight.shape, generator=gen, dtype=torch.float32).to(dtype) * 0.02
                )
                module.bias.zero_()
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate, betas=(0.5, 0.9))
    return CriticState(net=net, optimizer=opt, config=config, generator=gen)


def _score_map(state: CriticState, image: Tensor) -> Tensor:
    if image.dim() == 3:
        image = image.unsqueeze(0)
    rf = state.config.receptive_field
    if min(image.shape[-2:]) < rf:
        raise ValueError(
            f"image spatial size {tuple(image.shape[-2:])} smaller than "
            f"critic receptive field {rf}"
        )
    return state.net(image)


def critic_score(state: CriticState, image: Tensor) -> Tensor:
    """Mean patch score: every sliding receptive-field patch weighted equally."""
    return _score_map(state, image).mean()


def interpolation_grad_norm(state: CriticState, point: Tensor) -> Tensor:
    """Norm of the critic-output gradient at an input point (sum over score map)."""
    point = point.detach().clone().requires_grad_(True)
    out = _score_map(state, point).sum()
    grad = torch.autograd.grad(out, point, create_graph=True)[0]
    return grad.flatten().norm()


def critic_train_step(state: CriticState, real: Tensor, fake: Tensor) -> dict:
    """One gradient-penalty Wasserstein update of the critic.

    ``fake`` is treated as a constant snapshot of the synthesized image.
    Returns {"wgap", "gp", "d_loss"} evaluated before the parameter step.
    """
    if real.shape != fake.shape:
        raise ValueError(f"real/fake size mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    real = real.detach()
    fake = fake.detach()

    d_real = critic_score(state, real)
    d_fake = critic_score(state, fake)
    gap = d_real - d_fake

    if state.config.gradient_penalty_weight > 0:
        eps = torch.rand(1, generator=state.generator).to(real.dtype)
        mix = eps * real + (1.0 - eps) * fake
        penalty = (interpolation_grad_norm(state, mix) - 1.0) ** 2
    else:
        penalty = torch.zeros((), dtype=real.dtype)

    loss = -gap + state.config.gradient_penalty_weight * penalty
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    state.step += 1
    diag = {"wgap": float(gap.detach()), "gp": float(penalty.detach()),
            "d_loss": float(loss.detach())}
    state.diagnostics.append(diag)
    return diag
