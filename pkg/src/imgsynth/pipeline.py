"""Two-stage synthesis loop: warm-up with distribution matching, then
adversarial refinement with a per-sample patch critic."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import torch
from torch import Tensor

from . import attribution, backbone
from .backbone import (
    KNOWN_ARCHITECTURES,
    ClassifierHandle,
    channel_stats,
    dataset_stats,
    forward_with_features,
    load_classifier,
    parameter_checksum,
)
from .critic import CriticConfig, CriticState, critic_train_step, init_critic
from .exceptions import ConfigError, DivergenceError
from .images import load_image, load_mask
from .losses import LossWeights, MaskPair, ObjectiveInputs, total_objective

MODES = ("standard", "deepinversion-baseline", "position", "shape", "style",
         "counterfactual")

_MODE_REQUIRES = {
    "position": ("blob_center", "blob_sigma"),
    "shape": ("clipart",),
    "style": ("style",),
    "counterfactual": ("query", "mask_query", "mask_cf"),
}


@dataclass
class SynthesisJob:
    """Declarative description of one synthesis run."""

    target: object                      # path or (3, H, W) tensor in [0, 1]
    mode: str = "standard"
    architecture: str = "resnet50-imagenet"
    weights_source: str = "registry"
    clipart: object = None              # shape mode
    style: object = None                # style mode
    query: object = None                # counterfactual mode
    counterfactual: object = None       # counterfactual-class image; defaults to target
    mask_query: object = None
    mask_cf: object = None
    blob_center: Optional[tuple[int, int]] = None   # position mode, (row, col)
    blob_sigma: Optional[float] = None
    target_class: Optional[int] = None  # default: argmax prediction on target
    phi: Optional[tuple[str, ...]] = None       # default: all taps
    phi_c: Optional[tuple[str, ...]] = None     # default: deepest tap
    phi_r: Optional[tuple[str, ...]] = None     # default: all but deepest
    phi_s: Optional[tuple[str, ...]] = None     # default: all but deepest
    phi_q: Optional[tuple[str, ...]] = None     # default: all taps
    weights: LossWeights = field(default_factory=LossWeights)
    critic_config: CriticConfig = field(default_factory=CriticConfig)
    stage1_iterations: int = 2000
    stage2_iterations: int = 2000
    image_lr: float = 0.2
    critic_lr: float = 5e-4
    size: int = 224
    sample_count: int = 1
    seed: int = 0
    single_stage: bool = False
    jitter: bool = False


@dataclass
class ImageState:
    """The optimizable image and its optimizer; pixels stay clamped to [0, 1]."""

    image: Tensor
    optimizer: torch.optim.Adam
    seed: int


@dataclass
class SynthesisResult:
    images: list
    traces: list                        # per sample: list of (iter, stage, term, value)
    stage_boundaries: tuple[int, int]
    attribution_maps: list
    wall_clock_seconds: float
    manifest: dict


@dataclass
class ResolvedJob:
    job: SynthesisJob
    handle: ClassifierHandle
    target_image: Tensor
    critic_real: Tensor
    y_star: int
    objective_inputs: ObjectiveInputs
    cam_layer: str


def _layer_defaults(job: SynthesisJob, taps: tuple[str, ...]) -> dict:
    deepest = taps[-1]
    shallow = taps[:-1]
    return {
        "phi": tuple(job.phi) if job.phi is not None else taps,
        "phi_c": tuple(job.phi_c) if job.phi_c is not None else (deepest,),
        "phi_r": tuple(job.phi_r) if job.phi_r is not None else shallow,
        "phi_s": tuple(job.phi_s) if job.phi_s is not None else shallow,
        "phi_q": tuple(job.phi_q) if job.phi_q is not None else taps,
    }


def validate_job(job: SynthesisJob) -> None:
    if job.mode not in MODES:
        raise ConfigError(f"unknown mode '{job.mode}'; expected one of {MODES}")
    if job.architecture not in KNOWN_ARCHITECTURES:
        raise ConfigError(
            f"unknown architecture '{job.architecture}'; known: "
            + ", ".join(sorted(KNOWN_ARCHITECTURES))
        )
    if job.stage1_iterations < 0 or job.stage2_iterations < 0:
        raise ConfigError("iteration counts must be >= 0")
    if job.sample_count < 1:
        raise ConfigError("sample_count must be >= 1")
    if job.size < 2:
        raise ConfigError("size must be >= 2")
    for name in _MODE_REQUIRES.get(job.mode, ()):
        if getattr(job, name) is None:
            raise ConfigError(f"mode '{job.mode}' requires '{name}'")
    taps = KNOWN_ARCHITECTURES[job.architecture]
    for field_name in ("phi", "phi_c", "phi_r", "phi_s", "phi_q"):
        value = getattr(job, field_name)
        if value is None:
            continue
        bad = [name for name in value if name not in taps]
        if bad:
            raise ConfigError(
                f"{field_name} contains unknown tap layer(s) {bad}; "
                f"available: {list(taps)}"
            )


def job_manifest(job: SynthesisJob, y_star=None, checksum=None) -> dict:
    """Every job field with its resolved default. Usable without weights."""
    validate_job(job)
    taps = KNOWN_ARCHITECTURES[job.architecture]
    layers = _layer_defaults(job, taps)
    w = job.weights
    c = job.critic_config

    def describe(src):
        if src is None:
            return None
        return str(src) if isinstance(src, (str, bytes)) or hasattr(src, "__fspath__") \
            else "<in-memory image>"

    return {
        "mode": job.mode,
        "architecture": job.architecture,
        "weights_source": str(job.weights_source),
        "target": describe(job.target),
        "clipart": describe(job.clipart),
        "style": describe(job.style),
        "query": describe(job.query),
        "counterfactual": describe(job.counterfactual),
        "mask_query": describe(job.mask_query),
        "mask_cf": describe(job.mask_cf),
        "blob_center": list(job.blob_center) if job.blob_center else None,
        "blob_sigma": job.blob_sigma,
        "y_star": y_star if y_star is not None else
                  (job.target_class if job.target_class is not None else "auto"),
        "phi": list(layers["phi"]),
        "phi_c": list(layers["phi_c"]),
        "phi_r": list(layers["phi_r"]),
        "phi_s": list(layers["phi_s"]),
        "phi_q": list(layers["phi_q"]),
        "alpha": w.alpha,
        "beta": w.beta,
        "lambda": w.lam,
        "gamma_schedule": [w.gamma, w.gamma] if job.single_stage else [0.0, w.gamma],
        "nu": w.nu,
        "baseline_weight": w.baseline_weight,
        "counterfactual_weight": w.counterfactual_weight,
        "stage1_iterations": job.stage1_iterations,
        "stage2_iterations": job.stage2_iterations,
        "image_lr": job.image_lr,
        "critic_lr": job.critic_lr,
        "size": job.size,
        "sample_count": job.sample_count,
        "seed": job.seed,
        "single_stage": job.single_stage,
        "jitter": job.jitter,
        "critic": {
            "layer_count": c.layer_count,
            "channel_widths": list(c.channel_widths),
            "kernel_size": c.kernel_size,
            "strides": list(c.strides),
            "leak": c.leak,
            "gradient_penalty_weight": c.gradient_penalty_weight,
            "critic_steps_per_image_step": c.critic_steps_per_image_step,
            "receptive_field": c.receptive_field,
        },
        "backbone_checksum": checksum,
    }


def _as_image(src, size: int) -> Tensor:
    if isinstance(src, Tensor):
        if src.shape != (3, size, size):
            raise ConfigError(
                f"in-memory image has shape {tuple(src.shape)}, expected (3, {size}, {size})"
            )
        return src.detach().clone()
    return load_image(src, size)


def _as_mask(src, size: int) -> Tensor:
    if isinstance(src, Tensor):
        if src.shape != (size, size):
            raise ConfigError(
                f"in-memory mask has shape {tuple(src.shape)}, expected ({size}, {size})"
            )
        return src.detach().clone()
    return load_mask(src, size)


def prepare(job: SynthesisJob, handle: Optional[ClassifierHandle] = None) -> ResolvedJob:
    """Load inputs, resolve defaults, and precompute target statistics."""
    validate_job(job)
    if handle is None:
        handle = load_classifier(job.architecture, job.weights_source)
    layers = _layer_defaults(job, handle.tap_layers)
    size = job.size

    target = _as_image(job.target, size)
    cam_layer = handle.tap_layers[-1]

    if job.target_class is not None:
        if not 0 <= job.target_class < handle.class_count:
            raise ConfigError(
                f"target_class {job.target_class} out of range [0, {handle.class_count})"
            )
        y_star = job.target_class
    else:
        with torch.no_grad():
            logits = forward_with_features(handle, target, ()).logits
        y_star = int(logits[0].argmax())

    inputs = ObjectiveInputs(handle=handle, weights=job.weights, y_star=y_star,
                             phi=layers["phi"])
    critic_real = target

    with torch.no_grad():
        if job.mode == "shape":
            clip = _as_image(job.clipart, size)
            inputs.phi_c = layers["phi_c"]
            inputs.phi_r = layers["phi_r"]
            inputs.clip_stats = channel_stats(
                forward_with_features(handle, clip, inputs.phi_c), inputs.phi_c)
            inputs.target_stats = channel_stats(
                forward_with_features(handle, target, inputs.phi_r), inputs.phi_r)
        elif job.mode == "style":
            style_img = _as_image(job.style, size)
            inputs.phi_s = layers["phi_s"]
            inputs.style_stats = channel_stats(
                forward_with_features(handle, style_img, inputs.phi_s), inputs.phi_s)
            critic_real = style_img
        else:
            inputs.target_stats = channel_stats(
                forward_with_features(handle, target, inputs.phi), inputs.phi)

        if job.mode == "deepinversion-baseline":
            inputs.data_stats = dataset_stats(handle, inputs.phi)

    if job.mode == "position":
        inputs.target_map = attribution.gaussian_target(
            job.blob_center, job.blob_sigma, (size, size))
        inputs.cam_layer = cam_layer

    if job.mode == "counterfactual":
        inputs.query_image = _as_image(job.query, size)
        cf_src = job.counterfactual if job.counterfactual is not None else job.target
        inputs.cf_image = _as_image(cf_src, size)
        inputs.masks = MaskPair(r_q=_as_mask(job.mask_query, size),
                                r_0=_as_mask(job.mask_cf, size))
        inputs.phi_q = layers["phi_q"]

    return ResolvedJob(job=job, handle=handle, target_image=target,
                       critic_real=critic_real, y_star=y_star,
                       objective_inputs=inputs, cam_layer=cam_layer)


def init_image(rjob: ResolvedJob, seed: Optional[int] = None) -> ImageState:
    """Mid-gray uniform noise in [0.4, 0.6]; style mode starts from the target."""
    job = rjob.job
    if seed is None:
        seed = job.seed
    if job.mode == "style":
        image = rjob.target_image.clone()
    else:
        gen = torch.Generator().manual_seed(seed)
        image = 0.4 + 0.2 * torch.rand((3, job.size, job.size), generator=gen)
    image.requires_grad_(True)
    opt = torch.optim.Adam([image], lr=job.image_lr)
    return ImageState(image=image, optimizer=opt, seed=seed)


def run_stage(state: ImageState, critic: Optional[CriticState], rjob: ResolvedJob,
              stage_index: int, iter_offset: int = 0) -> list:
    """Run one optimization stage, returning trace rows (iter, stage, term, value)."""
    job = rjob.job
    if stage_index not in (1, 2):
        raise ValueError("stage_index must be 1 or 2")
    adversarial = stage_index == 2 or job.single_stage
    if adversarial and critic is None:
        raise ValueError("adversarial stage needs a critic")
    if not adversarial and critic is not None:
        raise ValueError("stage 1 must not receive a critic")

    weights = job.weights if adversarial else replace(job.weights, gamma=0.0)
    inputs = replace(rjob.objective_inputs, weights=weights,
                     critic=critic if adversarial else None)
    iters = job.stage1_iterations if stage_index == 1 else job.stage2_iterations
    jitter_gen = torch.Generator().manual_seed(state.seed + stage_index) if job.jitter else None

    rows = []
    for i in range(iters):
        it = iter_offset + i
        if adversarial and weights.gamma > 0:
            for _ in range(job.critic_config.critic_steps_per_image_step):
                diag = critic_train_step(critic, rjob.critic_real,
                                         state.image.detach())
            for term in ("wgap", "gp", "d_loss"):
                rows.append((it, stage_index, term, diag[term]))

        x = state.image
        if jitter_gen is not None:
            shifts = torch.randint(-2, 3, (2,), generator=jitter_gen)
            x = torch.roll(x, shifts=(int(shifts[0]), int(shifts[1])), dims=(1, 2))
        total, breakdown = total_objective(job.mode, x, inputs)
        if not torch.isfinite(total):
            raise DivergenceError(it, float(total.detach()))
        state.optimizer.zero_grad()
        total.backward()
        state.optimizer.step()
        with torch.no_grad():
            state.image.clamp_(0.0, 1.0)
        for term, value in breakdown.items():
            rows.append((it, stage_index, term, value))
    return rows


def synthesize(job: SynthesisJob, handle: Optional[ClassifierHandle] = None) -> SynthesisResult:
    """Run the full schedule for each sample seed and collect results."""
    t0 = time.monotonic()
    rjob = prepare(job, handle)
    checksum_before = parameter_checksum(rjob.handle)

    images, traces, cams = [], [], []
    critic_cfg = replace(job.critic_config, learning_rate=job.critic_lr)
    for s in range(job.sample_count):
        sample_seed = job.seed + s
        state = init_image(rjob, sample_seed)
        if job.single_stage:
            critic = init_critic(critic_cfg, sample_seed)
            trace = run_stage(state, critic, rjob, 1, 0)
            trace += run_stage(state, critic, rjob, 2, job.stage1_iterations)
        else:
            trace = run_stage(state, None, rjob, 1, 0)
            critic = init_critic(critic_cfg, sample_seed)
            trace += run_stage(state, critic, rjob, 2, job.stage1_iterations)
        final = state.image.detach().clamp(0, 1)
        images.append(final)
        traces.append(trace)
        if job.mode == "position":
            cams.append(attribution.grad_cam(rjob.handle, final, rjob.y_star,
                                             rjob.cam_layer))

    checksum_after = parameter_checksum(rjob.handle)
    if checksum_after != checksum_before:
        raise RuntimeError("classifier parameters changed during synthesis")

    manifest = job_manifest(job, y_star=rjob.y_star, checksum=checksum_after)
    return SynthesisResult(
        images=images,
        traces=traces,
        stage_boundaries=(job.stage1_iterations,
                          job.stage1_iterations + job.stage2_iterations),
        attribution_maps=cams,
        wall_clock_seconds=time.monotonic() - t0,
        manifest=manifest,
    )


def ablate_layers(job: SynthesisJob, phi_override) -> SynthesisResult:
    """Synthesize with the distribution-matching layer set overridden."""
    return synthesize(replace(job, phi=tuple(phi_override)))
