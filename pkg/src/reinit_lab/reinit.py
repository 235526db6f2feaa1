"""Re-initialization rules applied between training stages, plus the stage plan.

Every rule maps (current parameters, fresh-draw distribution) to the starting
parameters of the next stage: keep them, shrink-and-perturb them, rebuild a
suffix of blocks, or discard them entirely. Fresh draws are seeded per stage
boundary so a run is reproducible while its stages stay independent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError, ShapeError
from .nn import (
    FrozenNormLayer,
    InitDistribution,
    LayerLayout,
    NetworkSpec,
    ParamVector,
    activations_after_block,
    init_params,
)

__all__ = [
    "StagePlan",
    "ReinitSpec",
    "ReinitContext",
    "FrozenNormLayer",
    "make_stage_plan",
    "stage_seed",
    "shrink_perturb",
    "block_mask",
    "layerwise_reinit",
    "apply_reinit",
]

KINDS = ("none", "shrink_perturb", "layer_wise", "full")

FROZEN_NORM_STD_FLOOR = 1e-5


@dataclass(frozen=True)
class StagePlan:
    """Equal-compute split of a training budget into stages."""

    total_epochs: int
    num_stages: int
    epochs_per_stage: int

    @property
    def trained_epochs(self) -> int:
        return self.num_stages * self.epochs_per_stage


def make_stage_plan(total_epochs: int, num_stages: int) -> StagePlan:
    """T stages of floor(N/T) epochs; leftover epochs are dropped."""
    if num_stages < 1:
        raise ConfigurationError(f"need at least one stage, got {num_stages}")
    if num_stages > total_epochs:
        raise ConfigurationError(f"{num_stages} stages cannot fit in {total_epochs} epochs")
    return StagePlan(total_epochs, num_stages, total_epochs // num_stages)


@dataclass(frozen=True)
class ReinitSpec:
    """Which rule runs at each stage boundary, with its hyperparameters.

    ``none`` keeps parameters, ``shrink_perturb`` forms lam*theta +
    gamma*fresh, ``layer_wise`` rebuilds a block suffix, ``full`` discards
    everything. lam/gamma may only be set for shrink_perturb; blocks/repeats
    only matter for layer_wise.
    """

    kind: str = "none"
    lam: float | None = None
    gamma: float | None = None
    blocks: int | None = None
    repeats: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown reinit kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "shrink_perturb":
            lam = 0.4 if self.lam is None else self.lam
            gamma = 0.1 if self.gamma is None else self.gamma
            if not (0.0 <= lam <= 1.0 and 0.0 <= gamma <= 1.0):
                raise ConfigurationError(f"lam and gamma must lie in [0, 1], got {lam}, {gamma}")
            object.__setattr__(self, "lam", lam)
            object.__setattr__(self, "gamma", gamma)
        elif self.lam is not None or self.gamma is not None:
            raise ConfigurationError(f"lam/gamma only apply to shrink_perturb, not {self.kind!r}")
        if self.kind == "layer_wise":
            if self.blocks is None or self.blocks < 1:
                raise ConfigurationError("layer_wise needs a positive block count")
            repeats = 1 if self.repeats is None else self.repeats
            if repeats < 1:
                raise ConfigurationError(f"repeats must be >= 1, got {repeats}")
            object.__setattr__(self, "repeats", repeats)

    def required_stages(self) -> int | None:
        """The stage count this rule pins down, if any (layer_wise: K*M)."""
        if self.kind == "layer_wise":
            return self.blocks * self.repeats
        return None


@dataclass(frozen=True)
class ReinitContext:
    """Run-owned state the layer-wise rule needs at a boundary."""

    network: NetworkSpec
    init_block_norms: tuple[float, ...] | None = None
    stats_batch: np.ndarray | None = None
    rescale_mode: str = "per_block"


def stage_seed(base_seed: int, stage: int) -> int:
    """Per-boundary fresh-draw seed: a splitmix64 mix of base seed and stage index."""
    mask = 0xFFFFFFFFFFFFFFFF
    x = (stage + 0x9E3779B97F4A7C15) & mask
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & mask
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & mask
    x ^= x >> 31
    return (base_seed ^ x) & mask


def shrink_perturb(theta: ParamVector, theta_init: ParamVector, lam: float, gamma: float) -> ParamVector:
    """lam*theta + gamma*theta_init, elementwise; inputs untouched."""
    if theta.layout is not theta_init.layout and theta.layout != theta_init.layout:
        raise ShapeError("theta and theta_init have different layouts")
    if theta.values.shape != theta_init.values.shape:
        raise ShapeError(
            f"parameter lengths differ: {theta.values.shape[0]} vs {theta_init.values.shape[0]}"
        )
    if not (0.0 <= lam <= 1.0 and 0.0 <= gamma <= 1.0):
        raise ConfigurationError(f"lam and gamma must lie in [0, 1], got {lam}, {gamma}")
    if lam == 1.0 and gamma == 0.0:
        return theta.copy()
    if lam == 0.0 and gamma == 1.0:
        return theta_init.copy()
    values = lam * theta.values + gamma * theta_init.values
    return ParamVector(values.astype(theta.dtype, copy=False), theta.layout)


def block_mask(layout: LayerLayout, t: int, repeats: int = 1) -> np.ndarray:
    """Boolean keep-mask over the flat vector: the first ceil(t/repeats) blocks."""
    if repeats < 1:
        raise ConfigurationError(f"repeats must be >= 1, got {repeats}")
    total = layout.num_blocks * repeats
    if not 1 <= t <= total:
        raise ConfigurationError(f"stage index {t} outside 1..{total}")
    kept_blocks = math.ceil(t / repeats)
    mask = np.zeros(layout.total_len, dtype=bool)
    for b in range(1, kept_blocks + 1):
        mask[layout.block_param_indices(b)] = True
    return mask


def _rescale_kept_blocks(
    values: np.ndarray,
    layout: LayerLayout,
    kept_blocks: int,
    init_block_norms: Sequence[float],
    mode: str,
) -> np.ndarray:
    if mode not in ("per_block", "aggregate"):
        raise ConfigurationError(f"unknown rescale mode {mode!r}")
    if len(init_block_norms) < kept_blocks:
        raise ConfigurationError(
            f"need init norms for {kept_blocks} blocks, got {len(init_block_norms)}"
        )
    out = values.copy()
    if mode == "per_block":
        for b in range(1, kept_blocks + 1):
            idx = layout.block_param_indices(b)
            cur = float(np.linalg.norm(out[idx].astype(np.float64)))
            if cur == 0.0:
                raise NumericalError(f"block {b} has zero norm; cannot rescale")
            out[idx] = (out[idx].astype(np.float64) * (init_block_norms[b - 1] / cur)).astype(out.dtype)
    else:
        idx = np.concatenate([layout.block_param_indices(b) for b in range(1, kept_blocks + 1)])
        cur = float(np.linalg.norm(out[idx].astype(np.float64)))
        if cur == 0.0:
            raise NumericalError("kept prefix has zero norm; cannot rescale")
        target = math.sqrt(sum(float(n) ** 2 for n in init_block_norms[:kept_blocks]))
        out[idx] = (out[idx].astype(np.float64) * (target / cur)).astype(out.dtype)
    return out


def layerwise_reinit(
    theta: ParamVector,
    theta_init: ParamVector,
    layout: LayerLayout,
    t: int,
    repeats: int,
    init_block_norms: Sequence[float],
    stats_batch: np.ndarray,
    spec: NetworkSpec,
    rescale_mode: str = "per_block",
) -> tuple[ParamVector, FrozenNormLayer]:
    """Keep the first ceil(t/repeats) blocks of theta, resample the rest.

    Kept blocks are rescaled back to their recorded initialization norms, so
    only their direction survives the boundary. The frozen layer standardizes
    the kept prefix's output on ``stats_batch`` and replaces any frozen layer
    from an earlier boundary.
    """
    stats = np.asarray(stats_batch)
    if stats.ndim != 2 or stats.shape[0] == 0:
        raise ConfigurationError("stats batch must be a nonempty 2-D array")
    mask = block_mask(layout, t, repeats)
    kept_blocks = math.ceil(t / repeats)
    merged = np.where(mask, theta.values, theta_init.values.astype(theta.dtype, copy=False))
    merged = _rescale_kept_blocks(merged, layout, kept_blocks, init_block_norms, rescale_mode)
    new_params = ParamVector(merged, layout)
    acts = activations_after_block(spec, new_params, stats, kept_blocks)
    mean = acts.mean(axis=0).astype(np.float64)
    std = np.maximum(acts.std(axis=0).astype(np.float64), FROZEN_NORM_STD_FLOOR)
    return new_params, FrozenNormLayer(kept_blocks, mean, std)


def apply_reinit(
    rspec: ReinitSpec,
    theta_end: ParamVector,
    dist: InitDistribution,
    t: int,
    context: ReinitContext,
) -> tuple[ParamVector, FrozenNormLayer | None]:
    """Produce stage t+1's starting parameters from stage t's final ones.

    The fresh draw at boundary t comes from ``dist`` reseeded with
    stage_seed(dist.seed, t), so it is independent of theta_end and of every
    other boundary. Returns the new parameters and, for the layer-wise rule,
    the frozen normalization layer to install (None otherwise).
    """
    if t < 1:
        raise ConfigurationError(f"stage index must be >= 1, got {t}")
    if rspec.kind == "none":
        return theta_end.copy(), None
    fresh_dist = InitDistribution(seed=stage_seed(dist.seed, t), scheme=dist.scheme)
    fresh = init_params(context.network, fresh_dist, dtype=theta_end.dtype)
    if rspec.kind == "full":
        return fresh, None
    if rspec.kind == "shrink_perturb":
        return shrink_perturb(theta_end, fresh, rspec.lam, rspec.gamma), None
    if context.init_block_norms is None or context.stats_batch is None:
        raise ConfigurationError("layer_wise reinit needs init block norms and a stats batch")
    return layerwise_reinit(
        theta_end,
        fresh,
        theta_end.layout,
        t,
        rspec.repeats,
        context.init_block_norms,
        context.stats_batch,
        context.network,
        context.rescale_mode,
    )
