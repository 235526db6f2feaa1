"""SGD with momentum, coupled weight decay, and per-stage learning-rate schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError
from .nn import ParamVector


@dataclass
class OptimState:
    """Momentum buffer plus the fixed optimizer hyperparameters.

    Weight decay is coupled L2: it is added to the gradient before the
    momentum update, so the buffer accumulates the decay term too.
    """

    momentum_buffer: np.ndarray
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ConfigurationError(f"weight decay must be >= 0, got {self.weight_decay}")

    @staticmethod
    def fresh(params: ParamVector, momentum: float = 0.9, weight_decay: float = 0.0) -> "OptimState":
        return OptimState(np.zeros_like(params.values), momentum, weight_decay)


def sgd_step(
    params: ParamVector,
    grads: np.ndarray,
    state: OptimState,
    lr: float,
    step: int | None = None,
) -> tuple[ParamVector, OptimState]:
    """One optimizer update; returns the new parameters and mutated state.

    With lr == 0 the parameters come back unchanged (the momentum buffer
    still accumulates, matching a paused-but-running optimizer).
    """
    if lr < 0.0:
        raise ConfigurationError(f"learning rate must be >= 0, got {lr}")
    g = np.asarray(grads)
    if g.shape != params.values.shape:
        raise ConfigurationError(f"gradient shape {g.shape} != parameter shape {params.values.shape}")
    if not np.all(np.isfinite(g)):
        where = f" at step {step}" if step is not None else ""
        raise NumericalError(f"non-finite gradient{where}")
    if state.weight_decay:
        g = g + state.weight_decay * params.values
    state.momentum_buffer *= state.momentum
    state.momentum_buffer += g
    new_values = params.values - lr * state.momentum_buffer.astype(params.dtype, copy=False)
    return ParamVector(new_values, params.layout), state


@dataclass(frozen=True)
class LrSchedule:
    """Learning rate as a function of the step index inside the current stage.

    ``constant`` always returns eta_max. ``cosine_per_stage`` anneals from
    eta_max to eta_min across each stage and snaps back to eta_max when the
    next stage starts, since the step index resets to 0.
    """

    kind: str
    eta_max: float
    eta_min: float = 0.0
    steps_per_stage: int = field(default=1)

    def __post_init__(self):
        if self.kind not in ("constant", "cosine_per_stage"):
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if self.eta_max <= 0:
            raise ConfigurationError(f"eta_max must be > 0, got {self.eta_max}")
        if not 0 <= self.eta_min <= self.eta_max:
            raise ConfigurationError(f"need 0 <= eta_min <= eta_max, got eta_min={self.eta_min}")
        if self.steps_per_stage < 1:
            raise ConfigurationError(f"steps_per_stage must be >= 1, got {self.steps_per_stage}")


def lr_at(schedule: LrSchedule, step_in_stage: int) -> float:
    """Learning rate at a 0-based step index within the stage; index S is the end point."""
    s, total = step_in_stage, schedule.steps_per_stage
    if not 0 <= s <= total:
        raise ConfigurationError(f"step {s} outside [0, {total}]")
    if schedule.kind == "constant":
        return schedule.eta_max
    span = schedule.eta_max - schedule.eta_min
    return schedule.eta_min + 0.5 * span * (1.0 + math.cos(math.pi * s / total))
