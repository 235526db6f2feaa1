"""Teacher snapshotting and cached-prediction lookup for self-distillation.

At the end of a stage the model's class probabilities on the clean training
inputs are cached once; later stages read rows out of the cache instead of
re-running the teacher. Stage 1 has no previous stage and must never touch a
cache, which ``distill_rows`` enforces when told the current stage.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, FormatError
from .nn import FrozenNormLayer, NetworkSpec, ParamVector, forward, softmax


@dataclass
class TeacherCache:
    """Per-example probability table from the end of ``source_stage``.

    ``probs`` is read-only after construction. ``reads`` counts distill_rows
    calls so a run can prove stage 1 never consulted the cache.
    """

    probs: np.ndarray
    source_stage: int
    beta: float
    reads: int = field(default=0, compare=False)

    def __post_init__(self):
        p = np.asarray(self.probs)
        if p.ndim != 2:
            raise DataError(f"teacher table must be 2-D, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise DataError("teacher probabilities must be finite and within [0, 1]")
        sums = p.sum(axis=1, dtype=np.float64)
        bad = np.abs(sums - 1.0) > 1e-6
        if np.any(bad):
            i = int(np.argmax(bad))
            raise DataError(f"teacher row {i} sums to {sums[i]!r}, expected 1 within 1e-6")
        if self.beta < 0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")
        if self.source_stage < 1:
            raise ConfigurationError(f"source stage must be >= 1, got {self.source_stage}")
        self.probs = p

    @property
    def num_examples(self) -> int:
        return self.probs.shape[0]


def snapshot_teacher(
    spec: NetworkSpec,
    params: ParamVector,
    train_inputs: np.ndarray,
    source_stage: int,
    beta: float,
    frozen_norm: FrozenNormLayer | None = None,
    batch_size: int = 1024,
) -> TeacherCache:
    """One forward sweep over the clean training inputs, softmaxed and cached.

    Inputs are expected already normalized but never augmented; each cached
    row serves every augmented view of its example in later stages.
    """
    x = np.asarray(train_inputs)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ConfigurationError(f"train inputs must be a nonempty 2-D array, got shape {x.shape}")
    if batch_size < 1:
        raise ConfigurationError(f"batch size must be >= 1, got {batch_size}")
    rows = []
    for start in range(0, x.shape[0], batch_size):
        logits = forward(spec, params, x[start : start + batch_size], frozen_norm)
        rows.append(softmax(logits.astype(np.float64)).astype(np.float32))
    return TeacherCache(np.concatenate(rows, axis=0), source_stage, beta)


def distill_rows(cache: TeacherCache, batch_indices: np.ndarray, stage: int | None = None) -> np.ndarray:
    """Teacher rows aligned with a training batch; counts as one cache read.

    Passing the current stage index turns on the stage-1 guard: the first
    stage optimizes the plain loss and must not look up a teacher.
    """
    if stage is not None and stage <= 1:
        raise ConfigurationError(f"stage {stage} must train without a teacher cache")
    idx = np.asarray(batch_indices)
    if idx.size and (idx.min() < 0 or idx.max() >= cache.num_examples):
        raise ConfigurationError(
            f"batch indices out of range [0, {cache.num_examples}): [{idx.min()}, {idx.max()}]"
        )
    cache.reads += 1
    return cache.probs[idx]


def save_teacher_cache(cache: TeacherCache, path) -> None:
    header = {
        "rows": int(cache.probs.shape[0]),
        "cols": int(cache.probs.shape[1]),
        "source_stage": cache.source_stage,
        "beta": cache.beta,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(cache.probs, dtype="<f4").tobytes())


def load_teacher_cache(path) -> TeacherCache:
    with open(path, "rb") as fh:
        raw = fh.readline()
        try:
            header = json.loads(raw)
            rows, cols = int(header["rows"]), int(header["cols"])
            source_stage, beta = int(header["source_stage"]), float(header["beta"])
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: bad teacher cache header: {exc}") from exc
        body = fh.read()
    want = rows * cols * 4
    if len(body) != want:
        raise FormatError(f"{path}: expected {want} payload bytes after header, found {len(body)}")
    probs = np.frombuffer(body, dtype="<f4").reshape(rows, cols)
    return TeacherCache(probs, source_stage, beta)
