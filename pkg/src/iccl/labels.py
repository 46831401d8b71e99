"""Pseudo-label generators turning target-branch features into distributions."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .numkern import as_batch, as_vector, softmax_rows


class GeneratorKind(str, Enum):
    SOFTMAX_SHARP = "softmax_sharp"
    SINKHORN = "sinkhorn"
    CENTERING = "centering"


@dataclass
class PseudoLabelGenerator:
    kind: GeneratorKind = GeneratorKind.SOFTMAX_SHARP
    tau2: float = 0.07
    sinkhorn_iters: int = 3
    center_momentum: float = 0.9
    center_state: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.kind = GeneratorKind(self.kind)
        if not self.tau2 > 0:
            raise ValueError(f"tau2 must be positive, got {self.tau2}")
        if self.kind is GeneratorKind.SINKHORN and self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn_iters must be >= 1")
        if not 0 <= self.center_momentum < 1:
            raise ValueError(f"center_momentum must lie in [0, 1), got {self.center_momentum}")


def sinkhorn_knopp(logits, iters=3, tau2=0.07):
    """Balanced soft assignment of ``N`` rows onto ``C`` columns.

    Starts from ``exp(logits / tau2)`` and alternates column scaling (each
    column sums to ``N/C``) with row scaling (each row sums to 1), ending on
    a row scaling so every output row is a distribution.
    """
    logits = as_batch(logits, "logits")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    n, c = logits.shape
    q = np.exp((logits - logits.max()) / tau2)
    # global shift can underflow whole rows when rows differ by > ~700*tau2
    q = np.maximum(q, np.finfo(np.float64).tiny)
    for _ in range(iters):
        q *= (n / c) / q.sum(axis=0, keepdims=True)
        q /= q.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(q)) or np.any(q.sum(axis=1) <= 0):
        raise FloatingPointError("sinkhorn produced an empty or non-finite row")
    return q


def centering_update(center, batch_mean, m):
    if not 0 <= m < 1:
        raise ValueError(f"centering momentum must lie in [0, 1), got {m}")
    center = np.asarray(center, dtype=np.float64)
    batch_mean = np.asarray(batch_mean, dtype=np.float64)
    if center.shape != batch_mean.shape:
        raise ValueError(f"shape mismatch: center {center.shape} vs batch mean {batch_mean.shape}")
    return m * center + (1.0 - m) * batch_mean


def generate_targets(gen, z2_batch):
    """Targets for one batch of target-branch features.

    Centering mutates ``gen.center_state``: logits are centered with the
    current state, then the state absorbs this batch's mean.
    """
    z2 = as_batch(z2_batch, "z2_batch")
    if gen.kind is GeneratorKind.SOFTMAX_SHARP:
        return softmax_rows(z2, gen.tau2)
    if gen.kind is GeneratorKind.SINKHORN:
        return sinkhorn_knopp(z2, gen.sinkhorn_iters, gen.tau2)
    if gen.center_state is None:
        gen.center_state = np.zeros(z2.shape[1])
    center = as_vector(gen.center_state, "center_state")
    if center.shape[0] != z2.shape[1]:
        raise ValueError(f"center_state has dimension {center.shape[0]}, batch has {z2.shape[1]}")
    out = softmax_rows(z2 - center, gen.tau2)
    gen.center_state = centering_update(center, z2.mean(axis=0), gen.center_momentum)
    return out
