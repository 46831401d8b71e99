"""Self-supervised losses with hand-derived gradients w.r.t. the online feature.

Every single-pair kernel returns a :class:`LossResult` holding the loss value
and ``grad_q1 = dL/dq1``. The target side (``z2`` or a pseudo-label
distribution) is always a constant: no gradient is produced for it.

Batched ``*_rows`` variants compute the same per-row values and gradients
for an ``N x C`` batch; they are what the trainer calls.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .numkern import (
    as_batch,
    as_vector,
    check_prob,
    l2_normalize,
    l2_normalize_rows,
    logsumexp_t,
    normalize_jacobian_apply,
    normalize_jacobian_apply_rows,
    softmax_jacobian_apply_rows,
    softmax_rows,
    softmax_t,
)

BOUND_SLACK = 1e-12


class LossKind(str, Enum):
    SIMILARITY = "similarity"
    CONTRASTIVE = "contrastive"
    CE = "ce"
    MCE = "mce"
    ICCL = "iccl"


@dataclass(frozen=True)
class LossResult:
    value: float
    grad_q1: np.ndarray


@dataclass(frozen=True)
class BatchLossResult:
    """Per-row values, gradients of ``summary`` w.r.t. each row, and the batch mean."""

    values: np.ndarray
    grads: np.ndarray
    summary: float


@dataclass(frozen=True)
class TemperatureConfig:
    """Online (``tau1``) and target (``tau2``) temperatures.

    ``adaptive_rule`` selects how ``tau1`` adapts per pair when
    ``adaptive_tau1`` is set: ``"min"`` uses ``min(tau1, ||target||)``,
    ``"bare"`` uses ``||target||`` alone.
    """

    tau1: float = 0.1
    tau2: float = 0.07
    adaptive_tau1: bool = False
    adaptive_rule: str = "min"

    def __post_init__(self):
        for name in ("tau1", "tau2"):
            v = getattr(self, name)
            if not (0 < v <= 10) or not math.isfinite(v):
                raise ValueError(f"{name} must lie in (0, 10], got {v}")
        if self.adaptive_rule not in ("min", "bare"):
            raise ValueError(f"adaptive_rule must be 'min' or 'bare', got {self.adaptive_rule!r}")


@dataclass(frozen=True)
class GradBoundReport:
    """Gradient-magnitude ledger for one input.

    ``norm_sq`` is the squared norm of the analytic gradient, ``closed_form``
    the closed-form expression it must equal and ``upper_bound`` a bound it
    must respect. ``alignment_norm_sq``/``alignment_bound`` certify the
    alignment term on its own.
    """

    loss_kind: LossKind
    norm_sq: float
    closed_form: float
    upper_bound: float
    alignment_norm_sq: float
    alignment_bound: float

    @property
    def identity_holds(self):
        return abs(self.norm_sq - self.closed_form) <= 1e-8 * max(abs(self.closed_form), 1e-300) or (
            self.norm_sq < 1e-24 and self.closed_form < 1e-24
        )

    @property
    def bound_holds(self):
        return (
            self.norm_sq <= self.upper_bound + BOUND_SLACK
            and self.alignment_norm_sq <= self.alignment_bound + BOUND_SLACK
        )


def _fsum_mean(values):
    # fixed left-to-right reduction order
    total = 0.0
    for v in values.tolist():
        total += v
    return total / len(values)


def similarity_loss(q1, z2):
    """Negative cosine similarity ``-<q1/|q1|, z2/|z2|>``."""
    q1 = as_vector(q1, "q1")
    z2h = l2_normalize(as_vector(z2, "z2"))
    q1h = l2_normalize(q1)
    value = -float(np.dot(q1h, z2h))
    return LossResult(value, normalize_jacobian_apply(q1, -z2h))


def similarity_loss_rows(q1, z2):
    q1 = as_batch(q1, "q1")
    z2h = l2_normalize_rows(as_batch(z2, "z2"))
    q1h = l2_normalize_rows(q1)
    values = -np.sum(q1h * z2h, axis=1)
    grads = normalize_jacobian_apply_rows(q1, -z2h) / q1.shape[0]
    return BatchLossResult(values, grads, _fsum_mean(values))


def infonce_loss(q, keys, pos_index, tau):
    """InfoNCE over one positive and ``N - 1`` negatives; all vectors are normalized first."""
    q = as_vector(q, "q")
    keys = as_batch(keys, "keys")
    n = keys.shape[0]
    if n < 2:
        raise ValueError("infonce needs at least one negative key (N >= 2)")
    if not 0 <= pos_index < n:
        raise IndexError(f"pos_index {pos_index} out of range for {n} keys")
    if keys.shape[1] != q.shape[0]:
        raise ValueError(f"key dimension {keys.shape[1]} != query dimension {q.shape[0]}")
    qh = l2_normalize(q)
    kh = l2_normalize_rows(keys)
    sims = kh @ qh
    value = float(logsumexp_t(sims, tau) - sims[pos_index] / tau)
    w = softmax_t(sims, tau)
    grad_qh = (w @ kh - kh[pos_index]) / tau
    return LossResult(value, normalize_jacobian_apply(q, grad_qh))


def ce_loss(q1, target, tau):
    """Cross-entropy between ``target`` and ``softmax(q1/tau)`` on the raw feature."""
    q1 = as_vector(q1, "q1")
    target = check_prob(target)
    if target.shape != q1.shape:
        raise ValueError(f"target shape {target.shape} != q1 shape {q1.shape}")
    value = float(logsumexp_t(q1, tau) - np.dot(target, q1) / tau)
    return LossResult(value, (softmax_t(q1, tau) - target) / tau)


def mce_loss(q1, target, tau):
    """Alignment-only cross-entropy on the normalized feature: ``-<target, q1_hat>/tau``."""
    q1 = as_vector(q1, "q1")
    target = check_prob(target)
    if target.shape != q1.shape:
        raise ValueError(f"target shape {target.shape} != q1 shape {q1.shape}")
    q1h = l2_normalize(q1)
    value = -float(np.dot(target, q1h)) / tau
    return LossResult(value, normalize_jacobian_apply(q1, -target / tau))


def iccl_loss(q1, target, tau1_effective):
    """Cross-entropy between ``target`` and ``softmax(q1_hat/tau1)``."""
    q1 = as_vector(q1, "q1")
    target = check_prob(target)
    if target.shape != q1.shape:
        raise ValueError(f"target shape {target.shape} != q1 shape {q1.shape}")
    if not tau1_effective > 0:
        raise ValueError(f"tau1_effective must be positive, got {tau1_effective}")
    q1h = l2_normalize(q1)
    value = float(logsumexp_t(q1h, tau1_effective) - np.dot(target, q1h) / tau1_effective)
    grad_qh = (softmax_t(q1h, tau1_effective) - target) / tau1_effective
    return LossResult(value, normalize_jacobian_apply(q1, grad_qh))


def iccl_loss_rows(q1, targets, taus):
    """Row-wise ICCL. ``taus`` is a scalar or one effective ``tau1`` per row."""
    q1 = as_batch(q1, "q1")
    targets = check_prob(targets, "targets")
    if targets.shape != q1.shape:
        raise ValueError(f"targets shape {targets.shape} != q1 shape {q1.shape}")
    taus = np.broadcast_to(np.asarray(taus, dtype=np.float64), (q1.shape[0],))
    q1h = l2_normalize_rows(q1)
    values = logsumexp_t(q1h, taus) - np.sum(targets * q1h, axis=1) / taus
    grad_qh = (softmax_rows(q1h, taus) - targets) / taus[:, None]
    grads = normalize_jacobian_apply_rows(q1, grad_qh) / q1.shape[0]
    return BatchLossResult(values, grads, _fsum_mean(values))


def effective_tau1(target, cfg):
    """Per-pair online temperature; ``target`` may be a single distribution or a batch."""
    target = check_prob(target)
    if not cfg.adaptive_tau1:
        if target.ndim == 1:
            return float(cfg.tau1)
        return np.full(target.shape[0], float(cfg.tau1))
    norms = np.linalg.norm(target, axis=-1)
    if cfg.adaptive_rule == "bare":
        out = norms
    else:
        out = np.minimum(cfg.tau1, norms)
    return float(out) if target.ndim == 1 else out


@dataclass(frozen=True)
class UniformityResult:
    value: float
    grads: np.ndarray
    mean_probs: np.ndarray


def uniformity_kl(logits, tau=1.0):
    """Divergence of the batch-mean prediction from the uniform distribution.

    Row probabilities are ``softmax(logits / tau)``; the value is
    ``sum_i (1/C) log((1/C) / pbar_i)`` with ``pbar`` the batch mean. ``grads``
    is the gradient of the value w.r.t. each row of ``logits``.
    """
    logits = as_batch(logits, "logits")
    n, c = logits.shape
    probs = softmax_rows(logits, tau)
    pbar = probs.mean(axis=0)
    value = float(np.sum((1.0 / c) * (np.log(1.0 / c) - np.log(pbar))))
    g_probs = np.broadcast_to(-1.0 / (n * c * pbar), probs.shape)
    grads = softmax_jacobian_apply_rows(probs, g_probs, tau)
    return UniformityResult(value, grads, pbar)


@dataclass(frozen=True)
class FinalLossResult:
    """``values[r] = iccl[r] + lambda_r * kl``; ``grads`` differentiate ``summary``."""

    values: np.ndarray
    grads: np.ndarray
    summary: float
    iccl: BatchLossResult
    kl: UniformityResult


def final_loss(q1_batch, targets, cfg, lambda_r):
    """ICCL plus ``lambda_r`` times the batch uniformity regularizer.

    The regularizer is applied to ``softmax(q1_hat / tau1_eff)`` so that it acts
    on the same distribution the ICCL term trains.
    """
    q1_batch = as_batch(q1_batch, "q1_batch")
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != q1_batch.shape:
        raise ValueError(f"targets shape {targets.shape} != q1 shape {q1_batch.shape}")
    if lambda_r < 0:
        raise ValueError(f"lambda_r must be non-negative, got {lambda_r}")
    taus = effective_tau1(targets, cfg)
    iccl = iccl_loss_rows(q1_batch, targets, taus)
    q1h = l2_normalize_rows(q1_batch)
    kl = uniformity_kl(q1h, taus)
    kl_grads = normalize_jacobian_apply_rows(q1_batch, kl.grads)
    values = iccl.values + lambda_r * kl.value
    grads = iccl.grads + lambda_r * kl_grads
    return FinalLossResult(values, grads, iccl.summary + lambda_r * kl.value, iccl, kl)


def grad_bound_report(loss_kind, q1, other, cfg=None):
    """Compare the analytic gradient norm with its closed form and upper bound.

    ``other`` is ``z2`` for similarity/contrastive and a target distribution for
    the cross-entropy family. ``cfg.tau1`` is the temperature; for ICCL it is
    passed through :func:`effective_tau1`. For the contrastive kind only the
    alignment term ``-<q1_hat, z2_hat>/tau`` is certified.
    """
    kind = LossKind(loss_kind)
    cfg = cfg or TemperatureConfig()
    q1 = as_vector(q1, "q1")
    qn2 = float(np.dot(q1, q1))
    q1h = l2_normalize(q1)
    tau = cfg.tau1

    if kind in (LossKind.SIMILARITY, LossKind.CONTRASTIVE):
        scale = 1.0 if kind is LossKind.SIMILARITY else tau
        g = similarity_loss(q1, other).grad_q1 / scale
        cos = float(np.dot(q1h, l2_normalize(other)))
        norm_sq = float(np.dot(g, g))
        closed = (1.0 - cos**2) / (scale**2 * qn2)
        bound = 1.0 / (scale**2 * qn2)
        return GradBoundReport(kind, norm_sq, closed, bound, norm_sq, bound)

    target = check_prob(other)
    tn2 = float(np.dot(target, target))
    tn = math.sqrt(tn2)
    if kind is LossKind.CE:
        g = ce_loss(q1, target, tau).grad_q1
        diff = softmax_t(q1, tau) - target
        norm_sq = float(np.dot(g, g))
        return GradBoundReport(
            kind, norm_sq, float(np.dot(diff, diff)) / tau**2, 2.0 / tau**2, tn2 / tau**2, 1.0 / tau**2
        )

    if kind is LossKind.ICCL:
        tau = effective_tau1(target, cfg)
    mce = mce_loss(q1, target, tau).grad_q1
    mce_sq = float(np.dot(mce, mce))
    mce_closed = tn2 / (tau**2 * qn2) * (1.0 - float(np.dot(q1h, target / tn)) ** 2)
    mce_bound = tn2 / (tau**2 * qn2)
    if kind is LossKind.MCE:
        return GradBoundReport(kind, mce_sq, mce_closed, mce_bound, mce_sq, mce_bound)

    g = iccl_loss(q1, target, tau).grad_q1
    diff = softmax_t(q1h, tau) - target
    dn2 = float(np.dot(diff, diff))
    if dn2 > 0:
        closed = dn2 / (tau**2 * qn2) * (1.0 - float(np.dot(q1h, diff)) ** 2 / dn2)
    else:
        closed = 0.0
    norm_sq = float(np.dot(g, g))
    return GradBoundReport(kind, norm_sq, closed, dn2 / (tau**2 * qn2), mce_sq, mce_bound)


@dataclass(frozen=True)
class Prop1Check:
    lhs: float
    mid: float
    rhs: float
    holds: bool


def prop1_inequality_check(p_i, p_j, y, slack=1e-12):
    """Check ``p_i[y] p_j[y] <= <p_i, p_j> <= cos(p_i, p_j)``."""
    p_i = check_prob(p_i, "p_i")
    p_j = check_prob(p_j, "p_j")
    if p_i.shape != p_j.shape or p_i.ndim != 1:
        raise ValueError("p_i and p_j must be 1-D distributions of equal length")
    if not 0 <= y < p_i.shape[0]:
        raise IndexError(f"class index {y} out of range for C={p_i.shape[0]}")
    lhs = float(p_i[y] * p_j[y])
    mid = float(np.dot(p_i, p_j))
    rhs = mid / float(np.linalg.norm(p_i) * np.linalg.norm(p_j))
    return Prop1Check(lhs, mid, rhs, lhs <= mid + slack and mid <= rhs + slack)
