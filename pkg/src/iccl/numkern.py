"""Dense numeric kernels shared by every loss.

All functions work on float64 numpy arrays. Single-vector kernels take 1-D
arrays; the ``*_rows`` variants apply the same math row-wise to a 2-D batch.
"""

import numpy as np

EPS_NORM = 1e-12
SIMPLEX_TOL = 1e-9


class DegenerateInputError(ValueError):
    """Raised when a vector is too short to normalize."""


def as_vector(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError(f"{name} must have length >= 2, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def as_batch(x, name="batch"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    if x.shape[0] < 1:
        raise ValueError(f"{name} must have at least one row")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def check_prob(p, name="target"):
    """Validate that ``p`` (1-D or row-wise 2-D) lies on the simplex."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(p < 0) or np.any(p > 1 + SIMPLEX_TOL):
        raise ValueError(f"{name} has entries outside [0, 1]")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > SIMPLEX_TOL):
        raise ValueError(f"{name} does not sum to 1 (max deviation {np.max(np.abs(sums - 1.0)):.3e})")
    return p


def _check_tau(tau):
    tau = np.asarray(tau, dtype=np.float64)
    if not np.all(np.isfinite(tau)) or np.any(tau <= 0):
        raise ValueError(f"temperature must be positive and finite, got {tau}")
    return tau


def softmax_t(x, tau=1.0):
    """Temperature softmax ``exp(x/tau) / sum(exp(x/tau))`` of a 1-D vector."""
    x = as_vector(x)
    tau = float(_check_tau(tau))
    s = (x - x.max()) / tau
    e = np.exp(s)
    return e / e.sum()


def softmax_rows(x, tau=1.0):
    """Row-wise temperature softmax. ``tau`` may be a scalar or one value per row."""
    x = np.asarray(x, dtype=np.float64)
    tau = _check_tau(tau)
    if tau.ndim == 1:
        tau = tau[:, None]
    s = (x - x.max(axis=1, keepdims=True)) / tau
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def logsumexp_t(x, tau=1.0):
    """``log(sum(exp(x/tau)))`` along the last axis, max-shifted."""
    x = np.asarray(x, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if x.ndim == 2 and tau.ndim == 1:
        tau = tau[:, None]
    s = x / tau
    m = s.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(s - m).sum(axis=-1, keepdims=True)))[..., 0]


def l2_normalize(x):
    x = as_vector(x)
    n = np.linalg.norm(x)
    if n <= EPS_NORM:
        raise DegenerateInputError(f"cannot normalize vector with norm {n:.3e}")
    return x / n


def l2_normalize_rows(x):
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(n <= EPS_NORM):
        raise DegenerateInputError("cannot normalize rows with (near) zero norm")
    return x / n


def normalize_jacobian_apply(x, g):
    """Pull back a gradient ``g`` taken w.r.t. ``x/||x||`` onto ``x``.

    Returns ``(g - x_hat * <x_hat, g>) / ||x||``. The result is orthogonal to ``x``.
    """
    x = as_vector(x)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != x.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs g {g.shape}")
    n = np.linalg.norm(x)
    if n <= EPS_NORM:
        raise DegenerateInputError(f"cannot normalize vector with norm {n:.3e}")
    xh = x / n
    return (g - xh * np.dot(xh, g)) / n


def normalize_jacobian_apply_rows(x, g):
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(n <= EPS_NORM):
        raise DegenerateInputError("cannot normalize rows with (near) zero norm")
    xh = x / n
    return (g - xh * np.sum(xh * g, axis=1, keepdims=True)) / n


def softmax_jacobian_apply_rows(p, g, tau=1.0):
    """Pull back ``g`` (gradient w.r.t. ``p = softmax(x/tau)``) onto ``x``, row-wise."""
    tau = np.asarray(tau, dtype=np.float64)
    if tau.ndim == 1:
        tau = tau[:, None]
    return p * (g - np.sum(p * g, axis=1, keepdims=True)) / tau
