"""Finite-difference and closed-form conformance suites for the loss kernels.

Each case pairs an analytic gradient from :mod:`iccl.losses` with a
value-only oracle written directly in numpy. Central differences of the
oracle are compared against the analytic gradient.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .losses import TemperatureConfig

FD_STEP = 1e-6
FD_TOL = 1e-5
IDENTITY_TOL = 1e-8
GRAD_KINDS = ("similarity", "infonce", "ce", "mce", "iccl", "uniformity_kl", "final")
BOUND_KINDS = ("similarity", "contrastive", "ce", "mce", "iccl")


def _softmax(x, tau):
    s = x / tau
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _lse(x, tau):
    s = x / tau
    m = s.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(s - m).sum(axis=-1, keepdims=True)))[..., 0]


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def central_differences(value_fn, x, h=FD_STEP):
    """Gradient of ``value_fn`` at ``x`` by central differences.

    ``value_fn`` maps a stack ``(M, *x.shape)`` of inputs to ``M`` values.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    eye = np.eye(n).reshape((n,) + x.shape) * h
    stack = np.concatenate([x + eye, x - eye])
    vals = value_fn(stack)
    return ((vals[:n] - vals[n:]) / (2 * h)).reshape(x.shape)


def relative_error(analytic, numeric):
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(num / den)


@dataclass
class GradCase:
    kind: str
    x: np.ndarray
    analytic: np.ndarray
    value: float
    oracle: object

    def check(self, corrupt=False):
        g = self.analytic
        if corrupt:
            g = g * (1.0 + 1e-3) + 1e-3 * np.linalg.norm(g) / math.sqrt(g.size)
        fd = central_differences(self.oracle, self.x)
        return relative_error(g, fd)


def _random_target(c, rng):
    tau2 = rng.choice([0.07, 0.3, 1.0])
    return _softmax(rng.standard_normal(c), tau2)


def make_case(kind, c, rng):
    """A random input for one loss kind, with its analytic gradient and oracle."""
    q = rng.standard_normal(c)
    if kind == "similarity":
        z = rng.standard_normal(c)
        res = losses.similarity_loss(q, z)
        zh = _unit(z)
        return GradCase(kind, q, res.grad_q1, res.value, lambda Q: -(_unit(Q) @ zh))
    if kind == "infonce":
        keys = rng.standard_normal((16, c))
        pos = int(rng.integers(16))
        tau = float(rng.choice([0.07, 0.2, 1.0]))
        res = losses.infonce_loss(q, keys, pos, tau)
        kh = _unit(keys)

        def f(Q):
            s = _unit(Q) @ kh.T
            return _lse(s, tau) - s[:, pos] / tau

        return GradCase(kind, q, res.grad_q1, res.value, f)
    if kind in ("ce", "mce", "iccl"):
        t = _random_target(c, rng)
        tau = float(rng.choice([0.07, 0.1, 0.5]))
        if kind == "ce":
            res = losses.ce_loss(q, t, tau)
            return GradCase(kind, q, res.grad_q1, res.value, lambda Q: _lse(Q, tau) - Q @ t / tau)
        if kind == "mce":
            res = losses.mce_loss(q, t, tau)
            return GradCase(kind, q, res.grad_q1, res.value, lambda Q: -(_unit(Q) @ t) / tau)
        res = losses.iccl_loss(q, t, tau)
        return GradCase(kind, q, res.grad_q1, res.value, lambda Q: _lse(_unit(Q), tau) - _unit(Q) @ t / tau)

    n = 4
    if kind == "uniformity_kl":
        logits = rng.standard_normal((n, c))
        tau = float(rng.choice([0.1, 0.5, 1.0]))
        res = losses.uniformity_kl(logits, tau)

        def f(X):
            pbar = _softmax(X, tau).mean(axis=1)
            return np.sum((1.0 / c) * (np.log(1.0 / c) - np.log(pbar)), axis=-1)

        return GradCase(kind, logits, res.grads, res.value, f)
    if kind == "final":
        qb = rng.standard_normal((n, c))
        targets = np.stack([_random_target(c, rng) for _ in range(n)])
        cfg = TemperatureConfig(tau1=0.1, adaptive_tau1=bool(rng.integers(2)))
        lam = float(rng.choice([0.0, 1.0, 5.0]))
        res = losses.final_loss(qb, targets, cfg, lam)
        taus = losses.effective_tau1(targets, cfg)[:, None]

        def f(Q):
            u = _unit(Q)
            iccl = _lse(u, taus) - np.sum(u * targets, axis=-1) / taus[:, 0]
            pbar = _softmax(u, taus).mean(axis=1)
            kl = np.sum((1.0 / c) * (np.log(1.0 / c) - np.log(pbar)), axis=-1)
            return iccl.mean(axis=-1) + lam * kl

        return GradCase(kind, qb, res.grads, res.summary, f)
    raise ValueError(f"unknown loss kind {kind!r}")


@dataclass
class GradcheckResult:
    max_rel_err: dict = field(default_factory=dict)
    identity_violations: dict = field(default_factory=dict)
    bound_violations: dict = field(default_factory=dict)
    tol: float = FD_TOL

    @property
    def ok(self):
        return (
            all(v < self.tol for v in self.max_rel_err.values())
            and not any(self.identity_violations.values())
            and not any(self.bound_violations.values())
        )

    def lines(self):
        out = []
        for (kind, c), err in sorted(self.max_rel_err.items()):
            status = "ok" if err < self.tol else "FAIL"
            out.append(f"fd       {kind:<14} C={c:<4} max_rel_err={err:.3e} {status}")
        for kind in sorted(self.identity_violations):
            iv, bv = self.identity_violations[kind], self.bound_violations[kind]
            status = "ok" if iv == 0 and bv == 0 else "FAIL"
            out.append(f"identity {kind:<14} identity_violations={iv} bound_violations={bv} {status}")
        return out


def fd_suite(kinds=GRAD_KINDS, dims=(8, 64, 256), trials=100, seed=0, corrupt=False, result=None):
    result = result or GradcheckResult()
    for kind in kinds:
        for c in dims:
            rng = np.random.default_rng([seed, c, GRAD_KINDS.index(kind)])
            errs = [make_case(kind, c, rng).check(corrupt) for _ in range(trials)]
            result.max_rel_err[(kind, c)] = max(errs)
    return result


def identity_suite(kinds=BOUND_KINDS, dims=(8, 64, 256), draws=1000, seed=0, result=None):
    """Closed-form gradient norms and upper bounds over random draws."""
    result = result or GradcheckResult()
    for kind in kinds:
        rng = np.random.default_rng([seed, BOUND_KINDS.index(kind), 17])
        iv = bv = 0
        for i in range(draws):
            c = dims[i % len(dims)]
            q = rng.standard_normal(c) * rng.choice([0.1, 1.0, 10.0])
            cfg = TemperatureConfig(
                tau1=float(rng.choice([0.07, 0.1, 0.5])), adaptive_tau1=bool(rng.integers(2))
            )
            other = rng.standard_normal(c) if kind in ("similarity", "contrastive") else _random_target(c, rng)
            rep = losses.grad_bound_report(kind, q, other, cfg)
            iv += not rep.identity_holds
            bv += not rep.bound_holds
        result.identity_violations[kind] = iv
        result.bound_violations[kind] = bv
    return result
