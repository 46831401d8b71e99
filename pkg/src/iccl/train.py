"""Two-phase self-supervised training on synthetic data, plus sweeps.

Epochs before ``floor(switch_fraction * epochs)`` minimize the similarity
loss; the rest minimize ICCL plus the uniformity regularizer. Both losses
are computed and logged at every step regardless of the active phase.
"""

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import emit_config
from .data import AugmentConfig, make_blobs, two_views
from .labels import PseudoLabelGenerator, generate_targets
from .losses import final_loss, similarity_loss_rows
from .numkern import DegenerateInputError, l2_normalize_rows
from .metrics import (
    EvalReport,
    collapse_diagnostics,
    knn_classify,
    linear_probe,
    precision_at_k,
    track_pz2_norm,
)
from .model import (
    MlpNetwork,
    MomentumEncoder,
    OptimizerState,
    backward,
    cosine_lr,
    ema_update,
    forward,
    optimizer_step,
)

METRICS_HEADER = (
    "epoch",
    "lr",
    "loss_similarity",
    "loss_iccl_minus_logc",
    "loss_final",
    "mean_pz2_norm",
    "embedding_std",
    "effective_rank",
)
STEP_HEADER = ("step", "epoch", "phase", "lr", "loss_similarity", "loss_iccl_minus_logc", "loss_final")
PZ2_CHECK_TAUS = (0.05, 0.07, 0.1)
RUN_CHOICES = {
    "pseudo_label_features": "target-branch projector output (l2-normalized when labels.normalize_input)",
    "retrieval_features": "encoder output, l2-normalized",
    "collapse_features": "online projector output, l2-normalized",
}


class DivergenceError(FloatingPointError):
    def __init__(self, record):
        super().__init__(f"training diverged at step {record['step']}: {record['reason']}")
        self.record = record


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_similarity: float
    loss_iccl_minus_logc: float
    loss_final: float
    mean_pz2_norm: float
    embedding_std: float
    effective_rank: float

    def csv_row(self):
        return ",".join([str(self.epoch)] + [repr(float(getattr(self, k))) for k in METRICS_HEADER[1:]])


@dataclass
class RunReport:
    records: list
    eval: EvalReport
    config: dict
    config_echo: str
    initial_embedding_std: float
    initial_effective_rank: float
    pz2_checkpoints: list = field(default_factory=list)
    choices: dict = field(default_factory=lambda: dict(RUN_CHOICES))
    wall_clock_seconds: float = 0.0
    steps: list | None = None

    def series(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def metrics_csv(self):
        return "\n".join([",".join(METRICS_HEADER)] + [r.csv_row() for r in self.records]) + "\n"

    def to_dict(self):
        return {
            "records": [asdict(r) for r in self.records],
            "eval": self.eval.to_dict(),
            "config": self.config,
            "config_echo": self.config_echo,
            "initial_embedding_std": self.initial_embedding_std,
            "initial_effective_rank": self.initial_effective_rank,
            "pz2_checkpoints": self.pz2_checkpoints,
            "choices": self.choices,
            "wall_clock_seconds": self.wall_clock_seconds,
        }


class SiameseModel:
    """Online encoder/projector/predictor and a target encoder/projector."""

    def __init__(self, cfg, in_dim, seed):
        m = cfg.model
        ss = np.random.SeedSequence(seed)
        s_enc, s_proj, s_pred = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        self.encoder = MlpNetwork.build([in_dim, m.hidden, m.hidden], ["relu", "relu"], seed=s_enc)
        self.projector = MlpNetwork.build(
            [m.hidden, m.hidden, m.out_dim],
            ["relu", "identity"],
            [m.standardize, False],
            seed=s_proj,
        )
        self.predictor = MlpNetwork.build(
            [m.out_dim, m.predictor_hidden, m.out_dim], ["relu", "identity"], seed=s_pred
        )
        self.online = [self.encoder, self.projector, self.predictor]
        if cfg.use_momentum_encoder:
            self.target_encoder = MomentumEncoder.from_online(self.encoder, cfg.ema_momentum)
            self.target_projector = MomentumEncoder.from_online(self.projector, cfg.ema_momentum)
        else:
            self.target_encoder = self.target_projector = None

    def params(self):
        return [p for net in self.online for p in net.params()]

    def set_params(self, params):
        i = 0
        for net in self.online:
            n = len(net.params())
            net.set_params(params[i : i + n])
            i += n

    def online_forward(self, x):
        c_enc, h = forward(self.encoder, x)
        c_proj, z = forward(self.projector, h)
        c_pred, q = forward(self.predictor, z)
        return (c_enc, c_proj, c_pred), h, z, q

    def online_backward(self, caches, grad_q):
        g_pred, g = backward(self.predictor, caches[2], grad_q)
        g_proj, g = backward(self.projector, caches[1], g)
        g_enc, _ = backward(self.encoder, caches[0], g)
        return g_enc + g_proj + g_pred

    def target_features(self, x):
        """Projector output of the target branch; treated as a constant."""
        enc = self.target_encoder.net if self.target_encoder else self.encoder
        proj = self.target_projector.net if self.target_projector else self.projector
        _, h = forward(enc, x)
        _, z = forward(proj, h)
        return z

    def ema_step(self):
        if self.target_encoder is None:
            return
        ema_update(self.target_encoder, self.encoder.params())
        ema_update(self.target_projector, self.projector.params())

    def embed(self, x):
        _, h = forward(self.encoder, x)
        return h

    def project(self, x):
        _, h = forward(self.encoder, x)
        _, z = forward(self.projector, h)
        return z


def split_indices(n, test_fraction, seed):
    perm = np.random.default_rng([seed, 7919]).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def switch_epoch(cfg):
    return int(math.floor(cfg.switch_fraction * cfg.epochs))


def label_input(z, cfg):
    """Target-branch features as fed to the pseudo-label softmax."""
    return l2_normalize_rows(z) if cfg.labels.normalize_input else z


def _direction(q, z_target, gen, cfg, use_similarity):
    sim = similarity_loss_rows(q, z_target)
    targets = generate_targets(gen, label_input(z_target, cfg))
    fin = final_loss(q, targets, cfg.temperatures, cfg.lambda_r)
    grad = sim.grads if use_similarity else fin.grads
    return sim.summary, fin.iccl.summary, fin.summary, grad


def _batch_step(model, v1, v2, gens, cfg, use_similarity):
    """Losses, mean ``||P(z2)||`` and parameter gradients for one batch of view pairs."""
    caches1, _, _, q1 = model.online_forward(v1)
    z2t = model.target_features(v2)
    s, ic, fl, g1 = _direction(q1, z2t, gens[0], cfg, use_similarity)
    pz2 = track_pz2_norm(label_input(z2t, cfg), cfg.tau2)
    if not cfg.symmetrize:
        return s, ic, fl, pz2, model.online_backward(caches1, g1)
    caches2, _, _, q2 = model.online_forward(v2)
    z1t = model.target_features(v1)
    s2, ic2, fl2, g2 = _direction(q2, z1t, gens[1], cfg, use_similarity)
    ga = model.online_backward(caches1, 0.5 * g1)
    gb = model.online_backward(caches2, 0.5 * g2)
    grads = [a + b for a, b in zip(ga, gb)]
    pz2 = 0.5 * (pz2 + track_pz2_norm(label_input(z1t, cfg), cfg.tau2))
    return 0.5 * (s + s2), 0.5 * (ic + ic2), 0.5 * (fl + fl2), pz2, grads


def _diagnostic(step, epoch, lr, model, losses=None, grads=None, reason="non-finite loss or gradient"):
    s, ic, fl = losses if losses is not None else (math.nan, math.nan, math.nan)
    return {
        "step": step,
        "epoch": epoch,
        "lr": lr,
        "reason": reason,
        "loss_similarity": s,
        "loss_iccl": ic,
        "loss_final": fl,
        "grad_norms": [float(np.linalg.norm(g)) for g in grads] if grads is not None else [],
        "param_norms": [float(np.linalg.norm(p)) for p in model.params()],
    }


def evaluate(model, dataset, train_idx, test_idx, cfg):
    feats = model.embed(dataset.samples)
    labels = dataset.labels
    z_t = label_input(model.target_features(dataset.samples), cfg)
    diag = collapse_diagnostics(model.project(dataset.samples))
    return EvalReport(
        precision_at_k=precision_at_k(feats, labels, cfg.eval.k),
        knn_top1=knn_classify(feats[train_idx], labels[train_idx], feats[test_idx], labels[test_idx], cfg.eval.knn_k),
        probe_top1=linear_probe(
            feats[train_idx],
            labels[train_idx],
            feats[test_idx],
            labels[test_idx],
            epochs=cfg.eval.probe_epochs,
            lr=cfg.eval.probe_lr,
            num_classes=dataset.num_classes,
        ),
        embedding_std=diag["embedding_std"],
        mean_pz2_norm=track_pz2_norm(z_t, cfg.tau2),
        effective_rank=diag["effective_rank"],
        k=cfg.eval.k,
    )


def run_experiment(cfg, config_text=None, per_step_log=False, dataset=None):
    """Train one model and return its :class:`RunReport`.

    ``dataset`` overrides the synthetic data described by ``cfg.data``.
    Raises :class:`DivergenceError` on a non-finite loss.
    """
    t0 = time.perf_counter()
    if dataset is None:
        d = cfg.data
        dataset = make_blobs(
            d.classes, d.dim, d.n_per_class, d.spread, d.seed, d.sigma, d.nuisance_dims, d.nuisance_sigma
        )
    train_idx, test_idx = split_indices(len(dataset), cfg.data.test_fraction, cfg.data.seed)
    x_train = dataset.samples[train_idx]
    c = cfg.model.out_dim
    log_c = math.log(c)

    model = SiameseModel(cfg, dataset.dim, cfg.seed)
    aug = AugmentConfig(cfg.aug.noise_sigma, cfg.aug.mask_fraction, cfg.aug.scale_jitter)
    gen_kwargs = dict(
        kind=cfg.labels.kind,
        tau2=cfg.tau2,
        sinkhorn_iters=cfg.labels.sinkhorn_iters,
        center_momentum=cfg.labels.center_momentum,
    )
    gens = [PseudoLabelGenerator(**gen_kwargs), PseudoLabelGenerator(**gen_kwargs)]
    opt = OptimizerState(cfg.optim.kind, cfg.optim.lr, cfg.optim.momentum, cfg.optim.weight_decay)
    rng = np.random.default_rng([cfg.seed, 104729])

    bs = min(cfg.batch_size, len(train_idx))
    steps_per_epoch = len(train_idx) // bs
    total_steps = steps_per_epoch * cfg.epochs
    warmup = steps_per_epoch * cfg.optim.warmup_epochs
    boundary = switch_epoch(cfg)
    checkpoints = sorted({0, cfg.epochs // 2, cfg.epochs - 1})

    init = collapse_diagnostics(model.project(dataset.samples))
    records, step_rows, pz2_checks = [], [], []
    step = 0
    for epoch in range(cfg.epochs):
        use_similarity = epoch < boundary
        order = rng.permutation(len(train_idx))
        sums = np.zeros(4)
        lr = 0.0
        for b in range(steps_per_epoch):
            xb = x_train[order[b * bs : (b + 1) * bs]]
            v1, v2 = two_views(xb, aug, rng)
            lr = cosine_lr(step, total_steps, cfg.optim.lr, warmup)
            try:
                s, ic, fl, pz2, grads = _batch_step(model, v1, v2, gens, cfg, use_similarity)
            except DegenerateInputError as exc:
                # a zero-norm feature row means the network has blown up or died
                raise DivergenceError(_diagnostic(step, epoch, lr, model, reason=str(exc))) from exc
            if not all(math.isfinite(v) for v in (s, ic, fl)) or not all(np.all(np.isfinite(g)) for g in grads):
                raise DivergenceError(_diagnostic(step, epoch, lr, model, (s, ic, fl), grads))
            model.set_params(optimizer_step(opt, model.params(), grads, lr))
            model.ema_step()
            sums += (s, ic - log_c, fl, pz2)
            if per_step_log:
                step_rows.append((step, epoch, "similarity" if use_similarity else "final", lr, s, ic - log_c, fl))
            step += 1

        means = sums / steps_per_epoch
        proj = model.project(dataset.samples)
        if not np.all(np.isfinite(proj)):
            raise DivergenceError(_diagnostic(step, epoch, lr, model, reason="non-finite features after update"))
        diag = collapse_diagnostics(proj)
        records.append(EpochRecord(epoch, lr, *means.tolist(), diag["embedding_std"], diag["effective_rank"]))
        if epoch in checkpoints:
            z_t = label_input(model.target_features(dataset.samples), cfg)
            pz2_checks.append({"epoch": epoch, **{str(t): track_pz2_norm(z_t, t) for t in PZ2_CHECK_TAUS}})

    report = RunReport(
        records=records,
        eval=evaluate(model, dataset, train_idx, test_idx, cfg),
        config=cfg.to_dict(),
        config_echo=config_text if config_text is not None else emit_config(cfg),
        initial_embedding_std=init["embedding_std"],
        initial_effective_rank=init["effective_rank"],
        pz2_checkpoints=pz2_checks,
        steps=step_rows if per_step_log else None,
    )
    report.wall_clock_seconds = time.perf_counter() - t0
    return report


def write_report(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    (out / "metrics.csv").write_text(report.metrics_csv(), encoding="utf-8")
    (out / "config.echo").write_text(report.config_echo, encoding="utf-8")
    ev = report.eval
    (out / "eval.csv").write_text(ev.csv_header() + "\n" + ev.csv_row() + "\n", encoding="utf-8")
    if report.steps is not None:
        lines = [",".join(STEP_HEADER)]
        for row in report.steps:
            lines.append(",".join([str(row[0]), str(row[1]), row[2]] + [repr(float(v)) for v in row[3:]]))
        (out / "steps.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


SUMMARY_FIELDS = ("precision_at_k", "knn_top1", "probe_top1", "embedding_std", "mean_pz2_norm")


def run_sweep(base_cfg, axis, values, seed_policy="same", out_dir=None):
    """One run per value of ``axis``; returns ``(reports, summary_csv)``.

    ``seed_policy`` is ``"same"`` (every run uses ``base_cfg.seed``) or
    ``"offset"`` (run ``i`` uses ``base_cfg.seed + i``).
    """
    if seed_policy not in ("same", "offset"):
        raise ValueError(f"unknown seed policy {seed_policy!r}")
    base_cfg.get(axis)  # raises ConfigError on an unknown axis
    reports = []
    rows = [",".join((axis, "seed") + SUMMARY_FIELDS)]
    for i, value in enumerate(values):
        cfg = base_cfg.replace(axis, value)
        if seed_policy == "offset":
            cfg = cfg.replace("seed", base_cfg.seed + i)
        report = run_experiment(cfg)
        reports.append(report)
        if out_dir is not None:
            write_report(report, Path(out_dir) / f"{axis}={value}")
        rows.append(
            ",".join([str(value), str(cfg.seed)] + [repr(float(getattr(report.eval, f))) for f in SUMMARY_FIELDS])
        )
    summary = "\n".join(rows) + "\n"
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "summary.csv").write_text(summary, encoding="utf-8")
    return reports, summary
