"""Command-line entry points: ``run``, ``sweep``, ``gradcheck`` and ``eval``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical
divergence, 3 gradient-check violation.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_config_text
from .data import DatasetFormatError
from .gradcheck import BOUND_KINDS, GRAD_KINDS, fd_suite, identity_suite
from .metrics import EvalReport, collapse_diagnostics, knn_classify, linear_probe, precision_at_k
from .train import DivergenceError, run_experiment, run_sweep, split_indices, write_report

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_GRADCHECK = 3


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _load_config(path):
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text), text


def _csv_list(raw, cast):
    try:
        return [cast(v.strip()) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {raw!r}: {exc}") from None


def cmd_run(args):
    cfg, text = _load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    try:
        report = run_experiment(cfg, config_text=text, per_step_log=args.per_step_log)
    except DivergenceError as exc:
        out.mkdir(parents=True, exist_ok=True)
        (out / "divergence.json").write_text(json.dumps(exc.record, indent=2) + "\n", encoding="utf-8")
        _err(str(exc))
        return EXIT_DIVERGED
    write_report(report, out)
    ev = report.eval
    print(f"wrote {out}: precision@{ev.k}={ev.precision_at_k:.4f} knn={ev.knn_top1:.4f} probe={ev.probe_top1:.4f}")
    return EXIT_OK


def cmd_sweep(args):
    cfg, _ = _load_config(args.config)
    # strings go through the config coercion, so every point is validated before training
    values = _csv_list(args.values, str)
    if not values:
        raise ConfigError("--values is empty")
    for v in values:
        cfg.replace(args.axis, v)
    out = Path(args.out or cfg.output_dir)
    try:
        _, summary = run_sweep(cfg, args.axis, values, args.seed_policy, out)
    except DivergenceError as exc:
        out.mkdir(parents=True, exist_ok=True)
        (out / "divergence.json").write_text(json.dumps(exc.record, indent=2) + "\n", encoding="utf-8")
        _err(str(exc))
        return EXIT_DIVERGED
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_gradcheck(args):
    all_kinds = list(GRAD_KINDS) + [k for k in BOUND_KINDS if k not in GRAD_KINDS]
    kinds = _csv_list(args.loss, str) if args.loss else all_kinds
    unknown = [k for k in kinds if k not in all_kinds]
    if unknown:
        raise ConfigError(f"--loss: unknown kind(s) {unknown}; choose from {all_kinds}")
    dims = tuple(_csv_list(args.dims, int))
    if not dims or min(dims) < 2:
        raise ConfigError("--dims: need dimensions >= 2")
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    fd_kinds = [k for k in kinds if k in GRAD_KINDS]
    res = fd_suite(fd_kinds, dims, args.trials, args.seed, corrupt=args.corrupt_grad)
    bound_kinds = [k for k in kinds if k in BOUND_KINDS]
    if bound_kinds and not args.skip_identities:
        identity_suite(bound_kinds, dims, args.draws, args.seed, result=res)
    for line in res.lines():
        print(line)
    print("gradcheck: " + ("ok" if res.ok else "VIOLATION"))
    return EXIT_OK if res.ok else EXIT_GRADCHECK


def _load_matrix(path, what):
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DatasetFormatError(f"{what} {path}: {exc}") from None
    return arr


def cmd_eval(args):
    emb = _load_matrix(args.embeddings, "embeddings")
    labels = _load_matrix(args.labels, "labels")
    if labels.shape[1] != 1:
        raise DatasetFormatError(f"labels {args.labels}: expected one label per line")
    labels = labels[:, 0]
    if not np.all(labels == np.round(labels)) or labels.min() < 0:
        raise DatasetFormatError(f"labels {args.labels}: labels must be non-negative integers")
    labels = labels.astype(np.int64)
    if len(labels) != len(emb):
        raise DatasetFormatError(f"{len(emb)} embeddings but {len(labels)} labels")
    if not np.all(np.isfinite(emb)):
        raise DatasetFormatError(f"embeddings {args.embeddings}: non-finite values")
    tr, te = split_indices(len(emb), args.test_fraction, args.seed)
    diag = collapse_diagnostics(emb)
    report = EvalReport(
        precision_at_k=precision_at_k(emb, labels, args.k),
        knn_top1=knn_classify(emb[tr], labels[tr], emb[te], labels[te], args.knn_k),
        probe_top1=linear_probe(emb[tr], labels[tr], emb[te], labels[te], num_classes=int(labels.max()) + 1),
        embedding_std=diag["embedding_std"],
        mean_pz2_norm=float("nan"),
        effective_rank=diag["effective_rank"],
        k=args.k,
    )
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="iccl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one model and write report.json, metrics.csv and config.echo")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (default: output_dir from the config)")
    r.add_argument("--per-step-log", action="store_true", help="also write steps.csv")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="one run per value of a config key")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, help="config key, e.g. lambda_r or labels.kind")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--seed-policy", choices=("same", "offset"), default="same")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gradcheck", help="finite-difference and closed-form gradient suites")
    g.add_argument("--loss", help="comma-separated loss kinds (default: all)")
    g.add_argument("--dims", default="8,64,256")
    g.add_argument("--trials", type=int, default=100)
    g.add_argument("--draws", type=int, default=1000, help="random draws for the identity suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--skip-identities", action="store_true")
    g.add_argument("--corrupt-grad", action="store_true", help="perturb analytic gradients (mutation test)")
    g.set_defaults(func=cmd_gradcheck)

    e = sub.add_parser("eval", help="evaluate an embedding dump")
    e.add_argument("--embeddings", required=True, help="comma-separated rows, one embedding per line")
    e.add_argument("--labels", required=True, help="one integer label per line")
    e.add_argument("-k", type=int, default=5)
    e.add_argument("--knn-k", type=int, default=5)
    e.add_argument("--test-fraction", type=float, default=0.2)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, OSError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except ValueError as exc:
        # metric preconditions such as k >= N
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
