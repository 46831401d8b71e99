"""Embedding evaluation: retrieval, kNN, linear probe and collapse statistics.

Neighbor searches use cosine similarity on l2-normalized rows; ties go to the
lower sample index.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .numkern import softmax_rows

EVAL_FIELDS = ("precision_at_k", "knn_top1", "probe_top1", "embedding_std", "mean_pz2_norm")


@dataclass(frozen=True)
class EvalReport:
    precision_at_k: float
    knn_top1: float
    probe_top1: float
    embedding_std: float
    mean_pz2_norm: float
    effective_rank: float = float("nan")
    k: int = 5
    features_l2_normalized: bool = True

    def to_dict(self):
        return asdict(self)

    def csv_header(self):
        return ",".join(EVAL_FIELDS)

    def csv_row(self):
        return ",".join(repr(float(getattr(self, f))) for f in EVAL_FIELDS)


def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=1, keepdims=True)
    # zero rows stay zero: cosine similarity 0 to everything
    return x / np.maximum(n, 1e-12)


def _ranked_neighbors(queries, bank, k, exclude_self=False):
    sim = _unit_rows(queries) @ _unit_rows(bank).T
    if exclude_self:
        np.fill_diagonal(sim, -np.inf)
    order = np.argsort(-sim, axis=1, kind="stable")
    return order[:, :k]


def precision_at_k(embeddings, labels, k=5):
    """Mean fraction of same-label points among each query's ``k`` nearest others."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = embeddings.shape[0]
    if k < 1 or k >= n:
        raise ValueError(f"k must satisfy 1 <= k < N (N={n}), got {k}")
    nbrs = _ranked_neighbors(embeddings, embeddings, k, exclude_self=True)
    return float(np.mean(labels[nbrs] == labels[:, None]))


def knn_classify(train_emb, train_labels, test_emb, test_labels, k=5):
    if len(train_emb) == 0 or len(test_emb) == 0:
        raise ValueError("kNN needs non-empty train and test splits")
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    k = min(k, len(train_emb))
    nbrs = _ranked_neighbors(test_emb, train_emb, k)
    n_cls = int(max(train_labels.max(), test_labels.max())) + 1
    votes = np.zeros((len(test_emb), n_cls))
    np.add.at(votes, (np.arange(len(test_emb))[:, None], train_labels[nbrs]), 1.0)
    # argmax picks the lowest label on a vote tie
    pred = votes.argmax(axis=1)
    return float(np.mean(pred == test_labels))


def linear_probe(train_emb, train_labels, test_emb, test_labels, epochs=100, lr=0.1, num_classes=None):
    """Multinomial logistic regression on frozen features, full-batch gradient descent.

    Features are standardized with train-split statistics; weights start at zero.
    """
    x_tr = np.asarray(train_emb, dtype=np.float64)
    x_te = np.asarray(test_emb, dtype=np.float64)
    y_tr = np.asarray(train_labels)
    y_te = np.asarray(test_labels)
    if len(x_tr) == 0 or len(x_te) == 0:
        raise ValueError("linear probe needs non-empty train and test splits")
    c = num_classes or int(max(y_tr.max(), y_te.max())) + 1
    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0) + 1e-8
    x_tr = (x_tr - mu) / sd
    x_te = (x_te - mu) / sd
    w = np.zeros((x_tr.shape[1], c))
    b = np.zeros(c)
    onehot = np.eye(c)[y_tr]
    n = len(x_tr)
    for _ in range(epochs):
        logits = x_tr @ w + b
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError("linear probe diverged")
        p = softmax_rows(logits)
        loss = -np.mean(np.log(np.maximum(np.sum(p * onehot, axis=1), 1e-300)))
        if not np.isfinite(loss):
            raise FloatingPointError("linear probe diverged")
        g = (p - onehot) / n
        w -= lr * (x_tr.T @ g)
        b -= lr * g.sum(axis=0)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
        raise FloatingPointError("linear probe diverged")
    pred = (x_te @ w + b).argmax(axis=1)
    return float(np.mean(pred == y_te))


def effective_rank(x):
    s = np.linalg.svd(np.asarray(x, dtype=np.float64), compute_uv=False)
    total = s.sum()
    if total <= 0:
        return 0.0
    p = s[s > 0] / total
    return float(np.exp(-np.sum(p * np.log(p))))


def collapse_diagnostics(embeddings):
    """``embedding_std``: mean per-dimension std of l2-normalized rows.

    ``effective_rank``: exp of the entropy of the normalized singular values
    of the l2-normalized (uncentered) rows.
    """
    u = _unit_rows(embeddings)
    return {"embedding_std": float(np.mean(u.std(axis=0))), "effective_rank": effective_rank(u)}


def track_pz2_norm(z2_batch, tau2=0.07):
    """Mean l2 norm of ``softmax(z2 / tau2)`` rows; lies in ``[1/sqrt(C), 1]``."""
    p = softmax_rows(np.asarray(z2_batch, dtype=np.float64), tau2)
    return float(np.mean(np.linalg.norm(p, axis=1)))
