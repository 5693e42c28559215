"""Prototype construction and squared-distance softmax classification."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_FLOOR = 1e-12


def compute_prototypes(embeddings, labels) -> Tensor:
    """Per-class mean of support embeddings; row c serves class c.

    Labels must cover 0..N-1 with the same shot count per class.
    """
    emb = ad.as_tensor(embeddings)
    labels = np.asarray(labels, dtype=np.int64)
    if emb.ndim != 2 or labels.shape != (emb.shape[0],):
        raise ValueError("need (N*K) x d embeddings and one label per row")
    n_way = int(labels.max()) + 1 if labels.size else 0
    counts = np.bincount(labels, minlength=n_way)
    if n_way < 1 or (counts == 0).any():
        raise ValueError(f"missing class in support labels: counts {counts}")
    if len(set(counts.tolist())) != 1:
        raise ValueError(f"unequal shots per class: counts {counts}")
    k_shot = counts[0]
    member = np.zeros((n_way, labels.size))
    member[labels, np.arange(labels.size)] = 1.0 / k_shot
    return ad.matmul(Tensor(member), emb)


def classify(prototypes, query_embeddings) -> Tensor:
    """Row-stochastic probabilities from squared Euclidean distances.

    probs[j][i] = exp(-d(q_j, p_i)^2) / sum_i' exp(-d(q_j, p_i')^2), with a
    per-row max shift that is analytically a no-op.
    """
    p = ad.as_tensor(prototypes)
    q = ad.as_tensor(query_embeddings)
    if p.ndim != 2 or q.ndim != 2 or p.shape[1] != q.shape[1]:
        raise ValueError(f"dimension mismatch: prototypes {p.shape}, queries {q.shape}")
    diff = ad.sub(ad.reshape(q, (q.shape[0], 1, q.shape[1])),
                  ad.reshape(p, (1, *p.shape)))
    sqdist = ad.reduce_sum(ad.mul(diff, diff), axis=2)
    return ad.softmax(ad.neg(sqdist), axis=1)


def episode_loss(probs, true_labels) -> Tensor:
    """Cross-entropy averaged with the double 1/N * 1/N_q normalization.

    Uniform probabilities therefore give ln(N)/N, not ln(N). Probabilities
    are floored at 1e-12 before the log.
    """
    p = ad.as_tensor(probs)
    labels = np.asarray(true_labels, dtype=np.int64)
    n_query, n_way = p.shape
    if labels.shape != (n_query,):
        raise ValueError("one label per query required")
    if labels.size and (labels.min() < 0 or labels.max() >= n_way):
        raise ValueError(f"labels out of range 0..{n_way - 1}")
    picked = ad.take_rows(ad.reshape(p, (n_query * n_way, 1)),
                          np.arange(n_query) * n_way + labels)
    logs = ad.log(ad.clip_min(picked, LOG_FLOOR))
    return ad.div(ad.neg(ad.reduce_sum(logs)), float(n_way * n_query))


def episode_accuracy(probs, true_labels) -> float:
    """Fraction of queries whose argmax (ties to lowest index) is correct."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    labels = np.asarray(true_labels, dtype=np.int64)
    if labels.shape != (p.shape[0],):
        raise ValueError("one label per query required")
    if labels.size and (labels.min() < 0 or labels.max() >= p.shape[1]):
        raise ValueError(f"labels out of range 0..{p.shape[1] - 1}")
    return float((p.argmax(axis=1) == labels).mean())
