"""Prototype classification losses and the meta-training / fine-tuning composites.

Cross-entropies and the cohesive loss are sums over instances, not means.
Logs are clamped at 1e-30 and the discriminative loss denominator carries a
1e-12 guard so collapsed prototypes yield a large but finite value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_FLOOR = 1e-30
DIS_GUARD = 1e-12


def _protos(prototypes) -> Tensor:
    return getattr(prototypes, "vectors", prototypes)


def _rows(embeddings) -> Tensor:
    emb = ad.constant(embeddings)
    if emb.ndim == 1:
        emb = ad.reshape(emb, (1, emb.shape[0]))
    return emb


def one_hot(labels, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.size, n))
    out[np.arange(labels.size), labels] = 1.0
    return out


def distances(embeddings, prototypes) -> Tensor:
    """Squared Euclidean distance of every embedding to every prototype ``[M x N]``."""
    return ad.pairwise_sq_dist(_rows(embeddings), _protos(prototypes))


def class_probs(embeddings, prototypes) -> Tensor:
    """Softmax over negated squared distances; a vector for a single embedding."""
    emb = ad.constant(embeddings)
    probs = ad.softmax_neg(distances(emb, prototypes))
    if emb.ndim == 1:
        probs = ad.reshape(probs, (probs.shape[1],))
    return probs


def cross_entropy(probs: Tensor, targets: np.ndarray) -> Tensor:
    """``-sum(targets * log(probs))`` with constant targets (one-hot or soft)."""
    return ad.scale(ad.sum(ad.mul(Tensor(targets), ad.log(probs, LOG_FLOOR))), -1.0)


def ce_labeled(embeddings, labels, prototypes) -> Tensor:
    probs = class_probs(_rows(embeddings), prototypes)
    return cross_entropy(probs, one_hot(labels, probs.shape[1]))


ce_query = ce_labeled
ce_support = ce_labeled


def l_dis(prototypes) -> Tensor:
    """Reciprocal of the summed squared distances over unordered prototype pairs."""
    p = _protos(prototypes)
    n = p.shape[0]
    if n < 2:
        raise ValueError("the discriminative loss needs at least two prototypes")
    pairs = np.triu(np.ones((n, n)), k=1)
    total = ad.sum(ad.mul(ad.pairwise_sq_dist(p, p), Tensor(pairs)))
    return ad.reciprocal(ad.add(total, DIS_GUARD))


def l_coh(prototypes, embeddings, labels) -> Tensor:
    """Summed squared distance of each labeled embedding to its own class prototype."""
    d = distances(embeddings, prototypes)
    return ad.sum(ad.mul(d, Tensor(one_hot(labels, d.shape[1]))))


def ce_transductive(probs: Tensor, soft_targets: np.ndarray, epsilon: float):
    """Soft-label cross-entropy over queries whose pseudo-label confidence exceeds ``epsilon``.

    Returns ``(loss, n_confident)``; the loss is a constant zero tensor when
    no query passes the gate.
    """
    soft_targets = np.asarray(soft_targets, dtype=np.float64)
    confident = np.flatnonzero(soft_targets.max(axis=1) > epsilon)
    if confident.size == 0:
        return Tensor(0.0), 0
    picked = ad.take_rows(probs, confident)
    return cross_entropy(picked, soft_targets[confident]), int(confident.size)


@dataclass
class LossBreakdown:
    ce_query: float = 0.0
    ce_support: float = 0.0
    ce_transductive: float = 0.0
    l_dis: float = 0.0
    l_coh: float = 0.0
    total: float = 0.0
    n_confident: int = 0
    tensor: Tensor | None = field(default=None, repr=False, compare=False)


def _accumulate(terms):
    total = None
    for t in terms:
        total = t if total is None else ad.add(total, t)
    return Tensor(0.0) if total is None else total


def loss_train(query_emb, query_y, prototypes, lambda_dis: float, lambda_coh: float) -> LossBreakdown:
    """Query cross-entropy plus weighted discriminative and query-side cohesive terms."""
    ce = ce_labeled(query_emb, query_y, prototypes)
    dis = l_dis(prototypes)
    coh = l_coh(prototypes, query_emb, query_y)
    terms = [ce]
    if lambda_dis:
        terms.append(ad.scale(dis, lambda_dis))
    if lambda_coh:
        terms.append(ad.scale(coh, lambda_coh))
    total = _accumulate(terms)
    return LossBreakdown(ce_query=ce.item(), l_dis=dis.item(), l_coh=coh.item(),
                         total=total.item(), tensor=total)


def loss_finetune(support_emb, support_y, query_emb, prototypes, soft_targets,
                  lambda_dis: float, lambda_coh: float, epsilon: float, *,
                  use_ce_support: bool = True, use_ce_transductive: bool = True) -> LossBreakdown:
    """Support CE + gated transductive CE + weighted discriminative and support-side cohesive terms.

    Query labels are never consulted; only the soft targets are.
    """
    ce_s = ce_labeled(support_emb, support_y, prototypes)
    terms = []
    if use_ce_support:
        terms.append(ce_s)
    ce_tr, n_conf = Tensor(0.0), 0
    if use_ce_transductive:
        ce_tr, n_conf = ce_transductive(class_probs(_rows(query_emb), prototypes),
                                        soft_targets, epsilon)
        if n_conf:
            terms.append(ce_tr)
    dis = l_dis(prototypes)
    coh = l_coh(prototypes, support_emb, support_y)
    if lambda_dis:
        terms.append(ad.scale(dis, lambda_dis))
    if lambda_coh:
        terms.append(ad.scale(coh, lambda_coh))
    total = _accumulate(terms)
    return LossBreakdown(ce_support=ce_s.item(), ce_transductive=ce_tr.item(), l_dis=dis.item(),
                         l_coh=coh.item(), total=total.item(), n_confident=n_conf, tensor=total)
