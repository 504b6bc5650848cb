"""Transductive fine-tuning on one target task with moving-average pseudo-labels.

At every iteration the prototypes are rebuilt from the current encoder,
each query's distance vector is blended into a running average with an
annealed weight, and the softmax of that running average serves as a soft
pseudo-label.  Confident queries join the support cross-entropy and the
prototype regularizers in one gradient step on the encoder.  The PCN is
never updated here, though gradients flow through it into the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from ._jsonio import fmt
from .autodiff import Tape, Tensor
from .config import AdaptConfig
from .episodes import AdaptTask, derive_rng
from .exceptions import NumericError
from .losses import class_probs, distances, loss_finetune
from .models import EncoderParams, PcnParams, encoder_forward
from .optim import make_optimizer
from .prototypes import compute_prototypes

TRACE_HEADER = ("iter", "alpha", "n_confident", "ce_support", "ce_transductive",
                "l_dis", "l_coh_ft", "total")


@dataclass
class WmaState:
    h_tilde: np.ndarray
    alpha: float
    iter: int = 0

    @classmethod
    def start(cls, n_query: int, n_way: int, alpha0: float) -> "WmaState":
        return cls(np.zeros((n_query, n_way)), float(alpha0), 0)


def anneal_alpha(alpha_prev: float, gamma: float) -> float:
    return gamma * alpha_prev


def distance_vector(query_emb, prototypes) -> np.ndarray:
    """Squared distances from each query to each prototype, ``[M x N]`` (or ``[N]``)."""
    d = distances(query_emb, prototypes).data
    return d[0] if np.ndim(getattr(query_emb, "data", query_emb)) == 1 else d


def wma_update(state: WmaState, h: np.ndarray) -> np.ndarray:
    """Blend ``h`` into the running vector with the state's current ``alpha``."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != state.h_tilde.shape:
        raise ValueError(f"distance vector shape {h.shape} != running shape {state.h_tilde.shape}")
    state.h_tilde = state.alpha * h + (1.0 - state.alpha) * state.h_tilde
    return state.h_tilde


def pseudo_labels(h_tilde: np.ndarray) -> np.ndarray:
    return ad.softmax_neg(Tensor(h_tilde)).data


@dataclass
class AdaptResult:
    encoder: EncoderParams
    predictions: np.ndarray
    probabilities: np.ndarray
    trace: list = field(default_factory=list)


def _prototypes(emb, task, pcn, cfg, rng):
    return compute_prototypes(emb, task.support_y, task.n_way, use_pcn=cfg.use_pcn, pcn=pcn,
                              clustering=cfg.clustering, rng=rng)


def initial_predictions(encoder: EncoderParams, pcn: PcnParams, task: AdaptTask,
                        cfg: AdaptConfig) -> np.ndarray:
    """Plain prototype-classifier probabilities before any fine-tuning."""
    enc = encoder.map(Tensor)
    pcn_c = pcn.map(Tensor)
    protos = _prototypes(encoder_forward(task.support_x, enc), task, pcn_c, cfg,
                         derive_rng(task.seed, "kmeans", 0))
    return class_probs(encoder_forward(task.query_x, enc), protos).data


def finetune_episode(encoder: EncoderParams, pcn: PcnParams, task: AdaptTask, cfg: AdaptConfig,
                     on_iteration: Callable | None = None) -> AdaptResult:
    """Fine-tune ``encoder`` on one task; returns final query predictions and a trace.

    ``on_iteration(i, h, h_tilde, soft_targets)`` is called after the
    pseudo-labels of iteration ``i`` are formed, before the gradient step.
    """
    if cfg.max_iters == 0:
        probs = initial_predictions(encoder, pcn, task, cfg)
        return AdaptResult(encoder, probs.argmax(axis=1), probs, [])

    pcn_c = pcn.map(Tensor)
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    state = WmaState.start(len(task.query_x), task.n_way, cfg.alpha0)
    trace = []
    soft = None
    for i in range(1, cfg.max_iters + 1):
        tape = Tape()
        enc_t = encoder.map(tape.leaf)
        emb_s = encoder_forward(task.support_x, enc_t)
        protos = _prototypes(emb_s, task, pcn_c, cfg, derive_rng(task.seed, "kmeans", i))

        if not (cfg.alpha_first and i == 1):
            state.alpha = anneal_alpha(state.alpha, cfg.gamma)
        state.iter = i

        emb_q = encoder_forward(task.query_x, enc_t)
        h = distances(emb_q, protos).data
        wma_update(state, h)
        soft = pseudo_labels(state.h_tilde if cfg.use_wma else h)
        if on_iteration is not None:
            on_iteration(i, h, state.h_tilde, soft)

        br = loss_finetune(emb_s, task.support_y, emb_q, protos, soft, cfg.lambda_dis,
                           cfg.lambda_coh, cfg.epsilon, use_ce_support=cfg.use_ce_support,
                           use_ce_transductive=cfg.use_ce_transductive)
        if not np.isfinite(br.total):
            raise NumericError(f"fine-tuning loss not finite at iteration {i} "
                               f"(episode seed {task.seed})")
        trace.append((i, state.alpha, br.n_confident, br.ce_support, br.ce_transductive,
                      br.l_dis, br.l_coh, br.total))
        if br.tensor.requires_grad:
            ad.backward(tape, br.tensor)
            grads = [t.grad for t in enc_t.arrays()]
            try:
                encoder = EncoderParams.from_arrays(
                    opt.step(encoder.arrays(), grads, encoder.names()))
            except NumericError as exc:
                raise NumericError(f"{exc} at iteration {i} (episode seed {task.seed})") from None
    return AdaptResult(encoder, soft.argmax(axis=1), soft, trace)


def trace_csv(trace) -> str:
    lines = [",".join(TRACE_HEADER)]
    for it, alpha, n_conf, *vals in trace:
        lines.append(",".join([str(it), fmt(alpha), str(n_conf)] + [fmt(v) for v in vals]))
    return "\n".join(lines) + "\n"
