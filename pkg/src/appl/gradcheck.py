"""Finite-difference audit of every loss term on small seeded toy episodes."""

from __future__ import annotations

import numpy as np

from . import losses
from .autodiff import grad_check, softmax_neg, Tensor
from .episodes import derive_rng
from .models import EncoderParams, PcnParams, encoder_forward
from .prototypes import compute_prototypes

TERMS = ("ce_query", "l_dis", "l_coh", "loss_train", "ce_support", "ce_transductive",
         "loss_finetune")

# toy shapes: 3-way episodes, 2 support shots (4 for the clustered fine-tuning term)
N_WAY, K_IN, Q, INPUT_DIM, HIDDEN, EMBED = 3, 2, 2, 4, (6,), 3


def _toy(seed: int, spread: float = 1.0):
    rng = derive_rng(seed, "gradcheck")
    enc = EncoderParams.init(INPUT_DIM, HIDDEN, EMBED, rng)
    pcn = PcnParams.init(K_IN, EMBED, rng)
    # Coordinates whose true gradient is exactly zero (a dead hidden unit, a
    # shift every prototype shares) only see round-off in the numeric
    # derivative, which the 1e-8 floor turns into a large relative error.
    # Positive hidden biases keep units alive.  The discriminative loss
    # ignores a shared shift of all prototypes, so for that term the
    # prototypes are spread out, which keeps the loss and its round-off small.
    # The PCN bias keeps prototypes off the collapsed all-zero corner.
    enc = EncoderParams(enc.weights, [b + 0.5 if i < len(HIDDEN) else b
                                      for i, b in enumerate(enc.biases)])
    pcn = PcnParams(spread * pcn.weight, pcn.bias + 1.0, K_IN)
    shots = 4 if seed % 2 else K_IN
    sx = rng.standard_normal((N_WAY * shots, INPUT_DIM))
    sy = np.repeat(np.arange(N_WAY), shots)
    qx = rng.standard_normal((N_WAY * Q, INPUT_DIM))
    qy = np.repeat(np.arange(N_WAY), Q)
    soft = softmax_neg(Tensor(rng.uniform(0.0, 3.0, size=(len(qx), N_WAY)))).data
    return enc, pcn, sx, sy, qx, qy, soft, shots


def _term_fn(term: str, seed: int):
    enc, pcn, sx, sy, qx, qy, soft, shots = _toy(seed, 8.0 if term == "l_dis" else 1.0)
    n_enc = len(enc.arrays())
    epsilon = float(np.sort(soft.max(axis=1))[len(soft) // 2])  # roughly half pass the gate

    def loss_fn(tensors):
        e = EncoderParams.from_arrays(tensors[:n_enc])
        p = pcn.from_arrays(tensors[n_enc:])
        emb_s = encoder_forward(sx, e)
        emb_q = encoder_forward(qx, e)
        protos = compute_prototypes(emb_s, sy, N_WAY, use_pcn=True, pcn=p, clustering=True,
                                    rng=derive_rng(seed, "gradcheck.kmeans"))
        if term == "ce_query":
            return losses.ce_query(emb_q, qy, protos)
        if term == "l_dis":
            return losses.l_dis(protos)
        if term == "l_coh":
            return losses.l_coh(protos, emb_q, qy)
        if term == "loss_train":
            return losses.loss_train(emb_q, qy, protos, 0.1, 1e-3).tensor
        if term == "ce_support":
            return losses.ce_support(emb_s, sy, protos)
        if term == "ce_transductive":
            return losses.ce_transductive(losses.class_probs(emb_q, protos), soft, epsilon)[0]
        if term == "loss_finetune":
            return losses.loss_finetune(emb_s, sy, emb_q, protos, soft, 0.1, 1e-3, epsilon).tensor
        raise KeyError(term)

    return loss_fn, enc.arrays() + pcn.arrays()


def check_term(term: str, seed: int, step: float = 1e-5) -> float:
    """Worst relative error of ``term`` on the toy episode for ``seed``."""
    loss_fn, params = _term_fn(term, seed)
    return grad_check(loss_fn, params, step)


def run(n_episodes: int = 20, root_seed: int = 0, step: float = 1e-5) -> dict[str, float]:
    """Worst relative error per loss term over ``n_episodes`` toy episodes."""
    if n_episodes < 1:
        raise ValueError("gradcheck needs at least one episode")
    return {term: max(check_term(term, root_seed * 1_000_003 + i, step)
                      for i in range(n_episodes))
            for term in TERMS}
