"""Episodic source-domain training.

Each episode first adapts the encoder with a few SGD steps on the support
cross-entropy (PCN frozen), then takes one optimizer step on the PCN for the
query loss with discriminative and cohesive regularizers (encoder frozen).
The encoder is carried over between episodes unless ``reset_theta`` is set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .config import MetaTrainConfig, ModelConfig, RunConfig
from .episodes import Domain, Episode, derive_rng, derive_seed, sample_episode
from .exceptions import NumericError
from .losses import LossBreakdown, ce_labeled, cross_entropy, loss_train, one_hot
from .models import EncoderParams, PcnParams, encoder_forward
from .optim import SGD, make_optimizer
from .prototypes import compute_prototypes

log = logging.getLogger(__name__)

CURVE_HEADER = ("iter", "ce_query", "l_dis", "l_coh", "total")


def init_params(model: ModelConfig, input_dim: int, k_in: int, seed: int):
    rng = derive_rng(seed, "init")
    encoder = EncoderParams.init(input_dim, tuple(model.hidden), model.embed_dim, rng)
    if model.pcn_init == "averaging":
        pcn = PcnParams.averaging(k_in, model.embed_dim, bias=model.pcn_bias)
    else:
        pcn = PcnParams.init(k_in, model.embed_dim, rng, bias=model.pcn_bias)
    return encoder, pcn


def _leaves(params, tape):
    return params.map(lambda a: tape.leaf(a))


def _constants(params):
    return params.map(ad.Tensor)


def support_ce(encoder, pcn, support_x, support_y, n_way, use_pcn=True):
    """Support cross-entropy with prototypes built from the same support set."""
    emb = encoder_forward(support_x, encoder)
    protos = compute_prototypes(emb, support_y, n_way, use_pcn=use_pcn, pcn=pcn,
                                clustering=False)
    return ce_labeled(emb, support_y, protos)


def inner_adapt(encoder: EncoderParams, pcn: PcnParams, support_x, support_y, n_way: int,
                lr: float, steps: int, use_pcn: bool = True) -> EncoderParams:
    """``steps`` SGD updates of the encoder on the support cross-entropy."""
    if len(support_x) == 0:
        raise ValueError("support set is empty")
    sgd = SGD(lr)
    pcn_c = _constants(pcn)
    for _ in range(steps):
        tape = Tape()
        enc_t = _leaves(encoder, tape)
        loss = support_ce(enc_t, pcn_c, support_x, support_y, n_way, use_pcn)
        if not np.isfinite(loss.item()):
            raise NumericError(f"support cross-entropy is not finite ({loss.item()})")
        ad.backward(tape, loss)
        grads = [t.grad for t in enc_t.arrays()]
        encoder = EncoderParams.from_arrays(sgd.step(encoder.arrays(), grads, encoder.names()))
    return encoder


def episode_loss(encoder, pcn, episode: Episode, lambda_dis, lambda_coh,
                 use_pcn=True) -> LossBreakdown:
    emb_s = encoder_forward(episode.support_x, encoder)
    emb_q = encoder_forward(episode.query_x, encoder)
    protos = compute_prototypes(emb_s, episode.support_y, episode.n_way, use_pcn=use_pcn,
                                pcn=pcn, clustering=False)
    return loss_train(emb_q, episode.query_y, protos, lambda_dis, lambda_coh)


def outer_step(encoder: EncoderParams, pcn: PcnParams, episode: Episode, lambda_dis: float,
               lambda_coh: float, optimizer, encoder_optimizer=None):
    """One optimizer step on the PCN for the joint query loss.

    With ``encoder_optimizer`` the encoder is updated by the same loss too
    (joint mode); otherwise it is a constant.  Returns
    ``(encoder, pcn, breakdown)`` where the breakdown is for the pre-step
    parameters.
    """
    tape = Tape()
    pcn_t = _leaves(pcn, tape)
    enc_t = _leaves(encoder, tape) if encoder_optimizer is not None else _constants(encoder)
    br = episode_loss(enc_t, pcn_t, episode, lambda_dis, lambda_coh)
    if not np.isfinite(br.total):
        raise NumericError(f"meta-training loss is not finite ({br.total})")
    ad.backward(tape, br.tensor)
    pcn = pcn.from_arrays(optimizer.step(pcn.arrays(), [t.grad for t in pcn_t.arrays()],
                                         pcn.names()))
    if encoder_optimizer is not None:
        encoder = EncoderParams.from_arrays(encoder_optimizer.step(
            encoder.arrays(), [t.grad for t in enc_t.arrays()], encoder.names()))
    return encoder, pcn, br


def warmup(encoder: EncoderParams, source: Domain, iters: int, lr: float, seed: int,
           batch: int = 64) -> EncoderParams:
    """Plain softmax classification over all source classes with a throwaway linear head."""
    rng = derive_rng(seed, "warmup")
    n_cls = source.n_classes
    head = [rng.uniform(-0.1, 0.1, size=(encoder.output_dim, n_cls)), np.zeros(n_cls)]
    opt = make_optimizer("adam", lr)
    for _ in range(iters):
        cls = rng.integers(n_cls, size=batch)
        x = np.concatenate([source.sample(int(c), 1, rng) for c in cls])
        tape = Tape()
        leaves = [tape.leaf(a) for a in encoder.arrays() + head]
        enc_t = EncoderParams.from_arrays(leaves[:-2])
        logits = ad.add(ad.matmul(encoder_forward(x, enc_t), leaves[-2]), leaves[-1])
        loss = cross_entropy(ad.softmax_neg(ad.scale(logits, -1.0)), one_hot(cls, n_cls))
        ad.backward(tape, loss)
        updated = opt.step(encoder.arrays() + head, [t.grad for t in leaves])
        encoder, head = EncoderParams.from_arrays(updated[:-2]), updated[-2:]
    return encoder


@dataclass
class MetaTrainResult:
    encoder: EncoderParams
    pcn: PcnParams
    curve: list = field(default_factory=list)


def meta_train(cfg: RunConfig, source: Domain) -> MetaTrainResult:
    """Run the full episodic loop described by ``cfg.meta`` on ``source``."""
    m: MetaTrainConfig = cfg.meta
    encoder, pcn = init_params(cfg.model, source.input_dim, m.k_shot, cfg.seed)
    if m.warmup_iters:
        encoder = warmup(encoder, source, m.warmup_iters, m.warmup_lr, cfg.seed)
    theta0 = encoder
    optimizer = make_optimizer(m.optimizer, m.outer_lr, m.weight_decay)
    enc_opt = make_optimizer(m.optimizer, m.outer_lr, m.weight_decay) if m.joint_update else None
    curve = []
    for it in range(m.max_iters):
        ep_seed = derive_seed(cfg.seed, "meta", it)
        episode = sample_episode(source, m.n_way, m.k_shot, m.q_per_class, ep_seed)
        if m.reset_theta:
            encoder = theta0
        try:
            encoder = inner_adapt(encoder, pcn, episode.support_x, episode.support_y,
                                  episode.n_way, m.inner_lr, m.max_initers, m.use_pcn)
            if m.use_pcn:
                encoder, pcn, br = outer_step(encoder, pcn, episode, m.lambda_dis, m.lambda_coh,
                                              optimizer, enc_opt)
            else:
                br = episode_loss(encoder, pcn, episode, m.lambda_dis, m.lambda_coh, use_pcn=False)
        except NumericError as exc:
            raise NumericError(f"meta-training episode {it} (seed {ep_seed}): {exc}") from None
        curve.append((it, br.ce_query, br.l_dis, br.l_coh, br.total))
        if it % 500 == 0:
            log.debug("meta iter %d total %.4f", it, br.total)
    return MetaTrainResult(encoder, pcn, curve)


def write_curve(path, curve) -> None:
    from ._jsonio import fmt

    lines = [",".join(CURVE_HEADER)]
    for it, *vals in curve:
        lines.append(",".join([str(it)] + [fmt(v) for v in vals]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
