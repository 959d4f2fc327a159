"""Training objectives: reconstruction, LM-discriminator loss with gated
negative samples, the relaxed transfer loss, a REINFORCE estimator for
comparison, and the adversarial classifier baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .corpus import END, PAD, START, STYLE_X, STYLE_Y, Padded
from .errors import ContractError
from .gumbel import sample_gumbel
from .models import Classifier, LanguageModel, Seq2Seq, one_hot


@dataclass
class LossReport:
    """Per-batch scalar losses for logging."""

    rec_x: float = 0.0
    rec_y: float = 0.0
    lm_transfer_x: float = 0.0
    lm_transfer_y: float = 0.0
    disc_lm_x: float = 0.0
    disc_lm_y: float = 0.0
    clf_disc: float = 0.0
    clf_gen: float = 0.0

    def all_finite(self) -> bool:
        return all(np.isfinite(v) for v in vars(self).values())


def append_eos(batch: Padded) -> Padded:
    """Decode targets: the sentence followed by </s>."""
    b, t = batch.ids.shape
    ext = np.full((b, t + 1), PAD, dtype=np.int64)
    ext[:, :t] = batch.ids
    ext[np.arange(b), batch.lengths] = END
    return Padded(ext, batch.lengths + 1)


def teacher_forced_nll(model: Seq2Seq, z: Tensor, style: int, targets: Padded) -> Tensor:
    """Per-sentence (B,) summed token NLL under teacher forcing, padding masked."""
    logits = model.decode_teacher_forced(z, style, targets)
    mask = targets.mask(dtype=bool)
    per_pos = []
    for t, lg in enumerate(logits):
        lp = ad.log_softmax(lg)
        ce = ad.cross_entropy(Tensor(one_hot(targets.ids[:, t], model.vocab_size,
                                             dtype=lp.dtype)), lp)
        per_pos.append(ad.mul(ce, Tensor(mask[:, t].astype(lp.dtype))))
    return ad.add_n(per_pos)


def reconstruction_half(model: Seq2Seq, batch: Padded, style: int) -> Tensor:
    z = model.encode(batch, style)
    return ad.mean(teacher_forced_nll(model, z, style, append_eos(batch)))


def reconstruction_loss(batch_x: Padded, batch_y: Padded, model: Seq2Seq) -> Tensor:
    """Mean sentence NLL of each half reconstructed with its own style, summed."""
    if len(batch_x.lengths) == 0 or len(batch_y.lengths) == 0:
        raise ContractError("reconstruction needs non-empty batches")
    return ad.add(reconstruction_half(model, batch_x, STYLE_X),
                  reconstruction_half(model, batch_y, STYLE_Y))


def lm_discriminator_loss(real_batch: Padded, transferred_batch: Padded,
                          lm: LanguageModel, gamma: float,
                          token_nll_cap: float | None = None) -> Tensor:
    """Mean real-sentence NLL minus gamma times mean transferred-sentence NLL.

    The transferred batch is discrete token ids sampled from the generator,
    so no gradient can reach the encoder or generator here. An optional
    per-token NLL cap bounds how far the negative term can push the LM.
    """
    real = ad.mean(lm.score_discrete(real_batch))
    if gamma == 0.0:
        return real
    fake = ad.mean(_score_discrete_capped(lm, transferred_batch, token_nll_cap))
    return ad.add(real, ad.scale_shift(fake, -gamma))


def _score_discrete_capped(lm: LanguageModel, batch: Padded,
                           cap: float | None) -> Tensor:
    if cap is None:
        return lm.score_discrete(batch)
    ids, lengths = batch.ids, batch.lengths
    b, t_max = ids.shape
    ext = np.full((b, t_max + 1), PAD, dtype=np.int64)
    ext[:, :t_max] = ids
    ext[np.arange(b), lengths] = END
    mask = (np.arange(t_max + 1)[None, :] <= lengths[:, None])
    inputs = np.concatenate([np.full((b, 1), 1, dtype=np.int64), ext[:, :-1]], axis=1)
    h = Tensor(np.zeros((b, lm.d_h), dtype=lm.dtype))
    per_pos = []
    for t in range(t_max + 1):
        x = ad.embedding(lm.emb, inputs[:, t])
        h = lm.gru.step(x, h)
        lp = ad.log_softmax(ad.add(ad.matmul(h, lm.out_w), lm.out_b))
        ce = ad.cross_entropy(Tensor(one_hot(ext[:, t], lm.vocab_size, dtype=lp.dtype)), lp)
        ce = ad.minimum_const(ce, cap)
        per_pos.append(ad.mul(ce, Tensor(mask[:, t].astype(lp.dtype))))
    return ad.add_n(per_pos)


def generator_transfer_loss(model: Seq2Seq, batch: Padded, source_style: int,
                            target_style: int, lm_target: LanguageModel,
                            tau: float, noise: np.ndarray | None = None,
                            seed=None) -> Tensor:
    """Relaxed-sample fluency loss: encode with the source style, decode with
    the target style at the source length, score with the target-style LM,
    and normalize per sentence by its length.

    The LM is consumed through a detached view: this loss trains only the
    encoder/generator side.
    """
    if tau <= 0.0:
        raise ContractError("transfer loss needs tau > 0")
    t_max = batch.max_len
    if noise is None:
        noise = sample_gumbel((t_max, len(batch.lengths), model.vocab_size), seed)
    z = model.encode(batch, source_style)
    seq = model.decode_relaxed(z, target_style, t_max, tau, noise)
    nll = lm_target.frozen_view().score_relaxed(seq, mask=batch.mask(dtype=bool))
    inv_len = Tensor((1.0 / batch.lengths).astype(nll.dtype))
    return ad.mean(ad.mul(nll, inv_len))


def reinforce_gradient(model: Seq2Seq, batch: Padded, source_style: int,
                       target_style: int, lm_target: LanguageModel,
                       n_samples: int, seed) -> dict[Tensor, np.ndarray]:
    """Score-function estimate of the gradient of the expected transferred
    NLL under the target-style LM, using discrete generator samples.

    Returns a gradient map over the seq2seq parameters; provided for
    comparison with the relaxed path, not used by the default trainer.
    """
    if n_samples < 1:
        raise ContractError("need n_samples >= 1")
    rng = np.random.default_rng(seed)
    b = len(batch.lengths)
    t_max = batch.max_len

    # Sampling pass (no tape): draw x~ and weigh each sample by its LM NLL.
    z_eval = model.encode(batch, source_style)
    rows = np.repeat(np.arange(b), n_samples)
    selector = np.zeros((b * n_samples, b))
    selector[np.arange(b * n_samples), rows] = 1.0
    z_tiled_eval = Tensor(selector @ z_eval.data.astype(np.float64))
    z_tiled_eval.data = z_tiled_eval.data.astype(model.dtype)
    samples = model.decode_sampled(z_tiled_eval, target_style, t_max, rng)
    lengths_tiled = batch.lengths[rows]
    mask = (np.arange(t_max)[None, :] < lengths_tiled[:, None])
    samples = np.where(mask, samples, PAD)
    weights = lm_target.score_discrete(Padded(samples, lengths_tiled)).data
    weights = weights.astype(np.float64)

    # Scoring pass (on tape): log p_G of the drawn samples.
    with Tape() as tape:
        z = model.encode(batch, source_style)
        z_tiled = ad.matmul(Tensor(selector.astype(model.dtype)), z)
        h = model._gen_init(z_tiled, target_style)
        x = ad.embedding(model.token_emb, np.full(b * n_samples, 1, dtype=np.int64))
        per_pos = []
        inputs = np.concatenate(
            [np.full((b * n_samples, 1), 1, dtype=np.int64), samples[:, :-1]], axis=1)
        for t in range(t_max):
            x = ad.embedding(model.token_emb, inputs[:, t])
            h = model.gen.step(x, h)
            lp = ad.log_softmax(ad.add(ad.matmul(h, model.out_w), model.out_b))
            ce = ad.cross_entropy(Tensor(one_hot(samples[:, t], model.vocab_size,
                                                 dtype=lp.dtype)), lp)
            per_pos.append(ad.mul(ce, Tensor(mask[:, t].astype(lp.dtype))))
        neg_logp = ad.add_n(per_pos)  # (B*n,) = -log p_G(x~)
        objective = ad.mean(ad.mul(neg_logp, Tensor(weights.astype(neg_logp.dtype))))
        grads = tape.backward(objective)
    return grads


def adversarial_classifier_loss(real_batch: Padded, fake_seq: list[Tensor],
                                clf: Classifier, fake_mask: np.ndarray | None = None
                                ) -> tuple[Tensor, Tensor]:
    """Binary-classifier GAN losses on output sentences.

    disc_loss = mean[-log D(real)] + mean[-log(1 - D(fake))] with the fake
    path detached; gen_loss = mean[-log D(fake)] (non-saturating), flowing
    back to the generator through the relaxed sequence.
    """
    logit_real = clf.logit(real_batch)
    detached = [p.detach() for p in fake_seq]
    logit_fake_d = clf.logit(detached, mask=fake_mask)
    disc = ad.add(ad.mean(ad.scale_shift(ad.log_sigmoid(logit_real), -1.0)),
                  ad.mean(ad.scale_shift(ad.log_sigmoid(ad.scale_shift(logit_fake_d, -1.0)), -1.0)))
    logit_fake = clf.logit(fake_seq, mask=fake_mask)
    gen = ad.mean(ad.scale_shift(ad.log_sigmoid(logit_fake), -1.0))
    return disc, gen


def assemble_generator_objective(rec: Tensor, lm_transfer_x: Tensor | None,
                                 lm_transfer_y: Tensor | None, lam: float,
                                 clf_gen: Tensor | None = None,
                                 clf_weight: float = 0.0) -> Tensor:
    """rec + lam * (transfer terms) [+ clf_weight * classifier term]."""
    total = rec
    if lam != 0.0 and lm_transfer_x is not None:
        total = ad.add(total, ad.scale_shift(lm_transfer_x, lam))
    if lam != 0.0 and lm_transfer_y is not None:
        total = ad.add(total, ad.scale_shift(lm_transfer_y, lam))
    if clf_gen is not None and clf_weight != 0.0:
        total = ad.add(total, ad.scale_shift(clf_gen, clf_weight))
    return total
