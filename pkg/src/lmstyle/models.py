"""Recurrent building blocks: GRU cell, style-conditioned encoder/generator,
per-style language model, and a binary sequence classifier.

All forward passes are pure functions of (inputs, parameters, explicit
noise); batches are (B, T) padded id arrays plus lengths. Every model
exposes ``named_parameters`` for checkpointing and optimizer grouping.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import END, PAD, START, Padded
from .errors import ContractError
from .gumbel import gumbel_softmax


def one_hot(ids: np.ndarray, n: int, dtype=np.float64) -> np.ndarray:
    ids = np.asarray(ids)
    out = np.zeros(ids.shape + (n,), dtype=dtype)
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out


class GruCell:
    """One-layer GRU: u and r gates, candidate via reset-gated state,
    h' = (1 - u) * h + u * candidate."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator, dtype):
        self.d_in, self.d_h = d_in, d_h
        u = lambda shape: ad.uniform_init(shape, rng, dtype=dtype)
        z = lambda shape: ad.zeros_init(shape, dtype=dtype)
        self.w_u, self.u_u, self.b_u = u((d_in, d_h)), u((d_h, d_h)), z((d_h,))
        self.w_r, self.u_r, self.b_r = u((d_in, d_h)), u((d_h, d_h)), z((d_h,))
        self.w_c, self.u_c, self.b_c = u((d_in, d_h)), u((d_h, d_h)), z((d_h,))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in or h.shape[-1] != self.d_h:
            raise ContractError("gru_step dimension mismatch")
        gate_u = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.w_u), ad.matmul(h, self.u_u)), self.b_u))
        gate_r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.w_r), ad.matmul(h, self.u_r)), self.b_r))
        cand = ad.tanh(ad.add(ad.add(ad.matmul(x, self.w_c),
                                     ad.matmul(ad.mul(gate_r, h), self.u_c)), self.b_c))
        return ad.add(ad.mul(ad.scale_shift(gate_u, -1.0, 1.0), h), ad.mul(gate_u, cand))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_u": self.w_u, f"{prefix}.u_u": self.u_u, f"{prefix}.b_u": self.b_u,
                f"{prefix}.w_r": self.w_r, f"{prefix}.u_r": self.u_r, f"{prefix}.b_r": self.b_r,
                f"{prefix}.w_c": self.w_c, f"{prefix}.u_c": self.u_c, f"{prefix}.b_c": self.b_c}


def gru_step(x: Tensor, h: Tensor, cell: GruCell) -> Tensor:
    return cell.step(x, h)


def _masked_carry(h_new: Tensor, h_old: Tensor, mask_col: np.ndarray) -> Tensor:
    """Keep the previous hidden state at padded positions."""
    if mask_col.all():
        return h_new
    m = Tensor(mask_col[:, None].astype(h_new.dtype))
    keep = Tensor((1.0 - mask_col[:, None]).astype(h_new.dtype))
    return ad.add(ad.mul(h_new, m), ad.mul(h_old, keep))


class Seq2Seq:
    """Encoder/generator pair with learned style embeddings.

    Style conditioning is through the initial hidden states only: the
    encoder starts from affine(v_style) and the generator from
    affine([z ; v_style]).
    """

    def __init__(self, vocab_size: int, d_emb: int, d_h: int, d_style: int,
                 seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng([int(seed), 0x5E25])
        self.vocab_size, self.d_emb, self.d_h, self.d_style = vocab_size, d_emb, d_h, d_style
        self.dtype = np.dtype(dtype)
        u = lambda shape: ad.uniform_init(shape, rng, dtype=dtype)
        z = lambda shape: ad.zeros_init(shape, dtype=dtype)
        self.token_emb = u((vocab_size, d_emb))
        self.style_emb = u((2, d_style))
        self.enc = GruCell(d_emb, d_h, rng, dtype)
        self.enc_init_w, self.enc_init_b = u((d_style, d_h)), z((d_h,))
        self.gen = GruCell(d_emb, d_h, rng, dtype)
        self.gen_init_w, self.gen_init_b = u((d_h + d_style, d_h)), z((d_h,))
        self.out_w, self.out_b = u((d_h, vocab_size)), z((vocab_size,))

    # -- parameter bookkeeping -------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        params = {"encoder.token_emb": self.token_emb,
                  "encoder.style_emb": self.style_emb,
                  "encoder.init.w": self.enc_init_w, "encoder.init.b": self.enc_init_b}
        params.update(self.enc.named_parameters("encoder.gru"))
        params.update({"generator.init.w": self.gen_init_w,
                       "generator.init.b": self.gen_init_b,
                       "generator.out.w": self.out_w, "generator.out.b": self.out_b})
        params.update(self.gen.named_parameters("generator.gru"))
        return params

    def _style_vec(self, style: int, batch: int) -> Tensor:
        return ad.embedding(self.style_emb, np.full(batch, style, dtype=np.int64))

    # -- encoder -----------------------------------------------------------
    def encode(self, batch: Padded, style: int) -> Tensor:
        """Content vector z: final encoder hidden state per sentence."""
        ids, lengths = batch.ids, batch.lengths
        if ids.shape[1] == 0 or (lengths < 1).any():
            raise ContractError("cannot encode an empty sentence")
        b, t_max = ids.shape
        v = self._style_vec(style, b)
        h = ad.add(ad.matmul(v, self.enc_init_w), self.enc_init_b)
        mask = batch.mask(dtype=bool)
        for t in range(t_max):
            x = ad.embedding(self.token_emb, ids[:, t])
            h = _masked_carry(self.enc.step(x, h), h, mask[:, t])
        return h

    def _gen_init(self, z: Tensor, style: int) -> Tensor:
        v = self._style_vec(style, z.shape[0])
        return ad.add(ad.matmul(ad.concat([z, v], axis=1), self.gen_init_w), self.gen_init_b)

    def _project(self, h: Tensor) -> Tensor:
        return ad.add(ad.matmul(h, self.out_w), self.out_b)

    # -- decoders ----------------------------------------------------------
    def decode_teacher_forced(self, z: Tensor, style: int, targets: Padded) -> list[Tensor]:
        """Logits at each position after consuming <s>, target_1..target_{t-1}.

        ``targets`` must already end with the end-of-sentence token."""
        ids, lengths = targets.ids, targets.lengths
        b, t_max = ids.shape
        if t_max == 0:
            raise ContractError("empty decode target")
        for i in range(b):
            if ids[i, lengths[i] - 1] != END:
                raise ContractError("teacher-forced target must end with </s>")
        h = self._gen_init(z, style)
        inputs = np.concatenate(
            [np.full((b, 1), START, dtype=np.int64), ids[:, :-1]], axis=1)
        logits = []
        for t in range(t_max):
            x = ad.embedding(self.token_emb, inputs[:, t])
            h = self.gen.step(x, h)
            logits.append(self._project(h))
        return logits

    def decode_relaxed(self, z: Tensor, style: int, t_steps: int, tau: float,
                       noise: np.ndarray) -> list[Tensor]:
        """Free-running decode through Gumbel-softmax; returns T probability
        vectors, each fed back as a weighted embedding."""
        if t_steps < 1:
            raise ContractError("relaxed decode needs T >= 1")
        if tau <= 0.0:
            raise ContractError("relaxed decode needs tau > 0")
        b = z.shape[0]
        if noise.shape != (t_steps, b, self.vocab_size):
            raise ContractError("noise must have shape (T, B, |V|)")
        h = self._gen_init(z, style)
        x = ad.embedding(self.token_emb, np.full(b, START, dtype=np.int64))
        seq = []
        for t in range(t_steps):
            h = self.gen.step(x, h)
            p = gumbel_softmax(self._project(h), tau, noise[t])
            seq.append(p)
            x = ad.matmul(p, self.token_emb)
        return seq

    def decode_greedy(self, z: Tensor, style: int, t_steps: int) -> np.ndarray:
        """Deterministic argmax decode at fixed length (evaluation path)."""
        b = z.shape[0]
        h = self._gen_init(z, style)
        x = ad.embedding(self.token_emb, np.full(b, START, dtype=np.int64))
        out = np.zeros((b, t_steps), dtype=np.int64)
        for t in range(t_steps):
            h = self.gen.step(x, h)
            ids = np.argmax(self._project(h).data, axis=1)
            out[:, t] = ids
            x = ad.embedding(self.token_emb, ids)
        return out

    def decode_sampled(self, z: Tensor, style: int, t_steps: int,
                       rng: np.random.Generator) -> np.ndarray:
        """Ancestral sampling from the generator's categorical outputs."""
        b = z.shape[0]
        h = self._gen_init(z, style)
        x = ad.embedding(self.token_emb, np.full(b, START, dtype=np.int64))
        out = np.zeros((b, t_steps), dtype=np.int64)
        for t in range(t_steps):
            h = self.gen.step(x, h)
            p = ad.softmax(self._project(h)).data.astype(np.float64)
            p /= p.sum(axis=1, keepdims=True)
            cum = np.cumsum(p, axis=1)
            draws = rng.random((b, 1))
            ids = np.minimum((cum < draws).sum(axis=1), self.vocab_size - 1)
            out[:, t] = ids
            x = ad.embedding(self.token_emb, ids)
        return out


class LanguageModel:
    """GRU language model with its own (unshared) embedding table."""

    def __init__(self, vocab_size: int, d_emb: int, d_h: int,
                 seed: int = 0, dtype=np.float32, name: str = "lm"):
        rng = np.random.default_rng([int(seed), 0x1A57])
        self.vocab_size, self.d_emb, self.d_h = vocab_size, d_emb, d_h
        self.dtype = np.dtype(dtype)
        self.name = name
        u = lambda shape: ad.uniform_init(shape, rng, dtype=dtype)
        self.emb = u((vocab_size, d_emb))
        self.gru = GruCell(d_emb, d_h, rng, dtype)
        self.out_w = u((d_h, vocab_size))
        self.out_b = ad.zeros_init((vocab_size,), dtype=dtype)

    def named_parameters(self) -> dict[str, Tensor]:
        params = {f"{self.name}.emb": self.emb,
                  f"{self.name}.out.w": self.out_w, f"{self.name}.out.b": self.out_b}
        params.update(self.gru.named_parameters(f"{self.name}.gru"))
        return params

    def frozen_view(self) -> "LanguageModel":
        """Same weights, detached: no gradient ever reaches this view's
        parameters (used when the LM acts as a fixed discriminator)."""
        view = object.__new__(LanguageModel)
        view.vocab_size, view.d_emb, view.d_h = self.vocab_size, self.d_emb, self.d_h
        view.dtype, view.name = self.dtype, self.name
        view.emb = self.emb.detach()
        view.gru = object.__new__(GruCell)
        view.gru.d_in, view.gru.d_h = self.gru.d_in, self.gru.d_h
        for attr in ("w_u", "u_u", "b_u", "w_r", "u_r", "b_r", "w_c", "u_c", "b_c"):
            setattr(view.gru, attr, getattr(self.gru, attr).detach())
        view.out_w, view.out_b = self.out_w.detach(), self.out_b.detach()
        return view

    def _zero_hidden(self, b: int) -> Tensor:
        return Tensor(np.zeros((b, self.d_h), dtype=self.dtype))

    def score_discrete(self, batch: Padded) -> Tensor:
        """Per-sentence NLL (B,): start-token context first, </s> scored last."""
        ids, lengths = batch.ids, batch.lengths
        if ids.shape[1] == 0 or (lengths < 1).any():
            raise ContractError("cannot score an empty sentence")
        b, t_max = ids.shape
        ext = np.full((b, t_max + 1), PAD, dtype=np.int64)
        ext[:, :t_max] = ids
        ext[np.arange(b), lengths] = END
        mask = (np.arange(t_max + 1)[None, :] <= lengths[:, None])
        inputs = np.concatenate(
            [np.full((b, 1), START, dtype=np.int64), ext[:, :-1]], axis=1)
        h = self._zero_hidden(b)
        per_pos = []
        for t in range(t_max + 1):
            x = ad.embedding(self.emb, inputs[:, t])
            h = self.gru.step(x, h)
            lp = ad.log_softmax(ad.add(ad.matmul(h, self.out_w), self.out_b))
            ce = ad.cross_entropy(Tensor(one_hot(ext[:, t], self.vocab_size,
                                                 dtype=lp.dtype)), lp)
            per_pos.append(ad.mul(ce, Tensor(mask[:, t].astype(lp.dtype))))
        return ad.add_n(per_pos)

    def score_relaxed(self, seq: list[Tensor], mask: np.ndarray | None = None) -> Tensor:
        """Sum over steps of cross-entropy between the incoming distribution
        and this model's next-token prediction; (B,) per-sentence totals.

        Gradients flow to whatever produced ``seq`` (and to this model's
        parameters unless scoring through ``frozen_view``)."""
        if not seq:
            raise ContractError("empty relaxed sequence")
        b = seq[0].shape[0]
        for p in seq:
            rows = p.data
            if np.abs(rows.sum(axis=-1) - 1.0).max() > 1e-6 or rows.min() < -1e-6:
                raise ContractError("relaxed token off the probability simplex")
        h = self._zero_hidden(b)
        x = ad.embedding(self.emb, np.full(b, START, dtype=np.int64))
        per_pos = []
        for t, p in enumerate(seq):
            h = self.gru.step(x, h)
            lp = ad.log_softmax(ad.add(ad.matmul(h, self.out_w), self.out_b))
            ce = ad.cross_entropy(p, lp)
            if mask is not None:
                ce = ad.mul(ce, Tensor(mask[:, t].astype(lp.dtype)))
            per_pos.append(ce)
            x = ad.matmul(p, self.emb)
        return ad.add_n(per_pos)


def lm_score_discrete(sentence: list[int], lm: LanguageModel) -> float:
    """Scalar NLL of one sentence (sum of -log p per token, </s> included)."""
    return float(lm.score_discrete(Padded(np.array([sentence], dtype=np.int64),
                                          np.array([len(sentence)]))).data[0])


def lm_score_relaxed(seq: list[np.ndarray] | list[Tensor], lm: LanguageModel) -> float:
    """Scalar relaxed score of a single sequence of probability vectors."""
    tensors = [p if isinstance(p, Tensor) else Tensor(np.asarray(p)[None, :]) for p in seq]
    tensors = [p if p.data.ndim == 2 else Tensor(p.data[None, :]) for p in tensors]
    return float(lm.score_relaxed(tensors).data[0])


class Classifier:
    """GRU sequence reader with a single real/fake (style) logit."""

    def __init__(self, vocab_size: int, d_emb: int, d_h: int,
                 seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng([int(seed), 0xC1F])
        self.vocab_size, self.d_emb, self.d_h = vocab_size, d_emb, d_h
        self.dtype = np.dtype(dtype)
        self.frozen = False
        u = lambda shape: ad.uniform_init(shape, rng, dtype=dtype)
        self.emb = u((vocab_size, d_emb))
        self.gru = GruCell(d_emb, d_h, rng, dtype)
        self.out_w = u((d_h, 1))
        self.out_b = ad.zeros_init((1,), dtype=dtype)

    def named_parameters(self) -> dict[str, Tensor]:
        params = {"clf.emb": self.emb, "clf.out.w": self.out_w, "clf.out.b": self.out_b}
        params.update(self.gru.named_parameters("clf.gru"))
        return params

    def logit(self, inputs: Padded | list[Tensor], mask: np.ndarray | None = None) -> Tensor:
        """(B,) raw logits; discrete ids are gathered, relaxed tokens are
        consumed as weighted embeddings."""
        if isinstance(inputs, Padded):
            b, t_max = inputs.ids.shape
            m = inputs.mask(dtype=bool)
            h = Tensor(np.zeros((b, self.d_h), dtype=self.dtype))
            for t in range(t_max):
                x = ad.embedding(self.emb, inputs.ids[:, t])
                h = _masked_carry(self.gru.step(x, h), h, m[:, t])
        else:
            if not inputs:
                raise ContractError("empty classifier input")
            b = inputs[0].shape[0]
            m = np.ones((b, len(inputs)), dtype=bool) if mask is None else mask.astype(bool)
            h = Tensor(np.zeros((b, self.d_h), dtype=self.dtype))
            for t, p in enumerate(inputs):
                x = ad.matmul(p, self.emb)
                h = _masked_carry(self.gru.step(x, h), h, m[:, t])
        out = ad.add(ad.matmul(h, self.out_w), self.out_b)
        return ad.take(out, (slice(None), 0))


def classify_real(inputs: Padded | list[Tensor], clf: Classifier,
                  mask: np.ndarray | None = None) -> np.ndarray:
    """Probability of the positive class for each sequence."""
    logits = clf.logit(inputs, mask=mask)
    return 1.0 / (1.0 + np.exp(-logits.data.astype(np.float64)))
