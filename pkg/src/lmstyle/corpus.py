"""Toy corpora: vocabulary, order-k Markov text, word-substitution ciphers, batching.

The corpus file format is plain UTF-8 text, one sentence per line, tokens
separated by single spaces. Cipher dictionaries are two-column
tab-separated token files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

PAD, START, END, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<s>", "</s>", "<unk>")

# Cipher tokens are the plain token plus this marker, which guarantees they
# are disjoint from the plain vocabulary.
CIPHER_SUFFIX = "#"

STYLE_X, STYLE_Y = 0, 1


class Vocabulary:
    """Dense token<->id map with the four reserved ids first."""

    def __init__(self, content_tokens: list[str]):
        self.tokens: list[str] = list(RESERVED_TOKENS)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        for tok in content_tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in self.token_to_id:
            raise ContractError(f"duplicate token {token!r}")
        idx = len(self.tokens)
        self.tokens.append(token)
        self.token_to_id[token] = idx
        return idx

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def content_ids(self) -> list[int]:
        return list(range(len(RESERVED_TOKENS), len(self.tokens)))

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def extended(self, new_tokens: list[str]) -> "Vocabulary":
        out = Vocabulary(self.tokens[len(RESERVED_TOKENS):])
        for tok in new_tokens:
            out.add(tok)
        return out

    @classmethod
    def from_corpus(cls, sentences: list[list[str]], min_count: int = 1) -> "Vocabulary":
        """Build from tokenized text; tokens below ``min_count`` map to <unk>."""
        counts: dict[str, int] = {}
        for sent in sentences:
            for tok in sent:
                counts[tok] = counts.get(tok, 0) + 1
        kept = sorted(t for t, c in counts.items() if c >= min_count)
        return cls(kept)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        if tokens[:4] != list(RESERVED_TOKENS):
            raise ContractError("vocabulary file missing reserved tokens")
        return cls(tokens[4:])


@dataclass
class StyleCorpus:
    style: int
    sentences: list[list[int]]
    split: str = "train"

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass
class MarkovSpec:
    """Parameters of the synthetic order-k Markov language."""

    vocab_size: int = 100
    order: int = 2
    concentration: float = 0.1
    min_len: int = 4
    max_len: int = 12

    def __post_init__(self):
        if self.vocab_size < 2 or self.order < 1:
            raise ContractError("need vocab_size >= 2 and order >= 1")
        if not (1 <= self.min_len <= self.max_len):
            raise ContractError("bad length bounds")


class MarkovChain:
    """Seeded order-k chain over the content vocabulary.

    Transition rows are Dirichlet draws; sentences start from the stationary
    state distribution so every emitted token is marginally stationary.
    """

    def __init__(self, spec: MarkovSpec, seed: int):
        self.spec = spec
        v, k = spec.vocab_size, spec.order
        rng = np.random.default_rng([int(seed), 0xC0FFEE])
        self.transitions = rng.dirichlet(
            np.full(v, spec.concentration), size=v ** k)  # (v^k, v)
        self._cum = np.cumsum(self.transitions, axis=1)
        self._stationary_state = self._power_iteration()
        self._cum_state = np.cumsum(self._stationary_state)

    def _power_iteration(self, tol: float = 1e-12, max_iter: int = 2000) -> np.ndarray:
        v, k = self.spec.vocab_size, self.spec.order
        w = self.transitions.reshape(v, v ** (k - 1), v)
        mu = np.full(v ** k, 1.0 / v ** k)
        for _ in range(max_iter):
            nxt = np.einsum("ar,arc->rc", mu.reshape(v, v ** (k - 1)), w).reshape(-1)
            nxt /= nxt.sum()
            if np.abs(nxt - mu).sum() < tol:
                mu = nxt
                break
            mu = nxt
        return mu

    def stationary_unigram(self) -> np.ndarray:
        """Stationary marginal over single tokens (power-iteration oracle)."""
        v, k = self.spec.vocab_size, self.spec.order
        return self._stationary_state.reshape(v ** (k - 1), v).sum(axis=0)

    def sample_sentence(self, rng: np.random.Generator) -> list[int]:
        spec = self.spec
        v = spec.vocab_size
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        state = int(np.searchsorted(self._cum_state, rng.random()))
        out = []
        for _ in range(length):
            tok = int(np.searchsorted(self._cum[state], rng.random()))
            tok = min(tok, v - 1)
            out.append(tok)
            state = (state * v + tok) % (v ** spec.order)
        return out

    def sample_corpus(self, n_sentences: int, seed, style: int = STYLE_X,
                      split: str = "train") -> StyleCorpus:
        if n_sentences < 1:
            raise ContractError("need at least one sentence")
        rng = np.random.default_rng(seed)
        n_reserved = len(RESERVED_TOKENS)
        sents = [[t + n_reserved for t in self.sample_sentence(rng)]
                 for _ in range(n_sentences)]
        return StyleCorpus(style=style, sentences=sents, split=split)


def default_vocab(spec: MarkovSpec) -> Vocabulary:
    width = len(str(spec.vocab_size - 1))
    return Vocabulary([f"w{i:0{width}d}" for i in range(spec.vocab_size)])


def generate_toy_corpus(spec: MarkovSpec, n_sentences: int, seed: int,
                        style: int = STYLE_X, split: str = "train"
                        ) -> tuple[StyleCorpus, Vocabulary]:
    """Self-contained corpus draw: chain and sentences both derive from ``seed``."""
    chain = MarkovChain(spec, seed)
    corpus = chain.sample_corpus(n_sentences, [int(seed), 1], style=style, split=split)
    return corpus, default_vocab(spec)


# --------------------------------------------------------------------------
# Word substitution cipher
# --------------------------------------------------------------------------

@dataclass
class CipherDictionary:
    mapping: dict[int, int]  # plain id -> cipher id
    fraction: float

    def inverse(self) -> "CipherDictionary":
        return CipherDictionary({v: k for k, v in self.mapping.items()}, self.fraction)


def make_cipher(vocab: Vocabulary, fraction: float, seed: int
                ) -> tuple[CipherDictionary, Vocabulary]:
    """Map ceil(fraction * n_content) uniformly sampled plain tokens to fresh
    cipher tokens; returns the dictionary and the extended vocabulary."""
    if not 0.0 <= fraction <= 1.0:
        raise ContractError("cipher fraction must be in [0, 1]")
    content = vocab.content_ids
    n = math.ceil(fraction * len(content))
    rng = np.random.default_rng([int(seed), 0x5EC2E7])
    chosen = sorted(rng.choice(len(content), size=n, replace=False)) if n else []
    plain_ids = [content[i] for i in chosen]
    new_tokens = [vocab.tokens[i] + CIPHER_SUFFIX for i in plain_ids]
    extended = vocab.extended(new_tokens)
    mapping = {pid: extended.token_to_id[vocab.tokens[pid] + CIPHER_SUFFIX]
               for pid in plain_ids}
    return CipherDictionary(mapping, fraction), extended


def apply_cipher(corpus: StyleCorpus, cipher: CipherDictionary) -> StyleCorpus:
    mapped = [[cipher.mapping.get(t, t) for t in sent] for sent in corpus.sentences]
    return StyleCorpus(style=corpus.style, sentences=mapped, split=corpus.split)


# --------------------------------------------------------------------------
# Batching
# --------------------------------------------------------------------------

@dataclass
class Padded:
    """A padded half-batch of one style."""

    ids: np.ndarray       # (B, T) int64, pad id beyond each length
    lengths: np.ndarray   # (B,) int64

    @property
    def max_len(self) -> int:
        return self.ids.shape[1]

    def mask(self, dtype=np.float64) -> np.ndarray:
        t = np.arange(self.max_len)[None, :]
        return (t < self.lengths[:, None]).astype(dtype)


def pad_sentences(sentences: list[list[int]]) -> Padded:
    if not sentences or any(len(s) == 0 for s in sentences):
        raise ContractError("cannot pad an empty sentence")
    lengths = np.array([len(s) for s in sentences], dtype=np.int64)
    out = np.full((len(sentences), int(lengths.max())), PAD, dtype=np.int64)
    for i, s in enumerate(sentences):
        out[i, :len(s)] = s
    return Padded(out, lengths)


@dataclass
class BatchPair:
    x: Padded
    y: Padded
    epoch: int
    step: int


def epoch_order(n: int, seed: int, epoch: int, stream: int) -> np.ndarray:
    """Deterministic shuffle for one epoch, derived from (seed, epoch)."""
    rng = np.random.default_rng([int(seed), 0xBA7C4, int(epoch), stream])
    return rng.permutation(n)


def batch_iter(corpus_x: StyleCorpus, corpus_y: StyleCorpus, batch_size: int,
               seed: int, n_epochs: int = 1, start_epoch: int = 0):
    """Stream of paired half-batches: batch_size/2 sentences per style,
    reshuffled each epoch, last ragged batch dropped."""
    if batch_size % 2 != 0 or batch_size < 2:
        raise ContractError("batch_size must be even and positive")
    half = batch_size // 2
    n = min(len(corpus_x), len(corpus_y))
    for epoch in range(start_epoch, start_epoch + n_epochs):
        px = epoch_order(len(corpus_x), seed, epoch, 0)[:n]
        py = epoch_order(len(corpus_y), seed, epoch, 1)[:n]
        for step in range(n // half):
            sel_x = px[step * half:(step + 1) * half]
            sel_y = py[step * half:(step + 1) * half]
            yield BatchPair(
                x=pad_sentences([corpus_x.sentences[i] for i in sel_x]),
                y=pad_sentences([corpus_y.sentences[i] for i in sel_y]),
                epoch=epoch, step=step)


# --------------------------------------------------------------------------
# Styled toy corpora (two-lexicon "sentiment" surrogate)
# --------------------------------------------------------------------------

def generate_styled_corpora(n_sentences: int, seed: int, content_size: int = 40,
                            n_markers: int = 6, order: int = 1,
                            min_len: int = 4, max_len: int = 10
                            ) -> tuple[StyleCorpus, StyleCorpus, Vocabulary]:
    """Two corpora sharing Markov content but carrying disjoint style-marker
    tokens; separable by a small classifier, for the transfer-accuracy metric."""
    spec = MarkovSpec(vocab_size=content_size, order=order,
                      concentration=0.3, min_len=min_len, max_len=max_len)
    chain = MarkovChain(spec, seed)
    vocab = default_vocab(spec)
    markers_a = [vocab.add(f"styA{i}") for i in range(n_markers)]
    markers_b = [vocab.add(f"styB{i}") for i in range(n_markers)]
    rng = np.random.default_rng([int(seed), 0x57E1ED])

    def build(markers: list[int], style: int) -> StyleCorpus:
        sents = []
        n_reserved = len(RESERVED_TOKENS)
        for _ in range(n_sentences):
            sent = [t + n_reserved for t in chain.sample_sentence(rng)]
            for _ in range(int(rng.integers(1, 3))):
                pos = int(rng.integers(0, len(sent) + 1))
                sent.insert(pos, int(rng.choice(markers)))
            sents.append(sent[:max_len + 4])
        return StyleCorpus(style=style, sentences=sents, split="train")

    return build(markers_a, STYLE_X), build(markers_b, STYLE_Y), vocab


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------

def save_corpus(path, corpus: StyleCorpus, vocab: Vocabulary) -> None:
    lines = [" ".join(vocab.decode(s)) for s in corpus.sentences]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(path, vocab: Vocabulary, style: int, split: str = "train") -> StyleCorpus:
    sents = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        toks = line.split()
        if toks:
            sents.append(vocab.encode(toks))
    return StyleCorpus(style=style, sentences=sents, split=split)


def save_cipher(path, cipher: CipherDictionary, vocab: Vocabulary) -> None:
    lines = [f"{vocab.tokens[p]}\t{vocab.tokens[c]}" for p, c in sorted(cipher.mapping.items())]
    header = f"# fraction={cipher.fraction}"
    Path(path).write_text("\n".join([header] + lines) + "\n", encoding="utf-8")


def load_cipher(path, vocab: Vocabulary) -> CipherDictionary:
    mapping = {}
    fraction = 0.0
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            fraction = float(line.split("=", 1)[1])
            continue
        plain, ciph = line.split("\t")
        mapping[vocab.token_to_id[plain]] = vocab.token_to_id[ciph]
    return CipherDictionary(mapping, fraction)
