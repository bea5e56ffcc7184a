"""Tokenization, vocabulary, corpus filtering and sentence noise."""

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

SOS, EOS, UNK = 0, 1, 2
RESERVED = ("<sos>", "<eos>", "<unk>")

MIN_FREQ = 40
MIN_LEN = 8
MAX_UNK_FRAC = 0.15
P_DROP = 0.1
SHUFFLE_K = 3
LENGTH_CAP = 20

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(line):
    """Lowercase and split on whitespace, keeping each punctuation mark as a token."""
    return _TOKEN_RE.findall(line.lower())


class Vocabulary:
    """Word/id mapping with SOS=0, EOS=1, UNK=2 reserved."""

    def __init__(self, words=(), min_frequency=1):
        self.itos = list(RESERVED)
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        self.min_frequency = min_frequency
        for w in words:
            self.add(w)

    def add(self, word):
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word in self.stoi

    def id(self, word):
        return self.stoi.get(word, UNK)

    def word(self, idx):
        return self.itos[idx]

    def words(self):
        """Non-reserved words in id order."""
        return self.itos[len(RESERVED):]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(w + "\n" for w in self.words())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))


@dataclass(frozen=True)
class TokenSentence:
    ids: tuple

    def __post_init__(self):
        if len(self.ids) < 1:
            raise ValueError("TokenSentence must hold at least one word")
        if SOS in self.ids or EOS in self.ids:
            raise ValueError("TokenSentence may not contain SOS/EOS")

    def __len__(self):
        return len(self.ids)


def build_vocab(corpus, min_freq=MIN_FREQ, concept_words=()):
    """Keep words seen at least ``min_freq`` times, plus every concept word.

    Ids are assigned by descending count then alphabetically, so the result
    does not depend on corpus order.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter(w for sent in corpus for w in sent)
    keep = {w for w, n in counts.items() if n >= min_freq and w not in RESERVED}
    keep.update(w for w in concept_words if w not in RESERVED)
    ordered = sorted(keep, key=lambda w: (-counts.get(w, 0), w))
    return Vocabulary(ordered, min_frequency=min_freq)


def encode(words, vocab):
    return TokenSentence(tuple(vocab.id(w) for w in words))


def decode(sentence, vocab):
    ids = sentence.ids if isinstance(sentence, TokenSentence) else sentence
    bad = [i for i in ids if not 0 <= i < len(vocab)]
    if bad:
        raise ValueError(f"invalid token ids {bad} for vocabulary of size {len(vocab)}")
    return [vocab.word(i) for i in ids]


def filter_corpus(sentences, vocab, min_len=MIN_LEN, max_unk_frac=MAX_UNK_FRAC):
    """Drop short sentences and those with too many out-of-vocabulary words."""
    kept = []
    for words in sentences:
        if len(words) < min_len:
            continue
        unk = sum(1 for w in words if w not in vocab.stoi)
        if unk / len(words) > max_unk_frac:
            continue
        kept.append(words)
    return kept


def add_noise(sentence, rng, p_drop=P_DROP, k=SHUFFLE_K):
    """Word dropout followed by a local shuffle moving no word more than ``k`` slots."""
    ids = sentence.ids if isinstance(sentence, TokenSentence) else tuple(sentence)
    if not ids:
        raise ValueError("cannot noise an empty sentence")
    keep = rng.random(len(ids)) >= p_drop
    kept = [w for w, m in zip(ids, keep) if m]
    if not kept:
        kept = [ids[rng.integers(len(ids))]]
    if k > 0 and len(kept) > 1:
        # i + U(0, k+1) keys: j - i >= k+1 can never swap
        keys = np.arange(len(kept)) + rng.uniform(0.0, k + 1, size=len(kept))
        kept = [kept[i] for i in np.argsort(keys, kind="stable")]
    return TokenSentence(tuple(kept))


def read_corpus(path):
    with open(path, encoding="utf-8") as fh:
        return [tokenize(line) for line in fh if line.strip()]
