"""Word-level tokenization, vocabulary, and token-sequence helpers."""
import re
from collections import Counter
from dataclasses import dataclass

from .errors import InputError

PAD, CLS, SEP, BOS, EOS, UNK = 0, 1, 2, 3, 4, 5
SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[BOS]", "[EOS]", "[UNK]")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text):
    """Lowercase, split on whitespace, and split off punctuation characters.

    >>> tokenize("Blood-brain barrier.")
    ['blood', '-', 'brain', 'barrier', '.']
    """
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Bijective token/id map with the six reserved ids first."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise InputError("vocab must start with the reserved special tokens")
        if len(set(tokens)) != len(tokens):
            raise InputError("vocab tokens must be unique")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token):
        return self.stoi.get(token, UNK)

    def token(self, idx):
        return self.itos[idx]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.itos:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh)


def build_vocab(texts, min_freq=1):
    """Vocabulary over ``texts``; tokens sorted by (frequency desc, token)."""
    texts = list(texts)
    if not texts:
        raise InputError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for t in texts for tok in tokenize(t))
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIAL_TOKENS),
                  key=lambda t: (-counts[t], t))
    return Vocab(list(SPECIAL_TOKENS) + kept)


@dataclass(frozen=True)
class TokenSequence:
    """Immutable id sequence. An empty sequence is the empty view prompt."""

    ids: tuple

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    @property
    def body(self):
        """Ids without the leading [CLS]."""
        return self.ids[1:] if self.ids and self.ids[0] == CLS else self.ids

    @property
    def is_empty(self):
        return not self.ids


EMPTY = TokenSequence(())


def encode(text, vocab, add_cls=True, max_len=256):
    if max_len < 2:
        raise InputError("max_len must be at least 2")
    ids = [vocab.id(t) for t in tokenize(text)]
    if add_cls:
        ids = [CLS] + ids
    return TokenSequence(ids[:max_len])


def encode_prompt(text, vocab, max_len=256):
    """View prompt encoding: empty text gives the empty prompt, else [CLS] + tokens."""
    if not tokenize(text):
        return EMPTY
    return encode(text, vocab, add_cls=True, max_len=max_len)


def encode_target(text, vocab, max_len=64):
    """Decoder target: [BOS] tokens [EOS], truncated so [EOS] always survives."""
    ids = [vocab.id(t) for t in tokenize(text)][: max(max_len - 2, 0)]
    return TokenSequence([BOS] + ids + [EOS])


def decode(seq, vocab, skip_special=True):
    ids = seq.ids if isinstance(seq, TokenSequence) else seq
    toks = [vocab.token(i) for i in ids if not (skip_special and i < len(SPECIAL_TOKENS) and i != UNK)]
    return " ".join(toks)


def concat_texts(a, b, max_len=256):
    """[CLS] a [SEP] b, using the bodies of both inputs; order is preserved."""
    return TokenSequence(((CLS,) + tuple(a.body) + (SEP,) + tuple(b.body))[:max_len])
