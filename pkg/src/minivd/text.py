"""Tokenization, vocabulary construction, and token-id encoding.

One vocabulary is shared by captions, questions, history, and answers.
Ids 0..3 are reserved (PAD, UNK, BOS, EOS) and are never assigned to
corpus words; corpus ids are assigned by descending frequency, ties
broken lexicographically, so construction is deterministic.
"""

import string
from collections import Counter
from dataclasses import dataclass

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation})


def tokenize(text):
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass(frozen=True)
class EncodedSequence:
    ids: tuple
    original_length: int

    def __len__(self):
        return len(self.ids)


class Vocabulary:
    def __init__(self, tokens):
        """`tokens` are the non-reserved words, already in id order."""
        for reserved in RESERVED:
            if reserved in tokens:
                raise ValueError(f"corpus token collides with reserved token {reserved!r}")
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def id_of(self, token):
        return self.token_to_id.get(token, UNK)

    def token_of(self, idx):
        return self.id_to_token[idx]

    def save(self, path):
        """One non-reserved token per line; line number = id - len(RESERVED)."""
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.id_to_token[len(RESERVED) :]:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens)


def build_vocab(corpus, min_count=5):
    """Vocabulary over all tokens occurring at least `min_count` times.

    `corpus` is an iterable of strings (each tokenized independently).
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    n_texts = 0
    for text in corpus:
        n_texts += 1
        counts.update(tokenize(text))
    if n_texts == 0:
        raise ValueError("build_vocab: empty corpus")
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def encode(text, vocab, max_len):
    """Token ids for `text`, truncated at `max_len`; unknown words map to UNK."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    tokens = tokenize(text)
    ids = tuple(vocab.id_of(t) for t in tokens[:max_len])
    return EncodedSequence(ids=ids, original_length=len(tokens))


def decode(ids, vocab):
    """Space-joined tokens for `ids`; reserved framing tokens are dropped."""
    return " ".join(
        vocab.token_of(i) for i in ids if i not in (PAD, BOS, EOS)
    )
