"""Text to phoneme-id conversion with a pluggable word lexicon.

The lexicon file format is one entry per line, ``word<TAB>phoneme phoneme ...``.
A small ARPAbet-style lexicon ships with the package so tests and demos
run hermetically; any file in the same format can be swapped in.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import DataError, SchemaError

PAD = "<pad>"
UNK = "<unk>"
WORD_BOUNDARY = "<wb>"

_WORD_RE = re.compile(r"[a-z]+(?:'[a-z]+)*")


@dataclass(frozen=True)
class PhonemeVocabulary:
    """Ordered symbol inventory; ids are positions, PAD is always id 0."""

    symbols: tuple[str, ...]
    lookup: dict[str, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if not self.symbols or self.symbols[0] != PAD:
            raise DataError(f"vocabulary must start with {PAD}")
        if len(set(self.symbols)) != len(self.symbols):
            raise DataError("vocabulary contains duplicate symbols")
        object.__setattr__(self, "lookup", {s: i for i, s in enumerate(self.symbols)})

    @classmethod
    def from_phonemes(cls, phonemes: list[str] | tuple[str, ...]) -> "PhonemeVocabulary":
        extras = [p for p in phonemes if p not in (PAD, UNK)]
        return cls((PAD, UNK, *extras))

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int | None:
        return self.lookup.get(UNK)

    def encode_symbol(self, symbol: str) -> int:
        idx = self.lookup.get(symbol)
        if idx is None:
            if self.unk_id is None:
                raise DataError(f"symbol {symbol!r} not in vocabulary and no {UNK} defined")
            return self.unk_id
        return idx


@dataclass
class PhonemeSequence:
    ids: list[int]
    symbols: list[str]
    source_text: str


class Lexicon:
    """word -> phoneme list mapping, loaded once and immutable after."""

    def __init__(self, entries: dict[str, tuple[str, ...]]):
        self._entries = dict(entries)
        self._vocab: PhonemeVocabulary | None = None

    @classmethod
    def load(cls, path: str | Path) -> "Lexicon":
        entries: dict[str, tuple[str, ...]] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                if "\t" not in line:
                    raise SchemaError(f"{path}:{line_no}: expected 'word<TAB>phonemes', got {line!r}")
                word, phones = line.split("\t", 1)
                word = word.strip().lower()
                symbols = tuple(phones.split())
                if not word or not symbols:
                    raise SchemaError(f"{path}:{line_no}: empty word or pronunciation")
                entries[word] = symbols
        return cls(entries)

    @classmethod
    def bundled(cls) -> "Lexicon":
        with resources.as_file(resources.files("videodub.resources") / "lexicon.txt") as p:
            return cls.load(p)

    def __contains__(self, word: str) -> bool:
        return word in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, word: str) -> tuple[str, ...] | None:
        return self._entries.get(word)

    def phoneme_inventory(self) -> list[str]:
        inventory = sorted({p for phones in self._entries.values() for p in phones})
        return inventory

    def vocabulary(self) -> PhonemeVocabulary:
        if self._vocab is None:
            self._vocab = PhonemeVocabulary((PAD, UNK, WORD_BOUNDARY, *self.phoneme_inventory()))
        return self._vocab


def normalize_text(text: str) -> list[str]:
    """Lowercase and split into words, dropping punctuation except intra-word apostrophes."""
    return _WORD_RE.findall(text.lower())


def text_to_phonemes(text: str, lexicon: Lexicon, oov_policy: str = "error") -> PhonemeSequence:
    """Look each word up in the lexicon, joining words with a boundary marker.

    ``oov_policy`` is either ``"error"`` (raise on any out-of-vocabulary
    word) or ``"spell"`` (fall back to the word's letters as phoneme
    symbols; letters absent from the vocabulary encode as UNK).
    """
    if oov_policy not in ("error", "spell"):
        raise DataError(f"unknown OOV policy {oov_policy!r}")
    words = normalize_text(text)
    if not words:
        raise DataError(f"no words left after normalizing text {text!r}")
    symbols: list[str] = []
    for i, word in enumerate(words):
        if i > 0:
            symbols.append(WORD_BOUNDARY)
        phones = lexicon.get(word)
        if phones is None:
            if oov_policy == "error":
                raise DataError(f"word {word!r} not in lexicon (OOV policy is 'error')")
            phones = tuple(ch.upper() for ch in word if ch.isalpha())
        symbols.extend(phones)
    vocab = lexicon.vocabulary()
    ids = [vocab.encode_symbol(s) for s in symbols]
    return PhonemeSequence(ids=ids, symbols=symbols, source_text=text)


def encode_phonemes(symbols: list[str], vocab: PhonemeVocabulary, allow_unk: bool = True) -> list[int]:
    if not symbols:
        raise DataError("cannot encode an empty phoneme sequence")
    ids = []
    for s in symbols:
        idx = vocab.lookup.get(s)
        if idx is None:
            if not allow_unk or vocab.unk_id is None:
                raise DataError(f"symbol {s!r} not in vocabulary")
            idx = vocab.unk_id
        ids.append(idx)
    return ids


def decode_phonemes(ids: list[int], vocab: PhonemeVocabulary) -> list[str]:
    if not ids:
        raise DataError("cannot decode an empty id sequence")
    out = []
    for i in ids:
        if not 0 <= i < len(vocab):
            raise DataError(f"id {i} out of range for vocabulary of size {len(vocab)}")
        out.append(vocab.symbols[i])
    return out
