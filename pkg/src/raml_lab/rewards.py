"""Sequence distances and the rewards built on them.

Sequences are tuples of integer token ids. Human-readable symbols are mapped
to ids at the CLI boundary (see :meth:`Vocab.encode`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence as _Seq, Tuple

Sequence = Tuple[int, ...]

NIL = -1


@dataclass(frozen=True)
class Vocab:
    """A dense alphabet of ``size`` tokens with ids ``0..size-1``.

    ``symbols`` optionally names each token for text input/output. The nil
    token (id ``NIL``) marks a deletion during edit sampling and never
    appears in a materialized sequence.
    """

    size: int
    symbols: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"vocab size must be >= 2, got {self.size}")
        if self.symbols:
            if len(self.symbols) != self.size:
                raise ValueError("need exactly one symbol per token")
            if len(set(self.symbols)) != self.size:
                raise ValueError("vocab symbols must be distinct")

    @classmethod
    def from_symbols(cls, symbols: str | _Seq[str]) -> "Vocab":
        symbols = tuple(symbols)
        return cls(len(symbols), symbols)

    @property
    def nil_token(self) -> int:
        return NIL

    @property
    def tokens(self) -> range:
        return range(self.size)

    def validate(self, seq: _Seq[int]) -> Sequence:
        seq = tuple(int(t) for t in seq)
        for t in seq:
            if not 0 <= t < self.size:
                raise ValueError(f"token {t} outside vocab of size {self.size}")
        return seq

    def encode(self, text: str) -> Sequence:
        if not self.symbols:
            raise ValueError("vocab has no symbols to encode with")
        index = {s: i for i, s in enumerate(self.symbols)}
        try:
            return tuple(index[ch] for ch in text)
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} not in vocab") from None

    def decode(self, seq: _Seq[int]) -> str:
        if not self.symbols:
            return " ".join(str(t) for t in seq)
        return "".join(self.symbols[t] for t in seq)


def hamming_distance(a: _Seq[int], b: _Seq[int]) -> int:
    """Number of positions at which two equal-length sequences differ."""
    if len(a) != len(b):
        raise ValueError(
            f"hamming requires equal lengths, got {len(a)} and {len(b)}"
        )
    return sum(x != y for x, y in zip(a, b))


def edit_distance(a: _Seq[int], b: _Seq[int]) -> int:
    """Levenshtein distance with unit insert, delete and substitute costs.

    Two-row dynamic program, O(len(a) * len(b)) time.
    """
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


_DISTANCES = {"neg_hamming": hamming_distance, "neg_edit": edit_distance}


@dataclass(frozen=True)
class RewardFn:
    """Negative sequence distance, ``r(y, y*) = -d(y, y*)``.

    ``kind`` is ``"neg_hamming"`` (equal lengths only) or ``"neg_edit"``.
    """

    kind: str = "neg_edit"

    def __post_init__(self):
        if self.kind not in _DISTANCES:
            raise ValueError(
                f"unknown reward kind {self.kind!r}; expected one of {sorted(_DISTANCES)}"
            )

    def __call__(self, y: _Seq[int], ystar: _Seq[int]) -> float:
        return reward(self, y, ystar)


def reward(fn: RewardFn, y: _Seq[int], ystar: _Seq[int]) -> float:
    return -float(_DISTANCES[fn.kind](y, ystar))
