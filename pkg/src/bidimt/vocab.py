"""Token vocabulary with the five reserved special tokens.

Ids 0..4 are fixed: PAD, UNK, EOS, and the two direction start tokens.
The start tokens are ordinary vocabulary entries on purpose: their ids
index rows of the target embedding table, which is how the decoder is
told which direction to generate in.
"""

from __future__ import annotations

from .errors import DataError

PAD, UNK, EOS, SOS_L2R, SOS_R2L = range(5)
SPECIAL_TOKENS = ("<pad>", "<unk>", "</s>", "<l2r>", "<r2l>")

L2R = "l2r"
R2L = "r2l"
DIRECTIONS = (L2R, R2L)


def sos_for(direction: str) -> int:
    if direction == L2R:
        return SOS_L2R
    if direction == R2L:
        return SOS_R2L
    raise DataError(f"unknown direction {direction!r}")


def other_direction(direction: str) -> str:
    return R2L if direction == L2R else L2R


class Vocab:
    """Dense, stable token<->id mapping."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:5]) != SPECIAL_TOKENS:
            raise DataError("vocabulary must start with the five special tokens")
        self.tokens = tokens
        self.index = {}
        for i, tok in enumerate(tokens):
            if tok in self.index:
                raise DataError(f"duplicate token {tok!r} in vocabulary")
            self.index[tok] = i

    @classmethod
    def from_tokens(cls, tokens) -> "Vocab":
        """Build a vocabulary from non-special tokens (order preserved)."""
        body = [t for t in tokens if t not in SPECIAL_TOKENS]
        return cls(list(SPECIAL_TOKENS) + body)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens) -> list[int]:
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        out = []
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise DataError(f"token id {i} out of range (vocab size {len(self.tokens)})")
            out.append(self.tokens[i])
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.tokens:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f]
        if len(tokens) < 5:
            raise DataError(f"vocab file {path} has fewer than 5 lines")
        return cls(tokens)
