"""Token vocabulary with reserved special ids."""

from __future__ import annotations

from typing import Iterable, Sequence

BOS, EOS, PAD, UNK = 0, 1, 2, 3
SPECIALS = ("<s>", "</s>", "<pad>", "<unk>")


class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        self.add_all(tokens)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return idx

    def add_all(self, tokens: Iterable[str]) -> None:
        for t in tokens:
            self.add(t)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip and i in (BOS, PAD):
                continue
            if strip and i == EOS:
                break
            out.append(self.itos[i])
        return out

    def to_list(self) -> list[str]:
        return list(self.itos[len(SPECIALS):])

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocab":
        return cls(tokens)

    @classmethod
    def from_instances(cls, instances, nodes: bool = True, targets: bool = True) -> "Vocab":
        vocab = cls()
        for inst in instances:
            if nodes:
                vocab.add_all(inst.graph.tokens)
            if targets:
                vocab.add_all(inst.target)
        return vocab
