"""Token-level data model, dataset containers and dataset file I/O.

A dataset file is UTF-8 with one JSON record per line. Records carry the
fields ``x``, ``y``, ``z`` (optional), ``source`` (optional) and
``likelihood_scale`` (optional); token fields are space-separated symbol
strings, never raw indices, which keeps files readable and diffable.
Reserved control tokens sit at fixed vocabulary indices (BOS=0, EOS=1,
SEP=2) and never appear in serialized token fields unless a sequence
explicitly contains them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

BOS = 0
EOS = 1
SEP = 2
N_RESERVED = 3
RESERVED_SYMBOLS = ("<bos>", "<eos>", "<sep>")

SOURCES = ("expert", "learner", "spliced", "human-file")
SPLITS = ("train", "dev", "test")

# A token sequence is a plain tuple of vocabulary indices.
Tokens = tuple


@dataclass(frozen=True)
class Vocab:
    """Ordered token alphabet with fixed reserved indices."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(self.symbols) < N_RESERVED + 1:
            raise ValueError("vocab needs at least one content symbol")
        if self.symbols[:N_RESERVED] != RESERVED_SYMBOLS:
            raise ValueError(f"reserved symbols must be {RESERVED_SYMBOLS}")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocab symbols must be unique")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @property
    def size(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise ValueError(f"unknown token {symbol!r}") from None

    def symbol(self, index: int) -> str:
        if not 0 <= index < len(self.symbols):
            raise ValueError(f"token index {index} out of range for vocab of size {self.size}")
        return self.symbols[index]


def make_vocab(n_content: int) -> Vocab:
    """Vocabulary with ``n_content`` content symbols named s0, s1, ..."""
    if n_content < 1:
        raise ValueError("need at least one content symbol")
    return Vocab(RESERVED_SYMBOLS + tuple(f"s{i}" for i in range(n_content)))


@dataclass(frozen=True)
class Example:
    """A (context, outcome, optional explanation) triple with provenance."""

    x: Tokens
    y: Tokens
    z: Tokens | None = None
    source: str = "human-file"
    likelihood_scale: int | None = None

    def __post_init__(self):
        if len(self.x) == 0 or len(self.y) == 0:
            raise ValueError("context and outcome must be non-empty")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.likelihood_scale is not None and not 1 <= self.likelihood_scale <= 5:
            raise ValueError("likelihood_scale must be in 1..5")


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...]
    split: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


def tokenize(text: str, vocab: Vocab) -> Tokens:
    """Split on whitespace and map each symbol to its vocabulary index."""
    return tuple(vocab.index(s) for s in text.split())


def detokenize(seq: Tokens, vocab: Vocab) -> str:
    """Join symbols with single spaces; inverse of :func:`tokenize`."""
    return " ".join(vocab.symbol(i) for i in seq)


def save_dataset(dataset: Dataset, path, vocab: Vocab) -> None:
    """Write one JSON record per example, in deterministic field order."""
    lines = []
    for ex in dataset.examples:
        rec = {"x": detokenize(ex.x, vocab), "y": detokenize(ex.y, vocab)}
        if ex.z is not None:
            rec["z"] = detokenize(ex.z, vocab)
        rec["source"] = ex.source
        if ex.likelihood_scale is not None:
            rec["likelihood_scale"] = ex.likelihood_scale
        lines.append(json.dumps(rec))
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
    except OSError as err:
        raise OSError(f"cannot write dataset to {path}: {err}") from err


def load_dataset(path, vocab: Vocab, split: str | None = None) -> Dataset:
    """Parse a dataset file; unknown record fields are ignored."""
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}: line {lineno}: malformed record: {err}") from None
            if not isinstance(rec, dict) or "x" not in rec or "y" not in rec:
                raise ValueError(f"{path}: line {lineno}: record must carry 'x' and 'y'")
            try:
                x = tokenize(rec["x"], vocab)
                y = tokenize(rec["y"], vocab)
                z = tokenize(rec["z"], vocab) if "z" in rec else None
                ex = Example(
                    x=x,
                    y=y,
                    z=z,
                    source=rec.get("source", "human-file"),
                    likelihood_scale=rec.get("likelihood_scale"),
                )
            except ValueError as err:
                raise ValueError(f"{path}: line {lineno}: {err}") from None
            examples.append(ex)
    return Dataset(tuple(examples), split=split)


def split_dataset(dataset: Dataset, fractions, seed: int):
    """Deterministically partition into (train, dev, test).

    Sizes are floor(n * fraction) per split with the remainder assigned to
    train. The permutation and therefore the partition depend only on
    ``seed``.
    """
    f_train, f_dev, f_test = fractions
    if min(f_train, f_dev, f_test) < 0:
        raise ValueError("fractions must be nonnegative")
    if abs(f_train + f_dev + f_test - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n = len(dataset)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(np.floor(n * f_train))
    n_dev = int(np.floor(n * f_dev))
    n_test = int(np.floor(n * f_test))
    n_train += n - (n_train + n_dev + n_test)
    order = [dataset.examples[i] for i in perm]
    train = tuple(order[:n_train])
    dev = tuple(order[n_train:n_train + n_dev])
    test = tuple(order[n_train + n_dev:])
    return (
        Dataset(train, split="train"),
        Dataset(dev, split="dev"),
        Dataset(test, split="test"),
    )


def stamp_scale(example: Example, scale: int) -> Example:
    return replace(example, likelihood_scale=scale)
