"""A small parametric autoregressive policy over token sequences.

The policy maps (context x, outcome y, explanation prefix) to a
distribution over the full vocabulary, including the EOS token. The
conditioning stream is the concatenation [BOS, x, SEP, y, SEP, prefix].
Architecture: each position embeds the last ``window`` stream tokens
(left-padded with BOS), appends a tanh summary of the mean embedding of
the whole stream so far, and pushes the result through a two-layer tanh
stack followed by a linear projection to vocabulary logits. There is no
recurrence or attention; the fixed window keeps the backward pass exact
and small.

Parameter snapshots are immutable; every operation here is a pure
function of (params, inputs, seed) and safe to run in parallel across
examples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import BOS, EOS, SEP, Tokens

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PolicyParams:
    """Named parameter arrays plus the shape metadata they depend on."""

    vocab_size: int
    dim: int
    window: int
    emb: np.ndarray        # (vocab, d) token embeddings
    ctx_w: np.ndarray      # (d, d) stream-summary weights
    h1_w: np.ndarray       # (window*d + d, d)
    h1_b: np.ndarray       # (d,)
    h2_w: np.ndarray       # (d, d)
    h2_b: np.ndarray       # (d,)
    out_w: np.ndarray      # (d, vocab)
    out_b: np.ndarray      # (vocab,)

    ARRAY_FIELDS = ("emb", "ctx_w", "h1_w", "h1_b", "h2_w", "h2_b", "out_w", "out_b")

    def __post_init__(self):
        v, d, w = self.vocab_size, self.dim, self.window
        expected = {
            "emb": (v, d),
            "ctx_w": (d, d),
            "h1_w": (w * d + d, d),
            "h1_b": (d,),
            "h2_w": (d, d),
            "h2_b": (d,),
            "out_w": (d, v),
            "out_b": (v,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def param_count(self) -> int:
        return sum(getattr(self, name).size for name in self.ARRAY_FIELDS)

    def with_arrays(self, **arrays) -> "PolicyParams":
        fields = {name: arrays.get(name, getattr(self, name)) for name in self.ARRAY_FIELDS}
        return PolicyParams(self.vocab_size, self.dim, self.window, **fields)


@dataclass(frozen=True)
class Distribution:
    """Next-token probabilities over the full vocabulary."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)


def init_params(seed: int, vocab_size: int, dim: int, window: int) -> PolicyParams:
    """Centered-uniform weights scaled by 1/sqrt(fan_in); zero biases."""
    if dim < 2:
        raise ValueError("dim must be at least 2")
    if window < 1:
        raise ValueError("window must be at least 1")
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        scale = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-scale, scale, size=shape)

    return PolicyParams(
        vocab_size=vocab_size,
        dim=dim,
        window=window,
        emb=uniform((vocab_size, dim), dim),
        ctx_w=uniform((dim, dim), dim),
        h1_w=uniform((window * dim + dim, dim), window * dim + dim),
        h1_b=np.zeros(dim),
        h2_w=uniform((dim, dim), dim),
        h2_b=np.zeros(dim),
        out_w=uniform((dim, vocab_size), dim),
        out_b=np.zeros(vocab_size),
    )


def _stream(x: Tokens, y: Tokens, z: Tokens) -> np.ndarray:
    return np.array([BOS, *x, SEP, *y, SEP, *z], dtype=np.int64)


def forward_logits(params, x: Tokens, y: Tokens, z: Tokens, positions=None):
    """Logit rows for predicting the token at each requested z position.

    Position j conditions on [BOS, x, SEP, y, SEP, z[:j]]; valid positions
    run 0..len(z). Works with plain ndarray parameters (returns an
    ndarray) or autodiff leaves (returns a graph node).
    """
    stream = _stream(x, y, z)
    base = len(x) + len(y) + 3
    if positions is None:
        positions = range(len(z) + 1)
    positions = list(positions)
    window = params.window

    prefix_lens = np.array([base + j for j in positions])
    # Window of the last `window` stream tokens, BOS-padded on the left.
    win_idx = np.empty((len(positions), window), dtype=np.int64)
    for row, plen in enumerate(prefix_lens):
        lo = plen - window
        pad = max(0, -lo)
        win_idx[row, :pad] = BOS
        win_idx[row, pad:] = stream[max(0, lo):plen]

    # Row j of `mean_map` averages the embeddings of the first prefix_lens[j]
    # stream tokens.
    mean_map = np.zeros((len(positions), len(stream)))
    for row, plen in enumerate(prefix_lens):
        mean_map[row, :plen] = 1.0 / plen

    emb_stream = ad.gather_rows(params.emb, stream)
    summary = ad.tanh(ad.matmul(ad.matmul(mean_map, emb_stream), params.ctx_w))
    win = ad.reshape(ad.gather_rows(params.emb, win_idx), (len(positions), window * params.dim))
    h0 = ad.concat([win, summary], axis=1)
    h1 = ad.tanh(ad.add(ad.matmul(h0, params.h1_w), params.h1_b))
    h2 = ad.tanh(ad.add(ad.matmul(h1, params.h2_w), params.h2_b))
    return ad.add(ad.matmul(h2, params.out_w), params.out_b)


def next_token_dist(params: PolicyParams, x: Tokens, y: Tokens, prefix: Tokens) -> Distribution:
    """Softmax over the vocabulary for the next explanation token."""
    logits = forward_logits(params, x, y, prefix, positions=[len(prefix)])
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits (training diverged?)")
    return Distribution(ad.softmax(logits)[0])


def sequence_logprob(params, x: Tokens, y: Tokens, z: Tokens, from_position: int = 0):
    """Log-probability of generating z and then EOS, token by token.

    ``from_position`` drops the contributions of the first positions,
    which implements prefix masking for spliced training sequences.
    """
    positions = list(range(from_position, len(z) + 1))
    if not positions:
        return 0.0
    targets = [z[j] if j < len(z) else EOS for j in positions]
    logits = forward_logits(params, x, y, z, positions=positions)
    return ad.logprob_picks(logits, targets)


def position_distributions(params: PolicyParams, x: Tokens, y: Tokens, z: Tokens) -> np.ndarray:
    """Next-token probabilities at every position 0..len(z), as rows."""
    logits = forward_logits(params, x, y, z)
    return ad.softmax(logits)


def sample_sequence(
    params: PolicyParams,
    x: Tokens,
    y: Tokens,
    seed: int,
    max_len: int,
    temperature: float = 1.0,
) -> Tokens:
    """Ancestral sampling with temperature-scaled logits.

    Stops at EOS or after ``max_len`` tokens; EOS itself is not returned.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    rng = np.random.default_rng(seed)
    out: list[int] = []
    while len(out) < max_len:
        logits = forward_logits(params, x, y, tuple(out), positions=[len(out)])[0]
        probs = ad.softmax(logits / temperature)
        tok = int(rng.choice(params.vocab_size, p=probs))
        if tok == EOS:
            break
        out.append(tok)
    return tuple(out)


def greedy_decode(params: PolicyParams, x: Tokens, y: Tokens, max_len: int) -> Tokens:
    """Argmax decoding; ties break toward the lowest token index."""
    out: list[int] = []
    while len(out) < max_len:
        logits = forward_logits(params, x, y, tuple(out), positions=[len(out)])[0]
        tok = int(np.argmax(logits))
        if tok == EOS:
            break
        out.append(tok)
    return tuple(out)


def save_checkpoint(params: PolicyParams, path) -> None:
    """Self-describing JSON container: name, shape and flat values per array."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "vocab_size": params.vocab_size,
        "dim": params.dim,
        "window": params.window,
        "arrays": [
            {
                "name": name,
                "shape": list(getattr(params, name).shape),
                "values": getattr(params, name).ravel().tolist(),
            }
            for name in params.ARRAY_FIELDS
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path) -> PolicyParams:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    arrays = {
        entry["name"]: np.array(entry["values"]).reshape(entry["shape"])
        for entry in payload["arrays"]
    }
    return PolicyParams(
        vocab_size=payload["vocab_size"],
        dim=payload["dim"],
        window=payload["window"],
        **arrays,
    )
