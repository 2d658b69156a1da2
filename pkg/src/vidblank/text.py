"""Sentence-side encoding.

Sentences arrive with a single blank marker ("_____"). The marker splits the
sentence into a left and a right fragment; each fragment is embedded with a
frozen word-vector table and folded by its own LSTM. The two final hidden
states are concatenated (left first) and squashed into one vector by the
merge projection.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError
from .tensor import Tensor, concat, matmul

BLANK_MARKER = "_____"

# Underscore is excluded so the blank marker survives token cleanup.
_EDGE_PUNCT = string.punctuation.replace("_", "")


@dataclass
class BlankSentence:
    """One record: the two fragments around the blank, the answer word, and
    the video the sentence describes."""

    left_tokens: list
    right_tokens: list
    answer: str
    video_id: str


@dataclass
class EmbeddingTable:
    """Frozen word vectors with dense indices and a mean-vector fallback.

    ``unk_vector`` is the arithmetic mean of all rows, recomputed whenever the
    table is built, and stands in for any out-of-vocabulary token.
    """

    vocab: dict
    vectors: np.ndarray
    unk_vector: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.vectors.ndim != 2 or len(self.vocab) != self.vectors.shape[0]:
            raise DimensionError(
                f"vocab size {len(self.vocab)} does not match "
                f"vector matrix shape {self.vectors.shape}"
            )
        self.unk_vector = self.vectors.mean(axis=0)

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, word: str) -> np.ndarray:
        idx = self.vocab.get(word)
        if idx is None:
            return self.unk_vector
        return self.vectors[idx]


def _clean(token: str) -> str:
    return token.strip(_EDGE_PUNCT)


def tokenize(raw: str):
    """Split a blank-marked sentence into (left_tokens, right_tokens).

    Lowercases, splits on whitespace, strips leading/trailing punctuation
    from each token, and drops tokens that are left empty. The sentence must
    contain exactly one blank marker; it belongs to neither fragment.
    """
    pieces = [_clean(t) for t in raw.lower().split()]
    marker_positions = [i for i, t in enumerate(pieces) if t == BLANK_MARKER]
    if len(marker_positions) != 1:
        raise FormatError(
            f"expected exactly one {BLANK_MARKER!r} marker, "
            f"found {len(marker_positions)} in: {raw.strip()!r}"
        )
    cut = marker_positions[0]
    left = [t for t in pieces[:cut] if t]
    right = [t for t in pieces[cut + 1 :] if t]
    return left, right


def embed_lookup(tokens, table: EmbeddingTable) -> np.ndarray:
    """Rows of the table for each token, order preserved; OOV tokens map to
    the table's mean vector. Returns an (n, width) array."""
    if not tokens:
        return np.zeros((0, table.width))
    return np.stack([table.lookup(t) for t in tokens])


@dataclass
class LSTMParams:
    """One LSTM's trainable tensors.

    Gate blocks are stacked along the first axis in the fixed order
    [input, forget, cell, output], each block ``hidden`` wide.
    """

    in_weights: Tensor  # (4h, input width)
    hid_weights: Tensor  # (4h, h)
    bias: Tensor  # (4h,)

    @property
    def hidden(self) -> int:
        return self.hid_weights.shape[1]

    @property
    def input_width(self) -> int:
        return self.in_weights.shape[1]

    def tensors(self):
        return {
            "in_weights": self.in_weights,
            "hid_weights": self.hid_weights,
            "bias": self.bias,
        }


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_lstm(rng: np.random.Generator, input_width: int, hidden: int) -> LSTMParams:
    """Fresh LSTM parameters: uniform Glorot weights, zero biases except the
    forget-gate block, which starts at +1 so early memories persist."""
    bias = np.zeros(4 * hidden)
    bias[hidden : 2 * hidden] = 1.0
    return LSTMParams(
        in_weights=Tensor(glorot(rng, 4 * hidden, input_width), requires_grad=True),
        hid_weights=Tensor(glorot(rng, 4 * hidden, hidden), requires_grad=True),
        bias=Tensor(bias, requires_grad=True),
    )


def lstm_step(x: Tensor, h: Tensor, c: Tensor, p: LSTMParams):
    """One LSTM cell update; returns (h', c').

    Standard cell with a forget gate and no peepholes: logistic input,
    forget, output gates, tanh candidate, c' = f*c + i*g, h' = o*tanh(c').
    """
    n = p.hidden
    gates = matmul(p.in_weights, x) + matmul(p.hid_weights, h) + p.bias
    gate_in = gates[0:n].sigmoid()
    gate_forget = gates[n : 2 * n].sigmoid()
    candidate = gates[2 * n : 3 * n].tanh()
    gate_out = gates[3 * n : 4 * n].sigmoid()
    c_next = gate_forget * c + gate_in * candidate
    h_next = gate_out * c_next.tanh()
    return h_next, c_next


def encode_fragment(vectors, p: LSTMParams, reverse: bool = False, collect: bool = False):
    """Fold a sequence of token vectors into the LSTM's final hidden state.

    Starts from a zero state. With ``reverse`` the sequence is consumed back
    to front (used for the right fragment so both encoders finish at the
    blank). An empty fragment yields the zero vector. With ``collect`` the
    hidden state after every step is returned as a list instead.
    """
    n = p.hidden
    h = Tensor(np.zeros(n))
    c = Tensor(np.zeros(n))
    order = range(len(vectors) - 1, -1, -1) if reverse else range(len(vectors))
    states = []
    for i in order:
        x = vectors[i] if isinstance(vectors[i], Tensor) else Tensor(vectors[i])
        h, c = lstm_step(x, h, c, p)
        states.append(h)
    return states if collect else h


def merge(u_left: Tensor, u_right: Tensor, weights: Tensor) -> Tensor:
    """tanh of the merge projection applied to [left | right]."""
    if weights.ndim != 2 or weights.shape[1] != u_left.size + u_right.size:
        raise DimensionError(
            f"merge weights {weights.shape} do not accept fragment widths "
            f"{u_left.size} + {u_right.size}"
        )
    return matmul(weights, concat([u_left, u_right])).tanh()
