"""Model assembly: parameters, initialization, forward pass, prediction.

Three configurations share one parameter layout:

* ``full``      - both fragment LSTMs, the merge projection, the visual
                  attention pathway, and the answer head.
* ``sentence``  - text only; the visual pathway is absent and the attended
                  vector is identically zero.
* ``left_only`` - like ``sentence`` but the right fragment is ignored (its
                  encoding is the zero vector).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionParams, attend, init_attention, project_regions, weighted_pool
from .errors import ConfigError, DimensionError
from .tensor import Tensor, matmul, softmax
from .text import (
    EmbeddingTable,
    LSTMParams,
    embed_lookup,
    encode_fragment,
    glorot,
    init_lstm,
    merge,
)

MODES = ("full", "sentence", "left_only")


@dataclass
class ModelDims:
    """Widths of every trainable tensor; channels is the region-feature width
    the visual pathway expects from feature files."""

    emb_dim: int
    hidden_dim: int = 512
    merge_dim: int = 1000
    attn_dim: int = 512
    channels: int = 512
    right_reverse: bool = True  # feed the right fragment blank-first

    def validate(self):
        for name in ("emb_dim", "hidden_dim", "merge_dim", "attn_dim", "channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass
class Model:
    mode: str
    dims: ModelDims
    answer_vocab: tuple  # class index -> answer word
    left_lstm: LSTMParams = None
    right_lstm: LSTMParams = None
    merge_weights: Tensor = None
    attention: AttentionParams = None
    out_weights: Tensor = None  # (n_answers, merge_dim)
    answer_index: dict = field(init=False)

    def __post_init__(self):
        self.answer_index = {w: i for i, w in enumerate(self.answer_vocab)}

    @property
    def n_answers(self) -> int:
        return len(self.answer_vocab)

    def named_tensors(self) -> dict:
        """All trainable tensors in a stable order, keyed by section name."""
        out = {}
        for side, p in (("lstm_left", self.left_lstm), ("lstm_right", self.right_lstm)):
            for k, t in p.tensors().items():
                out[f"{side}/{k}"] = t
        out["merge/weights"] = self.merge_weights
        if self.attention is not None:
            for k, t in self.attention.tensors().items():
                out[f"attention/{k}"] = t
        out["output/weights"] = self.out_weights
        return out

    def zero_grads(self) -> None:
        for t in self.named_tensors().values():
            t.zero_grad()

    def snapshot(self) -> dict:
        return {k: t.data.copy() for k, t in self.named_tensors().items()}

    def restore(self, snap: dict) -> None:
        for k, t in self.named_tensors().items():
            np.copyto(t.data, snap[k])


def init_model(dims: ModelDims, mode: str, n_answers: int, answer_vocab, seed: int) -> Model:
    """Seeded fresh parameters. Draw order is fixed so runs are repeatable."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}, expected one of {MODES}")
    dims.validate()
    if n_answers < 2:
        raise ConfigError(f"need at least 2 answer classes, got {n_answers}")
    rng = np.random.default_rng(seed)
    model = Model(mode=mode, dims=dims, answer_vocab=tuple(answer_vocab))
    model.left_lstm = init_lstm(rng, dims.emb_dim, dims.hidden_dim)
    model.right_lstm = init_lstm(rng, dims.emb_dim, dims.hidden_dim)
    model.merge_weights = Tensor(
        glorot(rng, dims.merge_dim, 2 * dims.hidden_dim), requires_grad=True
    )
    if mode == "full":
        model.attention = init_attention(rng, dims.channels, dims.merge_dim, dims.attn_dim)
    model.out_weights = Tensor(glorot(rng, n_answers, dims.merge_dim), requires_grad=True)
    return model


def sentence_vector(model: Model, left_tokens, right_tokens, table: EmbeddingTable) -> Tensor:
    """Encode both fragments and merge them; the text half of the forward
    pass, shared bit-for-bit by every mode."""
    left_vecs = embed_lookup(left_tokens, table)
    u_left = encode_fragment(left_vecs, model.left_lstm)
    if model.mode == "left_only":
        u_right = Tensor(np.zeros(model.dims.hidden_dim))
    else:
        right_vecs = embed_lookup(right_tokens, table)
        u_right = encode_fragment(
            right_vecs, model.right_lstm, reverse=model.dims.right_reverse
        )
    return merge(u_left, u_right, model.merge_weights)


def forward(model: Model, sample, table: EmbeddingTable, pooled_features=None):
    """Logits over the answer vocabulary for one record.

    Returns (logits, attention_weights); the weights are None outside full
    mode. ``pooled_features`` is the R x C region matrix and is only touched
    in full mode.
    """
    u = sentence_vector(model, sample.left_tokens, sample.right_tokens, table)
    attn = None
    if model.mode == "full":
        if pooled_features is None:
            raise ConfigError("full mode needs region features")
        f_v = project_regions(pooled_features, model.attention.proj)
        attn = attend(f_v, u, model.attention)
        combined = u + weighted_pool(attn, f_v)
    else:
        combined = u
    logits = matmul(model.out_weights, combined)
    return logits, attn


def predict_blank(u: Tensor, v_tilde, out_weights: Tensor) -> Tensor:
    """Distribution over answer classes: softmax(W (u + v)).

    ``v_tilde`` may be None for the text-only configurations, which is the
    same as adding a zero vector.
    """
    combined = u if v_tilde is None else u + v_tilde
    if out_weights.ndim != 2 or out_weights.shape[1] != combined.size:
        raise DimensionError(
            f"answer head {out_weights.shape} does not accept width {combined.size}"
        )
    return softmax(matmul(out_weights, combined))
