"""Spatial attention over pooled per-region video features.

Raw region features (R x C) are first projected row-wise into the sentence
vector's space, because the predictor sums the sentence vector and the
attended visual vector and the two must share a width. Attention then scores
each projected region against the sentence vector, normalizes the scores
with a softmax, and pools the regions by those weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, broadcast_row_add, matmul, softmax

from .text import glorot


@dataclass
class AttentionParams:
    """Trainable tensors of the visual pathway."""

    proj: Tensor  # (merge_dim, channels): region projection into u-space
    region: Tensor  # (attn_dim, merge_dim): per-region transform
    text: Tensor  # (attn_dim, merge_dim): sentence-vector transform
    score: Tensor  # (1, attn_dim): scalar score per region

    @property
    def attn_dim(self) -> int:
        return self.region.shape[0]

    def tensors(self):
        return {
            "proj": self.proj,
            "region": self.region,
            "text": self.text,
            "score": self.score,
        }


def init_attention(
    rng: np.random.Generator, channels: int, merge_dim: int, attn_dim: int
) -> AttentionParams:
    return AttentionParams(
        proj=Tensor(glorot(rng, merge_dim, channels), requires_grad=True),
        region=Tensor(glorot(rng, attn_dim, merge_dim), requires_grad=True),
        text=Tensor(glorot(rng, attn_dim, merge_dim), requires_grad=True),
        score=Tensor(glorot(rng, 1, attn_dim), requires_grad=True),
    )


def project_regions(raw, proj: Tensor) -> Tensor:
    """tanh(proj @ row) for every region row; (R, C) -> (R, merge_dim)."""
    raw = raw if isinstance(raw, Tensor) else Tensor(raw)
    if raw.ndim != 2 or proj.ndim != 2 or raw.shape[1] != proj.shape[1]:
        raise DimensionError(
            f"project_regions: features {raw.shape} do not match "
            f"projection {proj.shape}"
        )
    return matmul(raw, proj.transpose()).tanh()


def attend(f_v: Tensor, u: Tensor, p: AttentionParams) -> Tensor:
    """Softmax attention weights over regions, conditioned on the sentence
    vector: each region row and u are mapped into the attention space,
    summed row-broadcast, squashed, and scored."""
    per_region = matmul(f_v, p.region.transpose())  # (R, attn_dim)
    from_text = matmul(p.text, u)  # (attn_dim,)
    mixed = broadcast_row_add(per_region, from_text).tanh()
    scores = matmul(mixed, p.score.reshape((p.attn_dim,)))  # (R,)
    return softmax(scores)


def weighted_pool(weights: Tensor, f_v: Tensor) -> Tensor:
    """Attention-weighted sum of region rows: (R,) x (R, d) -> (d,)."""
    if weights.ndim != 1 or f_v.ndim != 2 or weights.size != f_v.shape[0]:
        raise DimensionError(
            f"weighted_pool: {weights.shape} weights do not match "
            f"{f_v.shape} regions"
        )
    return matmul(weights, f_v)
