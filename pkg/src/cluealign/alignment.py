"""Comparison layers producing entity, event, and temporal consistency features.

Each granularity compares two embeddings through a single bias-free linear
projection of [C1, C2, C1-C2, C1*C2]; the temporal comparison additionally
splices in a learnable projection of the normalized time gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


def compare(c1: torch.Tensor, c2: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """W [C1, C2, C1-C2, C1*C2] for equally sized vectors (or batches of them)."""
    if c1.shape != c2.shape:
        raise ValueError(f"compare inputs differ in shape: {tuple(c1.shape)} vs {tuple(c2.shape)}")
    d = c1.shape[-1]
    if weight.shape[-1] != 4 * d:
        raise ValueError(
            f"comparison weight expects last dim {weight.shape[-1]}, inputs give {4 * d}"
        )
    block = torch.cat([c1, c2, c1 - c2, c1 * c2], dim=-1)
    return block @ weight.transpose(-2, -1)


class CompareNet(nn.Module):
    """Bias-free linear comparison of two d_in vectors into d_out."""

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.proj = nn.Linear(4 * d_in, d_out, bias=False)

    @property
    def weight(self) -> torch.Tensor:
        return self.proj.weight

    def forward(self, c1: torch.Tensor, c2: torch.Tensor) -> torch.Tensor:
        return compare(c1, c2, self.proj.weight)


class TemporalCompareNet(nn.Module):
    """Comparison of retrieval and text embeddings with the gap feature spliced in.

    The gap projection is a (d_t x 1) learnable matrix applied to the scalar
    normalized gap; its output joins the four comparison blocks before the
    final projection.
    """

    def __init__(self, d_in: int, d_out: int, d_t: int = 1):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.d_t = d_t
        self.gap_proj = nn.Linear(1, d_t, bias=False)
        self.proj = nn.Linear(4 * d_in + d_t, d_out, bias=False)

    @property
    def gap_weight(self) -> torch.Tensor:
        return self.gap_proj.weight

    @property
    def weight(self) -> torch.Tensor:
        return self.proj.weight

    def forward(self, retrieved: torch.Tensor, text: torch.Tensor, gap: torch.Tensor):
        """Returns (temporal consistency feature, gap feature)."""
        if retrieved.shape != text.shape:
            raise ValueError(
                f"temporal compare inputs differ in shape: "
                f"{tuple(retrieved.shape)} vs {tuple(text.shape)}"
            )
        gap_col = gap.reshape(*retrieved.shape[:-1], 1).to(retrieved.dtype)
        gap_feature = self.gap_proj(gap_col)
        block = torch.cat(
            [retrieved, text, retrieved - text, retrieved * text, gap_feature], dim=-1
        )
        return block @ self.proj.weight.transpose(-2, -1), gap_feature


@dataclass
class AlignmentFeatures:
    """Consistency vectors for the three granularities plus the gap feature."""

    entity: torch.Tensor
    event: torch.Tensor
    temporal: torch.Tensor
    gap_feature: torch.Tensor


class AlignmentModule(nn.Module):
    """Applies the three granularity comparisons to a batch of features.

    Entity and event comparisons use separate projections by default; the
    ``share_compare`` flag reuses one projection for both (ablation support).
    """

    def __init__(self, d_sem: int, d_out: int = 256, d_t: int = 1, share_compare: bool = False):
        super().__init__()
        self.d_sem = d_sem
        self.d_out = d_out
        self.d_t = d_t
        self.share_compare = share_compare
        self.entity_compare = CompareNet(d_sem, d_out)
        self.event_compare = self.entity_compare if share_compare else CompareNet(d_sem, d_out)
        self.temporal_compare = TemporalCompareNet(d_sem, d_out, d_t=d_t)

    def align_entity(self, entities_text: torch.Tensor, entities_visual: torch.Tensor):
        return self.entity_compare(entities_text, entities_visual)

    def align_event(self, event: torch.Tensor, text_semantic: torch.Tensor):
        return self.event_compare(event, text_semantic)

    def align_temporal(self, retrieved: torch.Tensor, text_semantic: torch.Tensor, gap: torch.Tensor):
        return self.temporal_compare(retrieved, text_semantic, gap)

    def forward(
        self,
        entities_text: torch.Tensor,
        entities_visual: torch.Tensor,
        event: torch.Tensor,
        text_semantic: torch.Tensor,
        retrieved: torch.Tensor,
        gap: torch.Tensor,
    ) -> AlignmentFeatures:
        entity = self.align_entity(entities_text, entities_visual)
        event_feature = self.align_event(event, text_semantic)
        temporal, gap_feature = self.align_temporal(retrieved, text_semantic, gap)
        return AlignmentFeatures(
            entity=entity, event=event_feature, temporal=temporal, gap_feature=gap_feature
        )
