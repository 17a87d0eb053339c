"""Judgment heads, probability-gated fusion, final classifiers, and losses."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence

import torch
from torch import nn

from .alignment import AlignmentModule

BRANCHES = ("entity", "event", "temporal", "manipulation", "visual")

PROB_EPS = 1e-7


class HeadMLP(nn.Module):
    """in -> hidden (BatchNorm + ReLU) -> rep -> out MLP used by every head.

    The rep layer's activations are the penultimate representation exposed for
    analysis; it is 16-dimensional in the production configuration.
    """

    def __init__(self, in_dim: int, out_dim: int = 1, hidden_dim: int = 256, rep_dim: int = 16):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = nn.Linear(in_dim, hidden_dim)
        self.norm = nn.BatchNorm1d(hidden_dim)
        self.act = nn.ReLU()
        self.rep = nn.Linear(hidden_dim, rep_dim)
        self.out = nn.Linear(rep_dim, out_dim)

    def forward(self, x: torch.Tensor):
        """Returns (logits, rep) with shapes (B, out_dim) and (B, rep_dim)."""
        squeeze = x.dim() == 1
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"head expects input width {self.in_dim}, got {x.shape[-1]}")
        hidden = self.act(self.norm(self.hidden(x)))
        rep = self.rep(hidden)
        logits = self.out(rep)
        if squeeze:
            return logits.squeeze(0), rep.squeeze(0)
        return logits, rep


def judge_branch(feature: torch.Tensor, head: HeadMLP):
    """Branch fake probability and penultimate representation."""
    logits, rep = head(feature)
    phi = torch.sigmoid(logits.squeeze(-1)).clamp(PROB_EPS, 1.0 - PROB_EPS)
    return phi, rep


def binary_cross_entropy(prob: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Elementwise BCE with probabilities clamped away from 0 and 1."""
    prob = torch.as_tensor(prob).clamp(PROB_EPS, 1.0 - PROB_EPS)
    target = torch.as_tensor(target, dtype=prob.dtype, device=prob.device)
    return -(target * torch.log(prob) + (1.0 - target) * torch.log(1.0 - prob))


def aux_loss(phi: torch.Tensor, y_b) -> torch.Tensor:
    """Per-branch binary judgment loss (mean over the batch when batched)."""
    return binary_cross_entropy(phi, y_b).mean()


def mean_aux(aux_losses: Sequence[torch.Tensor]) -> torch.Tensor:
    """Average over the active branches; no active branches drops the term."""
    if len(aux_losses) == 0:
        return torch.tensor(0.0)
    total = aux_losses[0]
    for term in aux_losses[1:]:
        total = total + term
    return total / len(aux_losses)


def detection_loss(y_b_hat, y_b, aux_losses: Sequence[torch.Tensor]) -> torch.Tensor:
    """Detection BCE plus the mean of the per-branch judgment losses."""
    return binary_cross_entropy(y_b_hat, y_b).mean() + mean_aux(aux_losses)


def attribution_loss(y_hat: torch.Tensor, y, aux_losses: Sequence[torch.Tensor]) -> torch.Tensor:
    """One-hot 6-class cross-entropy plus the mean judgment loss."""
    probs = y_hat.clamp(PROB_EPS, 1.0)
    if probs.dim() == 1:
        probs = probs.unsqueeze(0)
    target = torch.as_tensor(y, dtype=torch.long, device=probs.device).reshape(-1)
    picked = probs[torch.arange(probs.shape[0]), target]
    return (-torch.log(picked)).mean() + mean_aux(aux_losses)


def fuse(
    text_joint: torch.Tensor,
    gated_blocks: Sequence[torch.Tensor],
) -> torch.Tensor:
    """Concatenate the global text embedding with the five gated branch blocks."""
    return torch.cat([text_joint, *gated_blocks], dim=-1)


@dataclass
class ModelOutput:
    """Per-batch forward results; masked branches report phi as None."""

    phi: Dict[str, Optional[torch.Tensor]]
    branch_reps: Dict[str, Optional[torch.Tensor]]
    fused: torch.Tensor
    detect_prob: Optional[torch.Tensor] = None
    detect_rep: Optional[torch.Tensor] = None
    attr_probs: Optional[torch.Tensor] = None
    attr_rep: Optional[torch.Tensor] = None


@dataclass
class LossReport:
    task: str
    total: float
    main: float
    aux: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"task": self.task, "total": self.total, "main": self.main, "aux": dict(self.aux)}


@dataclass
class ModelDims:
    d_joint: int
    d_sem: int
    d_manip: int
    d_out: int = 256
    d_t: int = 1
    hidden_dim: int = 256
    rep_dim: int = 16

    @property
    def fused_dim(self) -> int:
        return 2 * self.d_joint + 3 * self.d_out + self.d_manip

    def to_dict(self) -> dict:
        return {
            "d_joint": self.d_joint,
            "d_sem": self.d_sem,
            "d_manip": self.d_manip,
            "d_out": self.d_out,
            "d_t": self.d_t,
            "hidden_dim": self.hidden_dim,
            "rep_dim": self.rep_dim,
        }


class ClueFusionModel(nn.Module):
    """Alignment, five judgment heads, gated fusion, and both task heads.

    Branch probabilities gate their branch features inside the fused vector;
    gradients flow through the gates unless ``gate_stop_gradient`` is set.
    """

    def __init__(
        self,
        dims: ModelDims,
        share_compare: bool = False,
        gate_stop_gradient: bool = False,
    ):
        super().__init__()
        self.dims = dims
        self.share_compare = share_compare
        self.gate_stop_gradient = gate_stop_gradient
        self.alignment = AlignmentModule(
            d_sem=dims.d_sem, d_out=dims.d_out, d_t=dims.d_t, share_compare=share_compare
        )
        head = lambda in_dim, out_dim=1: HeadMLP(
            in_dim, out_dim=out_dim, hidden_dim=dims.hidden_dim, rep_dim=dims.rep_dim
        )
        self.branch_heads = nn.ModuleDict(
            {
                "entity": head(dims.d_out),
                "event": head(dims.d_out),
                "temporal": head(dims.d_out),
                "manipulation": head(dims.d_manip),
                "visual": head(dims.d_joint),
            }
        )
        self.detect_head = head(dims.fused_dim, 1)
        self.attribute_head = head(dims.fused_dim, 6)

    def forward(
        self,
        batch: Dict[str, torch.Tensor],
        task: str = "detect",
        branch_mask: Iterable[str] = (),
    ) -> ModelOutput:
        """Run alignment, judgment, fusion, and the requested task head(s).

        ``batch`` maps feature names (text_joint, image_joint, text_semantic,
        entities_text, entities_visual, event, retrieved, manipulation, gap)
        to tensors of shape (B, d) (gap: (B,)). Masked branches contribute a
        zero block to fusion and are skipped entirely.
        """
        mask = set(branch_mask)
        unknown = mask.difference(BRANCHES)
        if unknown:
            raise ValueError(f"unknown branches {sorted(unknown)}; valid: {list(BRANCHES)}")
        if task not in ("detect", "attribute", "both"):
            raise ValueError(f"task must be detect, attribute or both, got {task!r}")

        aligned = self.alignment(
            entities_text=batch["entities_text"],
            entities_visual=batch["entities_visual"],
            event=batch["event"],
            text_semantic=batch["text_semantic"],
            retrieved=batch["retrieved"],
            gap=batch["gap"],
        )
        branch_features = {
            "entity": aligned.entity,
            "event": aligned.event,
            "temporal": aligned.temporal,
            "manipulation": batch["manipulation"],
            "visual": batch["image_joint"],
        }

        phi: Dict[str, Optional[torch.Tensor]] = {}
        reps: Dict[str, Optional[torch.Tensor]] = {}
        gated = []
        for name in BRANCHES:
            feature = branch_features[name]
            if name in mask:
                phi[name] = None
                reps[name] = None
                gated.append(torch.zeros_like(feature))
                continue
            branch_phi, branch_rep = judge_branch(feature, self.branch_heads[name])
            phi[name] = branch_phi
            reps[name] = branch_rep
            gate = branch_phi.detach() if self.gate_stop_gradient else branch_phi
            gated.append(feature * gate.unsqueeze(-1))

        fused = fuse(batch["text_joint"], gated)
        output = ModelOutput(phi=phi, branch_reps=reps, fused=fused)
        if task in ("detect", "both"):
            logits, rep = self.detect_head(fused)
            output.detect_prob = torch.sigmoid(logits.squeeze(-1)).clamp(
                PROB_EPS, 1.0 - PROB_EPS
            )
            output.detect_rep = rep
        if task in ("attribute", "both"):
            logits, rep = self.attribute_head(fused)
            output.attr_probs = torch.softmax(logits, dim=-1)
            output.attr_rep = rep
        return output

    def compute_loss(
        self,
        output: ModelOutput,
        y_binary: torch.Tensor,
        y_attribution: Optional[torch.Tensor] = None,
        task: str = "detect",
    ):
        """Composite loss for the batch plus a float LossReport for logging."""
        aux_terms = []
        aux_values = {}
        for name in BRANCHES:
            branch_phi = output.phi[name]
            if branch_phi is None:
                continue
            term = aux_loss(branch_phi, y_binary)
            aux_terms.append(term)
            aux_values[name] = float(term.detach())
        if task == "detect":
            main = binary_cross_entropy(output.detect_prob, y_binary).mean()
        elif task == "attribute":
            if y_attribution is None:
                raise ValueError("attribution task requires attribution labels")
            main = attribution_loss(output.attr_probs, y_attribution, [])
        else:
            raise ValueError(f"task must be detect or attribute, got {task!r}")
        total = main + mean_aux(aux_terms)
        report = LossReport(
            task=task, total=float(total.detach()), main=float(main.detach()), aux=aux_values
        )
        return total, report
