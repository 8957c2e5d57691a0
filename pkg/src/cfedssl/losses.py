"""Training objectives: contrastive loss, cross-entropy, and the baseline
objectives (FixMatch, UDA, representation consistency, FedProx proximal term).

The contrastive loss for an anchor a_i is

    -log( exp(sim(z_ai, z_bi)/t) / sum_k [exp(sim(z_ai, z_ak)/t)
                                          + exp(sim(z_ai, z_bk)/t)] )

with cosine similarity inside the exponent. Read literally, the a-sum
includes the k=i self-similarity term; by default it is excluded (the
SimCLR convention) and `include_self_term` switches to the literal form.
All softmax-style sums run through logsumexp with max subtraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from .errors import ConfigError
from .model import ParameterSet

LOG_EPS = math.log(1e-12)


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.5
    include_self_term: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass(frozen=True)
class LatentBatch:
    """Latents of the weak views (z_a) and strong views (z_b), row-aligned."""
    z_a: torch.Tensor
    z_b: torch.Tensor

    def __post_init__(self):
        if self.z_a.shape != self.z_b.shape or self.z_a.shape[0] < 1:
            raise ConfigError("latent batches must be non-empty and row-aligned")

    @property
    def batch_size(self) -> int:
        return self.z_a.shape[0]


def _check_nonzero_rows(z: torch.Tensor) -> None:
    if bool((z.detach().norm(dim=-1) == 0).any()):
        raise ConfigError("cosine similarity is undefined for zero vectors")


def cosine_sim(u: torch.Tensor | np.ndarray,
               v: torch.Tensor | np.ndarray) -> torch.Tensor:
    u = torch.as_tensor(u, dtype=torch.get_default_dtype())
    v = torch.as_tensor(v, dtype=torch.get_default_dtype())
    _check_nonzero_rows(u)
    _check_nonzero_rows(v)
    return (u * v).sum(-1) / (u.norm(dim=-1) * v.norm(dim=-1))


def _scaled_sim_matrix(batch: LatentBatch, cfg: ContrastiveConfig) -> torch.Tensor:
    """(2B x 2B) cosine similarities over [z_a; z_b], divided by temperature."""
    z = torch.cat([batch.z_a, batch.z_b], dim=0)
    _check_nonzero_rows(z)
    z = z / z.norm(dim=1, keepdim=True)
    return (z @ z.T) / cfg.temperature


def _anchor_losses(batch: LatentBatch, cfg: ContrastiveConfig) -> torch.Tensor:
    """Per-anchor losses for all 2B anchors (a_1..a_B then b_1..b_B)."""
    sim = _scaled_sim_matrix(batch, cfg)
    n2 = sim.shape[0]
    if not cfg.include_self_term:
        sim = sim.masked_fill(torch.eye(n2, dtype=torch.bool), float("-inf"))
    log_denom = torch.logsumexp(sim, dim=1)
    b = batch.batch_size
    partner = torch.cat([torch.arange(b, 2 * b), torch.arange(0, b)])
    pos = sim[torch.arange(n2), partner]
    return log_denom - pos


class NTXentValue(NamedTuple):
    total: torch.Tensor   # the raw symmetric sum over all 2B anchor terms
    mean: torch.Tensor    # total / 2B; what optimizers should minimize


def ntxent_pair(i: int, batch: LatentBatch, cfg: ContrastiveConfig) -> torch.Tensor:
    """Loss term for anchor a_i against its positive b_i (1-based i)."""
    if not 1 <= i <= batch.batch_size:
        raise ConfigError(f"pair index {i} outside batch of {batch.batch_size}")
    return _anchor_losses(batch, cfg)[i - 1]


def ntxent_batch(batch: LatentBatch, cfg: ContrastiveConfig) -> NTXentValue:
    """Symmetric contrastive loss over the batch, both anchor orderings."""
    losses = _anchor_losses(batch, cfg)
    total = losses.sum()
    return NTXentValue(total, total / losses.shape[0])


def cross_entropy(logits: torch.Tensor, labels_onehot: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood against one-hot labels.

    Probabilities are clamped below at 1e-12 before the log.
    """
    if logits.shape != labels_onehot.shape:
        raise ConfigError(
            f"logits {tuple(logits.shape)} vs labels {tuple(labels_onehot.shape)}")
    logp = torch.log_softmax(logits, dim=-1).clamp_min(LOG_EPS)
    return -(labels_onehot * logp).sum(dim=-1).mean()


def one_hot(labels: torch.Tensor | np.ndarray, num_classes: int) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    return torch.nn.functional.one_hot(labels, num_classes).to(torch.get_default_dtype())


def fixmatch_loss(weak_logits: torch.Tensor, strong_logits: torch.Tensor,
                  threshold: float, sharpen_temperature: float = 1.0) -> torch.Tensor:
    """Pseudo-label cross-entropy on confident weak views.

    Hard labels come from the weak predictions (sharpened before the
    confidence check); only samples whose weak confidence reaches the
    threshold contribute. Returns 0 when nothing passes.
    """
    with torch.no_grad():
        probs = torch.softmax(weak_logits / sharpen_temperature, dim=-1)
        confidence, pseudo = probs.max(dim=-1)
        mask = confidence >= threshold
    if not bool(mask.any()):
        return strong_logits.sum() * 0.0
    logp = torch.log_softmax(strong_logits[mask], dim=-1).clamp_min(LOG_EPS)
    return -logp[torch.arange(int(mask.sum())), pseudo[mask]].mean()


def uda_consistency(weak_logits: torch.Tensor, strong_logits: torch.Tensor,
                    temperature: float = 0.4) -> torch.Tensor:
    """KL(sharpened weak || strong), weak side stop-gradient, batch mean."""
    logp = torch.log_softmax(weak_logits.detach() / temperature, dim=-1)
    p = logp.exp()
    logq = torch.log_softmax(strong_logits, dim=-1)
    return (torch.special.xlogy(p, p) - p * logq).sum(dim=-1).mean()


def cr_consistency(repr_a: torch.Tensor, repr_b: torch.Tensor,
                   eps: float = 0.0) -> torch.Tensor:
    """MSE plus (1 - mean cosine similarity) between paired representations.

    Zero vectors are an error by default; training loops over ReLU
    representations pass a small eps to bound the norms instead.
    """
    mse = torch.mean((repr_a - repr_b) ** 2)
    if eps > 0:
        cos = (repr_a * repr_b).sum(-1) / (
            repr_a.norm(dim=-1).clamp_min(eps) *
            repr_b.norm(dim=-1).clamp_min(eps))
    else:
        cos = cosine_sim(repr_a, repr_b)
    return mse + 1.0 - cos.mean()


def fedprox_term(local: ParameterSet, global_: ParameterSet, mu: float) -> float:
    """(mu / 2) * squared L2 distance between two parameter sets."""
    if not local.shape_congruent(global_):
        raise ConfigError("fedprox_term requires shape-congruent parameter sets")
    sq = sum(float(np.sum((local.data[k] - global_.data[k]) ** 2))
             for k in local.data)
    return 0.5 * mu * sq


def fedprox_penalty(parameters, reference: list[torch.Tensor],
                    mu: float) -> torch.Tensor:
    """Differentiable proximal term for a live module's parameters."""
    acc = None
    for p, ref in zip(parameters, reference):
        term = torch.sum((p - ref) ** 2)
        acc = term if acc is None else acc + term
    return 0.5 * mu * acc
