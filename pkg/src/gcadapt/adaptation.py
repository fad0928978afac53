"""Unsupervised adaptation: information maximization plus memory replay.

The objective on a single graph pushes each node's prediction toward a
one-hot vector (low per-node entropy) while keeping the batch marginal
spread out (high marginal entropy). Replay re-applies the same objective to
every stored memory graph so the model keeps fitting the past domains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .backbone import (ModelParams, PROB_FLOOR, ema_update, gcn_forward,
                       loss_gradient, sgd_step)
from .errors import NumericError
from .graphs import Graph, normalized_adjacency
from .memory import MemoryPool


@dataclass(frozen=True)
class AdaptConfig:
    inner_epochs: int = 5
    lr_adapt: float = 0.001
    weight_decay: float = 5e-4
    ema_alpha: float = 0.99
    replay_enabled: bool = True
    # Off by default: the replay sum is unweighted, as written. Switch on to
    # average memory terms by pool size instead.
    replay_average: bool = False


def im_loss(probs: torch.Tensor) -> torch.Tensor:
    """Mean per-node entropy plus sum_k pbar_k log pbar_k (pbar = column mean).

    Bounded in [-log C, log C]; the minimum -log C is reached exactly when
    every row is one-hot and the marginal is uniform.
    """
    p = probs.clamp(min=PROB_FLOOR)
    node_entropy = -(p * torch.log(p)).sum(dim=1).mean()
    marginal = p.mean(dim=0).clamp(min=PROB_FLOOR)
    neg_marginal_entropy = (marginal * torch.log(marginal)).sum()
    loss = node_entropy + neg_marginal_entropy
    bound = math.log(probs.shape[1]) + 1e-7
    assert -bound <= float(loss.detach()) <= bound, \
        f"im_loss {float(loss.detach())} escaped [-log C, log C]"
    return loss


def amr_loss(model: ModelParams, current: Graph, pool: MemoryPool,
             average: bool = False) -> torch.Tensor:
    """IM loss on the current graph plus the IM losses of every pool memory."""
    s = normalized_adjacency(current)
    total = im_loss(gcn_forward(s, current.features, model).probs)
    if len(pool) == 0:
        return total
    replay = sum(
        im_loss(gcn_forward(normalized_adjacency(m.adj_weights), m.features, model).probs)
        for m in pool)
    if average:
        replay = replay / len(pool)
    return total + replay


def adapt_domain(params: ModelParams, ema_params: ModelParams, current: Graph,
                 pool: MemoryPool, cfg: AdaptConfig,
                 loss_log: list | None = None) -> tuple[ModelParams, ModelParams]:
    """Run the inner adaptation loop on one arriving domain.

    Each epoch: gradient of the replay-augmented IM loss at the live
    parameters, one SGD step, then an EMA update of the shadow parameters.
    Returns (live, ema). Pure given its inputs.
    """
    live, ema = params.detached(), ema_params.detached()
    replay_pool = pool if cfg.replay_enabled else MemoryPool()
    for epoch in range(cfg.inner_epochs):
        tracked = live.with_grad()
        loss = amr_loss(tracked, current, replay_pool, average=cfg.replay_average)
        if not torch.isfinite(loss.detach()):
            raise NumericError(f"adapt_domain: non-finite loss at epoch {epoch}")
        if loss_log is not None:
            loss_log.append(float(loss.detach()))
        grads = loss_gradient(loss, tracked)
        live = sgd_step(live, grads, cfg.lr_adapt, cfg.weight_decay)
        ema = ema_update(ema, live, cfg.ema_alpha)
    return live, ema
