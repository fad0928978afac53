"""Two-layer GCN classifier: forward pass, losses, gradients, updates.

No bias terms anywhere (the gradient-matching distance downstream is defined
on weight matrices only). All tensors are float64; softmax subtracts the row
max and probabilities are clamped to >= 1e-12 before any log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ContractError, NumericError

PROB_FLOOR = 1e-12


def to_tensor(x) -> torch.Tensor:
    """float64 tensor from array-like; copies numpy inputs (they may be frozen)."""
    if isinstance(x, torch.Tensor):
        return x.to(torch.float64)
    return torch.tensor(np.asarray(x, dtype=np.float64), dtype=torch.float64)


@dataclass(frozen=True)
class ModelParams:
    """Classifier weights: W1 (d x h'), W2 (h' x C)."""

    w1: torch.Tensor
    w2: torch.Tensor

    def with_grad(self) -> "ModelParams":
        """Fresh leaf copies that require grad (for building a loss)."""
        return ModelParams(self.w1.detach().clone().requires_grad_(True),
                           self.w2.detach().clone().requires_grad_(True))

    def detached(self) -> "ModelParams":
        return ModelParams(self.w1.detach().clone(), self.w2.detach().clone())

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]


@dataclass(frozen=True)
class ParamGrads:
    """Gradients with the same shapes as ModelParams."""

    w1: torch.Tensor
    w2: torch.Tensor


@dataclass(frozen=True)
class ForwardOutput:
    hidden: torch.Tensor   # (N, h'), ReLU output, the pre-head representations
    probs: torch.Tensor    # (N, C), rows sum to 1 up to the clamp epsilon


def init_params(d: int, h_prime: int, c: int, rng: np.random.Generator) -> ModelParams:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] init, deterministic in rng."""
    s1 = 1.0 / np.sqrt(d)
    s2 = 1.0 / np.sqrt(h_prime)
    w1 = rng.uniform(-s1, s1, size=(d, h_prime))
    w2 = rng.uniform(-s2, s2, size=(h_prime, c))
    return ModelParams(torch.from_numpy(w1), torch.from_numpy(w2))


def row_softmax(logits: torch.Tensor) -> torch.Tensor:
    """Stable row softmax with the probability floor applied."""
    z = logits - logits.max(dim=1, keepdim=True).values
    e = torch.exp(z)
    p = e / e.sum(dim=1, keepdim=True)
    return p.clamp(min=PROB_FLOOR)


def gcn_forward(adj_norm: torch.Tensor, features, params: ModelParams) -> ForwardOutput:
    """hidden = ReLU(S X W1); probs = row_softmax(S hidden W2)."""
    x = to_tensor(features)
    if adj_norm.shape[0] != adj_norm.shape[1] or adj_norm.shape[1] != x.shape[0]:
        raise ContractError(f"gcn_forward: adjacency {tuple(adj_norm.shape)} does not "
                            f"match features {tuple(x.shape)}")
    if x.shape[1] != params.w1.shape[0]:
        raise ContractError(f"gcn_forward: feature dim {x.shape[1]} does not match "
                            f"W1 rows {params.w1.shape[0]}")
    hidden = torch.relu(adj_norm @ (x @ params.w1))
    probs = row_softmax(adj_norm @ (hidden @ params.w2))
    return ForwardOutput(hidden=hidden, probs=probs)


def supervised_loss(probs: torch.Tensor, labels, mask) -> torch.Tensor:
    """Mean cross-entropy -log p[v, y_v] over the masked nodes."""
    labels = torch.tensor(np.asarray(labels, dtype=np.int64))
    mask = torch.tensor(np.asarray(mask, dtype=bool))
    if not mask.any():
        raise ContractError("supervised_loss: degenerate-mask: no labeled node selected")
    picked = probs[mask, labels[mask]].clamp(min=PROB_FLOOR)
    return -torch.log(picked).mean()


def loss_gradient(loss: torch.Tensor, params: ModelParams,
                  create_graph: bool = False) -> ParamGrads:
    """Exact gradients of a scalar loss built on params.with_grad() tensors.

    ReLU's subgradient at 0 is 0; top-k indices and noise draws upstream are
    constants of the forward pass, so gradients flow through values only.
    """
    if not torch.isfinite(loss.detach()):
        raise NumericError(f"loss_gradient: non-finite loss {float(loss.detach())}")
    g1, g2 = torch.autograd.grad(loss, (params.w1, params.w2),
                                 create_graph=create_graph, allow_unused=True)
    zeros = lambda w: torch.zeros_like(w.detach())
    return ParamGrads(w1=zeros(params.w1) if g1 is None else g1,
                      w2=zeros(params.w2) if g2 is None else g2)


def sgd_step(params: ModelParams, grads: ParamGrads, lr: float,
             weight_decay: float = 0.0) -> ModelParams:
    """theta <- theta - lr * (g + weight_decay * theta); returns new params."""
    with torch.no_grad():
        w1 = params.w1 - lr * (grads.w1 + weight_decay * params.w1)
        w2 = params.w2 - lr * (grads.w2 + weight_decay * params.w2)
    return ModelParams(w1.detach(), w2.detach())


def ema_update(ema: ModelParams, current: ModelParams, alpha: float) -> ModelParams:
    """alpha * ema + (1 - alpha) * current, elementwise."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"ema_update: alpha {alpha} outside [0, 1]")
    with torch.no_grad():
        w1 = alpha * ema.w1 + (1.0 - alpha) * current.w1
        w2 = alpha * ema.w2 + (1.0 - alpha) * current.w2
    return ModelParams(w1.detach(), w2.detach())
