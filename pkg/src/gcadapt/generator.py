"""Variational memory-graph generator and its three training losses.

Pipeline for one domain graph: a two-layer GCN encoder emits per-node
Gaussian posteriors [mu; log_sigma]; a trainable projection scores nodes and
the top K survive (scores gate mu, so the projection receives gradient);
latents are reparameterized with Gaussian noise; a symmetric pairwise MLP
scores edges; edge weights are realized with the binary-concrete (logistic
noise) relaxation. The resulting weighted K-node graph is trained so that

  * its adaptation-loss gradients match the original graph's (column-cosine
    distance, true-graph side constant),
  * node posteriors stay near N(0, I) and edge means near Bernoulli(q),
  * its summed pre-head representation matches the original graph's.

Top-k indices and all noise draws are constants of the forward pass;
gradients flow through values only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from .adaptation import im_loss
from .backbone import ModelParams, ParamGrads, gcn_forward, loss_gradient, to_tensor
from .errors import ContractError, NumericError
from .graphs import Graph, normalized_adjacency
from .memory import MemoryGraph, MemoryPool  # noqa: F401  (pool re-exported here)

logger = logging.getLogger(__name__)

LOG_SIGMA_CLIP = 10.0
NORM_EPS = 1e-12


@dataclass(frozen=True)
class GenConfig:
    k_ratio: float = 0.05     # memory nodes as a fraction of N
    tau: float = 0.5          # edge relaxation temperature
    q_prior: float = 0.05     # Bernoulli prior edge probability
    lambda1: float = 1.0      # weight of the KL regularizer
    lambda2: float = 1.0      # weight of the generation loss
    outer_epochs: int = 50
    lr_gen: float = 0.01
    seed: int = 0
    enc_hidden: int = 16      # encoder GCN hidden width
    edge_hidden: int = 16     # edge-scorer MLP hidden width

    def validate(self) -> None:
        if not 0.0 < self.k_ratio <= 1.0:
            raise ContractError(f"GenConfig: k_ratio {self.k_ratio} outside (0, 1]")
        if self.tau <= 0:
            raise ContractError(f"GenConfig: tau {self.tau} must be > 0")
        if not 0.0 < self.q_prior < 1.0:
            raise ContractError(f"GenConfig: q_prior {self.q_prior} outside (0, 1)")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ContractError("GenConfig: loss weights must be >= 0")
        if self.outer_epochs < 0 or self.lr_gen <= 0:
            raise ContractError("GenConfig: outer_epochs >= 0 and lr_gen > 0 required")
        if self.enc_hidden < 1 or self.edge_hidden < 1:
            raise ContractError("GenConfig: hidden widths must be >= 1")


@dataclass(frozen=True)
class GeneratorParams:
    """Encoder weights, top-k projection, and edge-scorer weights."""

    enc_w1: torch.Tensor    # (d, h_g)
    enc_w2: torch.Tensor    # (h_g, 2d)
    proj: torch.Tensor      # (2d,)
    edge_w1: torch.Tensor   # (2d, h_e)
    edge_w2: torch.Tensor   # (h_e,)

    def tensors(self) -> tuple[torch.Tensor, ...]:
        return (self.enc_w1, self.enc_w2, self.proj, self.edge_w1, self.edge_w2)

    def with_grad(self) -> "GeneratorParams":
        return GeneratorParams(*(t.detach().clone().requires_grad_(True)
                                 for t in self.tensors()))

    def detached(self) -> "GeneratorParams":
        return GeneratorParams(*(t.detach().clone() for t in self.tensors()))


@dataclass(frozen=True)
class LatentSelection:
    """Top-K node posteriors: gated means, raw log-sigmas, scores, indices."""

    indices: tuple[int, ...]
    scores: torch.Tensor        # (K,), sigmoid outputs, non-increasing
    mu: torch.Tensor            # (K, d), gated by scores
    log_sigma: torch.Tensor     # (K, d), un-gated

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise ContractError("LatentSelection: indices must be distinct")
        s = self.scores.detach()
        if s.numel() > 1 and (s[1:] - s[:-1]).max() > 1e-12:
            raise ContractError("LatentSelection: scores must be non-increasing")


def memory_size(k_ratio: float, num_nodes: int) -> int:
    """K = max(1, round(k_ratio * N)), clamped to N."""
    return min(max(1, round(k_ratio * num_nodes)), num_nodes)


def init_generator(d: int, cfg: GenConfig, rng: np.random.Generator) -> GeneratorParams:
    """Fresh params, each matrix uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    def u(fan_in, *shape):
        s = 1.0 / math.sqrt(fan_in)
        return torch.from_numpy(rng.uniform(-s, s, size=shape))

    return GeneratorParams(
        enc_w1=u(d, d, cfg.enc_hidden),
        enc_w2=u(cfg.enc_hidden, cfg.enc_hidden, 2 * d),
        proj=u(2 * d, 2 * d),
        edge_w1=u(2 * d, 2 * d, cfg.edge_hidden),
        edge_w2=u(cfg.edge_hidden, cfg.edge_hidden),
    )


def encode_distributions(g: Graph, phi: GeneratorParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Two-layer GCN posterior encoder; returns (mu, log_sigma), each (N, d)."""
    x = to_tensor(g.features)
    d = x.shape[1]
    if phi.enc_w2.shape[1] != 2 * d:
        raise ContractError(f"encode_distributions: encoder output width "
                            f"{phi.enc_w2.shape[1]} != 2 * d = {2 * d}")
    s = normalized_adjacency(g)
    h = torch.relu(s @ (x @ phi.enc_w1))
    out = s @ (h @ phi.enc_w2)
    mu = out[:, :d]
    log_sigma = out[:, d:].clamp(-LOG_SIGMA_CLIP, LOG_SIGMA_CLIP)
    return mu, log_sigma


def topk_select(mu_full: torch.Tensor, log_sigma_full: torch.Tensor,
                proj: torch.Tensor, k: int) -> LatentSelection:
    """Keep the K highest-scoring nodes (ties break toward the lower index).

    score_v = sigmoid([mu_v; log_sigma_v] . proj / ||proj||). Selected mu rows
    are multiplied by their score so the projection is trained; log_sigma rows
    pass through un-gated. Selection indices are constants for autograd.
    """
    if k < 1:
        raise ContractError(f"topk_select: K must be >= 1, got {k}")
    n = mu_full.shape[0]
    k = min(k, n)
    stacked = torch.cat([mu_full, log_sigma_full], dim=1)
    norm = proj.detach().norm()
    if norm < NORM_EPS:
        logger.warning("topk_select: projection has zero norm, "
                       "using unnormalized scores")
        raw = stacked @ proj
    else:
        raw = (stacked @ proj) / proj.norm()
    scores = torch.sigmoid(raw)

    order = np.lexsort((np.arange(n), -scores.detach().numpy()))
    idx = order[:k].tolist()
    sel_scores = scores[idx]
    return LatentSelection(indices=tuple(int(i) for i in idx),
                           scores=sel_scores,
                           mu=mu_full[idx] * sel_scores[:, None],
                           log_sigma=log_sigma_full[idx])


def sample_latents(sel: LatentSelection, noise: torch.Tensor) -> torch.Tensor:
    """Reparameterized draw z = mu + exp(log_sigma) * eps; noise is constant."""
    noise = to_tensor(noise)
    if noise.shape != sel.mu.shape:
        raise ContractError(f"sample_latents: noise shape {tuple(noise.shape)} "
                            f"!= {tuple(sel.mu.shape)}")
    return sel.mu + torch.exp(sel.log_sigma) * noise.detach()


def edge_weights(z: torch.Tensor, phi: GeneratorParams) -> torch.Tensor:
    """Symmetric pairwise scores (MLP([z_i; z_j]) + MLP([z_j; z_i])) / 2."""
    k = z.shape[0]
    zi = z.repeat_interleave(k, dim=0)
    zj = z.repeat(k, 1)
    pair = torch.cat([zi, zj], dim=1)
    raw = (torch.relu(pair @ phi.edge_w1) @ phi.edge_w2).reshape(k, k)
    return 0.5 * (raw + raw.T)


def sample_edges(w: torch.Tensor, tau: float, uniform_noise: torch.Tensor) -> torch.Tensor:
    """Binary-concrete edge relaxation, mirrored from the upper triangle.

    For i < j: a_ij = sigmoid((w_ij + logit(delta_ij)) / tau). Only the upper
    triangle of the noise is read, so mirroring it into the lower triangle
    leaves the output unchanged. Diagonal is forced to zero.
    """
    if tau <= 0:
        raise ContractError(f"sample_edges: tau {tau} must be > 0")
    noise = to_tensor(uniform_noise)
    nd = noise.detach()
    if nd.min() <= 0 or nd.max() >= 1:
        raise ContractError("sample_edges: noise entries must lie strictly in (0, 1)")
    logistic = torch.log(nd) - torch.log1p(-nd)
    relaxed = torch.sigmoid((w + logistic) / tau)
    upper = torch.triu(relaxed, diagonal=1)
    return upper + upper.T


def generate_memory(g: Graph, phi: GeneratorParams, cfg: GenConfig,
                    random_state: np.random.Generator) -> MemoryGraph:
    """Compose the full pipeline with fresh noise into a memory graph."""
    k = memory_size(cfg.k_ratio, g.num_nodes)
    d = g.feature_dim
    mu_full, log_sigma_full = encode_distributions(g, phi)
    sel = topk_select(mu_full, log_sigma_full, phi.proj, k)
    eps = torch.from_numpy(random_state.standard_normal((k, d)))
    z = sample_latents(sel, eps)
    w = edge_weights(z, phi)
    delta = torch.from_numpy(np.clip(random_state.random((k, k)), 1e-12, 1.0 - 1e-12))
    adj = sample_edges(w, cfg.tau, delta)
    return MemoryGraph(num_nodes=k, adj_weights=adj, features=z, domain_id=g.domain_id)


def _column_cosine_distance(g_hat: torch.Tensor, g_true: torch.Tensor) -> torch.Tensor:
    """Sum over columns of 1 - cos(ghat_i, g_i) with the zero-norm conventions.

    Column pairs where both norms are < 1e-12 contribute 0; pairs where
    exactly one side is zero contribute 1. Squared norms are clamped before
    the sqrt: sqrt'(0) is infinite and would turn the masked-out branch's
    zero gradient into NaN.
    """
    sq_h = (g_hat * g_hat).sum(dim=0)
    sq_g = (g_true * g_true).sum(dim=0)
    nh = torch.sqrt(sq_h.clamp(min=NORM_EPS ** 2))
    ng = torch.sqrt(sq_g.clamp(min=NORM_EPS ** 2))
    cos = (g_hat * g_true).sum(dim=0) / (nh * ng)
    small_h = sq_h.detach() < NORM_EPS ** 2
    small_g = sq_g.detach() < NORM_EPS ** 2
    contrib = 1.0 - cos
    contrib = torch.where(small_h ^ small_g, torch.ones_like(contrib), contrib)
    contrib = torch.where(small_h & small_g, torch.zeros_like(contrib), contrib)
    return contrib.sum()


def grad_distance(g_hat: ParamGrads, g_true: ParamGrads) -> torch.Tensor:
    """Layer-wise column-cosine gradient distance, summed over weight matrices."""
    return (_column_cosine_distance(g_hat.w1, g_true.w1)
            + _column_cosine_distance(g_hat.w2, g_true.w2))


def mgl_loss(memory: MemoryGraph, g: Graph, theta: ModelParams) -> torch.Tensor:
    """Gradient-matching condensation loss at the fixed adapted parameters.

    The true graph's adaptation-loss gradient is a constant target; the
    memory side keeps its graph so the distance differentiates through the
    memory's adjacency and features (and hence the generator).
    """
    tracked = theta.with_grad()
    out = gcn_forward(normalized_adjacency(g), g.features, tracked)
    target = loss_gradient(im_loss(out.probs), tracked)
    target = ParamGrads(target.w1.detach(), target.w2.detach())

    tracked_m = theta.with_grad()
    out_m = gcn_forward(normalized_adjacency(memory.adj_weights),
                        memory.features, tracked_m)
    g_hat = loss_gradient(im_loss(out_m.probs), tracked_m, create_graph=True)
    return grad_distance(g_hat, target)


def reg_loss(sel: LatentSelection, w: torch.Tensor, q: float) -> torch.Tensor:
    """KL against the N(0, I) node prior and Bernoulli(q) edge prior.

    Gaussian term: 0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1) over the K x d
    selected entries. Bernoulli term: KL(sigmoid(w) || q) summed over ordered
    off-diagonal pairs (each undirected pair counted twice). Both are >= 0.
    """
    if not 0.0 < q < 1.0:
        raise ContractError(f"reg_loss: q {q} outside (0, 1)")
    sigma_sq = torch.exp(2.0 * sel.log_sigma)
    gauss = 0.5 * (sel.mu ** 2 + sigma_sq - 2.0 * sel.log_sigma - 1.0).sum()
    m = torch.sigmoid(w).clamp(1e-6, 1.0 - 1e-6)
    kl = m * torch.log(m / q) + (1.0 - m) * torch.log((1.0 - m) / (1.0 - q))
    off = ~torch.eye(w.shape[0], dtype=torch.bool)
    bern = kl[off].sum() if off.any() else torch.zeros((), dtype=torch.float64)
    assert float(gauss.detach()) >= -1e-9 and float(bern.detach()) >= -1e-9, \
        "reg_loss components must be nonnegative"
    return gauss + bern


def gen_loss(memory: MemoryGraph, g: Graph, theta: ModelParams) -> torch.Tensor:
    """L2 distance between summed pre-head representations of memory and graph.

    The original-graph side is a constant; gradient reaches the generator
    through the memory side only.
    """
    u = gcn_forward(normalized_adjacency(g), g.features, theta).hidden.sum(dim=0)
    u_hat = gcn_forward(normalized_adjacency(memory.adj_weights),
                        memory.features, theta).hidden.sum(dim=0)
    diff = u_hat - u.detach()
    # clamp keeps sqrt' finite if the sums ever coincide exactly
    return torch.sqrt((diff * diff).sum().clamp(min=1e-300))


def generator_objective(g: Graph, theta: ModelParams, phi: GeneratorParams,
                        cfg: GenConfig, eps_noise, delta_noise
                        ) -> tuple[dict[str, torch.Tensor], MemoryGraph]:
    """Full outer objective with the noise draws held fixed.

    Returns ({"total", "mgl", "reg", "gen"}, memory); the training loop feeds
    fresh noise per epoch, tests feed frozen noise for finite differencing.
    """
    k = memory_size(cfg.k_ratio, g.num_nodes)
    mu_full, log_sigma_full = encode_distributions(g, phi)
    sel = topk_select(mu_full, log_sigma_full, phi.proj, k)
    z = sample_latents(sel, to_tensor(eps_noise))
    w = edge_weights(z, phi)
    adj = sample_edges(w, cfg.tau, to_tensor(delta_noise))
    memory = MemoryGraph(num_nodes=k, adj_weights=adj, features=z,
                         domain_id=g.domain_id)
    parts = {
        "mgl": mgl_loss(memory, g, theta),
        "reg": reg_loss(sel, w, cfg.q_prior),
        "gen": gen_loss(memory, g, theta),
    }
    parts["total"] = parts["mgl"] + cfg.lambda1 * parts["reg"] + cfg.lambda2 * parts["gen"]
    return parts, memory


def train_generator(g: Graph, theta_t: ModelParams, cfg: GenConfig,
                    random_state: np.random.Generator
                    ) -> tuple[MemoryGraph, list[dict]]:
    """Fit a fresh generator to one domain and realize its memory graph.

    Plain gradient descent on mgl + lambda1 * reg + lambda2 * gen with fresh
    noise each epoch; theta_t is frozen throughout. Returns the memory from
    the final parameters (one final noise draw) and the per-epoch loss trace.
    """
    cfg.validate()
    d = g.feature_dim
    k = memory_size(cfg.k_ratio, g.num_nodes)
    phi = init_generator(d, cfg, random_state)
    trace: list[dict] = []
    for epoch in range(cfg.outer_epochs):
        eps = random_state.standard_normal((k, d))
        delta = np.clip(random_state.random((k, k)), 1e-12, 1.0 - 1e-12)
        tracked = phi.with_grad()
        parts, _ = generator_objective(g, theta_t, tracked, cfg, eps, delta)
        total = parts["total"]
        if not torch.isfinite(total.detach()):
            raise NumericError(f"train_generator: non-finite objective at epoch {epoch}")
        grads = torch.autograd.grad(total, tracked.tensors(), allow_unused=True)
        phi = GeneratorParams(*(
            (t.detach() if gr is None else t.detach() - cfg.lr_gen * gr.detach())
            for t, gr in zip(tracked.tensors(), grads)))
        trace.append({"epoch": epoch,
                      **{name: float(parts[name].detach())
                         for name in ("total", "mgl", "reg", "gen")}})
    return generate_memory(g, phi, cfg, random_state).detached(), trace
