"""Memory-graph containers: the K-node synthetic replay graphs and their pool."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ContractError


@dataclass(frozen=True)
class MemoryGraph:
    """K-node weighted synthetic graph standing in for one past domain.

    adj_weights is symmetric with entries in [0, 1] and a zero diagonal;
    features are the reparameterized latents. Tensors may carry autograd
    history while the generator is training; stored pool entries are
    detached realizations.
    """

    num_nodes: int
    adj_weights: torch.Tensor   # (K, K) float64
    features: torch.Tensor      # (K, d) float64
    domain_id: str = ""

    def __post_init__(self):
        k = self.num_nodes
        if k < 1:
            raise ContractError("MemoryGraph: num_nodes must be >= 1")
        a = self.adj_weights.detach()
        if a.shape != (k, k) or self.features.shape[0] != k:
            raise ContractError(f"MemoryGraph: inconsistent shapes "
                                f"{tuple(a.shape)} / {tuple(self.features.shape)}")
        if (a - a.T).abs().max() > 1e-12:
            raise ContractError("MemoryGraph: adjacency not symmetric")
        if a.diagonal().abs().max() > 0:
            raise ContractError("MemoryGraph: adjacency diagonal must be zero")
        if a.min() < 0 or a.max() > 1:
            raise ContractError("MemoryGraph: adjacency weights outside [0, 1]")

    def detached(self) -> "MemoryGraph":
        return MemoryGraph(self.num_nodes, self.adj_weights.detach().clone(),
                           self.features.detach().clone(), self.domain_id)

    def to_dict(self) -> dict:
        return {"k": self.num_nodes,
                "adj": self.adj_weights.detach().reshape(-1).tolist(),
                "features": self.features.detach().reshape(-1).tolist(),
                "domain_id": self.domain_id}

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryGraph":
        k = int(d["k"])
        adj = torch.as_tensor(np.asarray(d["adj"], dtype=np.float64)).reshape(k, k)
        feats = torch.as_tensor(np.asarray(d["features"], dtype=np.float64)).reshape(k, -1)
        return cls(num_nodes=k, adj_weights=adj, features=feats,
                   domain_id=d.get("domain_id", ""))


@dataclass(frozen=True)
class MemoryPool:
    """Ordered, append-only pool of memory graphs, one per completed domain."""

    memories: tuple[MemoryGraph, ...] = ()

    def __post_init__(self):
        ids = [m.domain_id for m in self.memories]
        if len(set(ids)) != len(ids):
            raise ContractError("MemoryPool: duplicate domain_id")

    def extended(self, memory: MemoryGraph) -> "MemoryPool":
        return MemoryPool(self.memories + (memory.detached(),))

    def __len__(self) -> int:
        return len(self.memories)

    def __iter__(self):
        return iter(self.memories)
