"""Attributed graphs, validation, adjacency normalization, and synthetic drift.

Graphs are undirected and unweighted on input; each edge is stored once with
the smaller endpoint first. Self-loops never live in the edge list, they are
added only inside :func:`normalized_adjacency`. Everything is dense: the
weighted memory graphs downstream need a dense differentiable adjacency, and
at desk scale dense is simplest for the real graphs too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ContractError


def _frozen_array(a, dtype):
    arr = np.asarray(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Graph:
    """One domain's attributed graph.

    Construction only coerces dtypes; it never rejects bad data. Use
    :func:`validate_graph` to get a violation report.
    """

    num_nodes: int
    edges: np.ndarray          # (E, 2) int64, undirected, one row per pair
    features: np.ndarray       # (N, d) float64
    labels: np.ndarray | None = None  # (N,) int64, -1 = unlabeled
    domain_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "edges",
                           _frozen_array(self.edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, "features",
                           _frozen_array(self.features, np.float64))
        if self.labels is not None:
            object.__setattr__(self, "labels",
                               _frozen_array(self.labels, np.int64))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GraphSequence:
    """Ordered domains sharing a feature dimension and label space."""

    domains: tuple[Graph, ...]
    num_classes: int
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "domains", tuple(self.domains))

    def __len__(self) -> int:
        return len(self.domains)

    def __iter__(self):
        return iter(self.domains)


@dataclass(frozen=True)
class DriftSpec:
    """Parameters of a synthetic drifting SBM sequence.

    Domain t (0-based) uses inter-block probability
    ``clip(p_inter + t * drift_step, 0, 1)`` and block feature means shifted
    by ``t * drift_step`` along one fixed random unit direction. Labels are
    block ids, so ``num_classes == num_blocks``; the feature dimension also
    equals ``num_blocks`` (block-indicator base means).
    """

    num_domains: int = 6
    nodes_per_domain: int = 300
    num_blocks: int = 3
    p_intra: float = 0.10
    p_inter: float = 0.02
    feature_noise: float = 0.5
    drift_step: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.num_domains < 1 or self.nodes_per_domain < 1:
            raise ContractError("synth_drift_sequence: invalid-spec: "
                                "num_domains and nodes_per_domain must be >= 1")
        if self.num_blocks < 1 or self.num_blocks > self.nodes_per_domain:
            raise ContractError("synth_drift_sequence: invalid-spec: "
                                "num_blocks must be in [1, nodes_per_domain]")
        for name in ("p_intra", "p_inter"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ContractError(f"synth_drift_sequence: invalid-spec: "
                                    f"{name}={p} outside [0, 1]")
        if self.feature_noise < 0 or self.drift_step < 0:
            raise ContractError("synth_drift_sequence: invalid-spec: "
                                "feature_noise and drift_step must be >= 0")


@dataclass(frozen=True)
class Violation:
    """One machine-readable invariant violation."""

    code: str
    message: str


def validate_graph(g: Graph, num_classes: int) -> list[Violation]:
    """Return every invariant violation of ``g``; empty list means valid."""
    out: list[Violation] = []
    n = g.num_nodes

    if g.edges.size:
        bad = (g.edges < 0) | (g.edges >= n)
        for row in np.nonzero(bad.any(axis=1))[0]:
            u, v = g.edges[row]
            out.append(Violation("edge-endpoint-out-of-range",
                                 f"edge ({u}, {v}) has endpoint outside [0, {n})"))
        for row in np.nonzero(g.edges[:, 0] == g.edges[:, 1])[0]:
            out.append(Violation("self-loop",
                                 f"edge row {row} is a self-pair ({g.edges[row, 0]})"))
        canon = np.sort(g.edges, axis=1)
        _, counts = np.unique(canon, axis=0, return_counts=True)
        ndup = int((counts > 1).sum())
        if ndup:
            out.append(Violation("duplicate-edge",
                                 f"{ndup} edge pair(s) appear more than once "
                                 "after canonical ordering"))

    if g.features.ndim != 2 or g.features.shape[0] != n:
        out.append(Violation("feature-row-mismatch",
                             f"features has shape {g.features.shape}, "
                             f"expected ({n}, d)"))
    elif not np.isfinite(g.features).all():
        out.append(Violation("feature-not-finite",
                             "features contain non-finite entries"))

    if g.labels is not None:
        if g.labels.shape != (n,):
            out.append(Violation("label-length-mismatch",
                                 f"labels has shape {g.labels.shape}, expected ({n},)"))
        else:
            bad = (g.labels < -1) | (g.labels >= num_classes)
            for v in np.unique(g.labels[bad]):
                out.append(Violation("label-out-of-range",
                                     f"label {v} outside {{-1, 0, ..., {num_classes - 1}}}"))
    return out


def dense_adjacency(g: Graph) -> np.ndarray:
    """0/1 symmetric dense adjacency of an input graph, zero diagonal."""
    a = np.zeros((g.num_nodes, g.num_nodes), dtype=np.float64)
    if g.edges.size:
        a[g.edges[:, 0], g.edges[:, 1]] = 1.0
        a[g.edges[:, 1], g.edges[:, 0]] = 1.0
    return a


def normalized_adjacency(g_or_weighted) -> torch.Tensor:
    """Symmetric GCN normalization ``D^{-1/2} (A + I) D^{-1/2}``.

    Accepts a :class:`Graph`, a dense numpy adjacency, or a dense torch
    adjacency (weights in [0, 1], zero diagonal). Always returns a float64
    torch tensor; when the input is a torch tensor the result stays on its
    autograd graph, which is what the weighted memory graphs rely on.
    """
    if isinstance(g_or_weighted, Graph):
        a = torch.from_numpy(dense_adjacency(g_or_weighted))
    elif isinstance(g_or_weighted, torch.Tensor):
        a = g_or_weighted.to(torch.float64)
    else:
        a = torch.as_tensor(np.asarray(g_or_weighted, dtype=np.float64))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"normalized_adjacency: adjacency must be square, "
                            f"got shape {tuple(a.shape)}")
    if (a.detach() < 0).any():
        raise ContractError("normalized_adjacency: invalid-weight: "
                            "negative edge weight")
    a_tilde = a + torch.eye(a.shape[0], dtype=torch.float64)
    d = a_tilde.sum(dim=1)
    inv_sqrt = d.rsqrt()
    return a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]


def _block_sizes(n: int, blocks: int) -> list[int]:
    base, rem = divmod(n, blocks)
    return [base + (1 if b < rem else 0) for b in range(blocks)]


def synth_drift_sequence(spec: DriftSpec) -> GraphSequence:
    """Generate a drifting SBM sequence; pure function of ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, blocks = spec.nodes_per_domain, spec.num_blocks
    d = blocks

    sizes = _block_sizes(n, blocks)
    block_of = np.repeat(np.arange(blocks), sizes)
    base_means = np.eye(blocks, d, dtype=np.float64)

    drift_dir = rng.standard_normal(d)
    drift_dir /= np.linalg.norm(drift_dir)

    iu, ju = np.triu_indices(n, k=1)
    same_block = block_of[iu] == block_of[ju]

    domains = []
    for t in range(spec.num_domains):
        p_inter_t = float(np.clip(spec.p_inter + t * spec.drift_step, 0.0, 1.0))
        p_pair = np.where(same_block, spec.p_intra, p_inter_t)
        keep = rng.random(iu.shape[0]) < p_pair
        edges = np.column_stack([iu[keep], ju[keep]])

        means = base_means + t * spec.drift_step * drift_dir
        feats = means[block_of] + spec.feature_noise * rng.standard_normal((n, d))

        domains.append(Graph(num_nodes=n, edges=edges, features=feats,
                             labels=block_of.copy(), domain_id=f"domain_{t:02d}"))
    return GraphSequence(domains=tuple(domains), num_classes=blocks, feature_dim=d)
