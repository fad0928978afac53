"""Dataset directory format, run configuration, checkpoints, and reports.

Dataset layout::

    meta.json                 {"num_classes", "feature_dim", "domains",
                               "source_domains"}
    <domain>/edges.csv        one "src,dst" pair per line, 0-indexed
    <domain>/features.csv     N rows of d comma-separated decimals
    <domain>/labels.csv       optional, N integer rows, -1 = unlabeled

All numeric text is written with repr precision so a save/load round trip is
exact. Config files are strict: unknown keys are errors, not warnings.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .adaptation import AdaptConfig
from .backbone import ModelParams
from .errors import ContractError, LoadError
from .evaluation import METRICS, PerformanceMatrix, average_forgetting, \
    average_performance
from .generator import GenConfig
from .graphs import Graph, GraphSequence, validate_graph
from .memory import MemoryGraph
from .trainer import RunState


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    hidden_dim: int = 16
    adapt: AdaptConfig = dataclasses.field(default_factory=AdaptConfig)
    gen: GenConfig = dataclasses.field(default_factory=GenConfig)
    pretrain_epochs: int = 150
    lr_pretrain: float = 1e-4
    wd: float = 5e-4
    metric: str = "accuracy"

    def validate(self) -> None:
        if self.hidden_dim < 1 or self.pretrain_epochs < 0:
            raise ContractError("RunConfig: hidden_dim >= 1 and "
                                "pretrain_epochs >= 0 required")
        if self.lr_pretrain <= 0 or self.wd < 0:
            raise ContractError("RunConfig: lr_pretrain > 0 and wd >= 0 required")
        if self.metric not in METRICS:
            raise ContractError(f"RunConfig: unknown metric {self.metric!r}")
        self.gen.validate()
        if not 0.0 <= self.adapt.ema_alpha <= 1.0:
            raise ContractError("RunConfig: adapt.ema_alpha outside [0, 1]")
        if self.adapt.inner_epochs < 0 or self.adapt.lr_adapt <= 0 \
                or self.adapt.weight_decay < 0:
            raise ContractError("RunConfig: bad adapt settings")

    def as_dict(self) -> dict:
        return {
            "seed": self.seed, "hidden_dim": self.hidden_dim,
            "adapt": dataclasses.asdict(self.adapt),
            "gen": dataclasses.asdict(self.gen),
            "pretrain_epochs": self.pretrain_epochs,
            "lr_pretrain": self.lr_pretrain, "wd": self.wd,
            "metric": self.metric,
        }

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _strict_fields(raw: dict, cls, where: str) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ContractError(f"{where}: unknown key(s) {sorted(unknown)}; "
                            f"allowed: {sorted(names)}")
    return raw


def run_config_from_dict(raw: dict, where: str = "config") -> RunConfig:
    """Strict parse of a config dict; every key optional, none unknown."""
    if not isinstance(raw, dict):
        raise ContractError(f"{where}: expected a JSON object")
    top = dict(_strict_fields(raw, RunConfig, where))
    adapt = AdaptConfig(**_strict_fields(top.pop("adapt", {}), AdaptConfig,
                                         f"{where}.adapt"))
    gen = GenConfig(**_strict_fields(top.pop("gen", {}), GenConfig,
                                     f"{where}.gen"))
    cfg = RunConfig(adapt=adapt, gen=gen, **top)
    cfg.validate()
    return cfg


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise LoadError(f"load_run_config: {path}: invalid JSON: {e}") from e
    return run_config_from_dict(raw, where=str(path))


# ---------------------------------------------------------------------------
# dataset directories

def _fmt(v: float) -> str:
    return repr(float(v))


def _read_matrix_csv(path: Path, width: int | None) -> np.ndarray:
    rows = []
    text = path.read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError as e:
            raise LoadError(f"{path}:{lineno}: {e}") from e
        if width is not None and len(row) != width:
            raise LoadError(f"{path}:{lineno}: expected {width} values, "
                            f"got {len(row)}")
        rows.append(row)
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), width or -1)


def _load_domain(domain_dir: Path, feature_dim: int, num_classes: int,
                 domain_id: str) -> Graph:
    feat_path = domain_dir / "features.csv"
    if not feat_path.is_file():
        raise LoadError(f"{feat_path}: missing features.csv")
    features = _read_matrix_csv(feat_path, feature_dim)
    n = features.shape[0]

    edge_path = domain_dir / "edges.csv"
    if not edge_path.is_file():
        raise LoadError(f"{edge_path}: missing edges.csv")
    edges = []
    for lineno, line in enumerate(edge_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            u, v = (int(tok) for tok in parts)
        except ValueError as e:
            raise LoadError(f"{edge_path}:{lineno}: expected 'src,dst' ints") from e
        if not (0 <= u < n and 0 <= v < n):
            raise LoadError(f"{edge_path}:{lineno}: endpoint outside [0, {n})")
        edges.append((u, v))

    label_path = domain_dir / "labels.csv"
    if label_path.is_file():
        labels = []
        for lineno, line in enumerate(label_path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                labels.append(int(line.strip()))
            except ValueError as e:
                raise LoadError(f"{label_path}:{lineno}: expected an integer") from e
        if len(labels) != n:
            raise LoadError(f"{label_path}: {len(labels)} labels for {n} nodes")
        labels = np.asarray(labels, dtype=np.int64)
    else:
        labels = np.full(n, -1, dtype=np.int64)

    g = Graph(num_nodes=n, edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
              features=features, labels=labels, domain_id=domain_id)
    violations = validate_graph(g, num_classes)
    if violations:
        detail = "; ".join(f"{v.code}: {v.message}" for v in violations)
        raise LoadError(f"{domain_dir}: invalid domain graph: {detail}")
    return g


def load_dataset(path) -> tuple[GraphSequence, GraphSequence]:
    """Load (source, target) sequences from a dataset directory."""
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise LoadError(f"{meta_path}: missing meta.json")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise LoadError(f"{meta_path}: invalid JSON: {e}") from e
    required = {"num_classes", "feature_dim", "domains", "source_domains"}
    if set(meta) != required:
        raise LoadError(f"{meta_path}: keys must be exactly {sorted(required)}, "
                        f"got {sorted(meta)}")
    num_classes, feature_dim = int(meta["num_classes"]), int(meta["feature_dim"])
    domains, sources = list(meta["domains"]), list(meta["source_domains"])
    missing = [s for s in sources if s not in domains]
    if missing:
        raise LoadError(f"{meta_path}: source_domains {missing} not in domains")

    graphs = {name: _load_domain(root / name, feature_dim, num_classes, name)
              for name in domains}
    source_seq = GraphSequence(tuple(graphs[s] for s in sources),
                               num_classes, feature_dim)
    target_seq = GraphSequence(tuple(graphs[d] for d in domains if d not in sources),
                               num_classes, feature_dim)
    return source_seq, target_seq


def save_dataset(path, seq: GraphSequence, source_names: list[str]) -> None:
    """Write a sequence (sources first in meta ordering) as a dataset dir."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    names = [g.domain_id for g in seq]
    meta = {"num_classes": seq.num_classes, "feature_dim": seq.feature_dim,
            "domains": names, "source_domains": list(source_names)}
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    for g in seq:
        d = root / g.domain_id
        d.mkdir(exist_ok=True)
        (d / "edges.csv").write_text(
            "".join(f"{u},{v}\n" for u, v in g.edges))
        (d / "features.csv").write_text(
            "".join(",".join(_fmt(x) for x in row) + "\n" for row in g.features))
        if g.labels is not None:
            (d / "labels.csv").write_text(
                "".join(f"{int(y)}\n" for y in g.labels))


# ---------------------------------------------------------------------------
# checkpoints and run artifacts

def save_checkpoint(path, params: ModelParams) -> None:
    d, h_prime, c = params.dims
    doc = {"d": d, "h_prime": h_prime, "c": c,
           "w1": params.w1.detach().reshape(-1).tolist(),
           "w2": params.w2.detach().reshape(-1).tolist()}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise LoadError(f"load_checkpoint: {path}: {e}") from e
    required = {"d", "h_prime", "c", "w1", "w2"}
    if set(doc) != required:
        raise LoadError(f"load_checkpoint: {path}: keys must be {sorted(required)}")
    d, h, c = int(doc["d"]), int(doc["h_prime"]), int(doc["c"])
    w1 = np.asarray(doc["w1"], dtype=np.float64)
    w2 = np.asarray(doc["w2"], dtype=np.float64)
    if w1.size != d * h or w2.size != h * c:
        raise LoadError(f"load_checkpoint: {path}: weight sizes do not match dims")
    return ModelParams(torch.from_numpy(w1.reshape(d, h)),
                       torch.from_numpy(w2.reshape(h, c)))


def _matrix_csv_text(m: PerformanceMatrix) -> str:
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in m.rows())


def write_run(run_dir, state: RunState) -> None:
    """Dump parameter history, memories, live matrix, and the loss trace."""
    root = Path(run_dir)
    for sub in ("params", "ema", "memory"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for t, (p, e) in enumerate(zip(state.param_history, state.ema_history), start=1):
        save_checkpoint(root / "params" / f"step_{t}.json", p)
        save_checkpoint(root / "ema" / f"step_{t}.json", e)
    for mem in state.pool:
        (root / "memory" / f"{mem.domain_id}.json").write_text(
            json.dumps(mem.to_dict()) + "\n")
    (root / "matrix_live.csv").write_text(_matrix_csv_text(state.live_matrix))
    with open(root / "trace.jsonl", "w") as fh:
        for record in state.trace:
            fh.write(json.dumps(record) + "\n")


def write_report(run_dir, state: RunState, plot: bool = False) -> None:
    """Write matrix.csv and report.json; optionally a heatmap image."""
    root = Path(run_dir)
    root.mkdir(parents=True, exist_ok=True)
    m = state.matrix
    (root / "matrix.csv").write_text(_matrix_csv_text(m))
    report = {"metric": m.metric_name, "ap": average_performance(m),
              "matrix": m.rows()}
    if m.num_domains >= 2:
        report["af"] = average_forgetting(m)
    (root / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    if plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(m.values, vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_xlabel("scored domain")
        ax.set_ylabel("after adapting through")
        fig.colorbar(im, ax=ax, label=m.metric_name)
        fig.savefig(root / "matrix.png", dpi=150, bbox_inches="tight")
        plt.close(fig)


def load_memory(path) -> MemoryGraph:
    try:
        return MemoryGraph.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise LoadError(f"load_memory: {path}: {e}") from e
