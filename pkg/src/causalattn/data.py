"""Graph and dataset types, text-format persistence, and TUDataset ingestion.

Node features throughout the package are one-hot (motif datasets use node
degree, TUDataset uses node labels when present), so graphs store a single
feature index per node and materialize the dense feature matrix on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .autodiff import ScatterPlan

MOTIF_KINDS = ("House", "Cycle", "Grid", "Diamond")
TRIVIAL_KINDS = ("BA", "Tree")
SPLITS = ("train", "val", "test")

DATASET_MAGIC = "causalattn-dataset v1"


class DatasetFormatError(ValueError):
    pass


@dataclass(eq=False)
class Graph:
    """Undirected graph with one-hot node features and provenance tags.

    ``edges`` holds deduplicated undirected pairs (i < j). The first
    ``n_base_edges`` entries are construction edges; any remaining entries
    are random perturbation edges, kept separate so motif-recovery checks
    can ignore them.
    """

    n: int
    edges: np.ndarray           # (E, 2) int64, i < j
    feat_idx: np.ndarray        # (n,) int64, one-hot column per node
    feat_dim: int
    y: int
    causal_kind: str | None = None
    trivial_kind: str | None = None
    causal_nodes: np.ndarray | None = None
    n_base_edges: int = -1      # -1: all edges are construction edges
    split: str | None = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.feat_idx = np.asarray(self.feat_idx, dtype=np.int64)
        if self.causal_nodes is not None:
            self.causal_nodes = np.asarray(self.causal_nodes, dtype=np.int64)
        if self.n_base_edges < 0:
            self.n_base_edges = len(self.edges)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def x(self) -> np.ndarray:
        """Dense (n, feat_dim) one-hot feature matrix."""
        m = np.zeros((self.n, self.feat_dim), dtype=np.float64)
        m[np.arange(self.n), self.feat_idx] = 1.0
        return m

    @cached_property
    def directed(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) arrays listing both directions of every undirected edge."""
        if len(self.edges) == 0:
            z = np.zeros(0, dtype=np.int64)
            return z, z
        u, v = self.edges[:, 0], self.edges[:, 1]
        return np.concatenate([u, v]), np.concatenate([v, u])

    @cached_property
    def src_plan(self) -> ScatterPlan:
        return ScatterPlan(self.directed[0], self.n)

    @cached_property
    def dst_plan(self) -> ScatterPlan:
        return ScatterPlan(self.directed[1], self.n)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        if len(self.edges):
            np.add.at(deg, self.edges[:, 0], 1)
            np.add.at(deg, self.edges[:, 1], 1)
        return deg


@dataclass
class Dataset:
    graphs: list[Graph] = field(default_factory=list)
    num_classes: int = 0
    feature_dim: int = 0

    def subset(self, split: str) -> list[Graph]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [g for g in self.graphs if g.split == split]

    def __len__(self) -> int:
        return len(self.graphs)


def validate_graph(g: Graph) -> None:
    """Raise ValueError on any violated structural invariant."""
    if len(g.edges):
        if g.edges.min() < 0 or g.edges.max() >= g.n:
            raise ValueError("edge endpoint out of range")
        if np.any(g.edges[:, 0] == g.edges[:, 1]):
            raise ValueError("self-loop in edge list")
        if np.any(g.edges[:, 0] > g.edges[:, 1]):
            raise ValueError("edges must be stored with i < j")
        pairs = {(int(a), int(b)) for a, b in g.edges}
        if len(pairs) != len(g.edges):
            raise ValueError("duplicate undirected edge")
    if g.feat_idx.shape != (g.n,):
        raise ValueError("feature index count must equal node count")
    if len(g.feat_idx) and (g.feat_idx.min() < 0 or g.feat_idx.max() >= g.feat_dim):
        raise ValueError("feature index out of range")
    if not 0 <= g.n_base_edges <= len(g.edges):
        raise ValueError("n_base_edges out of range")


def graphs_equal(a: Graph, b: Graph) -> bool:
    if (a.n, a.y, a.causal_kind, a.trivial_kind, a.n_base_edges, a.split, a.feat_dim) != (
            b.n, b.y, b.causal_kind, b.trivial_kind, b.n_base_edges, b.split, b.feat_dim):
        return False
    if not (np.array_equal(a.edges, b.edges) and np.array_equal(a.feat_idx, b.feat_idx)):
        return False
    if (a.causal_nodes is None) != (b.causal_nodes is None):
        return False
    return a.causal_nodes is None or np.array_equal(a.causal_nodes, b.causal_nodes)


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    return (a.num_classes == b.num_classes and a.feature_dim == b.feature_dim
            and len(a.graphs) == len(b.graphs)
            and all(graphs_equal(x, y) for x, y in zip(a.graphs, b.graphs)))


def compute_bias(graphs) -> float:
    """Fraction of House-class graphs whose trivial part is a Tree."""
    house = [g for g in graphs if g.causal_kind == "House"]
    if not house:
        raise ValueError("bias is undefined: no House graphs in the given portion")
    tree_house = sum(1 for g in house if g.trivial_kind == "Tree")
    return tree_house / len(house)


# ---------------------------------------------------------------------------
# dataset text format


def _fmt_ints(values) -> str:
    values = list(values)
    return ",".join(str(int(v)) for v in values) if values else "-"


def _fmt_edges(edges: np.ndarray) -> str:
    if len(edges) == 0:
        return "-"
    return ",".join(f"{int(a)}-{int(b)}" for a, b in edges)


def _graph_record(g: Graph) -> str:
    return (
        f"n={g.n} y={g.y}"
        f" split={g.split or '-'}"
        f" causal={g.causal_kind or '-'}"
        f" trivial={g.trivial_kind or '-'}"
        f" cnodes={_fmt_ints(g.causal_nodes) if g.causal_nodes is not None else '-'}"
        f" nbase={g.n_base_edges}"
        f" feats={_fmt_ints(g.feat_idx)}"
        f" edges={_fmt_edges(g.edges)}"
    )


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    lines = [f"{DATASET_MAGIC} num_classes={dataset.num_classes}"
             f" feature_dim={dataset.feature_dim} count={len(dataset.graphs)}"]
    lines.extend(_graph_record(g) for g in dataset.graphs)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_fields(line: str, lineno: int, expected: tuple[str, ...]) -> dict[str, str]:
    fields = {}
    for token in line.split(" "):
        if "=" not in token:
            raise DatasetFormatError(f"line {lineno}: malformed token {token!r}")
        key, _, value = token.partition("=")
        fields[key] = value
    if tuple(fields) != expected:
        raise DatasetFormatError(f"line {lineno}: expected fields {expected}, got {tuple(fields)}")
    return fields


def _parse_int_list(text: str, lineno: int) -> list[int]:
    if text == "-":
        return []
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise DatasetFormatError(f"line {lineno}: bad integer list {text!r}") from None


def load_dataset(path) -> Dataset:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty dataset file")
    if not lines[0].startswith(DATASET_MAGIC):
        raise DatasetFormatError(f"line 1: expected version tag {DATASET_MAGIC!r}")
    header = _parse_fields(lines[0].removeprefix(DATASET_MAGIC).strip(), 1,
                           ("num_classes", "feature_dim", "count"))
    count = int(header["count"])
    if count != len(lines) - 1:
        raise DatasetFormatError(f"line 1: header count {count} != {len(lines) - 1} records")
    dataset = Dataset(num_classes=int(header["num_classes"]),
                      feature_dim=int(header["feature_dim"]))
    record_fields = ("n", "y", "split", "causal", "trivial", "cnodes", "nbase", "feats", "edges")
    for lineno, line in enumerate(lines[1:], start=2):
        f = _parse_fields(line, lineno, record_fields)
        n = int(f["n"])
        feats = _parse_int_list(f["feats"], lineno)
        if len(feats) != n:
            raise DatasetFormatError(f"line {lineno}: {len(feats)} features for {n} nodes")
        edges = []
        if f["edges"] != "-":
            for token in f["edges"].split(","):
                a, sep, b = token.partition("-")
                if not sep:
                    raise DatasetFormatError(f"line {lineno}: bad edge token {token!r}")
                edges.append((int(a), int(b)))
        cnodes = _parse_int_list(f["cnodes"], lineno) if f["cnodes"] != "-" else None
        g = Graph(
            n=n,
            edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
            feat_idx=np.asarray(feats, dtype=np.int64),
            feat_dim=dataset.feature_dim,
            y=int(f["y"]),
            causal_kind=None if f["causal"] == "-" else f["causal"],
            trivial_kind=None if f["trivial"] == "-" else f["trivial"],
            causal_nodes=None if cnodes is None else np.asarray(cnodes, dtype=np.int64),
            n_base_edges=int(f["nbase"]),
            split=None if f["split"] == "-" else f["split"],
        )
        try:
            validate_graph(g)
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from None
        dataset.graphs.append(g)
    return dataset


# ---------------------------------------------------------------------------
# TUDataset text directory format (1-indexed node ids)


def _read_int_rows(path: Path, lineno_base: str) -> list[tuple[int, ...]]:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rows.append(tuple(int(t.strip()) for t in line.split(",")))
        except ValueError:
            raise DatasetFormatError(f"{lineno_base} line {lineno}: bad row {line!r}") from None
    return rows


def load_tudataset(directory, degree_feat_dim: int = 20) -> Dataset:
    """Load a dataset in the public TUDataset text layout.

    Requires DS_A.txt, DS_graph_indicator.txt, DS_graph_labels.txt; uses
    DS_node_labels.txt for one-hot features when present, otherwise one-hot
    node degree capped at ``degree_feat_dim - 1``.
    """
    directory = Path(directory)
    candidates = sorted(directory.glob("*_A.txt"))
    if not candidates:
        raise FileNotFoundError(f"no *_A.txt adjacency file in {directory}")
    prefix = candidates[0].name[:-len("_A.txt")]

    def required(suffix: str) -> Path:
        p = directory / f"{prefix}_{suffix}.txt"
        if not p.exists():
            raise FileNotFoundError(f"missing {p}")
        return p

    indicator = [r[0] for r in _read_int_rows(required("graph_indicator"), "graph_indicator")]
    graph_labels = [r[0] for r in _read_int_rows(required("graph_labels"), "graph_labels")]
    edge_rows = _read_int_rows(required("A"), "A")

    num_nodes = len(indicator)
    num_graphs = len(graph_labels)
    if num_graphs == 0:
        raise DatasetFormatError("graph_labels: no graphs")
    if sorted(set(indicator)) != list(range(1, num_graphs + 1)):
        raise DatasetFormatError("graph_indicator: graph ids must cover 1..num_graphs")

    # Global node id -> (graph index, local node index), in order of appearance.
    node_graph = np.asarray(indicator, dtype=np.int64) - 1
    local_idx = np.zeros(num_nodes, dtype=np.int64)
    sizes = np.zeros(num_graphs, dtype=np.int64)
    for node, gi in enumerate(node_graph):
        local_idx[node] = sizes[gi]
        sizes[gi] += 1

    edge_sets: list[set[tuple[int, int]]] = [set() for _ in range(num_graphs)]
    for row in edge_rows:
        if len(row) != 2:
            raise DatasetFormatError(f"A: expected 2 columns, got {row}")
        a, b = row
        if not (1 <= a <= num_nodes and 1 <= b <= num_nodes):
            raise DatasetFormatError(f"A: dangling node index in edge {row}")
        if node_graph[a - 1] != node_graph[b - 1]:
            raise DatasetFormatError(f"A: edge {row} crosses graphs")
        if a == b:
            continue
        i, j = int(local_idx[a - 1]), int(local_idx[b - 1])
        edge_sets[int(node_graph[a - 1])].add((min(i, j), max(i, j)))

    node_label_path = directory / f"{prefix}_node_labels.txt"
    node_labels = None
    if node_label_path.exists():
        raw = [r[0] for r in _read_int_rows(node_label_path, "node_labels")]
        if len(raw) != num_nodes:
            raise DatasetFormatError("node_labels: one row per node required")
        remap = {v: i for i, v in enumerate(sorted(set(raw)))}
        node_labels = np.asarray([remap[v] for v in raw], dtype=np.int64)
        feat_dim = len(remap)
    else:
        feat_dim = degree_feat_dim

    label_remap = {v: i for i, v in enumerate(sorted(set(graph_labels)))}

    graphs = []
    for gi in range(num_graphs):
        n = int(sizes[gi])
        edges = np.asarray(sorted(edge_sets[gi]), dtype=np.int64).reshape(-1, 2)
        g = Graph(n=n, edges=edges, feat_idx=np.zeros(n, dtype=np.int64),
                  feat_dim=feat_dim, y=label_remap[graph_labels[gi]])
        if node_labels is not None:
            g.feat_idx = node_labels[node_graph == gi]
        else:
            g.feat_idx = np.minimum(g.degrees(), feat_dim - 1)
        validate_graph(g)
        graphs.append(g)
    return Dataset(graphs=graphs, num_classes=len(label_remap), feature_dim=feat_dim)
