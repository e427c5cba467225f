"""Biased synthetic benchmark: motif + trivial-subgraph graphs with a
controllable spurious correlation between the House motif and the Tree
trivial part.

Each graph is one causal motif (House / Cycle / Grid / Diamond — the class
label) attached by a single bridge edge to one trivial subgraph (a
Barabasi-Albert graph or a balanced binary tree), then perturbed with random
extra edges. Node features are one-hot degree. The bias level ``b`` is the
fraction of House graphs whose trivial part is a Tree; the other classes get
Tree fraction ``1 - b``. Train and validation splits share the bias, the
test split is balanced (Tree fraction 0.5) for every class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import MOTIF_KINDS, TRIVIAL_KINDS, Dataset, Graph

SPLIT_FRACTIONS = {"train": 0.7, "val": 0.1, "test": 0.2}


@dataclass
class SynSpec:
    bias: float
    n_per_class: int = 2000
    trivial_size: int = 230
    ba_attach: int = 2
    perturb_frac: float = 0.10
    feature_dim: int = 20
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.bias <= 1.0:
            raise ValueError(f"bias must be in [0, 1], got {self.bias}")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if self.trivial_size < 2:
            raise ValueError("trivial_size must be >= 2")
        if self.perturb_frac < 0.0:
            raise ValueError("perturb_frac must be >= 0")


def gen_motif(kind: str) -> tuple[int, list[tuple[int, int]]]:
    """Return (node count, undirected edges) for one causal motif."""
    if kind == "House":
        # 4-cycle base with an apex joined to two adjacent base nodes
        return 5, [(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4)]
    if kind == "Cycle":
        return 6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]
    if kind == "Grid":
        edges = []
        for r in range(3):
            for c in range(3):
                v = 3 * r + c
                if c < 2:
                    edges.append((v, v + 1))
                if r < 2:
                    edges.append((v, v + 3))
        return 9, edges
    if kind == "Diamond":
        # shared 4-cycle with two apex nodes each joined to all cycle nodes
        cycle = [(0, 1), (1, 2), (2, 3), (0, 3)]
        apex = [(i, 4) for i in range(4)] + [(i, 5) for i in range(4)]
        return 6, cycle + apex
    raise ValueError(f"unknown motif kind {kind!r}")


def gen_trivial(kind: str, size: int, rng: np.random.Generator,
                ba_attach: int = 2) -> tuple[int, list[tuple[int, int]]]:
    """Return (node count, undirected edges) for one trivial subgraph."""
    if size < 2:
        raise ValueError("trivial subgraph needs at least 2 nodes")
    if kind == "Tree":
        # balanced binary tree filled breadth-first to exactly `size` nodes
        edges = []
        for parent in range(size):
            for child in (2 * parent + 1, 2 * parent + 2):
                if child < size:
                    edges.append((parent, child))
        return size, edges
    if kind == "BA":
        # preferential attachment from a connected seed pair: targets drawn
        # from the repeated-endpoints list (degree-proportional), distinct
        # per added node
        edges = [(0, 1)]
        repeated = [0, 1]
        for new in range(2, size):
            m = min(ba_attach, new)
            targets: set[int] = set()
            while len(targets) < m:
                targets.add(repeated[rng.integers(len(repeated))])
            for t in sorted(targets):
                edges.append((t, new))
                repeated.append(t)
                repeated.append(new)
        return size, edges
    raise ValueError(f"unknown trivial kind {kind!r}")


def assemble_graph(trivial_kind: str, causal_kind: str, spec: SynSpec,
                   rng: np.random.Generator) -> Graph:
    """Attach a motif to a trivial subgraph, perturb, and featurize."""
    nt, trivial_edges = gen_trivial(trivial_kind, spec.trivial_size, rng, spec.ba_attach)
    nm, motif_edges = gen_motif(causal_kind)
    n = nt + nm
    edges = list(trivial_edges)
    edges.extend((a + nt, b + nt) for a, b in motif_edges)

    motif_node = nt + int(rng.integers(nm))
    trivial_node = int(rng.integers(nt))
    edges.append((trivial_node, motif_node))

    n_base = len(edges)
    existing = {(int(a), int(b)) for a, b in edges}
    n_extra = math.floor(spec.perturb_frac * n_base)
    while n_extra > 0:
        i = int(rng.integers(n))
        j = int(rng.integers(n))
        if i == j:
            continue
        pair = (min(i, j), max(i, j))
        if pair in existing:
            continue
        existing.add(pair)
        edges.append(pair)
        n_extra -= 1

    edge_arr = np.asarray(edges, dtype=np.int64)
    deg = np.zeros(n, dtype=np.int64)
    np.add.at(deg, edge_arr[:, 0], 1)
    np.add.at(deg, edge_arr[:, 1], 1)
    return Graph(
        n=n,
        edges=edge_arr,
        feat_idx=np.minimum(deg, spec.feature_dim - 1),
        feat_dim=spec.feature_dim,
        y=MOTIF_KINDS.index(causal_kind),
        causal_kind=causal_kind,
        trivial_kind=trivial_kind,
        causal_nodes=np.arange(nt, nt + nm, dtype=np.int64),
        n_base_edges=n_base,
    )


def _split_counts(n: int) -> dict[str, int]:
    n_test = round(SPLIT_FRACTIONS["test"] * n)
    n_val = round(SPLIT_FRACTIONS["val"] * n)
    return {"train": n - n_val - n_test, "val": n_val, "test": n_test}


def make_synthetic(spec: SynSpec) -> Dataset:
    """Generate the full biased dataset, stratified 7:1:2 per class.

    Graph RNG streams derive from (seed, global graph index), so the result
    is deterministic and generation could be parallelized per graph without
    changing it.
    """
    spec.validate()
    counts = _split_counts(spec.n_per_class)
    graphs = []
    gidx = 0
    for causal_kind in MOTIF_KINDS:
        biased_share = spec.bias if causal_kind == "House" else 1.0 - spec.bias
        for split in ("train", "val", "test"):
            cnt = counts[split]
            share = 0.5 if split == "test" else biased_share
            n_tree = round(share * cnt)
            for i in range(cnt):
                trivial_kind = "Tree" if i < n_tree else "BA"
                rng = np.random.default_rng([spec.seed, gidx])
                g = assemble_graph(trivial_kind, causal_kind, spec, rng)
                g.split = split
                graphs.append(g)
                gidx += 1
    return Dataset(graphs=graphs, num_classes=len(MOTIF_KINDS),
                   feature_dim=spec.feature_dim)
