"""Mask-aware GCN and GIN layers, adjacency normalization, the shared
node encoder, and the mean readout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Graph

BACKBONES = ("gcn", "gin")


def glorot(rng: np.random.Generator, d_in: int, d_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return Tensor(rng.uniform(-limit, limit, size=(d_in, d_out)), requires_grad=True)


def zeros_param(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class GCNLayerParams:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng, d_in, d_out):
        return cls(weight=glorot(rng, d_in, d_out), bias=zeros_param(1, d_out))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


@dataclass
class GINLayerParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    eps: Tensor  # learnable scalar on the self term

    @classmethod
    def init(cls, rng, d_in, d_out):
        return cls(w1=glorot(rng, d_in, d_out), b1=zeros_param(1, d_out),
                   w2=glorot(rng, d_out, d_out), b2=zeros_param(1, d_out),
                   eps=Tensor(np.zeros(()), requires_grad=True))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2,
                f"{prefix}.eps": self.eps}


@dataclass
class EncoderParams:
    layers: list
    backbone: str

    @classmethod
    def init(cls, rng, backbone, d_in, hidden, depth=3):
        if backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {backbone!r}")
        layer_cls = GCNLayerParams if backbone == "gcn" else GINLayerParams
        dims = [d_in] + [hidden] * depth
        layers = [layer_cls.init(rng, dims[i], dims[i + 1]) for i in range(depth)]
        return cls(layers=layers, backbone=backbone)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"{prefix}.{i}"))
        return out


def unit_edge_weights(graph: Graph) -> Tensor:
    src, _ = graph.directed
    return Tensor(np.ones((len(src), 1)))


def normalize_masked_adjacency(graph: Graph, edge_weights: Tensor) -> Tensor:
    """Symmetrically normalized dense adjacency with per-edge weights.

    Materializes A masked by the given directed-edge weights, adds
    unmaskable unit self-loops, and returns D^-1/2 (A_masked + I) D^-1/2
    where D is the weighted row-degree of (A_masked + I). Differentiable
    with respect to the edge weights.
    """
    src, dst = graph.directed
    if edge_weights.values.shape != (len(src), 1):
        raise ValueError(
            f"need one weight per directed edge: expected {(len(src), 1)},"
            f" got {edge_weights.values.shape}")
    if np.any(edge_weights.values < 0.0) or np.any(edge_weights.values > 1.0):
        raise ValueError("edge weights must lie in [0, 1]")
    with_loops = ad.edges_to_dense(edge_weights, src, dst, graph.n, unit_diag=True)
    dinv = ad.rsqrt(ad.rowsum(with_loops))
    return ad.mul(ad.mul(with_loops, dinv), ad.transpose(dinv))


def gcn_layer(params: GCNLayerParams, norm_adj: Tensor, h: Tensor,
              activate: bool = True) -> Tensor:
    d_in = h.values.shape[1]
    d_out = params.weight.values.shape[1]
    if params.weight.values.shape[0] != d_in:
        raise ValueError(f"gcn layer expects input width {params.weight.values.shape[0]},"
                         f" got {d_in}")
    # cheaper association first: propagate then project when d_in <= d_out
    if d_in <= d_out:
        out = ad.matmul(ad.matmul(norm_adj, h), params.weight)
    else:
        out = ad.matmul(norm_adj, ad.matmul(h, params.weight))
    out = ad.add(out, params.bias)
    return ad.relu(out) if activate else out


def gcn_layer_masked(params: GCNLayerParams, graph: Graph, edge_weights: Tensor,
                     h: Tensor, activate: bool = True) -> Tensor:
    """Edge-list evaluation of gcn_layer over the masked normalized adjacency.

    Avoids materializing the dense (n, n) matrix; numerically equivalent to
    gcn_layer(params, normalize_masked_adjacency(graph, w), h) and much
    cheaper when gradients flow into the edge weights.
    """
    src, dst = graph.directed
    if edge_weights.values.shape != (len(src), 1):
        raise ValueError(
            f"need one weight per directed edge: expected {(len(src), 1)},"
            f" got {edge_weights.values.shape}")
    if np.any(edge_weights.values < 0.0) or np.any(edge_weights.values > 1.0):
        raise ValueError("edge weights must lie in [0, 1]")
    deg = ad.shift(ad.scatter_rows(edge_weights, src, graph.src_plan), 1.0)
    dinv = ad.rsqrt(deg)
    coef = ad.mul(ad.mul(ad.gather_rows(dinv, src), edge_weights),
                  ad.gather_rows(dinv, dst))
    messages = ad.mul(ad.gather_rows(h, dst, plan=graph.dst_plan), coef)
    neighbor = ad.scatter_rows(messages, src, graph.src_plan)
    self_term = ad.mul(h, ad.mul(dinv, dinv))
    out = ad.add(ad.matmul(ad.add(neighbor, self_term), params.weight), params.bias)
    return ad.relu(out) if activate else out


def gin_layer(params: GINLayerParams, graph: Graph, edge_weights: Tensor | None,
              h: Tensor, activate: bool = True) -> Tensor:
    src, dst = graph.directed
    msgs = ad.gather_rows(h, src, plan=graph.src_plan)
    if edge_weights is not None:
        if np.any(edge_weights.values < 0.0) or np.any(edge_weights.values > 1.0):
            raise ValueError("edge weights must lie in [0, 1]")
        msgs = ad.mul(msgs, edge_weights)
    agg = ad.scatter_rows(msgs, dst, graph.dst_plan)
    pre = ad.add(ad.mul(h, ad.shift(params.eps, 1.0)), agg)
    out = ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(pre, params.w1), params.b1)),
                           params.w2), params.b2)
    return ad.relu(out) if activate else out


def unit_norm_adj_values(graph: Graph) -> np.ndarray:
    """Constant normalized adjacency for unit edge weights (encoder case)."""
    src, dst = graph.directed
    dinv = 1.0 / np.sqrt(graph.degrees() + 1.0)
    vals = np.zeros((graph.n, graph.n))
    vals[src, dst] = dinv[src] * dinv[dst]
    np.fill_diagonal(vals, dinv * dinv)
    return vals


def encoder_forward(encoder: EncoderParams, graph: Graph) -> Tensor:
    """Node representations from the unmasked graph (all edge weights 1)."""
    h = Tensor(graph.x)
    last = len(encoder.layers) - 1
    if encoder.backbone == "gcn":
        norm_adj = Tensor(unit_norm_adj_values(graph))
        for i, layer in enumerate(encoder.layers):
            h = gcn_layer(layer, norm_adj, h, activate=i < last)
    else:
        for i, layer in enumerate(encoder.layers):
            h = gin_layer(layer, graph, None, h, activate=i < last)
    return h


def readout_mean(h: Tensor) -> Tensor:
    """Column-wise mean over node rows: (n, d) -> (1, d)."""
    return ad.colmean(h)
