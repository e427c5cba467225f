"""Attention estimation, soft mask construction, causal/trivial attended-graph
forwards, and the representation-level intervention classifier.

Each input graph is softly split in two: a causal attended-graph (node mask
M_x, edge mask M_a) that drives the prediction, and the complementary trivial
attended-graph (1 - M_x, 1 - M_a). Inference uses the causal branch only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Graph
from .layers import (EncoderParams, GCNLayerParams, GINLayerParams, encoder_forward,
                     gcn_layer_masked, gin_layer, glorot, readout_mean, zeros_param)


@dataclass
class MLPParams:
    """Two-layer MLP with relu, used by the node and edge attention heads."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, d_in, d_hidden, d_out):
        return cls(w1=glorot(rng, d_in, d_hidden), b1=zeros_param(1, d_hidden),
                   w2=glorot(rng, d_hidden, d_out), b2=zeros_param(1, d_out))

    def named(self, prefix):
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2}

    def forward(self, h: Tensor) -> Tensor:
        hidden = ad.relu(ad.add(ad.matmul(h, self.w1), self.b1))
        return ad.add(ad.matmul(hidden, self.w2), self.b2)


@dataclass
class AttentionParams:
    node_mlp: MLPParams   # d -> 2 (causal channel, trivial channel)
    edge_mlp: MLPParams   # 2d -> 2, on ordered concat h_i || h_j

    @classmethod
    def init(cls, rng, d, d_hidden):
        return cls(node_mlp=MLPParams.init(rng, d, d_hidden, 2),
                   edge_mlp=MLPParams.init(rng, 2 * d, d_hidden, 2))

    def named(self, prefix):
        return {**self.node_mlp.named(f"{prefix}.node"),
                **self.edge_mlp.named(f"{prefix}.edge")}


@dataclass
class LinearParams:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng, d_in, d_out):
        return cls(weight=glorot(rng, d_in, d_out), bias=zeros_param(1, d_out))

    def named(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    def forward(self, h: Tensor) -> Tensor:
        return ad.add(ad.matmul(h, self.weight), self.bias)


@dataclass
class HeadParams:
    conv_c: GCNLayerParams | GINLayerParams
    conv_t: GCNLayerParams | GINLayerParams
    clf_c: LinearParams
    clf_t: LinearParams
    clf: LinearParams     # intervention classifier; independent of clf_c

    def named(self, prefix):
        return {**self.conv_c.named(f"{prefix}.conv_c"),
                **self.conv_t.named(f"{prefix}.conv_t"),
                **self.clf_c.named(f"{prefix}.clf_c"),
                **self.clf_t.named(f"{prefix}.clf_t"),
                **self.clf.named(f"{prefix}.clf")}


@dataclass
class MaskSet:
    """Soft node/edge masks in (0, 1) and their exact complements."""

    node: Tensor       # (n, 1)
    edge: Tensor       # (2E, 1), one entry per directed edge
    node_bar: Tensor
    edge_bar: Tensor


@dataclass
class CalModel:
    backbone: str
    feature_dim: int
    hidden: int
    num_classes: int
    encoder: EncoderParams
    attn: AttentionParams
    head: HeadParams
    cal_enabled: bool = True
    tie_phi: bool = False        # reuse clf_c as the intervention classifier
    sym_edges: bool = False      # average edge attention over both directions

    @classmethod
    def init(cls, rng: np.random.Generator, backbone: str, feature_dim: int,
             hidden: int, num_classes: int, attn_hidden: int | None = None,
             cal_enabled: bool = True, tie_phi: bool = False,
             sym_edges: bool = False) -> "CalModel":
        attn_hidden = hidden if attn_hidden is None else attn_hidden
        encoder = EncoderParams.init(rng, backbone, feature_dim, hidden)
        attn = AttentionParams.init(rng, hidden, attn_hidden)
        layer_cls = GCNLayerParams if backbone == "gcn" else GINLayerParams
        head = HeadParams(
            conv_c=layer_cls.init(rng, feature_dim, hidden),
            conv_t=layer_cls.init(rng, feature_dim, hidden),
            clf_c=LinearParams.init(rng, hidden, num_classes),
            clf_t=LinearParams.init(rng, hidden, num_classes),
            clf=LinearParams.init(rng, hidden, num_classes),
        )
        return cls(backbone=backbone, feature_dim=feature_dim, hidden=hidden,
                   num_classes=num_classes, encoder=encoder, attn=attn, head=head,
                   cal_enabled=cal_enabled, tie_phi=tie_phi, sym_edges=sym_edges)

    @property
    def intervention_clf(self) -> LinearParams:
        return self.head.clf_c if self.tie_phi else self.head.clf

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.encoder.named("encoder"), **self.attn.named("attn"),
                **self.head.named("head")}

    def trainable_parameters(self) -> dict[str, Tensor]:
        """Vanilla mode trains only the backbone path: encoder + clf_c."""
        if self.cal_enabled:
            params = self.named_parameters()
            if self.tie_phi:
                params = {k: v for k, v in params.items() if not k.startswith("head.clf.")}
            return params
        return {**self.encoder.named("encoder"), **self.head.clf_c.named("head.clf_c")}


def node_attention(attn: AttentionParams, h: Tensor) -> tuple[Tensor, Tensor]:
    """Per-node causal/trivial attention scores; columns sum to one."""
    scores = ad.softmax_rows(attn.node_mlp.forward(h))
    return ad.slice_cols(scores, 0, 1), ad.slice_cols(scores, 1, 2)


def edge_attention(attn: AttentionParams, h: Tensor, graph: Graph,
                   symmetrize: bool = False) -> tuple[Tensor, Tensor]:
    """Per-directed-edge attention scores from the ordered concat h_i || h_j.

    The first MLP layer is evaluated as h_i @ W_top + h_j @ W_bot, which is
    the concat formulation with the work shared across edges.
    """
    src, dst = graph.directed
    d = h.values.shape[1]
    w_top = ad.slice_rows(attn.edge_mlp.w1, 0, d)
    w_bot = ad.slice_rows(attn.edge_mlp.w1, d, 2 * d)
    per_src = ad.gather_rows(ad.matmul(h, w_top), src, plan=graph.src_plan)
    per_dst = ad.gather_rows(ad.matmul(h, w_bot), dst, plan=graph.dst_plan)
    hidden = ad.relu(ad.add(ad.add(per_src, per_dst), attn.edge_mlp.b1))
    logits = ad.add(ad.matmul(hidden, attn.edge_mlp.w2), attn.edge_mlp.b2)
    scores = ad.softmax_rows(logits)
    if symmetrize:
        e = len(graph.edges)
        swap = np.concatenate([np.arange(e, 2 * e), np.arange(e)])
        scores = ad.scale(ad.add(scores, ad.gather_rows(scores, swap)), 0.5)
    return ad.slice_cols(scores, 0, 1), ad.slice_cols(scores, 1, 2)


def build_masks(alpha_c: Tensor, beta_c: Tensor, graph: Graph) -> MaskSet:
    """Causal masks are the causal attention scores; complements are 1 - M."""
    if alpha_c.values.shape != (graph.n, 1):
        raise ValueError("need one node attention score per node")
    ones_n = Tensor(np.ones((graph.n, 1)))
    ones_e = Tensor(np.ones(beta_c.values.shape))
    return MaskSet(node=alpha_c, edge=beta_c,
                   node_bar=ad.sub(ones_n, alpha_c),
                   edge_bar=ad.sub(ones_e, beta_c))


def _attended_forward(model: CalModel, graph: Graph, node_mask: Tensor,
                      edge_mask: Tensor, conv, clf) -> tuple[Tensor, Tensor]:
    x_masked = ad.mul(Tensor(graph.x), node_mask)
    if model.backbone == "gcn":
        h = gcn_layer_masked(conv, graph, edge_mask, x_masked)
    else:
        h = gin_layer(conv, graph, edge_mask, x_masked)
    h_g = readout_mean(h)
    return h_g, clf.forward(h_g)


def causal_forward(model: CalModel, graph: Graph, masks: MaskSet) -> tuple[Tensor, Tensor]:
    """Representation and logits of the causal attended-graph."""
    return _attended_forward(model, graph, masks.node, masks.edge,
                             model.head.conv_c, model.head.clf_c)


def trivial_forward(model: CalModel, graph: Graph, masks: MaskSet) -> tuple[Tensor, Tensor]:
    """Representation and logits of the complementary trivial attended-graph."""
    return _attended_forward(model, graph, masks.node_bar, masks.edge_bar,
                             model.head.conv_t, model.head.clf_t)


def intervene_predict(model: CalModel, h_c: Tensor, h_t: Tensor) -> Tensor:
    """Logits for a causal representation paired with a foreign trivial one."""
    if h_c.values.shape != h_t.values.shape:
        raise ValueError(f"representation shapes differ: {h_c.values.shape}"
                         f" vs {h_t.values.shape}")
    return model.intervention_clf.forward(ad.add(h_c, h_t))


def graph_masks(model: CalModel, graph: Graph) -> tuple[Tensor, MaskSet]:
    """Encoder + attention + mask construction for one graph."""
    h = encoder_forward(model.encoder, graph)
    alpha_c, _ = node_attention(model.attn, h)
    beta_c, _ = edge_attention(model.attn, h, graph, symmetrize=model.sym_edges)
    return h, build_masks(alpha_c, beta_c, graph)


def vanilla_logits(model: CalModel, graph: Graph) -> Tensor:
    """Plain backbone path: encoder, mean readout, single classifier."""
    return model.head.clf_c.forward(readout_mean(encoder_forward(model.encoder, graph)))


def inference_logits(model: CalModel, graph: Graph) -> np.ndarray:
    if model.cal_enabled:
        _, masks = graph_masks(model, graph)
        _, z_c = causal_forward(model, graph, masks)
        return z_c.values[0]
    return vanilla_logits(model, graph).values[0]


def predict(model: CalModel, graph: Graph) -> int:
    """Predicted class; ties break toward the lowest class index."""
    return int(np.argmax(inference_logits(model, graph)))


def attention_record(model: CalModel, graph: Graph, graph_id: int | None = None) -> dict:
    """Raw attention scores for export: node -> alpha_c, directed edge -> beta_c."""
    h = encoder_forward(model.encoder, graph)
    alpha_c, _ = node_attention(model.attn, h)
    beta_c, _ = edge_attention(model.attn, h, graph, symmetrize=model.sym_edges)
    src, dst = graph.directed
    return {
        "graph_id": graph_id,
        "num_nodes": graph.n,
        "nodes": [{"node": int(i), "alpha_c": float(alpha_c.values[i, 0])}
                  for i in range(graph.n)],
        "edges": [{"src": int(s), "dst": int(t), "beta_c": float(beta_c.values[k, 0])}
                  for k, (s, t) in enumerate(zip(src, dst))],
    }
