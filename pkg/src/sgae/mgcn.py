"""Multi-modal graph convolution over image scene graphs with RoI features."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .dictionary import DictionaryMemory
from .gcn import GraphEmbeddings, convolve
from .graph import SceneGraph
from .layers import Affine, Module, gaussian_init
from .tensor import SeededRng, Tensor

MgcnOutput = GraphEmbeddings


class MissingFeatureError(ValueError):
    pass


def fuse(W1: Tensor, W2: Tensor, e: Tensor, v: Tensor) -> Tensor:
    """relu(W1 e + W2 v) - (W1 e - W2 v)**2, elementwise."""
    if W1.shape[1] != e.shape[0] or W2.shape[1] != v.shape[0] or W1.shape[0] != W2.shape[0]:
        raise T.DimensionError(f"fuse: W1 {W1.shape} / e {e.shape}, W2 {W2.shape} / v {v.shape}")
    a = T.matmul(W1, e)
    b = T.matmul(W2, v)
    return T.relu(a + b) - T.square(a - b)


class FusionPair(Module):
    def __init__(self, rng: SeededRng, d: int, feat_dim: int, dtype=np.float64):
        super().__init__()
        self.W1 = self.add_param("W1", gaussian_init(rng, d, d, dtype))
        self.W2 = self.add_param("W2", gaussian_init(rng, d, feat_dim, dtype))

    def __call__(self, e: Tensor, v: Tensor) -> Tensor:
        return fuse(self.W1, self.W2, e, v)


class MGCN(Module):
    def __init__(self, rng: SeededRng, num_symbols: int, d: int = 32, feat_dim: int = 16,
                 dtype=np.float64):
        super().__init__()
        self.d, self.feat_dim, self.num_symbols = d, feat_dim, num_symbols
        self.W_sym = self.add_param("W_sym", rng.normal((d, num_symbols), std=1.0 / np.sqrt(d), dtype=dtype))
        self.fuse_o = self.add_child("fuse_o", FusionPair(rng, d, feat_dim, dtype))
        self.fuse_r = self.add_child("fuse_r", FusionPair(rng, d, feat_dim, dtype))
        self.fuse_a = self.add_child("fuse_a", FusionPair(rng, d, feat_dim, dtype))
        self.f_r = self.add_child("f_r", Affine(rng, 3 * d, d, dtype=dtype))
        self.f_a = self.add_child("f_a", Affine(rng, 2 * d, d, dtype=dtype))
        self.f_s = self.add_child("f_s", Affine(rng, 3 * d, d, dtype=dtype))
        self.f_o = self.add_child("f_o", Affine(rng, 3 * d, d, dtype=dtype))

    def embed_label(self, label_id: int) -> Tensor:
        return T.column(self.W_sym, label_id)

    def fused_nodes(self, graph: SceneGraph):
        """Fused node vectors (u_o, u_r, u_a per object)."""
        dt = self.W_sym.dtype
        feats_o = []
        for i, o in enumerate(graph.objects):
            if o.roi_feature is None:
                raise MissingFeatureError(f"object {i} has no roi_feature")
            feats_o.append(Tensor(np.asarray(o.roi_feature, dtype=dt)))
        u_o = [self.fuse_o(self.embed_label(o.label_id), feats_o[i]) for i, o in enumerate(graph.objects)]
        u_r = []
        for k, r in enumerate(graph.relationships):
            if r.roi_feature is None:
                raise MissingFeatureError(f"relationship {k} has no roi_feature")
            u_r.append(self.fuse_r(self.embed_label(r.predicate_id), Tensor(np.asarray(r.roi_feature, dtype=dt))))
        # attribute fusion takes the owning object's RoI feature
        u_a = [[self.fuse_a(self.embed_label(a), feats_o[i]) for a in o.attribute_ids]
               for i, o in enumerate(graph.objects)]
        return u_o, u_r, u_a

    def __call__(self, graph: SceneGraph) -> GraphEmbeddings:
        return mgcn_forward(self, graph)


def mgcn_forward(params: MGCN, image_graph: SceneGraph) -> GraphEmbeddings:
    u_o, u_r, u_a = params.fused_nodes(image_graph)
    return convolve(image_graph, u_o, u_r, u_a, params.f_r, params.f_a, params.f_s, params.f_o)


def reencode_visual(memory: DictionaryMemory, v_prime: Tensor) -> Tensor:
    """Re-encode each row of the (M, d) matrix of scene-graph-modulated features."""
    return memory.reencode_rows(v_prime)
