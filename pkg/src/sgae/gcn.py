"""Sentence scene-graph encoder: spatial graph convolutions over label embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .graph import SceneGraph
from .layers import Affine, Module
from .tensor import SeededRng, Tensor


@dataclass
class GraphEmbeddings:
    """Per-node outputs of one graph convolution pass.

    ``flat`` orders objects by index, then relationships by index, then
    attribute embeddings by owning object index.
    """

    x_o: list[Tensor]
    x_r: list[Tensor]
    x_a: list[Tensor]
    attr_owner: list[int]

    @property
    def flat(self) -> list[Tensor]:
        return self.x_o + self.x_r + self.x_a

    def matrix(self) -> Tensor:
        return T.stack(self.flat)


GcnOutput = GraphEmbeddings


def relationship_embedding(g_r: Callable, e_oi: Tensor, e_rij: Tensor, e_oj: Tensor) -> Tensor:
    return g_r(T.concat([e_oi, e_rij, e_oj]))


def attribute_embedding(g_a: Callable, e_oi: Tensor, attribute_embeddings: Sequence[Tensor]) -> Tensor:
    if not attribute_embeddings:
        raise ValueError("attribute embedding needs at least one attribute")
    return T.mean_rows([g_a(T.concat([e_oi, e_a])) for e_a in attribute_embeddings])


def object_embedding(g_s: Callable, g_o: Callable, graph: SceneGraph, i: int,
                     e_o: Sequence[Tensor], e_r: Sequence[Tensor]) -> Tensor:
    """Average of subject-role and object-role messages; isolated objects pass through."""
    if not 0 <= i < len(graph.objects):
        raise IndexError(f"object {i} not in graph")
    terms = [g_s(T.concat([e_o[i], e_o[j], e_r[k]])) for j, k in graph.as_subject(i)]
    terms += [g_o(T.concat([e_o[k], e_o[i], e_r[m]])) for k, m in graph.as_object(i)]
    if not terms:
        return e_o[i]
    return T.mean_rows(terms)


def convolve(graph: SceneGraph, e_o: Sequence[Tensor], e_r: Sequence[Tensor],
             e_a: Sequence[Sequence[Tensor]], f_r, f_a, f_s, f_o) -> GraphEmbeddings:
    """Relationship, attribute and object embeddings from node vectors."""
    if not graph.objects:
        raise ValueError("graph has no objects")
    x_r = [relationship_embedding(f_r, e_o[r.subject_index], e_r[k], e_o[r.object_index])
           for k, r in enumerate(graph.relationships)]
    x_a, owners = [], []
    for i, attrs in enumerate(e_a):
        if attrs:
            x_a.append(attribute_embedding(f_a, e_o[i], attrs))
            owners.append(i)
    x_o = [object_embedding(f_s, f_o, graph, i, e_o, e_r) for i in range(len(graph.objects))]
    return GraphEmbeddings(x_o, x_r, x_a, owners)


class GCN(Module):
    """Label embedding matrix plus the four convolution functions g_r, g_a, g_s, g_o."""

    def __init__(self, rng: SeededRng, num_symbols: int, d: int = 32, dtype=np.float64):
        super().__init__()
        self.d, self.num_symbols = d, num_symbols
        self.W_sym = self.add_param("W_sym", rng.normal((d, num_symbols), std=1.0 / np.sqrt(d), dtype=dtype))
        self.g_r = self.add_child("g_r", Affine(rng, 3 * d, d, dtype=dtype))
        self.g_a = self.add_child("g_a", Affine(rng, 2 * d, d, dtype=dtype))
        self.g_s = self.add_child("g_s", Affine(rng, 3 * d, d, dtype=dtype))
        self.g_o = self.add_child("g_o", Affine(rng, 3 * d, d, dtype=dtype))

    def embed_label(self, label_id: int) -> Tensor:
        return T.column(self.W_sym, label_id)

    def __call__(self, graph: SceneGraph) -> GraphEmbeddings:
        return gcn_forward(self, graph)


def gcn_forward(params: GCN, graph: SceneGraph) -> GraphEmbeddings:
    e_o = [params.embed_label(o.label_id) for o in graph.objects]
    e_r = [params.embed_label(r.predicate_id) for r in graph.relationships]
    e_a = [[params.embed_label(a) for a in o.attribute_ids] for o in graph.objects]
    return convolve(graph, e_o, e_r, e_a, params.g_r, params.g_a, params.g_s, params.g_o)
