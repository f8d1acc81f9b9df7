"""Small synthetic corpora: templated sentences with matching scene graphs."""

from __future__ import annotations

import itertools
import json

import numpy as np

from .tensor import SeededRng

OBJECTS = ("man", "woman", "dog", "cat", "horse", "bike", "car", "table", "ball", "tree", "boy", "girl")
ATTRIBUTES = ("red", "small", "big", "white", "black", "young", "old", "wooden")
PREDICATES = ("riding", "on", "near", "holding", "behind", "under")


def _graph(objs, rels, feats=None):
    g = {"objects": [], "relationships": []}
    for k, (label, attrs) in enumerate(objs):
        node = {"label": label, "attributes": list(attrs)}
        if feats is not None:
            node["feature"] = feats[("o", k)]
        g["objects"].append(node)
    for k, (s, p, o) in enumerate(rels):
        rel = {"subject": s, "predicate": p, "object": o}
        if feats is not None:
            rel["feature"] = feats[("r", k)]
        g["relationships"].append(rel)
    return g


def _candidates():
    for o1, a1, p, o2 in itertools.product(OBJECTS, ATTRIBUTES, PREDICATES, OBJECTS):
        if o1 == o2:
            continue
        yield ("a", a1, o1, p, "a", o2), [(o1, [a1]), (o2, [])], [(0, p, 1)]
        yield ("a", o1, p, "a", a1, o2), [(o1, []), (o2, [a1])], [(0, p, 1)]
    for o1, a1 in itertools.product(OBJECTS, ATTRIBUTES):
        yield ("a", a1, o1), [(o1, [a1])], []


def make_rows(n: int, seed: int = 0, feat_dim: int | None = None) -> list[dict]:
    """``n`` distinct records; ``feat_dim`` adds image graphs with Gaussian RoI features."""
    rng = SeededRng(seed)
    pool = list(_candidates())
    if n > len(pool):
        raise ValueError(f"at most {len(pool)} distinct records available")
    rows = []
    for idx in rng.permutation(len(pool))[:n]:
        sent, objs, rels = pool[int(idx)]
        row = {"id": f"syn{len(rows)}", "sentence": list(sent), "sentence_graph": _graph(objs, rels)}
        if feat_dim:
            feats = {("o", k): [float(x) for x in rng.normal(feat_dim)] for k in range(len(objs))}
            feats.update({("r", k): [float(x) for x in rng.normal(feat_dim)] for k in range(len(rels))})
            row["image_graph"] = _graph(objs, rels, feats)
        rows.append(row)
    return rows


def write_jsonl(path, rows) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")


def feature_matrix(rows) -> np.ndarray:
    """All RoI features stacked; handy for sanity checks."""
    out = []
    for r in rows:
        g = r.get("image_graph") or {}
        out += [o["feature"] for o in g.get("objects", [])]
        out += [x["feature"] for x in g.get("relationships", [])]
    return np.asarray(out)
