import numpy as np
import pytest

from sgae import graph as G
from sgae import synthetic
from sgae.tensor import SeededRng


@pytest.fixture
def rng():
    return SeededRng(1234)


@pytest.fixture
def nprng():
    return np.random.default_rng(0)


def tiny_graph():
    """Two objects, one relationship, one attribute on the subject."""
    return G.SceneGraph(
        (G.ObjectNode(4, (6,)), G.ObjectNode(5, ())),
        (G.RelationshipEdge(0, 1, 7),),
    )


@pytest.fixture
def graph2():
    return tiny_graph()


@pytest.fixture
def syn_corpus(tmp_path):
    """Writes a synthetic corpus; returns (path, rows, vocabs)."""
    def make(n=8, feat_dim=None, seed=0):
        rows = synthetic.make_rows(n, seed=seed, feat_dim=feat_dim)
        path = tmp_path / f"corpus_{n}_{feat_dim}_{seed}.jsonl"
        synthetic.write_jsonl(path, rows)
        return path, rows, G.build_vocabs(rows, 1, 1, 1)
    return make
