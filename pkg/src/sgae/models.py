"""The two encoder-decoder pipelines that share one dictionary."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .decoder import Decoder
from .dictionary import DictionaryMemory, init_dictionary
from .gcn import GCN
from .graph import CorpusRecord
from .layers import Module
from .mgcn import MGCN
from .tensor import SeededRng, Tensor


class SGAEModel(Module):
    """Sentence scene graph -> GCN -> (optional) dictionary -> decoder."""

    def __init__(self, rng: SeededRng, num_symbols: int, vocab_size: int, d: int = 32, K: int = 64,
                 att_dim: int = 32, dtype=np.float64):
        super().__init__()
        self.gcn = self.add_child("gcn", GCN(rng, num_symbols, d, dtype=dtype))
        self.dictionary = self.add_child("dictionary", init_dictionary(rng, d, K, dtype=dtype))
        self.decoder = self.add_child("decoder", Decoder(rng, vocab_size, d, d, att_dim, dtype=dtype))

    def embeddings(self, record: CorpusRecord, use_dictionary: bool = True) -> Tensor:
        if record.sentence_graph is None:
            raise ValueError(f"record {record.id!r} has no sentence graph")
        X = self.gcn(record.sentence_graph).matrix()
        return self.dictionary.reencode_rows(X) if use_dictionary else X


class CaptionerModel(Module):
    """Image scene graph + RoI features -> MGCN -> [v', dictionary(v')] -> decoder."""

    def __init__(self, rng: SeededRng, num_symbols: int, vocab_size: int, d: int = 32, K: int = 64,
                 att_dim: int = 32, feat_dim: int = 16, dictionary: DictionaryMemory | None = None,
                 dtype=np.float64):
        super().__init__()
        self.mgcn = self.add_child("mgcn", MGCN(rng, num_symbols, d, feat_dim, dtype=dtype))
        if dictionary is None:
            dictionary = init_dictionary(rng, d, K, dtype=dtype)
        if dictionary.d != d:
            raise ValueError(f"dictionary has d={dictionary.d}, model has d={d}")
        self.dictionary = self.add_child("dictionary", dictionary)
        self.decoder = self.add_child("decoder", Decoder(rng, vocab_size, d, 2 * d, att_dim, dtype=dtype))

    def embeddings(self, record: CorpusRecord, use_dictionary: bool = True) -> Tensor:
        if record.image_graph is None:
            raise ValueError(f"record {record.id!r} has no image graph")
        Vp = self.mgcn(record.image_graph).matrix()
        Vh = self.dictionary.reencode_rows(Vp)
        return T.concat([Vp, Vh], axis=1)
