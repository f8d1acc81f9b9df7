"""Scene graphs, vocabularies and the JSON Lines corpus format.

A scene graph holds objects (each with a label and zero or more
attributes) and directed subject-predicate-object relationships. Labels are
strings on disk and vocabulary ids in memory.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

BOS, EOS, UNK, PAD = "<bos>", "<eos>", "<unk>", "<pad>"
RESERVED = (BOS, EOS, UNK, PAD)
BOS_ID, EOS_ID, UNK_ID, PAD_ID = 0, 1, 2, 3

DEFAULT_FEAT_DIM = 2048
DEFAULT_MAX_LEN = 16


class CorpusError(ValueError):
    """Malformed corpus input."""


@dataclass(frozen=True)
class ObjectNode:
    label_id: int
    attribute_ids: tuple[int, ...] = ()
    roi_feature: np.ndarray | None = field(default=None, compare=False)


@dataclass(frozen=True)
class RelationshipEdge:
    subject_index: int
    object_index: int
    predicate_id: int
    roi_feature: np.ndarray | None = field(default=None, compare=False)


@dataclass(frozen=True)
class SceneGraph:
    objects: tuple[ObjectNode, ...]
    relationships: tuple[RelationshipEdge, ...] = ()

    def edges(self) -> list[tuple[tuple[str, int, int], tuple[str, int, int]]]:
        """Directed edges between typed nodes.

        Nodes are ``("o", i, 0)``, ``("a", i, l)`` and ``("r", k, 0)`` where
        ``k`` indexes ``relationships``.
        """
        out = []
        for i, obj in enumerate(self.objects):
            for l in range(len(obj.attribute_ids)):
                out.append((("o", i, 0), ("a", i, l)))
        for k, rel in enumerate(self.relationships):
            out.append((("o", rel.subject_index, 0), ("r", k, 0)))
            out.append((("r", k, 0), ("o", rel.object_index, 0)))
        return out

    def as_subject(self, i: int) -> list[tuple[int, int]]:
        """(object j, relationship k) for every edge o_i -r_k-> o_j."""
        return [(r.object_index, k) for k, r in enumerate(self.relationships) if r.subject_index == i]

    def as_object(self, i: int) -> list[tuple[int, int]]:
        """(subject k, relationship m) for every edge o_k -r_m-> o_i."""
        return [(r.subject_index, m) for m, r in enumerate(self.relationships) if r.object_index == i]

    def counts(self) -> tuple[int, int, int]:
        """(objects, relationships, objects carrying at least one attribute)."""
        return (len(self.objects), len(self.relationships),
                sum(1 for o in self.objects if o.attribute_ids))

    def node_count(self) -> int:
        return (len(self.objects) + len(self.relationships)
                + sum(len(o.attribute_ids) for o in self.objects))


class Vocabulary:
    """Bijective token/id map with the reserved tokens at ids 0-3."""

    def __init__(self, words: Sequence[str], kind: str = "word"):
        self.kind = kind
        self.id_to_word: list[str] = list(RESERVED) + [w for w in words if w not in RESERVED]
        self.word_to_id: dict[str, int] = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, w: str) -> bool:
        return w in self.word_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.kind == other.kind and self.id_to_word == other.id_to_word

    def encode(self, w: str) -> int:
        return self.word_to_id.get(w, UNK_ID)

    def decode(self, i: int) -> str:
        return self.id_to_word[i]

    def decode_tokens(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_word[i] for i in ids]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "reserved": dict(zip(RESERVED, range(4))),
                "tokens": self.id_to_word[4:]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        reserved = d.get("reserved", {})
        for name, idx in zip(RESERVED, range(4)):
            if reserved and reserved.get(name) != idx:
                raise CorpusError(f"reserved token {name} must have id {idx}")
        return cls(d["tokens"], kind=d.get("kind", "word"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _ranked(counts: Counter, min_count: int) -> list[str]:
    kept = [(w, c) for w, c in counts.items() if c >= min_count and w not in RESERVED]
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    return [w for w, _ in kept]


def build_word_vocab(sentences: Iterable[Sequence[str]], min_count: int = 5) -> Vocabulary:
    """Words seen fewer than ``min_count`` times fall to UNK."""
    counts = Counter()
    n = 0
    for s in sentences:
        counts.update(s)
        n += 1
    if n == 0:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(_ranked(counts, min_count), kind="word")


def graph_symbols(raw_graph: dict) -> list[str]:
    out = []
    for obj in raw_graph.get("objects", []):
        out.append(obj["label"])
        out.extend(obj.get("attributes", []))
    for rel in raw_graph.get("relationships", []):
        out.append(rel["predicate"])
    return out


def build_symbol_vocab(graphs: Iterable[dict], min_count: int = 10) -> Vocabulary:
    """Pool object, relation and attribute labels of raw (string) graphs."""
    counts = Counter()
    n = 0
    for g in graphs:
        counts.update(graph_symbols(g))
        n += 1
    if n == 0:
        raise CorpusError("cannot build a symbol vocabulary from no graphs")
    return Vocabulary(_ranked(counts, min_count), kind="sg-symbol")


def validate(graph: SceneGraph, vocab_size: int | None = None,
             feat_dim: int = DEFAULT_FEAT_DIM) -> list[str]:
    """All violations found in ``graph``; an empty list means ok."""
    problems = []
    n = len(graph.objects)
    if n == 0:
        problems.append("graph has no objects")

    def check_id(i, what):
        if i < 0 or (vocab_size is not None and i >= vocab_size):
            problems.append(f"{what} id {i} outside vocabulary of size {vocab_size}")

    def check_feat(f, what):
        if f is not None and np.shape(f) != (feat_dim,):
            problems.append(f"{what} feature has length {np.size(f)}, expected {feat_dim}")

    for i, obj in enumerate(graph.objects):
        check_id(obj.label_id, f"object {i} label")
        for l, a in enumerate(obj.attribute_ids):
            check_id(a, f"object {i} attribute {l}")
        check_feat(obj.roi_feature, f"object {i}")
    for k, rel in enumerate(graph.relationships):
        for role, idx in (("subject", rel.subject_index), ("object", rel.object_index)):
            if not 0 <= idx < n:
                problems.append(f"relationship {k}: subject/object index out of range "
                                f"({role} {idx}, {n} objects)")
        check_id(rel.predicate_id, f"relationship {k} predicate")
        check_feat(rel.roi_feature, f"relationship {k}")
    return problems


def graph_from_json(raw: dict, vocab: Vocabulary) -> SceneGraph:
    objects = []
    for obj in raw.get("objects", []):
        feat = obj.get("feature")
        objects.append(ObjectNode(
            vocab.encode(obj["label"]),
            tuple(vocab.encode(a) for a in obj.get("attributes", [])),
            None if feat is None else np.asarray(feat, dtype=np.float64)))
    rels = []
    for rel in raw.get("relationships", []):
        feat = rel.get("feature")
        rels.append(RelationshipEdge(
            int(rel["subject"]), int(rel["object"]), vocab.encode(rel["predicate"]),
            None if feat is None else np.asarray(feat, dtype=np.float64)))
    return SceneGraph(tuple(objects), tuple(rels))


def graph_to_json(graph: SceneGraph, vocab: Vocabulary) -> dict:
    objs = []
    for o in graph.objects:
        d = {"label": vocab.decode(o.label_id), "attributes": [vocab.decode(a) for a in o.attribute_ids]}
        if o.roi_feature is not None:
            d["feature"] = [float(x) for x in o.roi_feature]
        objs.append(d)
    rels = []
    for r in graph.relationships:
        d = {"subject": r.subject_index, "predicate": vocab.decode(r.predicate_id), "object": r.object_index}
        if r.roi_feature is not None:
            d["feature"] = [float(x) for x in r.roi_feature]
        rels.append(d)
    return {"objects": objs, "relationships": rels}


@dataclass
class CorpusRecord:
    sentence: tuple[int, ...]
    sentence_graph: SceneGraph | None
    image_graph: SceneGraph | None = None
    id: str = ""


@dataclass
class Vocabs:
    words: Vocabulary
    sentence_symbols: Vocabulary | None = None
    image_symbols: Vocabulary | None = None


def read_jsonl(path) -> list[dict]:
    """Parse a JSON Lines file, naming the line of any malformed record."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
    if not rows:
        raise CorpusError(f"{path}: empty corpus")
    return rows


def encode_sentence(tokens: Sequence[str], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> tuple[int, ...]:
    """Map, trim to ``max_len`` words, then terminate with EOS."""
    return tuple(vocab.encode(w) for w in tokens[:max_len]) + (EOS_ID,)


def load_corpus(path, vocabs: Vocabs, max_len: int = DEFAULT_MAX_LEN,
                feat_dim: int = DEFAULT_FEAT_DIM) -> list[CorpusRecord]:
    records = []
    for lineno, raw in enumerate(read_jsonl(path), start=1):
        sg = ig = None
        if raw.get("sentence_graph") is not None and vocabs.sentence_symbols is not None:
            sg = graph_from_json(raw["sentence_graph"], vocabs.sentence_symbols)
            bad = validate(sg, len(vocabs.sentence_symbols), feat_dim)
            if bad:
                raise CorpusError(f"{path}:{lineno}: sentence_graph invalid: " + "; ".join(bad))
        if raw.get("image_graph") is not None and vocabs.image_symbols is not None:
            ig = graph_from_json(raw["image_graph"], vocabs.image_symbols)
            bad = validate(ig, len(vocabs.image_symbols), feat_dim)
            if bad:
                raise CorpusError(f"{path}:{lineno}: image_graph invalid: " + "; ".join(bad))
        sent = encode_sentence([w.lower() for w in raw.get("sentence", [])], vocabs.words, max_len)
        records.append(CorpusRecord(sent, sg, ig, str(raw.get("id", lineno - 1))))
    return records


def record_to_json(rec: CorpusRecord, vocabs: Vocabs) -> dict:
    words = [vocabs.words.decode(i) for i in rec.sentence if i != EOS_ID]
    out = {"id": rec.id, "sentence": words}
    if rec.sentence_graph is not None:
        out["sentence_graph"] = graph_to_json(rec.sentence_graph, vocabs.sentence_symbols)
    if rec.image_graph is not None:
        out["image_graph"] = graph_to_json(rec.image_graph, vocabs.image_symbols)
    return out


def save_corpus(path, records: Sequence[CorpusRecord], vocabs: Vocabs) -> None:
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec, vocabs)) + "\n")


def build_vocabs(rows: Sequence[dict], word_min_count: int = 5, symbol_min_count: int = 10,
                 image_min_count: int = 1) -> Vocabs:
    """Vocabularies for a list of raw corpus rows."""
    words = build_word_vocab([[w.lower() for w in r.get("sentence", [])] for r in rows], word_min_count)
    sg = [r["sentence_graph"] for r in rows if r.get("sentence_graph")]
    ig = [r["image_graph"] for r in rows if r.get("image_graph")]
    return Vocabs(words,
                  build_symbol_vocab(sg, symbol_min_count) if sg else None,
                  build_symbol_vocab(ig, image_min_count) if ig else None)


def validate_rows(rows: Sequence[dict], feat_dim: int | None = None) -> list[tuple[int, str, str]]:
    """(record number, graph kind, violation) across raw rows, string labels allowed."""
    out = []
    for n, raw in enumerate(rows):
        for kind in ("sentence_graph", "image_graph"):
            g = raw.get(kind)
            if g is None:
                continue
            try:
                vocab = Vocabulary(sorted(set(graph_symbols(g))), kind="sg-symbol")
                graph = graph_from_json(g, vocab)
            except (KeyError, TypeError, ValueError) as exc:
                out.append((n, kind, f"malformed graph: {exc}"))
                continue
            dim = feat_dim
            if dim is None:
                dim = _first_feat_dim(g) or DEFAULT_FEAT_DIM
            for v in validate(graph, len(vocab), dim):
                out.append((n, kind, v))
    return out


def _first_feat_dim(g: dict) -> int | None:
    for node in list(g.get("objects", [])) + list(g.get("relationships", [])):
        if node.get("feature") is not None:
            return len(node["feature"])
    return None
