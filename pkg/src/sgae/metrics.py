"""BLEU and CIDEr-D over token sequences.

Tokens may be strings or ids; anything hashable works. Reserved ids
(BOS/EOS/PAD) are stripped before counting when sequences are integer ids.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Sequence

from .graph import BOS, BOS_ID, EOS, EOS_ID, PAD, PAD_ID

_SKIP = {BOS_ID, EOS_ID, PAD_ID, BOS, EOS, PAD}


def clean(tokens: Sequence[Hashable]) -> tuple:
    return tuple(t for t in tokens if not _is_reserved(t))


def _is_reserved(t) -> bool:
    try:
        return t in _SKIP and not isinstance(t, bool)
    except TypeError:
        return False


def ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def profile(tokens: Sequence[Hashable], max_n: int = 4) -> dict[int, Counter]:
    return {n: ngrams(tokens, n) for n in range(1, max_n + 1)}


def modified_precision(candidate, references, n: int) -> tuple[int, int]:
    """(clipped matches, total candidate n-grams)."""
    cand = ngrams(candidate, n)
    max_ref = Counter()
    for ref in references:
        for g, c in ngrams(ref, n).items():
            max_ref[g] = max(max_ref[g], c)
    clipped = sum(min(c, max_ref[g]) for g, c in cand.items())
    return clipped, sum(cand.values())


def bleu(candidate, references, max_n: int = 4) -> float:
    """Sentence BLEU with uniform weights and the closest-length brevity penalty."""
    candidate = clean(candidate)
    references = [clean(r) for r in references]
    if not references:
        raise ValueError("bleu needs at least one reference")
    c_len = len(candidate)
    if c_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        hit, total = modified_precision(candidate, references, n)
        if hit == 0 or total == 0:
            return 0.0
        log_p += math.log(hit / total) / max_n
    r_len = min((abs(len(r) - c_len), len(r)) for r in references)[1]
    bp = min(1.0, math.exp(1.0 - r_len / c_len))
    return math.exp(log_p) * bp


@dataclass
class DocumentFrequency:
    """Per n-gram count of reference groups containing it."""

    counts: dict[tuple, int] = field(default_factory=dict)
    num_groups: int = 0
    max_n: int = 4

    @property
    def log_n(self) -> float:
        return math.log(float(self.num_groups))

    def idf(self, gram: tuple) -> float:
        # unseen n-grams get df guarded up to 1
        return self.log_n - math.log(max(1.0, float(self.counts.get(gram, 0))))

    def to_json(self) -> str:
        return json.dumps({"num_groups": self.num_groups, "max_n": self.max_n,
                           "counts": [[list(g), c] for g, c in sorted(self.counts.items(), key=repr)]})

    @classmethod
    def from_json(cls, s: str) -> "DocumentFrequency":
        d = json.loads(s)
        return cls({tuple(g): c for g, c in d["counts"]}, d["num_groups"], d["max_n"])


def build_df(reference_corpus: Sequence[Sequence[Sequence[Hashable]]], max_n: int = 4) -> DocumentFrequency:
    """Document frequencies where a document is one group of references."""
    counts: dict[tuple, int] = defaultdict(int)
    for refs in reference_corpus:
        grams = set()
        for ref in refs:
            ref = clean(ref)
            for n in range(1, max_n + 1):
                grams.update(ngrams(ref, n))
        for g in grams:
            counts[g] += 1
    return DocumentFrequency(dict(counts), len(reference_corpus), max_n)


def _tfidf(tokens, df: DocumentFrequency):
    vecs, norms = [], []
    for n in range(1, df.max_n + 1):
        vec = {g: c * df.idf(g) for g, c in ngrams(tokens, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider_d(candidate, references, df: DocumentFrequency, sigma: float = 6.0) -> float:
    """Clipped tf-idf cosine with Gaussian length penalty, averaged over n and refs, times 10."""
    if df.num_groups == 0:
        raise ValueError("empty document-frequency table")
    if not references:
        raise ValueError("cider_d needs at least one reference")
    candidate = clean(candidate)
    c_vec, c_norm = _tfidf(candidate, df)
    total = 0.0
    for ref in references:
        ref = clean(ref)
        r_vec, r_norm = _tfidf(ref, df)
        delta = len(candidate) - len(ref)
        penalty = math.exp(-(delta * delta) / (2.0 * sigma * sigma))
        per_n = 0.0
        for n in range(df.max_n):
            if c_norm[n] == 0.0 or r_norm[n] == 0.0:
                continue
            dot = sum(min(v, r_vec[n][g]) * r_vec[n][g] for g, v in c_vec[n].items() if g in r_vec[n])
            per_n += penalty * dot / (c_norm[n] * r_norm[n])
        total += per_n / df.max_n
    return 10.0 * total / len(references)


def corpus_scores(hyps: dict, refs: dict, df: DocumentFrequency | None = None) -> dict:
    """Per-item and mean BLEU@1..4 and CIDEr-D for aligned id -> tokens maps."""
    if set(hyps) != set(refs):
        raise KeyError("hypothesis and reference ids differ")
    ids = sorted(hyps, key=str)
    if df is None:
        df = build_df([refs[i] for i in ids])
    items = []
    for i in ids:
        row = {"id": i}
        for n in range(1, 5):
            row[f"bleu{n}"] = bleu(hyps[i], refs[i], max_n=n)
        row["cider_d"] = cider_d(hyps[i], refs[i], df)
        items.append(row)
    keys = ["bleu1", "bleu2", "bleu3", "bleu4", "cider_d"]
    mean = {k: sum(r[k] for r in items) / len(items) for k in keys}
    return {"items": items, "mean": mean}
