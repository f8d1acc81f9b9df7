"""Two-LSTM attention decoder with greedy, beam and sampling decoders.

The same class serves the sentence auto-encoder (attending over re-encoded
graph embeddings) and the captioner (attending over ``[v', v_hat]`` rows);
only the attended width ``d_z`` differs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import BOS_ID, EOS_ID
from .layers import LSTMCell, Module, gaussian_init
from .tensor import SeededRng, Tensor


@dataclass
class DecoderState:
    h1: Tensor
    c1: Tensor
    h2: Tensor
    c2: Tensor

    @classmethod
    def zeros(cls, d: int, dtype=np.float64) -> "DecoderState":
        z = lambda: Tensor(np.zeros(d, dtype=dtype))  # noqa: E731
        return cls(z(), z(), z(), z())


@dataclass
class EmbeddingSet:
    """Attended rows Z (M, d_z) with cached mean and projection."""

    Z: Tensor
    z_bar: Tensor
    ZW: Tensor

    @property
    def M(self) -> int:
        return self.Z.shape[0]


class Decoder(Module):
    def __init__(self, rng: SeededRng, vocab_size: int, d: int = 32, d_z: int | None = None,
                 att_dim: int = 32, dtype=np.float64):
        super().__init__()
        d_z = d if d_z is None else d_z
        self.V, self.d, self.d_z, self.att_dim = vocab_size, d, d_z, att_dim
        self.W_word = self.add_param("W_word", rng.normal((d, vocab_size), std=1.0 / np.sqrt(d), dtype=dtype))
        self.lstm1 = self.add_child("lstm1", LSTMCell(rng, d + d_z + d, d, dtype=dtype))
        self.lstm2 = self.add_child("lstm2", LSTMCell(rng, d + d_z, d, dtype=dtype))
        self.w_a = self.add_param("w_a", rng.normal(att_dim, std=1.0 / np.sqrt(att_dim), dtype=dtype))
        self.W_z = self.add_param("W_z", gaussian_init(rng, att_dim, d_z, dtype))
        self.W_h = self.add_param("W_h", gaussian_init(rng, att_dim, d, dtype))
        self.W_p = self.add_param("W_p", gaussian_init(rng, vocab_size, d, dtype))
        self.b_p = self.add_param("b_p", np.zeros(vocab_size, dtype=dtype))

    @property
    def dtype(self):
        return self.W_p.dtype

    def embedding_set(self, Z: Tensor) -> EmbeddingSet:
        if Z.data.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] != self.d_z:
            raise T.DimensionError(f"embedding set must be (M >= 1, {self.d_z}), got {Z.shape}")
        return EmbeddingSet(Z, T.mean_axis0(Z), T.matmul(Z, T.transpose(self.W_z)))

    def initial_state(self) -> DecoderState:
        return DecoderState.zeros(self.d, self.dtype)

    def step_logits(self, prev_word_id: int, zs: EmbeddingSet, state: DecoderState):
        """(logits, new state, attention weights) for one time step."""
        if not 0 <= prev_word_id < self.V:
            raise IndexError(f"word id {prev_word_id} outside vocabulary of {self.V}")
        e = T.column(self.W_word, prev_word_id)
        i_t = T.concat([e, zs.z_bar, state.h2])
        h1, c1 = self.lstm1(i_t, state.h1, state.c1)
        scores = T.matmul(T.tanh(zs.ZW + T.broadcast_rows(T.matmul(self.W_h, h1), zs.M)), self.w_a)
        beta = T.softmax(scores)
        z_hat = T.matmul(T.transpose(zs.Z), beta)
        h2, c2 = self.lstm2(T.concat([h1, z_hat]), state.h2, state.c2)
        logits = T.matmul(self.W_p, h2) + self.b_p
        return logits, DecoderState(h1, c1, h2, c2), beta

    def step(self, prev_word_id: int, zs: EmbeddingSet | Tensor, state: DecoderState):
        """(P_t, new state, beta)."""
        if isinstance(zs, Tensor):
            zs = self.embedding_set(zs)
        logits, new_state, beta = self.step_logits(prev_word_id, zs, state)
        return T.softmax(logits), new_state, beta

    def teacher_forced_log_probs(self, Z: Tensor, target: tuple[int, ...]) -> Tensor:
        """(T, V) log-probabilities with ground-truth previous tokens fed in."""
        zs = self.embedding_set(Z)
        state = self.initial_state()
        prev = BOS_ID
        rows = []
        for tok in target:
            logits, state, _ = self.step_logits(prev, zs, state)
            rows.append(T.log_softmax(logits))
            prev = tok
        return T.stack(rows)


step = Decoder.step


@dataclass(order=True)
class Hypothesis:
    """A decoded sequence. ``tokens`` excludes the EOS; ``finished`` says whether one was emitted."""

    log_prob: float
    tokens: tuple[int, ...] = field(compare=False)
    finished: bool = field(compare=False, default=False)

    @property
    def with_eos(self) -> tuple[int, ...]:
        return self.tokens + ((EOS_ID,) if self.finished else ())


def _log_probs(dec: Decoder, prev: int, zs: EmbeddingSet, state: DecoderState):
    logits, state, _ = dec.step_logits(prev, zs, state)
    z = logits.data - logits.data.max()
    return z - np.log(np.exp(z).sum()), state


@T.no_grad()
def decode_greedy(dec: Decoder, Z: Tensor, max_len: int = 16, bos_id: int = BOS_ID,
                  eos_id: int = EOS_ID) -> Hypothesis:
    """Argmax decoding; ties go to the lowest token id."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    zs = dec.embedding_set(Z)
    state = dec.initial_state()
    prev, tokens, total = bos_id, [], 0.0
    for _ in range(max_len):
        lp, state = _log_probs(dec, prev, zs, state)
        tok = int(np.argmax(lp))
        total += float(lp[tok])
        if tok == eos_id:
            return Hypothesis(total, tuple(tokens), True)
        tokens.append(tok)
        prev = tok
    return Hypothesis(total, tuple(tokens), False)


def _beam_key(h: Hypothesis):
    return (-h.log_prob, h.with_eos)


@T.no_grad()
def decode_beam(dec: Decoder, Z: Tensor, width: int = 5, max_len: int = 16, bos_id: int = BOS_ID,
                eos_id: int = EOS_ID, length_normalize: bool = False) -> list[Hypothesis]:
    """Length-synchronous beam search over summed log-probabilities.

    Hypotheses that emit EOS are retired to a completed pool and no longer
    occupy a beam slot. Ranking is by log-prob, ties broken by the
    lexicographically smaller token sequence.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    zs = dec.embedding_set(Z)
    alive = [(Hypothesis(0.0, ()), bos_id, dec.initial_state())]
    done: list[Hypothesis] = []
    for t in range(max_len):
        cands = []
        for hyp, prev, state in alive:
            lp, new_state = _log_probs(dec, prev, zs, state)
            # only a parent's best width+1 children can survive this round
            for tok in np.lexsort((np.arange(dec.V), -lp))[:width + 1]:
                tok = int(tok)
                score = hyp.log_prob + float(lp[tok])
                if tok == eos_id:
                    cands.append((Hypothesis(score, hyp.tokens, True), tok, None))
                else:
                    cands.append((Hypothesis(score, hyp.tokens + (tok,)), tok, new_state))
        cands.sort(key=lambda c: _beam_key(c[0]))
        alive = []
        for hyp, tok, state in cands:
            if len(alive) >= width:
                break
            if hyp.finished:
                done.append(hyp)
            else:
                alive.append((hyp, tok, state))
        if not alive:
            break
        if done and not length_normalize:
            # log-probs only decrease, so no live hypothesis can overtake the best retired one
            best_done = min(done, key=_beam_key)
            if best_done.log_prob >= alive[0][0].log_prob and len(done) >= width:
                break
    done.extend(h for h, _, _ in alive)
    if length_normalize:
        return sorted(done, key=lambda h: (-h.log_prob / max(1, len(h.with_eos)), h.with_eos))
    return sorted(done, key=_beam_key)


@T.no_grad()
def decode_sample(dec: Decoder, Z: Tensor, rng: SeededRng, max_len: int = 16, bos_id: int = BOS_ID,
                  eos_id: int = EOS_ID) -> tuple[Hypothesis, list[float]]:
    """Multinomial sampling; returns the sequence and per-step log-probs."""
    zs = dec.embedding_set(Z)
    state = dec.initial_state()
    prev, tokens, steps = bos_id, [], []
    for _ in range(max_len):
        lp, state = _log_probs(dec, prev, zs, state)
        tok = rng.choice(np.exp(lp))
        steps.append(float(lp[tok]))
        if tok == eos_id:
            return Hypothesis(sum(steps), tuple(tokens), True), steps
        tokens.append(tok)
        prev = tok
    return Hypothesis(sum(steps), tuple(tokens), False), steps


@T.no_grad()
def sequence_log_prob(dec: Decoder, Z: Tensor, tokens: tuple[int, ...]) -> float:
    """Total log-prob of an explicit token sequence (EOS included if present)."""
    zs = dec.embedding_set(Z)
    state = dec.initial_state()
    prev, total = BOS_ID, 0.0
    for tok in tokens:
        lp, state = _log_probs(dec, prev, zs, state)
        total += float(lp[tok])
        prev = tok
    return total
