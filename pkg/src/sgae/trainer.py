"""Optimisation: Adam, the step-decay schedule, XE and self-critical losses, and
the two training pipelines (sentence auto-encoder, then captioner)."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, CheckpointError
from .decoder import Decoder, decode_greedy, decode_sample
from .dictionary import DictionaryMemory
from .graph import PAD_ID, CorpusRecord, Vocabs, Vocabulary
from .metrics import DocumentFrequency, build_df, cider_d, clean
from .models import CaptionerModel, SGAEModel
from .tensor import SeededRng, Tensor

logger = logging.getLogger(__name__)

PHASES = ("sgae-pretrain", "sgae-dict", "captioner-xe", "captioner-rl")
LOG_FIELDS = ("epoch", "phase", "lr_main", "lr_dict", "loss", "reward_mean")


class ConfigError(ValueError):
    pass


class MissingDictionaryError(CheckpointError):
    pass


@dataclass
class TrainConfig:
    phase: str = "sgae-pretrain"
    lr_main: float = 5e-4
    lr_dict: float = 5e-5
    decay_factor: float = 0.8
    decay_every: int = 5
    batch_size: int = 100
    epochs_sgae_pretrain: int = 20
    epochs_sgae_dict: int = 20
    epochs_xe: int = 20
    epochs_rl: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    d: int = 1000
    K: int = 10000
    att_dim: int = 512
    feat_dim: int = 2048
    max_len: int = 16
    word_min_count: int = 5
    symbol_min_count: int = 10
    image_min_count: int = 1
    xe_reduction: str = "mean"
    freeze_non_dict: bool = False
    target_accuracy: float | None = None
    eval_every: int = 5
    cider_sigma: float = 6.0
    rl_lr_scale: float = 1.0
    dtype: str = "float64"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lr_main <= 0 or self.lr_dict < 0:
            raise ConfigError("learning rates must be positive (lr_dict may be 0 to freeze)")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay_factor must lie in (0, 1]")
        if self.decay_every < 1 or self.batch_size < 1:
            raise ConfigError("decay_every and batch_size must be >= 1")
        if self.phase not in PHASES:
            raise ConfigError(f"unknown phase {self.phase!r}")
        if self.rl_lr_scale <= 0:
            raise ConfigError("rl_lr_scale must be positive")
        if self.xe_reduction not in ("mean", "sum"):
            raise ConfigError("xe_reduction must be 'mean' or 'sum'")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small dimensions and a faster schedule for single-core runs."""
        base = dict(d=32, K=64, att_dim=32, feat_dim=16, batch_size=8, lr_main=5e-3, lr_dict=5e-3,
                    decay_every=1000, word_min_count=1, symbol_min_count=1, image_min_count=1)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def lr_at(config: TrainConfig, epoch: int, track: str = "main") -> float:
    """Base rate times decay_factor ** floor(epoch / decay_every)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    base = config.lr_main if track == "main" else config.lr_dict
    return base * config.decay_factor ** (epoch // config.decay_every)


# --- optimiser ----------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(state: AdamState, params: "OrderedDict[str, Tensor]", grads: dict,
                lr: float | dict) -> None:
    """One bias-corrected Adam step, in place. ``lr`` may map names to rates."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise T.DimensionError(f"{name}: grad {g.shape} vs param {p.shape}")
        rate = lr[name] if isinstance(lr, dict) else lr
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if rate == 0.0:
            continue
        p.data = p.data - rate * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm and total > max_norm:
        s = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * s
    return total


# --- losses ---------------------------------------------------------------------

def xe_loss(log_probs: Tensor, target: Sequence[int], reduction: str = "mean") -> Tensor:
    """Cross-entropy of a (T, V) matrix of log-probabilities; PAD targets are ignored."""
    if log_probs.data.ndim != 2 or log_probs.shape[0] != len(target):
        raise T.DimensionError(f"{log_probs.shape} log-probs for {len(target)} targets")
    V = log_probs.shape[1]
    if any(not 0 <= t < V for t in target):
        raise IndexError("target id out of range")
    keep = [i for i, t in enumerate(target) if t != PAD_ID]
    if not keep:
        return Tensor(np.zeros((), dtype=log_probs.dtype))
    if len(keep) < len(target):
        log_probs = T.stack([log_probs[i] for i in keep])
    picked = T.gather_rows(log_probs, [target[i] for i in keep])
    total = T.sum_all(picked)
    return T.scale(total, -1.0 / len(keep) if reduction == "mean" else -1.0)


def scst_step(decoder: Decoder, Z: Tensor, target_refs: Sequence[Sequence[int]],
              reward_fn: Callable, rng: SeededRng, max_len: int = 17) -> tuple[Tensor, dict]:
    """Self-critical pseudo-loss: -(r(sample) - r(greedy)) * log P(sample)."""
    if not target_refs:
        raise ValueError("scst_step needs at least one reference")
    sample, _ = decode_sample(decoder, Z, rng, max_len)
    greedy = decode_greedy(decoder, Z, max_len)
    r_s = float(reward_fn(sample.tokens, target_refs))
    r_g = float(reward_fn(greedy.tokens, target_refs))
    adv = r_s - r_g
    info = {"reward_sample": r_s, "reward_greedy": r_g, "advantage": adv}
    if adv == 0.0:
        return Tensor(np.zeros((), dtype=Z.dtype)), info
    lp = decoder.teacher_forced_log_probs(Z, sample.with_eos)
    logp = T.sum_all(T.gather_rows(lp, list(sample.with_eos)))
    return T.scale(logp, -adv), info


def cider_reward(df: DocumentFrequency, sigma: float = 6.0) -> Callable:
    def reward(candidate, refs):
        return cider_d(candidate, refs, df, sigma)
    return reward


# --- pipelines ----------------------------------------------------------------

@dataclass
class TrainResult:
    model: object
    checkpoints: "OrderedDict[str, Checkpoint]"
    log: list[dict]
    seconds: float = 0.0

    @property
    def final(self) -> Checkpoint:
        return next(reversed(self.checkpoints.values()))


def token_accuracy(model, records: Sequence[CorpusRecord], use_dictionary: bool, max_len: int) -> float:
    """Fraction of target positions (EOS included) reproduced by greedy decoding."""
    hit = total = 0
    with T.no_grad():
        for rec in records:
            hyp = decode_greedy(model.decoder, model.embeddings(rec, use_dictionary), max_len)
            out = hyp.with_eos
            hit += sum(1 for i, t in enumerate(rec.sentence) if i < len(out) and out[i] == t)
            total += len(rec.sentence)
    return hit / max(1, total)


def mean_greedy_reward(model, records, reward_fn, max_len: int) -> float:
    vals = []
    with T.no_grad():
        for rec in records:
            hyp = decode_greedy(model.decoder, model.embeddings(rec), max_len)
            vals.append(reward_fn(hyp.tokens, [clean(rec.sentence)]))
    return float(np.mean(vals))


class _Runner:
    """Shared epoch loop for every phase."""

    def __init__(self, model, config: TrainConfig, rng: SeededRng, log_path=None):
        self.model = model
        self.config = config
        self.rng = rng
        self.adam = AdamState(config.beta1, config.beta2, config.eps)
        self.params = model.parameters()
        self.log: list[dict] = []
        self.log_path = Path(log_path) if log_path else None
        self.epoch = 0
        self.lr_scale = 1.0
        if self.log_path and not self.log_path.exists():
            with self.log_path.open("w", newline="") as fh:
                csv.writer(fh).writerow(LOG_FIELDS)

    def rates(self, freeze_non_dict: bool) -> dict:
        lm = lr_at(self.config, self.epoch, "main") * self.lr_scale
        ld = lr_at(self.config, self.epoch, "dict") * self.lr_scale
        return {n: (ld if n.startswith("dictionary.") else (0.0 if freeze_non_dict else lm))
                for n in self.params}

    def batches(self, records):
        order = self.rng.permutation(len(records))
        bs = self.config.batch_size
        for s in range(0, len(order), bs):
            yield [records[i] for i in order[s:s + bs]]

    def update(self, rates: dict) -> None:
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        clip_global_norm(grads, self.config.clip_norm)
        adam_update(self.adam, self.params, grads, rates)
        T.zero_grads(self.params.values())

    def run_epoch(self, phase: str, records, loss_fn, trainable: Callable[[str], bool] = lambda n: True,
                  freeze_non_dict: bool = False) -> dict:
        rates = self.rates(freeze_non_dict)
        rates = {n: (r if trainable(n) else 0.0) for n, r in rates.items()}
        losses, rewards = [], []
        for batch in self.batches(records):
            T.zero_grads(self.params.values())
            for rec in batch:
                with T.Tape() as tape:
                    loss, info = loss_fn(rec)
                    scaled = T.scale(loss, 1.0 / len(batch))
                if scaled.requires_grad:
                    tape.backward(scaled)
                losses.append(loss.item())
                if info and "reward_sample" in info:
                    rewards.append(info["reward_sample"])
            self.update(rates)
        row = {"epoch": self.epoch, "phase": phase,
               "lr_main": lr_at(self.config, self.epoch, "main") * self.lr_scale,
               "lr_dict": lr_at(self.config, self.epoch, "dict") * self.lr_scale,
               "loss": float(np.mean(losses)) if losses else 0.0,
               "reward_mean": float(np.mean(rewards)) if rewards else ""}
        self.log.append(row)
        if self.log_path:
            with self.log_path.open("a", newline="") as fh:
                csv.writer(fh).writerow([row[k] for k in LOG_FIELDS])
        logger.info("epoch %d %s loss=%.4f", self.epoch, phase, row["loss"])
        self.epoch += 1
        return row


def _dtype(config: TrainConfig):
    return np.float64 if config.dtype == "float64" else np.float32


def _checkpoint(model, config, runner, phase, vocabs: Vocabs) -> Checkpoint:
    extra = {"words": vocabs.words.to_dict()}
    if vocabs.sentence_symbols is not None:
        extra["sentence_symbols"] = vocabs.sentence_symbols.to_dict()
    if vocabs.image_symbols is not None:
        extra["image_symbols"] = vocabs.image_symbols.to_dict()
    extra["model"] = type(model).__name__
    return Checkpoint.from_params(model.parameters(), config=config.to_dict(), epoch=runner.epoch,
                                  phase=phase, rng_state=runner.rng.get_state(), extra=extra)


def _xe_phase(runner: _Runner, phase: str, records, epochs: int, use_dictionary: bool,
              freeze_non_dict: bool = False, trainable=lambda n: True) -> None:
    cfg = runner.config
    model = runner.model

    def loss_fn(rec):
        Z = model.embeddings(rec, use_dictionary)
        lp = model.decoder.teacher_forced_log_probs(Z, rec.sentence)
        return xe_loss(lp, rec.sentence, cfg.xe_reduction), None

    for e in range(epochs):
        runner.run_epoch(phase, records, loss_fn, trainable, freeze_non_dict)
        if cfg.target_accuracy is not None and (e + 1) % cfg.eval_every == 0:
            acc = token_accuracy(model, records, use_dictionary, cfg.max_len + 1)
            runner.log[-1]["accuracy"] = acc
            if acc >= cfg.target_accuracy:
                logger.info("%s reached accuracy %.3f after %d epochs", phase, acc, e + 1)
                break


def train_sgae(records: Sequence[CorpusRecord], vocabs: Vocabs, config: TrainConfig,
               out_dir=None) -> TrainResult:
    """Phase 1 decodes straight from the GCN embeddings; phase 2 inserts the dictionary."""
    if vocabs.sentence_symbols is None:
        raise ConfigError("sentence symbol vocabulary required")
    if not records or any(r.sentence_graph is None for r in records):
        raise ConfigError("every record needs a sentence graph")
    t0 = time.perf_counter()
    rng = SeededRng(config.seed)
    model = SGAEModel(rng, len(vocabs.sentence_symbols), len(vocabs.words), config.d, config.K,
                      config.att_dim, _dtype(config))
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    runner = _Runner(model, config, rng.spawn(1), out / "train_log.csv" if out else None)
    cps = OrderedDict()

    # phase 1: no dictionary, so D receives no gradient
    _xe_phase(runner, "sgae-pretrain", records, config.epochs_sgae_pretrain, use_dictionary=False,
              trainable=lambda n: not n.startswith("dictionary."))
    cps["sgae-pretrain"] = _checkpoint(model, config, runner, "sgae-pretrain", vocabs)
    _xe_phase(runner, "sgae-dict", records, config.epochs_sgae_dict, use_dictionary=True,
              freeze_non_dict=config.freeze_non_dict)
    cps["sgae-dict"] = _checkpoint(model, config, runner, "sgae-dict", vocabs)
    if out:
        for name, cp in cps.items():
            cp.save(out / f"{name}.ckpt")
    return TrainResult(model, cps, runner.log, time.perf_counter() - t0)


def dictionary_from_checkpoint(ckpt: Checkpoint, dtype=np.float64) -> DictionaryMemory:
    if "dictionary.D" not in ckpt.tensors:
        raise MissingDictionaryError("checkpoint lacks the dictionary tensor 'dictionary.D'")
    return DictionaryMemory(ckpt.tensors["dictionary.D"].astype(dtype))


def train_captioner(records: Sequence[CorpusRecord], vocabs: Vocabs, sgae_ckpt: Checkpoint,
                    config: TrainConfig, out_dir=None, phases: Sequence[str] = ("xe", "rl"),
                    on_phase_end: Callable | None = None) -> TrainResult:
    """XE then self-critical training, starting from the auto-encoder's dictionary.

    ``on_phase_end(phase, model)`` runs after each phase, before the next one starts.
    """
    dictionary = dictionary_from_checkpoint(sgae_ckpt, _dtype(config))
    if dictionary.d != config.d:
        raise ConfigError(f"checkpoint dictionary has d={dictionary.d}, config d={config.d}")
    if vocabs.image_symbols is None:
        raise ConfigError("image symbol vocabulary required")
    if not records or any(r.image_graph is None for r in records):
        raise ConfigError("every record needs an image graph")
    t0 = time.perf_counter()
    rng = SeededRng(config.seed)
    model = CaptionerModel(rng, len(vocabs.image_symbols), len(vocabs.words), config.d, dictionary.K,
                           config.att_dim, config.feat_dim, dictionary, _dtype(config))
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    runner = _Runner(model, config, rng.spawn(2), out / "train_log.csv" if out else None)
    cps = OrderedDict()
    if "xe" in phases:
        _xe_phase(runner, "captioner-xe", records, config.epochs_xe, use_dictionary=True)
        cps["captioner-xe"] = _checkpoint(model, config, runner, "captioner-xe", vocabs)
        if on_phase_end:
            on_phase_end("captioner-xe", model)
    if "rl" in phases:
        run_rl(runner, records, config.epochs_rl)
        cps["captioner-rl"] = _checkpoint(model, config, runner, "captioner-rl", vocabs)
        if on_phase_end:
            on_phase_end("captioner-rl", model)
    if out:
        for name, cp in cps.items():
            cp.save(out / f"{name}.ckpt")
    return TrainResult(model, cps, runner.log, time.perf_counter() - t0)


def run_rl(runner: _Runner, records, epochs: int, reward_fn: Callable | None = None) -> None:
    cfg = runner.config
    model = runner.model
    if reward_fn is None:
        reward_fn = cider_reward(build_df([[clean(r.sentence)] for r in records]), cfg.cider_sigma)
    sample_rng = runner.rng.spawn(7)
    runner.lr_scale = cfg.rl_lr_scale

    def loss_fn(rec):
        Z = model.embeddings(rec)
        return scst_step(model.decoder, Z, [clean(rec.sentence)], reward_fn, sample_rng, cfg.max_len + 1)

    for _ in range(epochs):
        runner.run_epoch("captioner-rl", records, loss_fn)


def load_vocabs(ckpt: Checkpoint) -> Vocabs:
    ex = ckpt.extra
    return Vocabs(Vocabulary.from_dict(ex["words"]),
                  Vocabulary.from_dict(ex["sentence_symbols"]) if "sentence_symbols" in ex else None,
                  Vocabulary.from_dict(ex["image_symbols"]) if "image_symbols" in ex else None)
