"""Command-line entry point: ``sgae <command> ...``.

Exit codes: 0 ok, 1 validation violations found, 2 config error, 3 data
error, 4 model/checkpoint incompatibility.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import graph as G
from .checkpoint import Checkpoint, CheckpointError
from .decoder import decode_beam, decode_greedy
from .metrics import build_df, corpus_scores
from .models import CaptionerModel, SGAEModel
from .tensor import SeededRng
from .trainer import (ConfigError, MissingDictionaryError, TrainConfig, load_vocabs, train_captioner,
                      train_sgae)

logger = logging.getLogger("sgae")

EXIT_OK, EXIT_VIOLATIONS, EXIT_CONFIG, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def resolve_config(path: str | None, preset: str = "desk", **flags) -> TrainConfig:
    """Preset defaults, overlaid by the JSON file, overlaid by flags."""
    base = TrainConfig.desk().to_dict() if preset == "desk" else TrainConfig().to_dict()
    if path:
        p = Path(path)
        if not p.exists():
            raise CliError(EXIT_CONFIG, f"config file not found: {p}")
        try:
            overlay = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"{p}: malformed JSON ({exc.msg}, line {exc.lineno})") from None
        if not isinstance(overlay, dict):
            raise CliError(EXIT_CONFIG, f"{p}: config must be a flat JSON object")
        base.update(overlay)
    base.update({k: v for k, v in flags.items() if v is not None})
    try:
        cfg = TrainConfig.from_dict(base)
    except (ConfigError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from None
    logger.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


def _read_rows(path) -> list[dict]:
    try:
        return G.read_jsonl(path)
    except (FileNotFoundError, G.CorpusError) as exc:
        raise CliError(EXIT_DATA, str(exc)) from None


def _load_records(path, vocabs, cfg) -> list[G.CorpusRecord]:
    try:
        return G.load_corpus(path, vocabs, cfg.max_len, cfg.feat_dim)
    except (FileNotFoundError, G.CorpusError) as exc:
        raise CliError(EXIT_DATA, str(exc)) from None


def _load_ckpt(path) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except FileNotFoundError:
        raise CliError(EXIT_DATA, f"checkpoint not found: {path}") from None
    except CheckpointError as exc:
        raise CliError(EXIT_MODEL, f"{path}: {exc}") from None


def _write_config(out: Path, cfg: TrainConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))


def cmd_train_sgae(args) -> int:
    cfg = resolve_config(args.config, args.preset, seed=args.seed)
    rows = _read_rows(args.corpus)
    try:
        vocabs = G.build_vocabs(rows, cfg.word_min_count, cfg.symbol_min_count, cfg.image_min_count)
    except G.CorpusError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    if vocabs.sentence_symbols is None:
        raise CliError(EXIT_DATA, f"{args.corpus}: no sentence graphs")
    vocabs.image_symbols = None
    records = _load_records(args.corpus, vocabs, cfg)
    out = Path(args.out)
    _write_config(out, cfg)
    vocabs.words.save(out / "vocab_words.json")
    vocabs.sentence_symbols.save(out / "vocab_symbols.json")
    res = train_sgae(records, vocabs, cfg, out)
    logger.info("sgae training finished in %.1fs; checkpoints in %s", res.seconds, out)
    return EXIT_OK


def cmd_train_captioner(args) -> int:
    cfg = resolve_config(args.config, args.preset, seed=args.seed)
    ckpt = _load_ckpt(args.sgae_ckpt)
    if "dictionary.D" not in ckpt.tensors:
        raise CliError(EXIT_MODEL, f"{args.sgae_ckpt}: checkpoint lacks the dictionary tensor 'dictionary.D'")
    rows = _read_rows(args.corpus)
    try:
        base = load_vocabs(ckpt)
        ig = [r["image_graph"] for r in rows if r.get("image_graph")]
        if not ig:
            raise CliError(EXIT_DATA, f"{args.corpus}: no image graphs")
        vocabs = G.Vocabs(base.words, base.sentence_symbols, G.build_symbol_vocab(ig, cfg.image_min_count))
    except KeyError as exc:
        raise CliError(EXIT_MODEL, f"{args.sgae_ckpt}: missing vocabulary {exc}") from None
    records = _load_records(args.corpus, vocabs, cfg)
    out = Path(args.out)
    _write_config(out, cfg)
    phases = ("xe",) if args.phases == "xe-only" else ("xe", "rl")
    try:
        res = train_captioner(records, vocabs, ckpt, cfg, out, phases)
    except MissingDictionaryError as exc:
        raise CliError(EXIT_MODEL, str(exc)) from None
    except ConfigError as exc:
        raise CliError(EXIT_MODEL, str(exc)) from None
    logger.info("captioner training finished in %.1fs; checkpoints in %s", res.seconds, out)
    return EXIT_OK


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild the model a checkpoint was written from and load its tensors."""
    cfg = TrainConfig.from_dict(ckpt.config)
    vocabs = load_vocabs(ckpt)
    dtype = np.float64 if cfg.dtype == "float64" else np.float32
    kind = ckpt.extra.get("model")
    rng = SeededRng(0)
    if kind == "CaptionerModel":
        K = ckpt.tensors["dictionary.D"].shape[1]
        model = CaptionerModel(rng, len(vocabs.image_symbols), len(vocabs.words), cfg.d, K,
                               cfg.att_dim, cfg.feat_dim, dtype=dtype)
    elif kind == "SGAEModel":
        model = SGAEModel(rng, len(vocabs.sentence_symbols), len(vocabs.words), cfg.d, cfg.K,
                          cfg.att_dim, dtype=dtype)
    else:
        raise CheckpointError(f"unknown model kind {kind!r}")
    ckpt.restore_into(model.parameters())
    return model, vocabs, cfg


def cmd_infer(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    try:
        model, vocabs, cfg = model_from_checkpoint(ckpt)
    except (CheckpointError, KeyError, ConfigError) as exc:
        raise CliError(EXIT_MODEL, f"{args.ckpt}: {exc}") from None
    captioner = isinstance(model, CaptionerModel)
    rows = _read_rows(args.input)
    out = sys.stdout
    for n, raw in enumerate(rows):
        key = "image_graph" if captioner else "sentence_graph"
        sym = vocabs.image_symbols if captioner else vocabs.sentence_symbols
        if raw.get(key) is None:
            raise CliError(EXIT_DATA, f"{args.input}: record {n} has no {key}")
        g = G.graph_from_json(raw[key], sym)
        bad = G.validate(g, len(sym), cfg.feat_dim)
        if bad:
            code = EXIT_MODEL if any("feature has length" in b for b in bad) else EXIT_DATA
            raise CliError(code, f"{args.input}: record {n}: " + "; ".join(bad))
        rec = G.CorpusRecord((), None if captioner else g, g if captioner else None, str(raw.get("id", n)))
        Z = model.embeddings(rec)
        steps = args.max_len
        if args.beam <= 1:
            hyps = [decode_greedy(model.decoder, Z, steps)]
        else:
            hyps = decode_beam(model.decoder, Z, args.beam, steps)
        best = hyps[0]
        out.write(json.dumps({
            "id": rec.id,
            "tokens": vocabs.words.decode_tokens(best.tokens),
            "log_prob": best.log_prob,
            "beam_candidates": [{"tokens": vocabs.words.decode_tokens(h.tokens), "log_prob": h.log_prob}
                                for h in hyps[:max(1, args.beam)]],
        }) + "\n")
        out.flush()
    return EXIT_OK


def _refs_of(row) -> list[list[str]]:
    if "references" in row:
        return [list(r) for r in row["references"]]
    if "sentence" in row:
        return [list(row["sentence"])]
    raise KeyError("references")


def cmd_eval(args) -> int:
    hyp_rows = _read_rows(args.hyp)
    ref_rows = _read_rows(args.refs)
    try:
        hyps = {str(r["id"]): list(r["tokens"]) for r in hyp_rows}
        refs = {str(r["id"]): _refs_of(r) for r in ref_rows}
    except KeyError as exc:
        raise CliError(EXIT_DATA, f"missing field {exc} in hypothesis/reference records") from None
    if set(hyps) != set(refs):
        missing = sorted(set(hyps) ^ set(refs))[:5]
        raise CliError(EXIT_DATA, f"id mismatch between {args.hyp} and {args.refs}: {missing}")
    ids = sorted(hyps)
    scores = corpus_scores(hyps, refs, build_df([refs[i] for i in ids]))
    text = json.dumps(scores, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text + "\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    rows = _read_rows(args.corpus)
    problems = G.validate_rows(rows, args.feat_dim)
    for n, kind, msg in problems:
        print(f"record {n} ({kind}): {msg}")
    objs = rels = attrs = 0
    freq = Counter()
    for r in rows:
        for kind in ("sentence_graph", "image_graph"):
            g = r.get(kind) or {}
            objs += len(g.get("objects", []))
            rels += len(g.get("relationships", []))
            attrs += sum(len(o.get("attributes", [])) for o in g.get("objects", []))
            try:
                freq.update(G.graph_symbols(g))
            except (KeyError, TypeError):
                pass
    print(f"records={len(rows)} objects={objs} relationships={rels} attributes={attrs} "
          f"symbols={len(freq)} violations={len(problems)}")
    for sym, c in freq.most_common(10):
        print(f"  {sym}\t{c}")
    return EXIT_VIOLATIONS if problems else EXIT_OK


def cmd_report(args) -> int:
    from .plotting import render_report
    try:
        written = render_report(args.log, args.out)
    except FileNotFoundError:
        raise CliError(EXIT_DATA, f"log not found: {args.log}") from None
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-sgae", help="train the sentence scene-graph auto-encoder")
    s.add_argument("--corpus", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--preset", choices=("desk", "full"), default="desk")
    s.set_defaults(func=cmd_train_sgae)

    s = sub.add_parser("train-captioner", help="train the captioner from an auto-encoder checkpoint")
    s.add_argument("--corpus", required=True)
    s.add_argument("--sgae-ckpt", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--phases", choices=("xe-only", "xe-rl"), default="xe-rl")
    s.add_argument("--preset", choices=("desk", "full"), default="desk")
    s.set_defaults(func=cmd_train_captioner)

    s = sub.add_parser("infer", help="caption records with beam search (JSON lines on stdout)")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--beam", type=int, default=5)
    s.add_argument("--max-len", type=int, default=G.DEFAULT_MAX_LEN)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="BLEU@1-4 and CIDEr-D for aligned hypothesis/reference files")
    s.add_argument("--hyp", required=True)
    s.add_argument("--refs", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("validate", help="check every scene graph in a corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--feat-dim", type=int)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("report", help="render figures and a summary CSV from a training log")
    s.add_argument("--log", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command.startswith("train") else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BrokenPipeError:
        # downstream reader (e.g. head) closed early; silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
