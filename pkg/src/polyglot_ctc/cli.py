"""Command-line entry point: ``polyglot-ctc <subcommand> ...``.

Exit codes: 0 success, 1 I/O error, 2 config/validation error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Corpus, SynthLanguageSpec, gen_synth_corpus, load_corpus, save_corpus
from .encoder import EncoderConfig
from .model import compute_logits, edit_distance, greedy_decode, load_model, prefix_beam_decode, save_model
from .numerics import log_softmax
from .training import (
    MODES,
    DivergenceError,
    TrainConfig,
    adapt_full,
    adapt_softmax,
    evaluate,
    finetune,
    fresh_model,
    run_sweep,
    train,
)

log = logging.getLogger("polyglot_ctc")


class ConfigError(Exception):
    pass


class RunConfig:
    """Flat ``key = value`` file; every key must be consumed or the run is rejected."""

    def __init__(self, values: dict[str, str], source: str = "<config>"):
        self.values = dict(values)
        self.source = source
        self.used: set[str] = set()

    @classmethod
    def parse(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        values: dict[str, str] = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in values:
                raise ConfigError(f"{path}:{n}: duplicate key {key!r}")
            values[key] = value
        return cls(values, str(path))

    def has(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, default=None, cast: Callable = str):
        if key not in self.values:
            if default is None:
                raise ConfigError(f"{self.source}: missing required key {key!r}")
            return default
        self.used.add(key)
        try:
            return cast(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{self.source}: bad value for {key!r}: {exc}") from None

    def prefixed(self, prefix: str) -> dict[str, str]:
        out = {}
        for k, v in self.values.items():
            if k.startswith(prefix):
                self.used.add(k)
                out[k[len(prefix) :]] = v
        return out

    def check_unused(self) -> None:
        unknown = sorted(set(self.values) - self.used)
        if unknown:
            raise ConfigError(f"{self.source}: unknown keys {', '.join(unknown)}")


def _int_pair(text: str) -> tuple[int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated integers, got {text!r}")
    return parts[0], parts[1]


def _int_list(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p.strip()]


def _float_list(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _existing_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"corpus directory not found: {path}")
    return p


def _existing_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {path}")
    return p


def _train_config(cfg: RunConfig, seed: int, mode: str) -> TrainConfig:
    mixture = {k: float(v) for k, v in cfg.prefixed("mixture.").items()} or None
    workers = cfg.get("workers", 1, int)
    try:
        return TrainConfig(
            learning_rate=cfg.get("learning_rate", 0.5, float),
            epochs=cfg.get("epochs", 30, int),
            batch_size=cfg.get("batch_size", 8, int),
            grad_clip_norm=cfg.get("grad_clip_norm", 5.0, float),
            momentum=cfg.get("momentum", 0.0, float),
            seed=seed,
            mode=mode,
            mixture=mixture,
            target_fraction=cfg.get("fraction", 1.0, float),
            fraction_seed=cfg.get("fraction_seed", 0, int),
            patience=cfg.get("patience", 3, int),
            dev_fraction=cfg.get("dev_fraction", 0.1, float),
            min_epoch_batches=cfg.get("min_epoch_batches", 0, int),
            workers=workers,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _encoder_config(cfg: RunConfig, input_dim: int) -> EncoderConfig:
    try:
        return EncoderConfig(input_dim, cfg.get("hidden_dim", 32, int), cfg.get("num_layers", 2, int))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(cfg: RunConfig, override: str | None) -> Path:
    out = Path(override) if override else Path(cfg.get("out"))
    if override:
        cfg.used.add("out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(cfg: RunConfig, override: int | None) -> int:
    if override is not None:
        cfg.used.add("seed")
        return override
    return cfg.get("seed", 0, int)


def _load_corpora(paths: list[Path]) -> list[Corpus]:
    corpora = [load_corpus(p) for p in paths]
    for c in corpora:
        if not c.utterances:
            raise ConfigError(f"corpus {c.language_id!r} is empty")
    return corpora


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# subcommands ------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    cfg = RunConfig.parse(args.config)
    out = _out_dir(cfg, args.out)
    seed = _seed(cfg, args.seed)
    pool_seed = cfg.get("pool_seed", seed, int)
    pool_size = cfg.get("pool_size", 20, int)
    feature_dim = cfg.get("feature_dim", 8, int)
    languages = cfg.get("languages", cast=_str_list)
    if len(set(languages)) != len(languages):
        raise ConfigError("duplicate language_id in 'languages'")
    specs = []
    for k, lang in enumerate(languages):
        p = f"lang.{lang}."
        try:
            spec = SynthLanguageSpec(
                lang,
                cfg.get(p + "phones", cast=_int_list),
                num_utterances=cfg.get(p + "utterances", 200, int),
                phones_per_utterance=cfg.get(p + "phones_per_utterance", (3, 8), _int_pair),
                frames_per_phone=cfg.get(p + "frames_per_phone", (2, 5), _int_pair),
                noise_std=cfg.get(p + "noise_std", 0.3, float),
                seed=cfg.get(p + "seed", 1000 * seed + k, int),
                pool_size=pool_size,
                feature_dim=feature_dim,
            )
            spec.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        specs.append(spec)
    cfg.check_unused()
    for spec in specs:
        corpus = gen_synth_corpus(spec, pool_seed)
        save_corpus(corpus, out / spec.language_id)
        print(f"{spec.language_id}\t{len(corpus)} utterances")
    return 0


def _report_train(out: Path, model, report) -> None:
    save_model(model, out / "model.pcm")
    _write_text(out / "curves.csv", report.curves_csv())
    if report.skipped_infeasible:
        print(f"skipped {report.skipped_infeasible} infeasible utterances")
    for lang, per in report.dev_per.items():
        print(f"{lang}\tdev PER {per:.4f}")


def cmd_train(args) -> int:
    cfg = RunConfig.parse(args.config)
    out = _out_dir(cfg, args.out)
    seed = _seed(cfg, args.seed)
    paths = [_existing_dir(p) for p in cfg.get("corpora", cast=_str_list)]
    mode = cfg.get("mode", "multilingual" if len(paths) > 1 else "monolingual")
    if mode not in ("monolingual", "multilingual"):
        raise ConfigError(f"train mode must be monolingual or multilingual, got {mode!r}")
    if mode == "monolingual" and len(paths) != 1:
        raise ConfigError("monolingual mode takes exactly one corpus")
    dev_paths = [_existing_dir(p) for p in cfg.get("dev_corpora", "", _str_list)] or None
    tcfg = _train_config(cfg, seed, mode)
    hidden = (cfg.get("hidden_dim", 32, int), cfg.get("num_layers", 2, int))
    cfg.check_unused()
    corpora = _load_corpora(paths)
    dev = _load_corpora(dev_paths) if dev_paths else None
    if tcfg.mixture and set(tcfg.mixture) - {c.language_id for c in corpora}:
        raise ConfigError("mixture names a language with no corpus")
    try:
        enc = EncoderConfig(corpora[0].feature_dim, *hidden)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    model = fresh_model(corpora, enc, seed)
    report = train(model, corpora, tcfg, dev=dev)
    _report_train(out, model, report)
    return 0


def cmd_finetune(args) -> int:
    cfg = RunConfig.parse(args.config)
    out = _out_dir(cfg, args.out)
    seed = _seed(cfg, args.seed)
    model_path = _existing_file(cfg.get("model"))
    corpus_path = _existing_dir(cfg.get("corpus"))
    dev_path = cfg.get("dev_corpus", "")
    dev_path = _existing_dir(dev_path) if dev_path else None
    tcfg = _train_config(cfg, seed, "finetune")
    cfg.check_unused()
    model = load_model(model_path)
    corpus = _load_corpora([corpus_path])[0]
    if corpus.language_id not in model.heads:
        raise ConfigError(f"model has no head for {corpus.language_id!r}; use adapt")
    dev = load_corpus(dev_path) if dev_path else None
    report = finetune(model, corpus, tcfg, dev=dev)
    _report_train(out, model, report)
    return 0


def cmd_adapt(args) -> int:
    cfg = RunConfig.parse(args.config)
    out = _out_dir(cfg, args.out)
    seed = _seed(cfg, args.seed)
    donor_path = _existing_file(cfg.get("donor"))
    target_path = _existing_dir(cfg.get("target"))
    dev_path = cfg.get("dev_corpus", "")
    dev_path = _existing_dir(dev_path) if dev_path else None
    mode = cfg.get("mode", "adapt_softmax")
    if mode not in ("adapt_softmax", "adapt_full"):
        raise ConfigError(f"adapt mode must be adapt_softmax or adapt_full, got {mode!r}")
    tcfg = _train_config(cfg, seed, mode)
    cfg.check_unused()
    donor = load_model(donor_path)
    target = _load_corpora([target_path])[0]
    if target.language_id in donor.heads:
        raise ConfigError(f"donor already has a head for {target.language_id!r}; use finetune")
    dev = load_corpus(dev_path) if dev_path else None
    fn = adapt_softmax if mode == "adapt_softmax" else adapt_full
    model, report = fn(donor, target, tcfg.target_fraction, tcfg, dev=dev)
    _report_train(out, model, report)
    return 0


def _decode_setup(args):
    model = load_model(_existing_file(args.model))
    corpus = load_corpus(_existing_dir(args.corpus))
    if not corpus.utterances:
        raise ConfigError(f"corpus {args.corpus} is empty")
    lang = args.language or corpus.language_id
    if lang not in model.heads:
        raise ConfigError(f"model has no head for language {lang!r}")
    if args.beam is not None and args.beam < 1:
        raise ConfigError("--beam must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return model, corpus, lang, out


def _hypotheses(model, corpus, lang, beam):
    for u in corpus.utterances:
        logits = compute_logits(model, lang, u.features)
        yield u, (greedy_decode(logits) if beam is None else prefix_beam_decode(log_softmax(logits), beam))


def cmd_decode(args) -> int:
    model, corpus, lang, out = _decode_setup(args)
    inv = model.head(lang).inventory
    lines = [f"{u.utterance_id}\t{' '.join(inv.decode(hyp))}\n" for u, hyp in _hypotheses(model, corpus, lang, args.beam)]
    _write_text(out / "hypotheses.tsv", "".join(lines))
    print(f"decoded {len(lines)} utterances")
    return 0


def cmd_eval(args) -> int:
    model, corpus, lang, out = _decode_setup(args)
    inv = model.head(lang).inventory
    if inv.phones != corpus.inventory.phones:
        raise ConfigError(f"corpus inventory does not match the {lang!r} head")
    total = None
    rows = ["utterance_id\tref\thyp\tsubstitutions\tinsertions\tdeletions\tref_length\n"]
    for u, hyp in _hypotheses(model, corpus, lang, args.beam):
        e = edit_distance(hyp, u.labels)
        total = e if total is None else total + e
        rows.append(
            f"{u.utterance_id}\t{' '.join(inv.decode(u.labels))}\t{' '.join(inv.decode(hyp))}\t"
            f"{e.substitutions}\t{e.insertions}\t{e.deletions}\t{e.ref_length}\n"
        )
    _write_text(out / "eval.tsv", "".join(rows))
    print(f"{lang}\tPER {total.per:.4f}\tS={total.substitutions} I={total.insertions} D={total.deletions} N={total.ref_length}")
    return 0


def cmd_sweep(args) -> int:
    cfg = RunConfig.parse(args.config)
    out = _out_dir(cfg, args.out)
    seed = _seed(cfg, args.seed)
    donors = {}
    for item in cfg.get("donors", cast=_str_list):
        if ":" not in item:
            raise ConfigError(f"donor entry {item!r} must be name:path")
        name, path = item.split(":", 1)
        donors[name] = _existing_file(path)
    target_path = _existing_dir(cfg.get("target"))
    dev_path = cfg.get("dev_corpus", "")
    dev_path = _existing_dir(dev_path) if dev_path else None
    fractions = cfg.get("fractions", cast=_float_list)
    if not fractions or fractions != sorted(fractions):
        raise ConfigError("fractions must be a non-empty ascending list")
    if any(not (0 < f <= 1) for f in fractions):
        raise ConfigError("fractions must lie in (0, 1]")
    mode = cfg.get("mode", "adapt_softmax")
    if mode not in ("adapt_softmax", "adapt_full"):
        raise ConfigError(f"sweep mode must be adapt_softmax or adapt_full, got {mode!r}")
    baseline = cfg.get("baseline", True, _bool)
    baseline_lr = cfg.get("baseline_learning_rate", 0.0, float)
    record_wall = cfg.get("record_wall_time", False, _bool)
    hidden = (cfg.get("hidden_dim", 32, int), cfg.get("num_layers", 2, int))
    tcfg = _train_config(cfg, seed, mode)
    cfg.check_unused()
    models = {name: load_model(p) for name, p in donors.items()}
    target = _load_corpora([target_path])[0]
    dev = load_corpus(dev_path) if dev_path else None
    report = run_sweep(models, target, fractions, mode, tcfg, dev=dev)
    if baseline:
        base = run_sweep(
            {},
            target,
            [],
            mode,
            replace(tcfg, learning_rate=baseline_lr or tcfg.learning_rate),
            baseline_config=EncoderConfig(target.feature_dim, *hidden),
            dev=dev,
        )
        report.rows.extend(base.rows)
    _write_text(out / "sweep.csv", report.to_csv(record_wall_time=record_wall))
    for r in report.rows:
        print(f"{r.donor}\t{r.mode}\t{r.fraction}\tdev PER {r.dev_per:.4f}")
    if baseline:
        for name in donors:
            cross = report.crossover(name)
            print(f"crossover\t{name}\t{'none' if cross is None else cross}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyglot-ctc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (
        ("gen-synth", cmd_gen_synth),
        ("train", cmd_train),
        ("finetune", cmd_finetune),
        ("adapt", cmd_adapt),
        ("sweep", cmd_sweep),
    ):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.set_defaults(func=fn)

    for name, fn in (("decode", cmd_decode), ("eval", cmd_eval)):
        p = sub.add_parser(name)
        p.add_argument("--model", required=True)
        p.add_argument("--corpus", required=True)
        p.add_argument("--language")
        p.add_argument("--beam", type=int, help="prefix beam width (greedy when omitted)")
        p.add_argument("--out", default="out")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}; last losses: {exc.recent_losses}", file=sys.stderr)
        return 3
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
