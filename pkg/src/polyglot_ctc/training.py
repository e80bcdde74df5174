"""SGD training in every regime: monolingual, joint multi-lingual, fine-tuning,
and cross-lingual adaptation of an unseen language (softmax-only or full).
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ctc import InfeasibleAlignment
from .data import Corpus, Utterance, select_fraction, split_dev
from .encoder import EncoderConfig
from .model import (
    ErrorCounts,
    MultiHeadModel,
    compute_logits,
    edit_distance,
    greedy_decode,
    utterance_loss_and_grads,
)

log = logging.getLogger(__name__)

MODES = ("monolingual", "multilingual", "finetune", "adapt_softmax", "adapt_full")


class DivergenceError(RuntimeError):
    def __init__(self, message: str, recent_losses: Sequence[float] = ()):
        super().__init__(message)
        self.recent_losses = list(recent_losses)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 30
    batch_size: int = 8
    grad_clip_norm: float = 5.0
    momentum: float = 0.0
    seed: int = 0
    mode: str = "multilingual"
    mixture: Mapping[str, float] | None = None
    target_fraction: float = 1.0
    fraction_seed: int = 0
    patience: int = 3
    dev_fraction: float = 0.1
    min_epoch_batches: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (0.0 < self.target_fraction <= 1.0):
            raise ValueError("target_fraction must be in (0, 1]")
        if self.mixture is not None:
            if not self.mixture:
                raise ValueError("mixture must not be empty")
            if any(w <= 0 for w in self.mixture.values()):
                raise ValueError("mixture weights must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    language: str
    mean_loss: float
    dev_loss: float
    dev_per: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    skipped_infeasible: int = 0
    wall_seconds: float = 0.0
    best_epoch: int = 0
    dev_per: dict[str, float] = field(default_factory=dict)
    model: MultiHeadModel | None = field(default=None, repr=False)

    def losses(self, language: str) -> list[float]:
        return [r.mean_loss for r in self.records if r.language == language]

    def dev_losses(self, language: str) -> list[float]:
        return [r.dev_loss for r in self.records if r.language == language]

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "language", "mean_loss", "dev_per"])
        for r in self.records:
            w.writerow([r.epoch, r.language, repr(r.mean_loss), repr(r.dev_per)])
        return buf.getvalue()


# gradient plumbing ------------------------------------------------------------


def _trainable(model: MultiHeadModel, language: str, train_encoder: bool) -> list[tuple[str, np.ndarray]]:
    head = model.head(language)
    params = list(model.encoder.tensors()) if train_encoder else []
    return params + list(head.tensors())


def _grad_list(g, train_encoder: bool) -> list[np.ndarray]:
    grads = [a for _, a in g.encoder.tensors()] if train_encoder else []
    return grads + [g.head_W, g.head_b]


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def _workers(config: TrainConfig) -> int:
    env = os.environ.get("POLYGLOT_CTC_WORKERS")
    return int(env) if env else config.workers


def train_step(
    model: MultiHeadModel,
    batch: Sequence[Utterance],
    config: TrainConfig,
    train_encoder: bool | None = None,
    pool: ThreadPoolExecutor | None = None,
    velocity: dict[str, np.ndarray] | None = None,
) -> float:
    """One clipped SGD update on a language-homogeneous batch; returns the mean loss.

    With ``config.momentum > 0`` a heavy-ball velocity per tensor name is kept
    in ``velocity`` (a dict owned by the caller).
    """
    if not batch:
        raise ValueError("empty batch")
    language = batch[0].language_id
    if any(u.language_id != language for u in batch):
        raise ValueError("batch mixes languages")
    model.head(language)
    if train_encoder is None:
        train_encoder = config.mode != "adapt_softmax"

    def one(u: Utterance):
        try:
            return utterance_loss_and_grads(model, language, u.features, u.labels, need_encoder=train_encoder)
        except ValueError as exc:
            if "non-finite" not in str(exc):
                raise
            raise DivergenceError(f"divergence: {exc} on utterance {u.utterance_id!r}", [math.nan]) from None

    results = list(pool.map(one, batch)) if pool is not None else [one(u) for u in batch]
    losses = [r.loss for r in results]
    mean_loss = math.fsum(losses) / len(losses)
    if not math.isfinite(mean_loss):
        raise DivergenceError(f"divergence: non-finite loss on language {language!r}", losses)
    total = _grad_list(results[0], train_encoder)
    for r in results[1:]:
        for acc, g in zip(total, _grad_list(r, train_encoder)):
            acc += g
    for g in total:
        g /= len(batch)
    clip_by_global_norm(total, config.grad_clip_norm)
    if config.learning_rate > 0:
        for (name, p), g in zip(_trainable(model, language, train_encoder), total):
            if config.momentum > 0 and velocity is not None:
                v = velocity.get(name)
                if v is None:
                    v = velocity[name] = np.zeros_like(p)
                v *= config.momentum
                v += g
                g = v
            p -= config.learning_rate * g
        if train_encoder:
            model.encoder.version += 1
    return mean_loss


# evaluation -------------------------------------------------------------------


def decode_corpus(model: MultiHeadModel, corpus: Corpus, language: str | None = None):
    lang = language or corpus.language_id
    return [greedy_decode(compute_logits(model, lang, u.features)) for u in corpus.utterances]


def evaluate(model: MultiHeadModel, corpus: Corpus, language: str | None = None) -> tuple[ErrorCounts, float]:
    """Corpus error counts (greedy decoding) and mean CTC loss over feasible utterances."""
    lang = language or corpus.language_id
    counts = ErrorCounts()
    losses = []
    for u in corpus.utterances:
        if u.feasible:
            losses.append(utterance_loss_and_grads(model, lang, u.features, u.labels, need_encoder=False).loss)
        hyp = greedy_decode(compute_logits(model, lang, u.features))
        counts = counts + edit_distance(hyp, u.labels)
    mean_loss = math.fsum(losses) / len(losses) if losses else math.nan
    return counts, mean_loss


# the loop ---------------------------------------------------------------------


def _schedule(
    corpora: Sequence[Corpus],
    weights: Sequence[float],
    batch_size: int,
    rng: np.random.Generator,
    min_batches: int = 0,
) -> list[list[Utterance]]:
    """Language-homogeneous batches interleaved in proportion to weight x corpus size.

    A corpus too small to fill ``min_batches`` batches is cycled through
    fresh shuffles until it does.
    """
    keyed = []
    for ci, (corpus, w) in enumerate(zip(corpora, weights)):
        n = len(corpus.utterances)
        if n == 0:
            continue
        want = max(1, round(w * n), min_batches * min(batch_size, n))
        order: list[int] = []
        while len(order) < want:
            order.extend(rng.permutation(n).tolist())
        order = order[:want]
        batches = [order[i : i + batch_size] for i in range(0, want, batch_size)]
        for j, b in enumerate(batches):
            keyed.append(((j + 0.5) / len(batches), ci, [corpus.utterances[k] for k in b]))
    keyed.sort(key=lambda item: (item[0], item[1]))
    return [b for _, _, b in keyed]


def _feasible_only(corpus: Corpus) -> tuple[Corpus, int]:
    keep = [i for i, u in enumerate(corpus.utterances) if u.feasible]
    return corpus.subset(keep), len(corpus.utterances) - len(keep)


def train(
    model: MultiHeadModel,
    corpora: Sequence[Corpus],
    config: TrainConfig,
    dev: Sequence[Corpus] | None = None,
    train_encoder: bool | None = None,
) -> TrainReport:
    """Train ``model`` in place on ``corpora`` and restore its best-dev state.

    When ``dev`` is omitted each corpus is split into train/dev with
    ``config.dev_fraction``. Model selection uses mean dev PER across
    languages, then mean dev loss.
    """
    start = time.perf_counter()
    if not corpora:
        raise ValueError("no training corpora")
    langs = [c.language_id for c in corpora]
    if len(set(langs)) != len(langs):
        raise ValueError("duplicate language among training corpora")
    for lang in langs:
        model.head(lang)
    if dev is None:
        pairs = [split_dev(c, seed=config.seed, dev_fraction=config.dev_fraction) for c in corpora]
        corpora = [p[0] for p in pairs]
        dev = [p[1] for p in pairs]
    report = TrainReport()
    cleaned = []
    for c in corpora:
        kept, skipped = _feasible_only(c)
        if skipped:
            log.info("%s: skipping %d infeasible utterances", c.language_id, skipped)
        report.skipped_infeasible += skipped
        cleaned.append(kept)
    if not any(len(c) for c in cleaned):
        raise ValueError("all training utterances are infeasible")
    weights = [float((config.mixture or {}).get(c.language_id, 1.0)) for c in cleaned]
    if train_encoder is None:
        train_encoder = config.mode != "adapt_softmax"

    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    best_key = None
    best_model = model.copy()
    stale = 0
    velocity: dict[str, np.ndarray] = {}
    workers = _workers(config)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            step_cfg = replace(config, learning_rate=lr)
            per_lang: dict[str, list[float]] = {lang: [] for lang in langs}
            recent: list[float] = []
            for batch in _schedule(cleaned, weights, config.batch_size, rng, config.min_epoch_batches):
                try:
                    loss = train_step(model, batch, step_cfg, train_encoder, pool, velocity)
                except DivergenceError as exc:
                    raise DivergenceError(str(exc), recent[-5:] + exc.recent_losses) from None
                per_lang[batch[0].language_id].append(loss)
                recent.append(loss)
            pers, dev_losses = [], []
            for lang, d in zip(langs, dev):
                counts, dloss = evaluate(model, d, lang)
                losses = per_lang[lang]
                report.records.append(
                    EpochRecord(
                        epoch,
                        lang,
                        math.fsum(losses) / len(losses) if losses else math.nan,
                        dloss,
                        counts.per,
                    )
                )
                pers.append(counts.per)
                dev_losses.append(dloss)
            key = (math.fsum(pers) / len(pers), math.fsum(dev_losses) / len(dev_losses))
            if best_key is None or key < best_key:
                best_key = key
                best_model = model.copy()
                report.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale % config.patience == 0:
                    lr *= 0.5
            log.debug("epoch %d lr %.4g dev PER %s", epoch, lr, pers)
    finally:
        if pool is not None:
            pool.shutdown()

    if config.epochs > 0:
        _assign(model, best_model)
    for lang, d in zip(langs, dev):
        report.dev_per[lang] = evaluate(model, d, lang)[0].per
    report.wall_seconds = time.perf_counter() - start
    report.model = model
    return report


def _assign(dst: MultiHeadModel, src: MultiHeadModel) -> None:
    for (_, a), (_, b) in zip(dst.tensors(), src.tensors()):
        a[...] = b
    dst.encoder.version += 1


def fresh_model(corpora: Sequence[Corpus], config: EncoderConfig, seed: int) -> MultiHeadModel:
    return MultiHeadModel.init(config, [c.inventory for c in corpora], seed)


def finetune(model: MultiHeadModel, corpus: Corpus, config: TrainConfig, dev: Corpus | None = None) -> TrainReport:
    """Continue training every parameter on one in-training language."""
    model.head(corpus.language_id)
    cfg = replace(config, mode="finetune")
    return train(model, [corpus], cfg, dev=None if dev is None else [dev], train_encoder=True)


def _target_split(target: Corpus, config: TrainConfig, dev: Corpus | None) -> tuple[Corpus, Corpus]:
    if dev is not None:
        return target, dev
    return split_dev(target, seed=config.seed, dev_fraction=config.dev_fraction)


def _adapt(donor, target, fraction, config, dev, train_encoder: bool, mode: str):
    if target.language_id in donor.heads:
        raise ValueError(f"language {target.language_id!r} already has a head in the donor; use finetune")
    model = MultiHeadModel(donor.encoder.copy())
    model.add_head(target.inventory, np.random.default_rng(config.seed))
    train_part, dev_part = _target_split(target, config, dev)
    subset = select_fraction(train_part, fraction, seed=config.fraction_seed)
    cfg = replace(config, mode=mode, target_fraction=fraction)
    report = train(model, [subset], cfg, dev=[dev_part], train_encoder=train_encoder)
    return model, report


def adapt_softmax(
    donor: MultiHeadModel, target: Corpus, fraction: float, config: TrainConfig, dev: Corpus | None = None
) -> tuple[MultiHeadModel, TrainReport]:
    """Replace every donor head with one fresh target head and train only that head.

    The donor is not modified. Without ``dev`` the target corpus is split
    first and the fraction is drawn from its training part.
    """
    return _adapt(donor, target, fraction, config, dev, train_encoder=False, mode="adapt_softmax")


def adapt_full(
    donor: MultiHeadModel, target: Corpus, fraction: float, config: TrainConfig, dev: Corpus | None = None
) -> tuple[MultiHeadModel, TrainReport]:
    """Replace every donor head with one fresh target head and retrain all parameters."""
    return _adapt(donor, target, fraction, config, dev, train_encoder=True, mode="adapt_full")


# sweeps -----------------------------------------------------------------------

SWEEP_HEADER = ["donor", "mode", "fraction", "seed", "dev_per", "epochs", "wall_seconds"]


@dataclass
class SweepRow:
    donor: str
    mode: str
    fraction: float
    seed: int
    dev_per: float
    epochs: int
    wall_seconds: float


@dataclass
class ExperimentReport:
    rows: list[SweepRow] = field(default_factory=list)

    def to_csv(self, record_wall_time: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in self.rows:
            wall = f"{r.wall_seconds:.3f}" if record_wall_time else "0"
            w.writerow([r.donor, r.mode, repr(r.fraction), r.seed, repr(r.dev_per), r.epochs, wall])
        return buf.getvalue()

    def baseline_per(self) -> float:
        rows = [r for r in self.rows if r.mode == "monolingual" and r.fraction == 1.0]
        if not rows:
            raise ValueError("sweep has no 100% monolingual baseline")
        return rows[0].dev_per

    def crossover(self, donor: str) -> float | None:
        """Smallest fraction where ``donor``'s adapted PER is at or below the 100% baseline."""
        base = self.baseline_per()
        for r in sorted((r for r in self.rows if r.donor == donor and r.mode != "monolingual"), key=lambda r: r.fraction):
            if r.dev_per <= base:
                return r.fraction
        return None


def run_sweep(
    donors: Mapping[str, MultiHeadModel],
    target: Corpus,
    fractions: Sequence[float],
    mode: str,
    config: TrainConfig,
    baseline_config: EncoderConfig | None = None,
    baseline_fractions: Iterable[float] = (1.0,),
    dev: Corpus | None = None,
) -> ExperimentReport:
    """Grid of dev PERs over (donor x fraction) plus from-scratch monolingual baselines."""
    fractions = list(fractions)
    if fractions != sorted(fractions):
        raise ValueError("fractions must be sorted ascending")
    if mode not in ("adapt_softmax", "adapt_full"):
        raise ValueError(f"sweep mode must be adapt_softmax or adapt_full, got {mode!r}")
    adapt = adapt_softmax if mode == "adapt_softmax" else adapt_full
    report = ExperimentReport()
    for name, donor in donors.items():
        for f in fractions:
            _, rep = adapt(donor, target, f, config, dev)
            report.rows.append(SweepRow(name, mode, f, config.seed, rep.dev_per[target.language_id], config.epochs, rep.wall_seconds))
    if baseline_config is not None:
        train_part, dev_part = _target_split(target, config, dev)
        for f in baseline_fractions:
            subset = select_fraction(train_part, f, seed=config.fraction_seed)
            model = fresh_model([target], baseline_config, config.seed)
            rep = train(model, [subset], replace(config, mode="monolingual", target_fraction=f), dev=[dev_part])
            report.rows.append(SweepRow("scratch", "monolingual", f, config.seed, rep.dev_per[target.language_id], config.epochs, rep.wall_seconds))
    return report
