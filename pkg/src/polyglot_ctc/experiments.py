"""Reference toy setup and the directional experiments run on it.

All languages draw from one 20-prototype pool. The related family shares
eight core phones and adds two of its own; the held-out target language
uses only phones some family member already has. Every corpus is a pure
function of the run seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from .data import Corpus, SynthLanguageSpec, gen_synth_corpus
from .encoder import EncoderConfig
from .model import MultiHeadModel
from .training import (
    ExperimentReport,
    SweepRow,
    TrainConfig,
    adapt_full,
    adapt_softmax,
    finetune,
    fresh_model,
    run_sweep,
    train,
)


@dataclass(frozen=True)
class ToySetup:
    pool_seed: int = 7
    pool_size: int = 20
    feature_dim: int = 8
    noise_std: float = 0.7
    core: tuple[int, ...] = tuple(range(8))
    extras: dict = field(
        default_factory=lambda: {"A": (8, 9), "B": (10, 11), "C": (12, 13), "E": (14, 15)}
    )
    target: tuple[str, tuple[int, ...]] = ("D", (9, 11))
    hidden_dim: int = 32
    num_layers: int = 2
    epochs: int = 30
    batch_size: int = 8
    min_epoch_batches: int = 20
    scratch_lr: float = 0.5
    # anything that starts from trained weights
    adapt_lr: float = 0.2
    dev_utterances: int = 200

    @property
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.feature_dim, self.hidden_dim, self.num_layers)

    def phones(self, language: str) -> list[int]:
        if language == self.target[0]:
            return list(self.core) + list(self.target[1])
        return list(self.core) + list(self.extras[language])

    def spec(self, language: str, num_utterances: int, seed: int) -> SynthLanguageSpec:
        return SynthLanguageSpec(
            language,
            self.phones(language),
            num_utterances=num_utterances,
            noise_std=self.noise_std,
            seed=seed,
            pool_size=self.pool_size,
            feature_dim=self.feature_dim,
        )

    def _offset(self, language: str) -> int:
        return (sorted(self.extras) + [self.target[0]]).index(language)

    def corpus(self, language: str, num_utterances: int, run_seed: int) -> Corpus:
        return gen_synth_corpus(self.spec(language, num_utterances, 1000 * run_seed + self._offset(language)), self.pool_seed)

    def dev_corpus(self, language: str, run_seed: int) -> Corpus:
        seed = 1000 * run_seed + 500 + self._offset(language)
        return gen_synth_corpus(self.spec(language, self.dev_utterances, seed), self.pool_seed)

    def train_config(self, seed: int, adapting: bool = False, **kw) -> TrainConfig:
        base = dict(
            learning_rate=self.adapt_lr if adapting else self.scratch_lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            min_epoch_batches=self.min_epoch_batches,
            seed=seed,
        )
        return TrainConfig(**{**base, **kw})


def train_donor(setup: ToySetup, languages: Sequence[str], utterances: int, seed: int) -> MultiHeadModel:
    corpora = [setup.corpus(lang, utterances, seed) for lang in languages]
    devs = [setup.dev_corpus(lang, seed) for lang in languages]
    model = fresh_model(corpora, setup.encoder_config, seed)
    mode = "multilingual" if len(languages) > 1 else "monolingual"
    train(model, corpora, setup.train_config(seed, mode=mode), dev=devs)
    return model


def multilingual_gain(setup: ToySetup, seed: int, languages=("A", "B", "C"), utterances: int = 50) -> dict:
    """Dev PER per language for monolingual, joint multilingual and fine-tuned models."""
    corpora = [setup.corpus(lang, utterances, seed) for lang in languages]
    devs = [setup.dev_corpus(lang, seed) for lang in languages]
    mono = {}
    for c, d in zip(corpora, devs):
        m = fresh_model([c], setup.encoder_config, seed)
        mono[c.language_id] = train(m, [c], setup.train_config(seed, mode="monolingual"), dev=[d]).dev_per[c.language_id]
    joint = fresh_model(corpora, setup.encoder_config, seed)
    multi = train(joint, corpora, setup.train_config(seed, mode="multilingual"), dev=devs).dev_per
    tuned = {}
    for c, d in zip(corpora, devs):
        rep = finetune(joint.copy(), c, setup.train_config(seed, adapting=True), dev=d)
        tuned[c.language_id] = rep.dev_per[c.language_id]
    return {"mono": mono, "multi": multi, "finetune": tuned}


def crossover_sweep(
    setup: ToySetup,
    seed: int,
    donor: MultiHeadModel,
    fractions: Sequence[float] = (0.05, 0.1, 0.25, 0.5, 1.0),
    target_utterances: int = 200,
    mode: str = "adapt_softmax",
    donor_name: str = "mling",
) -> ExperimentReport:
    """Adaptation sweep of ``donor`` onto the target plus a from-scratch 100% baseline."""
    lang = setup.target[0]
    target = setup.corpus(lang, target_utterances, seed)
    dev = setup.dev_corpus(lang, seed)
    report = run_sweep({donor_name: donor}, target, fractions, mode, setup.train_config(seed, adapting=True), dev=dev)
    scratch = fresh_model([target], setup.encoder_config, seed)
    rep = train(scratch, [target], setup.train_config(seed, mode="monolingual"), dev=[dev])
    report.rows.append(SweepRow("scratch", "monolingual", 1.0, seed, rep.dev_per[lang], setup.epochs, rep.wall_seconds))
    return report


def adaptation_ordering(setup: ToySetup, seed: int, donors: dict[str, MultiHeadModel], target_utterances: int = 200) -> dict:
    """Dev PER of softmax-only and full adaptation at 100% target data, per donor."""
    lang = setup.target[0]
    target = setup.corpus(lang, target_utterances, seed)
    dev = setup.dev_corpus(lang, seed)
    cfg = setup.train_config(seed, adapting=True)
    out = {}
    for name, donor in donors.items():
        _, soft = adapt_softmax(donor, target, 1.0, cfg, dev=dev)
        _, full = adapt_full(donor, target, 1.0, cfg, dev=dev)
        out[name] = {"adapt_softmax": soft.dev_per[lang], "adapt_full": full.dev_per[lang]}
    return out
