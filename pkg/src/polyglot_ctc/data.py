"""Corpora, their on-disk layout, and a seeded synthetic multi-language generator.

Synthetic languages draw their phones from one shared pool of prototype
vectors, so two languages that share a pool index share its acoustics.
Each frame of a phone segment is the prototype plus Gaussian noise.
"""
from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ctc import is_feasible
from .model import BLANK_NAME, PhoneInventory


class CorpusFormatError(ValueError):
    pass


@dataclass
class Utterance:
    features: np.ndarray
    labels: list[int]
    language_id: str
    utterance_id: str

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def feasible(self) -> bool:
        return is_feasible(self.num_frames, self.labels)


@dataclass
class Corpus:
    language_id: str
    inventory: PhoneInventory
    utterances: list[Utterance]
    meta: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def feature_dim(self) -> int:
        return self.utterances[0].features.shape[1]

    @property
    def infeasible(self) -> list[str]:
        return [u.utterance_id for u in self.utterances if not u.feasible]

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus(self.language_id, self.inventory, [self.utterances[i] for i in indices], dict(self.meta))


@dataclass
class SynthLanguageSpec:
    language_id: str
    phone_indices: list[int]
    num_utterances: int = 200
    phones_per_utterance: tuple[int, int] = (3, 8)
    frames_per_phone: tuple[int, int] = (2, 5)
    noise_std: float = 0.3
    seed: int = 0
    pool_size: int = 20
    feature_dim: int = 8

    def validate(self) -> None:
        if len(self.phone_indices) < 2:
            raise ValueError(f"{self.language_id}: need at least 2 phones")
        if len(set(self.phone_indices)) != len(self.phone_indices):
            raise ValueError(f"{self.language_id}: duplicate pool indices")
        if min(self.phone_indices) < 0 or max(self.phone_indices) >= self.pool_size:
            raise ValueError(f"{self.language_id}: pool index outside [0, {self.pool_size})")
        for name, (lo, hi) in (
            ("phones_per_utterance", self.phones_per_utterance),
            ("frames_per_phone", self.frames_per_phone),
        ):
            if lo < 1 or hi < lo:
                raise ValueError(f"{self.language_id}: empty range {name}=({lo}, {hi})")
        if self.num_utterances < 1:
            raise ValueError(f"{self.language_id}: num_utterances must be >= 1")
        if self.noise_std < 0:
            raise ValueError(f"{self.language_id}: noise_std must be >= 0")

    def inventory(self) -> PhoneInventory:
        return PhoneInventory(self.language_id, [BLANK_NAME] + [phone_name(i) for i in self.phone_indices])


def phone_name(pool_index: int) -> str:
    return f"p{pool_index:02d}"


def prototype_pool(pool_seed: int, pool_size: int, feature_dim: int) -> np.ndarray:
    return np.random.default_rng(pool_seed).normal(size=(pool_size, feature_dim))


def gen_synth_corpus(spec: SynthLanguageSpec, pool_seed: int) -> Corpus:
    spec.validate()
    pool = prototype_pool(pool_seed, spec.pool_size, spec.feature_dim)
    rng = np.random.default_rng(spec.seed)
    n_phones = len(spec.phone_indices)
    utterances = []
    for n in range(spec.num_utterances):
        length = int(rng.integers(spec.phones_per_utterance[0], spec.phones_per_utterance[1] + 1))
        labels: list[int] = []
        for _ in range(length):
            # no immediate repeats: identical adjacent segments would be acoustically inseparable
            choices = [k for k in range(1, n_phones + 1) if not labels or k != labels[-1]]
            labels.append(choices[int(rng.integers(len(choices)))])
        segments = []
        for lab in labels:
            dur = int(rng.integers(spec.frames_per_phone[0], spec.frames_per_phone[1] + 1))
            proto = pool[spec.phone_indices[lab - 1]]
            segments.append(proto + spec.noise_std * rng.normal(size=(dur, spec.feature_dim)))
        feats = np.ascontiguousarray(np.concatenate(segments, axis=0))
        utterances.append(Utterance(feats, labels, spec.language_id, f"{spec.language_id}_{n:05d}"))
    meta = {k: _meta_value(v) for k, v in asdict(spec).items()}
    meta["pool_seed"] = str(pool_seed)
    return Corpus(spec.language_id, spec.inventory(), utterances, meta)


def _meta_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


# fractions and splits ---------------------------------------------------------


def fraction_count(fraction: float, n: int) -> int:
    # rounding guards against e.g. 0.1 * 30 = 3.0000000000000004
    return math.ceil(round(fraction * n, 9))


def select_fraction(corpus: Corpus, fraction: float, seed: int = 0) -> Corpus:
    """Seeded nested subset of ``ceil(fraction * N)`` utterances, kept in corpus order."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return corpus.subset(range(len(corpus)))
    order = np.random.default_rng(seed).permutation(len(corpus))
    keep = sorted(order[: fraction_count(fraction, len(corpus))].tolist())
    return corpus.subset(keep)


def split_dev(corpus: Corpus, seed: int = 0, dev_fraction: float = 0.1) -> tuple[Corpus, Corpus]:
    """Deterministic (train, dev) split; dev holds ``ceil(dev_fraction * N)`` utterances."""
    n = len(corpus)
    if n < 2:
        raise ValueError(f"corpus {corpus.language_id!r} too small to split ({n} utterances)")
    n_dev = min(n - 1, max(1, fraction_count(dev_fraction, n)))
    order = np.random.default_rng(seed).permutation(n)
    dev = sorted(order[:n_dev].tolist())
    train = sorted(order[n_dev:].tolist())
    return corpus.subset(train), corpus.subset(dev)


# on-disk format ---------------------------------------------------------------

_HEADER = struct.Struct("<qq")


def write_features(path: Path, feats: np.ndarray) -> None:
    T, F = feats.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(T, F))
        fh.write(np.ascontiguousarray(feats, dtype="<f8").tobytes())


def read_features(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorpusFormatError(f"{path}: truncated feature header")
    T, F = _HEADER.unpack_from(data)
    if T < 1 or F < 1:
        raise CorpusFormatError(f"{path}: invalid shape ({T}, {F})")
    if len(data) != _HEADER.size + 8 * T * F:
        raise CorpusFormatError(f"{path}: expected {T}x{F} floats, file has {len(data) - _HEADER.size} payload bytes")
    return np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(T, F).astype(np.float64)


def save_corpus(corpus: Corpus, dir_path) -> None:
    root = Path(dir_path)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "inventory.txt").write_text(corpus.inventory.to_text(), encoding="utf-8")
    lines = []
    for u in corpus.utterances:
        lines.append(f"{u.utterance_id}\t{' '.join(corpus.inventory.decode(u.labels))}\n")
        write_features(root / "features" / f"{u.utterance_id}.f64", u.features)
    (root / "transcripts.tsv").write_text("".join(lines), encoding="utf-8")
    meta = {"language_id": corpus.language_id, **{k: v for k, v in corpus.meta.items() if k != "language_id"}}
    (root / "corpus.meta").write_text("".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8")


def load_corpus(dir_path) -> Corpus:
    """Load a corpus directory. Infeasible utterances are kept; see ``Utterance.feasible``."""
    root = Path(dir_path)
    inv_path = root / "inventory.txt"
    if not inv_path.is_file():
        raise CorpusFormatError(f"{inv_path}: missing inventory")
    meta = {}
    meta_path = root / "corpus.meta"
    if meta_path.is_file():
        for n, line in enumerate(meta_path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            if "=" not in line:
                raise CorpusFormatError(f"{meta_path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    language_id = meta.get("language_id", root.name)
    inv_lines = inv_path.read_text(encoding="utf-8").splitlines()
    if not inv_lines or inv_lines[0].strip() != BLANK_NAME:
        raise CorpusFormatError(f"{inv_path}:1: first line must be {BLANK_NAME!r}")
    try:
        inventory = PhoneInventory(language_id, [ln.strip() for ln in inv_lines if ln.strip()])
    except ValueError as exc:
        raise CorpusFormatError(f"{inv_path}: {exc}") from None
    tr_path = root / "transcripts.tsv"
    if not tr_path.is_file():
        raise CorpusFormatError(f"{tr_path}: missing transcripts")
    utterances = []
    feature_dim = None
    for n, line in enumerate(tr_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise CorpusFormatError(f"{tr_path}:{n}: expected utterance_id<TAB>phones")
        utt_id, text = line.split("\t", 1)
        try:
            labels = inventory.encode(text.split())
        except KeyError as exc:
            raise CorpusFormatError(f"{tr_path}:{n}: {exc.args[0]}") from None
        if 0 in labels:
            raise CorpusFormatError(f"{tr_path}:{n}: blank symbol in transcript")
        feat_path = root / "features" / f"{utt_id}.f64"
        if not feat_path.is_file():
            raise CorpusFormatError(f"{feat_path}: missing features for {utt_id}")
        feats = read_features(feat_path)
        if feature_dim is None:
            feature_dim = feats.shape[1]
        elif feats.shape[1] != feature_dim:
            raise CorpusFormatError(f"{feat_path}: feature dim {feats.shape[1]} != {feature_dim}")
        utterances.append(Utterance(feats, labels, language_id, utt_id))
    return Corpus(language_id, inventory, utterances, {k: v for k, v in meta.items() if k != "language_id"})
