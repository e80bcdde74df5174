"""Shared encoder plus per-language softmax heads, decoding, scoring and model files."""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .ctc import BLANK, ctc_loss_and_grad, ctc_reduce
from .encoder import INIT_SCALE, EncoderConfig, EncoderOutput, EncoderParams, encoder_backward, encoder_forward
from .numerics import NEG_INF, ShapeError, as_matrix, log_add

BLANK_NAME = "∅"
MAGIC = "POLYGLOT-CTC-MODEL"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class PhoneInventory:
    language_id: str
    phones: list[str]

    def __post_init__(self):
        if not self.language_id or any(ch.isspace() for ch in self.language_id):
            raise ValueError(f"invalid language id {self.language_id!r}")
        if len(self.phones) < 2:
            raise ValueError(f"inventory for {self.language_id!r} needs the blank plus at least one phone")
        if self.phones[0] != BLANK_NAME:
            raise ValueError(f"inventory for {self.language_id!r} must start with {BLANK_NAME!r}")
        if len(set(self.phones)) != len(self.phones):
            raise ValueError(f"duplicate phone names in inventory for {self.language_id!r}")
        for p in self.phones:
            if not p or any(ch.isspace() for ch in p):
                raise ValueError(f"invalid phone name {p!r}")
        self._index = {p: i for i, p in enumerate(self.phones)}

    def __len__(self) -> int:
        return len(self.phones)

    def index(self, phone: str) -> int:
        try:
            return self._index[phone]
        except KeyError:
            raise KeyError(f"phone {phone!r} not in inventory of {self.language_id!r}") from None

    def encode(self, phones: Sequence[str]) -> list[int]:
        return [self.index(p) for p in phones]

    def decode(self, labels: Sequence[int]) -> list[str]:
        return [self.phones[i] for i in labels]

    def to_text(self) -> str:
        return "\n".join(self.phones) + "\n"

    @classmethod
    def from_text(cls, language_id: str, text: str) -> "PhoneInventory":
        return cls(language_id, [ln.strip() for ln in text.splitlines() if ln.strip()])


@dataclass
class LanguageHead:
    language_id: str
    W: np.ndarray
    b: np.ndarray
    inventory: PhoneInventory

    @classmethod
    def fresh(cls, inventory: PhoneInventory, input_dim: int, rng: np.random.Generator) -> "LanguageHead":
        K = len(inventory)
        W = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(K, input_dim))
        return cls(inventory.language_id, W, np.zeros(K), inventory)

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    def num_parameters(self) -> int:
        return self.W.size + self.b.size

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        yield f"head.{self.language_id}.W", self.W
        yield f"head.{self.language_id}.b", self.b


def head_parameter_count(hidden_dim: int, num_classes: int) -> int:
    return 2 * hidden_dim * num_classes + num_classes


@dataclass
class MultiHeadModel:
    encoder: EncoderParams
    heads: dict[str, LanguageHead] = field(default_factory=dict)

    @classmethod
    def init(cls, config: EncoderConfig, inventories: Sequence[PhoneInventory], seed: int) -> "MultiHeadModel":
        rng = np.random.default_rng(seed)
        model = cls(EncoderParams.init(config, rng))
        for inv in inventories:
            model.add_head(inv, rng)
        return model

    @property
    def config(self) -> EncoderConfig:
        return self.encoder.config

    @property
    def languages(self) -> list[str]:
        return list(self.heads)

    def add_head(self, inventory: PhoneInventory, rng: np.random.Generator) -> LanguageHead:
        if inventory.language_id in self.heads:
            raise ValueError(f"duplicate language id {inventory.language_id!r}")
        head = LanguageHead.fresh(inventory, self.config.output_dim, rng)
        self.heads[inventory.language_id] = head
        return head

    def head(self, language_id: str) -> LanguageHead:
        try:
            return self.heads[language_id]
        except KeyError:
            raise KeyError(f"no head for language {language_id!r}") from None

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.encoder.tensors()
        for h in self.heads.values():
            yield from h.tensors()

    def copy(self) -> "MultiHeadModel":
        clone = MultiHeadModel(self.encoder.copy())
        for lang, h in self.heads.items():
            clone.heads[lang] = LanguageHead(lang, h.W.copy(), h.b.copy(), h.inventory)
        return clone

    def num_parameters(self) -> int:
        return sum(a.size for _, a in self.tensors())


def project_head(model: MultiHeadModel, language_id: str, e) -> np.ndarray:
    """Per-frame logits ``W_L e_t + b_L`` for one language."""
    head = model.head(language_id)
    emb = e.e if isinstance(e, EncoderOutput) else as_matrix(e)
    if emb.shape[1] != head.W.shape[1]:
        raise ShapeError(f"embedding width {emb.shape[1]} does not match head input {head.W.shape[1]}")
    return emb @ head.W.T + head.b


def compute_logits(model: MultiHeadModel, language_id: str, features) -> np.ndarray:
    model.head(language_id)
    return project_head(model, language_id, encoder_forward(model.encoder, features))


@dataclass
class UtteranceGrads:
    loss: float
    encoder: EncoderParams | None
    head_W: np.ndarray
    head_b: np.ndarray


def utterance_loss_and_grads(
    model: MultiHeadModel, language_id: str, features, labels: Sequence[int], need_encoder: bool = True
) -> UtteranceGrads:
    """CTC loss of one utterance routed through its language head, with gradients."""
    head = model.head(language_id)
    out = encoder_forward(model.encoder, features)
    logits = project_head(model, language_id, out)
    loss, g_logits = ctc_loss_and_grad(logits, labels)
    gW = g_logits.T @ out.e
    gb = g_logits.sum(axis=0)
    enc = None
    if need_encoder:
        enc, _ = encoder_backward(out, g_logits @ head.W)
    return UtteranceGrads(loss, enc, gW, gb)


# decoding -------------------------------------------------------------------


def greedy_decode(logits) -> list[int]:
    """Best-path decode; ``np.argmax`` breaks ties toward the lowest index (the blank)."""
    x = as_matrix(logits)
    return ctc_reduce(np.argmax(x, axis=1).tolist())


def prefix_beam_decode(log_posteriors, beam_width: int) -> list[int]:
    """Lexicon-free CTC prefix beam search in log space."""
    return prefix_beam_search(log_posteriors, beam_width)[0]


def prefix_beam_search(log_posteriors, beam_width: int) -> tuple[list[int], float]:
    """Return the best prefix and its log score (blank and non-blank mass merged)."""
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    lp = as_matrix(log_posteriors)
    T, K = lp.shape
    # prefix -> (log mass ending in blank, log mass ending in a phone)
    beam: dict[tuple, tuple[float, float]] = {(): (0.0, NEG_INF)}
    for t in range(T):
        row = lp[t]
        nxt: dict[tuple, list[float]] = {}

        def bucket(prefix):
            entry = nxt.get(prefix)
            if entry is None:
                entry = nxt[prefix] = [NEG_INF, NEG_INF]
            return entry

        for prefix, (pb, pnb) in beam.items():
            total = log_add(pb, pnb)
            entry = bucket(prefix)
            entry[0] = log_add(entry[0], total + row[BLANK])
            last = prefix[-1] if prefix else None
            for k in range(1, K):
                lk = row[k]
                if lk == NEG_INF:
                    continue
                ext = bucket(prefix + (k,))
                if k == last:
                    # repeat collapses unless a blank intervened
                    entry[1] = log_add(entry[1], pnb + lk)
                    ext[1] = log_add(ext[1], pb + lk)
                else:
                    ext[1] = log_add(ext[1], total + lk)
        ranked = sorted(nxt.items(), key=lambda kv: (-log_add(*kv[1]), kv[0]))
        beam = {p: (v[0], v[1]) for p, v in ranked[:beam_width]}
    best, (pb, pnb) = min(beam.items(), key=lambda kv: (-log_add(*kv[1]), kv[0]))
    return list(best), log_add(pb, pnb)


# scoring --------------------------------------------------------------------


@dataclass
class ErrorCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_length: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def per(self) -> float:
        if self.ref_length == 0:
            return 0.0 if self.errors == 0 else math.inf
        return self.errors / self.ref_length

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.ref_length + other.ref_length,
        )


def edit_distance(hyp: Sequence, ref: Sequence) -> ErrorCounts:
    """Unit-cost Levenshtein alignment of ``hyp`` against ``ref``.

    Among minimum-cost alignments the one with the fewest substitutions is
    chosen, which fixes the insertion/deletion split and makes the result
    symmetric under swapping arguments (I and D trade places).
    """
    n, m = len(hyp), len(ref)
    # cost[i][j] = (edits, substitutions) aligning hyp[:i] with ref[:j]
    cost = [[(0, 0)] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = (i, 0)
    for j in range(1, m + 1):
        cost[0][j] = (j, 0)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            e, s = cost[i - 1][j - 1]
            diag = (e, s) if hyp[i - 1] == ref[j - 1] else (e + 1, s + 1)
            ins = (cost[i - 1][j][0] + 1, cost[i - 1][j][1])
            dele = (cost[i][j - 1][0] + 1, cost[i][j - 1][1])
            cost[i][j] = min(diag, ins, dele)
    edits, subs = cost[n][m]
    # hyp = matches + S + I and ref = matches + S + D
    ins_minus_del = n - m
    ins_plus_del = edits - subs
    return ErrorCounts(subs, (ins_plus_del + ins_minus_del) // 2, (ins_plus_del - ins_minus_del) // 2, m)


# model files ----------------------------------------------------------------


def _header(model: MultiHeadModel) -> tuple[str, list[tuple[str, np.ndarray]]]:
    cfg = model.config
    lines = [
        f"{MAGIC} {FORMAT_VERSION}",
        f"input_dim {cfg.input_dim}",
        f"hidden_dim {cfg.hidden_dim}",
        f"num_layers {cfg.num_layers}",
        f"languages {len(model.heads)}",
    ]
    for lang, head in model.heads.items():
        lines.append(f"language {lang} {' '.join(head.inventory.phones)}")
    tensors = list(model.tensors())
    lines.append(f"tensors {len(tensors)}")
    for name, arr in tensors:
        lines.append(f"tensor {name} {' '.join(str(d) for d in arr.shape)}")
    lines.append("end")
    return "\n".join(lines) + "\n", tensors


def model_to_bytes(model: MultiHeadModel) -> bytes:
    header, tensors = _header(model)
    buf = io.BytesIO()
    buf.write(header.encode("utf-8"))
    for _, arr in tensors:
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def save_model(model: MultiHeadModel, path) -> None:
    data = model_to_bytes(model)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def model_from_bytes(data: bytes) -> MultiHeadModel:
    marker = b"\nend\n"
    cut = data.find(marker)
    if cut < 0:
        raise ModelFormatError("model header not terminated")
    lines = data[:cut].decode("utf-8").split("\n")
    payload = memoryview(data)[cut + len(marker) :]
    try:
        magic, version = lines[0].split()
    except ValueError:
        raise ModelFormatError("bad magic line") from None
    if magic != MAGIC:
        raise ModelFormatError("not a polyglot-ctc model file")
    if int(version) != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")

    def keyed(line: str, key: str) -> list[str]:
        parts = line.split(" ")
        if parts[0] != key:
            raise ModelFormatError(f"expected {key!r} line, found {line!r}")
        return parts[1:]

    try:
        cfg = EncoderConfig(
            input_dim=int(keyed(lines[1], "input_dim")[0]),
            hidden_dim=int(keyed(lines[2], "hidden_dim")[0]),
            num_layers=int(keyed(lines[3], "num_layers")[0]),
        )
        n_lang = int(keyed(lines[4], "languages")[0])
        inventories = []
        for k in range(n_lang):
            parts = keyed(lines[5 + k], "language")
            inventories.append(PhoneInventory(parts[0], parts[1:]))
        pos = 5 + n_lang
        n_tensors = int(keyed(lines[pos], "tensors")[0])
        declared = []
        for k in range(n_tensors):
            parts = keyed(lines[pos + 1 + k], "tensor")
            declared.append((parts[0], tuple(int(d) for d in parts[1:])))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model header: {exc}") from None

    model = MultiHeadModel(EncoderParams.init(cfg, np.random.default_rng(0)))
    for inv in inventories:
        model.add_head(inv, np.random.default_rng(0))
    expected = list(model.tensors())
    if [n for n, _ in declared] != [n for n, _ in expected]:
        raise ModelFormatError("tensor list does not match the declared configuration")
    total = 0
    for (name, shape), (_, arr) in zip(declared, expected):
        if shape != arr.shape:
            raise ModelFormatError(f"tensor {name} has shape {shape}, expected {arr.shape}")
        total += arr.size
    if len(payload) != 8 * total:
        raise ModelFormatError(f"payload has {len(payload)} bytes, expected {8 * total} (truncated or corrupt)")
    offset = 0
    for _, arr in expected:
        n = arr.size
        arr[...] = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(arr.shape)
        offset += 8 * n
    return model


def load_model(path) -> MultiHeadModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
