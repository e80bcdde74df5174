"""CTC loss: the collapse operator, the log-domain lattice, and a brute-force oracle.

Label indices refer to a phone inventory whose index 0 is the blank.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .numerics import NEG_INF, as_matrix, log_softmax, log_sum_exp

BLANK = 0
ORACLE_BOUND = 10**7


class InfeasibleAlignment(ValueError):
    """Raised when a label sequence cannot be aligned to the available frames."""


def ctc_reduce(path: Sequence, blank=BLANK) -> list:
    """Collapse runs of identical symbols, then drop blanks."""
    out = []
    prev = object()
    for sym in path:
        if sym != prev and sym != blank:
            out.append(sym)
        prev = sym
    return out


def extend_labels(labels: Sequence[int]) -> list[int]:
    ext = [BLANK]
    for z in labels:
        ext.append(int(z))
        ext.append(BLANK)
    return ext


def min_frames(labels: Sequence[int]) -> int:
    """Shortest frame count admitting a path: one per label plus a blank per adjacent repeat."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def is_feasible(num_frames: int, labels: Sequence[int]) -> bool:
    return num_frames >= min_frames(labels)


@dataclass
class CtcTables:
    """Forward/backward lattices over the extended label sequence.

    ``alpha[t, s]`` includes the emission at frame ``t``; ``beta[t, s]``
    covers only frames after ``t``. With this split,
    ``logsumexp_s(alpha[t] + beta[t]) == log_likelihood`` for every ``t``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    log_likelihood: float
    ext: np.ndarray


def _check_labels(labels: Sequence[int], num_classes: int) -> np.ndarray:
    z = np.asarray(labels, dtype=np.int64).reshape(-1)
    if z.size and (z.max() >= num_classes or z.min() < 1):
        raise ValueError("label out of inventory")
    return z


def ctc_forward_backward(log_posteriors, labels: Sequence[int]) -> CtcTables:
    lp = as_matrix(log_posteriors)
    T, K = lp.shape
    if T == 0:
        raise ValueError("empty sequence")
    z = _check_labels(labels, K)
    ext = np.asarray(extend_labels(z.tolist()), dtype=np.int64)
    alpha, beta = _kernels.ctc_lattice(lp, ext)
    S = ext.shape[0]
    if not is_feasible(T, z.tolist()):
        ll = NEG_INF
    elif S > 1:
        ll = log_sum_exp([alpha[T - 1, S - 1], alpha[T - 1, S - 2]])
    else:
        ll = float(alpha[T - 1, 0])
    return CtcTables(alpha=alpha, beta=beta, log_likelihood=ll, ext=ext)


def ctc_loss_and_grad(logits, labels: Sequence[int]) -> tuple[float, np.ndarray]:
    """Negative log-likelihood and its gradient with respect to pre-softmax logits."""
    x = as_matrix(logits)
    lp = log_softmax(x)
    tables = ctc_forward_backward(lp, labels)
    ll = tables.log_likelihood
    if ll == NEG_INF:
        raise InfeasibleAlignment(
            f"infeasible alignment: {x.shape[0]} frames for {len(labels)} labels"
        )
    T, K = x.shape
    with np.errstate(invalid="ignore"):
        occ = np.exp(tables.alpha + tables.beta - ll)
    occ = np.nan_to_num(occ, nan=0.0)
    gamma = np.zeros((T, K))
    np.add.at(gamma.T, tables.ext, occ.T)
    grad = np.exp(lp) - gamma
    return -ll, grad


def ctc_brute_force(log_posteriors, labels: Sequence[int]) -> float:
    """Sum path probabilities over every length-T path that collapses to ``labels``."""
    lp = as_matrix(log_posteriors)
    T, K = lp.shape
    if K**T > ORACLE_BOUND:
        raise ValueError("oracle bound exceeded")
    target = [int(v) for v in labels]
    _check_labels(target, K)
    if len(target) > T:
        return NEG_INF
    terms = []
    for path in itertools.product(range(K), repeat=T):
        if ctc_reduce(path) == target:
            terms.append(math.fsum(lp[t, k] for t, k in enumerate(path)))
    if not terms:
        return NEG_INF
    return log_sum_exp(terms)
