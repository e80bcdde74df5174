"""Pure numpy versions of the hot loops, used when the compiled core is absent."""
from __future__ import annotations

import numpy as np

NEG_INF = -np.inf


def _skip_mask(ext: np.ndarray) -> np.ndarray:
    # skip[s] is True when a transition s-2 -> s is allowed
    skip = np.zeros(ext.shape[0], dtype=bool)
    if ext.shape[0] > 2:
        skip[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])
    return skip


def ctc_lattice(log_probs: np.ndarray, ext: np.ndarray):
    """Log-domain alpha and beta over the blank-extended labels.

    ``alpha[t, s]`` includes the emission at frame ``t``; ``beta[t, s]``
    covers frames ``t+1..T-1`` only, so ``alpha + beta`` summed over ``s``
    gives the sequence log-likelihood at every frame.
    """
    T = log_probs.shape[0]
    S = ext.shape[0]
    emit = log_probs[:, ext]
    skip = _skip_mask(ext)
    alpha = np.full((T, S), NEG_INF)
    beta = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    with np.errstate(invalid="ignore"):
        for t in range(1, T):
            prev = alpha[t - 1]
            acc = prev.copy()
            acc[1:] = np.logaddexp(acc[1:], prev[:-1])
            if S > 2:
                acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
            alpha[t] = acc + emit[t]
        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            nxt = beta[t + 1] + emit[t + 1]
            acc = nxt.copy()
            acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
            if S > 2:
                acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
            beta[t] = acc
    return alpha, beta


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_sweep_forward(xproj: np.ndarray, U: np.ndarray, reverse: bool):
    """Run one direction of an LSTM over precomputed input projections.

    ``xproj`` is ``T x 4H`` (``W x_t + b``, gate order i, f, o, g).
    Returns post-activation gates, cell states and hidden states, all
    indexed by natural time.
    """
    T, H4 = xproj.shape
    H = H4 // 4
    gates = np.empty((T, H4))
    c = np.empty((T, H))
    h = np.empty((T, H))
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        pre = xproj[t] + U @ h_prev
        g = gates[t]
        g[: 3 * H] = _sigmoid(pre[: 3 * H])
        g[3 * H :] = np.tanh(pre[3 * H :])
        c_t = g[H : 2 * H] * c_prev + g[:H] * g[3 * H :]
        h_t = g[2 * H : 3 * H] * np.tanh(c_t)
        c[t] = c_t
        h[t] = h_t
        c_prev, h_prev = c_t, h_t
    return gates, c, h


def lstm_sweep_backward(gates, c, U, dh, reverse: bool):
    """Backpropagate ``dh`` through one direction; returns pre-activation grads."""
    T, H4 = gates.shape
    H = H4 // 4
    dpre = np.empty((T, H4))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    order = range(T) if reverse else range(T - 1, -1, -1)
    zeros = np.zeros(H)
    for t in order:
        prev_t = t + 1 if reverse else t - 1
        c_prev = c[prev_t] if 0 <= prev_t < T else zeros
        i = gates[t, :H]
        f = gates[t, H : 2 * H]
        o = gates[t, 2 * H : 3 * H]
        g = gates[t, 3 * H :]
        tc = np.tanh(c[t])
        dh_t = dh[t] + dh_next
        dc = dc_next + dh_t * o * (1.0 - tc * tc)
        d = dpre[t]
        d[:H] = dc * g * i * (1.0 - i)
        d[H : 2 * H] = dc * c_prev * f * (1.0 - f)
        d[2 * H : 3 * H] = dh_t * tc * o * (1.0 - o)
        d[3 * H :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = U.T @ d
    return dpre
