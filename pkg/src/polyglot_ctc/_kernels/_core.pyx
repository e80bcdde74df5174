# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops; same contracts as ``_fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, tanh, INFINITY

cnp.import_array()


cdef inline double _log_add(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef inline double _sigmoid(double x) noexcept nogil:
    return 0.5 * (1.0 + tanh(0.5 * x))


def ctc_lattice(double[:, ::1] log_probs, cnp.int64_t[::1] ext):
    cdef Py_ssize_t T = log_probs.shape[0]
    cdef Py_ssize_t S = ext.shape[0]
    alpha_arr = np.full((T, S), -np.inf)
    beta_arr = np.full((T, S), -np.inf)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef Py_ssize_t t, s
    cdef double acc
    cdef bint skip
    with nogil:
        alpha[0, 0] = log_probs[0, ext[0]]
        if S > 1:
            alpha[0, 1] = log_probs[0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                acc = alpha[t - 1, s]
                if s >= 1:
                    acc = _log_add(acc, alpha[t - 1, s - 1])
                if s >= 2 and ext[s] != 0 and ext[s] != ext[s - 2]:
                    acc = _log_add(acc, alpha[t - 1, s - 2])
                if acc != -INFINITY:
                    acc = acc + log_probs[t, ext[s]]
                alpha[t, s] = acc
        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            for s in range(S):
                acc = beta[t + 1, s] + log_probs[t + 1, ext[s]]
                if s + 1 < S:
                    acc = _log_add(acc, beta[t + 1, s + 1] + log_probs[t + 1, ext[s + 1]])
                if s + 2 < S and ext[s + 2] != 0 and ext[s + 2] != ext[s]:
                    acc = _log_add(acc, beta[t + 1, s + 2] + log_probs[t + 1, ext[s + 2]])
                beta[t, s] = acc
    return alpha_arr, beta_arr


def lstm_sweep_forward(double[:, ::1] xproj, double[:, ::1] U, bint reverse):
    cdef Py_ssize_t T = xproj.shape[0]
    cdef Py_ssize_t H4 = xproj.shape[1]
    cdef Py_ssize_t H = H4 // 4
    gates_arr = np.empty((T, H4))
    c_arr = np.empty((T, H))
    h_arr = np.empty((T, H))
    cdef double[:, ::1] gates = gates_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] h = h_arr
    cdef double[::1] h_prev = np.zeros(H)
    cdef double[::1] c_prev = np.zeros(H)
    cdef Py_ssize_t step, t, j, k
    cdef double acc, ct
    with nogil:
        for step in range(T):
            t = T - 1 - step if reverse else step
            for j in range(H4):
                acc = xproj[t, j]
                for k in range(H):
                    acc = acc + U[j, k] * h_prev[k]
                if j < 3 * H:
                    gates[t, j] = _sigmoid(acc)
                else:
                    gates[t, j] = tanh(acc)
            for j in range(H):
                ct = gates[t, H + j] * c_prev[j] + gates[t, j] * gates[t, 3 * H + j]
                c[t, j] = ct
                h[t, j] = gates[t, 2 * H + j] * tanh(ct)
            for j in range(H):
                c_prev[j] = c[t, j]
                h_prev[j] = h[t, j]
    return gates_arr, c_arr, h_arr


def lstm_sweep_backward(double[:, ::1] gates, double[:, ::1] c, double[:, ::1] U,
                        double[:, ::1] dh, bint reverse):
    cdef Py_ssize_t T = gates.shape[0]
    cdef Py_ssize_t H4 = gates.shape[1]
    cdef Py_ssize_t H = H4 // 4
    dpre_arr = np.empty((T, H4))
    cdef double[:, ::1] dpre = dpre_arr
    cdef double[::1] dh_next = np.zeros(H)
    cdef double[::1] dc_next = np.zeros(H)
    cdef Py_ssize_t step, t, prev_t, j, k
    cdef double i, f, o, g, tc, dht, dc, cp, acc
    with nogil:
        for step in range(T):
            t = step if reverse else T - 1 - step
            prev_t = t + 1 if reverse else t - 1
            for j in range(H):
                i = gates[t, j]
                f = gates[t, H + j]
                o = gates[t, 2 * H + j]
                g = gates[t, 3 * H + j]
                cp = c[prev_t, j] if (prev_t >= 0 and prev_t < T) else 0.0
                tc = tanh(c[t, j])
                dht = dh[t, j] + dh_next[j]
                dc = dc_next[j] + dht * o * (1.0 - tc * tc)
                dpre[t, j] = dc * g * i * (1.0 - i)
                dpre[t, H + j] = dc * cp * f * (1.0 - f)
                dpre[t, 2 * H + j] = dht * tc * o * (1.0 - o)
                dpre[t, 3 * H + j] = dc * i * (1.0 - g * g)
                dc_next[j] = dc * f
            for k in range(H):
                acc = 0.0
                for j in range(H4):
                    acc = acc + U[j, k] * dpre[t, j]
                dh_next[k] = acc
    return dpre_arr
