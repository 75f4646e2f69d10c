"""Compiled inner loops of the LSTM recurrence.

Only the sequential part lives here: the input projections and the weight
gradient contractions are single large matmuls done in numpy by the caller.
"""

import math

import numba
import numpy as np


@numba.njit(inline="always")
def _sig(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@numba.njit(inline="always")
def _tanh(x):
    # exp form is about twice as fast as libm tanh here
    if x >= 0.0:
        e = math.exp(-2.0 * x)
        return (1.0 - e) / (1.0 + e)
    e = math.exp(2.0 * x)
    return (e - 1.0) / (e + 1.0)


@numba.njit(cache=True, nogil=True)
def lstm_scan(pre, W_hh):
    """Forward recurrence over time.

    pre: (B, T, 4H) input projections plus bias. Returns activated gates
    ``[i, f, g, o]``, cell states, tanh of cell states and hidden states.
    """
    B, T, G = pre.shape
    H = G // 4
    gates = np.empty((B, T, G))
    cs = np.empty((B, T, H))
    tcs = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    a = np.empty(G)
    for b in range(B):
        for t in range(T):
            for k in range(G):
                s = pre[b, t, k]
                if t > 0:
                    for j in range(H):
                        s += W_hh[k, j] * hs[b, t - 1, j]
                a[k] = s
            for j in range(H):
                ig = _sig(a[j])
                fg = _sig(a[H + j])
                gg = _tanh(a[2 * H + j])
                og = _sig(a[3 * H + j])
                gates[b, t, j] = ig
                gates[b, t, H + j] = fg
                gates[b, t, 2 * H + j] = gg
                gates[b, t, 3 * H + j] = og
                cp = cs[b, t - 1, j] if t > 0 else 0.0
                c = fg * cp + ig * gg
                tc = _tanh(c)
                cs[b, t, j] = c
                tcs[b, t, j] = tc
                hs[b, t, j] = og * tc
    return gates, cs, tcs, hs


@numba.njit(cache=True, nogil=True)
def lstm_scan_back(dH, gates, cs, tcs, W_hh):
    """Reverse recurrence: gradient w.r.t. gate pre-activations, shape (B, T, 4H)."""
    B, T, G = gates.shape
    H = G // 4
    dA = np.empty((B, T, G))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for b in range(B):
        dh_next[:] = 0.0
        dc_next[:] = 0.0
        for t in range(T - 1, -1, -1):
            for j in range(H):
                ig = gates[b, t, j]
                fg = gates[b, t, H + j]
                gg = gates[b, t, 2 * H + j]
                og = gates[b, t, 3 * H + j]
                tc = tcs[b, t, j]
                cp = cs[b, t - 1, j] if t > 0 else 0.0
                dh = dH[b, t, j] + dh_next[j]
                dc = dh * og * (1.0 - tc * tc) + dc_next[j]
                dA[b, t, j] = dc * gg * ig * (1.0 - ig)
                dA[b, t, H + j] = dc * cp * fg * (1.0 - fg)
                dA[b, t, 2 * H + j] = dc * ig * (1.0 - gg * gg)
                dA[b, t, 3 * H + j] = dh * tc * og * (1.0 - og)
                dc_next[j] = dc * fg
            for j in range(H):
                s = 0.0
                for k in range(G):
                    s += dA[b, t, k] * W_hh[k, j]
                dh_next[j] = s
    return dA
