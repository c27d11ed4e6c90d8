"""Pure numpy reference implementations of the hot loops.

Every function here has a compiled twin in ``_ckernels.pyx`` with the
same signature and semantics; ``kernels.py`` picks one at import.
"""
import numpy as np


def chain_products(steps, init):
    """Running products ``out[:, l+1] = steps[:, l] @ out[:, l]``.

    steps : (B, L, q, q), init : (B, q, q) -> (B, L+1, q, q)
    """
    steps = np.asarray(steps, dtype=float)
    B, L, q, _ = steps.shape
    out = np.empty((B, L + 1, q, q))
    out[:, 0] = init
    for l in range(L):
        np.matmul(steps[:, l], out[:, l], out=out[:, l + 1])
    return out


def projected_sweep_forward(C, h, P):
    """``s[0] = 0``, ``s[i+1] = P[i+1] (C[i] s[i] + h[i])``.

    C : (W, q, q), h : (W, q), P : (W, q, q) -> s : (W, q)
    (``C[W-1]`` and ``h[W-1]`` are not used.)
    """
    C = np.asarray(C, dtype=float)
    W, q = h.shape
    s = np.zeros((W, q))
    for i in range(W - 1):
        s[i + 1] = P[i + 1] @ (C[i] @ s[i] + h[i])
    return s


def projected_sweep_backward(Cinv, h, Q):
    """``u[W-1] = 0``, ``u[i] = Q[i] Cinv[i] (u[i+1] - h[i])``.

    Cinv : (W, q, q), h : (W, q), Q : (W, q, q) -> u : (W, q)
    """
    W, q = h.shape
    u = np.zeros((W, q))
    for i in range(W - 2, -1, -1):
        u[i] = Q[i] @ (Cinv[i] @ (u[i + 1] - h[i]))
    return u


def remote_variation(values, shifts, idx):
    """``out[j] = max_{i in idx} |values[i + shifts[j]] - values[i]|`` (Euclidean).

    values : (W, q), shifts : (S,) int, idx : (I,) int -> (S,)
    Callers guarantee every ``i + shift`` is in range.
    """
    values = np.asarray(values, dtype=float)
    idx = np.asarray(idx, dtype=np.int64)
    base = values[idx]
    out = np.empty(len(shifts))
    for j, tau in enumerate(shifts):
        d = values[idx + int(tau)] - base
        out[j] = np.sqrt(np.max(np.einsum("ij,ij->i", d, d))) if len(idx) else 0.0
    return out
