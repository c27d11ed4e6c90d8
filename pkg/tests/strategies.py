"""Shared generators for hyperbolic test matrices."""

import numpy as np
from hypothesis import strategies as st


def hyperbolic_matrix(rng, q, gap=0.15):
    """Random real q x q matrix whose eigenvalue moduli avoid ``[1-gap, 1+gap]``.

    Built from real and rotation blocks, conjugated by a well-conditioned
    random basis.
    """
    D = np.zeros((q, q))
    i = 0
    while i < q:
        r = rng.uniform(0.1, 1 - gap) if rng.random() < 0.5 else rng.uniform(1 + gap, 3.0)
        if i + 1 < q and rng.random() < 0.4:
            th = rng.uniform(0.3, 2.8)
            D[i : i + 2, i : i + 2] = r * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            i += 2
        else:
            D[i, i] = r * rng.choice([-1.0, 1.0])
            i += 1
    Q, _ = np.linalg.qr(rng.normal(size=(q, q)))
    S = np.diag(rng.uniform(0.5, 2.0, size=q))
    V = Q @ S
    return V @ D @ np.linalg.inv(V)


seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 4)
