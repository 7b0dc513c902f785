"""Shared test utilities: independent oracles and random samplers.

The oracles here are deliberately small re-derivations (plain
eigendecomposition, dense propagator products) so that library results
can be checked against an implementation that shares no code with them.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "rotation",
    "eig_projector",
    "random_orthogonal",
    "random_conjugator",
    "random_hyperbolic",
    "dense_product",
    "span_gap",
]


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def eig_projector(m) -> np.ndarray:
    """Oracle: spectral projector onto |z| < 1 via a bare eigendecomposition."""
    a = np.asarray(m, dtype=float)
    w, v = np.linalg.eig(a)
    sel = (np.abs(w) < 1.0).astype(complex)
    return (v @ (sel[:, None] * np.linalg.inv(v))).real


def random_orthogonal(rng, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def random_conjugator(rng, dim: int, max_shear: float = 2.0) -> np.ndarray:
    """Random real matrix with condition number at most max_shear."""
    s = np.exp(rng.uniform(0.0, np.log(max_shear), size=dim))
    s /= s.min()
    return random_orthogonal(rng, dim) @ (s[:, None] * random_orthogonal(rng, dim))


def random_hyperbolic(
    rng,
    dim: int,
    stable_lo: float = 0.15,
    stable_hi: float = 0.85,
    unstable_lo: float = 1.2,
    unstable_hi: float = 4.0,
    max_shear: float = 2.0,
    n_stable: int | None = None,
):
    """Random real matrix with eigenvalue moduli bounded away from the circle.

    Assembled from 1x1 blocks (real eigenvalues, random sign) and 2x2
    rotation blocks (complex pairs), then conjugated by a moderately
    conditioned random real matrix.  Returns (matrix, sorted moduli).
    """
    blocks = []
    moduli = []
    remaining = dim
    stable_left = rng.integers(0, dim + 1) if n_stable is None else n_stable
    while remaining > 0:
        size = 2 if remaining >= 2 and rng.random() < 0.4 else 1
        take_stable = 0 < stable_left and (stable_left >= size or size == 1)
        if take_stable and size <= stable_left:
            r = rng.uniform(stable_lo, stable_hi)
            stable_left -= size
        else:
            r = rng.uniform(unstable_lo, unstable_hi)
        if size == 1:
            blocks.append(np.array([[r * (1 if rng.random() < 0.5 else -1)]]))
            moduli.append(r)
        else:
            theta = rng.uniform(0.25, np.pi - 0.25)
            blocks.append(r * rotation(theta))
            moduli.extend([r, r])
        remaining -= size
    core = np.zeros((dim, dim))
    at = 0
    for b in blocks:
        k = b.shape[0]
        core[at : at + k, at : at + k] = b
        at += k
    v = random_conjugator(rng, dim, max_shear=max_shear)
    return v @ core @ np.linalg.inv(v), np.sort(np.array(moduli))


def dense_product(matrices) -> np.ndarray:
    """Oracle: left-to-right composition product A_{k-1} ... A_0 of a list."""
    out = np.eye(matrices[0].shape[0])
    for a in matrices:
        out = a @ out
    return out


def span_gap(f, g) -> float:
    """Oracle: spectral-norm distance between the column spans of two frames.

    Frames need not be orthonormal; each span is turned into its
    orthogonal projector first.  Zero-column frames denote the zero
    subspace.
    """

    def orth_proj(m):
        m = np.asarray(m, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if m.shape[1] == 0:
            return np.zeros((m.shape[0], m.shape[0]))
        q, _ = np.linalg.qr(m)
        return q @ q.T

    return float(np.linalg.norm(orth_proj(f) - orth_proj(g), 2))
