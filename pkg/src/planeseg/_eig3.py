"""Vectorized smallest-eigenpair solver for batches of symmetric 3x3 matrices.

Uses the trigonometric closed form for the eigenvalues and cross products
of (A - lambda*I) columns for the eigenvector. Rows whose cross products
collapse (near-isotropic or repeated-eigenvalue matrices) fall back to
LAPACK. Orders of magnitude faster than looping np.linalg.eigh over tens
of thousands of neighborhood covariances.
"""

from __future__ import annotations

import numpy as np

__all__ = ["smallest_eigenpair_batch"]


def smallest_eigenpair_batch(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (lambda_min, eigvec_min, trace) for a (B, 3, 3) symmetric batch.

    Eigenvectors are unit length; their sign is unspecified.
    """
    a = np.asarray(mats, dtype=np.float64)
    if a.ndim != 3 or a.shape[1:] != (3, 3):
        raise ValueError(f"expected (B, 3, 3) batch, got {a.shape}")
    b = a.shape[0]
    tr = np.trace(a, axis1=1, axis2=2)
    q = tr / 3.0
    d = a - q[:, None, None] * np.eye(3)
    p2 = (d * d).sum(axis=(1, 2)) / 6.0
    p = np.sqrt(p2)

    lam_min = np.full(b, 0.0)
    nontrivial = p > 0
    if nontrivial.any():
        dn = d[nontrivial] / p[nontrivial, None, None]
        r = np.clip(np.linalg.det(dn) / 2.0, -1.0, 1.0)
        phi = np.arccos(r) / 3.0
        # eigenvalues are q + 2p*cos(phi + 2k*pi/3); k = 1 gives the smallest
        lam_min[nontrivial] = q[nontrivial] + 2.0 * p[nontrivial] * np.cos(
            phi + 2.0 * np.pi / 3.0
        )
    lam_min[~nontrivial] = q[~nontrivial]

    m = a - lam_min[:, None, None] * np.eye(3)
    c0 = np.cross(m[:, :, 0], m[:, :, 1])
    c1 = np.cross(m[:, :, 0], m[:, :, 2])
    c2 = np.cross(m[:, :, 1], m[:, :, 2])
    cand = np.stack((c0, c1, c2), axis=1)
    norms = np.linalg.norm(cand, axis=2)
    best = norms.argmax(axis=1)
    vec = cand[np.arange(b), best]
    vlen = norms[np.arange(b), best]

    # cross products vanish when two eigenvalues coincide; let LAPACK decide
    scale = np.abs(a).max(axis=(1, 2))
    bad = vlen <= 1e-12 * np.maximum(scale * scale, 1e-300)
    good = ~bad
    vec[good] = vec[good] / vlen[good, None]
    if bad.any():
        w, v = np.linalg.eigh(a[bad])
        lam_min[bad] = w[:, 0]
        vec[bad] = v[:, :, 0]
    return lam_min, vec, tr
