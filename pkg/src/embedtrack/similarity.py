"""Inference-time similarity between detection and candidate embeddings.

Two metrics: plain cosine similarity and the bi-directional softmax that
averages a detections-over-candidates softmax with a candidates-over-
detections softmax, so a high score requires mutual nearest-neighborhood.
Bi-softmax operates on raw (unnormalized) dot products; cosine normalizes.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "validate_embeddings",
    "cosine_matrix",
    "bisoftmax_components",
    "bisoftmax_matrix",
    "masked_bisoftmax",
]

NEG_INF = -np.inf


def validate_embeddings(emb: np.ndarray, dim: int | None = None, name: str = "embeddings") -> np.ndarray:
    """Coerce to a (N, D) float64 array and check finiteness and dimension."""
    arr = np.asarray(emb, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contain non-finite values")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name} have dimension {arr.shape[1]}, expected {dim}")
    return arr


def cosine_matrix(dets: np.ndarray, cands: np.ndarray) -> np.ndarray:
    """(N, M) cosine similarity between detection and candidate embeddings.

    Raises on zero-norm vectors, naming the offending side and row.
    """
    n = validate_embeddings(dets, name="detection embeddings")
    m = validate_embeddings(cands, dim=n.shape[1], name="candidate embeddings")
    n_norm = np.linalg.norm(n, axis=1)
    m_norm = np.linalg.norm(m, axis=1)
    for norms, label in ((n_norm, "detection"), (m_norm, "candidate")):
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise ValueError(f"zero-norm {label} embedding at index {bad[0]}")
    return (n / n_norm[:, None]) @ (m / m_norm[:, None]).T


def _stable_softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    """Softmax with per-slice max subtraction; fully masked slices give 0."""
    finite_max = np.max(
        np.where(np.isfinite(logits), logits, -np.inf), axis=axis, keepdims=True
    )
    # slices with no finite entry: shift by 0, exp(-inf) = 0 handles the rest
    shift = np.where(np.isfinite(finite_max), finite_max, 0.0)
    with np.errstate(invalid="ignore"):
        e = np.exp(logits - shift)
    e = np.where(np.isfinite(logits), e, 0.0)
    denom = np.sum(e, axis=axis, keepdims=True)
    out = np.zeros_like(e)
    np.divide(e, denom, out=out, where=denom > 0)
    return out


def bisoftmax_components(dets: np.ndarray, cands: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise and column-wise softmax terms of the bi-softmax.

    Row term (i, :) sums to 1 over candidates; column term (:, j) sums to
    1 over detections. Raw dot-product logits, max-subtracted for overflow
    safety.
    """
    n = validate_embeddings(dets, name="detection embeddings")
    m = validate_embeddings(cands, dim=n.shape[1], name="candidate embeddings")
    if n.shape[0] == 0 or m.shape[0] == 0:
        raise ValueError("bi-softmax requires at least one detection and one candidate")
    logits = n @ m.T
    return _stable_softmax(logits, axis=1), _stable_softmax(logits, axis=0)


def bisoftmax_matrix(dets: np.ndarray, cands: np.ndarray) -> np.ndarray:
    """(N, M) bi-directional softmax similarity; every entry in (0, 1]."""
    row, col = bisoftmax_components(dets, cands)
    return 0.5 * (row + col)


def masked_bisoftmax(dets: np.ndarray, cands: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Bi-softmax with inadmissible (detection, candidate) pairs removed
    before normalization.

    ``allowed`` is an (N, M) boolean mask; disallowed pairs get -inf
    logits so each softmax normalizes over admissible pairs only.
    Entries whose pair is disallowed, and rows/columns with no admissible
    pair at all, come back as 0.
    """
    n = validate_embeddings(dets, name="detection embeddings")
    m = validate_embeddings(cands, dim=n.shape[1], name="candidate embeddings")
    if n.shape[0] == 0 or m.shape[0] == 0:
        raise ValueError("bi-softmax requires at least one detection and one candidate")
    allowed = np.asarray(allowed, dtype=bool)
    if allowed.shape != (n.shape[0], m.shape[0]):
        raise ValueError(f"mask shape {allowed.shape} does not match ({n.shape[0]}, {m.shape[0]})")
    logits = n @ m.T
    logits = np.where(allowed, logits, NEG_INF)
    return 0.5 * (_stable_softmax(logits, axis=1) + _stable_softmax(logits, axis=0))
