"""Quasi-dense sample assignment and the contrastive embedding objective.

Region samples from a key/reference frame pair are matched densely: every
key sample against every reference sample, positive iff both are assigned
to the same ground-truth instance. Three embedding-loss variants are
supported (single-positive InfoNCE, its naive multi-positive sum, and the
accumulated multi-positive form), plus an auxiliary L2 loss on cosine
similarity. Gradients are analytic; a finite-difference helper is provided
for checking them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import BoundingBox, iou_matrix
from .similarity import validate_embeddings

__all__ = [
    "POSITIVE",
    "NEGATIVE",
    "IGNORED",
    "RegionSample",
    "SampleBatch",
    "LossConfig",
    "assign_samples",
    "sample_batch",
    "loss_embed",
    "loss_aux",
    "loss_total",
    "finite_difference_gradient",
    "aux_selection_margin",
    "IndexedBatch",
    "ToyProblem",
    "make_toy_problem",
    "optimize_embeddings",
    "cross_frame_nn_accuracy",
    "dump_batch",
    "load_batch",
]

POSITIVE = "positive"
NEGATIVE = "negative"
IGNORED = "ignored"

VARIANTS = ("single_positive", "naive_multi", "accumulated_multi")


@dataclass
class RegionSample:
    """A region proposal labeled against ground truth."""

    box: BoundingBox
    identity: int | None
    polarity: str
    max_iou: float
    embedding: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.polarity not in (POSITIVE, NEGATIVE, IGNORED):
            raise ValueError(f"unknown polarity {self.polarity!r}")
        if self.polarity == POSITIVE and self.identity is None:
            raise ValueError("positive sample requires an identity")
        if self.polarity == NEGATIVE and self.identity is not None:
            raise ValueError("negative sample must not carry an identity")


@dataclass
class SampleBatch:
    """Key/reference samples with their pairwise positivity matrix."""

    key: list[RegionSample]
    ref: list[RegionSample]
    positivity: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        pos = np.zeros((len(self.key), len(self.ref)), dtype=bool)
        for i, ks in enumerate(self.key):
            if ks.polarity != POSITIVE:
                continue
            for j, rs in enumerate(self.ref):
                if rs.polarity == POSITIVE and rs.identity == ks.identity:
                    pos[i, j] = True
        self.positivity = pos

    def embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack the per-sample embeddings into (V, D) and (K, D) arrays."""
        if any(s.embedding is None for s in self.key + self.ref):
            raise ValueError("batch has samples without embeddings")
        return (
            np.stack([s.embedding for s in self.key]).astype(np.float64),
            np.stack([s.embedding for s in self.ref]).astype(np.float64),
        )


@dataclass
class LossConfig:
    """Weights and variant selection for the total objective."""

    gamma1: float = 0.25
    gamma2: float = 1.0
    aux_neg_ratio: int = 3
    variant: str = "accumulated_multi"

    def __post_init__(self) -> None:
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}")


def assign_samples(
    regions: Sequence[BoundingBox],
    gts: Sequence[tuple[BoundingBox, int]],
    alpha1: float = 0.7,
    alpha2: float = 0.3,
) -> list[RegionSample]:
    """Label regions positive/negative/ignored by max IoU against ground truth.

    A region is positive (with the identity of its best-overlapping ground
    truth) if max IoU > alpha1, negative if max IoU < alpha2, ignored in
    between. IoU ties break toward the lower ground-truth index. With no
    ground truths every region is negative with max_iou 0.
    """
    if alpha2 > alpha1:
        raise ValueError(f"alpha2 ({alpha2}) must not exceed alpha1 ({alpha1})")
    if not gts:
        return [RegionSample(r, None, NEGATIVE, 0.0) for r in regions]
    overlaps = iou_matrix(
        np.stack([r.as_array() for r in regions]) if regions else np.zeros((0, 4)),
        np.stack([g[0].as_array() for g in gts]),
    )
    out: list[RegionSample] = []
    for i, region in enumerate(regions):
        best = int(np.argmax(overlaps[i]))  # argmax takes the first max: lower gt index
        miou = float(overlaps[i, best])
        if miou > alpha1:
            out.append(RegionSample(region, gts[best][1], POSITIVE, miou))
        elif miou < alpha2:
            out.append(RegionSample(region, None, NEGATIVE, miou))
        else:
            out.append(RegionSample(region, None, IGNORED, miou))
    return out


def _iou_balanced_draw(
    negatives: list[int],
    max_ious: np.ndarray,
    count: int,
    n_bins: int,
    upper: float,
    rng: np.random.Generator,
) -> list[int]:
    """Round-robin draw across equal-width IoU bins over [0, upper)."""
    edges = np.linspace(0.0, upper, n_bins + 1)
    bins: list[list[int]] = [[] for _ in range(n_bins)]
    for idx in negatives:
        b = min(int(np.searchsorted(edges, max_ious[idx], side="right")) - 1, n_bins - 1)
        b = max(b, 0)
        bins[b].append(idx)
    for b in bins:
        rng.shuffle(b)
    drawn: list[int] = []
    while len(drawn) < count:
        nonempty = [b for b in bins if b]
        if not nonempty:
            break
        for b in nonempty:
            if len(drawn) >= count:
                break
            drawn.append(b.pop())
    return drawn


def sample_batch(
    key_samples: Sequence[RegionSample],
    ref_samples: Sequence[RegionSample],
    rng_seed: int,
    sizes: tuple[int, int] = (128, 256),
    ref_pos_ratio: float = 1.0,
    n_iou_bins: int = 3,
    neg_iou_upper: float = 0.3,
) -> SampleBatch:
    """Subsample labeled regions into a training batch.

    Key samples are drawn uniformly from all non-ignored candidates.
    Reference positives are drawn uniformly; reference negatives use
    IoU-balanced sampling (equal-width bins over [0, neg_iou_upper),
    round-robin across non-empty bins). Partial fill is allowed when a
    pool is short. Deterministic under a fixed seed.
    """
    rng = np.random.default_rng(rng_seed)
    v_size, k_size = sizes

    key_pool = [s for s in key_samples if s.polarity != IGNORED]
    ref_pos = [i for i, s in enumerate(ref_samples) if s.polarity == POSITIVE]
    ref_neg = [i for i, s in enumerate(ref_samples) if s.polarity == NEGATIVE]
    key_pos_count = sum(1 for s in key_pool if s.polarity == POSITIVE)
    if key_pos_count == 0 or not ref_pos:
        raise ValueError("batch has no positive pairs")

    key_idx = rng.permutation(len(key_pool))[:v_size]
    keys = [key_pool[i] for i in sorted(key_idx)]

    n_pos_target = int(round(k_size * ref_pos_ratio / (1.0 + ref_pos_ratio)))
    n_pos = min(len(ref_pos), n_pos_target)
    pos_idx = list(rng.permutation(np.array(ref_pos))[:n_pos])

    n_neg = min(len(ref_neg), k_size - n_pos)
    max_ious = np.array([s.max_iou for s in ref_samples])
    neg_idx = _iou_balanced_draw(ref_neg, max_ious, n_neg, n_iou_bins, neg_iou_upper, rng)

    refs = [ref_samples[i] for i in sorted(int(i) for i in pos_idx + neg_idx)]
    return SampleBatch(key=keys, ref=refs)


# ---------------------------------------------------------------------------
# Losses and gradients
# ---------------------------------------------------------------------------


def _embed_value_and_grad(
    positivity: np.ndarray,
    key_emb: np.ndarray,
    ref_emb: np.ndarray,
    variant: str,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Embedding loss with analytic gradients w.r.t. both embedding sets.

    Per key sample with P positives and negatives N (all non-positive
    reference samples), the accumulated form is
    log[1 + sum_{p,n} exp(v.k_n - v.k_p)], which factorizes as
    log(1 + exp(lse(-a) + lse(b))) over positive dots a and negative dots
    b; gradients follow from softmax weights over the pair terms. The
    single-positive variant averages the per-positive InfoNCE losses, the
    naive multi-positive variant sums them. Result is the mean over key
    samples that have at least one positive.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}")
    V = key_emb.shape[0]
    g_key = np.zeros_like(key_emb)
    g_ref = np.zeros_like(ref_emb)
    dots = key_emb @ ref_emb.T  # (V, K)
    active = [i for i in range(V) if positivity[i].any()]
    if not active:
        raise ValueError("batch has no positive pairs")
    total = 0.0
    inv_n = 1.0 / len(active)
    for i in active:
        pos = np.flatnonzero(positivity[i])
        neg = np.flatnonzero(~positivity[i])
        v = key_emb[i]
        a = dots[i, pos]  # positive dots
        if neg.size == 0:
            continue  # log(1 + 0) = 0, zero gradient
        b = dots[i, neg]  # negative dots
        bmax = b.max()
        eb = np.exp(b - bmax)
        if variant == "accumulated_multi":
            amin = a.min()
            ea = np.exp(amin - a)  # exp(-a) shifted by the dominant term
            # L = log(1 + exp(lse(-a) + lse(b)))
            z = (bmax - amin) + np.log(ea.sum()) + np.log(eb.sum())
            L = np.logaddexp(0.0, z)
            w = np.exp(z - L)  # total pair weight, = S / (1 + S)
            pa = ea / ea.sum()  # softmax over -a
            pb = eb / eb.sum()  # softmax over b
            row_p = w * pa  # sum_n w_pn per positive p
            col_n = w * pb  # sum_p w_pn per negative n
            total += inv_n * L
            g_key[i] += inv_n * (col_n @ ref_emb[neg] - row_p @ ref_emb[pos])
            g_ref[neg] += inv_n * np.outer(col_n, v)
            g_ref[pos] -= inv_n * np.outer(row_p, v)
        else:
            # per-positive InfoNCE: L_p = log(1 + sum_n exp(b_n - a_p))
            lse_b = bmax + np.log(eb.sum())
            Lp = np.logaddexp(0.0, lse_b - a)  # (|P|,)
            wp = np.exp(lse_b - a - Lp)  # per-positive total negative weight
            pb = eb / eb.sum()
            scale = inv_n / pos.size if variant == "single_positive" else inv_n
            total += scale * Lp.sum()
            col_n = wp.sum() * pb  # sum over p of w_pn per negative n
            g_key[i] += scale * (col_n @ ref_emb[neg] - wp @ ref_emb[pos])
            g_ref[neg] += scale * np.outer(col_n, v)
            g_ref[pos] -= scale * np.outer(wp, v)
    return float(total), g_key, g_ref


def _aux_pairs(
    positivity: np.ndarray,
    cos: np.ndarray,
    neg_ratio: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All positive pairs plus the neg_ratio x |positives| hardest negatives
    (highest cosine). Returns (rows, cols, targets)."""
    pi, pj = np.nonzero(positivity)
    if pi.size == 0:
        raise ValueError("batch has no positive pairs")
    ni, nj = np.nonzero(~positivity)
    n_hard = min(ni.size, neg_ratio * pi.size)
    order = np.argsort(-cos[ni, nj], kind="stable")[:n_hard]
    rows = np.concatenate([pi, ni[order]])
    cols = np.concatenate([pj, nj[order]])
    targets = np.concatenate([np.ones(pi.size), np.zeros(n_hard)])
    return rows, cols, targets


def _cosine_and_norms(key_emb: np.ndarray, ref_emb: np.ndarray):
    kn = np.linalg.norm(key_emb, axis=1)
    rn = np.linalg.norm(ref_emb, axis=1)
    if np.any(kn == 0) or np.any(rn == 0):
        raise ValueError("zero-norm embedding in auxiliary loss")
    cos = (key_emb / kn[:, None]) @ (ref_emb / rn[:, None]).T
    return cos, kn, rn


def _aux_value_and_grad(
    positivity: np.ndarray,
    key_emb: np.ndarray,
    ref_emb: np.ndarray,
    neg_ratio: int,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Auxiliary L2 loss (cos - c)^2 with analytic gradients; mean over all
    positive pairs and the hard-mined negatives."""
    cos, kn, rn = _cosine_and_norms(key_emb, ref_emb)
    rows, cols, targets = _aux_pairs(positivity, cos, neg_ratio)
    c = cos[rows, cols]
    resid = c - targets
    value = float(np.mean(resid**2))
    g_key = np.zeros_like(key_emb)
    g_ref = np.zeros_like(ref_emb)
    coef = 2.0 * resid / rows.size
    inv_prod = 1.0 / (kn[rows] * rn[cols])
    dk = coef[:, None] * (ref_emb[cols] * inv_prod[:, None]
                          - (c / kn[rows] ** 2)[:, None] * key_emb[rows])
    dr = coef[:, None] * (key_emb[rows] * inv_prod[:, None]
                          - (c / rn[cols] ** 2)[:, None] * ref_emb[cols])
    np.add.at(g_key, rows, dk)
    np.add.at(g_ref, cols, dr)
    return value, g_key, g_ref


def aux_selection_margin(batch: SampleBatch, embeddings=None, neg_ratio: int = 3) -> float:
    """Cosine gap at the hard-negative cutoff of the auxiliary loss.

    The aux loss is non-smooth where the hard-negative selection changes;
    finite-difference gradient checks should only run where this margin is
    comfortably positive. Returns inf when no negative is excluded.
    """
    key_emb, ref_emb = embeddings if embeddings is not None else batch.embeddings()
    cos, _, _ = _cosine_and_norms(key_emb, ref_emb)
    pi, pj = np.nonzero(batch.positivity)
    ni, nj = np.nonzero(~batch.positivity)
    n_hard = min(ni.size, neg_ratio * pi.size)
    if n_hard == ni.size:
        return float("inf")
    vals = np.sort(cos[ni, nj])[::-1]
    return float(vals[n_hard - 1] - vals[n_hard])


def _check_embeddings(batch: SampleBatch, embeddings):
    if embeddings is None:
        key_emb, ref_emb = batch.embeddings()
    else:
        key_emb, ref_emb = embeddings
    key_emb = validate_embeddings(key_emb, name="key embeddings")
    ref_emb = validate_embeddings(ref_emb, dim=key_emb.shape[1], name="ref embeddings")
    if key_emb.shape[0] != len(batch.key) or ref_emb.shape[0] != len(batch.ref):
        raise ValueError("embedding counts do not match batch sizes")
    return key_emb, ref_emb


def loss_embed(batch: SampleBatch, embeddings=None, variant: str = "accumulated_multi") -> float:
    """Contrastive embedding loss, mean over key samples with >= 1 positive."""
    key_emb, ref_emb = _check_embeddings(batch, embeddings)
    value, _, _ = _embed_value_and_grad(batch.positivity, key_emb, ref_emb, variant)
    return value


def loss_aux(batch: SampleBatch, embeddings=None, neg_ratio: int = 3) -> float:
    """Auxiliary L2 loss on cosine similarity with hard negative mining."""
    key_emb, ref_emb = _check_embeddings(batch, embeddings)
    value, _, _ = _aux_value_and_grad(batch.positivity, key_emb, ref_emb, neg_ratio)
    return value


def loss_total(
    batch: SampleBatch,
    embeddings=None,
    cfg: LossConfig | None = None,
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Weighted total loss and its analytic gradient w.r.t. all embeddings.

    Returns (value, (d/d key_embeddings, d/d ref_embeddings)). The detector
    term of the full objective is out of scope here, so the total is
    gamma1 * embedding loss + gamma2 * auxiliary loss. Constituents with a
    zero weight are skipped entirely.
    """
    cfg = cfg or LossConfig()
    key_emb, ref_emb = _check_embeddings(batch, embeddings)
    value = 0.0
    g_key = np.zeros_like(key_emb)
    g_ref = np.zeros_like(ref_emb)
    if cfg.gamma1 > 0:
        v, gk, gr = _embed_value_and_grad(batch.positivity, key_emb, ref_emb, cfg.variant)
        value += cfg.gamma1 * v
        g_key += cfg.gamma1 * gk
        g_ref += cfg.gamma1 * gr
    if cfg.gamma2 > 0:
        v, gk, gr = _aux_value_and_grad(batch.positivity, key_emb, ref_emb, cfg.aux_neg_ratio)
        value += cfg.gamma2 * v
        g_key += cfg.gamma2 * gk
        g_ref += cfg.gamma2 * gr
    return value, (g_key, g_ref)


def finite_difference_gradient(
    batch: SampleBatch,
    embeddings,
    cfg: LossConfig,
    h: float = 1e-5,
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient of loss_total, the independent oracle
    for the analytic gradients."""
    key_emb, ref_emb = _check_embeddings(batch, embeddings)
    grads = []
    for which in (0, 1):
        base = key_emb if which == 0 else ref_emb
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + h
            up, _ = loss_total(batch, (key_emb, ref_emb), cfg)
            base[idx] = orig - h
            down, _ = loss_total(batch, (key_emb, ref_emb), cfg)
            base[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads[0], grads[1]


# ---------------------------------------------------------------------------
# Desk-scale embedding optimization
# ---------------------------------------------------------------------------


@dataclass
class IndexedBatch:
    """A sample batch whose embeddings live in a shared parameter matrix."""

    batch: SampleBatch
    key_ids: np.ndarray
    ref_ids: np.ndarray


@dataclass
class ToyProblem:
    """A small multi-frame world for optimizing embeddings directly."""

    params: np.ndarray  # (n_samples, D) free embedding parameters
    batches: list[IndexedBatch]
    identity: np.ndarray  # (n_samples,) instance id per sample
    frame: np.ndarray  # (n_samples,) frame index per sample


def make_toy_problem(
    n_identities: int,
    n_frames: int,
    dim: int,
    seed: int,
    init_scale: float = 0.1,
) -> ToyProblem:
    """Build consecutive-frame batches where every identity appears once
    per frame; embeddings start as small random vectors."""
    if n_identities < 2:
        raise ValueError("need at least two identities for negatives to exist")
    rng = np.random.default_rng(seed)
    n_samples = n_identities * n_frames
    params = init_scale * rng.standard_normal((n_samples, dim))
    identity = np.tile(np.arange(n_identities), n_frames)
    frame = np.repeat(np.arange(n_frames), n_identities)
    unit = BoundingBox(0, 0, 1, 1)

    def frame_samples(t: int) -> list[RegionSample]:
        return [
            RegionSample(unit, int(i), POSITIVE, 1.0)
            for i in range(n_identities)
        ]

    batches = []
    for t in range(n_frames - 1):
        b = SampleBatch(key=frame_samples(t), ref=frame_samples(t + 1))
        key_ids = np.arange(n_identities) + t * n_identities
        ref_ids = np.arange(n_identities) + (t + 1) * n_identities
        batches.append(IndexedBatch(b, key_ids, ref_ids))
    return ToyProblem(params, batches, identity, frame)


def optimize_embeddings(
    problem: ToyProblem,
    cfg: LossConfig,
    steps: int,
    lr: float,
    rng_seed: int = 0,
) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Plain gradient descent on the total loss, embeddings as free
    parameters.

    Each step visits every batch in a seed-shuffled order, accumulates the
    mean gradient into the shared parameter matrix and takes one descent
    step. Deterministic under a fixed seed. Raises on divergence (loss
    above 1e9 or non-finite), naming the step.
    """
    rng = np.random.default_rng(rng_seed)
    params = problem.params.copy()
    trace: list[tuple[int, float]] = []
    n = len(problem.batches)
    for step in range(steps):
        order = rng.permutation(n)
        grad = np.zeros_like(params)
        total = 0.0
        for bi in order:
            ib = problem.batches[bi]
            emb = (params[ib.key_ids], params[ib.ref_ids])
            value, (gk, gr) = loss_total(ib.batch, emb, cfg)
            total += value / n
            np.add.at(grad, ib.key_ids, gk / n)
            np.add.at(grad, ib.ref_ids, gr / n)
        if not np.isfinite(total) or total > 1e9:
            raise RuntimeError(f"embedding optimization diverged at step {step} (loss={total})")
        trace.append((step, total))
        params -= lr * grad
    return params, trace


def cross_frame_nn_accuracy(
    params: np.ndarray,
    identity: np.ndarray,
    frame: np.ndarray,
) -> float:
    """Fraction of samples whose cosine nearest neighbor in the next frame
    shares their identity."""
    frames = np.unique(frame)
    norm = np.linalg.norm(params, axis=1, keepdims=True)
    unit = params / np.where(norm > 0, norm, 1.0)
    correct = 0
    total = 0
    for t in frames[:-1]:
        cur = np.flatnonzero(frame == t)
        nxt = np.flatnonzero(frame == t + 1)
        if nxt.size == 0:
            continue
        sim = unit[cur] @ unit[nxt].T
        nearest = nxt[np.argmax(sim, axis=1)]
        correct += int(np.sum(identity[cur] == identity[nearest]))
        total += cur.size
    return correct / total if total else 0.0


# ---------------------------------------------------------------------------
# Batch serialization (line-delimited text)
# ---------------------------------------------------------------------------


def _sample_line(tag: str, s: RegionSample) -> str:
    ident = "-" if s.identity is None else str(s.identity)
    emb = " ".join(repr(float(x)) for x in (s.embedding if s.embedding is not None else []))
    box = " ".join(repr(float(v)) for v in (s.box.x1, s.box.y1, s.box.x2, s.box.y2))
    return f"{tag} {box} {ident} {s.polarity} {repr(float(s.max_iou))} {emb}".rstrip()


def dump_batch(batch: SampleBatch, fp) -> None:
    """Write a batch as one sample per line: frame tag, box, identity,
    polarity, max IoU, embedding components."""
    for s in batch.key:
        fp.write(_sample_line("key", s) + "\n")
    for s in batch.ref:
        fp.write(_sample_line("ref", s) + "\n")


def load_batch(fp) -> SampleBatch:
    """Inverse of dump_batch; reconstructs the positivity matrix."""
    keys: list[RegionSample] = []
    refs: list[RegionSample] = []
    for lineno, line in enumerate(fp, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 7:
            raise ValueError(f"line {lineno}: malformed sample row")
        tag = parts[0]
        if tag not in ("key", "ref"):
            raise ValueError(f"line {lineno}: unknown frame tag {tag!r}")
        box = BoundingBox(*(float(p) for p in parts[1:5]))
        ident = None if parts[5] == "-" else int(parts[5])
        polarity = parts[6]
        max_iou = float(parts[7])
        emb = np.array([float(p) for p in parts[8:]]) if len(parts) > 8 else None
        sample = RegionSample(box, ident, polarity, max_iou, emb)
        (keys if tag == "key" else refs).append(sample)
    return SampleBatch(key=keys, ref=refs)
