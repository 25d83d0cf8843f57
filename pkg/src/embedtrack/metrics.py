"""Tracking evaluation: CLEAR-MOT (MOTA), IDF1 and HOTA with full
sub-component decomposition, per class and aggregate.

Conventions:
- CLEAR correspondence carries matches over between frames while they stay
  above the IoU threshold; the remainder is matched optimally (maximum
  total IoU). An ID switch is counted when a ground-truth object's matched
  prediction ID differs from its most recent previous match.
- IDF1 uses a global trajectory-level optimal assignment on per-pair
  matched-frame counts.
- HOTA matches per frame at each localization threshold alpha, maximizing
  match count then total IoU, and averages over alpha in {0.05, ..., 0.95}.
- Ground-truth entries flagged invisible are dropped from numerator and
  denominator before any matching.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BoundingBox, iou_matrix

__all__ = [
    "ObjectEntry",
    "TrackSet",
    "ClearMotResult",
    "Idf1Result",
    "HotaResult",
    "ClassMetrics",
    "EvalReport",
    "clear_mot",
    "idf1",
    "hota",
    "HOTA_ALPHAS",
    "per_class_report",
]

HOTA_ALPHAS = tuple(round(0.05 * i, 2) for i in range(1, 20))

_COUNT_DOMINANCE = 1000.0  # added to IoU weights so match count dominates


@dataclass(frozen=True)
class ObjectEntry:
    """One object in one frame."""

    obj_id: int
    class_id: int
    box: BoundingBox
    visible: bool = True


class TrackSet:
    """Per-frame object lists, for ground truth or predictions."""

    def __init__(self):
        self.frames: dict[int, list[ObjectEntry]] = {}

    def add(self, frame: int, entry: ObjectEntry) -> None:
        bucket = self.frames.setdefault(frame, [])
        if any(e.obj_id == entry.obj_id for e in bucket):
            raise ValueError(f"duplicate object id {entry.obj_id} in frame {frame}")
        bucket.append(entry)

    def visible_frames(self) -> dict[int, list[ObjectEntry]]:
        return {
            f: [e for e in entries if e.visible]
            for f, entries in self.frames.items()
        }

    def class_ids(self) -> set[int]:
        return {e.class_id for entries in self.frames.values() for e in entries}

    def restrict_class(self, class_id: int) -> "TrackSet":
        out = TrackSet()
        for f, entries in self.frames.items():
            for e in entries:
                if e.class_id == class_id:
                    out.add(f, e)
        return out

    def num_boxes(self) -> int:
        return sum(len(e) for e in self.visible_frames().values())


@dataclass
class ClearMotResult:
    mota: float
    motp: float
    fp: int
    fn: int
    idsw: int
    mt: int
    ml: int
    num_gt: int
    num_matches: int


@dataclass
class Idf1Result:
    idf1: float
    idtp: int
    idfp: int
    idfn: int


@dataclass
class HotaResult:
    hota: float
    deta: float
    assa: float
    detre: float
    detpr: float
    assre: float
    asspr: float
    # per-alpha raw material, used for count-sum aggregation across classes
    alphas: tuple = HOTA_ALPHAS
    tp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)
    fp: list[int] = field(default_factory=list)
    ass_sum: list[float] = field(default_factory=list)
    assre_sum: list[float] = field(default_factory=list)
    asspr_sum: list[float] = field(default_factory=list)


def _match_max_iou(gt_boxes: np.ndarray, pr_boxes: np.ndarray, threshold: float,
                   count_first: bool) -> list[tuple[int, int, float]]:
    """Optimal bipartite matching among pairs with IoU >= threshold.

    Maximizes total IoU; with count_first, maximizes the number of matches
    first and total IoU second. Returns (gt_index, pred_index, iou) triples.
    """
    if gt_boxes.size == 0 or pr_boxes.size == 0:
        return []
    overlaps = iou_matrix(gt_boxes, pr_boxes)
    admissible = overlaps >= threshold
    if not admissible.any():
        return []
    weights = overlaps + (_COUNT_DOMINANCE if count_first else 0.0)
    cost = np.where(admissible, -weights, 0.0)
    rows, cols = linear_sum_assignment(cost)
    return [
        (int(r), int(c), float(overlaps[r, c]))
        for r, c in zip(rows, cols)
        if admissible[r, c]
    ]


def _check_has_gt(gt_frames: dict[int, list[ObjectEntry]]) -> int:
    total = sum(len(v) for v in gt_frames.values())
    if total == 0:
        raise ValueError("undefined MOTA denominator: ground truth contains no objects")
    return total


def clear_mot(gt: TrackSet, pred: TrackSet, iou_threshold: float = 0.5) -> ClearMotResult:
    """CLEAR-MOT accumulation with match carry-over."""
    gt_frames = gt.visible_frames()
    num_gt = _check_has_gt(gt_frames)
    pr_frames = pred.frames
    all_frames = sorted(set(gt_frames) | set(pr_frames))

    last_match: dict[int, int] = {}  # gt id -> most recent matched pred id
    fp = fn = idsw = 0
    num_matches = 0
    sum_iou = 0.0
    gt_presence: dict[int, int] = defaultdict(int)
    gt_covered: dict[int, int] = defaultdict(int)

    for f in all_frames:
        gts = gt_frames.get(f, [])
        prs = pr_frames.get(f, [])
        for g in gts:
            gt_presence[g.obj_id] += 1
        matched_gt: dict[int, int] = {}  # gt idx -> pred idx
        used_pr: set[int] = set()

        pr_by_id = {p.obj_id: j for j, p in enumerate(prs)}
        # carry over surviving correspondences
        for i, g in enumerate(gts):
            pid = last_match.get(g.obj_id)
            if pid is None or pid not in pr_by_id:
                continue
            j = pr_by_id[pid]
            if j in used_pr:
                continue  # two gt ids can share a last-matched pred id
            ov = iou_matrix(g.box.as_array(), prs[j].box.as_array())[0, 0]
            if ov >= iou_threshold:
                matched_gt[i] = j
                used_pr.add(j)
                num_matches += 1
                sum_iou += float(ov)

        rem_gt = [i for i in range(len(gts)) if i not in matched_gt]
        rem_pr = [j for j in range(len(prs)) if j not in used_pr]
        if rem_gt and rem_pr:
            gt_boxes = np.stack([gts[i].box.as_array() for i in rem_gt])
            pr_boxes = np.stack([prs[j].box.as_array() for j in rem_pr])
            for r, c, ov in _match_max_iou(gt_boxes, pr_boxes, iou_threshold, count_first=False):
                i, j = rem_gt[r], rem_pr[c]
                matched_gt[i] = j
                used_pr.add(j)
                num_matches += 1
                sum_iou += ov

        for i, j in matched_gt.items():
            gid, pid = gts[i].obj_id, prs[j].obj_id
            if gid in last_match and last_match[gid] != pid:
                idsw += 1
            last_match[gid] = pid
            gt_covered[gid] += 1
        fn += len(gts) - len(matched_gt)
        fp += len(prs) - len(used_pr)

    mt = ml = 0
    for gid, present in gt_presence.items():
        ratio = gt_covered.get(gid, 0) / present
        if ratio >= 0.8:
            mt += 1
        elif ratio <= 0.2:
            ml += 1

    mota = 1.0 - (fn + fp + idsw) / num_gt
    motp = sum_iou / num_matches if num_matches else 0.0
    return ClearMotResult(mota, motp, fp, fn, idsw, mt, ml, num_gt, num_matches)


def _trajectory_overlaps(gt_frames, pr_frames, iou_threshold):
    """Count, per (gt id, pred id), the frames where both are present and
    overlap at least iou_threshold."""
    overlap: dict[tuple[int, int], int] = defaultdict(int)
    for f in set(gt_frames) & set(pr_frames):
        gts, prs = gt_frames[f], pr_frames[f]
        if not gts or not prs:
            continue
        gt_boxes = np.stack([g.box.as_array() for g in gts])
        pr_boxes = np.stack([p.box.as_array() for p in prs])
        ious = iou_matrix(gt_boxes, pr_boxes)
        for i, g in enumerate(gts):
            for j, p in enumerate(prs):
                if ious[i, j] >= iou_threshold:
                    overlap[(g.obj_id, p.obj_id)] += 1
    return overlap


def idf1(gt: TrackSet, pred: TrackSet, iou_threshold: float = 0.5) -> Idf1Result:
    """Identification F1: global trajectory-level bipartite assignment."""
    gt_frames = gt.visible_frames()
    _check_has_gt(gt_frames)
    pr_frames = pred.frames
    n_gt_boxes = sum(len(v) for v in gt_frames.values())
    n_pr_boxes = sum(len(v) for v in pr_frames.values())

    overlap = _trajectory_overlaps(gt_frames, pr_frames, iou_threshold)
    gt_ids = sorted({g.obj_id for v in gt_frames.values() for g in v})
    pr_ids = sorted({p.obj_id for v in pr_frames.values() for p in v})
    idtp = 0
    if overlap:
        w = np.zeros((len(gt_ids), len(pr_ids)))
        gi = {g: i for i, g in enumerate(gt_ids)}
        pi = {p: i for i, p in enumerate(pr_ids)}
        for (g, p), c in overlap.items():
            w[gi[g], pi[p]] = c
        rows, cols = linear_sum_assignment(-w)
        idtp = int(w[rows, cols].sum())

    idfn = n_gt_boxes - idtp
    idfp = n_pr_boxes - idtp
    denom = idtp + 0.5 * idfn + 0.5 * idfp
    score = idtp / denom if denom else 0.0
    return Idf1Result(score, idtp, idfp, idfn)


def hota(gt: TrackSet, pred: TrackSet) -> HotaResult:
    """HOTA with DetA/AssA decomposition, averaged over alpha."""
    gt_frames = gt.visible_frames()
    _check_has_gt(gt_frames)
    pr_frames = pred.frames
    n_gt_boxes = sum(len(v) for v in gt_frames.values())
    n_pr_boxes = sum(len(v) for v in pr_frames.values())
    all_frames = sorted(set(gt_frames) | set(pr_frames))

    result = HotaResult(0, 0, 0, 0, 0, 0, 0)
    deta_list, assa_list, hota_list = [], [], []
    detre_list, detpr_list, assre_list, asspr_list = [], [], [], []

    for alpha in HOTA_ALPHAS:
        tp_pairs: list[tuple[int, int]] = []  # (gt id, pred id), one per TP
        pair_count: dict[tuple[int, int], int] = defaultdict(int)
        gt_total: dict[int, int] = defaultdict(int)
        pr_total: dict[int, int] = defaultdict(int)
        for f in all_frames:
            gts = gt_frames.get(f, [])
            prs = pr_frames.get(f, [])
            for g in gts:
                gt_total[g.obj_id] += 1
            for p in prs:
                pr_total[p.obj_id] += 1
            if not gts or not prs:
                continue
            gt_boxes = np.stack([g.box.as_array() for g in gts])
            pr_boxes = np.stack([p.box.as_array() for p in prs])
            for r, c, _ in _match_max_iou(gt_boxes, pr_boxes, alpha, count_first=True):
                pair = (gts[r].obj_id, prs[c].obj_id)
                tp_pairs.append(pair)
                pair_count[pair] += 1

        n_tp = len(tp_pairs)
        n_fn = n_gt_boxes - n_tp
        n_fp = n_pr_boxes - n_tp
        ass_sum = assre_sum = asspr_sum = 0.0
        for g, p in tp_pairs:
            tpa = pair_count[(g, p)]
            fna = gt_total[g] - tpa
            fpa = pr_total[p] - tpa
            ass_sum += tpa / (tpa + fna + fpa)
            assre_sum += tpa / (tpa + fna)
            asspr_sum += tpa / (tpa + fpa)
        deta = n_tp / (n_tp + n_fn + n_fp) if (n_tp + n_fn + n_fp) else 0.0
        assa = ass_sum / n_tp if n_tp else 0.0
        detre = n_tp / (n_tp + n_fn) if (n_tp + n_fn) else 0.0
        detpr = n_tp / (n_tp + n_fp) if (n_tp + n_fp) else 0.0
        assre = assre_sum / n_tp if n_tp else 0.0
        asspr = asspr_sum / n_tp if n_tp else 0.0

        result.tp.append(n_tp)
        result.fn.append(n_fn)
        result.fp.append(n_fp)
        result.ass_sum.append(ass_sum)
        result.assre_sum.append(assre_sum)
        result.asspr_sum.append(asspr_sum)
        deta_list.append(deta)
        assa_list.append(assa)
        hota_list.append(float(np.sqrt(deta * assa)))
        detre_list.append(detre)
        detpr_list.append(detpr)
        assre_list.append(assre)
        asspr_list.append(asspr)

    result.hota = float(np.mean(hota_list))
    result.deta = float(np.mean(deta_list))
    result.assa = float(np.mean(assa_list))
    result.detre = float(np.mean(detre_list))
    result.detpr = float(np.mean(detpr_list))
    result.assre = float(np.mean(assre_list))
    result.asspr = float(np.mean(asspr_list))
    return result


@dataclass
class ClassMetrics:
    mota: float | None = None
    motp: float | None = None
    idf1: float | None = None
    hota: float | None = None
    deta: float | None = None
    assa: float | None = None
    detre: float | None = None
    detpr: float | None = None
    assre: float | None = None
    asspr: float | None = None
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    mt: int = 0
    ml: int = 0
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0
    num_gt: int = 0

    def as_dict(self) -> dict:
        return {
            k: v for k, v in self.__dict__.items()
        }


@dataclass
class EvalReport:
    per_class: dict[int, ClassMetrics]
    aggregate: ClassMetrics
    mmota: float | None
    midf1: float | None


def per_class_report(gt: TrackSet, pred: TrackSet, iou_threshold: float = 0.5) -> EvalReport:
    """Evaluate each class independently and aggregate by summing counts.

    Classes appearing only in predictions contribute their false positives
    to the aggregate but are excluded from the mMOTA/mIDF1 class means.
    """
    classes = sorted(gt.class_ids() | pred.class_ids())
    per_class: dict[int, ClassMetrics] = {}
    motas, idf1s = [], []
    agg = ClassMetrics()
    hota_tp = np.zeros(len(HOTA_ALPHAS))
    hota_fn = np.zeros(len(HOTA_ALPHAS))
    hota_fp = np.zeros(len(HOTA_ALPHAS))
    hota_ass = np.zeros(len(HOTA_ALPHAS))
    hota_assre = np.zeros(len(HOTA_ALPHAS))
    hota_asspr = np.zeros(len(HOTA_ALPHAS))
    sum_iou_weighted = 0.0
    total_matches = 0

    for c in classes:
        gt_c = gt.restrict_class(c)
        pr_c = pred.restrict_class(c)
        cm = ClassMetrics()
        n_gt = gt_c.num_boxes()
        cm.num_gt = n_gt
        if n_gt == 0:
            # predictions without any ground truth of this class: all FP
            cm.fp = sum(len(v) for v in pr_c.frames.values())
            cm.idfp = cm.fp
            agg.fp += cm.fp
            agg.idfp += cm.idfp
            hota_fp += cm.fp
            per_class[c] = cm
            continue
        clear = clear_mot(gt_c, pr_c, iou_threshold)
        ident = idf1(gt_c, pr_c, iou_threshold)
        h = hota(gt_c, pr_c)
        cm.mota, cm.motp = clear.mota, clear.motp
        cm.fp, cm.fn, cm.idsw = clear.fp, clear.fn, clear.idsw
        cm.mt, cm.ml = clear.mt, clear.ml
        cm.idf1, cm.idtp, cm.idfp, cm.idfn = ident.idf1, ident.idtp, ident.idfp, ident.idfn
        cm.hota, cm.deta, cm.assa = h.hota, h.deta, h.assa
        cm.detre, cm.detpr, cm.assre, cm.asspr = h.detre, h.detpr, h.assre, h.asspr
        per_class[c] = cm
        motas.append(clear.mota)
        idf1s.append(ident.idf1)

        agg.num_gt += n_gt
        agg.fp += clear.fp
        agg.fn += clear.fn
        agg.idsw += clear.idsw
        agg.mt += clear.mt
        agg.ml += clear.ml
        agg.idtp += ident.idtp
        agg.idfp += ident.idfp
        agg.idfn += ident.idfn
        hota_tp += np.array(h.tp)
        hota_fn += np.array(h.fn)
        hota_fp += np.array(h.fp)
        hota_ass += np.array(h.ass_sum)
        hota_assre += np.array(h.assre_sum)
        hota_asspr += np.array(h.asspr_sum)
        sum_iou_weighted += clear.motp * clear.num_matches
        total_matches += clear.num_matches

    if agg.num_gt > 0:
        agg.mota = 1.0 - (agg.fn + agg.fp + agg.idsw) / agg.num_gt
        agg.motp = sum_iou_weighted / total_matches if total_matches else 0.0
        denom = agg.idtp + 0.5 * agg.idfn + 0.5 * agg.idfp
        agg.idf1 = agg.idtp / denom if denom else 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            det_denom = hota_tp + hota_fn + hota_fp
            deta = np.where(det_denom > 0, hota_tp / np.maximum(det_denom, 1), 0.0)
            assa = np.where(hota_tp > 0, hota_ass / np.maximum(hota_tp, 1), 0.0)
            assre = np.where(hota_tp > 0, hota_assre / np.maximum(hota_tp, 1), 0.0)
            asspr = np.where(hota_tp > 0, hota_asspr / np.maximum(hota_tp, 1), 0.0)
            detre_den = hota_tp + hota_fn
            detpr_den = hota_tp + hota_fp
            detre = np.where(detre_den > 0, hota_tp / np.maximum(detre_den, 1), 0.0)
            detpr = np.where(detpr_den > 0, hota_tp / np.maximum(detpr_den, 1), 0.0)
        agg.hota = float(np.mean(np.sqrt(deta * assa)))
        agg.deta = float(np.mean(deta))
        agg.assa = float(np.mean(assa))
        agg.detre = float(np.mean(detre))
        agg.detpr = float(np.mean(detpr))
        agg.assre = float(np.mean(assre))
        agg.asspr = float(np.mean(asspr))

    mmota = float(np.mean(motas)) if motas else None
    midf1 = float(np.mean(idf1s)) if idf1s else None
    return EvalReport(per_class, agg, mmota, midf1)
