"""Tracking evaluation: CLEAR MOT, IDF1, MT/ML, and the HOTA decomposition.

Sequences are lists (one entry per frame) of (id, BoundingBox) pairs. Frame
matching is optimal one-to-one assignment: maximum cardinality first, then
maximum total IoU, restricted to pairs with IoU >= alpha; exact ties are
canonicalized toward ascending (gt id, pred id). HOTA uses this per-frame
matching at every localization threshold alpha and reports the detection /
association split, with HOTA_alpha = sqrt(DetA_alpha * AssA_alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BoundingBox, iou

FramePairs = Sequence[tuple[int, BoundingBox]]
TrackFrames = Sequence[FramePairs]

# 19 thresholds 0.05 .. 0.95.
DEFAULT_ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))

_CARDINALITY_BONUS = 1e6


@dataclass
class FrameMatching:
    """One-to-one matches at a threshold, with the unmatched counts."""

    matches: list[tuple[int, int]]  # (gt id, pred id), ascending gt id
    ious: dict[tuple[int, int], float]
    tp: int
    fp: int
    fn: int


def match_frame(gt: FramePairs, pred: FramePairs, alpha: float) -> FrameMatching:
    """Optimal IoU matching among pairs with IoU >= alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly in (0, 1)")
    gt = sorted(gt, key=lambda p: p[0])
    pred = sorted(pred, key=lambda p: p[0])
    gt_ids = [g for g, _ in gt]
    pred_ids = [p for p, _ in pred]
    if len(set(gt_ids)) != len(gt_ids) or len(set(pred_ids)) != len(pred_ids):
        raise ValueError("duplicate ids within one frame")

    if not gt or not pred:
        return FrameMatching([], {}, 0, len(pred), len(gt))

    overlap = np.zeros((len(gt), len(pred)))
    for a, (_, gbox) in enumerate(gt):
        for b, (_, pbox) in enumerate(pred):
            overlap[a, b] = iou(gbox, pbox)
    eligible = overlap >= alpha
    score = np.where(eligible, _CARDINALITY_BONUS + overlap, 0.0)
    rows, cols = linear_sum_assignment(score, maximize=True)
    chosen = [(a, b) for a, b in zip(rows, cols) if eligible[a, b]]
    chosen = _canonicalize(chosen, overlap, eligible)

    matches = sorted((gt_ids[a], pred_ids[b]) for a, b in chosen)
    ious = {(gt_ids[a], pred_ids[b]): float(overlap[a, b]) for a, b in chosen}
    tp = len(matches)
    return FrameMatching(matches, ious, tp, len(pred) - tp, len(gt) - tp)


def _canonicalize(
    chosen: list[tuple[int, int]], overlap: np.ndarray, eligible: np.ndarray
) -> list[tuple[int, int]]:
    # Pairwise swaps that keep the total IoU exactly equal but order the
    # partners ascending; resolves symmetric ties deterministically.
    chosen = sorted(chosen)
    changed = True
    while changed:
        changed = False
        for x in range(len(chosen)):
            for y in range(x + 1, len(chosen)):
                (a1, b1), (a2, b2) = chosen[x], chosen[y]
                if b2 < b1 and eligible[a1, b2] and eligible[a2, b1]:
                    if overlap[a1, b1] + overlap[a2, b2] == overlap[a1, b2] + overlap[a2, b1]:
                        chosen[x], chosen[y] = (a1, b2), (a2, b1)
                        changed = True
        chosen.sort()
    return chosen


@dataclass
class ClearMotResult:
    mota: float
    motp: float | None  # mean IoU over matches; absent without matches
    id_switches: int
    tp: int
    fp: int
    fn: int


def _check_sequences(gt_seq: TrackFrames, pred_seq: TrackFrames) -> int:
    if len(gt_seq) != len(pred_seq):
        raise ValueError(f"sequences differ in length: {len(gt_seq)} vs {len(pred_seq)}")
    total_gt = sum(len(f) for f in gt_seq)
    if total_gt == 0:
        raise ValueError("no ground-truth boxes; metrics undefined")
    return total_gt


def clear_mot(gt_seq: TrackFrames, pred_seq: TrackFrames, alpha: float = 0.5) -> ClearMotResult:
    """CLEAR MOT: MOTA from error counts, MOTP as mean matched IoU."""
    total_gt = _check_sequences(gt_seq, pred_seq)
    tp = fp = fn = idsw = 0
    matched_ious: list[float] = []
    last_pred: dict[int, int] = {}
    for gt_frame, pred_frame in zip(gt_seq, pred_seq):
        matching = match_frame(gt_frame, pred_frame, alpha)
        tp += matching.tp
        fp += matching.fp
        fn += matching.fn
        for g, p in matching.matches:
            if g in last_pred and last_pred[g] != p:
                idsw += 1
            last_pred[g] = p
            matched_ious.append(matching.ious[(g, p)])
    mota = 1.0 - (fn + fp + idsw) / total_gt
    motp = math.fsum(matched_ious) / len(matched_ious) if matched_ious else None
    return ClearMotResult(mota, motp, idsw, tp, fp, fn)


def idf1(gt_seq: TrackFrames, pred_seq: TrackFrames, alpha: float = 0.5) -> float:
    """F1 of identity-consistent matches under the best global id mapping."""
    total_gt = _check_sequences(gt_seq, pred_seq)
    total_pred = sum(len(f) for f in pred_seq)
    gt_ids = sorted({g for frame in gt_seq for g, _ in frame})
    pred_ids = sorted({p for frame in pred_seq for p, _ in frame})
    if not pred_ids:
        return 0.0
    gt_index = {g: k for k, g in enumerate(gt_ids)}
    pred_index = {p: k for k, p in enumerate(pred_ids)}
    overlap_frames = np.zeros((len(gt_ids), len(pred_ids)))
    for gt_frame, pred_frame in zip(gt_seq, pred_seq):
        for g, gbox in gt_frame:
            for p, pbox in pred_frame:
                if iou(gbox, pbox) >= alpha:
                    overlap_frames[gt_index[g], pred_index[p]] += 1
    rows, cols = linear_sum_assignment(overlap_frames, maximize=True)
    idtp = int(overlap_frames[rows, cols].sum())
    idfn = total_gt - idtp
    idfp = total_pred - idtp
    return 2.0 * idtp / (2.0 * idtp + idfp + idfn)


@dataclass
class HotaResult:
    alphas: tuple[float, ...]
    deta: list[float]
    assa: list[float]
    hota: list[float]
    final: float


def hota(
    gt_seq: TrackFrames, pred_seq: TrackFrames, alphas: Sequence[float] = DEFAULT_ALPHAS
) -> HotaResult:
    """Detection/association accuracies and HOTA per localization threshold."""
    total_gt = _check_sequences(gt_seq, pred_seq)
    total_pred = sum(len(f) for f in pred_seq)
    gt_count: dict[int, int] = {}
    pred_count: dict[int, int] = {}
    for frame in gt_seq:
        for g, _ in frame:
            gt_count[g] = gt_count.get(g, 0) + 1
    for frame in pred_seq:
        for p, _ in frame:
            pred_count[p] = pred_count.get(p, 0) + 1

    deta_list: list[float] = []
    assa_list: list[float] = []
    hota_list: list[float] = []
    for alpha in alphas:
        pair_matches: dict[tuple[int, int], int] = {}
        tp = 0
        for gt_frame, pred_frame in zip(gt_seq, pred_seq):
            matching = match_frame(gt_frame, pred_frame, alpha)
            tp += matching.tp
            for pair in matching.matches:
                pair_matches[pair] = pair_matches.get(pair, 0) + 1
        if tp == 0:
            deta_list.append(0.0)
            assa_list.append(0.0)
            hota_list.append(0.0)
            continue
        deta = tp / (total_gt + total_pred - tp)
        ass_terms: list[float] = []
        for (g, p), tpa in sorted(pair_matches.items()):
            fna = gt_count[g] - tpa
            fpa = pred_count[p] - tpa
            ass_terms.extend([tpa / (tpa + fna + fpa)] * tpa)
        assa = math.fsum(ass_terms) / tp
        deta_list.append(deta)
        assa_list.append(assa)
        hota_list.append(math.sqrt(deta * assa))
    return HotaResult(tuple(alphas), deta_list, assa_list, hota_list, math.fsum(hota_list) / len(hota_list))


def mt_ml(
    gt_seq: TrackFrames, pred_seq: TrackFrames, alpha: float = 0.5
) -> tuple[float, float]:
    """Fractions of gt identities tracked >= 80% (MT) and <= 20% (ML)."""
    present: dict[int, int] = {}
    covered: dict[int, int] = {}
    for gt_frame, pred_frame in zip(gt_seq, pred_seq):
        for g, _ in gt_frame:
            present[g] = present.get(g, 0) + 1
        matching = match_frame(gt_frame, pred_frame, alpha)
        for g, _ in matching.matches:
            covered[g] = covered.get(g, 0) + 1
    if not present:
        return 0.0, 0.0
    mt = ml = 0
    for g, n in present.items():
        coverage = covered.get(g, 0) / n
        if coverage >= 0.8:
            mt += 1
        if coverage <= 0.2:
            ml += 1
    return mt / len(present), ml / len(present)


@dataclass
class MetricsReport:
    """Full evaluation bundle for one (gt, prediction) pair."""

    mota: float
    motp: float | None
    idf1: float
    mt: float
    ml: float
    id_switches: int
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    deta: list[float] = field(default_factory=list)
    assa: list[float] = field(default_factory=list)
    hota: list[float] = field(default_factory=list)
    hota_final: float = 0.0


def evaluate(
    gt_seq: TrackFrames,
    pred_seq: TrackFrames,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
) -> MetricsReport:
    cm = clear_mot(gt_seq, pred_seq)
    h = hota(gt_seq, pred_seq, alphas)
    mt, ml = mt_ml(gt_seq, pred_seq)
    return MetricsReport(
        mota=cm.mota,
        motp=cm.motp,
        idf1=idf1(gt_seq, pred_seq),
        mt=mt,
        ml=ml,
        id_switches=cm.id_switches,
        alphas=h.alphas,
        deta=h.deta,
        assa=h.assa,
        hota=h.hota,
        hota_final=h.final,
    )
