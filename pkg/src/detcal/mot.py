"""CLEAR-MOT and identity metrics for tracker output against ground truth."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from .core import iou_matrix
from .tracking.association import hungarian

MT_COVERAGE = 0.8
ML_COVERAGE = 0.2


@dataclass(frozen=True)
class MotReport:
    """Tracking metrics.

    ``motp_distance`` is the mean center distance over true positives in the
    box units; ``motp_iou`` is the mean IoU over the same pairs.
    """

    mota: float
    motp_distance: float
    motp_iou: float
    idf1: float
    fp_per_frame: float
    fn_per_frame: float
    idsw_per_object: float
    mt: float
    pt: float
    ml: float
    tp: int
    fp: int
    fn: int
    idsw: int
    frames: int
    objects: int
    idtp: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        rows = [(k, f"{v:.6f}" if isinstance(v, float) else str(v)) for k, v in self.to_dict().items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>14}" for k, v in rows)


def _by_frame(items, id_attr):
    frames = defaultdict(list)
    for it in items:
        frames[int(it.frame_id)].append((int(getattr(it, id_attr)), int(it.label), it.box.as_array()))
    return frames


def _pair_iou(gts, tracks):
    if not gts or not tracks:
        return np.zeros((len(gts), len(tracks)))
    M = iou_matrix(np.array([g[2] for g in gts]), np.array([t[2] for t in tracks]))
    same = np.array([[g[1] == t[1] for t in tracks] for g in gts])
    return np.where(same, M, 0.0)


def identity_true_positives(gt_frames, track_frames, iou_threshold):
    """Per (gt id, track id) count of co-occurring frames with IoU above threshold."""
    counts = defaultdict(int)
    for f, gts in gt_frames.items():
        tracks = track_frames.get(f, [])
        M = _pair_iou(gts, tracks)
        for i, j in zip(*np.nonzero(M >= iou_threshold)):
            counts[gts[i][0], tracks[j][0]] += 1
    return counts


def idf1_matching(gt_ids, track_ids, counts):
    """Maximum total identity true positives over one-to-one trajectory matchings."""
    if not gt_ids or not track_ids:
        return 0, []
    W = np.array([[counts.get((g, t), 0) for t in track_ids] for g in gt_ids], dtype=float)
    rows, cols = hungarian(-W)
    pairs = [(gt_ids[r], track_ids[c]) for r, c in zip(rows, cols) if W[r, c] > 0]
    return int(sum(W[r, c] for r, c in zip(rows, cols))), pairs


def evaluate(ground_truth, tracks, iou_threshold: float = 0.5) -> MotReport:
    """CLEAR-MOT matching with persistence, plus IDF1 and coverage classes.

    Parameters
    ----------
    ground_truth : iterable of GroundTruthObject
    tracks : iterable of objects with ``frame_id``, ``track_id``, ``label`` and ``box``
    """
    gt_frames = _by_frame(ground_truth, "object_id")
    if not gt_frames:
        raise ValueError("empty ground truth")
    track_frames = _by_frame(tracks, "track_id")
    frames = sorted(set(gt_frames) | set(track_frames))
    previous = {}   # gt id -> track id matched in the preceding frame
    last_match = {}  # gt id -> most recent track id ever matched
    tp = fp = fn = idsw = 0
    dist_sum = iou_sum = 0.0
    present = defaultdict(int)
    tracked = defaultdict(int)
    for f in frames:
        gts, trs = gt_frames.get(f, []), track_frames.get(f, [])
        M = _pair_iou(gts, trs)
        g_pos = {g[0]: i for i, g in enumerate(gts)}
        t_pos = {t[0]: j for j, t in enumerate(trs)}
        matches = {}
        for gid, tid in previous.items():
            if gid in g_pos and tid in t_pos and M[g_pos[gid], t_pos[tid]] >= iou_threshold:
                matches[gid] = tid
        free_g = [i for i, g in enumerate(gts) if g[0] not in matches]
        used_t = set(matches.values())
        free_t = [j for j, t in enumerate(trs) if t[0] not in used_t]
        if free_g and free_t:
            sub = M[np.ix_(free_g, free_t)]
            cost = np.where(sub >= iou_threshold, 1.0 - sub, 1e6)
            for r, c in zip(*hungarian(cost)):
                if sub[r, c] >= iou_threshold:
                    matches[gts[free_g[r]][0]] = trs[free_t[c]][0]
        for gid, tid in matches.items():
            if gid in last_match and last_match[gid] != tid:
                idsw += 1
            last_match[gid] = tid
            i, j = g_pos[gid], t_pos[tid]
            dist_sum += float(np.hypot(*(gts[i][2][:2] - trs[j][2][:2])))
            iou_sum += float(M[i, j])
            tracked[gid] += 1
        for g in gts:
            present[g[0]] += 1
        tp += len(matches)
        fp += len(trs) - len(matches)
        fn += len(gts) - len(matches)
        previous = matches
    n_gt = sum(present.values())
    n_track = sum(len(v) for v in track_frames.values())
    counts = identity_true_positives(gt_frames, track_frames, iou_threshold)
    gt_ids = sorted(present)
    track_ids = sorted({t[0] for v in track_frames.values() for t in v})
    idtp, _ = idf1_matching(gt_ids, track_ids, counts)
    coverage = np.array([tracked[g] / present[g] for g in gt_ids])
    n_obj = len(gt_ids)
    mt = float(np.mean(coverage >= MT_COVERAGE))
    ml = float(np.mean(coverage <= ML_COVERAGE))
    return MotReport(
        mota=1.0 - (fp + fn + idsw) / n_gt,
        motp_distance=dist_sum / tp if tp else float("nan"),
        motp_iou=iou_sum / tp if tp else float("nan"),
        idf1=2.0 * idtp / (n_gt + n_track),
        fp_per_frame=fp / len(frames), fn_per_frame=fn / len(frames),
        idsw_per_object=idsw / n_obj,
        mt=mt, pt=1.0 - mt - ml, ml=ml,
        tp=tp, fp=fp, fn=fn, idsw=idsw, frames=len(frames), objects=n_obj, idtp=idtp)
