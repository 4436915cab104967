import itertools

import numpy as np
import pytest

from detcal.core import BoundingBox, GroundTruthObject
from detcal.mot import evaluate, identity_true_positives
from detcal.tracking import TrackRecord


def gt(frame, oid, cx, cy=0.5):
    return GroundTruthObject(0, BoundingBox(cx, cy, 0.1, 0.1), frame, oid)


def tr(frame, tid, cx, cy=0.5):
    return TrackRecord(frame, tid, 0, BoundingBox(cx, cy, 0.1, 0.1), 1.0, (0.0,) * 4)


def test_hand_traced_three_frames():
    # one object; track 1 follows it for two frames, then track 2 takes over
    gts = [gt(0, 0, 0.5), gt(1, 0, 0.51), gt(2, 0, 0.52)]
    tracks = [tr(0, 1, 0.5), tr(1, 1, 0.51), tr(2, 2, 0.52)]
    rep = evaluate(gts, tracks)
    assert (rep.tp, rep.fp, rep.fn, rep.idsw) == (3, 0, 0, 1)
    assert rep.mota == pytest.approx(2 / 3)
    assert round(rep.mota, 3) == 0.667
    # best identity assignment keeps track 1: IDTP 2 of 3 + 3 detections
    assert rep.idf1 == pytest.approx(2 * 2 / 6)


def test_persistence_keeps_previous_match():
    gts = [gt(0, 0, 0.5), gt(1, 0, 0.5)]
    # in frame 1, track 2 overlaps better but track 1 still clears the threshold
    tracks = [tr(0, 1, 0.5), tr(1, 1, 0.52), tr(1, 2, 0.5)]
    rep = evaluate(gts, tracks)
    assert rep.idsw == 0 and rep.fp == 1 and rep.tp == 2


def test_counts_misses_and_false_positives():
    gts = [gt(0, 0, 0.2), gt(0, 1, 0.8), gt(1, 0, 0.2), gt(1, 1, 0.8)]
    tracks = [tr(0, 1, 0.2), tr(1, 1, 0.2), tr(1, 5, 0.5)]
    rep = evaluate(gts, tracks)
    assert (rep.tp, rep.fp, rep.fn) == (2, 1, 2)
    assert rep.mota == pytest.approx(1 - 3 / 4)
    assert (rep.mt, rep.pt, rep.ml) == (0.5, 0.0, 0.5)
    assert rep.fp_per_frame == 0.5 and rep.fn_per_frame == 1.0


def test_label_mismatch_is_not_a_match():
    rep = evaluate([gt(0, 0, 0.5)], [TrackRecord(0, 1, 3, BoundingBox(0.5, 0.5, 0.1, 0.1), 1.0, (0,) * 4)])
    assert rep.tp == 0 and rep.fp == 1 and rep.fn == 1


def random_scene(rng, n_obj=4, n_frames=12):
    gts, tracks = [], []
    for f in range(n_frames):
        for o in range(n_obj):
            if rng.uniform() < 0.9:
                gts.append(gt(f, o, 0.1 + 0.2 * o + 0.001 * f))
            if rng.uniform() < 0.85:
                # identities get shuffled now and then
                tid = o if rng.uniform() < 0.8 else int(rng.integers(10, 13))
                tracks.append(tr(f, tid, 0.1 + 0.2 * o + 0.001 * f + rng.normal(0, 0.01)))
    return gts, tracks


def test_perfect_tracker():
    gts, _ = random_scene(np.random.default_rng(0))
    rep = evaluate(gts, [tr(g.frame_id, g.object_id + 100, g.box.cx) for g in gts])
    assert rep.mota == 1.0 and rep.idf1 == 1.0 and rep.idsw == 0 and rep.motp_iou == 1.0
    assert rep.motp_distance == 0.0 and rep.mt == 1.0


def test_invariant_to_track_id_permutation():
    rng = np.random.default_rng(1)
    gts, tracks = random_scene(rng)
    ids = sorted({t.track_id for t in tracks})
    perm = dict(zip(ids, rng.permutation(ids) + 1000))
    renamed = [TrackRecord(t.frame_id, int(perm[t.track_id]), t.label, t.box, t.existence, t.box_variance)
               for t in tracks]
    assert evaluate(gts, tracks).to_dict() == evaluate(gts, renamed).to_dict()


def test_idf1_matches_permutation_brute_force():
    from collections import defaultdict

    for seed in range(20):
        rng = np.random.default_rng(seed)
        gts, tracks = random_scene(rng, n_obj=int(rng.integers(2, 5)))
        gt_frames, tr_frames = defaultdict(list), defaultdict(list)
        for g in gts:
            gt_frames[g.frame_id].append((g.object_id, g.label, g.box.as_array()))
        for t in tracks:
            tr_frames[t.frame_id].append((t.track_id, t.label, t.box.as_array()))
        counts = identity_true_positives(gt_frames, tr_frames, 0.5)
        g_ids = sorted({g.object_id for g in gts})
        t_ids = sorted({t.track_id for t in tracks}) + [None] * len(g_ids)
        best = max(sum(counts.get((g, t), 0) for g, t in zip(g_ids, p) if t is not None)
                   for p in itertools.permutations(t_ids, len(g_ids)))
        rep = evaluate(gts, tracks)
        assert rep.idtp == best
        assert rep.idf1 == pytest.approx(2 * best / (len(gts) + len(tracks)))


def test_report_formats_and_empty_ground_truth():
    rep = evaluate([gt(0, 0, 0.5)], [tr(0, 1, 0.5)])
    assert '"mota": 1.0' in rep.to_json()
    assert rep.to_text().splitlines()[0].startswith("mota")
    with pytest.raises(ValueError, match="empty ground truth"):
        evaluate([], [tr(0, 1, 0.5)])
