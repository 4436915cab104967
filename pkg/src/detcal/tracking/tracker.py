"""Tracking-by-detection with optional confidence and regression calibration."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..calibration.distributions import NonParametricDistribution, moment_match
from ..core import BoundingBox, Detection, extract_features
from .association import associate, gate_threshold
from .existence import ExistenceConfig, existence_predict, existence_update
from .kalman import N_OBS, KalmanConfig, kalman_predict, kalman_update, nis


@dataclass(frozen=True)
class TrackerConfig:
    """Kinematic and existence settings plus the fallback observation noise.

    ``default_obs_std`` is used for detections without variances.
    ``feature_set`` and ``image_size`` describe the confidence calibrator's input.
    """

    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    existence: ExistenceConfig = field(default_factory=ExistenceConfig)
    default_obs_std: tuple[float, float, float, float] = (0.01, 0.01, 0.01, 0.01)
    feature_set: tuple[str, ...] = ("confidence",)
    image_size: tuple[float, float] = (1.0, 1.0)

    def to_dict(self) -> dict:
        return {"kalman": vars(self.kalman).copy(), "existence": vars(self.existence).copy(),
                "default_obs_std": list(self.default_obs_std), "feature_set": list(self.feature_set),
                "image_size": list(self.image_size)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrackerConfig":
        known = {"kalman", "existence", "default_obs_std", "feature_set", "image_size"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown tracker config keys: {sorted(unknown)}")
        kw = {}
        if "kalman" in d:
            kw["kalman"] = KalmanConfig(**d["kalman"])
        if "existence" in d:
            kw["existence"] = ExistenceConfig(**d["existence"])
        for key in ("default_obs_std", "feature_set", "image_size"):
            if key in d:
                kw[key] = tuple(d[key])
        return cls(**kw)


@dataclass
class Track:
    track_id: int
    label: int
    x: np.ndarray
    P: np.ndarray
    existence: float
    age: int = 0
    misses: int = 0
    last_nis: float = float("nan")

    @property
    def box(self) -> BoundingBox:
        return BoundingBox(*np.maximum(self.x[:N_OBS], [-np.inf, -np.inf, 1e-9, 1e-9]))


@dataclass(frozen=True)
class TrackRecord:
    """One reported track in one frame."""

    frame_id: int
    track_id: int
    label: int
    box: BoundingBox
    existence: float
    box_variance: tuple[float, float, float, float]

    def to_dict(self) -> dict:
        return {"frame_id": self.frame_id, "track_id": self.track_id, "label": self.label,
                "box": self.box.to_dict(), "existence": self.existence,
                "var": dict(zip(("cx", "cy", "w", "h"), self.box_variance))}


@dataclass
class CalibratedObservation:
    detection: Detection
    confidence: float
    box: np.ndarray
    cov: np.ndarray


class Tracker:
    """Kalman tracks with existence filtering, associated by gated Hungarian matching.

    Parameters
    ----------
    config : TrackerConfig
    confidence_calibrator : fitted confidence calibrator, optional
        Maps raw confidences to match probabilities before the existence update.
    regression_calibrator : fitted regression calibrator, optional
        Recalibrates box variances before they enter the Kalman filter.
        Non-parametric outputs are moment-matched to Gaussians.
    """

    def __init__(self, config: TrackerConfig = TrackerConfig(), confidence_calibrator=None,
                 regression_calibrator=None):
        self.config = config
        self.confidence_calibrator = confidence_calibrator
        self.regression_calibrator = regression_calibrator
        self.F = config.kalman.transition()
        self.H = config.kalman.observation()
        self.Q = config.kalman.process_covariance()
        self.gate = gate_threshold(config.existence.gate_quantile, N_OBS)
        self.tracks: list[Track] = []
        self.next_id = 1
        self.frame_count = 0
        self.nis_history: list[float] = []

    def calibrate(self, detections) -> list[CalibratedObservation]:
        if not detections:
            return []
        conf = np.array([d.confidence for d in detections], dtype=float)
        boxes = np.array([d.box.as_array() for d in detections], dtype=float)
        default_var = np.asarray(self.config.default_obs_std, dtype=float) ** 2
        var = np.array([d.box_variances if d.box_variances is not None else default_var
                        for d in detections], dtype=float)
        if self.confidence_calibrator is not None:
            X = extract_features(conf, boxes, self.config.feature_set, self.config.image_size)
            conf = np.asarray(self.confidence_calibrator.transform(X), dtype=float)
        if self.regression_calibrator is not None:
            dist = self.regression_calibrator.transform(np.hstack([boxes, var]))
            if isinstance(dist, NonParametricDistribution):
                dist = moment_match(dist)
            if not hasattr(dist, "covariance"):
                raise TypeError("regression calibrator must produce Gaussian or non-parametric output")
            boxes = np.asarray(dist.mean, dtype=float)
            covs = dist.covariance()
        else:
            covs = np.zeros((len(detections), N_OBS, N_OBS))
            covs[:, np.arange(N_OBS), np.arange(N_OBS)] = var
        return [CalibratedObservation(d, float(np.clip(c, 0.0, 1.0)), b, R)
                for d, c, b, R in zip(detections, conf, boxes, covs)]

    def _spawn(self, obs: CalibratedObservation):
        x = np.zeros(self.F.shape[0])
        x[:N_OBS] = obs.box
        track = Track(self.next_id, obs.detection.label, x, self.config.kalman.initial_covariance(obs.cov),
                      obs.confidence)
        self.next_id += 1
        self.tracks.append(track)

    def step(self, detections, frame_id=None) -> list[TrackRecord]:
        """Process one frame of detections; returns the reported tracks."""
        cfg = self.config.existence
        frame_id = self.frame_count if frame_id is None else frame_id
        self.frame_count += 1
        observations = self.calibrate(list(detections))
        for t in self.tracks:
            t.x, t.P = kalman_predict(t.x, t.P, self.F, self.Q)
            t.existence = existence_predict(t.existence, cfg)
            t.age += 1
        matched_obs = set()
        for label in sorted({t.label for t in self.tracks} | {o.detection.label for o in observations}):
            t_idx = [i for i, t in enumerate(self.tracks) if t.label == label]
            o_idx = [j for j, o in enumerate(observations) if o.detection.label == label]
            if not t_idx or not o_idx:
                continue
            cost = np.array([[nis(self.tracks[i].x, self.tracks[i].P, observations[j].box,
                                  observations[j].cov, self.H) for j in o_idx] for i in t_idx])
            pairs, unmatched_t, _ = associate(cost, self.gate)
            for r, c in pairs:
                track, obs = self.tracks[t_idx[r]], observations[o_idx[c]]
                track.x, track.P, track.last_nis = kalman_update(track.x, track.P, obs.box, obs.cov, self.H)
                self.nis_history.append(track.last_nis)
                track.existence = existence_update(track.existence, obs.confidence, cfg)
                track.misses = 0
                matched_obs.add(o_idx[c])
            for r in unmatched_t:
                self.tracks[t_idx[r]].misses += 1
        # tracks with no same-label detection this frame also count as missed
        labels_seen = {o.detection.label for o in observations}
        for t in self.tracks:
            if t.label not in labels_seen:
                t.misses += 1
        for j, obs in enumerate(observations):
            if j not in matched_obs:
                self._spawn(obs)
        self.tracks = [t for t in self.tracks if t.existence >= cfg.drop_threshold]
        return [self._record(t, frame_id) for t in self.tracks if t.existence >= cfg.report_threshold]

    def _record(self, t: Track, frame_id) -> TrackRecord:
        var = np.diagonal(self.H @ t.P @ self.H.T)
        return TrackRecord(int(frame_id), t.track_id, t.label, t.box, float(t.existence),
                           tuple(float(v) for v in var))

    def run(self, frames, frame_ids=None) -> list[TrackRecord]:
        """Track a sequence of per-frame detection lists (frame ids default to 0, 1, ...)."""
        frames = list(frames)
        frame_ids = range(len(frames)) if frame_ids is None else frame_ids
        out = []
        for fid, detections in zip(frame_ids, frames):
            out.extend(self.step(detections, fid))
        return out

    def snapshot(self) -> list[Track]:
        return [replace(t, x=t.x.copy(), P=t.P.copy()) for t in self.tracks]
