"""Tracking-by-detection: Kalman filtering, existence filtering and gated association."""
from .association import associate, gate_threshold, hungarian
from .existence import ExistenceConfig, existence_predict, existence_update
from .kalman import KalmanConfig, kalman_predict, kalman_update, nis
from .tracker import Track, Tracker, TrackerConfig, TrackRecord

__all__ = ["associate", "gate_threshold", "hungarian", "ExistenceConfig", "existence_predict",
           "existence_update", "KalmanConfig", "kalman_predict", "kalman_update", "nis", "Track",
           "Tracker", "TrackerConfig", "TrackRecord"]
