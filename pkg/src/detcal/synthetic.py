"""Seeded generators of miscalibrated detections and tracking scenarios.

Every generator draws from ``numpy.random.Generator(numpy.random.Philox(seed))``,
a counter-based bit generator, so a seed fully determines the output.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .core import BoundingBox, CalibrationSample, Detection, GroundTruthObject, MatchedDataset

VARIANCE_PROFILES = ("constant", "mu_sine")
NOISE_FAMILIES = ("gaussian", "cauchy")


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class DetectorDistortion:
    """Ground-truth miscalibration of a simulated detector.

    The true match probability of a detection with confidence ``p`` and
    normalized box ``s`` is
    ``sigmoid(link_weight * logit(p) + link_bias + position_weights @ (s - 0.5))``.

    Box residuals ``target - mean`` are drawn with a true per-dimension scale;
    the detector reports ``variance_scale * true_std`` (``"constant"``) or a
    std that grows with the predicted position while the true std is off by
    ``(1 + 0.5 sin(2 pi mean)) / variance_scale`` (``"mu_sine"``).
    """

    link_weight: float = 1.0
    link_bias: float = 0.0
    position_weights: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    variance_scale: float = 1.0
    variance_profile: str = "constant"
    noise: str = "gaussian"
    base_std: float = 0.01
    residual_correlation: float = 0.0

    def __post_init__(self):
        if self.variance_scale <= 0:
            raise ValueError("variance_scale must be positive")
        if self.variance_profile not in VARIANCE_PROFILES:
            raise ValueError(f"variance_profile must be one of {VARIANCE_PROFILES}")
        if self.noise not in NOISE_FAMILIES:
            raise ValueError(f"noise must be one of {NOISE_FAMILIES}")
        if not -1.0 < self.residual_correlation < 1.0:
            raise ValueError("residual_correlation must lie in (-1, 1)")

    def true_precision(self, confidence, boxes=None) -> np.ndarray:
        p = np.clip(np.asarray(confidence, dtype=float), 1e-6, 1 - 1e-6)
        z = self.link_weight * logit(p) + self.link_bias
        if boxes is not None and any(self.position_weights):
            z = z + (np.asarray(boxes) - 0.5) @ np.asarray(self.position_weights)
        return expit(z)

    def scale_profile(self, mean) -> np.ndarray:
        """Ratio of true to reported std as a function of the predicted mean."""
        return 1.0 + 0.5 * np.sin(2 * np.pi * np.asarray(mean))


def sample_confidences(rng, n) -> np.ndarray:
    """Mixture of a low- and a high-confidence beta component."""
    low = rng.beta(2.0, 5.0, size=n)
    high = rng.beta(5.0, 2.0, size=n)
    return np.where(rng.uniform(size=n) < 0.5, low, high)


def sample_boxes(rng, n) -> np.ndarray:
    centers = rng.uniform(0.15, 0.85, size=(n, 2))
    sizes = rng.uniform(0.1, 0.3, size=(n, 2))
    return np.hstack([centers, sizes])


def _residuals(rng, distortion, true_std):
    n, dims = true_std.shape
    corr = np.eye(dims)
    if dims == 4 and distortion.residual_correlation:
        corr[2, 3] = corr[3, 2] = distortion.residual_correlation
    if distortion.noise == "gaussian":
        unit = rng.standard_normal((n, dims)) @ np.linalg.cholesky(corr).T
    else:
        unit = rng.standard_cauchy((n, dims))
    return unit * true_std


def generate_regression_arrays(distortion: DetectorDistortion, n: int, seed, boxes=None):
    """Predicted means, reported variances and targets for ``n`` matched boxes.

    Returns
    -------
    mean, variance, target : ndarray of shape (n, 4)
    """
    rng = make_rng(seed)
    mean = sample_boxes(rng, n) if boxes is None else np.asarray(boxes, dtype=float)
    jitter = rng.uniform(0.5, 1.5, size=mean.shape)
    if distortion.variance_profile == "constant":
        true_std = distortion.base_std * jitter
        reported_std = distortion.variance_scale * true_std
    else:
        reported_std = distortion.base_std * (0.5 + mean) * jitter
        true_std = distortion.scale_profile(mean) * reported_std / distortion.variance_scale
    target = mean + _residuals(rng, distortion, true_std)
    target[:, 2:] = np.maximum(target[:, 2:], 1e-3)
    return mean, reported_std ** 2, target


def generate_detection_dataset(distortion: DetectorDistortion, n: int, seed,
                               iou_threshold: float = 0.5) -> MatchedDataset:
    """Detections with known calibration map, already joined with ground truth."""
    rng = make_rng(seed)
    confidence = sample_confidences(rng, n)
    boxes = sample_boxes(rng, n)
    matched = (rng.uniform(size=n) < distortion.true_precision(confidence, boxes)).astype(int)
    sub_seed = int(rng.integers(0, 2 ** 63 - 1))
    _, variance, target = generate_regression_arrays(distortion, n, sub_seed, boxes=boxes)
    samples = []
    for i in range(n):
        box = BoundingBox(*boxes[i])
        gt = BoundingBox(*target[i]) if matched[i] else None
        samples.append(CalibrationSample(float(confidence[i]), 0, box, int(matched[i]),
                                         tuple(variance[i]), gt))
    return MatchedDataset(samples, iou_threshold)


def generate_gaussian_class_features(n, seed, mean_pos, cov_pos, mean_neg, cov_neg, prior=0.5):
    """Features whose logit-confidence and box columns are class-conditionally Gaussian.

    Column 0 of the Gaussian draw is the logit of the confidence; it is mapped
    through the sigmoid so the result is a valid feature matrix.
    """
    rng = make_rng(seed)
    y = (rng.uniform(size=n) < prior).astype(int)
    pos = rng.multivariate_normal(mean_pos, cov_pos, size=n)
    neg = rng.multivariate_normal(mean_neg, cov_neg, size=n)
    Z = np.where(y[:, None] == 1, pos, neg)
    X = Z.copy()
    X[:, 0] = expit(Z[:, 0])
    return X, y


def sample_multivariate_beta(rng, n, alpha, lam) -> np.ndarray:
    """Draws from the Libby-Novick multivariate beta with shapes ``alpha`` (K+1), ``lam`` (K)."""
    alpha = np.asarray(alpha, dtype=float)
    lam = np.asarray(lam, dtype=float)
    gam = rng.gamma(alpha, size=(n, len(alpha)))
    odds = gam[:, 1:] / (lam * gam[:, :1])
    return odds / (1.0 + odds)


def generate_beta_class_features(n, seed, alpha_pos, lam_pos, alpha_neg, lam_neg, prior=0.5):
    rng = make_rng(seed)
    y = (rng.uniform(size=n) < prior).astype(int)
    pos = sample_multivariate_beta(rng, n, alpha_pos, lam_pos)
    neg = sample_multivariate_beta(rng, n, alpha_neg, lam_neg)
    X = np.where(y[:, None] == 1, pos, neg)
    return np.clip(X, 1e-6, 1 - 1e-6), y


@dataclass(frozen=True)
class ScenarioConfig:
    """Multi-frame scene with moving boxes in relative image coordinates.

    Objects move at constant velocity jittered by white-noise acceleration
    of variance ``process_noise`` per frame (position gets half of each
    kick, velocity all of it); true positives get confidences from
    ``Beta(*tp_confidence)``, clutter from ``Beta(*fp_confidence)``.
    """

    n_objects: int = 8
    n_frames: int = 60
    detection_prob: float = 0.9
    fp_rate: float = 2.0
    obs_std: tuple[float, float, float, float] = (0.004, 0.004, 0.003, 0.003)
    process_noise: float = 1e-7
    tp_confidence: tuple[float, float] = (8.0, 2.0)
    fp_confidence: tuple[float, float] = (3.0, 3.0)
    fp_region: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    image_size: tuple[float, float] = (1.0, 1.0)
    n_labels: int = 1
    persistent: bool = False

    def __post_init__(self):
        if not 0.0 <= self.detection_prob <= 1.0:
            raise ValueError("detection_prob must lie in [0, 1]")
        if self.fp_rate < 0:
            raise ValueError("fp_rate must be non-negative")


@dataclass
class TrackingSequence:
    frames: list[tuple[list[Detection], list[GroundTruthObject]]] = field(default_factory=list)
    image_size: tuple[float, float] = (1.0, 1.0)


def generate_tracking_sequence(config: ScenarioConfig, distortion: DetectorDistortion = DetectorDistortion(),
                               seed=0) -> TrackingSequence:
    """Ground-truth trajectories plus noisy, miss-prone, cluttered detections."""
    rng = make_rng(seed)
    T = config.n_frames
    if config.persistent:
        starts = np.zeros(config.n_objects, dtype=int)
        ends = np.full(config.n_objects, T)
    else:
        starts = rng.integers(0, max(1, T // 3), size=config.n_objects)
        ends = rng.integers(max(starts.max() + 1, 2 * T // 3), T + 1, size=config.n_objects)
    position = np.zeros((config.n_objects, 4))
    velocity = np.zeros((config.n_objects, 4))
    position[:, 0:2] = rng.uniform(0.25, 0.75, size=(config.n_objects, 2))
    position[:, 2:4] = rng.uniform(0.06, 0.14, size=(config.n_objects, 2))
    velocity[:, 0:2] = rng.normal(0.0, 0.003, size=(config.n_objects, 2))
    labels = rng.integers(0, config.n_labels, size=config.n_objects)
    obs_std = np.asarray(config.obs_std, dtype=float)
    sequence = TrackingSequence(image_size=config.image_size)
    scale = np.array(config.image_size * 2, dtype=float)
    det_id = 0
    for t in range(T):
        detections, truths = [], []
        for k in range(config.n_objects):
            if not starts[k] <= t < ends[k]:
                continue
            box = position[k].copy()
            box[2:] = np.maximum(box[2:], 0.02)
            truths.append(GroundTruthObject(int(labels[k]), BoundingBox(*(box * scale)), t, k))
            if rng.uniform() < config.detection_prob:
                true_std = obs_std * rng.uniform(0.5, 1.5, size=4)
                noisy = box + rng.standard_normal(4) * true_std
                noisy[2:] = np.maximum(noisy[2:], 0.01)
                reported = (distortion.variance_scale * true_std * scale) ** 2
                conf = float(rng.beta(*config.tp_confidence))
                detections.append(Detection(int(labels[k]), conf, BoundingBox(*(noisy * scale)),
                                            tuple(reported), t, det_id))
                det_id += 1
        for _ in range(rng.poisson(config.fp_rate)):
            x0, y0, x1, y1 = config.fp_region
            box = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1),
                            rng.uniform(0.04, 0.12), rng.uniform(0.04, 0.12)])
            std = obs_std * rng.uniform(0.5, 1.5, size=4)
            reported = (distortion.variance_scale * std * scale) ** 2
            conf = float(rng.beta(*config.fp_confidence))
            detections.append(Detection(int(rng.integers(0, config.n_labels)), conf,
                                        BoundingBox(*(box * scale)), tuple(reported), t, det_id))
            det_id += 1
        sequence.frames.append((detections, truths))
        kick = rng.standard_normal((config.n_objects, 4)) * np.sqrt(config.process_noise)
        position = position + velocity + 0.5 * kick
        velocity = velocity + kick
    return sequence
