"""Command-line interface: synthesize data, fit calibrators, evaluate, track."""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import sys

import numpy as np

from . import io
from .calibration import (BayesianCalibration, BetaCalibration, CovarianceEstimation, GPBeta, GPCauchy,
                          GPNormal, HistogramBinning, IsotonicRecalibration, LogisticCalibration,
                          VarianceScaling)
from .calibration.base import ConfidenceCalibrator
from .calibration.distributions import GaussianDistribution, NonParametricDistribution, moment_match
from .core import FEATURES, GroundTruthObject, Detection, build_dataset, extract_features
from .metrics import confidence as cm
from .metrics import regression as rm
from .mot import evaluate
from .synthetic import (DetectorDistortion, ScenarioConfig, generate_detection_dataset,
                        generate_tracking_sequence)
from .tracking import Tracker, TrackerConfig

FEATURE_SETS = {"conf": ("confidence",), "conf+box": FEATURES}
REGRESSION_METHODS = {
    "isotonic": lambda a: IsotonicRecalibration(),
    "var-scaling": lambda a: VarianceScaling(),
    "gp-normal": lambda a: GPNormal(max_points=a.max_points, seed=a.seed),
    "gp-normal-mv": lambda a: GPNormal(max_points=a.max_points, seed=a.seed, multivariate=True),
    "gp-cauchy": lambda a: GPCauchy(max_points=a.max_points, seed=a.seed),
    "gp-beta": lambda a: GPBeta(max_points=a.max_points, seed=a.seed),
    "covariance": lambda a: CovarianceEstimation(max_points=a.max_points, seed=a.seed),
}
CONFIDENCE_METRICS = ("ece", "dece", "mce", "brier", "nll", "auprc")
REGRESSION_METRICS = ("picp", "mpiw", "pinball", "nll_gauss", "uce", "ence", "mqce", "cqce")


class CliError(Exception):
    pass


def _bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _read_json(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_pair(det_path, gt_path, strict=True):
    h_det, dets = io.read_jsonl(det_path, strict, "detections")
    h_gt, gts = io.read_jsonl(gt_path, strict, "ground_truth")
    if tuple(h_det.image_size) != tuple(h_gt.image_size):
        raise CliError("detection and ground-truth files declare different image sizes")
    return h_det, io.paired_frames(dets, gts)


def _dataset(args):
    header, frames = _load_pair(args.train if hasattr(args, "train") else args.data, args.gt)
    return header, build_dataset(frames, args.iou, args.min_confidence, header.image_size)


# ---------------------------------------------------------------- synth
def cmd_synth(args):
    cfg = _read_json(args.config)
    distortion = DetectorDistortion(**cfg.get("distortion", {}))
    gt_out = args.gt_out or args.out.replace(".jsonl", "") + ".gt.jsonl"
    if args.mode == "dataset":
        ds = generate_detection_dataset(distortion, int(cfg.get("n", 10000)), args.seed)
        dets, gts = [], []
        for i, s in enumerate(ds.samples):
            dets.append(Detection(s.label, s.confidence, s.box, s.box_variances, i, i))
            if s.matched:
                gts.append(GroundTruthObject(s.label, s.gt_box, i, i))
        image_size = (1.0, 1.0)
    else:
        scenario = ScenarioConfig(**{k: tuple(v) if isinstance(v, list) else v
                                     for k, v in cfg.get("scenario", {}).items()})
        seq = generate_tracking_sequence(scenario, distortion, args.seed)
        dets = [d for frame, _ in seq.frames for d in frame]
        gts = [g for _, frame in seq.frames for g in frame]
        image_size = seq.image_size
    io.write_jsonl(args.out, "detections", dets, image_size)
    io.write_jsonl(gt_out, "ground_truth", gts, image_size)
    print(f"wrote {len(dets)} detections to {args.out} and {len(gts)} ground truths to {gt_out}")


# ---------------------------------------------------------------- calibrate
def cmd_calibrate_confidence(args):
    header, ds = _dataset(args)
    features = FEATURE_SETS[args.features]
    X, y = ds.features(features), ds.matched
    if args.bayesian:
        if args.method == "hist":
            raise CliError("histogram binning has no Bayesian variant")
        base = args.method
        if len(features) > 1:
            base += "_mv_dep" if args.dependent else "_mv_indep"
        model = BayesianCalibration(base_method=base, seed=args.seed)
    elif args.method == "hist":
        model = HistogramBinning(bins=args.bins)
    elif args.method == "logistic":
        model = LogisticCalibration(dependent=args.dependent)
    else:
        model = BetaCalibration(dependent=args.dependent)
    model.fit(X, y)
    io.save_model(args.model_out, model, kind="confidence", features=list(features),
                  image_size=list(header.image_size), precision=float(np.mean(y)))
    print(f"fitted {model.method} on {len(y)} samples; wrote {args.model_out}")


def cmd_calibrate_regression(args):
    header, ds = _dataset(args)
    mean, var, target = ds.regression_arrays()
    if len(mean) == 0:
        raise CliError("no matched detections with variances in the training data")
    model = REGRESSION_METHODS[args.method](args).fit(np.hstack([mean, var]), target)
    io.save_model(args.model_out, model, kind="regression", image_size=list(header.image_size))
    print(f"fitted {model.method} on {len(mean)} boxes; wrote {args.model_out}")


# ---------------------------------------------------------------- evaluate
def _regression_report(model, mean, var, target, metrics, taus):
    X = np.hstack([mean, var])
    if model is None:
        dist = GaussianDistribution(mean, var)
    else:
        dist = model.transform(X)
        if isinstance(dist, NonParametricDistribution):
            dist = moment_match(dist)
        if not isinstance(dist, GaussianDistribution):
            raise CliError("regression metrics need Gaussian or non-parametric calibrated output")
    std, cov = dist.std, dist.covariance()
    out = {}
    for m in metrics:
        if m == "picp":
            out[m] = {str(t): rm.interval_picp(dist.mean, std, target, t).tolist() for t in taus}
        elif m == "mpiw":
            out[m] = {str(t): rm.interval_mpiw(std, t).tolist() for t in taus}
        elif m == "pinball":
            out[m] = rm.mean_pinball(dist.mean, std, target, taus).tolist()
        elif m == "nll_gauss":
            out[m] = rm.nll_gaussian(dist.mean, cov, target)
        elif m == "uce":
            out[m] = rm.uce(dist.mean, dist.var, target).tolist()
        elif m == "ence":
            out[m] = rm.ence(dist.mean, dist.var, target).tolist()
        elif m == "mqce":
            out[m] = rm.mean_m_qce(dist.mean, cov, target, taus)
        elif m == "cqce":
            out[m] = rm.mean_c_qce(dist.mean, cov, target, taus)
    return out


def cmd_eval_calibration(args):
    header, ds = _dataset(args)
    model, meta = (None, {}) if args.model is None else io.load_model(args.model)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - set(CONFIDENCE_METRICS) - set(REGRESSION_METRICS)
    if unknown:
        raise CliError(f"unknown metrics {sorted(unknown)}")
    taus = [float(t) for t in args.tau_grid.split(",")] if args.tau_grid else list(rm.TAU_GRID)
    report = {"n_samples": len(ds)}
    conf_metrics = [m for m in metrics if m in CONFIDENCE_METRICS]
    reg_metrics = [m for m in metrics if m in REGRESSION_METRICS]
    if conf_metrics:
        if model is not None and not isinstance(model, ConfidenceCalibrator):
            raise CliError("confidence metrics need a confidence model")
        features = tuple(meta.get("features", FEATURE_SETS[args.features]))
        X, y = ds.features(features), ds.matched
        conf = X[:, 0] if model is None else model.transform(X)
        Xc = X.copy()
        Xc[:, 0] = conf
        scheme = cm.BinningScheme.for_features(X.shape[1], args.bins)
        for m in conf_metrics:
            if m == "ece":
                report[m] = cm.ece(conf, y, args.bins or 20)
            elif m == "dece":
                report[m] = cm.dece(Xc, y, scheme)
            elif m == "mce":
                report[m] = cm.mce(conf, y, args.bins or 20)
            elif m == "brier":
                report[m] = cm.brier(conf, y)
            elif m == "nll":
                report[m] = cm.nll_bernoulli(conf, y)
            elif m == "auprc":
                report[m] = cm.auprc(conf, y)
        if args.reliability_csv:
            buf = _io.StringIO()
            records = cm.reliability(Xc, y, scheme)
            _write_reliability(buf, records, features)
            io.atomic_write_text(args.reliability_csv, buf.getvalue())
    if reg_metrics:
        if model is not None and isinstance(model, ConfidenceCalibrator):
            raise CliError("regression metrics need a regression model")
        mean, var, target = ds.regression_arrays()
        report.update(_regression_report(model, mean, var, target, reg_metrics, taus))
    text = json.dumps(report, indent=2)
    if args.out:
        io.atomic_write_text(args.out, text + "\n")
    else:
        print(text)


def _write_reliability(handle, records, feature_set):
    writer = csv.writer(handle)
    writer.writerow(cm.RELIABILITY_HEADER)
    for r in records:
        means = dict(zip(feature_set, r.feature_means))
        writer.writerow([":".join(map(str, r.index)), r.count, repr(r.mean_confidence), repr(r.precision)]
                        + [repr(means[k]) if k in means else "" for k in ("cx", "cy", "w", "h")])


# ---------------------------------------------------------------- tracking
def cmd_track(args):
    header, dets = io.read_jsonl(args.detections, True, "detections")
    cfg_dict = _read_json(args.tracker_config)
    conf_model = reg_model = None
    if args.conf_model:
        conf_model, meta = io.load_model(args.conf_model)
        cfg_dict.setdefault("feature_set", meta.get("features", ["confidence"]))
        if "precision" in meta:
            cfg_dict.setdefault("existence", {}).setdefault("precision_prior", meta["precision"])
    if args.reg_model:
        reg_model, _ = io.load_model(args.reg_model)
    cfg_dict.setdefault("image_size", list(header.image_size))
    config = TrackerConfig.from_dict(cfg_dict)
    frames = io.group_by_frame(dets)
    ids = sorted(frames)
    if ids:
        ids = list(range(min(ids), max(ids) + 1))
    records = Tracker(config, conf_model, reg_model).run([frames.get(f, []) for f in ids], ids)
    io.write_jsonl(args.out, "tracks", records, header.image_size, header.coordinates)
    print(f"tracked {len(ids)} frames; wrote {len(records)} track records to {args.out}")


def cmd_eval_mot(args):
    _, tracks = io.read_jsonl(args.tracks, True, "tracks")
    _, gts = io.read_jsonl(args.gt, True, "ground_truth")
    report = evaluate(gts, tracks, args.iou)
    text = report.to_json() if args.format == "json" else report.to_text()
    if args.out:
        io.atomic_write_text(args.out, text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="detcal", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic detections and ground truth")
    s.add_argument("--mode", choices=("dataset", "sequence"), default="dataset")
    s.add_argument("--config", help="JSON with 'distortion', 'n' and/or 'scenario' sections")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="detections JSONL")
    s.add_argument("--gt-out", help="ground-truth JSONL (default: <out>.gt.jsonl)")
    s.set_defaults(func=cmd_synth)

    def data_args(q, train=True):
        q.add_argument("--train" if train else "--data", required=True, help="detections JSONL")
        q.add_argument("--gt", required=True, help="ground-truth JSONL")
        q.add_argument("--iou", type=float, default=0.5)
        q.add_argument("--min-confidence", type=float, default=0.3)

    c = sub.add_parser("calibrate-confidence", help="fit a confidence calibrator")
    data_args(c)
    c.add_argument("--method", choices=("hist", "logistic", "beta"), default="logistic")
    c.add_argument("--features", choices=tuple(FEATURE_SETS), default="conf")
    c.add_argument("--dependent", type=_bool, default=False)
    c.add_argument("--bayesian", type=_bool, default=False)
    c.add_argument("--bins", type=int)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--model-out", required=True)
    c.set_defaults(func=cmd_calibrate_confidence)

    r = sub.add_parser("calibrate-regression", help="fit a box-uncertainty calibrator")
    data_args(r)
    r.add_argument("--method", choices=tuple(REGRESSION_METHODS), default="var-scaling")
    r.add_argument("--max-points", type=int, default=1024)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--model-out", required=True)
    r.set_defaults(func=cmd_calibrate_regression)

    e = sub.add_parser("eval-calibration", help="calibration metrics with an optional model")
    data_args(e, train=False)
    e.add_argument("--model")
    e.add_argument("--metrics", default="ece,brier,nll")
    e.add_argument("--features", choices=tuple(FEATURE_SETS), default="conf")
    e.add_argument("--bins", type=int)
    e.add_argument("--tau-grid", help="comma-separated quantile levels")
    e.add_argument("--reliability-csv")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_calibration)

    t = sub.add_parser("track", help="run the tracker on a detection stream")
    t.add_argument("--detections", required=True)
    t.add_argument("--conf-model")
    t.add_argument("--reg-model")
    t.add_argument("--tracker-config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_track)

    m = sub.add_parser("eval-mot", help="CLEAR-MOT and IDF1 metrics")
    m.add_argument("--tracks", required=True)
    m.add_argument("--gt", required=True)
    m.add_argument("--iou", type=float, default=0.5)
    m.add_argument("--format", choices=("json", "text"), default="json")
    m.add_argument("--out")
    m.set_defaults(func=cmd_eval_mot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CliError, io.RecordError, ValueError, TypeError, KeyError, OSError,
            np.linalg.LinAlgError) as exc:
        print(f"detcal {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
