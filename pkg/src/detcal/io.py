"""JSONL record formats, model files and atomic writes.

Every JSONL file starts with a header line::

    {"type": "header", "kind": "detections", "image_size": [1.0, 1.0],
     "coordinates": "relative", "version": 1}

followed by one record per line. ``kind`` is ``detections``,
``ground_truth`` or ``tracks``.
"""
from __future__ import annotations

import json
import os
import tempfile
import warnings
from dataclasses import dataclass

from .core import BOX_FIELDS, BoundingBox, Detection, GroundTruthObject
from .tracking.tracker import TrackRecord

FORMAT_VERSION = 1
KINDS = ("detections", "ground_truth", "tracks")
COORDINATES = ("relative", "pixel")

_FIELDS = {
    "detections": ({"frame_id", "detection_id", "label", "confidence", "box"}, {"var"}),
    "ground_truth": ({"frame_id", "object_id", "label", "box"}, set()),
    "tracks": ({"frame_id", "track_id", "label", "box", "existence"}, {"var"}),
}


class RecordError(ValueError):
    """A malformed line in a record file."""


@dataclass(frozen=True)
class Header:
    kind: str
    image_size: tuple[float, float] = (1.0, 1.0)
    coordinates: str = "relative"
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RecordError(f"unknown record kind {self.kind!r}")
        if self.coordinates not in COORDINATES:
            raise RecordError(f"unknown coordinate convention {self.coordinates!r}")

    def to_dict(self) -> dict:
        return {"type": "header", "kind": self.kind, "image_size": list(self.image_size),
                "coordinates": self.coordinates, "version": self.version}


def _check_fields(rec: dict, kind: str, strict: bool, where: str):
    required, optional = _FIELDS[kind]
    missing = required - set(rec)
    if missing:
        raise RecordError(f"{where}: missing fields {sorted(missing)}")
    unknown = set(rec) - required - optional
    if unknown:
        msg = f"{where}: unknown fields {sorted(unknown)}"
        if strict:
            raise RecordError(msg)
        warnings.warn(msg, stacklevel=3)


def _box(d, where) -> BoundingBox:
    if not isinstance(d, dict) or set(d) != set(BOX_FIELDS):
        raise RecordError(f"{where}: box must have exactly the fields {BOX_FIELDS}")
    return BoundingBox(*(float(d[k]) for k in BOX_FIELDS))


def _var(d, where):
    if d is None:
        return None
    if not isinstance(d, dict) or set(d) != set(BOX_FIELDS):
        raise RecordError(f"{where}: var must have exactly the fields {BOX_FIELDS}")
    return tuple(float(d[k]) for k in BOX_FIELDS)


def detection_to_record(det: Detection) -> dict:
    rec = {"frame_id": det.frame_id, "detection_id": det.detection_id, "label": det.label,
           "confidence": det.confidence, "box": det.box.to_dict()}
    if det.box_variances is not None:
        rec["var"] = dict(zip(BOX_FIELDS, det.box_variances))
    return rec


def ground_truth_to_record(gt: GroundTruthObject) -> dict:
    return {"frame_id": gt.frame_id, "object_id": gt.object_id, "label": gt.label, "box": gt.box.to_dict()}


def track_to_record(tr: TrackRecord) -> dict:
    return tr.to_dict()


def record_to_object(rec: dict, kind: str, strict: bool = True, where: str = "record"):
    _check_fields(rec, kind, strict, where)
    try:
        if kind == "detections":
            return Detection(int(rec["label"]), float(rec["confidence"]), _box(rec["box"], where),
                             _var(rec.get("var"), where), int(rec["frame_id"]), int(rec["detection_id"]))
        if kind == "ground_truth":
            return GroundTruthObject(int(rec["label"]), _box(rec["box"], where), int(rec["frame_id"]),
                                     int(rec["object_id"]))
        var = _var(rec.get("var"), where)
        return TrackRecord(int(rec["frame_id"]), int(rec["track_id"]), int(rec["label"]),
                           _box(rec["box"], where), float(rec["existence"]),
                           var if var is not None else (float("nan"),) * 4)
    except RecordError:
        raise
    except (TypeError, ValueError) as exc:
        raise RecordError(f"{where}: {exc}") from None


_TO_RECORD = {"detections": detection_to_record, "ground_truth": ground_truth_to_record,
              "tracks": track_to_record}


def atomic_write_text(path, text: str):
    """Write to a temporary file next to ``path`` and rename it into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(header: Header, items) -> str:
    to_record = _TO_RECORD[header.kind]
    lines = [json.dumps(header.to_dict())]
    lines.extend(json.dumps(to_record(it)) for it in items)
    return "\n".join(lines) + "\n"


def write_jsonl(path, kind: str, items, image_size=(1.0, 1.0), coordinates=None):
    if coordinates is None:
        coordinates = "relative" if tuple(image_size) == (1.0, 1.0) else "pixel"
    atomic_write_text(path, dumps_jsonl(Header(kind, tuple(float(v) for v in image_size), coordinates), items))


def loads_jsonl(text: str, strict: bool = True, expected_kind=None, source="<string>"):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise RecordError(f"{source}: empty file")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise RecordError(f"{source}:1: invalid JSON ({exc.msg})") from None
    if not isinstance(head, dict) or head.get("type") != "header":
        raise RecordError(f"{source}:1: first line must be a header record")
    extra = set(head) - {"type", "kind", "image_size", "coordinates", "version"}
    if extra and strict:
        raise RecordError(f"{source}:1: unknown header fields {sorted(extra)}")
    if head.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise RecordError(f"{source}:1: unsupported format version {head.get('version')}")
    header = Header(head.get("kind"), tuple(float(v) for v in head.get("image_size", (1.0, 1.0))),
                    head.get("coordinates", "relative"))
    if expected_kind is not None and header.kind != expected_kind:
        raise RecordError(f"{source}: expected {expected_kind} records, found {header.kind}")
    items = []
    for n, line in enumerate(lines[1:], start=2):
        where = f"{source}:{n}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordError(f"{where}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise RecordError(f"{where}: record must be a JSON object")
        items.append(record_to_object(rec, header.kind, strict, where))
    return header, items


def read_jsonl(path, strict: bool = True, expected_kind=None):
    with open(path, encoding="utf-8") as fh:
        return loads_jsonl(fh.read(), strict, expected_kind, os.fspath(path))


def group_by_frame(items) -> dict:
    frames = {}
    for it in items:
        frames.setdefault(it.frame_id, []).append(it)
    return frames


def paired_frames(detections, ground_truth):
    """(detections, ground truths) per frame id, in frame order."""
    det, gt = group_by_frame(detections), group_by_frame(ground_truth)
    return [(det.get(f, []), gt.get(f, [])) for f in sorted(set(det) | set(gt))]


def save_model(path, model, **meta):
    """Write a fitted calibrator with optional metadata (feature set, image size)."""
    payload = {"model": model.to_dict(), "meta": meta}
    atomic_write_text(path, json.dumps(payload, indent=1))


def load_model(path):
    """Returns ``(model, meta)``."""
    from .calibration.base import model_from_dict

    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RecordError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(payload, dict) or "model" not in payload:
        raise RecordError(f"{path}: not a model file")
    return model_from_dict(payload["model"]), payload.get("meta", {})
