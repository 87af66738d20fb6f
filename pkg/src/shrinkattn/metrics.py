"""AP50 and a count-based error breakdown for box detections.

Every detection receives one label:

* ``TP``: its best unmatched same-class GT has IoU >= fg_iou (that GT is consumed)
* ``cls_error``: otherwise, its best unmatched GT of another class has IoU >= fg_iou
* ``loc_error``: otherwise, its best unmatched same-class GT has bg_iou <= IoU < fg_iou
* ``FP``: anything else

A GT is ``matched`` when consumed by a TP, ``covered`` when some detection
of any class reaches IoU >= bg_iou with it, and ``missed`` otherwise.
Errors are reported per 100 GT boxes.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .errors import DomainError, ParseError, PreconditionError, UndefinedAPError

FG_IOU = 0.5
BG_IOU = 0.1
RECALL_POINTS = 101

TP, CLS_ERROR, LOC_ERROR, FP = "TP", "cls_error", "loc_error", "FP"
MATCHED, COVERED, MISSED = "matched", "covered", "missed"


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise DomainError(f"box extents must be nonnegative, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: BBox
    score: float
    cls: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise DomainError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    box: BBox
    cls: int

    def __post_init__(self):
        if self.box.w <= 0 or self.box.h <= 0:
            raise DomainError(f"ground-truth boxes need positive extents, got {self.box}")


@dataclass
class MatchResult:
    labels: list[str]  # per detection
    assigned: list[int | None]  # GT index a detection was attributed to
    gt_status: list[str]  # per GT


@dataclass
class EvalReport:
    ap50: float
    e_cls: float
    e_loc: float
    e_miss: float
    num_gt: int
    num_det: int
    per_image: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ap50": self.ap50,
            "e_cls": self.e_cls,
            "e_loc": self.e_loc,
            "e_miss": self.e_miss,
            "num_gt": self.num_gt,
            "num_det": self.num_det,
            "per_image": self.per_image,
        }


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def sort_detections(dets: Sequence[Detection]) -> list[Detection]:
    """Descending score; equal scores keep input order."""
    return sorted(dets, key=lambda d: -d.score)


def _check_sorted(dets: Sequence[Detection]) -> None:
    for i in range(1, len(dets)):
        if dets[i].score > dets[i - 1].score:
            raise PreconditionError(f"detections must be sorted by descending score (index {i})")


def _best(det: Detection, gts: Sequence[GroundTruthBox], candidates, same_class: bool):
    best_j, best_iou = None, -1.0
    for j in candidates:
        if (gts[j].cls == det.cls) != same_class:
            continue
        v = iou(det.box, gts[j].box)
        if v > best_iou:
            best_j, best_iou = j, v
    return best_j, best_iou


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    fg_iou: float = FG_IOU,
    bg_iou: float = BG_IOU,
) -> MatchResult:
    """Greedy score-ordered labelling; ties in IoU go to the lowest GT index."""
    _check_sorted(dets)
    by_image: dict[str, list[int]] = defaultdict(list)
    for j, g in enumerate(gts):
        by_image[g.image_id].append(j)

    consumed = [False] * len(gts)
    touched = [False] * len(gts)
    labels: list[str] = []
    assigned: list[int | None] = []
    for det in dets:
        pool = by_image.get(det.image_id, [])
        for j in pool:
            if iou(det.box, gts[j].box) >= bg_iou:
                touched[j] = True
        free = [j for j in pool if not consumed[j]]
        same_j, same_iou = _best(det, gts, free, same_class=True)
        if same_j is not None and same_iou >= fg_iou:
            consumed[same_j] = True
            labels.append(TP)
            assigned.append(same_j)
            continue
        other_j, other_iou = _best(det, gts, free, same_class=False)
        if other_j is not None and other_iou >= fg_iou:
            labels.append(CLS_ERROR)
            assigned.append(other_j)
        elif same_j is not None and same_iou >= bg_iou:
            labels.append(LOC_ERROR)
            assigned.append(same_j)
        else:
            labels.append(FP)
            assigned.append(None)

    status = [MATCHED if c else COVERED if t else MISSED for c, t in zip(consumed, touched)]
    return MatchResult(labels, assigned, status)


def interpolated_ap(tp_flags: Sequence[bool], npos: int) -> Fraction:
    """101-point interpolated AP for one class, exact.

    ``tp_flags`` follow descending score order. Recall thresholds r/100 are
    compared in integers, so no grid point is lost to rounding.
    """
    if npos <= 0:
        raise UndefinedAPError("undefined AP: class has no ground truth")
    precisions, recall_tp = [], []
    tp = 0
    for i, flag in enumerate(tp_flags):
        tp += bool(flag)
        precisions.append(Fraction(tp, i + 1))
        recall_tp.append(tp)
    suffix = precisions[:]
    for i in range(len(suffix) - 2, -1, -1):
        suffix[i] = max(suffix[i], suffix[i + 1])
    total = Fraction(0)
    k = 0
    for r in range(RECALL_POINTS):
        while k < len(recall_tp) and recall_tp[k] * 100 < r * npos:
            k += 1
        if k == len(recall_tp):
            break
        total += suffix[k]
    return total / RECALL_POINTS


def ap50(
    dets: Sequence[Detection], gts: Sequence[GroundTruthBox], match: MatchResult | None = None
) -> float:
    """Mean over GT classes of the 101-point AP at IoU 0.5."""
    if not gts:
        raise UndefinedAPError("undefined AP: no ground truth")
    match = match or match_detections(dets, gts)
    npos: dict[int, int] = defaultdict(int)
    for g in gts:
        npos[g.cls] += 1
    total = Fraction(0)
    for c in sorted(npos):
        flags = [lab == TP for d, lab in zip(dets, match.labels) if d.cls == c]
        total += interpolated_ap(flags, npos[c])
    return float(total / len(npos))


def error_decomposition(dets: Sequence[Detection], gts: Sequence[GroundTruthBox]) -> EvalReport:
    if not gts:
        raise UndefinedAPError("undefined AP: no ground truth")
    match = match_detections(dets, gts)
    n = len(gts)

    def per100(count: int) -> float:
        return float(Fraction(100 * count, n))

    images: dict[str, dict] = {}
    for j, (g, st) in enumerate(zip(gts, match.gt_status)):
        entry = images.setdefault(g.image_id, {"image_id": g.image_id, "detections": [], "ground_truth": []})
        entry["ground_truth"].append({"index": j, "cls": g.cls, "status": st})
    for i, (d, lab, gt) in enumerate(zip(dets, match.labels, match.assigned)):
        entry = images.setdefault(d.image_id, {"image_id": d.image_id, "detections": [], "ground_truth": []})
        entry["detections"].append({"index": i, "cls": d.cls, "score": d.score, "label": lab, "gt": gt})

    return EvalReport(
        ap50=ap50(dets, gts, match),
        e_cls=per100(match.labels.count(CLS_ERROR)),
        e_loc=per100(match.labels.count(LOC_ERROR)),
        e_miss=per100(match.gt_status.count(MISSED)),
        num_gt=n,
        num_det=len(dets),
        per_image=[images[k] for k in sorted(images)],
    )


# --------------------------------------------------------------------------
# file formats


def _load_json(path) -> list:
    try:
        with open(path) as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(obj, list):
        raise ParseError(f"{path}: top level must be an array")
    return obj


def _number(entry: dict, key: str, where: str) -> float:
    v = entry.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


def _common(entry, where: str) -> tuple[str, BBox, int]:
    if not isinstance(entry, dict):
        raise ParseError(f"{where}: expected an object")
    image_id = entry.get("image_id")
    if isinstance(image_id, bool) or not isinstance(image_id, (str, int)):
        raise ParseError(f"{where}.image_id: expected a string, got {image_id!r}")
    bbox = entry.get("bbox")
    if (
        not isinstance(bbox, list)
        or len(bbox) != 4
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in bbox)
    ):
        raise ParseError(f"{where}.bbox: expected [x, y, w, h], got {bbox!r}")
    cls = entry.get("cls")
    if isinstance(cls, bool) or not isinstance(cls, int):
        raise ParseError(f"{where}.cls: expected an integer, got {cls!r}")
    try:
        box = BBox(*(float(v) for v in bbox))
    except DomainError as e:
        raise ParseError(f"{where}.bbox: {e}") from e
    return str(image_id), box, cls


def parse_detections(records: list, source: str = "detections") -> list[Detection]:
    out = []
    for i, entry in enumerate(records):
        where = f"{source}[{i}]"
        image_id, box, cls = _common(entry, where)
        score = _number(entry, "score", where)
        try:
            out.append(Detection(image_id, box, score, cls))
        except DomainError as e:
            raise ParseError(f"{where}.score: {e}") from e
    return out


def parse_ground_truth(records: list, source: str = "ground_truth") -> list[GroundTruthBox]:
    out = []
    for i, entry in enumerate(records):
        where = f"{source}[{i}]"
        image_id, box, cls = _common(entry, where)
        try:
            out.append(GroundTruthBox(image_id, box, cls))
        except DomainError as e:
            raise ParseError(f"{where}.bbox: {e}") from e
    return out


def load_detections(path) -> list[Detection]:
    return parse_detections(_load_json(path), str(path))


def load_ground_truth(path) -> list[GroundTruthBox]:
    return parse_ground_truth(_load_json(path), str(path))


def detection_to_json(d: Detection) -> dict:
    return {"image_id": d.image_id, "bbox": [d.box.x, d.box.y, d.box.w, d.box.h], "score": d.score, "cls": d.cls}


def gt_to_json(g: GroundTruthBox) -> dict:
    return {"image_id": g.image_id, "bbox": [g.box.x, g.box.y, g.box.w, g.box.h], "cls": g.cls}
