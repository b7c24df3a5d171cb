"""Annotation files, DPR/OSR metrics, and the results table.

File format: CSV lines ``frame,id,x,y,w,h,status`` — 1-based frame numbers,
ASCII, LF line endings, no header.  The status column is one of ``tracked``,
``coasted``, ``lost`` or ``gt`` and may be omitted on input (defaults to
``gt``).  One file per sequence; ground truth and predictions share the
format.

Metrics follow the usual single-object-tracking definitions: DPR is the
percentage of frames whose center location error is strictly smaller than a
pixel threshold, OSR the percentage of frames whose IoU is strictly larger
than a ratio threshold.  Both comparisons are strict by default; pass
``strict=False`` for toolkits that score boundary cases as hits.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import AnnotationError, EvalRangeError
from .pipeline import Tracklet
from .raster import center_distance, iou
from .types import BoundingBox

STATUSES = ("tracked", "coasted", "lost", "gt")

DEFAULT_DPR_THRESHOLD = 5.0
DEFAULT_OSR_THRESHOLD = 0.5


@dataclass(frozen=True)
class AnnotationRecord:
    """One line of an annotation file: a box for one object in one frame."""

    frame: int  # 1-based
    object_id: int
    box: BoundingBox
    status: str = "gt"


def _parse_line(line: str, line_no: int) -> AnnotationRecord:
    fields = line.split(",")
    if len(fields) not in (6, 7):
        raise AnnotationError(
            f"line {line_no}: expected 'frame,id,x,y,w,h[,status]', "
            f"got {len(fields)} fields")
    try:
        frame = int(fields[0])
        object_id = int(fields[1])
        x, y, w, h = (float(v) for v in fields[2:6])
    except ValueError as exc:
        raise AnnotationError(f"line {line_no}: {exc}") from None
    if frame < 1:
        raise AnnotationError(f"line {line_no}: frame numbers are 1-based, got {frame}")
    if w <= 0 or h <= 0:
        raise AnnotationError(f"line {line_no}: box {w:g}x{h:g} is not positive")
    status = fields[6].strip() if len(fields) == 7 else "gt"
    if status not in STATUSES:
        raise AnnotationError(
            f"line {line_no}: unknown status {status!r} "
            f"(expected one of {', '.join(STATUSES)})")
    return AnnotationRecord(frame, object_id, BoundingBox(x, y, w, h), status)


def load_annotations(path: Path | str) -> dict[int, list[AnnotationRecord]]:
    """Read one sequence's annotation file, grouped by object id.

    Each object's records come back sorted by frame and are required to be
    contiguous; duplicates and malformed lines are rejected with their line
    numbers.  An empty file is an empty result.
    """
    text = Path(path).read_text(encoding="ascii")
    seen: dict[tuple[int, int], int] = {}
    grouped: dict[int, list[AnnotationRecord]] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            raise AnnotationError(f"line {line_no}: empty line")
        record = _parse_line(line, line_no)
        key = (record.frame, record.object_id)
        if key in seen:
            raise AnnotationError(
                f"line {line_no}: duplicate record for frame {record.frame}, "
                f"object {record.object_id} (first seen on line {seen[key]})")
        seen[key] = line_no
        grouped.setdefault(record.object_id, []).append(record)
    for object_id, records in grouped.items():
        records.sort(key=lambda r: r.frame)
        for prev, cur in zip(records, records[1:]):
            if cur.frame != prev.frame + 1:
                raise AnnotationError(
                    f"object {object_id}: frame {cur.frame} follows frame "
                    f"{prev.frame} (frames must be contiguous)")
    return grouped


def save_tracklet(tracklet: Tracklet, path: Path | str, object_id: int = 1,
                  start_frame: int = 1) -> None:
    """Write a tracklet in the annotation format, one line per frame.

    Coordinates are written with full float precision so that loading the
    file reproduces the boxes exactly.
    """
    lines = []
    for offset, (box, status) in enumerate(zip(tracklet.boxes, tracklet.statuses)):
        lines.append(f"{start_frame + offset},{object_id},"
                     f"{box.x!r},{box.y!r},{box.w!r},{box.h!r},{status}")
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="ascii")


def _frame_boxes(obj: Tracklet | list[AnnotationRecord],
                 label: str) -> tuple[list[BoundingBox], int | None, list[str]]:
    """Boxes in frame order plus the first frame number (None for tracklets,
    whose frame range is implicit)."""
    if isinstance(obj, Tracklet):
        return list(obj.boxes), None, list(obj.statuses)
    records = sorted(obj, key=lambda r: r.frame)
    if not records:
        return [], None, []
    for prev, cur in zip(records, records[1:]):
        if cur.frame != prev.frame + 1:
            raise EvalRangeError(
                f"{label}: frame {cur.frame} follows frame {prev.frame} "
                f"(frames must be contiguous)")
    return [r.box for r in records], records[0].frame, [r.status for r in records]


def _paired_boxes(pred: Tracklet | list[AnnotationRecord],
                  gt: list[AnnotationRecord]) -> list[tuple[BoundingBox, BoundingBox]]:
    pred_boxes, pred_first, _ = _frame_boxes(pred, "prediction")
    gt_boxes, gt_first, _ = _frame_boxes(gt, "ground truth")
    if len(pred_boxes) != len(gt_boxes):
        raise EvalRangeError(
            f"prediction covers {len(pred_boxes)} frames, "
            f"ground truth {len(gt_boxes)}")
    if pred_first is not None and gt_first is not None and pred_first != gt_first:
        raise EvalRangeError(
            f"prediction starts at frame {pred_first}, "
            f"ground truth at frame {gt_first}")
    if not pred_boxes:
        raise EvalRangeError("no frames to evaluate")
    return list(zip(pred_boxes, gt_boxes))


def dpr(pred: Tracklet | list[AnnotationRecord], gt: list[AnnotationRecord],
        threshold: float = DEFAULT_DPR_THRESHOLD, strict: bool = True) -> float:
    """Percentage of frames whose center location error beats ``threshold``."""
    pairs = _paired_boxes(pred, gt)
    errors = [center_distance(p, g) for p, g in pairs]
    hits = sum(1 for e in errors if (e < threshold if strict else e <= threshold))
    return 100.0 * hits / len(pairs)


def osr(pred: Tracklet | list[AnnotationRecord], gt: list[AnnotationRecord],
        threshold: float = DEFAULT_OSR_THRESHOLD, strict: bool = True) -> float:
    """Percentage of frames whose IoU with ground truth beats ``threshold``."""
    pairs = _paired_boxes(pred, gt)
    ratios = [iou(p, g) for p, g in pairs]
    hits = sum(1 for r in ratios if (r > threshold if strict else r >= threshold))
    return 100.0 * hits / len(pairs)


@dataclass
class EvalResult:
    """One sequence's scores plus the per-frame raw measurements."""

    sequence_id: str
    dpr: float
    osr: float
    center_errors: list[float]
    ious: list[float]
    status_counts: dict[str, int]

    @property
    def frames(self) -> int:
        return len(self.center_errors)


def evaluate(pred: Tracklet | list[AnnotationRecord], gt: list[AnnotationRecord],
             sequence_id: str,
             dpr_threshold: float = DEFAULT_DPR_THRESHOLD,
             osr_threshold: float = DEFAULT_OSR_THRESHOLD,
             strict: bool = True) -> EvalResult:
    """Score one sequence: DPR, OSR and the per-frame measurements."""
    pairs = _paired_boxes(pred, gt)
    errors = [center_distance(p, g) for p, g in pairs]
    ratios = [iou(p, g) for p, g in pairs]
    _, _, statuses = _frame_boxes(pred, "prediction")
    return EvalResult(
        sequence_id=sequence_id,
        dpr=dpr(pred, gt, dpr_threshold, strict),
        osr=osr(pred, gt, osr_threshold, strict),
        center_errors=errors,
        ious=ratios,
        status_counts=dict(Counter(statuses)))


def report_records(results: list[EvalResult]) -> list[dict]:
    """Machine-readable rows: one record per sequence."""
    return [{"sequence": r.sequence_id, "dpr": r.dpr, "osr": r.osr,
             "frames": r.frames} for r in results]


def render_report(results: list[EvalResult]) -> str:
    """Aligned text table with an unweighted mean row after the sequences."""
    name_width = max([len("sequence")] + [len(r.sequence_id) for r in results])
    header = (f"{'sequence':<{name_width}}  {'frames':>6}  "
              f"{'DPR (%)':>8}  {'OSR (%)':>8}")
    lines = [header, "-" * len(header)]
    for r in results:
        lines.append(f"{r.sequence_id:<{name_width}}  {r.frames:>6}  "
                     f"{r.dpr:>8.1f}  {r.osr:>8.1f}")
    if results:
        mean_dpr = sum(r.dpr for r in results) / len(results)
        mean_osr = sum(r.osr for r in results) / len(results)
        lines.append("-" * len(header))
        lines.append(f"mean over {len(results)} sequence"
                     f"{'s' if len(results) != 1 else ''}: "
                     f"{mean_dpr:.1f} / {mean_osr:.1f}")
    return "\n".join(lines) + "\n"
