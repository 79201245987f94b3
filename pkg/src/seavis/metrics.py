"""Desk-scale evaluation: simplified sound-localisation accuracy, ID switches, mask IoU.

``fsla_simplified`` is an approximation, not the benchmark FSLA. A frame
counts as correct when the set of ground-truth instances covered by the
predictions equals the set of sounding ground-truth instances and no
prediction is left unexplained. Frames are split by how many instances sound:
none (``n``), one (``s``) or several (``m``).
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError


@dataclass
class PredEntry:
    pred_id: int
    class_id: int = 0
    mask: np.ndarray | None = None
    gt_id: int | None = None


@dataclass
class GTEntry:
    gt_id: int
    class_id: int = 0
    sounding: bool = True
    mask: np.ndarray | None = None


@dataclass
class EvalPair:
    predictions: list = field(default_factory=list)
    ground_truth: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.predictions) != len(self.ground_truth):
            raise DimensionError(
                f"{len(self.predictions)} predicted frames vs {len(self.ground_truth)} ground-truth frames"
            )


def mask_iou(a, b):
    """Intersection over union of two binary masks; two empty masks give 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def match_frame(preds, gts, iou_threshold=0.5, class_sensitive=False):
    """Correspond predictions to ground truth within one frame.

    Uses mask IoU (greedy, best pairs first) when every entry carries a mask,
    otherwise the predictions' ``gt_id`` provenance. Returns a dict from
    prediction index to ground-truth index.
    """
    result = {}
    use_masks = preds and gts and all(p.mask is not None for p in preds) and all(
        g.mask is not None for g in gts)
    if use_masks:
        pairs = []
        for pi, p in enumerate(preds):
            for gi, g in enumerate(gts):
                if class_sensitive and p.class_id != g.class_id:
                    continue
                iou = mask_iou(p.mask, g.mask)
                if iou >= iou_threshold:
                    pairs.append((-iou, pi, gi))
        used = set()
        for _, pi, gi in sorted(pairs):
            if pi not in result and gi not in used:
                result[pi] = gi
                used.add(gi)
        return result
    index = {g.gt_id: gi for gi, g in enumerate(gts)}
    used = set()
    for pi, p in enumerate(preds):
        gi = index.get(p.gt_id)
        if gi is None or gi in used:
            continue
        if class_sensitive and p.class_id != gts[gi].class_id:
            continue
        result[pi] = gi
        used.add(gi)
    return result


def _ratio(correct, total):
    return correct / total if total else None


def fsla_simplified(pair, matching_threshold=0.5, class_sensitive=False):
    """Fraction of frames whose predicted sounding set is exactly right.

    Splits with no frames report ``None``.
    """
    counts = {"n": [0, 0], "s": [0, 0], "m": [0, 0]}
    for preds, gts in zip(pair.predictions, pair.ground_truth):
        match = match_frame(preds, gts, matching_threshold, class_sensitive)
        sounding = {gi for gi, g in enumerate(gts) if g.sounding}
        covered = set(match.values())
        ok = len(match) == len(preds) and covered == sounding
        key = "n" if not sounding else ("s" if len(sounding) == 1 else "m")
        counts[key][0] += ok
        counts[key][1] += 1
    correct = sum(c for c, _ in counts.values())
    total = sum(t for _, t in counts.values())
    return {
        "fsla": _ratio(correct, total),
        "fsla_n": _ratio(*counts["n"]),
        "fsla_s": _ratio(*counts["s"]),
        "fsla_m": _ratio(*counts["m"]),
    }


def track_assignments(pair, matching_threshold=0.5):
    """For every ground-truth id, the sequence of matched prediction ids over time."""
    seqs = {}
    for preds, gts in zip(pair.predictions, pair.ground_truth):
        for pi, gi in sorted(match_frame(preds, gts, matching_threshold).items(), key=lambda x: x[1]):
            seqs.setdefault(gts[gi].gt_id, []).append(preds[pi].pred_id)
    return seqs


def idsw(pair, matching_threshold=0.5):
    """Number of times a ground-truth track's matched prediction id changes."""
    total = 0
    for seq in track_assignments(pair, matching_threshold).values():
        total += sum(1 for a, b in zip(seq, seq[1:]) if a != b)
    return total


def id_mapping(pair, matching_threshold=0.5):
    """Ground-truth id -> set of prediction ids it was ever matched to."""
    return {g: set(seq) for g, seq in track_assignments(pair, matching_threshold).items()}


def evaluate(pair, matching_threshold=0.5):
    """Flat metrics report."""
    report = fsla_simplified(pair, matching_threshold)
    mapping = id_mapping(pair, matching_threshold)
    report["idsw"] = idsw(pair, matching_threshold)
    report["frames"] = len(pair.predictions)
    report["gt_tracks"] = len(mapping)
    report["pred_ids"] = len({p.pred_id for preds in pair.predictions for p in preds})
    report["fragmented_gt_tracks"] = sum(1 for ids in mapping.values() if len(ids) != 1)
    return report


def report_to_csv(report):
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for key, value in report.items():
        writer.writerow([key, "" if value is None else value])
    return buf.getvalue()


def pair_from_stream(stream, outputs):
    """Build an :class:`EvalPair` from a synthetic stream and tracker outputs."""
    gt = [
        [GTEntry(d.gt_id, d.class_id, bool(d.gt_sounding), d.mask) for d in f.detections]
        for f in stream.frames
    ]
    by_frame = {o.frame: o for o in outputs}
    preds = []
    for f in stream.frames:
        out = by_frame.get(f.frame)
        entries = out.entries if out is not None else []
        preds.append([PredEntry(e.track_id, e.class_id, e.mask, e.gt_id) for e in entries])
    return EvalPair(preds, gt)
