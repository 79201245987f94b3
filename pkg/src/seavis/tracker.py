"""Online memory-bank tracker with silent-instance suppression.

Every tracklet keeps its per-frame history and a momentum-averaged unit
embedding. Detections of a new frame are matched against those averaged
embeddings; a detection that matches nothing either starts a new tracklet
(if it passes the new-tracklet gate) or is dropped as background.
"""

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator

from .exceptions import ConfigurationError, OrderingError
from .numkernel import as_dense, l2_normalize, l2_normalize_rows


@dataclass
class Detection:
    embedding: np.ndarray
    score: float
    class_id: int = 0
    mask: np.ndarray | None = None
    frame: int = 0
    gt_id: int | None = None
    gt_sounding: bool | None = None

    def __post_init__(self):
        self.embedding = as_dense(self.embedding, 1, "embedding")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class HistoryEntry:
    frame: int
    embedding: np.ndarray
    score: float
    class_id: int
    mask: np.ndarray | None = None


@dataclass
class Tracklet:
    id: int
    ma_embedding: np.ndarray
    history: list = field(default_factory=list)
    last_seen: int = -1
    active: bool = True


@dataclass
class MemoryBank:
    tracklets: list = field(default_factory=list)
    next_id: int = 1
    frame_cursor: int = -1

    def active(self):
        return [t for t in self.tracklets if t.active]

    def get(self, tid):
        for t in self.tracklets:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def copy(self):
        return copy.deepcopy(self)


@dataclass
class TrackerConfig:
    """Association thresholds and bank policy.

    ``audio_gate`` is the minimum cosine between a newborn detection and the
    frame's audio anchor, or ``None`` to disable the audio test.
    """

    match_threshold: float = 0.5
    new_tracklet_score: float = 0.6
    audio_gate: float | None = None
    momentum: float = 0.75
    max_inactive_frames: int = 10
    similarity: str = "cosine"
    matching: str = "greedy"

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.similarity not in ("cosine", "bi-softmax"):
            raise ConfigurationError(f"unknown similarity {self.similarity!r}")
        if self.matching not in ("greedy", "hungarian"):
            raise ConfigurationError(f"unknown matching {self.matching!r}")
        lo = -1.0 if self.similarity == "cosine" else 0.0
        if not lo <= self.match_threshold <= 1.0:
            raise ConfigurationError(f"match_threshold outside [{lo}, 1]")
        if self.audio_gate is not None and not -1.0 <= self.audio_gate <= 1.0:
            raise ConfigurationError("audio_gate outside [-1, 1]")
        if self.max_inactive_frames < 0:
            raise ConfigurationError("max_inactive_frames must be nonnegative")


@dataclass
class OutputEntry:
    track_id: int
    score: float
    class_id: int
    mask: np.ndarray | None = None
    det_index: int = -1
    gt_id: int | None = None

    def to_dict(self):
        return {
            "id": self.track_id,
            "score": float(self.score),
            "class": int(self.class_id),
            "det": self.det_index,
            "gt_id": self.gt_id,
            "mask": None if self.mask is None else np.asarray(self.mask).astype(int).tolist(),
        }


@dataclass
class FrameOutput:
    frame: int
    entries: list = field(default_factory=list)

    def to_dict(self):
        return {"frame": self.frame, "outputs": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, obj):
        entries = [
            OutputEntry(
                track_id=int(e["id"]),
                score=float(e["score"]),
                class_id=int(e["class"]),
                mask=None if e.get("mask") is None else np.asarray(e["mask"], dtype=bool),
                det_index=int(e.get("det", -1)),
                gt_id=e.get("gt_id"),
            )
            for e in obj["outputs"]
        ]
        return cls(int(obj["frame"]), entries)


@dataclass
class VideoTrack:
    id: int
    class_id: int
    score: float
    frames: list
    masks: list


@dataclass
class VideoResult:
    tracks: list = field(default_factory=list)

    def frame_table(self):
        """Map each frame to its ``(track id, mask)`` pairs, ordered by id."""
        table = {}
        for tr in self.tracks:
            for f, m in zip(tr.frames, tr.masks):
                table.setdefault(f, []).append((tr.id, m))
        return dict(sorted(table.items()))

    def to_records(self):
        """Header object with the per-track summary, then one object per frame."""
        header = {
            "tracks": [
                {"id": tr.id, "class": tr.class_id, "score": float(tr.score), "frames": list(tr.frames)}
                for tr in self.tracks
            ]
        }
        classes = {tr.id: tr.class_id for tr in self.tracks}
        records = [header]
        for f, items in self.frame_table().items():
            records.append({
                "frame": f,
                "instances": [
                    {"id": tid, "class": classes[tid],
                     "mask": None if m is None else np.asarray(m).astype(int).tolist()}
                    for tid, m in items
                ],
            })
        return records


def _similarity(det_hat, ma, kind):
    cos = det_hat @ ma.T
    if kind == "cosine":
        return cos
    # mean of the row-wise and column-wise softmax
    row = np.exp(cos - cos.max(axis=1, keepdims=True))
    row /= row.sum(axis=1, keepdims=True)
    col = np.exp(cos - cos.max(axis=0, keepdims=True))
    col /= col.sum(axis=0, keepdims=True)
    return 0.5 * (row + col)


def _frame_of(dets, frame):
    frames = {d.frame for d in dets}
    if frame is not None:
        frames.add(frame)
    if len(frames) > 1:
        raise OrderingError(f"detections span several frames: {sorted(frames)}")
    return frames.pop() if frames else None


def match_detections(bank, dets, cfg, frame=None):
    """Assign detections to active tracklets.

    Returns a list with, for every detection, the matched tracklet id or
    ``None``. Greedy matching takes pairs in order of decreasing similarity,
    breaking ties by lower tracklet id and then lower detection index; a pair
    is only accepted when its similarity exceeds ``cfg.match_threshold``.
    """
    t = _frame_of(dets, frame)
    if t is not None and t <= bank.frame_cursor:
        raise OrderingError(f"frame {t} already processed (cursor at {bank.frame_cursor})")
    tracks = bank.active()
    assignment = [None] * len(dets)
    if not dets or not tracks:
        return assignment
    det_hat = l2_normalize_rows(np.stack([d.embedding for d in dets]))
    ma = np.stack([tr.ma_embedding for tr in tracks])
    sim = _similarity(det_hat, ma, cfg.similarity)

    if cfg.matching == "hungarian":
        rows, cols = linear_sum_assignment(-sim)
        for di, ti in zip(rows, cols):
            if sim[di, ti] > cfg.match_threshold:
                assignment[di] = tracks[ti].id
        return assignment

    pairs = sorted(
        (-sim[di, ti], tracks[ti].id, di, ti)
        for di in range(len(dets))
        for ti in range(len(tracks))
        if sim[di, ti] > cfg.match_threshold
    )
    used = set()
    for _, tid, di, _ in pairs:
        if assignment[di] is None and tid not in used:
            assignment[di] = tid
            used.add(tid)
    return assignment


def momentum_update(ma, det_embedding, beta):
    """``normalize(beta * ma + (1 - beta) * normalize(det))``."""
    return l2_normalize(beta * ma + (1.0 - beta) * l2_normalize(det_embedding))


def passes_new_gate(det, cfg, audio_anchor=None):
    if det.score < cfg.new_tracklet_score:
        return False
    if cfg.audio_gate is None:
        return True
    if audio_anchor is None:
        raise ConfigurationError("audio_gate is set but no audio anchor was supplied")
    cos = float(l2_normalize(det.embedding) @ l2_normalize(audio_anchor))
    return cos >= cfg.audio_gate


def update_bank(bank, assignment, dets, cfg, audio_anchor=None, frame=None):
    """Apply an assignment to ``bank`` in place and return the frame's output.

    Matched tracklets absorb their detection; unmatched detections become new
    tracklets only when they pass the new-tracklet gate, otherwise they are
    suppressed and leave no trace. Tracklets unseen for more than
    ``cfg.max_inactive_frames`` frames are deactivated.
    """
    if len(assignment) != len(dets):
        raise ValueError("assignment does not match detections")
    t = _frame_of(dets, frame)
    if t is None:
        t = bank.frame_cursor + 1
    entries = []
    for i, (det, tid) in enumerate(zip(dets, assignment)):
        if tid is not None:
            tr = bank.get(tid)
            tr.ma_embedding = momentum_update(tr.ma_embedding, det.embedding, cfg.momentum)
        elif passes_new_gate(det, cfg, audio_anchor):
            tr = Tracklet(bank.next_id, l2_normalize(det.embedding))
            bank.tracklets.append(tr)
            bank.next_id += 1
        else:
            continue
        tr.history.append(HistoryEntry(t, det.embedding.copy(), det.score, det.class_id, det.mask))
        tr.last_seen = t
        entries.append(OutputEntry(tr.id, det.score, det.class_id, det.mask, i, det.gt_id))
    for tr in bank.tracklets:
        if tr.active and t - tr.last_seen > cfg.max_inactive_frames:
            tr.active = False
    bank.frame_cursor = t
    entries.sort(key=lambda e: e.track_id)
    return FrameOutput(t, entries)


def process_frame(bank, frame, cfg, audio_anchor=None):
    """Associate one stream frame; returns ``(FrameOutput, bank)``.

    ``frame`` is any object with ``frame``, ``audio`` and ``detections``
    attributes. With the audio gate enabled and no explicit anchor, the
    frame's audio feature serves as the anchor.
    """
    if frame.frame <= bank.frame_cursor:
        raise OrderingError(f"frame {frame.frame} submitted after frame {bank.frame_cursor}")
    if audio_anchor is None and cfg.audio_gate is not None:
        audio_anchor = frame.audio
    dets = frame.detections
    assignment = match_detections(bank, dets, cfg, frame.frame)
    out = update_bank(bank, assignment, dets, cfg, audio_anchor, frame.frame)
    return out, bank


def finalize(bank):
    """Video-level result: one track per tracklet, ordered by id.

    A track's class maximises the mean per-frame class score, where frames
    predicting another class contribute zero.
    """
    tracks = []
    for tr in sorted(bank.tracklets, key=lambda t: t.id):
        if not tr.history:
            continue
        totals = {}
        for h in tr.history:
            totals[h.class_id] = totals.get(h.class_id, 0.0) + h.score
        n = len(tr.history)
        best = min(totals, key=lambda c: (-totals[c], c))
        tracks.append(VideoTrack(
            id=tr.id,
            class_id=best,
            score=totals[best] / n,
            frames=[h.frame for h in tr.history],
            masks=[h.mask for h in tr.history],
        ))
    return VideoResult(tracks)


class MemoryBankTracker(BaseEstimator):
    """Estimator interface to the online tracker.

    ``partial_fit`` consumes one frame; ``fit`` resets and consumes a whole
    stream. The bank is available as ``bank_`` and per-frame outputs as
    ``outputs_``.
    """

    def __init__(self, match_threshold=0.5, new_tracklet_score=0.6, audio_gate=None,
                 momentum=0.75, max_inactive_frames=10, similarity="cosine", matching="greedy"):
        self.match_threshold = match_threshold
        self.new_tracklet_score = new_tracklet_score
        self.audio_gate = audio_gate
        self.momentum = momentum
        self.max_inactive_frames = max_inactive_frames
        self.similarity = similarity
        self.matching = matching

    def _config(self):
        return TrackerConfig(**self.get_params())

    def partial_fit(self, frame):
        if not hasattr(self, "bank_"):
            self.config_ = self._config()
            self.bank_ = MemoryBank()
            self.outputs_ = []
        out, _ = process_frame(self.bank_, frame, self.config_)
        self.outputs_.append(out)
        return self

    def fit(self, frames, y=None):
        for attr in ("bank_", "outputs_", "config_"):
            self.__dict__.pop(attr, None)
        self.config_ = self._config()
        self.bank_ = MemoryBank()
        self.outputs_ = []
        for f in frames:
            self.partial_fit(f)
        return self

    def fit_predict(self, frames, y=None):
        return self.fit(frames).outputs_

    def finalize(self):
        return finalize(self.bank_)
