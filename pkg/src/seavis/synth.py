"""Seeded synthetic audio-visual streams with ground-truth identities.

Each instance ``k`` owns a unit appearance vector ``u_k``. On every frame its
detection embedding is ``normalize(u_k + s * delta + noise)`` with ``s = +1``
while it sounds and ``-1`` while silent, so ``delta`` is the direction that
separates the two acoustic states. The frame audio feature is the normalised
mean of the sounding appearances plus noise, or a fixed silence token when
nothing sounds.

All randomness comes from numpy's PCG64 bit generator seeded with
``ScenarioConfig.seed``; draws happen in a fixed order so files are
reproducible.
"""

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import ConfigurationError, StreamParseError
from .numkernel import l2_normalize
from .tracker import Detection


@dataclass
class ScenarioConfig:
    """Parameters of one synthetic stream.

    ``sounding_schedule[k]`` lists half-open ``[start, end)`` frame intervals
    during which instance ``k`` sounds. ``state_offset`` may be given
    explicitly; otherwise a seeded direction of length ``state_scale``
    orthogonal to every appearance vector is drawn.
    """

    num_instances: int = 2
    num_frames: int = 10
    embed_dim: int = 16
    sounding_schedule: list = field(default_factory=list)
    appearance_noise: float = 0.02
    state_offset: list | None = None
    state_scale: float = 0.8
    audio_noise: float = 0.02
    num_classes: int = 3
    sounding_score: float = 0.9
    silent_score: float = 0.3
    score_jitter: float = 0.05
    orthogonal_appearance: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.num_instances < 0 or self.num_frames < 0 or self.embed_dim < 1:
            raise ConfigurationError("counts must be nonnegative and embed_dim positive")
        if min(self.appearance_noise, self.audio_noise, self.score_jitter, self.state_scale) < 0:
            raise ConfigurationError("noise levels and state_scale must be nonnegative")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be positive")
        if not self.sounding_schedule:
            self.sounding_schedule = [[[0, self.num_frames]] for _ in range(self.num_instances)]
        if len(self.sounding_schedule) != self.num_instances:
            raise ConfigurationError(
                f"schedule has {len(self.sounding_schedule)} entries for {self.num_instances} instances"
            )
        self.sounding_schedule = [[list(map(int, iv)) for iv in ivs] for ivs in self.sounding_schedule]
        for k, ivs in enumerate(self.sounding_schedule):
            for iv in ivs:
                if len(iv) != 2 or not 0 <= iv[0] <= iv[1] <= self.num_frames:
                    raise ConfigurationError(f"interval {iv} of instance {k} outside [0, {self.num_frames})")
        if self.state_offset is not None:
            self.state_offset = [float(v) for v in self.state_offset]
            if len(self.state_offset) != self.embed_dim:
                raise ConfigurationError("state_offset must have embed_dim entries")
        if self.embed_dim < self.num_instances + 2:
            raise ConfigurationError("embed_dim must be at least num_instances + 2")

    def sounding(self, k, t):
        return any(a <= t < b for a, b in self.sounding_schedule[k])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StreamFrame:
    frame: int
    audio: np.ndarray
    detections: list


@dataclass
class Stream:
    config: ScenarioConfig
    frames: list


def _orthogonalize(v, basis):
    for b in basis:
        v = v - (v @ b) * b
    return v


def _extend_basis(basis, v, tol=1e-9):
    r = _orthogonalize(np.asarray(v, dtype=np.float64), basis)
    n = np.linalg.norm(r)
    if n > tol:
        basis.append(r / n)


def generate(cfg):
    """Build the :class:`Stream` described by ``cfg``."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    u = []
    for _ in range(cfg.num_instances):
        v = rng.standard_normal(cfg.embed_dim)
        if cfg.orthogonal_appearance:
            v = _orthogonalize(v, u)
        u.append(l2_normalize(v))
    basis = []
    for v in u:
        _extend_basis(basis, v)
    draw = rng.standard_normal(cfg.embed_dim)
    if cfg.state_offset is not None:
        delta = np.asarray(cfg.state_offset, dtype=np.float64)
    else:
        delta = cfg.state_scale * l2_normalize(_orthogonalize(draw, basis))
    _extend_basis(basis, delta)
    silence = l2_normalize(_orthogonalize(rng.standard_normal(cfg.embed_dim), basis))

    frames = []
    for t in range(cfg.num_frames):
        dets = []
        sounding_u = []
        for k in range(cfg.num_instances):
            on = cfg.sounding(k, t)
            noise = rng.normal(0.0, cfg.appearance_noise, cfg.embed_dim)
            emb = l2_normalize(u[k] + (1.0 if on else -1.0) * delta + noise)
            base = cfg.sounding_score if on else cfg.silent_score
            score = float(np.clip(base + rng.uniform(-cfg.score_jitter, cfg.score_jitter), 0.0, 1.0))
            dets.append(Detection(
                embedding=emb,
                score=score,
                class_id=k % cfg.num_classes,
                frame=t,
                gt_id=k,
                gt_sounding=on,
            ))
            if on:
                sounding_u.append(u[k])
        if sounding_u:
            audio = l2_normalize(np.mean(sounding_u, axis=0) + rng.normal(0.0, cfg.audio_noise, cfg.embed_dim))
        else:
            audio = silence.copy()
        frames.append(StreamFrame(t, audio, dets))
    return Stream(cfg, frames)


def frame_to_dict(frame):
    return {
        "frame": frame.frame,
        "audio": [float(v) for v in frame.audio],
        "dets": [
            {
                "emb": [float(v) for v in d.embedding],
                "score": float(d.score),
                "class": int(d.class_id),
                "gt_id": d.gt_id,
                "gt_sounding": d.gt_sounding,
            }
            for d in frame.detections
        ],
    }


def frame_from_dict(obj):
    t = int(obj["frame"])
    dets = [
        Detection(
            embedding=np.asarray(d["emb"], dtype=np.float64),
            score=float(d["score"]),
            class_id=int(d["class"]),
            frame=t,
            gt_id=d.get("gt_id"),
            gt_sounding=d.get("gt_sounding"),
        )
        for d in obj["dets"]
    ]
    return StreamFrame(t, np.asarray(obj["audio"], dtype=np.float64), dets)


def dumps_stream(stream):
    lines = [json.dumps(stream.config.to_dict())]
    lines += [json.dumps(frame_to_dict(f)) for f in stream.frames]
    return "".join(line + "\n" for line in lines)


def write_stream(stream, path):
    """Write ``stream`` as JSON lines: the config, then one object per frame."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_stream(stream))


def read_stream(path):
    """Inverse of :func:`write_stream`; errors name the offending line."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise StreamParseError(1, "missing config line")
    try:
        cfg = ScenarioConfig.from_dict(json.loads(lines[0]))
    except (ValueError, TypeError) as exc:
        raise StreamParseError(1, str(exc)) from exc
    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            frame = frame_from_dict(json.loads(line))
        except (ValueError, TypeError, KeyError) as exc:
            raise StreamParseError(lineno, f"malformed frame: {exc}") from exc
        if frame.frame != len(frames):
            raise StreamParseError(lineno, f"expected frame {len(frames)}, found {frame.frame}")
        frames.append(frame)
    if len(frames) != cfg.num_frames:
        raise StreamParseError(
            len(frames) + 2, f"stream truncated: {len(frames)} of {cfg.num_frames} frames present"
        )
    return Stream(cfg, frames)
