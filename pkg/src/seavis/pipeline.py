"""End-to-end online run over a synthetic stream.

Frames are consumed strictly in order through :class:`StreamProbe`, which
refuses any read past the current position. Fusion runs in fixed windows of
``window`` frames; because the mask is causal, the output for frame ``t`` is
computed from the audio of the window's frames up to ``t`` only and equals
the corresponding row of a whole-window pass.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .agcl import (
    FrameContrastSet,
    LossWeights,
    build_instance_sets,
    frame_contrastive_loss,
    instance_contrastive_loss,
    total_loss,
)
from .ccaf import (
    LEVEL_INDICES,
    attend,
    attention_heatmap,
    build_causal_mask,
    init_params,
    level_extent,
    write_heatmap,
)
from .exceptions import ConfigurationError, FutureAccessError
from .gradcheck import certify
from .metrics import evaluate, pair_from_stream, report_to_csv
from .synth import ScenarioConfig, generate, read_stream
from .tracker import MemoryBank, TrackerConfig, finalize, process_frame

log = logging.getLogger(__name__)


class StreamProbe:
    """Read-only view of a frame list that rejects reads beyond the cursor."""

    def __init__(self, frames, strict=True):
        self._frames = frames
        self.strict = strict
        self.cursor = -1
        self.reads = []
        self.future_reads = []

    def __len__(self):
        return len(self._frames)

    def advance(self, t):
        if t < self.cursor:
            raise FutureAccessError(f"cursor cannot move back from {self.cursor} to {t}")
        self.cursor = t

    def __getitem__(self, i):
        self.reads.append(i)
        if i > self.cursor:
            self.future_reads.append((self.cursor, i))
            if self.strict:
                raise FutureAccessError(f"read of frame {i} while at frame {self.cursor}")
        return self._frames[i]


@dataclass
class CcafConfig:
    enabled: bool = True
    channels: int = 8
    d_k: int | None = None
    heads: int = 1
    input_size: int = 32
    levels: tuple = LEVEL_INDICES
    seed: int = 0

    def __post_init__(self):
        self.levels = tuple(self.levels)
        if self.channels < 2 or self.channels % 2:
            raise ConfigurationError("ccaf channels must be a positive even number")


@dataclass
class RunConfig:
    scenario: dict | None = None
    scenario_path: str | None = None
    stream_path: str | None = None
    tracker: dict = field(default_factory=dict)
    loss_weights: dict = field(default_factory=dict)
    ccaf: dict = field(default_factory=dict)
    window: int = 5
    seed: int | None = None
    gradcheck: bool = False
    heatmap: str | None = None

    def __post_init__(self):
        if self.window < 1:
            raise ConfigurationError("window must be at least 1")
        if self.heatmap not in (None, "csv", "pgm"):
            raise ConfigurationError(f"unknown heatmap format {self.heatmap!r}")
        sources = [x for x in (self.scenario, self.scenario_path, self.stream_path) if x is not None]
        if len(sources) > 1:
            raise ConfigurationError("give only one of scenario, scenario_path, stream_path")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def load_stream(cfg):
    """Generate or read the stream named by a :class:`RunConfig`."""
    if cfg.stream_path is not None:
        stream = read_stream(cfg.stream_path)
        if cfg.seed is not None and cfg.seed != stream.config.seed:
            log.info("seed override ignored for a recorded stream")
        return stream
    if cfg.scenario_path is not None:
        with open(cfg.scenario_path, encoding="utf-8") as fh:
            scenario = json.load(fh)
    else:
        scenario = dict(cfg.scenario or {})
    if cfg.seed is not None:
        scenario["seed"] = cfg.seed
    return generate(ScenarioConfig.from_dict(scenario))


class FeatureSynth:
    """Deterministic per-frame visual feature maps and audio projection.

    Detection ``i`` of a frame paints its projected embedding, scaled by its
    score, as a Gaussian bump at a fixed position on every level.
    """

    def __init__(self, embed_dim, ccaf_cfg, t_max):
        rng = np.random.Generator(np.random.PCG64(ccaf_cfg.seed))
        c = ccaf_cfg.channels
        self.visual_proj = rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, c))
        self.audio_proj = rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, c))
        self.shapes = []
        self.params = []
        for lvl in ccaf_cfg.levels:
            h = w = level_extent(ccaf_cfg.input_size, lvl)
            self.shapes.append((h, w))
            self.params.append(init_params(c, h, w, ccaf_cfg.d_k, ccaf_cfg.heads, t_max, rng))
        self.channels = c

    def level_maps(self, frame):
        out = []
        n = len(frame.detections)
        for h, w in self.shapes:
            yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
            fmap = np.zeros((h, w, self.channels))
            for i, det in enumerate(frame.detections):
                cy = (i + 0.5) * h / n
                cx = w / 2.0
                bump = np.exp(-((yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2) / (2.0 * max(h, 1) / 4.0))
                fmap += det.score * bump[:, :, None] * (det.embedding @ self.visual_proj)
            out.append(fmap)
        return out

    def audio(self, frame):
        return frame.audio @ self.audio_proj


def _window_heatmap(rows):
    size = len(rows)
    hm = np.zeros((size, size))
    for y, row in enumerate(rows):
        hm[y, : len(row)] = row
    return hm


def online_fusion(probe, synth, window):
    """Run windowed causal fusion frame by frame.

    Returns per-frame fusion records and, per window, one heatmap per level.
    """
    records = []
    heatmaps = []
    rows = None
    for t in range(len(probe)):
        probe.advance(t)
        start = (t // window) * window
        if t == start:
            if rows is not None:
                heatmaps.append([_window_heatmap(r) for r in rows])
            rows = [[] for _ in synth.params]
        history = [probe[j] for j in range(start, t + 1)]
        audio = np.stack([synth.audio(f) for f in history])
        maps = [synth.level_maps(f) for f in history]
        energies = []
        for li, params in enumerate(synth.params):
            level = np.stack([m[li] for m in maps])
            spatial = level.shape[1] * level.shape[2]
            out, attn = attend(level, audio, params, build_causal_mask(len(history), spatial))
            delta = (out @ params.w_o)[-spatial:]
            energies.append(float(np.mean(np.abs(delta))))
            rows[li].append(attention_heatmap(attn, spatial)[-1])
        records.append({"frame": t, "window_start": start, "residual_mean_abs": energies})
    if rows is not None:
        heatmaps.append([_window_heatmap(r) for r in rows])
    return records, heatmaps


def contrastive_report(stream, weights):
    """Losses of the stream's ground-truth embeddings under the given weights.

    Gradients are keyed ``f{t}/anchor`` and ``f{t}/d{i}`` and combine both
    contrastive terms with their weights; the instance anchor's gradient is
    spread evenly over the frame anchors it averages.
    """
    grads = {}

    def add(key, g, w):
        if key in grads:
            grads[key] = grads[key] + w * g
        else:
            grads[key] = w * g

    frame_sets, members = [], []
    for f in stream.frames:
        pos = [i for i, d in enumerate(f.detections) if d.gt_sounding]
        neg = [i for i, d in enumerate(f.detections) if not d.gt_sounding]
        frame_sets.append(FrameContrastSet(
            f.audio, [f.detections[i].embedding for i in pos], [f.detections[i].embedding for i in neg]))
        members.append((pos, neg))
    lf, li = 0.0, 0.0
    if frame_sets:
        lf, fgrads = frame_contrastive_loss(frame_sets, weights.tau)
        for f, g, (pos, neg) in zip(stream.frames, fgrads, members):
            add(f"f{f.frame}/anchor", g.anchor, weights.frame)
            for i, gp in zip(pos, g.positives):
                add(f"f{f.frame}/d{i}", gp, weights.frame)
            for i, gn in zip(neg, g.negatives):
                add(f"f{f.frame}/d{i}", gn, weights.frame)

        where = {}
        for f in stream.frames:
            for i, d in enumerate(f.detections):
                where.setdefault(d.gt_id, {True: [], False: []})[bool(d.gt_sounding)].append((f.frame, i))
        inst_sets = build_instance_sets(
            [f.audio for f in stream.frames],
            [(f.frame, d.gt_id, d.embedding, d.gt_sounding) for f in stream.frames for d in f.detections],
        )
        if inst_sets:
            li, igrads = instance_contrastive_loss(inst_sets, weights.tau)
            for s, g in zip(inst_sets, igrads):
                for (t, i), gp in zip(where[s.instance_id][True], g.positives):
                    add(f"f{t}/d{i}", gp, weights.instance)
                for (t, i), gn in zip(where[s.instance_id][False], g.negatives):
                    add(f"f{t}/d{i}", gn, weights.instance)
                for t in s.sounding_frames:
                    add(f"f{t}/anchor", g.anchor / len(s.sounding_frames), weights.instance)
    return total_loss({"frame": lf, "instance": li}, weights, gradients=grads)


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _dump_jsonl(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def run_pipeline(cfg, out_dir, probe_strict=True):
    """Run the whole online pipeline and write its artifacts to ``out_dir``.

    Returns a summary dict including the probe's future-read count.
    """
    os.makedirs(out_dir, exist_ok=True)
    stream = load_stream(cfg)
    tracker_cfg = TrackerConfig(**cfg.tracker)
    weights = LossWeights(**cfg.loss_weights)
    ccaf_cfg = CcafConfig(**cfg.ccaf)
    if cfg.seed is not None:
        ccaf_cfg.seed = cfg.seed
    log.info("running %d frames, window %d", len(stream.frames), cfg.window)

    files = []
    if ccaf_cfg.enabled:
        probe = StreamProbe(stream.frames, probe_strict)
        synth = FeatureSynth(stream.config.embed_dim, ccaf_cfg, cfg.window)
        fusion_records, heatmaps = online_fusion(probe, synth, cfg.window)
        fusion_future = len(probe.future_reads)
        _dump_jsonl(fusion_records, os.path.join(out_dir, "fusion.jsonl"))
        files.append("fusion.jsonl")
        if cfg.heatmap:
            hm_dir = os.path.join(out_dir, "heatmaps")
            os.makedirs(hm_dir, exist_ok=True)
            for wi, per_level in enumerate(heatmaps):
                for lvl, hm in zip(ccaf_cfg.levels, per_level):
                    name = f"window{wi:03d}_level{lvl}.{cfg.heatmap}"
                    write_heatmap(hm, os.path.join(hm_dir, name), cfg.heatmap)
                    files.append(f"heatmaps/{name}")
    else:
        fusion_future = 0

    probe = StreamProbe(stream.frames, probe_strict)
    bank = MemoryBank()
    outputs = []
    for t in range(len(probe)):
        probe.advance(t)
        out, bank = process_frame(bank, probe[t], tracker_cfg)
        outputs.append(out)
    future_reads = fusion_future + len(probe.future_reads)

    _dump_jsonl([o.to_dict() for o in outputs], os.path.join(out_dir, "frames.jsonl"))
    _dump_jsonl(finalize(bank).to_records(), os.path.join(out_dir, "video.jsonl"))
    report = evaluate(pair_from_stream(stream, outputs), 0.5)
    _dump_json(report, os.path.join(out_dir, "metrics.json"))
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(report_to_csv(report))
    _dump_json(contrastive_report(stream, weights).to_dict(), os.path.join(out_dir, "losses.json"))
    files += ["frames.jsonl", "video.jsonl", "metrics.json", "metrics.csv", "losses.json"]
    if cfg.gradcheck:
        gc = certify(seed=ccaf_cfg.seed, tau=weights.tau)
        _dump_json(gc, os.path.join(out_dir, "gradcheck.json"))
        files.append("gradcheck.json")

    resolved = {
        "run": cfg.to_dict(),
        "scenario": stream.config.to_dict(),
        "tracker": asdict(tracker_cfg),
        "loss_weights": asdict(weights),
        "ccaf": asdict(ccaf_cfg),
    }
    manifest = {
        "version": __version__,
        "seed": stream.config.seed,
        "ccaf_seed": ccaf_cfg.seed,
        "config_hash": config_hash(resolved),
        "config": resolved,
        "future_reads": future_reads,
        "files": {name: _sha256(os.path.join(out_dir, name)) for name in sorted(files)},
    }
    _dump_json(manifest, os.path.join(out_dir, "manifest.json"))
    return {"metrics": report, "future_reads": future_reads, "manifest": manifest}
