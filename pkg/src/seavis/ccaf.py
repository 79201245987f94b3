"""Causal cross-attention fusion of audio into multi-scale visual features.

Every pixel embedding of frame ``t`` attends over the projected audio features
of frames ``0..t``. The attended audio values are projected back to the visual
channel count and added residually, so each level keeps its shape.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, DimensionError
from .numkernel import NEG_INF, as_dense, matmul, softmax_rows

LEVEL_INDICES = (2, 3, 4)


@dataclass
class VisualFeatureLevel:
    """Per-pixel embeddings of one feature scale, shaped ``(T, H', W', C)``."""

    values: np.ndarray
    level_index: int = 2

    def __post_init__(self):
        self.values = as_dense(self.values, 4, "visual level")

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def spatial(self):
        return self.values.shape[1] * self.values.shape[2]

    @property
    def channels(self):
        return self.values.shape[3]


@dataclass
class AudioSequence:
    """Projected per-frame audio features ``(T, C)``.

    ``raw_dim`` records the width of the features before projection.
    """

    values: np.ndarray
    raw_dim: int | None = None

    def __post_init__(self):
        self.values = as_dense(self.values, 2, "audio")

    @property
    def frames(self):
        return self.values.shape[0]


@dataclass
class CcafParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    visual_pe: np.ndarray
    audio_pe: np.ndarray
    heads: int = 1

    def __post_init__(self):
        if self.d_k < 1:
            raise ConfigurationError("d_k must be at least 1")
        if self.heads < 1 or self.d_k % self.heads:
            raise ConfigurationError(
                f"heads={self.heads} does not divide d_k={self.d_k}"
            )
        for name in ("w_k", "w_v"):
            if getattr(self, name).shape != self.w_q.shape:
                raise DimensionError(f"{name} shape differs from w_q")
        if self.w_o.shape != self.w_q.shape[::-1]:
            raise DimensionError("w_o must map d_k back to the visual channels")

    @property
    def d_k(self):
        return self.w_q.shape[1]

    @property
    def t_max(self):
        return self.audio_pe.shape[0]


def level_extent(size, level_index):
    """Spatial extent of feature level ``level_index`` for an input of ``size`` pixels."""
    return math.ceil(size / 2 ** (level_index + 1))


def build_causal_mask(frames, spatial):
    """Additive mask of shape ``(frames * spatial, frames)``.

    Row ``i`` belongs to frame ``i // spatial`` and may see audio frames up to
    and including that one.
    """
    if frames < 1 or spatial < 1:
        raise DimensionError(f"need frames >= 1 and spatial >= 1, got {frames}, {spatial}")
    row_frame = np.arange(frames * spatial) // spatial
    visible = np.arange(frames)[None, :] <= row_frame[:, None]
    return np.where(visible, 0.0, NEG_INF)


def sine_spatial_pe(height, width, channels):
    """Fixed 2-D sine positional table of shape ``(height, width, channels)``.

    Channels come in (sin, cos) pairs. The first half of the pairs encodes the
    row coordinate, the rest the column coordinate, each over a geometric
    ladder of frequencies with base 10000.
    """
    if channels < 2 or channels % 2:
        raise ConfigurationError(f"channels must be a positive even number, got {channels}")
    pairs = channels // 2
    n_row = (pairs + 1) // 2
    n_col = pairs - n_row
    rows, cols = np.meshgrid(
        np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij"
    )
    pe = np.empty((height, width, channels))
    for p in range(pairs):
        if p < n_row:
            pos, k, n = rows, p, n_row
        else:
            pos, k, n = cols, p - n_row, n_col
        angle = pos / 10000.0 ** (k / n)
        pe[:, :, 2 * p] = np.sin(angle)
        pe[:, :, 2 * p + 1] = np.cos(angle)
    return pe


def _rng(random_state):
    if isinstance(random_state, np.random.Generator):
        return random_state
    return check_random_state(random_state)


def init_params(channels, height, width, d_k=None, heads=1, t_max=5, random_state=None):
    """Seeded parameters for one feature level.

    Projections are Gaussian with variance ``1 / fan_in``; the learnable audio
    positional table starts uniform in ``[-0.02, 0.02)``.
    """
    rng = _rng(random_state)
    d_k = channels if d_k is None else d_k
    scale_in = 1.0 / math.sqrt(channels)
    w_q = rng.normal(0.0, scale_in, (channels, d_k))
    w_k = rng.normal(0.0, scale_in, (channels, d_k))
    w_v = rng.normal(0.0, scale_in, (channels, d_k))
    w_o = rng.normal(0.0, 1.0 / math.sqrt(d_k), (d_k, channels))
    audio_pe = rng.uniform(-0.02, 0.02, (t_max, channels))
    return CcafParams(
        w_q=w_q,
        w_k=w_k,
        w_v=w_v,
        w_o=w_o,
        visual_pe=sine_spatial_pe(height, width, channels),
        audio_pe=audio_pe,
        heads=heads,
    )


def _as_level(level, level_index=2):
    if isinstance(level, VisualFeatureLevel):
        return level
    return VisualFeatureLevel(np.asarray(level, dtype=np.float64), level_index)


def _as_audio(audio):
    if isinstance(audio, AudioSequence):
        return audio
    return AudioSequence(np.asarray(audio, dtype=np.float64))


def attend(level, audio, params, mask=None):
    """Masked attention of visual queries over audio keys.

    Returns the attended values ``(T*H'*W', d_k)`` and the attention weights
    ``(T*H'*W', T)``, averaged over heads when there are several.
    """
    level = _as_level(level)
    audio = _as_audio(audio)
    T, H, W, C = level.values.shape
    if audio.frames != T:
        raise DimensionError(f"visual level has {T} frames but audio has {audio.frames}")
    if audio.values.shape[1] != C:
        raise DimensionError(f"audio has {audio.values.shape[1]} channels, visual has {C}")
    if params.w_q.shape[0] != C:
        raise DimensionError(f"params expect {params.w_q.shape[0]} channels, got {C}")
    if params.visual_pe.shape != (H, W, C):
        raise DimensionError(f"visual_pe shape {params.visual_pe.shape} != {(H, W, C)}")
    if T > params.t_max:
        raise DimensionError(f"{T} frames exceed the audio positional table ({params.t_max})")
    spatial = H * W
    if mask is None:
        mask = build_causal_mask(T, spatial)
    elif mask.shape != (T * spatial, T):
        raise DimensionError(f"mask shape {mask.shape} != {(T * spatial, T)}")

    q_in = level.values.reshape(T * spatial, C) + np.tile(params.visual_pe.reshape(spatial, C), (T, 1))
    q = matmul(q_in, params.w_q)
    k = matmul(audio.values + params.audio_pe[:T], params.w_k)
    v = matmul(audio.values, params.w_v)

    head_dim = params.d_k // params.heads
    scale = 1.0 / math.sqrt(head_dim)
    out = np.empty((T * spatial, params.d_k))
    attn = np.zeros((T * spatial, T))
    for h in range(params.heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        weights = softmax_rows(matmul(q[:, cols], k[:, cols].T) * scale, mask)
        out[:, cols] = matmul(weights, v[:, cols])
        attn += weights
    if params.heads > 1:
        attn /= params.heads
    return out, attn


def fuse_level(level, audio, params, mask=None):
    """Fuse the audio history into one visual level.

    Returns ``(fused, attn)`` where ``fused`` has the input level's shape.
    """
    level = _as_level(level)
    out, attn = attend(level, audio, params, mask)
    delta = matmul(out, params.w_o).reshape(level.values.shape)
    return VisualFeatureLevel(level.values + delta, level.level_index), attn


def fuse_multiscale(levels, audio, params):
    """Apply :func:`fuse_level` to each level with its own parameters and mask."""
    if len(levels) != len(params):
        raise DimensionError(f"{len(levels)} levels but {len(params)} parameter sets")
    audio = _as_audio(audio)
    fused = []
    for i, (level, p) in enumerate(zip(levels, params)):
        level = _as_level(level, LEVEL_INDICES[i] if i < len(LEVEL_INDICES) else i + 2)
        fused.append(fuse_level(level, audio, p)[0])
    return fused


def attention_heatmap(attn, spatial):
    """Average the attention rows of each frame's pixels.

    Entry ``(y, x)`` is the mean attention that pixels of frame ``y`` pay to
    audio frame ``x``.
    """
    attn = as_dense(attn, 2, "attn")
    rows, frames = attn.shape
    if spatial < 1 or rows != frames * spatial:
        raise DimensionError(f"{rows} attention rows do not split into {frames} frames of {spatial}")
    return attn.reshape(frames, spatial, frames).mean(axis=1)


def heatmap_to_csv(heatmap):
    """One CSV line per frame ``y``; column ``x`` holds the score, 9 significant digits."""
    heatmap = as_dense(heatmap, 2, "heatmap")
    return "".join(",".join(format(v, ".9g") for v in row) + "\n" for row in heatmap)


def heatmap_to_pgm(heatmap):
    """Binary 8-bit PGM with grey level ``round(255 * score)``."""
    heatmap = as_dense(heatmap, 2, "heatmap")
    h, w = heatmap.shape
    pixels = np.clip(np.round(255.0 * heatmap), 0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def write_heatmap(heatmap, path, fmt="csv"):
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(heatmap_to_csv(heatmap))
    elif fmt == "pgm":
        with open(path, "wb") as fh:
            fh.write(heatmap_to_pgm(heatmap))
    else:
        raise ConfigurationError(f"unknown heatmap format {fmt!r}")


class CausalCrossAttentionFusion(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`fuse_multiscale`.

    ``fit`` draws seeded parameters for the shapes of the given levels;
    ``transform`` fuses an audio sequence into the levels. Both take the audio
    as their second argument.

    Parameters
    ----------
    d_k : int or None
        Attention key width; defaults to the visual channel count.
    heads : int
        Number of attention heads splitting ``d_k``.
    t_max : int
        Length of the learnable audio positional table, i.e. the longest
        window the fitted parameters accept.
    shared : bool
        Reuse the first level's projections on every level.
    random_state : int, RandomState or None
    """

    def __init__(self, d_k=None, heads=1, t_max=5, shared=False, random_state=None):
        self.d_k = d_k
        self.heads = heads
        self.t_max = t_max
        self.shared = shared
        self.random_state = random_state

    def _levels(self, X):
        return [_as_level(x, LEVEL_INDICES[i] if i < 3 else i + 2) for i, x in enumerate(X)]

    def fit(self, X, audio=None):
        levels = self._levels(X)
        if not levels:
            raise DimensionError("at least one visual level is required")
        rng = _rng(self.random_state)
        params = []
        for level in levels:
            _, H, W, C = level.values.shape
            p = init_params(C, H, W, self.d_k, self.heads, self.t_max, rng)
            if self.shared and params:
                first = params[0]
                if first.w_q.shape != p.w_q.shape:
                    raise DimensionError("shared weights need equal channel counts")
                p = CcafParams(first.w_q, first.w_k, first.w_v, first.w_o,
                               p.visual_pe, first.audio_pe, self.heads)
            params.append(p)
        self.params_ = params
        self.n_levels_ = len(params)
        return self

    def transform(self, X, audio):
        check_is_fitted(self, "params_")
        return [f.values for f in fuse_multiscale(self._levels(X), audio, self.params_)]

    def fit_transform(self, X, audio=None, **fit_params):
        return self.fit(X, audio, **fit_params).transform(X, audio)

    def attention(self, X, audio):
        """Per-level attention matrices ``(T*H'*W', T)`` for the fitted parameters."""
        check_is_fitted(self, "params_")
        return [attend(level, audio, p)[1] for level, p in zip(self._levels(X), self.params_)]
