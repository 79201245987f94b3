"""Audio-guided contrastive losses, segmentation sub-losses and their aggregation.

The two contrastive losses come with hand-derived gradients with respect to
every raw (unnormalised) embedding and anchor. ``seavis.gradcheck`` certifies
them against central differences.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DimensionError, EligibilityError, LossTermError
from .numkernel import NORM_EPS, as_dense, matmul


@dataclass
class FrameContrastSet:
    """Audio anchor of one frame with its sounding and non-sounding embeddings."""

    anchor: np.ndarray
    positives: list = field(default_factory=list)
    negatives: list = field(default_factory=list)


@dataclass
class InstanceContrastSet:
    """Embeddings of one tracked instance split by sounding state.

    ``anchor`` is the mean of the frame anchors over ``sounding_frames``.
    """

    instance_id: int
    anchor: np.ndarray
    positives: list = field(default_factory=list)
    negatives: list = field(default_factory=list)
    sounding_frames: tuple = ()
    silent_frames: tuple = ()

    def __post_init__(self):
        overlap = set(self.sounding_frames) & set(self.silent_frames)
        if overlap:
            raise EligibilityError(
                f"instance {self.instance_id} is both sounding and silent on frames {sorted(overlap)}"
            )

    @property
    def eligible(self):
        return len(self.positives) >= 1 and len(self.negatives) >= 1


@dataclass
class ContrastGrad:
    """Gradient of a loss with respect to the members of one contrast set."""

    anchor: np.ndarray
    positives: list
    negatives: list

    def flat(self):
        return np.concatenate([self.anchor, *self.positives, *self.negatives])


@dataclass
class LossWeights:
    cls: float = 2.0
    ce: float = 5.0
    dice: float = 5.0
    emb: float = 2.0
    frame: float = 1.0
    instance: float = 1.0
    tau: float = 0.07

    def __post_init__(self):
        for name in ("cls", "ce", "dice", "emb", "frame", "instance"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"weight {name} must be nonnegative")
        _check_tau(self.tau)


@dataclass
class LossReport:
    cls: float
    ce: float
    dice: float
    emb: float
    frame_contrastive: float
    instance_contrastive: float
    frame_loss: float
    total: float
    gradients: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["gradients"] = {k: np.asarray(v).tolist() for k, v in self.gradients.items()}
        return d


def _check_tau(tau):
    if not tau > 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")


def _normalize(x):
    """Return the normalised vectors and the norms of ``x`` (rows)."""
    r = np.sqrt(np.einsum("ij,ij->i", x, x))
    return x / (r + NORM_EPS)[:, None], r


def _normalize_backward(x, r, g):
    """Pull ``g = dL/dx_hat`` back through ``x_hat = x / (|x| + eps)``."""
    denom = r + NORM_EPS
    xg = np.einsum("ij,ij->i", x, g)
    with np.errstate(divide="ignore", invalid="ignore"):
        radial = np.where(r > 0, xg / (r * denom**2), 0.0)
    return g / denom[:, None] - x * radial[:, None]


def _stack(vectors, dim, name):
    if len(vectors) == 0:
        return np.zeros((0, dim))
    arr = as_dense(np.stack([np.asarray(v, dtype=np.float64) for v in vectors]), 2, name)
    if arr.shape[1] != dim:
        raise DimensionError(f"{name} have width {arr.shape[1]}, anchor has {dim}")
    return arr


def _logsumexp(z):
    if len(z) == 0:
        return -math.inf
    m = z.max()
    return m + math.log(np.exp(z - m).sum())


def _neg_log_ratio(pos_lse, neg_lse):
    """``-log(P / (P + N))`` from log-masses, without cancellation when N << P."""
    return float(np.logaddexp(0.0, neg_lse - pos_lse))


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def project_audio_anchor(audio_feat, proj):
    """Linear projection of one frame's audio feature to the embedding space."""
    audio_feat = as_dense(audio_feat, 1, "audio_feat")
    return matmul(audio_feat[None, :], proj)[0]


def instance_anchor(frame_anchors, sounding_frames):
    """Mean of the frame anchors over the instance's sounding frames."""
    frames = sorted(set(sounding_frames))
    if not frames:
        raise EligibilityError("an instance anchor needs at least one sounding frame")
    if frames[0] < 0 or frames[-1] >= len(frame_anchors):
        raise EligibilityError(f"sounding frames {frames} out of range for {len(frame_anchors)} anchors")
    return np.mean([as_dense(frame_anchors[t], 1, "anchor") for t in frames], axis=0)


def _frame_terms(s, tau):
    """Summed -log s_{f,i} over the positives of one frame, and its gradient."""
    a = as_dense(s.anchor, 1, "anchor")
    dim = a.shape[0]
    pos = _stack(s.positives, dim, "positives")
    neg = _stack(s.negatives, dim, "negatives")
    a_hat, a_r = _normalize(a[None, :])
    p_hat, p_r = _normalize(pos)
    n_hat, n_r = _normalize(neg)
    zp = p_hat @ a_hat[0] / tau
    zn = n_hat @ a_hat[0] / tau

    total = 0.0
    g_a = np.zeros(dim)
    g_p = np.zeros_like(pos)
    g_n = np.zeros_like(neg)
    for i in range(len(pos)):
        z = np.concatenate(([zp[i]], zn))
        total += _neg_log_ratio(zp[i], _logsumexp(zn))
        w = _softmax(z)
        dz_p = w[0] - 1.0
        dz_n = w[1:]
        g_p[i] += dz_p * a_hat[0] / tau
        g_n += dz_n[:, None] * a_hat[0] / tau
        g_a += (dz_p * p_hat[i] + dz_n @ n_hat) / tau
    grad = ContrastGrad(
        anchor=_normalize_backward(a[None, :], a_r, g_a[None, :])[0],
        positives=list(_normalize_backward(pos, p_r, g_p)),
        negatives=list(_normalize_backward(neg, n_r, g_n)),
    )
    return total, len(pos), grad


def frame_contrastive_loss(sets, tau=0.07):
    """Frame-level audio-visual contrastive loss.

    Each sounding embedding is contrasted alone against all non-sounding
    embeddings of its frame; the result is averaged over every positive of
    every frame. Frames without positives add nothing to the sum or the
    count, and the loss is 0 when no frame has a positive.

    Parameters
    ----------
    sets : FrameContrastSet or sequence of FrameContrastSet
    tau : float

    Returns
    -------
    loss : float
    grads : list of ContrastGrad, one per set
    """
    _check_tau(tau)
    if isinstance(sets, FrameContrastSet):
        sets = [sets]
    total, count, grads = 0.0, 0, []
    for s in sets:
        t, n, g = _frame_terms(s, tau)
        total += t
        count += n
        grads.append(g)
    if count == 0:
        return 0.0, grads
    for g in grads:
        g.anchor /= count
        g.positives = [v / count for v in g.positives]
        g.negatives = [v / count for v in g.negatives]
    return total / count, grads


def _instance_terms(s, tau):
    a = as_dense(s.anchor, 1, "anchor")
    dim = a.shape[0]
    pos = _stack(s.positives, dim, "positives")
    neg = _stack(s.negatives, dim, "negatives")
    a_hat, a_r = _normalize(a[None, :])
    p_hat, p_r = _normalize(pos)
    n_hat, n_r = _normalize(neg)
    zp = p_hat @ a_hat[0] / tau
    zn = n_hat @ a_hat[0] / tau
    z = np.concatenate((zp, zn))
    loss = _neg_log_ratio(_logsumexp(zp), _logsumexp(zn))

    w_all = _softmax(z)
    dz_p = w_all[: len(zp)] - _softmax(zp)
    dz_n = w_all[len(zp):]
    g_a = (dz_p @ p_hat + dz_n @ n_hat) / tau
    grad = ContrastGrad(
        anchor=_normalize_backward(a[None, :], a_r, g_a[None, :])[0],
        positives=list(_normalize_backward(pos, p_r, np.outer(dz_p, a_hat[0]) / tau)),
        negatives=list(_normalize_backward(neg, n_r, np.outer(dz_n, a_hat[0]) / tau)),
    )
    return loss, grad


def instance_contrastive_loss(sets, tau=0.07):
    """Instance-level multi-positive contrastive loss.

    Only instances seen both sounding and silent take part; the loss is the
    mean of ``-log s_k`` over them, or 0 when there are none. Ineligible
    instances get zero gradients.

    Returns
    -------
    loss : float
    grads : list of ContrastGrad, one per set
    """
    _check_tau(tau)
    if isinstance(sets, InstanceContrastSet):
        sets = [sets]
    eligible = [s.eligible for s in sets]
    n_inst = sum(eligible)
    total, grads = 0.0, []
    for s, ok in zip(sets, eligible):
        if ok:
            loss, g = _instance_terms(s, tau)
            total += loss
            g.anchor /= n_inst
            g.positives = [v / n_inst for v in g.positives]
            g.negatives = [v / n_inst for v in g.negatives]
        else:
            a = np.asarray(s.anchor, dtype=np.float64)
            g = ContrastGrad(
                np.zeros_like(a),
                [np.zeros_like(a) for _ in s.positives],
                [np.zeros_like(a) for _ in s.negatives],
            )
        grads.append(g)
    if n_inst == 0:
        return 0.0, grads
    return total / n_inst, grads


def build_instance_sets(frame_anchors, detections):
    """Group per-frame embeddings into one :class:`InstanceContrastSet` per instance.

    Parameters
    ----------
    frame_anchors : sequence of 1-D arrays, one per frame
    detections : iterable of ``(frame, instance_id, embedding, sounding)``
    """
    by_id = {}
    for frame, inst, emb, sounding in detections:
        entry = by_id.setdefault(inst, ([], [], [], []))
        if sounding:
            entry[0].append(frame)
            entry[2].append(emb)
        else:
            entry[1].append(frame)
            entry[3].append(emb)
    sets = []
    for inst in sorted(by_id):
        s_frames, u_frames, pos, neg = by_id[inst]
        if s_frames:
            anchor = instance_anchor(frame_anchors, s_frames)
        else:
            anchor = np.zeros_like(np.asarray(frame_anchors[0], dtype=np.float64))
        sets.append(InstanceContrastSet(inst, anchor, pos, neg, tuple(s_frames), tuple(u_frames)))
    return sets


def dice_loss(pred, gt, eps=1e-6):
    """Soft dice loss ``1 - 2|p*g| / (|p| + |g| + eps)``."""
    pred = as_dense(pred, None, "pred")
    gt = as_dense(gt, None, "gt")
    if pred.shape != gt.shape:
        raise DimensionError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    return 1.0 - 2.0 * float((pred * gt).sum()) / (float(pred.sum()) + float(gt.sum()) + eps)


def bce_loss(pred_logits, gt_mask):
    """Mean binary cross-entropy of per-pixel logits against a binary mask."""
    x = as_dense(pred_logits, None, "pred_logits")
    y = as_dense(gt_mask, None, "gt_mask")
    if x.shape != y.shape:
        raise DimensionError(f"logit shape {x.shape} != mask shape {y.shape}")
    # log(1 + exp(-|x|)) + max(x, 0) - x*y
    return float(np.mean(np.logaddexp(0.0, -np.abs(x)) + np.maximum(x, 0.0) - x * y))


def cls_loss(class_logits, gt_classes, assignment, no_object_weight=1.0):
    """Softmax cross-entropy over ``K`` classes plus a trailing no-object class.

    ``assignment`` maps prediction index to ground-truth index; every
    unassigned prediction is supervised towards the no-object column and
    weighted by ``no_object_weight``.
    """
    logits = as_dense(class_logits, 2, "class_logits")
    n_pred, n_cols = logits.shape
    no_object = n_cols - 1
    targets = np.full(n_pred, no_object)
    weights = np.full(n_pred, float(no_object_weight))
    for p, g in assignment.items():
        if not 0 <= p < n_pred or not 0 <= g < len(gt_classes):
            raise DimensionError(f"assignment {p} -> {g} out of range")
        c = gt_classes[g]
        if not 0 <= c < no_object:
            raise DimensionError(f"class {c} outside [0, {no_object})")
        targets[p] = c
        weights[p] = 1.0
    if len(set(assignment.values())) != len(assignment):
        raise DimensionError("assignment is not one-to-one")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    nll = -log_probs[np.arange(n_pred), targets]
    return float((weights * nll).sum() / weights.sum())


def total_loss(terms, weights=None, emb_term=0.0, gradients=None):
    """Aggregate the per-term losses into a :class:`LossReport`.

    ``terms`` maps ``cls``, ``ce``, ``dice``, ``frame`` and ``instance`` to
    their values (missing ones count as 0); ``emb_term`` is the externally
    computed association loss.
    """
    weights = weights or LossWeights()
    names = ("cls", "ce", "dice", "frame", "instance")
    unknown = sorted(set(terms) - set(names))
    if unknown:
        raise ConfigurationError(f"unknown loss terms {unknown}; expected a subset of {list(names)}")
    values = {k: float(terms.get(k, 0.0)) for k in names}
    values["emb"] = float(emb_term)
    for name, v in values.items():
        if not math.isfinite(v):
            raise LossTermError(name, v)
    frame_loss = weights.cls * values["cls"] + weights.ce * values["ce"] + weights.dice * values["dice"]
    total = (
        frame_loss
        + weights.emb * values["emb"]
        + weights.frame * values["frame"]
        + weights.instance * values["instance"]
    )
    return LossReport(
        cls=values["cls"],
        ce=values["ce"],
        dice=values["dice"],
        emb=values["emb"],
        frame_contrastive=values["frame"],
        instance_contrastive=values["instance"],
        frame_loss=frame_loss,
        total=total,
        gradients=dict(gradients or {}),
    )
