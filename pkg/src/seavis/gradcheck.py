"""Central-difference gradient oracle and the loss-gradient certification run."""

import math

import numpy as np

from .agcl import (
    FrameContrastSet,
    InstanceContrastSet,
    frame_contrastive_loss,
    instance_contrastive_loss,
)
from .exceptions import DimensionError, OracleError

DEFAULT_STEP = 1e-5
PASS_THRESHOLD = 1e-5


def central_diff_grad(f, x, h=DEFAULT_STEP):
    """Per-coordinate ``(f(x + h e_i) - f(x - h e_i)) / 2h``."""
    if not h > 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x)
        flat[i] = orig - h
        f_minus = f(x)
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise OracleError(f"non-finite evaluation at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape)


def rel_error(g1, g2):
    """``||g1 - g2|| / max(||g1||, ||g2||, 1e-12)``."""
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    if g1.shape != g2.shape:
        raise DimensionError(f"shape {g1.shape} != {g2.shape}")
    denom = max(np.linalg.norm(g1), np.linalg.norm(g2), 1e-12)
    return float(np.linalg.norm(g1 - g2) / denom)


def _pack_frames(sets):
    parts = []
    for s in sets:
        parts.append(np.asarray(s.anchor, dtype=np.float64))
        parts.extend(np.asarray(v, dtype=np.float64) for v in s.positives)
        parts.extend(np.asarray(v, dtype=np.float64) for v in s.negatives)
    return np.concatenate(parts) if parts else np.zeros(0)


def _unpack(x, sets, dim):
    out = []
    pos = 0
    for s in sets:
        anchor = x[pos:pos + dim]
        pos += dim
        p = [x[pos + i * dim: pos + (i + 1) * dim] for i in range(len(s.positives))]
        pos += dim * len(s.positives)
        n = [x[pos + i * dim: pos + (i + 1) * dim] for i in range(len(s.negatives))]
        pos += dim * len(s.negatives)
        out.append((anchor, p, n))
    return out


def check_frame_loss(sets, tau, h=DEFAULT_STEP):
    """Relative error between the analytic and numeric gradients of the frame loss."""
    dim = len(sets[0].anchor)

    def f(x):
        rebuilt = [FrameContrastSet(a, p, n) for a, p, n in _unpack(x, sets, dim)]
        return frame_contrastive_loss(rebuilt, tau)[0]

    _, grads = frame_contrastive_loss(sets, tau)
    analytic = np.concatenate([g.flat() for g in grads])
    return rel_error(analytic, central_diff_grad(f, _pack_frames(sets), h))


def check_instance_loss(sets, tau, h=DEFAULT_STEP):
    """Relative error between the analytic and numeric gradients of the instance loss."""
    dim = len(sets[0].anchor)

    def f(x):
        rebuilt = [
            InstanceContrastSet(s.instance_id, a, p, n, s.sounding_frames, s.silent_frames)
            for s, (a, p, n) in zip(sets, _unpack(x, sets, dim))
        ]
        return instance_contrastive_loss(rebuilt, tau)[0]

    _, grads = instance_contrastive_loss(sets, tau)
    analytic = np.concatenate([g.flat() for g in grads])
    return rel_error(analytic, central_diff_grad(f, _pack_frames(sets), h))


def random_frame_sets(rng, case):
    """A seeded list of frame contrast sets; ``case`` cycles through edge cases."""
    dim = int(rng.integers(2, 7))
    n_frames = int(rng.integers(1, 4))
    sets = []
    for f in range(n_frames):
        n_pos = int(rng.integers(1, 4))
        if case % 5 == 1:
            n_neg = 0
        elif case % 5 == 2 and f == 0:
            n_pos, n_neg = 0, int(rng.integers(1, 4))
        else:
            n_neg = int(rng.integers(1, 5))
        sets.append(FrameContrastSet(
            rng.normal(size=dim),
            list(rng.normal(size=(n_pos, dim))),
            list(rng.normal(size=(n_neg, dim))),
        ))
    return sets


def random_instance_sets(rng, case):
    """A seeded list of instance contrast sets including ineligible ones."""
    dim = int(rng.integers(2, 7))
    n_inst = int(rng.integers(1, 4))
    sets = []
    for k in range(n_inst):
        n_pos = int(rng.integers(1, 4))
        n_neg = int(rng.integers(1, 4))
        if case % 5 == 1:
            n_neg = 0
        elif case % 5 == 2 and k == 0:
            n_pos = 0
        sets.append(InstanceContrastSet(
            k,
            rng.normal(size=dim),
            list(rng.normal(size=(n_pos, dim))),
            list(rng.normal(size=(n_neg, dim))),
            tuple(range(n_pos)),
            tuple(range(n_pos, n_pos + n_neg)),
        ))
    return sets


def certify(seed=0, n_configs=50, tau=0.07, h=DEFAULT_STEP, threshold=PASS_THRESHOLD):
    """Gradient-check both contrastive losses on ``n_configs`` seeded configurations each.

    Returns a JSON-ready report with per-loss maxima and an overall verdict.
    """
    rng = np.random.default_rng(seed)
    frame_errs = [check_frame_loss(random_frame_sets(rng, c), tau, h) for c in range(n_configs)]
    inst_errs = [check_instance_loss(random_instance_sets(rng, c), tau, h) for c in range(n_configs)]
    max_err = max(frame_errs + inst_errs)
    return {
        "seed": seed,
        "configs_per_loss": n_configs,
        "tau": tau,
        "step": h,
        "threshold": threshold,
        "frame_max_rel_error": max(frame_errs),
        "instance_max_rel_error": max(inst_errs),
        "max_rel_error": max_err,
        "passed": max_err < threshold,
    }
