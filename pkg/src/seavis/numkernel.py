"""Dense numeric kernel.

Arrays are plain ``numpy.ndarray`` objects of dtype float64. This module adds
the few operations the rest of the package builds on: a shape-checked matrix
product, a masked row softmax and the epsilon-guarded L2 normalisation.

Additive masks use a large negative finite sentinel instead of ``-inf`` so
that no arithmetic on them can produce NaN.
"""

import numpy as np
from sklearn.utils import assert_all_finite

from .exceptions import DimensionError, MaskError

NEG_INF = -np.finfo(np.float64).max / 2
# any logit or mask entry at or below this counts as excluded
EXCLUDED = NEG_INF / 2

NORM_EPS = 1e-12


def as_dense(x, ndim=None, name="array", allow_mask=False):
    """Coerce ``x`` to a float64 array and check its rank.

    Non-finite values are rejected unless ``allow_mask`` is set, in which case
    ``-inf`` entries are replaced by the :data:`NEG_INF` sentinel.
    """
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if allow_mask:
        if np.isnan(arr).any() or np.isposinf(arr).any():
            raise ValueError(f"{name} may only contain finite values or -inf")
        return np.where(np.isneginf(arr), NEG_INF, arr)
    assert_all_finite(arr, input_name=name)
    return arr


def matmul(a, b):
    """Matrix product of two 2-D arrays."""
    a = as_dense(a, 2, "a")
    b = as_dense(b, 2, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(logits, mask=None):
    """Row-wise softmax with an optional additive mask.

    Masked columns receive exactly zero probability. Rows are shifted by their
    maximum unmasked logit before exponentiation.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got shape {logits.shape}")
    excluded = logits <= EXCLUDED
    z = logits
    if mask is not None:
        mask = as_dense(mask, 2, "mask", allow_mask=True)
        if mask.shape != logits.shape:
            raise DimensionError(
                f"mask shape {mask.shape} does not match logits {logits.shape}"
            )
        excluded = excluded | (mask <= EXCLUDED)
        z = np.where(excluded, 0.0, logits + mask)
    if logits.shape[1] and excluded.all(axis=1).any():
        row = int(np.flatnonzero(excluded.all(axis=1))[0])
        raise MaskError(f"row {row} has no unmasked column")
    row_max = np.max(np.where(excluded, -np.inf, z), axis=1, keepdims=True)
    e = np.where(excluded, 0.0, np.exp(np.where(excluded, 0.0, z - row_max)))
    return e / e.sum(axis=1, keepdims=True)


def l2_normalize(v, eps=NORM_EPS):
    """Return ``v / (||v||_2 + eps)`` for a 1-D vector."""
    v = as_dense(v, 1, "v")
    return v / (np.sqrt(v @ v) + eps)


def l2_normalize_rows(x, eps=NORM_EPS):
    """Normalise every row of a 2-D array independently."""
    x = as_dense(x, 2, "x")
    return x / (np.sqrt(np.einsum("ij,ij->i", x, x))[:, None] + eps)
