"""Pure numeric kernel: normalization, similarity, pooling, softmax, losses.

All functions are pure and operate on float64 numpy arrays; none hold state,
so they are safe to call from any thread.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    EmptyRelevantSetError,
    IndexOutOfRangeError,
    NonFiniteInputError,
    ZeroVectorError,
)

# Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] inside both losses so
# their gradients stay bounded for the trainers.
PROB_EPS = 1e-7

_ZERO_NORM = 1e-12


@dataclass(frozen=True)
class LossWithGrad:
    """A loss value together with its gradient w.r.t. the differentiated input."""

    loss: float
    grad: np.ndarray


def as_vector(values: Iterable[float]) -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting NaN/inf entries."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteInputError("vector contains NaN or infinity")
    return v


def l2_normalize(v: Iterable[float]) -> np.ndarray:
    """Scale a vector to unit Euclidean norm, preserving direction."""
    v = as_vector(v)
    norm = float(np.linalg.norm(v))
    if norm < _ZERO_NORM:
        raise ZeroVectorError("cannot normalize a (near-)zero vector")
    return v / norm


def cosine_sim(a: Iterable[float], b: Iterable[float]) -> float:
    """Cosine similarity in [-1, 1]; symmetric and scale-invariant."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < _ZERO_NORM or nb < _ZERO_NORM:
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def mean_pool(vectors: Sequence[Iterable[float]]) -> np.ndarray:
    """Componentwise arithmetic mean of same-dimension vectors."""
    if len(vectors) == 0:
        raise EmptyInputError("mean_pool of an empty list")
    arrs = [as_vector(v) for v in vectors]
    dim = arrs[0].shape[0]
    for a in arrs[1:]:
        if a.shape[0] != dim:
            raise DimensionMismatchError(f"dimension mismatch: {a.shape[0]} vs {dim}")
    return np.mean(np.stack(arrs), axis=0)


def compress_adjacent(vectors: Sequence[Iterable[float]]) -> list[np.ndarray]:
    """Halve a vector sequence (rounding up) by mean-pooling adjacent pairs.

    Element k of the output is the mean of inputs 2k and 2k+1; a trailing
    unpaired element passes through unchanged.
    """
    arrs = [as_vector(v) for v in vectors]
    if arrs:
        dim = arrs[0].shape[0]
        for a in arrs[1:]:
            if a.shape[0] != dim:
                raise DimensionMismatchError(f"dimension mismatch: {a.shape[0]} vs {dim}")
    out: list[np.ndarray] = []
    for k in range(0, len(arrs) - 1, 2):
        out.append((arrs[k] + arrs[k + 1]) / 2.0)
    if len(arrs) % 2 == 1:
        out.append(arrs[-1])
    return out


def softmax(scores: Iterable[float]) -> np.ndarray:
    """Numerically stable softmax (max-subtraction); output sums to 1."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise EmptyInputError("softmax of an empty score list")
    if not np.all(np.isfinite(s)):
        raise NonFiniteInputError("softmax scores contain NaN or infinity")
    shifted = s - np.max(s)
    exps = np.exp(shifted)
    return exps / np.sum(exps)


def bce_with_grad(p: float, y: int) -> LossWithGrad:
    """Binary cross-entropy of predicted probability p against label y.

    p is clamped to [PROB_EPS, 1 - PROB_EPS]; the gradient is taken at the
    clamped value, so edge inputs produce large-but-finite gradients.
    """
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    p = float(np.clip(p, PROB_EPS, 1.0 - PROB_EPS))
    loss = -(y * np.log(p) + (1 - y) * np.log(1.0 - p))
    grad = (p - y) / (p * (1.0 - p))
    return LossWithGrad(loss=float(loss), grad=np.array([grad]))


def retrieval_loss_with_grad(p_pred: Iterable[float], relevant: Iterable[int]) -> LossWithGrad:
    """Relevance-matching loss between a predicted clip distribution and R.

    With R the relevant index set (|R| = k), the target distribution puts mass
    1/k on each member of R, and the loss is

        -(1/k) * sum_{i in R} (1/k) * ln p_pred[i]

    i.e. a cross-entropy scaled by 1/k; indices outside R contribute nothing.
    The gradient w.r.t. p_pred[i] is -1/(k^2 * p_pred[i]) on R, 0 elsewhere.
    p_pred entries used in the log are clamped at PROB_EPS.
    """
    p = np.asarray(p_pred, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise EmptyInputError("p_pred must be a nonempty 1-D probability vector")
    rel = sorted(set(int(i) for i in relevant))
    if not rel:
        raise EmptyRelevantSetError("relevant clip set is empty")
    if rel[0] < 0 or rel[-1] >= p.size:
        raise IndexOutOfRangeError(f"relevant indices {rel} out of range for {p.size} clips")
    k = len(rel)
    clamped = np.clip(p[rel], PROB_EPS, None)
    loss = -np.sum(np.log(clamped)) / (k * k)
    grad = np.zeros_like(p)
    grad[rel] = -1.0 / (k * k * clamped)
    return LossWithGrad(loss=float(loss), grad=grad)


def logistic(x: float) -> float:
    """Stable sigmoid."""
    if x >= 0:
        return float(1.0 / (1.0 + np.exp(-x)))
    e = np.exp(x)
    return float(e / (1.0 + e))
