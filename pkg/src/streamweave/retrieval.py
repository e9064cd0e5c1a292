"""Clip retrieval: scores historical clip indicators against the decision
embedding, selects grounded clips for answer generation, and trains the
projection with the relevance-matching loss.

Scoring is pure and thread-safe; training owns its parameters for the run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyClipSetError,
    EmptyDatasetError,
    InvalidPolicyError,
)
from .vectorops import retrieval_loss_with_grad, softmax

_ZERO_NORM = 1e-12


@dataclass
class RetrievalHead:
    """Learnable projection applied to the decision embedding before similarity."""

    projection: np.ndarray  # (d, d)
    temperature: float = 1.0

    @classmethod
    def identity(cls, dim: int, temperature: float = 1.0) -> "RetrievalHead":
        return cls(projection=np.eye(dim), temperature=temperature)

    def validate(self) -> None:
        p = self.projection
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DimensionMismatchError(f"projection must be square, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise DimensionMismatchError("projection has non-finite entries")
        if self.temperature <= 0:
            raise InvalidPolicyError("temperature must be > 0")


@dataclass(frozen=True)
class TopK:
    k: int


@dataclass(frozen=True)
class Threshold:
    """Select indices with probability >= alpha/N, capped at the `cap` highest;
    falls back to the argmax when nothing clears the bar."""

    alpha: float
    cap: int | None = 8


Policy = TopK | Threshold


@dataclass(frozen=True)
class GroundedSelection:
    clip_indices: tuple[int, ...]
    p_pred: np.ndarray
    policy: Policy


def _stack_indicators(indicators) -> np.ndarray:
    if isinstance(indicators, np.ndarray) and indicators.ndim == 2:
        mat = np.asarray(indicators, dtype=np.float64)
    else:
        arrs = [np.asarray(v, dtype=np.float64) for v in indicators]
        if not arrs:
            raise EmptyClipSetError("no clip indicators to score")
        mat = np.stack(arrs)
    if mat.shape[0] == 0:
        raise EmptyClipSetError("no clip indicators to score")
    return mat


def score_clips(todo_embed, indicators, head: RetrievalHead) -> np.ndarray:
    """Softmax over cosine similarities between the projected decision
    embedding and each clip indicator, tempered by head.temperature."""
    head.validate()
    e = np.asarray(todo_embed, dtype=np.float64)
    mat = _stack_indicators(indicators)
    if e.shape[0] != head.projection.shape[1] or mat.shape[1] != e.shape[0]:
        raise DimensionMismatchError(
            f"dims disagree: embed {e.shape[0]}, indicators {mat.shape[1]}, "
            f"projection {head.projection.shape}"
        )
    z = head.projection @ e
    nz = float(np.linalg.norm(z))
    if nz < _ZERO_NORM:
        raise DimensionMismatchError("projected embedding collapsed to zero")
    zh = z / nz
    norms = np.linalg.norm(mat, axis=1)
    cos = (mat @ zh) / np.where(norms < _ZERO_NORM, 1.0, norms)
    return softmax(cos / head.temperature)


def select_grounded(p_pred, policy: Policy) -> GroundedSelection:
    """Pick the grounded clip indices under the given policy.

    Ties rank lower indices first. Accepts any nonnegative score vector so
    callers can select over monotone rescalings, not just distributions.
    """
    p = np.asarray(p_pred, dtype=np.float64)
    if p.size == 0:
        raise EmptyClipSetError("empty score vector")
    n = p.size
    order = np.argsort(-p, kind="stable")
    if isinstance(policy, TopK):
        if policy.k < 1:
            raise InvalidPolicyError(f"top_k needs k >= 1, got {policy.k}")
        chosen = order[: min(policy.k, n)]
    elif isinstance(policy, Threshold):
        if policy.alpha <= 0:
            raise InvalidPolicyError(f"threshold needs alpha > 0, got {policy.alpha}")
        bar = policy.alpha / n
        chosen = np.array([i for i in range(n) if p[i] >= bar], dtype=int)
        if chosen.size == 0:
            chosen = order[:1]
        elif policy.cap is not None and chosen.size > policy.cap:
            ranked = [i for i in order if p[i] >= bar]
            chosen = np.array(ranked[: policy.cap], dtype=int)
    else:
        raise InvalidPolicyError(f"unknown policy {policy!r}")
    return GroundedSelection(
        clip_indices=tuple(sorted(int(i) for i in chosen)), p_pred=p, policy=policy
    )


def retrieval_loss_grad_projection(
    projection: np.ndarray,
    todo_embed: np.ndarray,
    indicators: np.ndarray,
    relevant,
    temperature: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. the projection matrix, in closed form.

    Chain: projection -> l2-normalize -> cosine scores / T -> softmax ->
    relevance loss. Verified against central finite differences in tests.
    """
    e = np.asarray(todo_embed, dtype=np.float64)
    mat = _stack_indicators(indicators)
    norms = np.linalg.norm(mat, axis=1)
    unit = mat / np.where(norms < _ZERO_NORM, 1.0, norms)[:, None]

    z = projection @ e
    nz = float(np.linalg.norm(z))
    zh = z / nz
    scores = (unit @ zh) / temperature
    p = softmax(scores)
    res = retrieval_loss_with_grad(p, relevant)

    g_p = res.grad
    # Softmax backward.
    g_s = p * (g_p - float(g_p @ p))
    g_zh = (unit.T @ g_s) / temperature
    # Normalization backward: project out the radial component.
    g_z = (g_zh - zh * float(zh @ g_zh)) / nz
    return res.loss, np.outer(g_z, e)


def train_retrieval(
    dataset: list[tuple],
    epochs: int,
    lr: float,
    *,
    init: np.ndarray | None = None,
    temperature: float = 1.0,
) -> tuple[np.ndarray, list[float]]:
    """Full-batch gradient descent of the projection on the mean relevance loss.

    Dataset entries are (todo_embed, indicators, relevant_index_set). The
    projection starts at identity unless `init` is given. Returns the trained
    projection and the per-epoch loss curve (measured before each update).
    """
    if not dataset:
        raise EmptyDatasetError("retrieval trainer needs at least one sample")
    dim = np.asarray(dataset[0][0], dtype=np.float64).shape[0]
    w = np.eye(dim) if init is None else np.asarray(init, dtype=np.float64).copy()
    losses: list[float] = []
    for _ in range(epochs):
        total = 0.0
        grad = np.zeros_like(w)
        for todo_embed, indicators, relevant in dataset:
            loss, g = retrieval_loss_grad_projection(
                w, todo_embed, indicators, relevant, temperature
            )
            total += loss
            grad += g
        n = len(dataset)
        losses.append(total / n)
        w = w - lr * grad / n
    return w, losses
