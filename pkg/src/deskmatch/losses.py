"""Supervised matching losses and the teacher-to-student distillation terms.

Focal coefficients, fine-branch variances and every teacher quantity enter as
constants: gradients reach only the student's probabilities and expectations.
"""

from __future__ import annotations

import logging

import numpy as np
from numpy.typing import ArrayLike, NDArray

from deskmatch.autodiff import Tensor, ops
from deskmatch.autodiff._tape import Array
from deskmatch.config import LossWeights, TrainingRole
from deskmatch.errors import ContractError

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
VARIANCE_FLOOR = 1e-6


def _constant(x: Tensor | ArrayLike) -> Array:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def focal_weight(
    p: ArrayLike, y: ArrayLike, alpha: float = 0.25, gamma: float = 2.0
) -> Array:
    """``alpha * (1 - p_hat) ** gamma`` with ``p_hat = p`` where ``y = 1`` else ``1 - p``."""
    prob = np.asarray(p, dtype=np.float64)
    if (prob < 0).any() or (prob > 1).any():
        raise ContractError(
            f"focal weight needs probabilities in [0, 1], got {prob.min()}..{prob.max()}"
        )
    p_hat = np.where(np.asarray(y) == 1, prob, 1.0 - prob)
    return alpha * np.power(1.0 - p_hat, gamma)


def coarse_loss(
    probabilities: Tensor,
    gt_matches: NDArray[np.int64],
    alpha: float = 0.25,
    gamma: float = 2.0,
) -> Tensor:
    """Focal-weighted negative log confidence averaged over ground-truth matches."""
    gt = np.asarray(gt_matches, dtype=np.int64).reshape(-1, 2)
    if len(gt) == 0:
        raise ContractError("coarse loss needs at least one ground-truth match")
    p = probabilities[gt[:, 0], gt[:, 1]]
    weight = Tensor(focal_weight(p.data, 1, alpha, gamma))
    return ops.sum(weight * ops.log(p, floor=LOG_FLOOR)) * (-1.0 / len(gt))


def fine_loss(
    expectation: Tensor, variance: Tensor, targets: ArrayLike, valid: ArrayLike | None = None
) -> Tensor:
    """Inverse-variance weighted squared distance of heatmap means to their targets.

    Rows where ``valid`` is false (no ground truth inside the window) are
    excluded; the variance is a constant clamped at ``VARIANCE_FLOOR``.
    """
    tgt = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    keep = np.ones(len(tgt), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        logger.warning("fine loss has no match with a ground-truth target")
        return Tensor(0.0)
    var = Tensor(np.maximum(variance.data[idx], VARIANCE_FLOOR))
    diff = expectation[idx] - Tensor(tgt[idx])
    return ops.sum(ops.sum(ops.square(diff), axis=1) / var) * (1.0 / len(idx))


def _query_term(
    student_logits: Tensor,
    teacher_logits: Array,
    gt_index: NDArray[np.int64],
    axis: int,
    temperature: float,
    alpha: float,
    gamma: float,
    include_unmatched: bool,
) -> Tensor:
    """Summed MQD contributions of the query distributions along ``axis``.

    ``gt_index[q]`` is the ground-truth position of query ``q`` or -1.
    """
    soft_s = ops.softmax(student_logits, temperature, axis=axis)
    soft_t = ops.softmax(Tensor(teacher_logits), temperature, axis=axis).data
    cross = ops.sum(soft_s * Tensor(np.log(np.maximum(soft_t, LOG_FLOOR))), axis=axis)

    plain = ops.softmax(Tensor(student_logits.data), 1.0, axis=axis).data
    if axis == 0:
        plain = plain.T
    matched = gt_index >= 0
    q = np.arange(len(gt_index))
    weight = np.zeros(len(gt_index))
    weight[matched] = focal_weight(plain[q[matched], gt_index[matched]], 1, alpha, gamma)
    if include_unmatched and (~matched).any():
        top = plain[q[~matched], plain[~matched].argmax(axis=1)]
        weight[~matched] = focal_weight(top, 0, alpha, gamma)
    return ops.sum(Tensor(-weight) * cross)


def mqd_loss(
    student_logits: Tensor,
    teacher_logits: Tensor | ArrayLike,
    gt_matches: NDArray[np.int64],
    temperature: float = 1.0,
    alpha: float = 0.25,
    gamma: float = 2.0,
    include_unmatched: bool = False,
) -> Tensor:
    """Mean over all row and column query distributions of the focal-weighted cross term.

    Each distribution carrying a ground-truth match contributes
    ``-FL(p_S) * sum_k p_S^T(k) log p_T^T(k)``; the others contribute 0 unless
    ``include_unmatched`` is set, in which case they enter with ``y = 0`` at
    their argmax.
    """
    teacher = _constant(teacher_logits)
    if teacher.shape != student_logits.shape or student_logits.ndim != 2:
        raise ContractError(
            f"teacher logits {teacher.shape} do not match student logits {student_logits.shape}"
        )
    rows, cols = student_logits.shape
    gt = np.asarray(gt_matches, dtype=np.int64).reshape(-1, 2)
    row_gt = np.full(rows, -1, dtype=np.int64)
    col_gt = np.full(cols, -1, dtype=np.int64)
    row_gt[gt[:, 0]] = gt[:, 1]
    col_gt[gt[:, 1]] = gt[:, 0]
    args = (temperature, alpha, gamma, include_unmatched)
    total = _query_term(student_logits, teacher, row_gt, 1, *args) + _query_term(
        student_logits, teacher, col_gt, 0, *args
    )
    return total * (1.0 / (rows + cols))


def attentive_loss(
    student_mu: Tensor, teacher_mu: Tensor | ArrayLike, teacher_var: Tensor | ArrayLike
) -> Tensor:
    """``mean_i |mu_s - mu_t|^2 / (2 sigma_t^2)`` with the teacher side held constant."""
    if student_mu.shape[0] == 0:
        logger.warning("attentive loss received no fine matches")
        return Tensor(0.0)
    mu_t = _constant(teacher_mu).reshape(student_mu.shape)
    var_t = np.maximum(_constant(teacher_var).reshape(-1), VARIANCE_FLOOR)
    sq = ops.sum(ops.square(student_mu - Tensor(mu_t)), axis=1)
    return ops.sum(sq * Tensor(0.5 / var_t)) * (1.0 / student_mu.shape[0])


def gaussian_kl(
    mu_s: ArrayLike, sigma_s: ArrayLike, mu_t: ArrayLike, sigma_t: ArrayLike
) -> Array:
    """``KL(N(mu_s, sigma_s^2) || N(mu_t, sigma_t^2))`` elementwise."""
    ss = np.asarray(sigma_s, dtype=np.float64)
    st = np.asarray(sigma_t, dtype=np.float64)
    if (ss <= 0).any() or (st <= 0).any():
        raise ContractError("gaussian_kl needs positive standard deviations")
    d = np.asarray(mu_s, dtype=np.float64) - np.asarray(mu_t, dtype=np.float64)
    return np.log(st / ss) + (ss * ss + d * d) / (2.0 * st * st) - 0.5


def total_loss(
    role: TrainingRole,
    coarse: Tensor | float,
    fine: Tensor | float,
    mqd: Tensor | float | None = None,
    attentive: Tensor | float | None = None,
    weights: LossWeights | None = None,
) -> Tensor:
    """Weighted sum; distillation terms count only for the student.

    Terms with zero weight or no value are skipped entirely, so a student with
    zero distillation weights evaluates exactly the baseline expression.
    """
    w = weights or LossWeights()
    terms: list[tuple[float, Tensor | float | None]] = [(w.coarse, coarse), (w.fine, fine)]
    if role == "student":
        terms += [(w.mqd, mqd), (w.attentive, attentive)]
    total = Tensor(0.0)
    for weight, term in terms:
        if term is None or weight == 0.0:
            continue
        total = total + (term if isinstance(term, Tensor) else Tensor(term)) * weight
    return total
