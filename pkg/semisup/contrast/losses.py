"""
The three training loss terms and their weighted combination.

Each loss has a graph form, which records onto a `Tape` so the trainer can
differentiate it, and a plain form returning a float. The plain forms build a
throwaway tape, so both paths share one implementation.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from semisup.contrast.diffcore import Tape
from semisup.contrast.exc import ConfigurationError, ContractError, DomainError, ShapeError
from semisup.contrast.numerics import DEFAULT_EPS, Tensor, as_tensor

ROW_SUM_TOLERANCE = 1e-9

Weights = Tuple[float, float, float]


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    feature_contrast: float
    semantic_contrast: float
    total: float
    weights: Weights = (1.0, 1.0, 1.0)


def _check_temperature(name: str, value: float):
    if not value > 0:
        raise DomainError("{} must be > 0, got {}".format(name, value))


def _check_pair(tape: Tape, a: int, b: int, what: str):
    sa, sb = tape.value(a).shape, tape.value(b).shape
    if len(sa) != 2 or sa != sb:
        raise ShapeError("{}: views have shapes {} and {}".format(what, sa, sb))
    if sa[0] == 0:
        raise ShapeError("{}: empty batch".format(what))


def info_nce(tape: Tape, a: int, b: int, temperature: float, normalize: bool) -> int:
    """
    -(1/n) sum_i log softmax_j(a_i . b_j / temperature)[i]

    Row i of b is the positive for row i of a; the denominator runs over all
    rows of b including the positive.
    """
    if normalize:
        a = tape.l2_normalize_rows(a)
        b = tape.l2_normalize_rows(b)
    logits = tape.matmul(a, tape.transpose(b))
    log_p = tape.log_row_softmax(logits, temperature)
    n = tape.value(logits).shape[0]
    positives = tape.sum(tape.mul(log_p, tape.constant(np.eye(n))))
    return tape.scale(positives, -1.0 / n)


def feature_contrast(
    tape: Tape, z: int, z_aug: int, tau_f: float, normalize: bool = True
) -> int:
    _check_temperature("tau_f", tau_f)
    _check_pair(tape, z, z_aug, "feature contrast")
    return info_nce(tape, z, z_aug, tau_f, normalize)


def semantic_contrast(
    tape: Tape, q: int, q_aug: int, tau_s: float, normalize: bool = True
) -> int:
    """
    InfoNCE over class columns: column k of q (the probability of class k across
    the batch) is contrasted against every column of q_aug.
    """
    _check_temperature("tau_s", tau_s)
    _check_pair(tape, q, q_aug, "semantic contrast")
    for node in (q, q_aug):
        drift = np.max(np.abs(tape.value(node).sum(axis=1) - 1.0))
        if drift > ROW_SUM_TOLERANCE:
            raise ContractError(
                "semantic contrast: rows are not distributions (max |sum-1| = {:.3e})".format(
                    drift
                )
            )
    return info_nce(tape, tape.transpose(q), tape.transpose(q_aug), tau_s, normalize)


def cross_entropy(
    tape: Tape, q: int, labels: Sequence[int], eps: float = DEFAULT_EPS
) -> int:
    """
    -(1/m) sum_i log(q[i, labels[i]] + eps) over the first m = len(labels) rows.

    Rows of q past m (unlabeled samples) get zero weight.
    """
    labels = np.asarray(labels, dtype=np.int64)
    values = tape.value(q)
    m = len(labels)
    if m == 0:
        raise ContractError("cross entropy needs at least one labeled row")
    if m > values.shape[0]:
        raise ShapeError(
            "cross entropy: {} labels for {} rows".format(m, values.shape[0])
        )
    c = values.shape[1]
    if labels.min() < 0 or labels.max() >= c:
        raise DomainError("labels must lie in [0, {}), got {}".format(c, labels))
    mask = np.zeros_like(values)
    mask[np.arange(m), labels] = 1.0
    picked = tape.sum(tape.mul(tape.log(q, eps), tape.constant(mask)))
    return tape.scale(picked, -1.0 / m)


def _check_weights(weights: Weights):
    if len(weights) != 3:
        raise ConfigurationError("expected 3 loss weights, got {}".format(weights))
    if any(w < 0 for w in weights):
        raise ConfigurationError("loss weights must be non-negative, got {}".format(weights))


def weighted_total(
    tape: Tape,
    ce: Optional[int],
    lz: Optional[int],
    lq: Optional[int],
    weights: Weights = (1.0, 1.0, 1.0),
) -> int:
    """
    Graph form of the total loss. Terms passed as None (ablated) are skipped.
    """
    _check_weights(weights)
    total = None
    for node, w in zip((ce, lz, lq), weights):
        if node is None or w == 0:
            continue
        term = tape.scale(node, w)
        total = term if total is None else tape.add(total, term)
    if total is None:
        total = tape.constant(np.array(0.0))
    return total


def _scalar(tape: Tape, node: int) -> float:
    return float(tape.value(node))


def feature_contrast_loss(
    z: Tensor, z_aug: Tensor, tau_f: float = 0.5, normalize: bool = True
) -> float:
    tape = Tape()
    return _scalar(
        tape,
        feature_contrast(
            tape, tape.constant(as_tensor(z)), tape.constant(as_tensor(z_aug)), tau_f, normalize
        ),
    )


def semantic_contrast_loss(
    q: Tensor, q_aug: Tensor, tau_s: float = 0.9, normalize: bool = True
) -> float:
    tape = Tape()
    return _scalar(
        tape,
        semantic_contrast(
            tape, tape.constant(as_tensor(q)), tape.constant(as_tensor(q_aug)), tau_s, normalize
        ),
    )


def cross_entropy_loss(q: Tensor, labels: Sequence[int]) -> float:
    tape = Tape()
    return _scalar(tape, cross_entropy(tape, tape.constant(as_tensor(q)), labels))


def total_loss(
    ce: float, lz: float, lq: float, weights: Weights = (1.0, 1.0, 1.0)
) -> LossBreakdown:
    """
    Weighted sum w_ce*ce + w_z*lz + w_q*lq; unit weights give the plain sum.
    """
    _check_weights(weights)
    if not all(np.isfinite(v) for v in (ce, lz, lq)):
        raise ContractError("loss components must be finite: {}".format((ce, lz, lq)))
    w_ce, w_z, w_q = (float(w) for w in weights)
    return LossBreakdown(
        ce=float(ce),
        feature_contrast=float(lz),
        semantic_contrast=float(lq),
        total=w_ce * ce + w_z * lz + w_q * lq,
        weights=(w_ce, w_z, w_q),
    )
