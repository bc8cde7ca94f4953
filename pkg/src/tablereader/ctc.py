"""Connectionist temporal classification.

The garbage symbol of the alphabets doubles as the CTC blank.  The
sequence probability is the exact sum over all frame paths that collapse
(adjacent repeats removed, then blanks removed) to the labels; it is
computed in log space by the usual forward recursion over the
blank-interleaved label sequence, and the loss gradient with respect to
the pre-softmax logits comes from forward-backward occupancies.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels

LOG_FLOOR = _kernels.LOG_FLOOR


def interleave_blanks(labels, blank: int) -> np.ndarray:
    """(blank, l1, blank, l2, ..., lL, blank); length 2L+1."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.size < 1:
        raise ValueError("labels must be a non-empty 1-D sequence")
    if (labels == blank).any():
        raise ValueError("labels must not contain the blank symbol")
    ext = np.full(2 * labels.size + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels) -> int:
    """Shortest output length that can emit the sequence: one frame per
    label plus one separating blank per adjacent repeat."""
    labels = np.asarray(labels, dtype=np.int64)
    repeats = int(np.sum(labels[1:] == labels[:-1])) if labels.size > 1 else 0
    return labels.size + repeats


def is_feasible(timesteps: int, labels) -> bool:
    return timesteps >= min_frames(labels)


def _as_probs(m) -> np.ndarray:
    probs = getattr(m, "probs", m)
    return np.asarray(probs, dtype=np.float64)


def ctc_neg_log_prob(m, labels, blank: int | None = None) -> float:
    """-ln of the total path probability of `labels` under the output
    matrix (alphabet, T).  Infeasible sequences get +inf, not an error.
    The blank defaults to the last row."""
    probs = _as_probs(m)
    labels = np.asarray(labels, dtype=np.int64)
    if blank is None:
        blank = probs.shape[0] - 1
    if not is_feasible(probs.shape[1], labels):
        return float("inf")
    ext = interleave_blanks(labels, blank)
    logp = np.log(np.maximum(probs, 1e-300))
    _, loglik = _kernels.ctc_alphas(logp, ext, blank)
    if loglik <= LOG_FLOOR * 0.5:
        return float("inf")
    return -float(loglik)


@dataclass
class CtcResult:
    neg_log_prob: float
    d_logits: np.ndarray  # gradient of -ln p w.r.t. the pre-softmax logits
    feasible: bool


def ctc_gradient(m, labels, blank: int | None = None) -> CtcResult:
    """Loss value and its gradient with respect to the pre-softmax
    logits: grad[k,t] = y[k,t] - occupancy[k,t].  Infeasible sequences
    yield infinite loss, zero gradient, and feasible=False."""
    probs = _as_probs(m)
    labels = np.asarray(labels, dtype=np.int64)
    K, T = probs.shape
    if blank is None:
        blank = K - 1
    if not is_feasible(T, labels):
        return CtcResult(float("inf"), np.zeros((K, T)), False)
    ext = interleave_blanks(labels, blank)
    logp = np.log(np.maximum(probs, 1e-300))
    la, loglik = _kernels.ctc_alphas(logp, ext, blank)
    if loglik <= LOG_FLOOR * 0.5:
        return CtcResult(float("inf"), np.zeros((K, T)), False)
    lb = _kernels.ctc_betas(logp, ext, blank)
    # alpha+beta includes each frame's emission exactly once, so the
    # per-frame sums all equal the sequence log-probability
    occ = np.exp(np.maximum(la + lb - loglik, LOG_FLOOR))
    gamma = np.zeros((K, T))
    np.add.at(gamma, ext, occ)
    grad = probs - gamma
    return CtcResult(-float(loglik), grad, True)
