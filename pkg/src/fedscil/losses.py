"""Every training objective in the simulator, composed from autodiff ops.

All losses are batch means and return scalar graph tensors. Conventions:

- cross_entropy(logits, y)        = mean_i -log softmax(logits)_[i, y_i]
- reverse_cross_entropy(p, y)     = mean_i -(sum_c p_ic * log onehot(y_i)_c)
  with log 0 := log_zero (default -4), which reduces to -log_zero * (1 - p_iy).
- KL terms are computed between softmax distributions at a configurable
  temperature (default 1), teacher distribution first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Array, Tensor, col_slice, gather_rows, l2_norm, one_hot
from .errors import ContractError


@dataclass
class LossWeights:
    """Scalar knobs shared by client training and generator training."""

    alpha: float = 1.0       # weight of the forward CE term on replay data
    beta: float = 1.0        # weight of the reverse CE term on replay data
    k: float = 1.0           # replay loss weight inside the client objective
    lambda1: float = 1.0     # generator: fidelity
    lambda2: float = 1.0     # generator: prediction entropy
    lambda3: float = 1.0     # generator: batch-norm statistics matching
    lambda4: float = 1.0     # generator: teacher-student disagreement
    rce_log_zero: float = -4.0
    kl_temperature: float = 1.0

    def validate(self) -> None:
        for name in ("alpha", "beta", "k", "lambda1", "lambda2", "lambda3", "lambda4"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ContractError(f"weights.{name} must be finite and >= 0")
        if not np.isfinite(self.rce_log_zero) or self.rce_log_zero >= 0:
            raise ContractError("weights.rce_log_zero must be finite and < 0")
        if not (self.kl_temperature > 0):
            raise ContractError("weights.kl_temperature must be > 0")


def _check_batch(logits: Tensor, labels: Array) -> Array:
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ContractError("loss expects a nonempty (batch, classes) tensor")
    if labels.shape != (logits.shape[0],):
        raise ContractError("labels must be 1-d, one per row")
    return labels


def cross_entropy(logits: Tensor, labels: Array) -> Tensor:
    labels = _check_batch(logits, labels)
    p_y = gather_rows(logits.softmax(), labels)
    return -(p_y.log().mean())


def reverse_cross_entropy(probs: Tensor, labels: Array,
                          log_zero: float = -4.0) -> Tensor:
    """-mean_i sum_c p_ic log onehot(y_i)_c with log 0 := log_zero.

    Rows of ``probs`` must sum to 1; per sample the value is
    -log_zero * (1 - p_y).
    """
    labels = _check_batch(probs, labels)
    log_hot = log_zero * (1.0 - one_hot(labels, probs.shape[1]).data)
    per_sample = (probs * Tensor(log_hot)).sum(axis=1)
    return -(per_sample.mean())


def noise_robust_loss(logits: Tensor, labels: Array, alpha: float, beta: float,
                      log_zero: float = -4.0) -> Tensor:
    """alpha * CE + beta * RCE over the softmax of the given logits.

    Callers replaying against the inherited classes pass the old-class slice
    of the head; with alpha=1, beta=0 this is exactly cross_entropy on that
    slice.
    """
    ce = cross_entropy(logits, labels)
    rce = reverse_cross_entropy(logits.softmax(), labels, log_zero)
    return alpha * ce + beta * rce


def replay_loss_subset(full_logits: Tensor, labels: Array, old_count: int,
                       alpha: float, beta: float,
                       log_zero: float = -4.0) -> Tensor:
    """CE + RCE on old-class targets under the full-head softmax.

    Unlike :func:`noise_robust_loss` on a slice, the distribution here is the
    softmax over every seen class, so the replay gradient also pushes new-class
    logits down on old-class samples: the CE pulls p_y toward 1 and the RCE
    term -log_zero * (1 - p_y) counts any mass off the target, new columns
    included. The two coincide while the head has no new columns.
    """
    labels = _check_batch(full_logits, labels)
    if not (0 < old_count <= full_logits.shape[1]):
        raise ContractError("old_count outside the head's width")
    if labels.size and labels.max() >= old_count:
        raise ContractError("replay label outside the old-class range")
    p = full_logits.softmax()
    p_y = gather_rows(col_slice(p, 0, old_count), labels)
    ce = -(p_y.log().mean())
    rce = -((log_zero * (1.0 - p_y)).mean())
    return alpha * ce + beta * rce


def client_loss(new_logits: Tensor, new_labels: Array,
                replay_logits: Tensor | None, replay_labels: Array | None,
                weights: LossWeights, old_count: int = 0,
                replay_mode: str = "subset") -> Tensor:
    """Local objective: CE on the session's data plus k times the replay term.

    ``replay_logits`` may be None only when k == 0 (no replay drawn).
    """
    loss = cross_entropy(new_logits, new_labels)
    if weights.k == 0.0:
        return loss
    if replay_logits is None or replay_labels is None:
        raise ContractError("replay batch required when k > 0")
    if replay_mode == "subset":
        old = replay_loss_subset(replay_logits, replay_labels, old_count,
                                 weights.alpha, weights.beta, weights.rce_log_zero)
    elif replay_mode == "sliced":
        old = noise_robust_loss(col_slice(replay_logits, 0, old_count),
                                replay_labels, weights.alpha, weights.beta,
                                weights.rce_log_zero)
    else:
        raise ContractError(f"unknown replay_mode {replay_mode!r}")
    return loss + weights.k * old


def info_entropy(probs: Tensor) -> Tensor:
    """Mean over the batch of -(1/c) * sum_c p log p."""
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ContractError("info_entropy expects a nonempty (batch, classes) tensor")
    c = probs.shape[1]
    per_sample = -((probs * probs.log()).sum(axis=1))
    return per_sample.mean() * (1.0 / c)


def generator_fidelity_loss(teacher_logits: Tensor, condition: Array) -> Tensor:
    """CE between the teacher's session-slice prediction and the condition."""
    return cross_entropy(teacher_logits, condition)


def generator_entropy_loss(teacher_logits: Tensor) -> Tensor:
    """Negated prediction entropy: minimizing it favors hard samples."""
    return -info_entropy(teacher_logits.softmax())


def bn_stat_loss(batch_stats: list[list[tuple[Tensor, Tensor]]],
                 running_stats: list[list[tuple[Array, Array]]]) -> Tensor:
    """Mean over teachers of the summed L2 distances between the synthetic
    batch's per-layer statistics and that teacher's running statistics."""
    if len(batch_stats) != len(running_stats) or not batch_stats:
        raise ContractError("need matching, nonempty per-teacher statistics")
    total: Tensor | None = None
    for per_layer, per_layer_running in zip(batch_stats, running_stats):
        if len(per_layer) != len(per_layer_running):
            raise ContractError("teacher layer counts do not match")
        for (mu, var), (r_mu, r_var) in zip(per_layer, per_layer_running):
            term = l2_norm(mu - Tensor(r_mu)) + l2_norm(var - Tensor(r_var))
            total = term if total is None else total + term
    return total * (1.0 / len(batch_stats))


def _kl_rows(p: Tensor, q: Tensor) -> Tensor:
    """Row-wise KL(p || q) for two (b, c) probability tensors."""
    if p.shape != q.shape:
        raise ContractError("KL needs distributions of identical shape")
    return (p * (p.log() - q.log())).sum(axis=1)


def student_loss(teacher_logits: Tensor, student_logits: Tensor,
                 temperature: float = 1.0) -> Tensor:
    """Batch-mean KL(teacher || student) between tempered softmaxes."""
    p = (teacher_logits * (1.0 / temperature)).softmax()
    q = (student_logits * (1.0 / temperature)).softmax()
    return _kl_rows(p, q).mean()


def distillation_loss_subset(teacher_logits: Tensor, full_logits: Tensor,
                             old_count: int, temperature: float = 1.0) -> Tensor:
    """KL from the teacher to the old-class entries of the full-head softmax.

    The student entries come from the softmax over every seen class and sum
    to less than one when new columns take probability mass, so minimizing
    the divergence also pushes new-class logits down on replay samples.
    Coincides with :func:`student_loss` on the old-class slice while the
    head has no new columns.
    """
    if not (0 < old_count <= full_logits.shape[1]):
        raise ContractError("old_count outside the head's width")
    if teacher_logits.shape != (full_logits.shape[0], old_count):
        raise ContractError("teacher must cover exactly the old classes")
    p = (teacher_logits * (1.0 / temperature)).softmax()
    q = col_slice((full_logits * (1.0 / temperature)).softmax(), 0, old_count)
    return (p * (p.log() - q.log())).sum(axis=1).mean()


def transferability_loss(teacher_logits: Tensor, student_logits: Tensor,
                         temperature: float = 1.0) -> Tensor:
    """Negated KL(teacher || student), gated per sample.

    The gate is 1 exactly where the two argmax predictions disagree, so only
    disagreeing samples contribute; minimizing the loss steers the generator
    toward samples the student has not mastered. Equal to the negated,
    gate-masked student_loss by construction.
    """
    gate = (teacher_logits.data.argmax(axis=1)
            != student_logits.data.argmax(axis=1)).astype(np.float64)
    p = (teacher_logits * (1.0 / temperature)).softmax()
    q = (student_logits * (1.0 / temperature)).softmax()
    return -((_kl_rows(p, q) * Tensor(gate)).mean())


def generator_total_loss(fidelity: Tensor | float, entropy: Tensor | float,
                         stats: Tensor | float, disagreement: Tensor | float,
                         weights: LossWeights) -> Tensor:
    """Weighted sum of the four generator terms; weight-0 terms may be 0.0."""
    total = (weights.lambda1 * fidelity + weights.lambda2 * entropy
             + weights.lambda3 * stats + weights.lambda4 * disagreement)
    if not isinstance(total, Tensor):
        total = Tensor(float(total))
    return total
