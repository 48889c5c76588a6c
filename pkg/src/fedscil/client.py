"""Client-side local fine-tuning for one federated session.

Both trainers clone the distributed global model, then run mini-batch SGD
with two learning-rate groups: the backbone and inherited head columns move
at a small rate, the session's new columns at a large one. When replay is
active, each step draws a fresh class-balanced batch from the synthetic
buffer and forwards it together with the session batch (one train-mode pass,
so batch-norm sees the union batch and a singleton session batch can never
reach the batch statistics).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Optimizer, OptimizerConfig, Tensor, backprop,
                       col_slice, row_slice)
from .errors import ContractError
from .generation import ReplayBuffer
from .losses import (LossWeights, client_loss, cross_entropy,
                     distillation_loss_subset, student_loss)
from .models import Classifier


@dataclass
class ClientConfig:
    epochs: int = 15
    batch_size_new: int = 8
    batch_size_replay: int = 8
    lr_backbone_and_old: float = 1e-4
    lr_new_head: float = 0.1
    momentum: float = 0.9
    replay_loss: str = "subset"  # subset | sliced

    def validate(self) -> None:
        if self.epochs < 1:
            raise ContractError("client.epochs must be >= 1")
        if self.batch_size_new < 1 or self.batch_size_replay < 1:
            raise ContractError("client batch sizes must be >= 1")
        if not (0 <= self.lr_backbone_and_old <= self.lr_new_head):
            raise ContractError("need 0 <= lr_backbone_and_old <= lr_new_head")
        if self.replay_loss not in ("subset", "sliced"):
            raise ContractError(f"unknown replay_loss {self.replay_loss!r}")


def _epoch_batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches; a trailing singleton is merged into its
    predecessor so train-mode batch norm never sees one sample."""
    perm = rng.permutation(n)
    batches = [perm[i:i + size] for i in range(0, n, size)]
    if len(batches) > 1 and batches[-1].shape[0] == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _optimizer(model: Classifier, cfg: ClientConfig) -> Optimizer:
    rates = {"backbone": cfg.lr_backbone_and_old,
             "head_old": cfg.lr_backbone_and_old,
             "head_new": cfg.lr_new_head}
    return Optimizer(model.parameters(),
                     OptimizerConfig("sgd_momentum", rates, momentum=cfg.momentum))


def _run_local(model_in: Classifier, x: np.ndarray, y: np.ndarray,
               buffer: ReplayBuffer | None, cfg: ClientConfig,
               weights: LossWeights, seed: int, loss_fn) -> tuple[Classifier, int]:
    """Shared loop. loss_fn(new_logits, new_labels, replay_logits,
    replay_labels, replay_x) -> scalar; replay args are None when k == 0."""
    cfg.validate()
    model = model_in.clone()
    n = int(y.shape[0])
    if n == 0:
        return model, 0
    use_replay = weights.k > 0.0
    if use_replay and (buffer is None or len(buffer) == 0):
        raise ContractError("replay requested but the buffer is empty")
    opt = _optimizer(model, cfg)
    params = model.parameters()
    rng = np.random.default_rng(seed)
    for _ in range(cfg.epochs):
        for batch in _epoch_batches(n, cfg.batch_size_new, rng):
            xb, yb = x[batch], y[batch]
            nb = xb.shape[0]
            if use_replay:
                xr, yr = buffer.sample(cfg.batch_size_replay, rng)
                joint = model.forward(np.concatenate([xb, xr]), mode="train")
                loss = loss_fn(row_slice(joint, 0, nb), yb,
                               row_slice(joint, nb, nb + xr.shape[0]), yr, xr)
            else:
                mode = "train" if nb >= 2 else "eval"
                loss = loss_fn(model.forward(xb, mode=mode), yb, None, None, None)
            backprop(loss, params)
            opt.step()
    return model, n


def local_update_nagr(model: Classifier, x: np.ndarray, y: np.ndarray,
                      buffer: ReplayBuffer | None, weights: LossWeights,
                      cfg: ClientConfig, old_count: int,
                      seed: int) -> tuple[Classifier, int]:
    """Local update with noise-aware replay: CE on the session batch plus
    k * (alpha CE + beta RCE) on pseudo-labeled synthetic replay.

    An empty shard returns the model unchanged with count 0.
    """

    def loss_fn(new_logits, new_labels, replay_logits, replay_labels, _xr):
        return client_loss(new_logits, new_labels, replay_logits, replay_labels,
                           weights, old_count, cfg.replay_loss)

    return _run_local(model, x, y, buffer, cfg, weights, seed, loss_fn)


def local_update_baseline_kd(model: Classifier, prev_model: Classifier,
                             x: np.ndarray, y: np.ndarray,
                             buffer: ReplayBuffer | None, weights: LossWeights,
                             cfg: ClientConfig, old_count: int,
                             seed: int) -> tuple[Classifier, int]:
    """Baseline local update: CE on the session batch plus k * KL from the
    frozen previous global model on the replay batch's old-class entries.

    The old-class entries follow cfg.replay_loss: in subset mode they come
    from the full-head softmax (mass leaking to new columns raises the
    divergence), in sliced mode from a renormalized old-slice softmax. With
    k == 0 the replay stream is never drawn, so the trajectory is
    bit-identical to local_update_nagr under the same seed.
    """
    if prev_model.classes_seen != old_count:
        raise ContractError("previous global model must cover the old classes")

    def loss_fn(new_logits, new_labels, replay_logits, replay_labels, xr):
        loss = cross_entropy(new_logits, new_labels)
        if replay_logits is None:
            return loss
        teacher = prev_model.forward(Tensor(xr), mode="eval").detach()
        if cfg.replay_loss == "subset":
            kd = distillation_loss_subset(teacher, replay_logits, old_count,
                                          weights.kl_temperature)
        else:
            kd = student_loss(teacher, col_slice(replay_logits, 0, old_count),
                              weights.kl_temperature)
        return loss + weights.k * kd

    return _run_local(model, x, y, buffer, cfg, weights, seed, loss_fn)
