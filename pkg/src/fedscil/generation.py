"""Data-free synthesis of replay samples for completed sessions.

Per session the server trains a label-conditioned generator against the
frozen session teachers (the initial global model in the base session, the
locally fine-tuned client models afterwards) and, adversarially, a student
that distills from the teachers on the synthetic stream. The generator
minimizes

    lambda1 * fidelity + lambda2 * (-entropy) + lambda3 * bn-stats + lambda4 * (-gated KL)

while the student minimizes plain KL(teacher || student). One batch per epoch
is banked into the session pool; after aggregation the pool is pseudo-labeled
by the new global model and pushed into the replay buffer.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Optimizer, OptimizerConfig, Tensor, backprop, concat
from .errors import BufferGapError, ContractError, EmptyBufferError
from .losses import (LossWeights, bn_stat_loss, generator_entropy_loss,
                     generator_fidelity_loss, generator_total_loss,
                     info_entropy, student_loss, transferability_loss)
from .models import Classifier, ConditionalGenerator, make_student
from .seeding import derive_seed

Array = np.ndarray


@dataclass
class GenLabConfig:
    epochs: int = 100
    rounds_per_epoch: int = 50
    batch_size: int = 64
    noise_dim: int = 16
    hidden: int = 64
    gen_lr: float = 1e-3
    student_lr: float = 0.2
    student_momentum: float = 0.9
    bank_per_epoch: int = 64
    buffer_capacity: int = 200

    def validate(self) -> None:
        if self.epochs < 1 or self.rounds_per_epoch < 1:
            raise ContractError("generator epochs and rounds must be >= 1")
        if self.batch_size < 2 or self.bank_per_epoch < 2:
            raise ContractError("generator batches need >= 2 samples (batch norm)")
        if self.noise_dim < 1 or self.hidden < 1:
            raise ContractError("generator noise_dim and hidden must be >= 1")
        if self.buffer_capacity < 1:
            raise ContractError("buffer_capacity must be >= 1")
        if self.gen_lr <= 0 or self.student_lr < 0:
            raise ContractError("generator rates must be positive (student may be 0)")


@dataclass
class SyntheticPool:
    """The banked synthetic samples of one session."""

    session: int
    class_lo: int
    class_hi: int
    samples: Array
    condition: Array                 # intended class, global id
    pseudo: Array | None = None      # relabeled class, global id

    def __len__(self) -> int:
        return int(self.samples.shape[0])


def teacher_logits(x: Tensor | Array, teachers: list[Classifier],
                   session: int) -> Tensor:
    """Mean over teachers of the session-slice logits.

    One teacher degenerates to its own slice. Gradients flow through to x;
    teacher parameters receive none (they are frozen by construction: only
    generator and student optimizers ever step).
    """
    if not teachers:
        raise ContractError("need at least one teacher")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    total: Tensor | None = None
    for model in teachers:
        part = model.logits_slice(model.forward(x, mode="eval"), session)
        total = part if total is None else total + part
    return total * (1.0 / len(teachers))


def _teacher_forward(x: Tensor, teachers: list[Classifier], session: int):
    """Ensemble slice logits plus each teacher's captured batch statistics."""
    slices, stats = [], []
    for model in teachers:
        logits, layer_stats = model.forward(x, mode="eval", capture_bn=True)
        slices.append(model.logits_slice(logits, session))
        stats.append(layer_stats)
    total = slices[0]
    for part in slices[1:]:
        total = total + part
    return total * (1.0 / len(teachers)), stats


def train_generator_session(teachers: list[Classifier], session: int,
                            class_range: tuple[int, int], envelope: tuple[Array, Array],
                            cfg: GenLabConfig, weights: LossWeights, seed: int,
                            generator: ConditionalGenerator | None = None,
                            student: Classifier | None = None,
                            ) -> tuple[ConditionalGenerator, Classifier, SyntheticPool]:
    """Adversarial generator/student training against frozen teachers.

    Returns the trained pair plus the pool banked this call (one batch per
    epoch). Pass the previous round's generator and student to continue
    training them; the pool is rebuilt from scratch each call.
    """
    cfg.validate()
    weights.validate()
    lo, hi = class_range
    c = hi - lo
    if c < 1:
        raise ContractError("session must introduce at least one class")
    in_dim = teachers[0].in_dim

    if generator is None:
        generator = ConditionalGenerator(cfg.noise_dim, c, envelope[0], envelope[1],
                                         seed=derive_seed(seed, "generator"),
                                         hidden=cfg.hidden)
    if student is None:
        student = make_student(in_dim, c, session,
                               seed=derive_seed(seed, "student"),
                               hidden=teachers[0].hidden,
                               feature_dim=teachers[0].feature_dim)

    gen_opt = Optimizer(generator.parameters(),
                        OptimizerConfig("adam", {"backbone": cfg.gen_lr}))
    stu_rates = {"backbone": cfg.student_lr, "head_new": cfg.student_lr,
                 "head_old": cfg.student_lr}
    stu_opt = Optimizer(student.parameters(),
                        OptimizerConfig("sgd_momentum", stu_rates,
                                        momentum=cfg.student_momentum))

    running = [model.bn_running_stats() for model in teachers]
    rng = np.random.default_rng(derive_seed(seed, "draws"))
    banked_x, banked_y = [], []
    temperature = weights.kl_temperature

    for _ in range(cfg.epochs):
        for _ in range(cfg.rounds_per_epoch):
            z = rng.standard_normal((cfg.batch_size, cfg.noise_dim))
            labels = rng.integers(0, c, size=cfg.batch_size)

            # generator step; teachers in eval mode, student a frozen opponent
            fake = generator.forward(z, labels, mode="train")
            ensemble, stats = _teacher_forward(fake, teachers, session)
            fidelity = generator_fidelity_loss(ensemble, labels)
            entropy = generator_entropy_loss(ensemble)
            stat_term = (bn_stat_loss(stats, running)
                         if weights.lambda3 != 0 else 0.0)
            if weights.lambda4 != 0:
                opponent = student.forward(fake, mode="eval")
                disagreement = transferability_loss(ensemble, opponent, temperature)
            else:
                disagreement = 0.0
            backprop(generator_total_loss(fidelity, entropy, stat_term,
                                          disagreement, weights),
                     generator.parameters())
            gen_opt.step()

            # student step on the same batch, detached from the generator
            if cfg.student_lr > 0:
                student_logits = student.forward(fake.data, mode="train")
                backprop(student_loss(ensemble.detach(), student_logits,
                                      temperature),
                         student.parameters())
                stu_opt.step()

        z = rng.standard_normal((cfg.bank_per_epoch, cfg.noise_dim))
        labels = rng.integers(0, c, size=cfg.bank_per_epoch)
        banked_x.append(generator.forward(z, labels, mode="train").data)
        banked_y.append(labels + lo)

    pool = SyntheticPool(session, lo, hi, np.concatenate(banked_x),
                         np.concatenate(banked_y).astype(np.int64))
    return generator, student, pool


def relabel(pool: SyntheticPool, model: Classifier) -> SyntheticPool:
    """Pseudo-label the pool by the model's session-slice argmax.

    Samples whose pseudo-label disagrees with their condition are kept; they
    are the hard examples. Relabeling twice with the same model is a no-op.
    """
    logits = model.logits_slice(model.forward(pool.samples, mode="eval"),
                                pool.session)
    pseudo = logits.data.argmax(axis=1) + pool.class_lo
    return SyntheticPool(pool.session, pool.class_lo, pool.class_hi,
                         pool.samples, pool.condition, pseudo.astype(np.int64))


class ReplayBuffer:
    """Per-class FIFO store of pseudo-labeled synthetic samples.

    Entries are keyed by pseudo-label; the condition label and origin session
    ride along as metadata. ``label_noise`` is an evaluation knob: with
    probability p an incoming pseudo-label is flipped uniformly to another
    class of its session before storage.
    """

    def __init__(self, capacity_per_class: int = 200, label_noise: float = 0.0):
        if capacity_per_class < 1:
            raise ContractError("capacity_per_class must be >= 1")
        if not (0.0 <= label_noise < 1.0):
            raise ContractError("label_noise must be in [0, 1)")
        self.capacity_per_class = capacity_per_class
        self.label_noise = label_noise
        self._store: dict[int, list[tuple[Array, int, int]]] = {}

    def __len__(self) -> int:
        return sum(len(v) for v in self._store.values())

    def classes(self) -> list[int]:
        return sorted(c for c, v in self._store.items() if v)

    def per_class_counts(self) -> dict[int, int]:
        return {c: len(v) for c, v in sorted(self._store.items())}

    def add_pool(self, pool: SyntheticPool, rng: np.random.Generator) -> None:
        if pool.pseudo is None:
            raise ContractError("pool must be relabeled before buffering")
        span = pool.class_hi - pool.class_lo
        for i in range(len(pool)):
            label = int(pool.pseudo[i])
            if not (pool.class_lo <= label < pool.class_hi):
                raise ContractError("pseudo-label outside the pool's session range")
            if self.label_noise > 0.0 and span > 1 and rng.random() < self.label_noise:
                shift = int(rng.integers(1, span))
                label = pool.class_lo + (label - pool.class_lo + shift) % span
            slot = self._store.setdefault(label, [])
            slot.append((pool.samples[i], int(pool.condition[i]), pool.session))
            if len(slot) > self.capacity_per_class:
                slot.pop(0)  # oldest out

    def require(self, classes: range) -> None:
        for c in classes:
            if not self._store.get(c):
                raise BufferGapError(f"replay buffer has no samples for class {c}")

    def sample(self, count: int, rng: np.random.Generator) -> tuple[Array, Array]:
        """Class-balanced draw with replacement across every stored class."""
        present = self.classes()
        if not present:
            raise EmptyBufferError("replay buffer is empty")
        base, extra = divmod(count, len(present))
        bonus = set(rng.permutation(len(present))[:extra].tolist())
        xs, ys = [], []
        for slot_index, c in enumerate(present):
            want = base + (1 if slot_index in bonus else 0)
            if want == 0:
                continue
            entries = self._store[c]
            picks = rng.integers(0, len(entries), size=want)
            xs.extend(entries[j][0] for j in picks)
            ys.extend([c] * want)
        x = np.stack(xs)
        y = np.asarray(ys, dtype=np.int64)
        order = rng.permutation(y.shape[0])
        return x[order], y[order]

    def export_rows(self) -> list[tuple]:
        rows = []
        for c in self.classes():
            for sample, condition, session in self._store[c]:
                rows.append((sample, condition, c, session))
        return rows


def replay_sample(buffer: ReplayBuffer, count: int,
                  seed: int | np.random.Generator) -> tuple[Array, Array]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return buffer.sample(count, rng)


def export_synthetics_csv(path, rows) -> None:
    """Rows of (sample, condition_label, pseudo_label, session)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for sample, condition, pseudo, session in rows:
            writer.writerow([repr(float(v)) for v in sample]
                            + [int(condition), int(pseudo), int(session)])


def pool_rows(pool: SyntheticPool) -> list[tuple]:
    pseudo = pool.pseudo if pool.pseudo is not None else pool.condition
    return [(pool.samples[i], int(pool.condition[i]), int(pseudo[i]), pool.session)
            for i in range(len(pool))]


def teacher_confidence(teachers: list[Classifier], session: int,
                       pool: SyntheticPool) -> float:
    """Mean ensemble softmax probability of each sample's condition class."""
    logits = teacher_logits(pool.samples, teachers, session)
    probs = logits.softmax().data
    local = pool.condition - pool.class_lo
    return float(probs[np.arange(len(pool)), local].mean())


def teacher_pool_entropy(teachers: list[Classifier], session: int,
                         pool: SyntheticPool) -> float:
    """Mean scaled prediction entropy of the ensemble over the pool."""
    logits = teacher_logits(pool.samples, teachers, session)
    return float(info_entropy(logits.softmax()).data)
