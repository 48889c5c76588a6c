"""Small fully connected models: a classifier whose final layer grows by
session, a label-conditioned generator, and the student used during
generator training."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .autodiff import (Array, BatchNormState, Parameter, Tensor,
                       batchnorm_forward, col_slice, concat, matmul, one_hot)
from .errors import ContractError


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> Array:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, prefix: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, group: str = "backbone"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(f"{prefix}.weight",
                                Tensor(_uniform_init(rng, in_dim, (in_dim, out_dim))),
                                group)
        self.bias = Parameter(f"{prefix}.bias",
                              Tensor(_uniform_init(rng, in_dim, (out_dim,))),
                              group)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight.value) + self.bias.value

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def set_group(self, group: str) -> None:
        self.weight.group = group
        self.bias.group = group


class BatchNorm:
    def __init__(self, prefix: str, channels: int,
                 momentum: float = 0.1, epsilon: float = 1e-5):
        self.prefix = prefix
        self.gamma = Parameter(f"{prefix}.gamma", Tensor(np.ones(channels)), "backbone")
        self.beta = Parameter(f"{prefix}.beta", Tensor(np.zeros(channels)), "backbone")
        self.state = BatchNormState(np.zeros(channels), np.ones(channels),
                                    momentum, epsilon)

    def __call__(self, x: Tensor, mode: str,
                 update_running: bool = True) -> tuple[Tensor, Tensor, Tensor]:
        return batchnorm_forward(x, self.gamma.value, self.beta.value,
                                 self.state, mode, update_running)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def stat_entries(self) -> list[tuple[str, Array, str]]:
        return [(f"{self.prefix}.running_mean", self.state.running_mean, "bn_stats"),
                (f"{self.prefix}.running_var", self.state.running_var, "bn_stats")]


class _Backbone:
    """fc -> bn -> relu, twice; produces feature vectors."""

    def __init__(self, in_dim: int, hidden: int, feature_dim: int,
                 rng: np.random.Generator, prefix: str = "backbone"):
        self.in_dim = in_dim
        self.feature_dim = feature_dim
        self.fc1 = Linear(f"{prefix}.fc1", in_dim, hidden, rng)
        self.bn1 = BatchNorm(f"{prefix}.bn1", hidden)
        self.fc2 = Linear(f"{prefix}.fc2", hidden, feature_dim, rng)
        self.bn2 = BatchNorm(f"{prefix}.bn2", feature_dim)

    def forward(self, x: Tensor, mode: str, update_running: bool,
                stats: list | None) -> Tensor:
        h = x
        for fc, bn in ((self.fc1, self.bn1), (self.fc2, self.bn2)):
            h, mu, var = bn(fc(h), mode, update_running)
            if stats is not None:
                stats.append((mu, var))
            h = h.relu()
        return h

    def layers(self) -> list[BatchNorm]:
        return [self.bn1, self.bn2]

    def parameters(self) -> list[Parameter]:
        return (self.fc1.parameters() + self.bn1.parameters()
                + self.fc2.parameters() + self.bn2.parameters())


@dataclass
class HeadBlock:
    session: int
    linear: Linear


class Classifier:
    """Backbone plus a final layer whose columns are grouped by session.

    Inherited blocks carry the ``head_old`` group tag, the block added for
    the current session carries ``head_new``; ``expand_head`` retags before
    appending. Column index equals class id under the schedule's remapping.
    """

    def __init__(self, in_dim: int, base_classes: int, seed: int,
                 hidden: int = 64, feature_dim: int = 64):
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.backbone = _Backbone(in_dim, hidden, feature_dim, rng)
        self.head_blocks: list[HeadBlock] = []
        if base_classes > 0:
            self.head_blocks.append(HeadBlock(
                0, Linear("head.s0", feature_dim, base_classes, rng, "head_new")))

    @property
    def in_dim(self) -> int:
        return self.backbone.in_dim

    @property
    def feature_dim(self) -> int:
        return self.backbone.feature_dim

    @property
    def classes_seen(self) -> int:
        return sum(b.linear.out_dim for b in self.head_blocks)

    @property
    def session_map(self) -> dict[int, tuple[int, int]]:
        out, lo = {}, 0
        for block in self.head_blocks:
            out[block.session] = (lo, lo + block.linear.out_dim)
            lo += block.linear.out_dim
        return out

    def forward(self, x: Tensor | Array, mode: str = "eval",
                capture_bn: bool = False, update_running: bool | None = None):
        """Logits over every class seen; optionally also the per-layer batch
        statistics of the backbone's batch-norm inputs."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ContractError(
                f"expected input of shape (batch, {self.in_dim}), got {x.shape}")
        if update_running is None:
            update_running = mode == "train"
        stats: list | None = [] if capture_bn else None
        h = self.backbone.forward(x, mode, update_running, stats)
        logits = concat([block.linear(h) for block in self.head_blocks], axis=1)
        if capture_bn:
            return logits, stats
        return logits

    def logits_slice(self, logits: Tensor, session: int) -> Tensor:
        """The columns added in the given session."""
        try:
            lo, hi = self.session_map[session]
        except KeyError:
            raise ContractError(f"model has no head block for session {session}")
        return col_slice(logits, lo, hi)

    def expand_head(self, session: int, classes: int, seed: int) -> None:
        """Append a block of freshly initialized columns for a new session.

        Existing blocks are retagged head_old. Expanding by zero classes
        leaves the model unchanged.
        """
        if classes < 0:
            raise ContractError("cannot expand by a negative class count")
        if classes == 0:
            return
        if self.head_blocks and session <= self.head_blocks[-1].session:
            raise ContractError(f"session {session} already present in head")
        for block in self.head_blocks:
            block.linear.set_group("head_old")
        rng = np.random.default_rng(seed)
        self.head_blocks.append(HeadBlock(
            session, Linear(f"head.s{session}", self.feature_dim, classes,
                            rng, "head_new")))

    def parameters(self) -> list[Parameter]:
        out = self.backbone.parameters()
        for block in self.head_blocks:
            out.extend(block.linear.parameters())
        return out

    def bn_layers(self) -> list[BatchNorm]:
        return self.backbone.layers()

    def bn_running_stats(self) -> list[tuple[Array, Array]]:
        return [(bn.state.running_mean, bn.state.running_var)
                for bn in self.bn_layers()]

    def state_entries(self) -> list[tuple[str, Array, str]]:
        entries = [(p.name, p.value.data, p.group) for p in self.parameters()]
        for bn in self.bn_layers():
            entries.extend(bn.stat_entries())
        return entries

    def load_state(self, arrays: dict[str, Array]) -> None:
        expected = {name for name, _, _ in self.state_entries()}
        if expected != set(arrays):
            missing = sorted(expected - set(arrays))
            extra = sorted(set(arrays) - expected)
            raise ContractError(f"state mismatch; missing={missing} extra={extra}")
        for p in self.parameters():
            if p.value.data.shape != arrays[p.name].shape:
                raise ContractError(f"shape mismatch for {p.name}")
            p.value.data = arrays[p.name].copy()
        for bn in self.bn_layers():
            bn.state.running_mean = arrays[f"{bn.prefix}.running_mean"].copy()
            bn.state.running_var = arrays[f"{bn.prefix}.running_var"].copy()

    def arch(self) -> dict:
        return {
            "kind": "classifier",
            "in_dim": self.in_dim,
            "hidden": self.hidden,
            "feature_dim": self.feature_dim,
            "head": [[b.session, b.linear.out_dim] for b in self.head_blocks],
            "groups": {p.name: p.group for p in self.parameters()},
            "session_map": {str(s): list(v) for s, v in self.session_map.items()},
        }

    @classmethod
    def from_arch(cls, arch: dict) -> "Classifier":
        model = cls(arch["in_dim"], 0, seed=0, hidden=arch["hidden"],
                    feature_dim=arch["feature_dim"])
        rng = np.random.default_rng(0)
        for session, width in arch["head"]:
            model.head_blocks.append(HeadBlock(
                session, Linear(f"head.s{session}", model.feature_dim, width, rng)))
        for p in model.parameters():
            p.group = arch["groups"][p.name]
        return model

    def clone(self) -> "Classifier":
        """Independent deep copy; training the copy never touches the original."""
        return copy.deepcopy(self)


class ConditionalGenerator:
    """Maps (noise, one-hot label) to a sample inside the data envelope.

    The output activation is tanh rescaled per dimension to [low, high], so
    synthetic samples always live in the training data's value range.
    """

    def __init__(self, noise_dim: int, classes: int, out_low: Array,
                 out_high: Array, seed: int, hidden: int = 64):
        if classes < 1:
            raise ContractError("generator needs at least one class")
        rng = np.random.default_rng(seed)
        out_low = np.asarray(out_low, dtype=np.float64)
        out_high = np.asarray(out_high, dtype=np.float64)
        if out_low.shape != out_high.shape or np.any(out_high < out_low):
            raise ContractError("invalid output envelope")
        self.noise_dim = noise_dim
        self.classes = classes
        self.out_dim = out_low.shape[0]
        self.hidden = hidden
        self._mid = (out_high + out_low) / 2.0
        self._half = (out_high - out_low) / 2.0
        in_dim = noise_dim + classes
        self.fc1 = Linear("gen.fc1", in_dim, hidden, rng)
        self.bn1 = BatchNorm("gen.bn1", hidden)
        self.fc2 = Linear("gen.fc2", hidden, hidden, rng)
        self.bn2 = BatchNorm("gen.bn2", hidden)
        self.out = Linear("gen.out", hidden, self.out_dim, rng)

    def forward(self, z: Tensor | Array, labels: Array, mode: str = "train") -> Tensor:
        if not isinstance(z, Tensor):
            z = Tensor(z)
        if z.ndim != 2 or z.shape[1] != self.noise_dim:
            raise ContractError(f"expected noise of shape (batch, {self.noise_dim})")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.classes):
            raise ContractError(f"condition label outside [0, {self.classes})")
        h = concat([z, one_hot(labels, self.classes)], axis=1)
        for fc, bn in ((self.fc1, self.bn1), (self.fc2, self.bn2)):
            h, _, _ = bn(fc(h), mode)
            h = h.relu()
        raw = self.out(h).tanh()
        return raw * Tensor(self._half) + Tensor(self._mid)

    def parameters(self) -> list[Parameter]:
        return (self.fc1.parameters() + self.bn1.parameters()
                + self.fc2.parameters() + self.bn2.parameters()
                + self.out.parameters())

    def clone(self) -> "ConditionalGenerator":
        return copy.deepcopy(self)


def make_student(in_dim: int, classes: int, session: int, seed: int,
                 hidden: int = 64, feature_dim: int = 64) -> Classifier:
    """Fresh classifier of the same family, head sized to one session."""
    student = Classifier(in_dim, 0, seed=seed, hidden=hidden, feature_dim=feature_dim)
    rng = np.random.default_rng(np.random.default_rng(seed).integers(2**63))
    student.head_blocks.append(HeadBlock(
        session, Linear(f"head.s{session}", feature_dim, classes, rng, "head_new")))
    return student
