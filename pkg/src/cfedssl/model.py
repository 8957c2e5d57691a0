"""Lightweight 1D-CNN encoder, projection head, classification head.

Parameters move between training code and federation algebra as a
ParameterSet: an ordered mapping of named float32 arrays grouped by
submodel, supporting elementwise linear combination.

FLOP convention: one multiply-add = 2 FLOPs plus one add per bias element,
conv and linear layers only; pooling/activations are uncounted. Counts are
for one forward pass of one sample through encoder, projector, and
classifier.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError

ENCODER = "encoder"
PROJECTOR = "projector"
CLASSIFIER = "classifier"
GROUPS = (ENCODER, PROJECTOR, CLASSIFIER)


@dataclass(frozen=True)
class ArchitectureSpec:
    input_dim: int = 122
    conv_channels: tuple[int, ...] = (8, 16)
    kernel_size: int = 3
    pool_size: int = 2
    embedding_dim: int = 84
    projection_hidden: int = 84
    projection_dim: int = 32
    projection_bn_count: int = 0
    dropout_rate: float = 0.2
    num_classes: int = 5
    param_budget: int = 55000

    def __post_init__(self):
        if self.projection_bn_count not in (0, 1, 2):
            raise ConfigError("projection_bn_count must be 0, 1, or 2")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.conv_output_len() < 1:
            raise ConfigError("conv stack reduces the input below length 1")

    def conv_output_len(self) -> int:
        length = self.input_dim
        for _ in self.conv_channels:
            length = length // self.pool_size  # conv keeps length (pad k//2)
        return length

    def flat_dim(self) -> int:
        return self.conv_channels[-1] * self.conv_output_len()

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "ArchitectureSpec":
        data = dict(data)
        data["conv_channels"] = tuple(data["conv_channels"])
        return cls(**data)


def count_params(arch: ArchitectureSpec) -> int:
    """Exact trainable parameter count over all three heads."""
    total = 0
    cin = 1
    for cout in arch.conv_channels:
        total += cin * cout * arch.kernel_size + cout
        cin = cout
    total += (arch.flat_dim() + 1) * arch.embedding_dim
    total += (arch.embedding_dim + 1) * arch.projection_hidden
    total += (arch.projection_hidden + 1) * arch.projection_dim
    if arch.projection_bn_count >= 1:
        total += 2 * arch.projection_hidden
    if arch.projection_bn_count >= 2:
        total += 2 * arch.projection_dim
    total += (arch.embedding_dim + 1) * arch.num_classes
    return total


def count_flops(arch: ArchitectureSpec) -> int:
    """Forward-pass FLOPs for one sample (see module docstring convention)."""
    total = 0
    cin = 1
    length = arch.input_dim
    for cout in arch.conv_channels:
        total += 2 * arch.kernel_size * cin * cout * length + cout * length
        length //= arch.pool_size
        cin = cout
    def linear(nin, nout):
        return 2 * nin * nout + nout
    total += linear(arch.flat_dim(), arch.embedding_dim)
    total += linear(arch.embedding_dim, arch.projection_hidden)
    total += linear(arch.projection_hidden, arch.projection_dim)
    total += linear(arch.embedding_dim, arch.num_classes)
    return total


def generator_dropout(h: torch.Tensor, rate: float,
                      generator: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout driven by an explicit generator.

    Torch's stock dropout draws from the global RNG, which would make
    interleaved client training order-dependent; this keeps each client's
    randomness on its own stream.
    """
    if rate <= 0:
        return h
    keep = (torch.rand(h.shape, generator=generator) >= rate).to(h.dtype)
    return h * keep / (1.0 - rate)


class EncoderNet(nn.Module):
    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        self.arch = arch
        convs = []
        cin = 1
        for cout in arch.conv_channels:
            convs.append(nn.Conv1d(cin, cout, arch.kernel_size,
                                   padding=arch.kernel_size // 2))
            cin = cout
        self.convs = nn.ModuleList(convs)
        self.embed = nn.Linear(arch.flat_dim(), arch.embedding_dim)

    def forward(self, x: torch.Tensor, *, training: bool = False,
                dropout_generator: torch.Generator | None = None) -> torch.Tensor:
        h = x.unsqueeze(1)
        for conv in self.convs:
            h = torch.relu(conv(h))
            h = torch.nn.functional.max_pool1d(h, self.arch.pool_size)
        h = torch.relu(self.embed(h.flatten(1)))
        if training:
            h = generator_dropout(h, self.arch.dropout_rate, dropout_generator)
        return h


class ProjectorNet(nn.Module):
    """Two-layer MLP into the contrastive latent space.

    Batch-norm layers (0/1/2 of them) always normalize with the statistics
    of the batch at hand; no running averages are kept, so the trainable
    tensors are the projector's entire state.
    """

    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        self.fc1 = nn.Linear(arch.embedding_dim, arch.projection_hidden)
        self.fc2 = nn.Linear(arch.projection_hidden, arch.projection_dim)
        self.bn1 = (nn.BatchNorm1d(arch.projection_hidden, track_running_stats=False)
                    if arch.projection_bn_count >= 1 else None)
        self.bn2 = (nn.BatchNorm1d(arch.projection_dim, track_running_stats=False)
                    if arch.projection_bn_count >= 2 else None)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        z = self.fc1(h)
        if self.bn1 is not None:
            z = self.bn1(z)
        z = torch.relu(z)
        z = self.fc2(z)
        if self.bn2 is not None:
            z = self.bn2(z)
        return z


class ClassifierNet(nn.Module):
    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        self.fc = nn.Linear(arch.embedding_dim, arch.num_classes)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.fc(h)


class ModelHeads:
    """The three torch heads plus their architecture, kept together."""

    def __init__(self, arch: ArchitectureSpec):
        self.arch = arch
        self.encoder = EncoderNet(arch)
        self.projector = ProjectorNet(arch)
        self.classifier = ClassifierNet(arch)

    def modules(self) -> dict[str, nn.Module]:
        return {ENCODER: self.encoder, PROJECTOR: self.projector,
                CLASSIFIER: self.classifier}

    def parameters(self, groups: tuple[str, ...] = GROUPS):
        for g in groups:
            yield from self.modules()[g].parameters()

    def load(self, params: "ParameterSet",
             groups: tuple[str, ...] = GROUPS) -> None:
        for g in groups:
            module = self.modules()[g]
            state = {k.split(".", 1)[1]: torch.from_numpy(v.copy())
                     for k, v in params.group(g).items()}
            module.load_state_dict(state)

    def extract(self, groups: tuple[str, ...] = GROUPS) -> "ParameterSet":
        data = {}
        for g in groups:
            for k, v in self.modules()[g].state_dict().items():
                data[f"{g}.{k}"] = v.detach().cpu().numpy().copy()
        return ParameterSet(data)


def _fan_in_uniform_init(module: nn.Module, generator: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv1d)):
            fan_in = m.weight.shape[1] * math.prod(m.weight.shape[2:])
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=generator)
                m.bias.uniform_(-bound, bound, generator=generator)
        elif isinstance(m, nn.BatchNorm1d):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.fill_(0.0)


def build_heads(arch: ArchitectureSpec, seed: int) -> ModelHeads:
    """Initialized model heads (uniform fan-in), deterministic under seed."""
    actual = count_params(arch)
    if actual > arch.param_budget:
        raise ConfigError(
            f"architecture has {actual} trainable parameters, over the "
            f"budget of {arch.param_budget}")
    heads = ModelHeads(arch)
    generator = torch.Generator().manual_seed(seed)
    for g in GROUPS:
        _fan_in_uniform_init(heads.modules()[g], generator)
    return heads


def build(arch: ArchitectureSpec, seed: int) -> "ParameterSet":
    return build_heads(arch, seed).extract()


class ParameterSet:
    """Named float32 tensors grouped by submodel prefix.

    Supports the elementwise linear algebra federation needs; two sets from
    the same architecture are shape-congruent.
    """

    def __init__(self, data: dict[str, np.ndarray]):
        self.data = {k: np.asarray(v, dtype=np.float32) for k, v in data.items()}

    def __iter__(self):
        return iter(self.data.items())

    def names(self) -> list[str]:
        return list(self.data)

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.data.items()
                if k.startswith(prefix + ".")}

    def subset(self, groups: tuple[str, ...]) -> "ParameterSet":
        return ParameterSet({k: v for k, v in self.data.items()
                             if k.split(".", 1)[0] in groups})

    def replace(self, other: "ParameterSet") -> "ParameterSet":
        """New set with entries overridden by those present in `other`."""
        merged = dict(self.data)
        for k, v in other.data.items():
            merged[k] = v
        return ParameterSet(merged)

    @property
    def num_params(self) -> int:
        return int(sum(v.size for v in self.data.values()))

    def shape_congruent(self, other: "ParameterSet") -> bool:
        return (self.names() == other.names() and
                all(self.data[k].shape == other.data[k].shape
                    for k in self.data))

    def _require_congruent(self, other: "ParameterSet") -> None:
        if not self.shape_congruent(other):
            raise ConfigError("parameter sets are not shape-congruent")

    def lincomb(self, a: float, b: float, other: "ParameterSet") -> "ParameterSet":
        """Elementwise a * self + b * other."""
        self._require_congruent(other)
        return ParameterSet({
            k: a * self.data[k] + b * other.data[k] for k in self.data
        })

    def allclose(self, other: "ParameterSet", atol: float = 0.0) -> bool:
        return self.shape_congruent(other) and all(
            np.allclose(self.data[k], other.data[k], rtol=0.0, atol=atol)
            for k in self.data)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for k in self.names():
            digest.update(k.encode())
            digest.update(self.data[k].tobytes())
        return digest.hexdigest()


def save_checkpoint(path: str | Path, params: ParameterSet,
                    arch: ArchitectureSpec, *, seed: int,
                    round_index: int) -> Path:
    """Checkpoint directory: named tensors plus a JSON manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.savez(path / "tensors.npz", **params.data)
    manifest = {
        "arch": arch.to_json(),
        "seed": seed,
        "round": round_index,
        "checksum": params.checksum(),
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def load_checkpoint(path: str | Path) -> tuple[ParameterSet, ArchitectureSpec, dict]:
    path = Path(path)
    with open(path / "manifest.json") as fh:
        manifest = json.load(fh)
    with np.load(path / "tensors.npz") as npz:
        params = ParameterSet({k: npz[k] for k in npz.files})
    return params, ArchitectureSpec.from_json(manifest["arch"]), manifest


# Convenience single-shot forward passes (tests and small tooling; training
# loops hold ModelHeads directly).

def _as_tensor(X: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.asarray(X, dtype=np.float32))


def encode(arch: ArchitectureSpec, params: ParameterSet, X: np.ndarray, *,
           training: bool = False,
           dropout_generator: torch.Generator | None = None) -> np.ndarray:
    heads = ModelHeads(arch)
    heads.load(params)
    with torch.no_grad():
        h = heads.encoder(_as_tensor(X), training=training,
                          dropout_generator=dropout_generator)
    return h.numpy()


def project(arch: ArchitectureSpec, params: ParameterSet,
            embeddings: np.ndarray) -> np.ndarray:
    heads = ModelHeads(arch)
    heads.load(params)
    heads.projector.eval()
    with torch.no_grad():
        return heads.projector(_as_tensor(embeddings)).numpy()


def classify(arch: ArchitectureSpec, params: ParameterSet,
             embeddings: np.ndarray) -> np.ndarray:
    heads = ModelHeads(arch)
    heads.load(params)
    with torch.no_grad():
        return heads.classifier(_as_tensor(embeddings)).numpy()
