"""Run configuration: every hyperparameter with its paper-default value,
serializable to a flat INI file with section headers.

A run directory always contains the exact config that produced it;
`digest()` keys artifact/run caching.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentationPolicy
from .errors import ConfigError
from .losses import ContrastiveConfig
from .model import ArchitectureSpec

DATA_ROOT_ENV = "CFEDSSL_DATA_ROOT"
TRAIN_FILE = "KDDTrain+.txt"
TEST_FILE = "KDDTest+.txt"

# Constants the comparison methods are run with, following the cited
# methods' conventions (the evaluation protocol itself never varies them).
FEDPROX_MU_DEFAULT = 0.01
FIXMATCH_THRESHOLD_DEFAULT = 0.95
FIXMATCH_SHARPEN_DEFAULT = 1.0   # hard pseudo-labels
UDA_TEMPERATURE_DEFAULT = 0.4


@dataclass(frozen=True)
class FederationConfig:
    num_clients: int = 10          # K
    rounds: int = 10               # R_s
    client_epochs: int = 5         # P_c
    client_batch: int = 1024       # B
    server_batch: int = 128        # B_S
    temperature: float = 0.5       # tau (duplicated into ContrastiveConfig)
    ema_weight: float = 0.5        # xi
    server_epochs_per_round: int = 5
    learning_rate: float = 0.01
    optimizer: str = "adam"
    seed: int = 1

    def __post_init__(self):
        if self.num_clients < 1 or self.rounds < 0 or self.client_epochs < 0:
            raise ConfigError("K >= 1, rounds >= 0 and client epochs >= 0 required")
        if not 0.0 <= self.ema_weight <= 1.0:
            raise ConfigError("ema_weight must lie in [0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class RunConfig:
    data_root: Path = field(
        default_factory=lambda: Path(os.environ.get(DATA_ROOT_ENV, "data")))
    artifact_dir: Path = Path("artifact")
    output_dir: Path = Path("runs")
    server_labeled_count: int = 50000
    client_unlabeled_total: int = 69070
    federation: FederationConfig = field(default_factory=FederationConfig)
    arch: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    augment: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    workers: int = 1
    log_projections: bool = False
    fedprox_mu: float = FEDPROX_MU_DEFAULT
    fixmatch_threshold: float = FIXMATCH_THRESHOLD_DEFAULT
    fixmatch_sharpen: float = FIXMATCH_SHARPEN_DEFAULT
    uda_temperature: float = UDA_TEMPERATURE_DEFAULT
    include_self_term: bool = False
    baseline_names: list[str] = field(default_factory=list)  # empty = all

    @property
    def train_path(self) -> Path:
        return self.data_root / TRAIN_FILE

    @property
    def test_path(self) -> Path:
        return self.data_root / TEST_FILE

    def contrastive(self) -> ContrastiveConfig:
        return ContrastiveConfig(self.federation.temperature,
                                 self.include_self_term)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["dataset"] = {
            "data_root": str(self.data_root),
            "artifact_dir": str(self.artifact_dir),
            "server_labeled_count": str(self.server_labeled_count),
            "client_unlabeled_total": str(self.client_unlabeled_total),
        }
        fed = self.federation
        cp["federation"] = {
            "num_clients": str(fed.num_clients),
            "rounds": str(fed.rounds),
            "client_epochs": str(fed.client_epochs),
            "client_batch": str(fed.client_batch),
            "server_batch": str(fed.server_batch),
            "temperature": str(fed.temperature),
            "ema_weight": str(fed.ema_weight),
            "server_epochs_per_round": str(fed.server_epochs_per_round),
            "learning_rate": str(fed.learning_rate),
            "optimizer": fed.optimizer,
            "seed": str(fed.seed),
        }
        arch = self.arch
        cp["model"] = {
            "input_dim": str(arch.input_dim),
            "conv_channels": " ".join(str(c) for c in arch.conv_channels),
            "kernel_size": str(arch.kernel_size),
            "pool_size": str(arch.pool_size),
            "embedding_dim": str(arch.embedding_dim),
            "projection_hidden": str(arch.projection_hidden),
            "projection_dim": str(arch.projection_dim),
            "projection_bn_count": str(arch.projection_bn_count),
            "dropout_rate": str(arch.dropout_rate),
            "num_classes": str(arch.num_classes),
            "param_budget": str(arch.param_budget),
        }
        aug = self.augment
        cp["augment"] = {
            "weak_sigma_low": str(aug.weak_sigma_range[0]),
            "weak_sigma_high": str(aug.weak_sigma_range[1]),
            "strong_sigma_low": str(aug.strong_sigma_range[0]),
            "strong_sigma_high": str(aug.strong_sigma_range[1]),
            "strong_mask_fraction": str(aug.strong_mask_fraction),
            "clip_to_unit": str(aug.clip_to_unit),
        }
        cp["run"] = {
            "output_dir": str(self.output_dir),
            "seeds": " ".join(str(s) for s in self.seeds),
            "workers": str(self.workers),
            "log_projections": str(self.log_projections),
            "include_self_term": str(self.include_self_term),
            "fedprox_mu": str(self.fedprox_mu),
            "fixmatch_threshold": str(self.fixmatch_threshold),
            "fixmatch_sharpen": str(self.fixmatch_sharpen),
            "uda_temperature": str(self.uda_temperature),
            "baselines": " ".join(self.baseline_names),
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini())

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]


def _get(cp: configparser.ConfigParser, section: str, key: str, fallback):
    if not cp.has_section(section) or not cp.has_option(section, key):
        return fallback
    raw = cp.get(section, key)
    if isinstance(fallback, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(fallback, int):
        return int(raw)
    if isinstance(fallback, float):
        return float(raw)
    if isinstance(fallback, Path):
        return Path(raw)
    return raw


def load_config(path: str | Path | None = None) -> RunConfig:
    """Config from an INI file; missing keys keep their defaults."""
    cp = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc

    base = RunConfig()
    fed_base = base.federation
    try:
        federation = FederationConfig(
            num_clients=_get(cp, "federation", "num_clients", fed_base.num_clients),
            rounds=_get(cp, "federation", "rounds", fed_base.rounds),
            client_epochs=_get(cp, "federation", "client_epochs", fed_base.client_epochs),
            client_batch=_get(cp, "federation", "client_batch", fed_base.client_batch),
            server_batch=_get(cp, "federation", "server_batch", fed_base.server_batch),
            temperature=_get(cp, "federation", "temperature", fed_base.temperature),
            ema_weight=_get(cp, "federation", "ema_weight", fed_base.ema_weight),
            server_epochs_per_round=_get(cp, "federation", "server_epochs_per_round",
                                         fed_base.server_epochs_per_round),
            learning_rate=_get(cp, "federation", "learning_rate", fed_base.learning_rate),
            optimizer=_get(cp, "federation", "optimizer", fed_base.optimizer),
            seed=_get(cp, "federation", "seed", fed_base.seed),
        )
        arch_base = base.arch
        conv_raw = _get(cp, "model", "conv_channels",
                        " ".join(str(c) for c in arch_base.conv_channels))
        arch = ArchitectureSpec(
            input_dim=_get(cp, "model", "input_dim", arch_base.input_dim),
            conv_channels=tuple(int(c) for c in str(conv_raw).split()),
            kernel_size=_get(cp, "model", "kernel_size", arch_base.kernel_size),
            pool_size=_get(cp, "model", "pool_size", arch_base.pool_size),
            embedding_dim=_get(cp, "model", "embedding_dim", arch_base.embedding_dim),
            projection_hidden=_get(cp, "model", "projection_hidden",
                                   arch_base.projection_hidden),
            projection_dim=_get(cp, "model", "projection_dim", arch_base.projection_dim),
            projection_bn_count=_get(cp, "model", "projection_bn_count",
                                     arch_base.projection_bn_count),
            dropout_rate=_get(cp, "model", "dropout_rate", arch_base.dropout_rate),
            num_classes=_get(cp, "model", "num_classes", arch_base.num_classes),
            param_budget=_get(cp, "model", "param_budget", arch_base.param_budget),
        )
        aug_base = base.augment
        augment = AugmentationPolicy(
            weak_sigma_range=(
                _get(cp, "augment", "weak_sigma_low", aug_base.weak_sigma_range[0]),
                _get(cp, "augment", "weak_sigma_high", aug_base.weak_sigma_range[1]),
            ),
            strong_sigma_range=(
                _get(cp, "augment", "strong_sigma_low", aug_base.strong_sigma_range[0]),
                _get(cp, "augment", "strong_sigma_high", aug_base.strong_sigma_range[1]),
            ),
            strong_mask_fraction=_get(cp, "augment", "strong_mask_fraction",
                                      aug_base.strong_mask_fraction),
            clip_to_unit=_get(cp, "augment", "clip_to_unit", aug_base.clip_to_unit),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc

    seeds_raw = _get(cp, "run", "seeds", " ".join(str(s) for s in base.seeds))
    baselines_raw = _get(cp, "run", "baselines", "")
    return RunConfig(
        data_root=_get(cp, "dataset", "data_root", base.data_root),
        artifact_dir=_get(cp, "dataset", "artifact_dir", base.artifact_dir),
        output_dir=_get(cp, "run", "output_dir", base.output_dir),
        server_labeled_count=_get(cp, "dataset", "server_labeled_count",
                                  base.server_labeled_count),
        client_unlabeled_total=_get(cp, "dataset", "client_unlabeled_total",
                                    base.client_unlabeled_total),
        federation=federation,
        arch=arch,
        augment=augment,
        seeds=[int(s) for s in str(seeds_raw).split()],
        workers=_get(cp, "run", "workers", base.workers),
        log_projections=_get(cp, "run", "log_projections", base.log_projections),
        fedprox_mu=_get(cp, "run", "fedprox_mu", base.fedprox_mu),
        fixmatch_threshold=_get(cp, "run", "fixmatch_threshold",
                                base.fixmatch_threshold),
        fixmatch_sharpen=_get(cp, "run", "fixmatch_sharpen", base.fixmatch_sharpen),
        uda_temperature=_get(cp, "run", "uda_temperature", base.uda_temperature),
        include_self_term=_get(cp, "run", "include_self_term",
                               base.include_self_term),
        baseline_names=str(baselines_raw).split(),
    )
