"""NSL-KDD ingestion, preprocessing, and federated partitioning.

Raw files are the standard KDDTrain+/KDDTest+ CSV layout: 41 feature
fields, an attack-name label, and a difficulty score (retained but unused).
Preprocessing one-hot encodes the three categorical fields in place and
min-max scales the 38 numeric fields using training-set statistics, so
every component of a processed vector lies in [0, 1].
"""

from __future__ import annotations

import csv
import json
import logging
import importlib.resources
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, LabelMappingError, ParseError

logger = logging.getLogger(__name__)

# 41 feature columns, in file order.
COLUMNS = [
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes",
    "land", "wrong_fragment", "urgent", "hot", "num_failed_logins",
    "logged_in", "num_compromised", "root_shell", "su_attempted", "num_root",
    "num_file_creations", "num_shells", "num_access_files",
    "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate",
    "srv_rerror_rate", "same_srv_rate", "diff_srv_rate",
    "srv_diff_host_rate", "dst_host_count", "dst_host_srv_count",
    "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate", "dst_host_srv_serror_rate",
    "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
]
CATEGORICAL_COLUMNS = ("protocol_type", "service", "flag")
CATEGORICAL_IDX = tuple(COLUMNS.index(c) for c in CATEGORICAL_COLUMNS)
NUMERIC_IDX = tuple(i for i in range(len(COLUMNS)) if i not in CATEGORICAL_IDX)

N_FEATURES = len(COLUMNS)          # 41
N_FILE_FIELDS = N_FEATURES + 2     # + label + difficulty


class ClassLabel(IntEnum):
    NORMAL = 0
    DOS = 1
    PROBE = 2
    R2L = 3
    U2R = 4


UNLABELED = -1
CLASS_NAMES = ("Normal", "DoS", "Probe", "R2L", "U2R")
_NAME_TO_CLASS = {n: ClassLabel(i) for i, n in enumerate(CLASS_NAMES)}


def _load_taxonomy() -> dict:
    text = importlib.resources.files("cfedssl.data").joinpath(
        "attack_taxonomy.json").read_text()
    return json.loads(text)


_TAXONOMY = _load_taxonomy()
TAXONOMY_VERSION: str = _TAXONOMY["version"]
ATTACK_CLASS: dict[str, ClassLabel] = {
    name: _NAME_TO_CLASS[cls] for name, cls in _TAXONOMY["mapping"].items()
}
TEST_ONLY_ATTACKS: frozenset[str] = frozenset(_TAXONOMY["test_only"])


@dataclass(frozen=True)
class RawRecord:
    """One traffic record as read from file: 41 fields + label + difficulty."""
    features: tuple[str, ...]
    label: str
    difficulty: int


def map_class(attack_label: str) -> ClassLabel:
    """Map an NSL-KDD attack name (or "normal") to its 5-class label."""
    try:
        return ATTACK_CLASS[attack_label]
    except KeyError:
        raise LabelMappingError(
            f"unknown attack label {attack_label!r} "
            f"(taxonomy {TAXONOMY_VERSION})") from None


def binarize(label: ClassLabel) -> str:
    """Collapse the 5-class label to the binary scheme."""
    return "Normal" if label == ClassLabel.NORMAL else "Attack"


def binarize_labels(y: np.ndarray) -> np.ndarray:
    """Vector form of binarize: 0 = Normal, 1 = Attack."""
    return (np.asarray(y) != int(ClassLabel.NORMAL)).astype(np.int64)


def _parse_file(path: str | Path) -> list[RawRecord]:
    records: list[RawRecord] = []
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != N_FILE_FIELDS:
                raise ParseError(
                    f"{path}:{lineno}: expected {N_FILE_FIELDS} fields, "
                    f"got {len(row)}")
            label = row[N_FEATURES].strip()
            if label not in ATTACK_CLASS:
                raise LabelMappingError(
                    f"{path}:{lineno}: unknown attack label {label!r}")
            try:
                difficulty = int(row[N_FEATURES + 1])
            except ValueError:
                raise ParseError(
                    f"{path}:{lineno}: difficulty column is not an integer")
            records.append(RawRecord(tuple(row[:N_FEATURES]), label, difficulty))
    return records


def load_nslkdd(train_path: str | Path,
                test_path: str | Path) -> tuple[list[RawRecord], list[RawRecord]]:
    """Parse KDDTrain+ / KDDTest+ files into raw records."""
    return _parse_file(train_path), _parse_file(test_path)


def class_counts(records: list[RawRecord]) -> dict[str, int]:
    counts = {name: 0 for name in CLASS_NAMES}
    for rec in records:
        counts[CLASS_NAMES[map_class(rec.label)]] += 1
    return counts


@dataclass
class EncoderState:
    """Fitted preprocessing state; required to encode test data consistently.

    Feature layout keeps the original column order, with each categorical
    column expanded to a one-hot block in place.
    """
    categories: dict[str, list[str]]
    numeric_min: np.ndarray
    numeric_max: np.ndarray
    dim: int
    taxonomy_version: str = TAXONOMY_VERSION
    _warned: set = field(default_factory=set, repr=False, compare=False)

    def layout(self) -> tuple[np.ndarray, dict[str, slice]]:
        """Return (numeric position array of length 38, one-hot block slices)."""
        numeric_pos = []
        blocks: dict[str, slice] = {}
        pos = 0
        for i, col in enumerate(COLUMNS):
            if col in self.categories:
                width = len(self.categories[col])
                blocks[col] = slice(pos, pos + width)
                pos += width
            else:
                numeric_pos.append(pos)
                pos += 1
        return np.array(numeric_pos), blocks

    def numeric_mask(self) -> np.ndarray:
        mask = np.zeros(self.dim, dtype=bool)
        mask[self.layout()[0]] = True
        return mask

    def scale_numeric(self, raw: np.ndarray) -> np.ndarray:
        """Min-max scale raw numeric columns; constant columns map to 0."""
        span = self.numeric_max - self.numeric_min
        safe = np.where(span > 0, span, 1.0)
        scaled = (raw - self.numeric_min) / safe
        scaled[:, span == 0] = 0.0
        return np.clip(scaled, 0.0, 1.0)

    def to_json(self) -> dict:
        return {
            "categories": self.categories,
            "numeric_min": self.numeric_min.tolist(),
            "numeric_max": self.numeric_max.tolist(),
            "dim": self.dim,
            "taxonomy_version": self.taxonomy_version,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EncoderState":
        return cls(
            categories={k: list(v) for k, v in data["categories"].items()},
            numeric_min=np.asarray(data["numeric_min"], dtype=np.float64),
            numeric_max=np.asarray(data["numeric_max"], dtype=np.float64),
            dim=int(data["dim"]),
            taxonomy_version=data["taxonomy_version"],
        )


def _raw_arrays(records: list[RawRecord]) -> tuple[np.ndarray, list[list[str]], np.ndarray]:
    n = len(records)
    numeric = np.empty((n, len(NUMERIC_IDX)), dtype=np.float64)
    categorical: list[list[str]] = [[] for _ in CATEGORICAL_IDX]
    y = np.empty(n, dtype=np.int64)
    for r, rec in enumerate(records):
        try:
            numeric[r] = [float(rec.features[i]) for i in NUMERIC_IDX]
        except ValueError as exc:
            raise ParseError(f"non-numeric value in record {r}: {exc}") from None
        for j, i in enumerate(CATEGORICAL_IDX):
            categorical[j].append(rec.features[i])
        y[r] = int(map_class(rec.label))
    return numeric, categorical, y


def fit_encoder(records: list[RawRecord]) -> EncoderState:
    """Fit categorical level sets and numeric min/max on training records."""
    if not records:
        raise DataError("cannot fit preprocessing on an empty record list")
    numeric, categorical, _ = _raw_arrays(records)
    categories = {
        col: sorted(set(values))
        for col, values in zip(CATEGORICAL_COLUMNS, categorical)
    }
    dim = len(NUMERIC_IDX) + sum(len(v) for v in categories.values())
    return EncoderState(
        categories=categories,
        numeric_min=numeric.min(axis=0),
        numeric_max=numeric.max(axis=0),
        dim=dim,
    )


def transform(records: list[RawRecord],
              state: EncoderState) -> tuple[np.ndarray, np.ndarray]:
    """Encode records into (X, y) with X float32 in [0, 1]^dim.

    Categories unseen at fit time map to an all-zero one-hot group; each
    distinct (column, value) pair is logged once.
    """
    numeric, categorical, y = _raw_arrays(records)
    X = np.zeros((len(records), state.dim), dtype=np.float32)
    numeric_pos, blocks = state.layout()
    X[:, numeric_pos] = state.scale_numeric(numeric).astype(np.float32)
    for col, values in zip(CATEGORICAL_COLUMNS, categorical):
        levels = {v: k for k, v in enumerate(state.categories[col])}
        block = blocks[col]
        for r, v in enumerate(values):
            k = levels.get(v)
            if k is None:
                key = (col, v)
                if key not in state._warned:
                    state._warned.add(key)
                    logger.warning(
                        "unseen %s category %r mapped to all-zeros", col, v)
                continue
            X[r, block.start + k] = 1.0
    return X, y


def preprocess(records: list[RawRecord],
               state: EncoderState | None = None
               ) -> tuple[np.ndarray, np.ndarray, EncoderState]:
    """Fit (unless a state is given) and encode records; returns (X, y, state)."""
    if state is None:
        state = fit_encoder(records)
    X, y = transform(records, state)
    return X, y, state


@dataclass
class ClientShard:
    """One client's unlabeled samples. Labels never travel with a shard."""
    client_id: int
    X: np.ndarray

    @property
    def n_k(self) -> int:
        return self.X.shape[0]


@dataclass
class DatasetSplit:
    """Server labeled split, K unlabeled client shards, held-out test set."""
    server_X: np.ndarray
    server_y: np.ndarray
    shards: list[ClientShard]
    test_X: np.ndarray
    test_y: np.ndarray
    server_idx: np.ndarray
    client_idx: list[np.ndarray]

    @property
    def num_clients(self) -> int:
        return len(self.shards)


def _stratified_quota(y_pool: np.ndarray, total: int) -> dict[int, int]:
    """Per-class sample quota via largest-remainder rounding to hit total."""
    classes, counts = np.unique(y_pool, return_counts=True)
    exact = counts * (total / counts.sum())
    quota = np.floor(exact).astype(int)
    remainder = exact - quota
    for c in np.argsort(-remainder)[: total - quota.sum()]:
        quota[c] += 1
    return dict(zip(classes.tolist(), quota.tolist()))


def partition(X: np.ndarray, y: np.ndarray, *, server_labeled_count: int,
              client_unlabeled_total: int, num_clients: int, seed: int,
              test_X: np.ndarray, test_y: np.ndarray) -> DatasetSplit:
    """Split training data into a stratified labeled server set and K IID
    unlabeled client shards; anything left over is discarded.
    """
    n = X.shape[0]
    if server_labeled_count + client_unlabeled_total > n:
        raise ConfigError(
            f"requested {server_labeled_count} + {client_unlabeled_total} "
            f"samples but the training pool has only {n}")
    if num_clients < 1:
        raise ConfigError("num_clients must be >= 1")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)

    quota = _stratified_quota(y[order], server_labeled_count)
    taken = np.zeros(n, dtype=bool)
    for cls, want in quota.items():
        taken[order[y[order] == cls][:want]] = True
    # Server split keeps shuffled order rather than class-sorted order.
    server_idx = order[taken[order]]

    pool = order[~taken[order]][:client_unlabeled_total]
    base, extra = divmod(client_unlabeled_total, num_clients)
    sizes = [base + (1 if k < extra else 0) for k in range(num_clients)]
    client_idx: list[np.ndarray] = []
    start = 0
    for size in sizes:
        client_idx.append(pool[start:start + size])
        start += size

    shards = [ClientShard(k + 1, X[idx]) for k, idx in enumerate(client_idx)]
    return DatasetSplit(
        server_X=X[server_idx], server_y=y[server_idx], shards=shards,
        test_X=test_X, test_y=test_y,
        server_idx=server_idx, client_idx=client_idx,
    )


def partition_labeled(X: np.ndarray, y: np.ndarray, num_clients: int,
                      seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Evenly split a fully labeled pool across clients (supervised baselines)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(X.shape[0])
    parts = np.array_split(order, num_clients)
    return [(X[idx], y[idx]) for idx in parts]


# ---------------------------------------------------------------------------
# Prepared-artifact directory: flat .npy tensors + JSON manifest.

def save_artifact(out_dir: str | Path, *, X_train: np.ndarray,
                  y_train: np.ndarray, X_test: np.ndarray,
                  y_test: np.ndarray, split: DatasetSplit,
                  state: EncoderState, seed: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "X_train.npy", X_train)
    np.save(out / "y_train.npy", y_train)
    np.save(out / "X_test.npy", X_test)
    np.save(out / "y_test.npy", y_test)
    np.save(out / "server_idx.npy", split.server_idx)
    for k, idx in enumerate(split.client_idx):
        np.save(out / f"client_idx_{k + 1:02d}.npy", idx)
    manifest = {
        "dim": state.dim,
        "seed": seed,
        "num_clients": split.num_clients,
        "server_labeled_count": int(split.server_idx.size),
        "client_unlabeled_total": int(sum(i.size for i in split.client_idx)),
        "shard_sizes": [int(i.size) for i in split.client_idx],
        "train_count": int(X_train.shape[0]),
        "test_count": int(X_test.shape[0]),
        "class_names": list(CLASS_NAMES),
        "encoder_state": state.to_json(),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return out


def load_artifact(art_dir: str | Path) -> tuple[DatasetSplit, EncoderState, dict]:
    art = Path(art_dir)
    manifest_path = art / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"not a prepared dataset artifact: {art}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    state = EncoderState.from_json(manifest["encoder_state"])
    X_train = np.load(art / "X_train.npy")
    y_train = np.load(art / "y_train.npy")
    X_test = np.load(art / "X_test.npy")
    y_test = np.load(art / "y_test.npy")
    server_idx = np.load(art / "server_idx.npy")
    client_idx = [
        np.load(art / f"client_idx_{k + 1:02d}.npy")
        for k in range(manifest["num_clients"])
    ]
    shards = [ClientShard(k + 1, X_train[idx]) for k, idx in enumerate(client_idx)]
    split = DatasetSplit(
        server_X=X_train[server_idx], server_y=y_train[server_idx],
        shards=shards, test_X=X_test, test_y=y_test,
        server_idx=server_idx, client_idx=client_idx,
    )
    return split, state, manifest


def load_train_pool(art_dir: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Full labeled training pool, for the all-data supervised baselines."""
    art = Path(art_dir)
    return np.load(art / "X_train.npy"), np.load(art / "y_train.npy")
