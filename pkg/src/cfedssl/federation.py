"""Round orchestration: parallel client contrastive updates, sample-count
weighted aggregation, EMA fusion into the global encoder, and server-side
supervised fine-tuning.

Within a round each client gets a private parameter copy and a
client-indexed random stream; aggregation reduces in fixed client-id order,
so results are bit-reproducible under any scheduling. Per Fig-3 ordering,
EMA fusion happens before the server's supervised phase each round.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses
from .augment import AugmentationPolicy, augment_batch
from .config import FederationConfig, RunConfig
from .dataset import CLASS_NAMES, ClientShard, DatasetSplit, EncoderState
from .errors import ConfigError, TrainingError
from .evaluation import evaluate_predictions, predict
from .losses import ContrastiveConfig, LatentBatch
from .model import (CLASSIFIER, ENCODER, PROJECTOR, ArchitectureSpec,
                    ModelHeads, ParameterSet, build_heads, load_checkpoint,
                    save_checkpoint)

logger = logging.getLogger(__name__)

_SERVER_STREAM = 1_000_003  # disjoint from any client id


@dataclass(frozen=True)
class TrainingVariant:
    """Switches for the ablation rows; the full method leaves all on."""
    name: str = "full"
    augmented: bool = True      # off: identical views, dropout disabled
    contrastive: bool = True    # off: client phase skipped entirely
    ema: bool = True            # off: global encoder replaced by the aggregate


VARIANTS = {
    "full": TrainingVariant(),
    "no_augment": TrainingVariant("no_augment", augmented=False),
    "no_contrastive": TrainingVariant("no_contrastive", contrastive=False),
    "no_ema": TrainingVariant("no_ema", ema=False),
}


@dataclass
class RoundRecord:
    round_index: int
    client_final_losses: dict[int, float]
    aggregated_checksum: str
    metrics: dict[str, float]
    wall_time_s: float

    def to_json(self) -> dict:
        return {
            "round": self.round_index,
            "client_final_losses": {str(k): v for k, v in
                                    self.client_final_losses.items()},
            "aggregated_checksum": self.aggregated_checksum,
            "metrics": self.metrics,
            "wall_time_s": self.wall_time_s,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RoundRecord":
        return cls(
            round_index=data["round"],
            client_final_losses={int(k): v for k, v in
                                 data["client_final_losses"].items()},
            aggregated_checksum=data["aggregated_checksum"],
            metrics=data["metrics"],
            wall_time_s=data["wall_time_s"],
        )


def fedavg(client_params: list[ParameterSet],
           counts: list[int]) -> ParameterSet:
    """Elementwise weighted mean with weights n_k / sum(n)."""
    if not client_params:
        raise ConfigError("fedavg needs at least one parameter set")
    if len(client_params) != len(counts) or any(c <= 0 for c in counts):
        raise ConfigError("fedavg needs one positive count per parameter set")
    total = float(sum(counts))
    first = client_params[0]
    for other in client_params[1:]:
        if not first.shape_congruent(other):
            raise ConfigError("fedavg inputs are not shape-congruent")
    out = {
        k: sum((counts[i] / total) * client_params[i].data[k]
               for i in range(len(client_params))).astype(np.float32)
        for k in first.data
    }
    return ParameterSet(out)


def ema_update(global_prev: ParameterSet, aggregated: ParameterSet,
               xi: float) -> ParameterSet:
    """Convex combination xi * previous + (1 - xi) * aggregated."""
    if not 0.0 <= xi <= 1.0:
        raise ConfigError("EMA weight must lie in [0, 1]")
    return global_prev.lincomb(xi, 1.0 - xi, aggregated)


def _make_optimizer(cfg: FederationConfig, parameters):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(parameters, lr=cfg.learning_rate)
    return torch.optim.SGD(parameters, lr=cfg.learning_rate)


def _client_streams(seed: int, round_index: int, client_id: int
                    ) -> tuple[np.random.Generator, torch.Generator]:
    seq = np.random.SeedSequence(entropy=(seed, round_index, client_id))
    rng = np.random.default_rng(seq)
    gen = torch.Generator().manual_seed(int(seq.generate_state(1)[0]))
    return rng, gen


def _batches(n: int, batch: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch):
        yield order[start:start + batch]


def client_update(global_params: ParameterSet, shard: ClientShard,
                  cfg: FederationConfig, ccfg: ContrastiveConfig,
                  policy: AugmentationPolicy, arch: ArchitectureSpec, *,
                  round_index: int, numeric_mask: np.ndarray | None = None,
                  variant: TrainingVariant = VARIANTS["full"],
                  ) -> tuple[ParameterSet, list[tuple[int, int, float]]]:
    """One client's local phase: P_c epochs of contrastive training on its
    unlabeled shard. Returns updated encoder+projector and a loss trace of
    (epoch, step, value). The classifier head is never touched here.
    """
    if shard.n_k == 0:
        raise TrainingError(f"client {shard.client_id}: empty shard")
    heads = ModelHeads(arch)
    heads.load(global_params, groups=(ENCODER, PROJECTOR))
    start = heads.extract(groups=(ENCODER, PROJECTOR))
    if cfg.client_epochs == 0:
        return start, []

    batch = cfg.client_batch
    if batch > shard.n_k:
        logger.warning("client %d: batch %d clamped to shard size %d",
                       shard.client_id, batch, shard.n_k)
        batch = shard.n_k

    rng, gen = _client_streams(cfg.seed, round_index, shard.client_id)
    opt = _make_optimizer(cfg, list(heads.parameters((ENCODER, PROJECTOR))))
    trace: list[tuple[int, int, float]] = []
    training_dropout = variant.augmented

    for epoch in range(cfg.client_epochs):
        for step, idx in enumerate(_batches(shard.n_k, batch, rng)):
            xb = shard.X[idx]
            if variant.augmented:
                a, b, _ = augment_batch(xb, policy, rng, numeric_mask)
            else:
                a = b = xb
            views = torch.from_numpy(np.ascontiguousarray(
                np.concatenate([a, b], axis=0)))
            z = heads.projector(heads.encoder(
                views, training=training_dropout, dropout_generator=gen))
            za, zb = z[:idx.size], z[idx.size:]
            loss = losses.ntxent_batch(LatentBatch(za, zb), ccfg).mean
            opt.zero_grad()
            loss.backward()
            opt.step()
            trace.append((epoch, step, float(loss.detach())))
    return heads.extract(groups=(ENCODER, PROJECTOR)), trace


def server_finetune(global_params: ParameterSet, X: np.ndarray, y: np.ndarray,
                    cfg: FederationConfig, arch: ArchitectureSpec, *,
                    round_index: int, epochs: int | None = None,
                    dropout: bool = True,
                    ) -> tuple[ParameterSet, list[tuple[int, int, float]]]:
    """Supervised phase: encoder + classifier trained jointly with
    cross-entropy on the server's labeled data.
    """
    if X.shape[0] == 0:
        raise TrainingError("server fine-tuning needs a non-empty labeled set")
    heads = ModelHeads(arch)
    heads.load(global_params, groups=(ENCODER, CLASSIFIER))
    epochs = cfg.server_epochs_per_round if epochs is None else epochs
    if epochs == 0:
        return heads.extract(groups=(ENCODER, CLASSIFIER)), []

    rng, gen = _client_streams(cfg.seed, round_index, _SERVER_STREAM)
    opt = _make_optimizer(cfg, list(heads.parameters((ENCODER, CLASSIFIER))))
    onehot = losses.one_hot(y, arch.num_classes)
    Xt = torch.from_numpy(np.ascontiguousarray(X.astype(np.float32)))
    trace: list[tuple[int, int, float]] = []

    for epoch in range(epochs):
        for step, idx in enumerate(_batches(X.shape[0], cfg.server_batch, rng)):
            ti = torch.from_numpy(idx)
            h = heads.encoder(Xt[ti], training=dropout, dropout_generator=gen)
            loss = losses.cross_entropy(heads.classifier(h), onehot[ti])
            opt.zero_grad()
            loss.backward()
            opt.step()
            trace.append((epoch, step, float(loss.detach())))
    return heads.extract(groups=(ENCODER, CLASSIFIER)), trace


class MetricsLog:
    """Step-level loss log: one CSV row per training step."""

    FIELDS = ("round", "client", "epoch", "step", "loss_name", "value")

    def __init__(self, path: Path | None):
        self.path = path
        if path is not None and not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.FIELDS)

    def extend(self, round_index: int, client: str,
               trace: list[tuple[int, int, float]], loss_name: str) -> None:
        if self.path is None:
            return
        with open(self.path, "a", newline="") as fh:
            writer = csv.writer(fh)
            for epoch, step, value in trace:
                writer.writerow([round_index, client, epoch, step,
                                 loss_name, f"{value:.6f}"])


def _evaluate_params(arch: ArchitectureSpec, params: ParameterSet,
                     X: np.ndarray, y: np.ndarray) -> dict[str, float]:
    preds = predict(arch, params, X)
    report = evaluate_predictions(y, preds, CLASS_NAMES[:arch.num_classes])
    return report.headline()


def run_training(split: DatasetSplit, rc: RunConfig, *,
                 variant: TrainingVariant = VARIANTS["full"],
                 run_dir: str | Path | None = None,
                 state: EncoderState | None = None,
                 resume: bool = False,
                 ) -> tuple[ParameterSet, list[RoundRecord]]:
    """Full protocol: R_s rounds of broadcast -> parallel client updates ->
    fedavg -> EMA -> server fine-tune. Writes per-round checkpoints and an
    audit trail when run_dir is given; can resume from the latest one.
    """
    cfg = rc.federation
    arch = rc.arch
    numeric_mask = state.numeric_mask() if state is not None else None
    run_dir = Path(run_dir) if run_dir is not None else None
    ckpt_root = run_dir / "checkpoints" if run_dir else None
    records: list[RoundRecord] = []

    params = build_heads(arch, cfg.seed).extract()
    start_round = 1
    if resume and ckpt_root is not None and ckpt_root.exists():
        done = sorted(int(p.name.split("_")[1]) for p in ckpt_root.iterdir()
                      if p.name.startswith("round_"))
        if done:
            last = done[-1]
            params, ckpt_arch, _ = load_checkpoint(ckpt_root / f"round_{last:02d}")
            if ckpt_arch != arch:
                raise ConfigError("checkpoint architecture differs from config")
            start_round = last + 1
            records_path = run_dir / "round_records.jsonl"
            if records_path.exists():
                with open(records_path) as fh:
                    records = [RoundRecord.from_json(json.loads(line))
                               for line in fh if line.strip()]
                records = [r for r in records if r.round_index <= last]
            logger.info("resuming %s from round %d", run_dir, start_round)

    log = MetricsLog(run_dir / "metrics_log.csv" if run_dir else None)
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        rc.save(run_dir / "config.ini")

    counts = [shard.n_k for shard in split.shards]
    for round_index in range(start_round, cfg.rounds + 1):
        t0 = time.perf_counter()
        client_losses: dict[int, float] = {}
        try:
            if variant.contrastive:
                def one_client(shard: ClientShard):
                    return client_update(
                        params, shard, cfg, rc.contrastive(), rc.augment,
                        arch, round_index=round_index,
                        numeric_mask=numeric_mask, variant=variant)

                if rc.workers > 1:
                    with ThreadPoolExecutor(max_workers=rc.workers) as pool:
                        results = list(pool.map(one_client, split.shards))
                else:
                    results = [one_client(shard) for shard in split.shards]

                for shard, (_, trace) in zip(split.shards, results):
                    log.extend(round_index, f"client_{shard.client_id}",
                               trace, "ntxent_mean")
                    if trace:
                        client_losses[shard.client_id] = trace[-1][2]

                aggregated = fedavg([p for p, _ in results], counts)
                xi = cfg.ema_weight if variant.ema else 0.0
                fused = ema_update(params.subset((ENCODER,)),
                                   aggregated.subset((ENCODER,)), xi)
                params = params.replace(fused)
                params = params.replace(aggregated.subset((PROJECTOR,)))
                agg_checksum = aggregated.checksum()
            else:
                agg_checksum = ""

            finetuned, trace = server_finetune(
                params, split.server_X, split.server_y, cfg, arch,
                round_index=round_index, dropout=variant.augmented)
            params = params.replace(finetuned)
            log.extend(round_index, "server", trace, "cross_entropy")
        except Exception as exc:
            raise TrainingError(
                f"round {round_index} ({variant.name}): {exc}") from exc

        metrics = _evaluate_params(arch, params, split.test_X, split.test_y)
        record = RoundRecord(
            round_index=round_index,
            client_final_losses=client_losses,
            aggregated_checksum=agg_checksum,
            metrics=metrics,
            wall_time_s=time.perf_counter() - t0,
        )
        records.append(record)
        if run_dir is not None:
            save_checkpoint(ckpt_root / f"round_{round_index:02d}", params,
                            arch, seed=cfg.seed, round_index=round_index)
            with open(run_dir / "round_records.jsonl", "w") as fh:
                for r in records:
                    fh.write(json.dumps(r.to_json()) + "\n")
        logger.info("round %d/%d (%s): acc %.2f f1 %.2f [%.1fs]",
                    round_index, cfg.rounds, variant.name,
                    metrics["accuracy"], metrics["f1"], record.wall_time_s)

    if run_dir is not None and rc.log_projections:
        _log_projections(run_dir, arch, params, split)
    return params, records


def _log_projections(run_dir: Path, arch: ArchitectureSpec,
                     params: ParameterSet, split: DatasetSplit,
                     sample: int = 2000) -> None:
    rng = np.random.default_rng(0)
    idx = rng.choice(split.test_X.shape[0],
                     size=min(sample, split.test_X.shape[0]), replace=False)
    heads = ModelHeads(arch)
    heads.load(params)
    with torch.no_grad():
        h = heads.encoder(torch.as_tensor(split.test_X[idx], dtype=torch.float32))
        z = heads.projector(h).numpy()
    np.savez(run_dir / "projections.npz", latents=z,
             labels=split.test_y[idx], indices=idx)
