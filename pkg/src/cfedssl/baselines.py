"""Every comparison row as a runnable training mode on the shared stack.

Data regimes follow the comparison setup: the *_AD rows distribute all
labeled training traffic across clients (supervised federated), CSL_* train
centrally, and the federated semi-supervised rows keep labels on the server
only, with clients running just the method's self-supervised objective on
their unlabeled shards.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses
from .augment import augment_batch
from .config import RunConfig
from .dataset import CLASS_NAMES, DatasetSplit, binarize_labels, partition_labeled
from .errors import ConfigError
from .evaluation import MetricsReport, evaluate_predictions, mean_report, predict
from .federation import (VARIANTS, _batches, _client_streams, _make_optimizer,
                         fedavg, run_training, server_finetune)
from .model import CLASSIFIER, ENCODER, ModelHeads, ParameterSet, build_heads

logger = logging.getLogger(__name__)

BASELINE_NAMES = (
    "SFedAvg_AD",
    "SFedProx_AD",
    "CSL_SD",
    "CSL_AD",
    "FedAvg+CR",
    "FedProx+CR",
    "FedUDA",
    "FedAvg+Fixmatch",
    "FedProx+Fixmatch",
    "CFedSSL_NID",
)

# Which rows need the full labeled pool rather than the federated split.
_ALL_DATA = {"SFedAvg_AD", "SFedProx_AD", "CSL_AD"}
_SSL_METHOD = {
    "FedAvg+CR": "cr", "FedProx+CR": "cr", "FedUDA": "uda",
    "FedAvg+Fixmatch": "fixmatch", "FedProx+Fixmatch": "fixmatch",
}
_USES_PROX = {"SFedProx_AD", "FedProx+CR", "FedProx+Fixmatch"}


@dataclass(frozen=True)
class BaselineSpec:
    name: str
    fedprox_mu: float = 0.0
    fixmatch_threshold: float = 0.95
    fixmatch_sharpen: float = 1.0
    uda_temperature: float = 0.4

    def __post_init__(self):
        if self.name not in BASELINE_NAMES:
            raise ConfigError(f"unknown baseline {self.name!r}; "
                              f"expected one of {BASELINE_NAMES}")


def make_spec(name: str, rc: RunConfig) -> BaselineSpec:
    return BaselineSpec(
        name=name,
        fedprox_mu=rc.fedprox_mu if name in _USES_PROX else 0.0,
        fixmatch_threshold=rc.fixmatch_threshold,
        fixmatch_sharpen=rc.fixmatch_sharpen,
        uda_temperature=rc.uda_temperature,
    )


def _prox_reference(params: ParameterSet, groups) -> list[torch.Tensor]:
    heads_like = [torch.from_numpy(v.copy())
                  for k, v in params.subset(tuple(groups)).data.items()]
    return heads_like


def _supervised_client(global_params: ParameterSet, X: np.ndarray,
                       y: np.ndarray, rc: RunConfig, *, round_index: int,
                       client_id: int, mu: float) -> ParameterSet:
    cfg = rc.federation
    arch = rc.arch
    heads = ModelHeads(arch)
    heads.load(global_params, groups=(ENCODER, CLASSIFIER))
    rng, gen = _client_streams(cfg.seed, round_index, client_id)
    trained = list(heads.parameters((ENCODER, CLASSIFIER)))
    opt = _make_optimizer(cfg, trained)
    reference = _prox_reference(global_params, (ENCODER, CLASSIFIER)) if mu > 0 else None
    onehot = losses.one_hot(y, arch.num_classes)
    Xt = torch.from_numpy(np.ascontiguousarray(X.astype(np.float32)))
    for _ in range(cfg.client_epochs):
        for idx in _batches(X.shape[0], cfg.server_batch, rng):
            ti = torch.from_numpy(idx)
            h = heads.encoder(Xt[ti], training=True, dropout_generator=gen)
            loss = losses.cross_entropy(heads.classifier(h), onehot[ti])
            if reference is not None:
                loss = loss + losses.fedprox_penalty(trained, reference, mu)
            opt.zero_grad()
            loss.backward()
            opt.step()
    return heads.extract(groups=(ENCODER, CLASSIFIER))


def _ssl_client(global_params: ParameterSet, X: np.ndarray, method: str,
                spec: BaselineSpec, rc: RunConfig, *, round_index: int,
                client_id: int, numeric_mask: np.ndarray | None
                ) -> ParameterSet:
    cfg = rc.federation
    arch = rc.arch
    groups = (ENCODER,) if method == "cr" else (ENCODER, CLASSIFIER)
    heads = ModelHeads(arch)
    heads.load(global_params, groups=groups)
    rng, gen = _client_streams(cfg.seed, round_index, client_id)
    trained = list(heads.parameters(groups))
    opt = _make_optimizer(cfg, trained)
    mu = spec.fedprox_mu
    reference = _prox_reference(global_params, groups) if mu > 0 else None
    batch = min(cfg.client_batch, X.shape[0])
    for _ in range(cfg.client_epochs):
        for idx in _batches(X.shape[0], batch, rng):
            a, b, _ = augment_batch(X[idx], rc.augment, rng, numeric_mask)
            ta, tb = torch.from_numpy(a), torch.from_numpy(b)
            if method == "cr":
                ra = heads.encoder(ta, training=True, dropout_generator=gen)
                rb = heads.encoder(tb, training=True, dropout_generator=gen)
                loss = losses.cr_consistency(ra, rb, eps=1e-8)
            else:
                with torch.no_grad():
                    weak_logits = heads.classifier(heads.encoder(ta))
                strong_logits = heads.classifier(heads.encoder(
                    tb, training=True, dropout_generator=gen))
                if method == "fixmatch":
                    loss = losses.fixmatch_loss(
                        weak_logits, strong_logits, spec.fixmatch_threshold,
                        spec.fixmatch_sharpen)
                else:
                    loss = losses.uda_consistency(
                        weak_logits, strong_logits, spec.uda_temperature)
            if reference is not None:
                loss = loss + losses.fedprox_penalty(trained, reference, mu)
            opt.zero_grad()
            loss.backward()
            opt.step()
    return heads.extract(groups=groups)


def _supervised_federated(spec: BaselineSpec, pool_X: np.ndarray,
                          pool_y: np.ndarray, rc: RunConfig) -> ParameterSet:
    cfg = rc.federation
    shards = partition_labeled(pool_X, pool_y, cfg.num_clients, cfg.seed)
    params = build_heads(rc.arch, cfg.seed).extract()
    counts = [x.shape[0] for x, _ in shards]
    for round_index in range(1, cfg.rounds + 1):
        updates = [
            _supervised_client(params, X, y, rc, round_index=round_index,
                               client_id=k + 1, mu=spec.fedprox_mu)
            for k, (X, y) in enumerate(shards)
        ]
        params = params.replace(fedavg(updates, counts))
    return params


def _federated_ssl(spec: BaselineSpec, split: DatasetSplit, rc: RunConfig,
                   numeric_mask: np.ndarray | None) -> ParameterSet:
    cfg = rc.federation
    method = _SSL_METHOD[spec.name]
    params = build_heads(rc.arch, cfg.seed).extract()
    counts = [s.n_k for s in split.shards]
    groups = (ENCODER,) if method == "cr" else (ENCODER, CLASSIFIER)
    for round_index in range(1, cfg.rounds + 1):
        updates = [
            _ssl_client(params, shard.X, method, spec, rc,
                        round_index=round_index, client_id=shard.client_id,
                        numeric_mask=numeric_mask)
            for shard in split.shards
        ]
        params = params.replace(fedavg(updates, counts).subset(groups))
        finetuned, _ = server_finetune(params, split.server_X, split.server_y,
                                       cfg, rc.arch, round_index=round_index)
        params = params.replace(finetuned)
    return params


def _centralized(X: np.ndarray, y: np.ndarray, rc: RunConfig) -> ParameterSet:
    """Round-structured centralized CE training; with the server's own data
    this is bit-identical to the protocol with the client phase removed."""
    cfg = rc.federation
    params = build_heads(rc.arch, cfg.seed).extract()
    for round_index in range(1, cfg.rounds + 1):
        finetuned, _ = server_finetune(params, X, y, cfg, rc.arch,
                                       round_index=round_index)
        params = params.replace(finetuned)
    return params


def run_baseline(spec: BaselineSpec, split: DatasetSplit, rc: RunConfig,
                 train_pool: tuple[np.ndarray, np.ndarray] | None = None,
                 numeric_mask: np.ndarray | None = None,
                 ) -> tuple[ParameterSet, MetricsReport]:
    """Train one comparison row and score it on the shared test set."""
    if spec.name in _ALL_DATA and train_pool is None:
        raise ConfigError(
            f"{spec.name} trains on the full labeled pool; pass train_pool")

    if spec.name == "CFedSSL_NID":
        params, _ = run_training(split, rc)
    elif spec.name in ("SFedAvg_AD", "SFedProx_AD"):
        params = _supervised_federated(spec, train_pool[0], train_pool[1], rc)
    elif spec.name == "CSL_SD":
        params = _centralized(split.server_X, split.server_y, rc)
    elif spec.name == "CSL_AD":
        params = _centralized(train_pool[0], train_pool[1], rc)
    else:
        params = _federated_ssl(spec, split, rc, numeric_mask)

    preds = predict(rc.arch, params, split.test_X)
    report = evaluate_predictions(split.test_y, preds,
                                  CLASS_NAMES[:rc.arch.num_classes])
    report.seeds = [rc.federation.seed]
    return params, report


def binary_report(multi_report_preds: np.ndarray,
                  test_y: np.ndarray) -> MetricsReport:
    """Score the binary view by collapsing 5-class predictions."""
    report = evaluate_predictions(binarize_labels(test_y),
                                  binarize_labels(multi_report_preds),
                                  ("Normal", "Attack"))
    return report


@dataclass
class SuiteRow:
    name: str
    multi: MetricsReport | None
    binary: MetricsReport | None
    seeds: list[int]
    error: str = ""


def run_suite(specs: list[BaselineSpec], split: DatasetSplit, rc: RunConfig,
              train_pool: tuple[np.ndarray, np.ndarray] | None = None,
              numeric_mask: np.ndarray | None = None,
              seeds: list[int] | None = None) -> list[SuiteRow]:
    """Each spec over >= 5 seeds, averaged; failures recorded, suite continues."""
    seeds = seeds or rc.seeds
    rows: list[SuiteRow] = []
    for spec in specs:
        multi_reports: list[MetricsReport] = []
        binary_reports: list[MetricsReport] = []
        error = ""
        for seed in seeds:
            seeded = dataclasses.replace(
                rc, federation=dataclasses.replace(rc.federation, seed=seed))
            try:
                t0 = time.perf_counter()
                params, report = run_baseline(spec, split, seeded, train_pool,
                                              numeric_mask)
                report.seeds = [seed]
                preds = predict(rc.arch, params, split.test_X)
                brep = binary_report(preds, split.test_y)
                brep.seeds = [seed]
                multi_reports.append(report)
                binary_reports.append(brep)
                logger.info("%s seed %d: acc %.2f f1 %.2f [%.0fs]", spec.name,
                            seed, report.accuracy, report.weighted_f1,
                            time.perf_counter() - t0)
            except Exception as exc:     # keep the suite going
                error = f"seed {seed}: {exc}"
                logger.exception("%s failed on seed %d", spec.name, seed)
        rows.append(SuiteRow(
            name=spec.name,
            multi=mean_report(multi_reports) if multi_reports else None,
            binary=mean_report(binary_reports) if binary_reports else None,
            seeds=[s for s in seeds][:len(multi_reports)] or list(seeds),
            error=error,
        ))
    return rows


def format_suite_table(rows: list[SuiteRow], view: str = "multi") -> str:
    """Text table in the comparison layout: Frameworks | Acc | Pre | Recall | F1.

    The binary view reports attack-class precision/recall/F1 alongside
    accuracy; the multi view reports quantity-weighted metrics.
    """
    lines = [f"{'Frameworks':<18}{'Acc':>8}{'Pre':>8}{'Recall':>8}{'F1':>8}"]
    for row in rows:
        report = row.multi if view == "multi" else row.binary
        if report is None:
            lines.append(f"{row.name:<18}  FAILED: {row.error}")
            continue
        if view == "binary":
            attack = report.per_class["Attack"]
            vals = (report.accuracy, attack["precision"], attack["recall"],
                    attack["f1"])
        else:
            vals = (report.accuracy, report.weighted_precision,
                    report.weighted_recall, report.weighted_f1)
        lines.append(f"{row.name:<18}" + "".join(f"{v:>8.2f}" for v in vals))
    return "\n".join(lines)


def suite_to_csv(rows: list[SuiteRow], path: Path, view: str = "multi") -> None:
    import csv as _csv
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["framework", "acc", "pre", "recall", "f1",
                         "seeds", "error"])
        for row in rows:
            report = row.multi if view == "multi" else row.binary
            if report is None:
                writer.writerow([row.name, "", "", "", "",
                                 " ".join(map(str, row.seeds)), row.error])
                continue
            if view == "binary":
                attack = report.per_class["Attack"]
                vals = [report.accuracy, attack["precision"],
                        attack["recall"], attack["f1"]]
            else:
                vals = [report.accuracy, report.weighted_precision,
                        report.weighted_recall, report.weighted_f1]
            writer.writerow([row.name] + [f"{v:.2f}" for v in vals]
                            + [" ".join(map(str, row.seeds)), row.error])


ABLATION_ORDER = ("no_augment", "no_contrastive", "no_ema", "full")
ABLATION_LABELS = {
    "no_augment": "w/o W/S Augs and Dropout",
    "no_contrastive": "w/o Latent Contrastive",
    "no_ema": "w/o EMA Update",
    "full": "CFedSSL-NID",
}


def run_ablations(split: DatasetSplit, rc: RunConfig,
                  numeric_mask=None, seeds: list[int] | None = None,
                  state=None) -> dict[str, MetricsReport]:
    """The four ablation rows, each averaged over the seed list."""
    seeds = seeds or rc.seeds
    out: dict[str, MetricsReport] = {}
    for key in ABLATION_ORDER:
        reports = []
        for seed in seeds:
            seeded = dataclasses.replace(
                rc, federation=dataclasses.replace(rc.federation, seed=seed))
            params, _ = run_training(split, seeded, variant=VARIANTS[key],
                                     state=state)
            preds = predict(rc.arch, params, split.test_X)
            report = evaluate_predictions(split.test_y, preds,
                                          CLASS_NAMES[:rc.arch.num_classes])
            report.seeds = [seed]
            reports.append(report)
        out[key] = mean_report(reports)
    return out


def format_ablation_table(reports: dict[str, MetricsReport]) -> str:
    lines = [f"{'Methods':<28}{'Acc':>8}{'Pre':>8}{'Recall':>8}{'F1':>8}"]
    for key in ABLATION_ORDER:
        report = reports[key]
        lines.append(
            f"{ABLATION_LABELS[key]:<28}{report.accuracy:>8.2f}"
            f"{report.weighted_precision:>8.2f}{report.weighted_recall:>8.2f}"
            f"{report.weighted_f1:>8.2f}")
    return "\n".join(lines)
