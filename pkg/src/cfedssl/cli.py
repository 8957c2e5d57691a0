"""Experiment front door: prepare / train / suite / report subcommands,
plus corpus synthesis and an augmentation-triple dump.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import dataset as ds
from . import synth
from .augment import augment_batch
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, TrainingError
from .evaluation import (evaluate_predictions, format_report, mean_report,
                         predict)
from .federation import run_training

logger = logging.getLogger(__name__)


def _apply_overrides(rc: RunConfig, args: argparse.Namespace) -> RunConfig:
    fed = rc.federation
    if getattr(args, "seed", None) is not None:
        fed = dataclasses.replace(fed, seed=args.seed)
        rc = dataclasses.replace(rc, federation=fed, seeds=[args.seed])
    if getattr(args, "seeds", None):
        rc = dataclasses.replace(rc, seeds=[int(s) for s in args.seeds])
    if getattr(args, "workers", None) is not None:
        rc = dataclasses.replace(rc, workers=args.workers)
    if getattr(args, "out", None) is not None:
        rc = dataclasses.replace(rc, output_dir=Path(args.out))
    if getattr(args, "data_root", None) is not None:
        rc = dataclasses.replace(rc, data_root=Path(args.data_root))
    if getattr(args, "artifact", None) is not None:
        rc = dataclasses.replace(rc, artifact_dir=Path(args.artifact))
    return rc


def _source_digest(rc: RunConfig) -> str:
    digest = hashlib.sha256()
    for path in (rc.train_path, rc.test_path):
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
    digest.update(f"{rc.server_labeled_count}/{rc.client_unlabeled_total}/"
                  f"{rc.federation.num_clients}/{rc.federation.seed}".encode())
    return digest.hexdigest()


def cmd_synth(args: argparse.Namespace) -> int:
    train_path, test_path = synth.generate(args.out, seed=args.seed or 0)
    print(f"wrote {train_path} ({synth.TRAIN_TOTAL} records)")
    print(f"wrote {test_path} ({synth.TEST_TOTAL} records)")
    return 0


def cmd_prepare(args: argparse.Namespace) -> int:
    rc = _apply_overrides(load_config(args.config), args)
    for path in (rc.train_path, rc.test_path):
        if not path.exists():
            raise ConfigError(f"dataset file not found: {path} "
                              f"(set data_root or CFEDSSL_DATA_ROOT)")
    source = _source_digest(rc)
    manifest_path = Path(rc.artifact_dir) / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        if manifest.get("source_digest") == source:
            print(f"artifact up to date: {rc.artifact_dir}")
            return 0

    train_records, test_records = ds.load_nslkdd(rc.train_path, rc.test_path)
    X_train, y_train, state = ds.preprocess(train_records)
    X_test, y_test = ds.transform(test_records, state)
    split = ds.partition(
        X_train, y_train,
        server_labeled_count=rc.server_labeled_count,
        client_unlabeled_total=rc.client_unlabeled_total,
        num_clients=rc.federation.num_clients,
        seed=rc.federation.seed,
        test_X=X_test, test_y=y_test,
    )
    out = ds.save_artifact(rc.artifact_dir, X_train=X_train, y_train=y_train,
                           X_test=X_test, y_test=y_test, split=split,
                           state=state, seed=rc.federation.seed)
    with open(out / "manifest.json") as fh:
        manifest = json.load(fh)
    manifest["source_digest"] = source
    manifest["taxonomy_version"] = ds.TAXONOMY_VERSION
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"prepared artifact at {out}: dim={manifest['dim']} "
          f"server={manifest['server_labeled_count']} "
          f"clients={manifest['num_clients']}x{manifest['shard_sizes'][0]}")
    return 0


def _final_reports(rc: RunConfig, params, split):
    preds = predict(rc.arch, params, split.test_X)
    multi = evaluate_predictions(split.test_y, preds,
                                 ds.CLASS_NAMES[:rc.arch.num_classes])
    binary = evaluate_predictions(ds.binarize_labels(split.test_y),
                                  ds.binarize_labels(preds),
                                  ("Normal", "Attack"))
    return multi, binary


def cmd_train(args: argparse.Namespace) -> int:
    rc = _apply_overrides(load_config(args.config), args)
    split, state, _ = ds.load_artifact(rc.artifact_dir)
    out_root = Path(rc.output_dir)
    multi_reports, binary_reports = [], []
    for seed in rc.seeds:
        seeded = dataclasses.replace(
            rc, federation=dataclasses.replace(rc.federation, seed=seed))
        run_dir = out_root / f"train_seed{seed}"
        params, _ = run_training(split, seeded, run_dir=run_dir, state=state,
                                 resume=args.resume)
        multi, binary = _final_reports(seeded, params, split)
        multi.seeds = [seed]
        binary.seeds = [seed]
        multi_reports.append(multi)
        binary_reports.append(binary)
        with open(run_dir / "final_report.json", "w") as fh:
            json.dump({"multi": multi.to_json(), "binary": binary.to_json()},
                      fh, indent=2)
        print(f"seed {seed}: acc {multi.accuracy:.2f} "
              f"f1 {multi.weighted_f1:.2f} "
              f"(binary acc {binary.accuracy:.2f})")

    multi_avg = mean_report(multi_reports)
    binary_avg = mean_report(binary_reports)
    out_root.mkdir(parents=True, exist_ok=True)
    with open(out_root / "final_report.json", "w") as fh:
        json.dump({
            "multi": multi_avg.to_json(),
            "binary": binary_avg.to_json(),
            "per_seed": [r.to_json() for r in multi_reports],
        }, fh, indent=2)
    text = (format_report(multi_avg, "5-class evaluation on the test set")
            + "\n\n"
            + format_report(binary_avg, "binary evaluation on the test set"))
    (out_root / "report.txt").write_text(text + "\n")
    print(text)
    return 0


def cmd_suite(args: argparse.Namespace) -> int:
    rc = _apply_overrides(load_config(args.config), args)
    split, state, _ = ds.load_artifact(rc.artifact_dir)
    numeric_mask = state.numeric_mask()
    out = Path(rc.output_dir) / "suite"
    out.mkdir(parents=True, exist_ok=True)

    sections: list[str] = []
    if args.part in ("all", "ablations"):
        reports = bl.run_ablations(split, rc, numeric_mask=numeric_mask,
                                   seeds=rc.seeds, state=state)
        table = bl.format_ablation_table(reports)
        (out / "ablations.txt").write_text(table + "\n")
        with open(out / "ablations.json", "w") as fh:
            json.dump({k: r.to_json() for k, r in reports.items()}, fh,
                      indent=2)
        sections.append("Ablation studies\n" + table)

    if args.part in ("all", "baselines"):
        names = rc.baseline_names or list(bl.BASELINE_NAMES)
        specs = [bl.make_spec(name, rc) for name in names]
        needs_pool = any(s.name in bl._ALL_DATA for s in specs)
        pool = ds.load_train_pool(rc.artifact_dir) if needs_pool else None
        rows = bl.run_suite(specs, split, rc, train_pool=pool,
                            numeric_mask=numeric_mask, seeds=rc.seeds)
        for view in ("binary", "multi"):
            table = bl.format_suite_table(rows, view)
            (out / f"comparison_{view}.txt").write_text(table + "\n")
            bl.suite_to_csv(rows, out / f"comparison_{view}.csv", view)
            sections.append(f"{view.capitalize()} classification comparison\n"
                            + table)

    print(("\n\n").join(sections))
    print(f"\nsuite outputs in {out}")
    return 0


def _augment_triples(rc: RunConfig, split, state, count: int = 3):
    rng = np.random.default_rng(rc.federation.seed)
    idx = rng.choice(split.test_X.shape[0], size=count, replace=False)
    X = split.test_X[idx]
    a, b, sigmas = augment_batch(X, rc.augment, rng, state.numeric_mask())
    return X, a, b, sigmas


def _write_triples_csv(path: Path, X, a, b) -> None:
    import csv as _csv
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["sample", "view"] + [f"f{j}" for j in range(X.shape[1])])
        for i in range(X.shape[0]):
            writer.writerow([i, "original"] + [f"{v:.4f}" for v in X[i]])
            writer.writerow([i, "weak"] + [f"{v:.4f}" for v in a[i]])
            writer.writerow([i, "strong"] + [f"{v:.4f}" for v in b[i]])


def cmd_dump_augment(args: argparse.Namespace) -> int:
    rc = _apply_overrides(load_config(args.config), args)
    split, state, _ = ds.load_artifact(rc.artifact_dir)
    X, a, b, sigmas = _augment_triples(rc, split, state, count=args.count)
    out = Path(args.out or "augment_triples.csv")
    _write_triples_csv(out, X, a, b)
    print(f"wrote {out} (sigmas: weak {sigmas[0]:.4f}, strong {sigmas[1]:.4f})")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(args.run_dir)
    report_path = run_dir / "final_report.json"
    if not report_path.exists():
        raise DataError(f"no final_report.json under {run_dir}; "
                        f"was the run completed?")
    with open(report_path) as fh:
        final = json.load(fh)

    out = Path(args.out) if args.out else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for view in ("multi", "binary"):
        if view not in final:
            continue
        data = final[view]
        lines.append(f"[{view}] Acc {data['accuracy']:.2f}  "
                     f"Pre {data['weighted_precision']:.2f}  "
                     f"Recall {data['weighted_recall']:.2f}  "
                     f"F1 {data['weighted_f1']:.2f}")
        counts = np.array(data["confusion"])
        names = data["class_names"]
        with open(out / f"confusion_{view}.csv", "w") as fh:
            fh.write("," + ",".join(names) + "\n")
            for i, name in enumerate(names):
                fh.write(name + "," + ",".join(str(c) for c in counts[i]) + "\n")
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(counts, cmap="Blues")
        ax.set_xticks(range(len(names)), names, rotation=45)
        ax.set_yticks(range(len(names)), names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        for i in range(len(names)):
            for j in range(len(names)):
                ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                        fontsize=7)
        fig.colorbar(im)
        fig.tight_layout()
        fig.savefig(out / f"confusion_{view}.png", dpi=120)
        plt.close(fig)

    metrics_log = run_dir / "metrics_log.csv"
    if metrics_log.exists():
        import csv as _csv
        series: dict[str, list[float]] = {}
        with open(metrics_log) as fh:
            for row in _csv.DictReader(fh):
                series.setdefault(row["loss_name"], []).append(float(row["value"]))
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, values in series.items():
            ax.plot(values, label=name, linewidth=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "loss_curves.png", dpi=120)
        plt.close(fig)

    config_path = run_dir / "config.ini"
    if config_path.exists():
        rc = load_config(config_path)
        if Path(rc.artifact_dir).exists():
            split, state, _ = ds.load_artifact(rc.artifact_dir)
            X, a, b, _ = _augment_triples(rc, split, state)
            _write_triples_csv(out / "augment_triples.csv", X, a, b)
            fig, ax = plt.subplots(figsize=(8, 3))
            ax.plot(X[0], label="original", linewidth=1.0)
            ax.plot(a[0], label="weak", linewidth=0.8, alpha=0.8)
            ax.plot(b[0], label="strong", linewidth=0.8, alpha=0.8)
            ax.set_xlabel("feature index")
            ax.legend()
            fig.tight_layout()
            fig.savefig(out / "augment_comparison.png", dpi=120)
            plt.close(fig)

    projections = run_dir / "projections.npz"
    if projections.exists():
        with np.load(projections) as npz:
            z, labels = npz["latents"], npz["labels"]
        centered = z - z.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        xy = centered @ vt[:2].T
        fig, ax = plt.subplots(figsize=(5, 5))
        for cls in np.unique(labels):
            m = labels == cls
            ax.scatter(xy[m, 0], xy[m, 1], s=4,
                       label=ds.CLASS_NAMES[cls] if cls < 5 else str(cls))
        ax.legend(markerscale=2)
        ax.set_title("projection latents (PCA)")
        fig.tight_layout()
        fig.savefig(out / "embedding_scatter.png", dpi=120)
        plt.close(fig)

    text = "\n".join(lines)
    (out / "report.txt").write_text(text + "\n")
    print(text)
    print(f"report artifacts in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfedssl",
        description="Federated semi-supervised intrusion detection "
                    "experiments on NSL-KDD",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, seeds=True):
        p.add_argument("--config", type=Path, default=None,
                       help="INI config file (defaults used when omitted)")
        p.add_argument("--seed", type=int, default=None)
        if seeds:
            p.add_argument("--seeds", nargs="*", default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", type=Path, default=None)
        p.add_argument("--data-root", type=Path, default=None)
        p.add_argument("--artifact", type=Path, default=None)

    p = sub.add_parser("synth", help="generate the synthetic NSL-KDD-format corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="preprocess and partition the dataset")
    add_common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="run the full training protocol")
    add_common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest round checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("suite", help="run ablations and baseline comparisons")
    add_common(p)
    p.add_argument("--part", choices=("all", "ablations", "baselines"),
                   default="all")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("report", help="render reports/plots for a finished run")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("dump-augment",
                       help="dump original/weak/strong triples as CSV")
    add_common(p, seeds=False)
    p.add_argument("--count", type=int, default=3)
    p.set_defaults(func=cmd_dump_augment)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
