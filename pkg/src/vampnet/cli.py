"""Command-line entry points: ingest, train, explain, synth, report.

Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 numeric
failure.  Every command is deterministic given --seed; train and synth
require it explicitly.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from .baselines import train_presence_baseline
from .checkpoint import LoadedVampnet, load_checkpoint, save_checkpoint
from .cohort import normalize_samples, read_cohort, write_cohort
from .config import RunConfig, load_run_config, override
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FileFormatError,
    NumericError,
    UsageError,
    VcfParseError,
)
from .explain import (
    ablation_report,
    aggregate_attributions,
    detect_hubs,
    extract_interactions,
    greedy_modularity,
    write_ablation_csv,
    write_attributions_csv,
    write_communities_csv,
    write_interactions_tsv,
)
from .synth import generate, write_truth_csv
from .tokens import collate
from .train import write_curves_csv, write_metrics_csv
from .vcf import ingest_cohort

_VAMPNET_ONLY = ("fusion", "masked", "no_path2", "encoding")


class _Parser(argparse.ArgumentParser):
    """Argparse that reports bad invocations through UsageError (exit 1)."""

    def error(self, message):
        raise UsageError(message)


def _bool_flag(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise UsageError(f"expected true/false, got {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vampnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="fold a VCF directory into a cohort file")
    p.add_argument("--vcf-dir", required=True)
    p.add_argument("--phenotypes", required=True)
    p.add_argument("--drug", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model configuration")
    p.add_argument("--cohort", required=True)
    p.add_argument("--model", default="vampnet", choices=("vampnet", "mlp", "cnn"))
    p.add_argument("--fusion", choices=("amplification", "suppression", "adaptive", "concat"))
    p.add_argument("--masked", type=_bool_flag)
    p.add_argument("--augment", type=_bool_flag)
    p.add_argument("--no-path2", action="store_true")
    p.add_argument("--encoding", choices=("static", "subword"))
    p.add_argument("--chi2-alpha", type=float)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("explain", help="emit interpretability artifacts")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--mode", required=True, choices=("ig", "ablate", "interactions", "communities"))
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort with planted signal")
    p.add_argument("--spec", help="run config file; [synth] section sets the generator")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="summarize metrics CSVs across runs")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    return parser


def cmd_ingest(args) -> int:
    samples, summary = ingest_cohort(args.vcf_dir, args.phenotypes, args.drug)
    write_cohort(args.out, samples, args.drug)
    for line in summary.lines():
        print(line)
    print(f"cohort written to {args.out}")
    return 0


def _train_flag_overrides(args, cfg: RunConfig) -> RunConfig:
    if args.model != "vampnet":
        given = [name for name in _VAMPNET_ONLY if getattr(args, name, None)]
        if given:
            flags = ", ".join("--" + n.replace("_", "-") for n in given)
            raise UsageError(f"{flags}: only valid with --model vampnet")
    if args.fusion is not None:
        cfg = override(cfg, "model.fusion", args.fusion)
    if args.masked is not None:
        cfg = override(cfg, "model.masked", str(args.masked))
    if args.no_path2:
        cfg = override(cfg, "model.use_path2", "false")
    if args.encoding is not None:
        cfg = override(cfg, "model.encoding", args.encoding)
    if args.augment is not None:
        cfg = override(cfg, "train.augment", str(args.augment))
    if args.chi2_alpha is not None:
        cfg = override(cfg, "baseline.alpha", repr(args.chi2_alpha))
    cfg = override(cfg, "train.seed", str(args.seed))
    cfg = override(cfg, "baseline.seed", str(args.seed))
    return cfg


def cmd_train(args) -> int:
    from .train import train_model

    cfg = _train_flag_overrides(args, load_run_config(args.config))
    samples, _ = read_cohort(args.cohort)
    if args.model == "vampnet":
        result = train_model(samples, cfg.model, cfg.train)
    else:
        result = train_presence_baseline(
            samples, args.model, cfg.baseline, mlp_cfg=cfg.mlp, cnn_cfg=cfg.cnn
        )
    out = Path(args.out)
    save_checkpoint(out, result)
    write_curves_csv(f"{out}.curves.csv", result.curves)
    write_metrics_csv(f"{out}.metrics.csv", result.metrics)
    test = result.metrics.get("test")
    if test is not None:
        print(f"test auc: {'NA' if test.auc is None else f'{test.auc:.4f}'}  f1: {test.f1:.4f}")
    print(f"checkpoint written to {out}")
    return 0


def cmd_explain(args) -> int:
    loaded = load_checkpoint(args.ckpt)
    if not isinstance(loaded, LoadedVampnet):
        raise UsageError(f"--mode {args.mode} needs a vampnet checkpoint, got {loaded.kind}")
    cfg = load_run_config(args.config).explain
    samples, _ = read_cohort(args.cohort)
    samples = normalize_samples(loaded.stats, samples)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, vocab, l_max = loaded.model, loaded.vocab, loaded.l_max

    if args.mode == "ig":
        rows = aggregate_attributions(model, samples, vocab, l_max, steps=cfg.steps)
        write_attributions_csv(out_dir / "attributions.csv", rows)
        print(f"wrote {out_dir / 'attributions.csv'} ({len(rows)} variants)")
        return 0
    if args.mode == "ablate":
        report = ablation_report(model, collate(samples, vocab, l_max))
        write_ablation_csv(out_dir / "ablation.csv", report)
        print(f"wrote {out_dir / 'ablation.csv'} (8 channels)")
        return 0
    matrix = extract_interactions(
        model, samples, vocab, l_max, min_occurrence=cfg.min_occurrence, layer=cfg.layer
    )
    if args.mode == "interactions":
        write_interactions_tsv(out_dir / "interactions.tsv", matrix)
        n_hubs = min(cfg.top_k, len(matrix.tokens))
        with open(out_dir / "hubs.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "degree"])
            if n_hubs:
                for token, degree in detect_hubs(matrix, n_hubs):
                    writer.writerow([token, repr(degree)])
        print(f"wrote {out_dir / 'interactions.tsv'} ({len(matrix.tokens)} variants)")
        return 0
    partition = greedy_modularity(matrix, edge_threshold=cfg.edge_threshold)
    write_communities_csv(out_dir / "communities.csv", partition)
    print(f"wrote {out_dir / 'communities.csv'} (Q={partition.q:.4f})")
    return 0


def cmd_synth(args) -> int:
    spec = dataclasses.replace(load_run_config(args.spec).synth, seed=args.seed)
    samples, truth = generate(spec)
    write_cohort(args.out, samples, spec.drug)
    write_truth_csv(f"{args.out}.truth.csv", truth)
    print(f"wrote {len(samples)} samples to {args.out}")
    print(f"planted ground truth in {args.out}.truth.csv")
    return 0


def cmd_report(args) -> int:
    runs = sorted(Path(args.runs).glob("*.metrics.csv"))
    rows = []
    for path in runs:
        name = path.name[: -len(".metrics.csv")]
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                if rec.get("split") == "test":
                    rows.append((name, rec))
    rows.sort(key=lambda r: -float(r[1]["auc"]) if r[1]["auc"] != "NA" else 1.0)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "n", "accuracy", "balanced_accuracy", "precision", "recall", "f1", "auc"])
        for name, rec in rows:
            writer.writerow(
                [name] + [rec[k] for k in ("n", "accuracy", "balanced_accuracy", "precision", "recall", "f1", "auc")]
            )
    if not rows:
        print(f"no *.metrics.csv files with a test split under {args.runs}", file=sys.stderr)
        return 2
    print(f"wrote {args.out} ({len(rows)} runs)")
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "explain": cmd_explain,
    "synth": cmd_synth,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (VcfParseError, FileFormatError, ConfigError, ContractError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (NumericError, DimensionError) as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
