#!/usr/bin/env python3
"""Train the full model grid on one corpus and tabulate test-set SDR
improvements.

Covers DC and uPIT on each single scenario, uPIT across both scenarios,
and the half-data variant, plus the oracle-mask ceiling. Each row gets
its own checkpoint directory under --out, so any model can be re-scored
later with `permsep eval`. The summary table and aggregate.csv land in
--out directly.

Typical use:

    python3 scripts/run_table_experiments.py --corpus corpus/ --out runs/
    python3 scripts/run_table_experiments.py --corpus corpus/ --out runs/ \
        --rows upit-2+3spk,upit-2+3spk-half --max-epochs 4
"""

import argparse
import sys
from pathlib import Path

from permsep.corpus import load_sample, read_corpus_config, read_manifest
from permsep.errors import PermsepError
from permsep.evaluation import (
    evaluate_entries,
    mean_improvement,
    oracle_masks,
    write_aggregate_csv,
    write_sample_csv,
)
from permsep.experiments import (
    TABLE_ROWS,
    evaluate_model,
    train_model,
    trainer_config,
)
from permsep.network import save_checkpoint
from permsep.records import Section


def parse_args(argv):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--corpus", required=True, help="corpus directory")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-epochs", type=int, default=None,
                        help="override the full-utterance epoch budget")
    parser.add_argument("--curriculum-epochs", type=int, default=None)
    parser.add_argument("--kmeans-restarts", type=int, default=10)
    parser.add_argument("--rows", default=None,
                        help="comma-separated row labels (default: all)")
    parser.add_argument("--skip-oracle", action="store_true")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    corpus = Path(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    specs = list(TABLE_ROWS)
    if args.rows:
        wanted = [r.strip() for r in args.rows.split(",")]
        by_label = {s.label: s for s in TABLE_ROWS}
        missing = [r for r in wanted if r not in by_label]
        if missing:
            print(f"unknown rows: {', '.join(missing)}", file=sys.stderr)
            return 2
        specs = [by_label[r] for r in wanted]

    corpus_config, _ = read_corpus_config(corpus)
    test_scenarios = corpus_config.scenarios
    overrides = {}
    if args.max_epochs is not None:
        overrides["max_epochs"] = args.max_epochs
    if args.curriculum_epochs is not None:
        overrides["curriculum_epochs"] = args.curriculum_epochs

    aggregate = []
    table = {}

    if not args.skip_oracle:
        manifest = read_manifest(corpus, "test")
        for s in test_scenarios:
            rows = evaluate_entries(corpus, manifest.by_scenario(s), oracle_masks, load_sample)
            imp = mean_improvement(rows)
            write_sample_csv(out / f"oracle_results_{s}spk.csv", rows)
            aggregate.append(("oracle", "-", f"{s}spk", imp))
            table[("oracle", s)] = imp
            print(f"oracle @ {s}spk: {imp:+.2f} dB", flush=True)

    for spec in specs:
        config = trainer_config(spec, seed=args.seed, **overrides)
        model = train_model(corpus, spec, config=config)
        run_dir = out / spec.label
        run_dir.mkdir(exist_ok=True)
        run_sec = Section("run")
        run_sec.set("command", "run_table_experiments")
        run_sec.set("train_set", spec.train_label)
        run_sec.set("corpus", str(corpus))
        save_checkpoint(run_dir / "model.ckpt", model.params, model.net_config,
                        extra_sections=[config.to_section(), model.stats.to_section(), run_sec])
        model.log.write_csv(run_dir / "log.csv")
        print(f"trained {spec.label}: {model.wall_s / 60:.1f} min, "
              f"best epoch {model.log.best_epoch}", flush=True)

        for s in test_scenarios:
            if not model.supports(s):
                table[(spec.label, s)] = None
                continue
            imp, rows = evaluate_model(corpus, model, s, seed=args.seed,
                                       kmeans_restarts=args.kmeans_restarts)
            write_sample_csv(run_dir / f"results_{s}spk.csv", rows)
            aggregate.append((spec.algo, spec.train_label, f"{s}spk", imp))
            table[(spec.label, s)] = imp
            print(f"  {spec.label} @ {s}spk: {imp:+.2f} dB", flush=True)

    write_aggregate_csv(out / "aggregate.csv", aggregate)

    labels = (["oracle"] if not args.skip_oracle else []) + [s.label for s in specs]
    width = max(len(lb) for lb in labels) + 2
    header = "model".ljust(width) + "".join(f"{s}spk test".rjust(12) for s in test_scenarios)
    print("\n" + header)
    print("-" * len(header))
    for lb in labels:
        cells = []
        for s in test_scenarios:
            v = table.get((lb, s))
            cells.append(f"{v:+.2f}".rjust(12) if v is not None else "-".rjust(12))
        print(lb.ljust(width) + "".join(cells))
    print(f"\naggregate: {out / 'aggregate.csv'}")
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except PermsepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(2)
