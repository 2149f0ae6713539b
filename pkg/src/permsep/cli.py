"""Command-line entry point.

Subcommands cover the full experiment cycle:

    permsep gen-corpus --out corpus/
    permsep train --corpus corpus/ --algo upit --train 2+3spk \
        --mode multi_summed --out runs/upit_multi
    permsep eval --checkpoint runs/upit_multi/model.ckpt \
        --corpus corpus/ --test 2+3spk --out runs/upit_multi/eval
    permsep verify

Every run writes a resolved copy of its configuration beside its
outputs so results can be reproduced from the echoed file alone.
Exit codes: 0 success, 2 configuration error, 3 I/O error,
4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import verify as verify_mod
from .corpus import CorpusConfig, build_corpus, half_manifest, load_sample, read_manifest
from .errors import ConfigError, IoError, PermsepError, VerificationFailure
from .evaluation import (
    evaluate_entries,
    mean_improvement,
    model_masks,
    oracle_masks,
    write_aggregate_csv,
    write_sample_csv,
)
from .network import NetworkConfig, load_checkpoint, save_checkpoint
from .records import Section, find_all, read_records, write_records
from .signal_core import NormalizationStats
from .trainer import ScenarioSpec, TrainerConfig, compute_feature_stats, prepare_data, train

TRAIN_SET_CHOICES = {"2spk": (2,), "3spk": (3,), "2+3spk": (2, 3)}


def _load_config_sections(path: str | None) -> list[Section]:
    if path is None:
        return []
    p = Path(path)
    if not p.exists():
        raise IoError(f"config file {p} not found")
    return read_records(p)


def _section_or_none(sections: list[Section], name: str) -> Section | None:
    hits = find_all(sections, name)
    return hits[0] if hits else None


def _ensure_out_dir(out: str) -> Path:
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output dir {path}: {exc}") from exc
    return path


def cmd_gen_corpus(args) -> int:
    sections = _load_config_sections(args.config)
    sec = _section_or_none(sections, "corpus_config")
    config = CorpusConfig.from_section(sec) if sec else CorpusConfig()
    if args.half_train:
        config = dataclasses.replace(config, half_train=True)
    out = _ensure_out_dir(args.out)
    manifests = build_corpus(config, out, args.seed)
    for split, manifest in manifests.items():
        counts = ", ".join(f"{s}spk: {c}" for s, c in sorted(manifest.counts.items()))
        print(f"{split}: {counts}")
    print(f"corpus written to {out}")
    return 0


def _build_train_configs(args, sections) -> tuple[TrainerConfig, NetworkConfig, str]:
    counts = TRAIN_SET_CHOICES[args.train]
    scenarios = tuple(ScenarioSpec(i, c) for i, c in enumerate(counts))
    mode = args.mode
    if mode is None:
        mode = "single" if len(counts) == 1 else "multi_summed"
    if len(counts) == 1 and mode != "single":
        raise ConfigError(f"mode {mode} needs more than one scenario")
    if len(counts) > 1 and mode == "single":
        raise ConfigError("single mode cannot train on 2+3spk")

    t_sec = _section_or_none(sections, "trainer")
    if t_sec:
        tconf = TrainerConfig.from_section(t_sec, fallback_counts=counts)
    else:
        tconf = TrainerConfig(scenarios=scenarios)
    tconf = dataclasses.replace(
        tconf,
        scenarios=scenarios,
        algo=args.algo,
        mode=mode,
        seed=args.seed,
    )
    if args.max_epochs is not None:
        tconf = dataclasses.replace(tconf, max_epochs=args.max_epochs)

    n_sec = _section_or_none(sections, "network")
    if n_sec:
        nconf = NetworkConfig.from_section(n_sec)
        nconf = dataclasses.replace(
            nconf,
            head=args.algo,
            scenarios=counts if args.algo == "upit" else (),
        )
    else:
        nconf = NetworkConfig(
            head=args.algo,
            scenarios=counts if args.algo == "upit" else (),
        )
    train_label = args.train + ("-half" if args.half_train else "")
    return tconf, nconf, train_label


def cmd_train(args) -> int:
    corpus_dir = Path(args.corpus)
    if not corpus_dir.exists():
        raise IoError(f"corpus dir {corpus_dir} not found")
    sections = _load_config_sections(args.config)
    tconf, nconf, train_label = _build_train_configs(args, sections)

    train_manifest = read_manifest(corpus_dir, "train")
    if args.half_train:
        train_manifest = half_manifest(train_manifest)
    val_manifest = read_manifest(corpus_dir, "validation")

    speaker_counts = [s.speaker_count for s in tconf.scenarios]
    stats = compute_feature_stats(corpus_dir, train_manifest, speaker_counts)
    data = {}
    for spec in tconf.scenarios:
        silence = tconf.silence_db if tconf.algo == "dc" else None
        data[spec.scenario_id] = (
            prepare_data(corpus_dir, train_manifest, spec.speaker_count, tconf.algo, stats, silence),
            prepare_data(corpus_dir, val_manifest, spec.speaker_count, tconf.algo, stats, silence),
        )

    params, log = train(tconf, nconf, data)

    out = _ensure_out_dir(args.out)
    run_sec = Section("run")
    run_sec.set("command", "train")
    run_sec.set("train_set", train_label)
    run_sec.set("corpus", str(corpus_dir))
    extra = [tconf.to_section(), stats.to_section(), run_sec]
    save_checkpoint(out / "model.ckpt", params, nconf, extra_sections=extra)
    log.write_csv(out / "log.csv")
    write_records(out / "resolved_config.txt", [run_sec, nconf.to_section(), tconf.to_section()])

    print(f"trained {tconf.algo} on {train_label} ({tconf.mode})")
    if log.best_epoch >= 0:
        print(f"best epoch {log.best_epoch}, stop epoch {log.stop_epoch}, "
              f"wall {log.wall_time_s:.1f}s")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    corpus_dir = Path(args.corpus)
    if not corpus_dir.exists():
        raise IoError(f"corpus dir {corpus_dir} not found")
    test_manifest = read_manifest(corpus_dir, "test")
    scenarios = TRAIN_SET_CHOICES[args.test]
    out = _ensure_out_dir(args.out)

    if args.oracle_masks:
        algo_label, train_label = "oracle", "-"
        params = nconf = stats = None
    else:
        if args.checkpoint is None:
            raise ConfigError("eval needs --checkpoint (or --oracle-masks)")
        ckpt = Path(args.checkpoint)
        if not ckpt.exists():
            raise IoError(f"checkpoint {ckpt} not found")
        params, nconf, sections = load_checkpoint(ckpt)
        stats_sec = _section_or_none(sections, "stats")
        if stats_sec is None:
            raise ConfigError("checkpoint sidecar has no [stats] section")
        stats = NormalizationStats.from_section(stats_sec)
        algo_label = nconf.head
        run_sec = _section_or_none(sections, "run")
        train_label = run_sec.get("train_set", "?") if run_sec else "?"

    aggregate_rows = []
    for s in scenarios:
        entries = test_manifest.by_scenario(s)
        if not entries:
            raise ConfigError(f"test split has no {s}-speaker samples")
        if args.oracle_masks:
            make_masks = oracle_masks
        else:
            def make_masks(sample):
                return model_masks(params, nconf, stats, sample, seed=args.seed)
        rows = evaluate_entries(corpus_dir, entries, make_masks, load_sample)
        improvement = mean_improvement(rows)
        write_sample_csv(out / f"results_{s}spk.csv", rows)
        aggregate_rows.append((algo_label, train_label, f"{s}spk", improvement))
        print(f"test {s}spk: mean SDR improvement {improvement:+.2f} dB "
              f"({len(rows)} samples)")
    write_aggregate_csv(out / "aggregate.csv", aggregate_rows)

    run_sec = Section("run")
    run_sec.set("command", "eval")
    run_sec.set("test_set", args.test)
    run_sec.set("oracle_masks", args.oracle_masks)
    run_sec.set("seed", args.seed)
    if not args.oracle_masks:
        run_sec.set("checkpoint", str(args.checkpoint))
    write_records(out / "resolved_config.txt", [run_sec])
    return 0


def cmd_verify(args) -> int:
    results = verify_mod.run_all(args.seed)
    print(verify_mod.format_table(results))
    failed = [r for r in results if not r.passed]
    if failed:
        raise VerificationFailure(f"{len(failed)} suite(s) failed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="permsep",
        description="Permutation-invariant multi-speaker source separation, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-corpus", help="generate the synthetic mixture corpus")
    p_gen.add_argument("--config", help="structured-text config file")
    p_gen.add_argument("--seed", type=int, default=7)
    p_gen.add_argument("--half-train", action="store_true",
                       help="keep every second training sample")
    p_gen.add_argument("--out", required=True, help="corpus output directory")
    p_gen.set_defaults(fn=cmd_gen_corpus)

    p_train = sub.add_parser("train", help="train a separator")
    p_train.add_argument("--config", help="structured-text config file")
    p_train.add_argument("--corpus", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--algo", choices=("dc", "upit"), default="dc")
    p_train.add_argument("--train", choices=sorted(TRAIN_SET_CHOICES), default="2spk")
    p_train.add_argument("--mode", choices=("single", "multi_summed", "multi_joint"))
    p_train.add_argument("--half-train", action="store_true",
                         help="train on every second sample of the train split")
    p_train.add_argument("--max-epochs", type=int, default=None)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--corpus", required=True)
    p_eval.add_argument("--test", choices=sorted(TRAIN_SET_CHOICES), default="2+3spk")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--oracle-masks", action="store_true",
                        help="score the dominance-mask ceiling instead of a model")
    p_eval.set_defaults(fn=cmd_eval)

    p_verify = sub.add_parser("verify", help="run the oracle suites")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 4
    except (IoError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except PermsepError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
