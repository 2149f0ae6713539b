"""Orchestration for the standard experiment grid.

One model per row: DC and uPIT on each single scenario, uPIT across
both, and the half-data variant of the multi-scenario model. The same
helpers back the table script and the end-to-end checks, so a grid run
is a loop over TABLE_ROWS and nothing else.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

from .corpus import half_manifest, load_sample, read_manifest
from .evaluation import (
    EvalRow,
    evaluate_entries,
    mean_improvement,
    model_masks,
)
from .network import NetworkConfig, ParameterVector
from .signal_core import NormalizationStats
from .trainer import (
    ScenarioSpec,
    TrainerConfig,
    TrainingLog,
    compute_feature_stats,
    prepare_data,
    train,
)


@dataclass(frozen=True)
class ExperimentSpec:
    label: str
    algo: str  # dc | upit
    speaker_counts: tuple[int, ...]
    mode: str = "single"
    half_train: bool = False

    @property
    def train_label(self) -> str:
        base = "+".join(f"{c}" for c in self.speaker_counts) + "spk"
        return base + ("-half" if self.half_train else "")


TABLE_ROWS = (
    ExperimentSpec("dc-2spk", "dc", (2,)),
    ExperimentSpec("dc-3spk", "dc", (3,)),
    ExperimentSpec("upit-2spk", "upit", (2,)),
    ExperimentSpec("upit-3spk", "upit", (3,)),
    ExperimentSpec("upit-2+3spk", "upit", (2, 3), mode="multi_summed"),
    ExperimentSpec("upit-2+3spk-half", "upit", (2, 3), mode="multi_summed", half_train=True),
)


@dataclass
class TrainedModel:
    spec: ExperimentSpec
    params: ParameterVector
    net_config: NetworkConfig
    stats: NormalizationStats
    log: TrainingLog
    wall_s: float

    def supports(self, scenario: int) -> bool:
        """DC masks any speaker count; uPIT needs a matching head."""
        return self.spec.algo == "dc" or scenario in self.spec.speaker_counts


def trainer_config(spec: ExperimentSpec, seed: int = 0, **overrides) -> TrainerConfig:
    scenarios = tuple(ScenarioSpec(i, c) for i, c in enumerate(spec.speaker_counts))
    return TrainerConfig(
        scenarios=scenarios, algo=spec.algo, mode=spec.mode, seed=seed, **overrides
    )


def network_config(spec: ExperimentSpec, base: NetworkConfig | None = None) -> NetworkConfig:
    scenarios = spec.speaker_counts if spec.algo == "upit" else ()
    if base is None:
        return NetworkConfig(head=spec.algo, scenarios=scenarios)
    return dataclasses.replace(base, head=spec.algo, scenarios=scenarios)


def train_model(
    corpus_dir,
    spec: ExperimentSpec,
    config: TrainerConfig | None = None,
    net_config_base: NetworkConfig | None = None,
    seed: int = 0,
) -> TrainedModel:
    """Full training pipeline for one grid row: manifests, feature
    stats, data preparation, optimization. Prepared data is local to
    this call, so peak memory is one model's worth."""
    t0 = time.perf_counter()
    if config is None:
        config = trainer_config(spec, seed)
    nconf = network_config(spec, net_config_base)

    train_manifest = read_manifest(corpus_dir, "train")
    if spec.half_train:
        train_manifest = half_manifest(train_manifest)
    val_manifest = read_manifest(corpus_dir, "validation")

    stats = compute_feature_stats(corpus_dir, train_manifest, list(spec.speaker_counts))
    silence = config.silence_db if config.algo == "dc" else None
    data = {}
    for sspec in config.scenarios:
        data[sspec.scenario_id] = (
            prepare_data(corpus_dir, train_manifest, sspec.speaker_count, config.algo, stats, silence),
            prepare_data(corpus_dir, val_manifest, sspec.speaker_count, config.algo, stats, silence),
        )
    params, log = train(config, nconf, data)
    return TrainedModel(spec, params, nconf, stats, log, time.perf_counter() - t0)


def evaluate_model(
    corpus_dir,
    model: TrainedModel,
    scenario: int,
    seed: int = 0,
    kmeans_restarts: int = 10,
) -> tuple[float, list[EvalRow]]:
    """Mean test-set SDR improvement of one model on one scenario."""
    manifest = read_manifest(corpus_dir, "test")
    entries = manifest.by_scenario(scenario)

    def make_masks(sample):
        return model_masks(
            model.params, model.net_config, model.stats, sample,
            seed=seed, kmeans_restarts=kmeans_restarts,
        )

    rows = evaluate_entries(corpus_dir, entries, make_masks, load_sample)
    return mean_improvement(rows), rows
