"""Reconstruction and SDR-improvement scoring.

Estimates are masked mixtures with the mixture phase reused. SDR is
the scalar-projection variant: project the estimate onto the
reference, score the residual, cap at +/-60 dB. Improvements are
measured against the mixture itself as the baseline estimate, with the
gain-scaled sources as references, on the overlap-add-exact interior
of the reconstruction. Speaker assignment is resolved by exhaustive
best-permutation search (S <= 3).
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import cluster_embeddings, masks_from_clusters
from .corpus import MixtureSample
from .errors import ScenarioMismatch, ShapeMismatch, UnsupportedScenario, ZeroReference
from .losses import Permutation, dominance_labels, silence_weights
from .network import MaskSet, NetworkConfig, ParameterVector, forward_dc, forward_upit
from .signal_core import (
    HOP,
    WINDOW_LEN,
    NormalizationStats,
    SignalBuffer,
    Spectrogram,
    extract_features,
    istft,
    stft,
)
from .util import ordered_map

SDR_CAP_DB = 60.0
EDGE = WINDOW_LEN - HOP  # overlap-add is exact past this many samples


@dataclass
class SeparationResult:
    estimates: list[SignalBuffer]
    permutation: Permutation  # mapping[s] = estimate index for reference s
    sdr_db: list[float]
    sdr_improvement_db: list[float]


@dataclass
class EvalRow:
    sample_id: str
    scenario: int
    sdr_db: list[float]
    improvement_db: list[float]
    permutation: tuple[int, ...]


def reconstruct(masks: MaskSet, mixture: Spectrogram) -> list[SignalBuffer]:
    """X_hat_s = M_s o Y, mixture phase retained, back to time domain."""
    if masks.masks.shape[1:] != mixture.values.shape:
        raise ShapeMismatch(
            f"masks cover {masks.masks.shape[1:]}, mixture is {mixture.values.shape}"
        )
    out = []
    for s in range(masks.scenario):
        out.append(istft(Spectrogram(masks.masks[s] * mixture.values)))
    return out


def sdr(estimate: SignalBuffer, reference: SignalBuffer) -> float:
    """Scalar-projection SDR in dB, capped to [-60, +60]."""
    x_hat = estimate.samples
    x = reference.samples
    if x_hat.shape != x.shape:
        raise ShapeMismatch(f"lengths differ: {x_hat.shape} vs {x.shape}")
    ref_energy = float(x @ x)
    if ref_energy == 0.0:
        raise ZeroReference("reference signal is all zero")
    s_target = (float(x_hat @ x) / ref_energy) * x
    num = float(s_target @ s_target)
    noise = x_hat - s_target
    den = float(noise @ noise)
    if num == 0.0:
        return -SDR_CAP_DB
    if den == 0.0:
        return SDR_CAP_DB
    value = 10.0 * np.log10(num / den)
    return float(np.clip(value, -SDR_CAP_DB, SDR_CAP_DB))


def score_estimates(estimates: list[SignalBuffer], sample: MixtureSample) -> SeparationResult:
    """Best-permutation SDR and improvement for time-domain estimates.

    All signals are cropped to the estimate length and then to the
    interior where overlap-add reconstruction is exact, so STFT edge
    attenuation does not bias the scores.
    """
    s_count = sample.scenario
    if len(estimates) != s_count:
        raise ScenarioMismatch(f"{len(estimates)} estimates for scenario {s_count}")
    total = len(estimates[0])
    crop = slice(EDGE, total - EDGE) if total > 2 * EDGE else slice(0, total)
    est = [e.samples[crop] for e in estimates]
    refs = [SignalBuffer(src.samples[:total][crop]) for src in sample.sources]
    mix = SignalBuffer(sample.mixture.samples[:total][crop])

    base = [sdr(mix, refs[s]) for s in range(s_count)]
    est_bufs = [SignalBuffer(e) for e in est]
    pair = [[sdr(est_bufs[i], refs[s]) for i in range(s_count)] for s in range(s_count)]

    best_perm = None
    best_mean = -np.inf
    for perm in itertools.permutations(range(s_count)):
        mean = sum(pair[s][perm[s]] for s in range(s_count)) / s_count
        if mean > best_mean:
            best_mean = mean
            best_perm = perm

    sdr_db = [pair[s][best_perm[s]] for s in range(s_count)]
    improvement = [sdr_db[s] - base[s] for s in range(s_count)]
    return SeparationResult(
        estimates=estimates,
        permutation=Permutation(tuple(best_perm)),
        sdr_db=sdr_db,
        sdr_improvement_db=improvement,
    )


def evaluate_sample(masks: MaskSet, sample: MixtureSample) -> SeparationResult:
    if masks.scenario != sample.scenario:
        raise ScenarioMismatch(
            f"masks for {masks.scenario} speakers, sample has {sample.scenario}"
        )
    estimates = reconstruct(masks, stft(sample.mixture))
    return score_estimates(estimates, sample)


# --- mask producers ----------------------------------------------------

def oracle_masks(sample: MixtureSample) -> MaskSet:
    """Binary dominance masks from the true sources: the corpus
    separation ceiling for mask-based methods with mixture phase."""
    source_mags = np.stack([np.abs(stft(src).values) for src in sample.sources])
    s_count, t_len, n_freq = source_mags.shape
    labels = dominance_labels(source_mags)
    masks = np.zeros((s_count, t_len * n_freq))
    masks[labels, np.arange(labels.shape[0])] = 1.0
    return MaskSet(masks.reshape(s_count, t_len, n_freq), scenario=s_count)


def model_masks(
    params: ParameterVector,
    net_config: NetworkConfig,
    stats: NormalizationStats,
    sample: MixtureSample,
    seed: int = 0,
    silence_db: float | None = 40.0,
    kmeans_restarts: int = 10,
) -> MaskSet:
    """Masks from a trained model: K-means on DC embeddings, or the
    scenario head's softmax masks for uPIT."""
    spec = stft(sample.mixture)
    feats = extract_features(spec, stats, noise_std=0.0)
    if net_config.head == "dc":
        emb = forward_dc(params, feats)
        weights = None
        if silence_db is not None:
            weights = silence_weights(spec.magnitude(), silence_db)
        assign = cluster_embeddings(
            emb, k=sample.scenario, seed=seed, restarts=kmeans_restarts, weights=weights
        )
        return masks_from_clusters(assign, spec.n_frames, spec.values.shape[1])
    if sample.scenario not in net_config.scenarios:
        raise UnsupportedScenario(
            f"model trained for scenarios {net_config.scenarios}, "
            f"sample has {sample.scenario}"
        )
    return forward_upit(params, feats, sample.scenario)


def evaluate_entries(corpus_dir, entries, make_masks, load) -> list[EvalRow]:
    """Score every manifest entry with masks from make_masks(sample).
    Per-sample work is pure, so it may fan out over threads; results
    are aggregated in manifest order either way."""

    def score(entry) -> EvalRow:
        sample = load(corpus_dir, entry)
        result = evaluate_sample(make_masks(sample), sample)
        return EvalRow(
            sample_id=entry.sample_id,
            scenario=entry.scenario,
            sdr_db=result.sdr_db,
            improvement_db=result.sdr_improvement_db,
            permutation=result.permutation.mapping,
        )

    return ordered_map(score, entries)


def mean_improvement(rows: list[EvalRow]) -> float:
    per_sample = [float(np.mean(r.improvement_db)) for r in rows]
    return float(np.mean(per_sample))


def write_sample_csv(path: str | Path, rows: list[EvalRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "scenario", "sdr_db", "improvement_db", "permutation"])
        for row in rows:
            writer.writerow(
                [
                    row.sample_id,
                    row.scenario,
                    " ".join(f"{v:.4f}" for v in row.sdr_db),
                    " ".join(f"{v:.4f}" for v in row.improvement_db),
                    " ".join(str(p) for p in row.permutation),
                ]
            )


def write_aggregate_csv(path: str | Path, rows: list[tuple[str, str, str, float]]) -> None:
    """Aggregate rows: (algorithm, train_set, test_set, mean improvement dB)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "train_set", "test_set", "mean_improvement_db"])
        for algo, train_label, test_label, value in rows:
            writer.writerow([algo, train_label, test_label, f"{value:.4f}"])
