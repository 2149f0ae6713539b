"""Adam optimization and the training loops.

Single-scenario training is the J=1 case of the summed multi-scenario
rule, so every mode shares one core loop. In multi_summed mode each
scenario keeps its own Adam moments, gradients for the other
scenarios' output heads are exact structural zeros, and the
per-scenario deltas are summed before one parameter write. Because
Adam with negligible epsilon is invariant to the gradient scale, the
summed rule needs no per-scenario loss weights. The joint mode (one
optimizer on the alpha-weighted gradient sum) is kept as the reference
this is compared against.

Training starts with a few epochs on 100-frame non-overlapping
segments, then switches to full utterances with early stopping on the
validation loss; the best-validation parameters are returned.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network
from .corpus import CorpusManifest, load_sample
from .errors import ConfigError, EmptyDataset, NonFiniteGradient
from .losses import dc_loss_core, dominance_labels, one_hot_rows, silence_weights, upit_loss_from_mags
from .network import NetworkConfig, ParameterVector, init_params
from .records import Section
from .signal_core import NormalizationStats, compute_stats, extract_features, log_magnitude, read_wav, stft
from .util import rng_for


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @staticmethod
    def fresh(n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> "AdamState":
        return AdamState(m=np.zeros(n), v=np.zeros(n), step=0, lr=lr,
                         beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_update(state: AdamState, grad: np.ndarray) -> np.ndarray:
    """One Adam step. Returns the parameter delta without applying it,
    so deltas from several scenarios can be summed; mutates state."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape:
        raise ConfigError(f"gradient length {grad.shape} vs state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient has non-finite entries")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return -state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def gd_update(lr: float, grad: np.ndarray) -> np.ndarray:
    """Plain gradient descent delta, for the equivalence checks."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient has non-finite entries")
    return -lr * grad


class EarlyStopper:
    """Stop after `patience` consecutive validation increases, each
    measured against the immediately previous value."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.prev: float | None = None
        self.best = np.inf
        self.best_epoch = -1
        self.rises = 0

    def update(self, value: float, epoch: int) -> bool:
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
        if self.prev is not None and value > self.prev:
            self.rises += 1
        else:
            self.rises = 0
        self.prev = value
        return self.rises >= self.patience


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: int
    speaker_count: int


@dataclass(frozen=True)
class TrainerConfig:
    scenarios: tuple[ScenarioSpec, ...]
    algo: str = "dc"  # dc | upit
    mode: str = "single"  # single | multi_summed | multi_joint
    alphas: tuple[float, ...] | None = None  # joint-loss weights, first is 1
    max_epochs: int = 8  # full-utterance phase; 0 skips training entirely
    curriculum_epochs: int = 3
    curriculum_segment_frames: int = 100
    early_stop_patience: int = 4
    seed: int = 0
    noise_std: float = 0.2
    silence_db: float | None = 40.0  # DC dominance weighting; None disables
    optimizer: str = "adam"  # adam | gd
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    snapshot_params: bool = False  # keep a copy of params after each full epoch

    def __post_init__(self):
        if self.algo not in ("dc", "upit"):
            raise ConfigError(f"unknown algo {self.algo!r}")
        if self.mode not in ("single", "multi_summed", "multi_joint"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.optimizer not in ("adam", "gd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not self.scenarios:
            raise ConfigError("need at least one scenario")
        if self.mode == "single" and len(self.scenarios) != 1:
            raise ConfigError("single mode takes exactly one scenario")
        ids = [s.scenario_id for s in self.scenarios]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate scenario ids")
        if self.alphas is not None:
            if len(self.alphas) != len(self.scenarios):
                raise ConfigError("one alpha per scenario")
            if self.alphas[0] != 1.0:
                raise ConfigError("the first loss scale factor is fixed at 1")
            if any(a < 0.0 for a in self.alphas):
                raise ConfigError("alphas must be non-negative")
        if self.early_stop_patience < 1:
            raise ConfigError("patience must be >= 1")

    def to_section(self) -> Section:
        sec = Section("trainer")
        sec.set("algo", self.algo)
        sec.set("mode", self.mode)
        sec.set("speaker_counts", [s.speaker_count for s in self.scenarios])
        if self.alphas is not None:
            sec.set("alphas", list(self.alphas))
        sec.set("max_epochs", self.max_epochs)
        sec.set("curriculum_epochs", self.curriculum_epochs)
        sec.set("curriculum_segment_frames", self.curriculum_segment_frames)
        sec.set("early_stop_patience", self.early_stop_patience)
        sec.set("seed", self.seed)
        sec.set("noise_std", self.noise_std)
        sec.set("silence_db", "none" if self.silence_db is None else self.silence_db)
        sec.set("optimizer", self.optimizer)
        sec.set("lr", self.lr)
        sec.set("beta1", self.beta1)
        sec.set("beta2", self.beta2)
        sec.set("epsilon", self.epsilon)
        return sec

    @staticmethod
    def from_section(sec: Section, fallback_counts=()) -> "TrainerConfig":
        if "speaker_counts" in sec.fields:
            counts = sec.get_ints("speaker_counts")
        else:
            counts = list(fallback_counts)
        silence = sec.get("silence_db", "40.0")
        alphas = None
        if "alphas" in sec.fields:
            alphas = tuple(sec.get_floats("alphas"))
        return TrainerConfig(
            scenarios=tuple(ScenarioSpec(i, c) for i, c in enumerate(counts)),
            algo=sec.get("algo", "dc"),
            mode=sec.get("mode", "single"),
            alphas=alphas,
            max_epochs=sec.get_int("max_epochs", 8),
            curriculum_epochs=sec.get_int("curriculum_epochs", 3),
            curriculum_segment_frames=sec.get_int("curriculum_segment_frames", 100),
            early_stop_patience=sec.get_int("early_stop_patience", 4),
            seed=sec.get_int("seed", 0),
            noise_std=sec.get_float("noise_std", 0.2),
            silence_db=None if silence == "none" else float(silence),
            optimizer=sec.get("optimizer", "adam"),
            lr=sec.get_float("lr", 1e-3),
            beta1=sec.get_float("beta1", 0.9),
            beta2=sec.get_float("beta2", 0.999),
            epsilon=sec.get_float("epsilon", 1e-8),
        )


@dataclass
class LogRow:
    phase: str
    epoch: int  # continuous across phases
    scenario_id: int
    split: str
    loss: float
    wall_ms: float


@dataclass
class TrainingLog:
    rows: list[LogRow] = field(default_factory=list)
    best_epoch: int = -1
    stop_epoch: int = -1
    wall_time_s: float = 0.0
    validation_history: list[float] = field(default_factory=list)
    param_snapshots: list[np.ndarray] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "scenario_id", "split", "loss", "wall_ms"])
            for row in self.rows:
                writer.writerow(
                    [row.epoch, row.scenario_id, row.split, f"{row.loss:.8g}", f"{row.wall_ms:.1f}"]
                )


@dataclass
class PreparedSample:
    """Everything one training step needs, precomputed."""

    sample_id: str
    features: np.ndarray  # (T, F) normalized log-magnitude, no noise
    mix_mag: np.ndarray  # (T, F)
    labels: np.ndarray | None = None  # (TF,) dominant speaker, DC only
    weights: np.ndarray | None = None  # (TF,) silence weights, DC only
    target_mags: np.ndarray | None = None  # (S, T, F), uPIT only

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def n_bins(self) -> int:
        return self.features.size

    def segment(self, t0: int, t1: int) -> "PreparedSample":
        n_freq = self.features.shape[1]
        return PreparedSample(
            sample_id=f"{self.sample_id}[{t0}:{t1}]",
            features=self.features[t0:t1],
            mix_mag=self.mix_mag[t0:t1],
            labels=None if self.labels is None else self.labels[t0 * n_freq:t1 * n_freq],
            weights=None if self.weights is None else self.weights[t0 * n_freq:t1 * n_freq],
            target_mags=None if self.target_mags is None else self.target_mags[:, t0:t1],
        )


def compute_feature_stats(
    corpus_dir: str | Path,
    manifest: CorpusManifest,
    speaker_counts: list[int],
) -> NormalizationStats:
    """Per-frequency stats over the training mixtures of the selected
    scenarios."""
    root = Path(corpus_dir)

    def log_mags():
        for count in speaker_counts:
            for entry in manifest.by_scenario(count):
                yield log_magnitude(stft(read_wav(root / entry.mixture_path)))

    return compute_stats(log_mags())


def prepare_data(
    corpus_dir: str | Path,
    manifest: CorpusManifest,
    speaker_count: int,
    algo: str,
    stats: NormalizationStats,
    silence_db: float | None = 40.0,
) -> list[PreparedSample]:
    """Load one scenario's samples and precompute features and targets."""
    items: list[PreparedSample] = []
    for entry in manifest.by_scenario(speaker_count):
        sample = load_sample(corpus_dir, entry)
        spec = stft(sample.mixture)
        feats = extract_features(spec, stats, noise_std=0.0).values
        mix_mag = spec.magnitude()
        source_mags = np.stack([np.abs(stft(src).values) for src in sample.sources])
        if algo == "dc":
            items.append(
                PreparedSample(
                    sample_id=entry.sample_id,
                    features=feats,
                    mix_mag=mix_mag,
                    labels=dominance_labels(source_mags),
                    weights=None if silence_db is None else silence_weights(mix_mag, silence_db),
                )
            )
        else:
            items.append(
                PreparedSample(
                    sample_id=entry.sample_id,
                    features=feats,
                    mix_mag=mix_mag,
                    target_mags=source_mags,
                )
            )
    return items


def segment_items(items: list[PreparedSample], seg_frames: int) -> list[PreparedSample]:
    """Non-overlapping fixed-length segments; the tail shorter than a
    segment is dropped. Samples shorter than one segment pass through
    whole."""
    out: list[PreparedSample] = []
    for item in items:
        t_len = item.n_frames
        if t_len < seg_frames:
            out.append(item)
            continue
        for t0 in range(0, t_len - seg_frames + 1, seg_frames):
            out.append(item.segment(t0, t0 + seg_frames))
    return out


def _loss_and_grad(params, net_config, algo, s_count, item, feats):
    trunk_out, cache = network.forward_trunk(params, feats)
    n_freq = feats.shape[1]
    if algo == "dc":
        head = network._dc_head(params, trunk_out, n_freq)
        w_rows = one_hot_rows(item.labels, s_count)
        value, gmat = dc_loss_core(head[0], w_rows, item.weights)
        grad = network.backward(
            params, feats, gmat, "dc", cache=(trunk_out, cache, head)
        )
    else:
        masks = network._upit_head(params, trunk_out, s_count, n_freq)
        lv = upit_loss_from_mags(masks, item.mix_mag, item.target_mags)
        value = lv.value
        grad = network.backward(
            params, feats, lv.gradient, s_count, cache=(trunk_out, cache, masks)
        )
    return value, grad


def _loss_only(params, net_config, algo, s_count, item):
    trunk_out, _ = network.forward_trunk(params, item.features)
    n_freq = item.features.shape[1]
    if algo == "dc":
        v, _, _, _ = network._dc_head(params, trunk_out, n_freq)
        w_rows = one_hot_rows(item.labels, s_count)
        value, _ = dc_loss_core(v, w_rows, item.weights)
        return value
    masks = network._upit_head(params, trunk_out, s_count, n_freq)
    return upit_loss_from_mags(masks, item.mix_mag, item.target_mags).value


def _train_core(
    config: TrainerConfig,
    net_config: NetworkConfig,
    data: dict[int, tuple[list[PreparedSample], list[PreparedSample]]],
) -> tuple[ParameterVector, TrainingLog]:
    for spec in config.scenarios:
        if spec.scenario_id not in data:
            raise EmptyDataset(f"no data for scenario {spec.scenario_id}")
        train_items, val_items = data[spec.scenario_id]
        if not train_items or not val_items:
            raise EmptyDataset(f"scenario {spec.scenario_id} has an empty split")

    params = init_params(net_config, config.seed)
    log = TrainingLog()
    if config.max_epochs == 0:
        return params, log

    t_start = time.perf_counter()
    alphas = config.alphas or tuple(1.0 for _ in config.scenarios)
    joint = config.mode == "multi_joint"

    def fresh_state():
        return AdamState.fresh(params.size, config.lr, config.beta1, config.beta2, config.epsilon)

    if joint:
        joint_state = fresh_state()
    else:
        states = {spec.scenario_id: fresh_state() for spec in config.scenarios}

    def run_epoch(datasets, phase, epoch):
        orders = {}
        for spec in config.scenarios:
            n = len(datasets[spec.scenario_id])
            rng = rng_for(config.seed, "shuffle", spec.scenario_id, phase, epoch)
            orders[spec.scenario_id] = rng.permutation(n)
        steps = max(len(datasets[s.scenario_id]) for s in config.scenarios)
        loss_sum = {s.scenario_id: 0.0 for s in config.scenarios}
        wall = {s.scenario_id: 0.0 for s in config.scenarios}
        for step in range(steps):
            total_delta = None
            total_grad = None
            for j, spec in enumerate(config.scenarios):
                t0 = time.perf_counter()
                ds = datasets[spec.scenario_id]
                item = ds[orders[spec.scenario_id][step % len(ds)]]
                if config.noise_std > 0.0:
                    noise_rng = rng_for(config.seed, "noise", spec.scenario_id, phase, epoch, step)
                    feats = item.features + config.noise_std * noise_rng.standard_normal(item.features.shape)
                else:
                    feats = item.features
                value, grad = _loss_and_grad(params, net_config, config.algo, spec.speaker_count, item, feats)
                loss_sum[spec.scenario_id] += value / item.n_bins
                if alphas[j] != 1.0:
                    grad = alphas[j] * grad
                if joint:
                    total_grad = grad if total_grad is None else total_grad + grad
                else:
                    if config.optimizer == "adam":
                        delta = adam_update(states[spec.scenario_id], grad)
                    else:
                        delta = gd_update(config.lr, grad)
                    total_delta = delta if total_delta is None else total_delta + delta
                wall[spec.scenario_id] += time.perf_counter() - t0
            if joint:
                if config.optimizer == "adam":
                    total_delta = adam_update(joint_state, total_grad)
                else:
                    total_delta = gd_update(config.lr, total_grad)
            params.values += total_delta
        for spec in config.scenarios:
            log.rows.append(LogRow(phase, epoch, spec.scenario_id, "train",
                                   loss_sum[spec.scenario_id] / steps,
                                   wall[spec.scenario_id] * 1e3))

    def validation_total(epoch):
        total = 0.0
        for spec in config.scenarios:
            t0 = time.perf_counter()
            _, val_items = data[spec.scenario_id]
            vloss = sum(
                _loss_only(params, net_config, config.algo, spec.speaker_count, it) / it.n_bins
                for it in val_items
            ) / len(val_items)
            log.rows.append(LogRow("full", epoch, spec.scenario_id, "validation",
                                   vloss, (time.perf_counter() - t0) * 1e3))
            total += vloss
        return total

    # phase 1: short non-overlapping segments
    seg_data = {
        spec.scenario_id: segment_items(data[spec.scenario_id][0], config.curriculum_segment_frames)
        for spec in config.scenarios
    }
    for epoch in range(config.curriculum_epochs):
        run_epoch(seg_data, "segments", epoch)

    # phase 2: full utterances with early stopping
    full_data = {spec.scenario_id: data[spec.scenario_id][0] for spec in config.scenarios}
    stopper = EarlyStopper(config.early_stop_patience)
    best_params = params.copy()
    offset = config.curriculum_epochs
    for epoch in range(config.max_epochs):
        epoch_id = offset + epoch
        run_epoch(full_data, "full", epoch_id)
        total = validation_total(epoch_id)
        log.validation_history.append(total)
        stop = stopper.update(total, epoch_id)
        if stopper.best_epoch == epoch_id:
            best_params = params.copy()
        if config.snapshot_params:
            log.param_snapshots.append(params.values.copy())
        if stop:
            log.stop_epoch = epoch_id
            break
    log.best_epoch = stopper.best_epoch
    log.wall_time_s = time.perf_counter() - t_start
    return best_params, log


def train_single(config: TrainerConfig, net_config: NetworkConfig, data) -> tuple[ParameterVector, TrainingLog]:
    if config.mode != "single":
        raise ConfigError(f"train_single called with mode {config.mode!r}")
    return _train_core(config, net_config, data)


def train_multi_summed(config: TrainerConfig, net_config: NetworkConfig, data) -> tuple[ParameterVector, TrainingLog]:
    if config.mode != "multi_summed":
        raise ConfigError(f"train_multi_summed called with mode {config.mode!r}")
    return _train_core(config, net_config, data)


def train_multi_joint(config: TrainerConfig, net_config: NetworkConfig, data) -> tuple[ParameterVector, TrainingLog]:
    if config.mode != "multi_joint":
        raise ConfigError(f"train_multi_joint called with mode {config.mode!r}")
    return _train_core(config, net_config, data)


def train(config: TrainerConfig, net_config: NetworkConfig, data) -> tuple[ParameterVector, TrainingLog]:
    if config.mode == "single":
        return train_single(config, net_config, data)
    if config.mode == "multi_summed":
        return train_multi_summed(config, net_config, data)
    return train_multi_joint(config, net_config, data)
