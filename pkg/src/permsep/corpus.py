"""Deterministic synthetic mixture corpus.

Real speech is replaced by harmonic "speakers": each speaker has a
fixed fundamental, an 8-coefficient harmonic amplitude profile, and a
band limit, modulated by a slow random envelope plus band-limited
noise 20 dB down. Distinct fundamentals give the models a learnable
separation cue. Mixtures follow the usual recipe: draw utterances,
truncate to the shortest, apply per-source gains in [0, 5] dB, sum.

Everything is a pure function of the corpus seed; manifests are plain
text so diffs are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DuplicateSpeaker, InvalidDuration, IoError
from .records import Section, find_section, find_all, read_records, write_records
from .signal_core import SAMPLE_RATE, SignalBuffer, dequantize, quantize, read_wav, write_wav
from .util import rng_for

GENERATOR_VERSION = 1
N_TIMBRE = 8
F0_LOW, F0_HIGH = 110.0, 320.0
PEAK_TARGET = 0.5
NOISE_REL_DB = -20.0
HEADROOM_PEAK = 0.98


@dataclass(frozen=True)
class SyntheticSpeaker:
    speaker_id: int
    f0: float
    timbre: tuple[float, ...]  # N_TIMBRE harmonic amplitudes
    band: tuple[float, float]  # low/high filter edges, Hz

    def __post_init__(self):
        if not (F0_LOW <= self.f0 <= F0_HIGH):
            raise ConfigError(f"f0 {self.f0} outside [{F0_LOW}, {F0_HIGH}]")
        if len(self.timbre) != N_TIMBRE:
            raise ConfigError(f"timbre needs {N_TIMBRE} coefficients")
        low, high = self.band
        if not (0.0 < low < high < 4000.0):
            raise ConfigError(f"band {self.band} outside (0, 4000)")


@dataclass
class MixtureSample:
    mixture: SignalBuffer
    sources: list[SignalBuffer]  # gain-scaled, the components actually summed
    gains_db: list[float]
    speaker_ids: list[int]
    scenario: int

    def __post_init__(self):
        if len(self.speaker_ids) != len(set(self.speaker_ids)):
            raise DuplicateSpeaker(f"repeated speaker in {self.speaker_ids}")
        if len(self.sources) != self.scenario:
            raise ConfigError(
                f"{len(self.sources)} sources for scenario {self.scenario}"
            )


@dataclass
class SampleEntry:
    sample_id: str
    scenario: int
    speaker_ids: list[int]
    gains_db: list[float]
    mixture_path: str  # relative to the corpus root
    source_paths: list[str]


@dataclass
class CorpusManifest:
    split: str
    samples: list[SampleEntry]
    seed: int
    counts: dict[int, int] = field(default_factory=dict)

    def by_scenario(self, scenario: int) -> list[SampleEntry]:
        return [s for s in self.samples if s.scenario == scenario]


@dataclass(frozen=True)
class CorpusConfig:
    scenarios: tuple[int, ...] = (2, 3)
    train_per_scenario: int = 600
    validation_per_scenario: int = 150
    test_per_scenario: int = 100
    pool_speakers: int = 14  # shared by train and validation
    test_speakers: int = 7  # held out, disjoint ids
    duration_range_s: tuple[float, float] = (1.0, 4.0)  # per-utterance draw
    half_train: bool = False

    def __post_init__(self):
        if any(s < 2 or s > 3 for s in self.scenarios):
            raise ConfigError("scenarios must be 2 or 3 speakers")
        if self.pool_speakers + self.test_speakers < 12:
            raise ConfigError("speaker pool too small (need >= 12 total)")
        if self.pool_speakers < max(self.scenarios) or self.test_speakers < max(self.scenarios):
            raise ConfigError("each pool must cover the largest scenario")
        lo, hi = self.duration_range_s
        if not (1.0 <= lo <= hi <= 4.0):
            raise ConfigError("duration_range_s must satisfy 1 <= lo <= hi <= 4")

    def to_section(self) -> Section:
        sec = Section("corpus_config")
        sec.set("scenarios", list(self.scenarios))
        sec.set("train_per_scenario", self.train_per_scenario)
        sec.set("validation_per_scenario", self.validation_per_scenario)
        sec.set("test_per_scenario", self.test_per_scenario)
        sec.set("pool_speakers", self.pool_speakers)
        sec.set("test_speakers", self.test_speakers)
        sec.set("duration_range_s", list(self.duration_range_s))
        sec.set("half_train", self.half_train)
        return sec

    @staticmethod
    def from_section(sec: Section) -> "CorpusConfig":
        durations = sec.get_floats("duration_range_s")
        return CorpusConfig(
            scenarios=tuple(sec.get_ints("scenarios")),
            train_per_scenario=sec.get_int("train_per_scenario", 600),
            validation_per_scenario=sec.get_int("validation_per_scenario", 150),
            test_per_scenario=sec.get_int("test_per_scenario", 100),
            pool_speakers=sec.get_int("pool_speakers", 14),
            test_speakers=sec.get_int("test_speakers", 7),
            duration_range_s=tuple(durations) if durations else (1.0, 4.0),
            half_train=sec.get_bool("half_train", False),
        )


def speaker_pool(count: int, seed: int, id_offset: int = 0) -> list[SyntheticSpeaker]:
    """Fundamentals evenly spaced across [F0_LOW, F0_HIGH]; the spacing
    stays >= 10 Hz for count <= 22."""
    if count < 1:
        raise ConfigError("need at least one speaker")
    spacing = (F0_HIGH - F0_LOW) / max(count - 1, 1)
    if count > 1 and spacing < 10.0:
        raise ConfigError(f"{count} speakers squeeze f0 spacing below 10 Hz")
    rng = rng_for(seed, "speakers", id_offset)
    speakers = []
    for i in range(count):
        f0 = F0_LOW + i * spacing if count > 1 else (F0_LOW + F0_HIGH) / 2.0
        decay = 1.0 / (1.0 + np.arange(N_TIMBRE))
        timbre = tuple(rng.uniform(0.2, 1.0, N_TIMBRE) * decay)
        low = float(rng.uniform(60.0, 120.0))
        high = float(rng.uniform(2500.0, 3900.0))
        speakers.append(
            SyntheticSpeaker(speaker_id=id_offset + i, f0=float(f0), timbre=timbre, band=(low, high))
        )
    return speakers


def synthesize_utterance(speaker: SyntheticSpeaker, duration_s: float, seed: int) -> SignalBuffer:
    """Harmonic complex at the speaker's f0, slow random amplitude
    envelope (0.5-4 Hz), band-limited noise 20 dB down, peak 0.5."""
    if not (0.5 <= duration_s <= 10.0):
        raise InvalidDuration(f"duration {duration_s}s outside [0.5, 10]")
    n = int(round(duration_s * SAMPLE_RATE))
    rng = rng_for(seed, "utterance", speaker.speaker_id)
    t = np.arange(n) / SAMPLE_RATE

    phases = rng.uniform(0.0, 2.0 * np.pi, N_TIMBRE)
    low, high = speaker.band
    x = np.zeros(n)
    for k in range(N_TIMBRE):
        freq = speaker.f0 * (k + 1)
        if low <= freq <= high:
            x += speaker.timbre[k] * np.sin(2.0 * np.pi * freq * t + phases[k])

    # slow positive envelope built from a few random modulators
    mod_freqs = rng.uniform(0.5, 4.0, 3)
    mod_phases = rng.uniform(0.0, 2.0 * np.pi, 3)
    m = np.cos(2.0 * np.pi * mod_freqs[:, None] * t[None, :] + mod_phases[:, None]).mean(axis=0)
    envelope = 0.3 + 0.35 * (1.0 + m)  # in [0.3, 1.0]
    x *= envelope

    # band-limited noise, -20 dB relative to the harmonic part
    noise = rng.standard_normal(n)
    spectrum = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    spectrum[(freqs < low) | (freqs > high)] = 0.0
    noise = np.fft.irfft(spectrum, n=n)
    rms_x = np.sqrt(np.mean(x * x))
    rms_n = np.sqrt(np.mean(noise * noise))
    if rms_n > 0.0:
        noise *= rms_x * 10.0 ** (NOISE_REL_DB / 20.0) / rms_n
    x = x + noise

    peak = np.abs(x).max()
    if peak > 0.0:
        x *= PEAK_TARGET / peak
    return SignalBuffer(x)


def make_mixture(
    speakers: list[SyntheticSpeaker],
    seed: int,
    duration_range: tuple[float, float] = (1.0, 4.0),
) -> MixtureSample:
    """Draw utterances, truncate to the shortest, apply [0, 5] dB gains,
    sum. All sources are rescaled together if the mixture would clip in
    16-bit WAV."""
    if not (2 <= len(speakers) <= 3):
        raise ConfigError(f"need 2 or 3 speakers, got {len(speakers)}")
    ids = [sp.speaker_id for sp in speakers]
    if len(set(ids)) != len(ids):
        raise DuplicateSpeaker(f"repeated speaker in {ids}")
    s_count = len(speakers)
    rng = rng_for(seed, "mixture")
    durations = rng.uniform(duration_range[0], duration_range[1], s_count)
    gains_db = rng.uniform(0.0, 5.0, s_count)
    utt_seeds = rng.integers(0, 2**63 - 1, s_count)

    raw = [
        synthesize_utterance(sp, float(durations[i]), int(utt_seeds[i]))
        for i, sp in enumerate(speakers)
    ]
    shortest = min(len(buf) for buf in raw)
    sources = []
    for i, buf in enumerate(raw):
        scale = 10.0 ** (gains_db[i] / 20.0)
        sources.append(buf.samples[:shortest] * scale)
    mixture = np.sum(sources, axis=0)

    peak = np.abs(mixture).max()
    if peak > HEADROOM_PEAK:
        shrink = HEADROOM_PEAK / peak
        sources = [src * shrink for src in sources]
        mixture = mixture * shrink

    return MixtureSample(
        mixture=SignalBuffer(mixture),
        sources=[SignalBuffer(src) for src in sources],
        gains_db=[float(g) for g in gains_db],
        speaker_ids=ids,
        scenario=s_count,
    )


# --- corpus on disk ---------------------------------------------------

def _sample_seed(corpus_seed: int, split: str, scenario: int, index: int) -> int:
    return int(rng_for(corpus_seed, "sample", split, scenario, index).integers(0, 2**63 - 1))


def _write_sample(root: Path, split: str, sample_id: str, sample: MixtureSample) -> SampleEntry:
    """Write the sources, then write the mixture as the sum of the
    quantized sources so additivity survives the 16-bit round trip."""
    sub = root / split
    sub.mkdir(parents=True, exist_ok=True)
    source_paths = []
    quantized_sum = None
    for i, src in enumerate(sample.sources):
        rel = f"{split}/{sample_id}_src{i}.wav"
        write_wav(root / rel, src)
        source_paths.append(rel)
        deq = dequantize(quantize(src.samples))
        quantized_sum = deq if quantized_sum is None else quantized_sum + deq
    mix_rel = f"{split}/{sample_id}_mix.wav"
    write_wav(root / mix_rel, SignalBuffer(quantized_sum))
    return SampleEntry(
        sample_id=sample_id,
        scenario=sample.scenario,
        speaker_ids=list(sample.speaker_ids),
        gains_db=list(sample.gains_db),
        mixture_path=mix_rel,
        source_paths=source_paths,
    )


def _manifest_sections(manifest: CorpusManifest) -> list[Section]:
    head = Section("manifest")
    head.set("split", manifest.split)
    head.set("seed", manifest.seed)
    for scenario, count in sorted(manifest.counts.items()):
        head.set(f"count_{scenario}spk", count)
    sections = [head]
    for entry in manifest.samples:
        sec = Section("sample")
        sec.set("sample_id", entry.sample_id)
        sec.set("scenario", entry.scenario)
        sec.set("speaker_ids", entry.speaker_ids)
        sec.set("gains_db", entry.gains_db)
        sec.set("mixture", entry.mixture_path)
        sec.set("sources", entry.source_paths)
        sections.append(sec)
    return sections


def _manifest_from_sections(sections: list[Section]) -> CorpusManifest:
    head = find_section(sections, "manifest")
    samples = []
    counts: dict[int, int] = {}
    for sec in find_all(sections, "sample"):
        entry = SampleEntry(
            sample_id=sec.get("sample_id"),
            scenario=sec.get_int("scenario"),
            speaker_ids=sec.get_ints("speaker_ids"),
            gains_db=sec.get_floats("gains_db"),
            mixture_path=sec.get("mixture"),
            source_paths=sec.get_list("sources"),
        )
        samples.append(entry)
        counts[entry.scenario] = counts.get(entry.scenario, 0) + 1
    return CorpusManifest(
        split=head.get("split"),
        samples=samples,
        seed=head.get_int("seed"),
        counts=counts,
    )


def build_corpus(config: CorpusConfig, out_dir: str | Path, seed: int) -> dict[str, CorpusManifest]:
    """Generate WAVs and manifests for all three splits. Each sample is
    a pure function of (seed, split, scenario, index), so half_train
    keeps exactly the even-index subset of the full corpus."""
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {root}: {exc}") from exc
    if not _writable(root):
        raise IoError(f"out_dir {root} is not writable")

    pool = speaker_pool(config.pool_speakers, seed, id_offset=0)
    test_pool = speaker_pool(config.test_speakers, seed, id_offset=100)

    split_plan = {
        "train": (config.train_per_scenario, pool),
        "validation": (config.validation_per_scenario, pool),
        "test": (config.test_per_scenario, test_pool),
    }
    manifests: dict[str, CorpusManifest] = {}
    for split, (count, speakers) in split_plan.items():
        entries: list[SampleEntry] = []
        counts: dict[int, int] = {}
        for scenario in config.scenarios:
            indices = range(count)
            if config.half_train and split == "train":
                indices = range(0, count, 2)
            for index in indices:
                s_seed = _sample_seed(seed, split, scenario, index)
                pick = rng_for(s_seed, "speakers").choice(len(speakers), size=scenario, replace=False)
                chosen = [speakers[int(i)] for i in pick]
                sample = make_mixture(chosen, s_seed, duration_range=config.duration_range_s)
                sample_id = f"{scenario}spk_{index:04d}"
                entries.append(_write_sample(root, split, sample_id, sample))
                counts[scenario] = counts.get(scenario, 0) + 1
        manifest = CorpusManifest(split=split, samples=entries, seed=seed, counts=counts)
        write_records(root / f"{split}.txt", _manifest_sections(manifest))
        manifests[split] = manifest

    descriptor = Section("corpus")
    descriptor.set("seed", seed)
    descriptor.set("generator_version", GENERATOR_VERSION)
    descriptor.set("pool_speaker_ids", [sp.speaker_id for sp in pool])
    descriptor.set("test_speaker_ids", [sp.speaker_id for sp in test_pool])
    write_records(root / "corpus.txt", [descriptor, config.to_section()])
    return manifests


def _writable(root: Path) -> bool:
    probe = root / ".write_probe"
    try:
        probe.write_text("", encoding="utf-8")
        probe.unlink()
        return True
    except OSError:
        return False


def half_manifest(manifest: CorpusManifest) -> CorpusManifest:
    """Every second sample per scenario (even indices), for the
    half-training-data experiments. Other splits are left to the
    caller untouched."""
    samples: list[SampleEntry] = []
    counts: dict[int, int] = {}
    for scenario in sorted(manifest.counts):
        kept = manifest.by_scenario(scenario)[::2]
        samples.extend(kept)
        counts[scenario] = len(kept)
    return CorpusManifest(split=manifest.split, samples=samples, seed=manifest.seed, counts=counts)


def read_manifest(corpus_dir: str | Path, split: str) -> CorpusManifest:
    path = Path(corpus_dir) / f"{split}.txt"
    if not path.exists():
        raise IoError(f"missing manifest {path}")
    return _manifest_from_sections(read_records(path))


def read_corpus_config(corpus_dir: str | Path) -> tuple[CorpusConfig, int]:
    path = Path(corpus_dir) / "corpus.txt"
    if not path.exists():
        raise IoError(f"missing corpus descriptor {path}")
    sections = read_records(path)
    config = CorpusConfig.from_section(find_section(sections, "corpus_config"))
    seed = find_section(sections, "corpus").get_int("seed")
    return config, seed


def load_sample(corpus_dir: str | Path, entry: SampleEntry) -> MixtureSample:
    root = Path(corpus_dir)
    mixture = read_wav(root / entry.mixture_path)
    sources = [read_wav(root / rel) for rel in entry.source_paths]
    return MixtureSample(
        mixture=mixture,
        sources=sources,
        gains_db=list(entry.gains_db),
        speaker_ids=list(entry.speaker_ids),
        scenario=entry.scenario,
    )
