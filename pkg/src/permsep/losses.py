"""Permutation-invariant training objectives.

Two losses, both with analytic gradients w.r.t. the network head
output. The DC affinity loss never forms the TF x TF affinity matrix:

    |V Vt - W Wt|_F^2 = |Vt V|_F^2 - 2 |Vt W|_F^2 + |Wt W|_F^2

which is O(TF * (D^2 + DS + S^2)). The uPIT loss builds the S x S
pairwise cost matrix between masked mixtures and targets, then solves
the assignment exactly; the gradient flows only through the minimizing
permutation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .errors import InvalidCost, ShapeMismatch
from .network import EmbeddingMatrix, MaskSet
from .signal_core import Spectrogram


@dataclass
class DominanceMatrix:
    """TF x S one-hot rows marking the energy-dominant speaker, plus a
    per-bin weight u in [0,1] for silence exclusion (default all ones)."""

    rows: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ShapeMismatch(f"expected 2-d rows, got {self.rows.shape}")
        is_01 = np.all((self.rows == 0.0) | (self.rows == 1.0))
        if self.rows.size and not (is_01 and np.all(self.rows.sum(axis=1) == 1.0)):
            raise ShapeMismatch("dominance rows must be one-hot")
        if self.weights is None:
            self.weights = np.ones(self.rows.shape[0])
        else:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (self.rows.shape[0],):
                raise ShapeMismatch("weights must be one scalar per row")


@dataclass(frozen=True)
class Permutation:
    """Bijection on {0..S-1}; mapping[s] is the target index assigned
    to estimate s."""

    mapping: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise ShapeMismatch(f"not a permutation: {self.mapping}")

    def __len__(self) -> int:
        return len(self.mapping)

    def __getitem__(self, s: int) -> int:
        return self.mapping[s]


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray
    chosen_permutation: Permutation | None = None


def one_hot_rows(labels: np.ndarray, s_count: int) -> np.ndarray:
    labels = np.asarray(labels)
    rows = np.zeros((labels.shape[0], s_count))
    rows[np.arange(labels.shape[0]), labels] = 1.0
    return rows


def silence_weights(mix_mag: np.ndarray, threshold_db: float) -> np.ndarray:
    """Per-bin weights: 0 where the mixture magnitude sits more than
    threshold_db below the loudest bin, 1 elsewhere. Flattened to TF."""
    peak = mix_mag.max()
    if peak <= 0.0:
        return np.zeros(mix_mag.size)
    floor = peak * 10.0 ** (-threshold_db / 20.0)
    return (mix_mag >= floor).astype(np.float64).reshape(-1)


def dominance_labels(source_mags: np.ndarray) -> np.ndarray:
    """Index of the dominant speaker per bin from stacked (S, T, F)
    magnitudes; argmax takes the first maximum, so ties go to the
    lowest speaker index. Flattened to TF."""
    return np.argmax(source_mags, axis=0).reshape(-1)


def dominance_targets(
    sources: list[Spectrogram],
    silence_threshold_db: float | None = None,
) -> DominanceMatrix:
    """One-hot dominance labels from the gain-scaled source
    spectrograms.

    When a threshold is given, bins whose mixture magnitude falls more
    than that many dB below the loudest mixture bin get weight 0. The
    mixture spectrogram is the sum of the sources (STFT linearity).
    """
    if not sources:
        raise ShapeMismatch("need at least one source")
    shape = sources[0].values.shape
    for src in sources[1:]:
        if src.values.shape != shape:
            raise ShapeMismatch(f"source shapes differ: {src.values.shape} vs {shape}")
    mags = np.stack([np.abs(src.values) for src in sources])  # (S, T, F)
    rows = one_hot_rows(dominance_labels(mags), mags.shape[0])
    weights = None
    if silence_threshold_db is not None:
        mix_mag = np.abs(sum(src.values for src in sources))
        weights = silence_weights(mix_mag, silence_threshold_db)
    return DominanceMatrix(rows, weights)


def dc_loss_core(
    v_rows: np.ndarray,
    w_rows: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Value and gradient of the affinity loss on plain arrays."""
    if v_rows.shape[0] != w_rows.shape[0]:
        raise ShapeMismatch(
            f"V has {v_rows.shape[0]} rows, W has {w_rows.shape[0]}"
        )
    if weights is not None:
        sq = np.sqrt(weights)
        vw = v_rows * sq[:, None]
        ww = w_rows * sq[:, None]
    else:
        vw, ww = v_rows, w_rows
    vtv = vw.T @ vw
    vtw = vw.T @ ww
    wtw = ww.T @ ww
    # fsum is correctly rounded, so the value is bitwise invariant under
    # column permutations of W (the Gram entries just move around)
    value = (
        math.fsum((vtv * vtv).ravel())
        - 2.0 * math.fsum((vtw * vtw).ravel())
        + math.fsum((wtw * wtw).ravel())
    )
    grad = 4.0 * (vw @ vtv - ww @ vtw.T)
    if weights is not None:
        grad *= sq[:, None]  # back through the sqrt(u) row scaling
    return float(max(value, 0.0)), grad


def dc_loss(v: EmbeddingMatrix, w: DominanceMatrix) -> LossValue:
    """Affinity-matching loss |V Vt - W Wt|_F^2 on weighted rows.

    The gradient is taken w.r.t. the normalized embedding rows; the
    chain rule through row normalization lives in network.backward.
    """
    value, grad = dc_loss_core(v.rows, w.rows, w.weights)
    return LossValue(value=value, gradient=grad)


def dc_loss_naive(v: EmbeddingMatrix, w: DominanceMatrix) -> float:
    """O((TF)^2) reference: forms both affinity matrices. Oracle only;
    keep TF small."""
    sq = np.sqrt(w.weights)
    vw = v.rows * sq[:, None]
    ww = w.rows * sq[:, None]
    diff = vw @ vw.T - ww @ ww.T
    return float((diff * diff).sum())


def assignment_min(cost: np.ndarray) -> tuple[Permutation, float]:
    """Exact minimum-cost assignment on an S x S matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ShapeMismatch(f"cost must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise InvalidCost("cost matrix has non-finite entries")
    row, col = scipy.optimize.linear_sum_assignment(cost)
    total = float(cost[row, col].sum())
    return Permutation(tuple(int(c) for c in col)), total


def exhaustive_assignment_min(cost: np.ndarray) -> tuple[Permutation, float]:
    """Brute-force S! reference for assignment_min."""
    cost = np.asarray(cost, dtype=np.float64)
    s = cost.shape[0]
    best_perm = None
    best_total = np.inf
    for perm in itertools.permutations(range(s)):
        total = sum(cost[i, perm[i]] for i in range(s))
        if total < best_total:
            best_total = total
            best_perm = perm
    return Permutation(best_perm), float(best_total)


def upit_loss_from_mags(
    masks: np.ndarray,
    mix_mag: np.ndarray,
    target_mags: np.ndarray,
) -> LossValue:
    """uPIT core on plain magnitude arrays: masks (S, T, F), mixture
    magnitude (T, F), target magnitudes (S, T, F)."""
    s_count = masks.shape[0]
    if masks.shape[1:] != mix_mag.shape:
        raise ShapeMismatch(
            f"masks cover {masks.shape[1:]}, mixture is {mix_mag.shape}"
        )
    if target_mags.shape != masks.shape:
        raise ShapeMismatch(
            f"targets {target_mags.shape} do not match masks {masks.shape}"
        )
    estimates = masks * mix_mag[None, :, :]  # (S, T, F)

    # |A_s - B_r|^2 = |A_s|^2 + |B_r|^2 - 2 <A_s, B_r>
    est_flat = estimates.reshape(s_count, -1)
    tgt_flat = target_mags.reshape(s_count, -1)
    est_sq = (est_flat * est_flat).sum(axis=1)
    tgt_sq = (tgt_flat * tgt_flat).sum(axis=1)
    cross = est_flat @ tgt_flat.T
    cost = np.maximum(est_sq[:, None] + tgt_sq[None, :] - 2.0 * cross, 0.0)

    perm, total = assignment_min(cost)
    assigned = target_mags[list(perm.mapping)]  # target p(s) for estimate s
    grad = 2.0 * (estimates - assigned) * mix_mag[None, :, :]
    return LossValue(value=total, gradient=grad, chosen_permutation=perm)


def upit_loss(
    masks: MaskSet,
    mixture: Spectrogram,
    sources: list[Spectrogram],
) -> LossValue:
    """Utterance-level PIT in the magnitude domain.

    value = min over permutations p of sum_s |M_s o |Y| - |X_{p(s)}||^2,
    via the S x S pairwise-cost matrix and an exact assignment. The
    gradient (w.r.t. the masks) treats the minimizing permutation as
    fixed at the evaluated point.
    """
    s_count = masks.scenario
    if len(sources) != s_count:
        raise ShapeMismatch(f"{len(sources)} sources for scenario {s_count}")
    mix_mag = mixture.magnitude()
    targets = np.empty((s_count,) + mix_mag.shape)
    for r, src in enumerate(sources):
        if src.values.shape != mix_mag.shape:
            raise ShapeMismatch(f"source {r} shape {src.values.shape}")
        targets[r] = np.abs(src.values)
    return upit_loss_from_mags(masks.masks, mix_mag, targets)
