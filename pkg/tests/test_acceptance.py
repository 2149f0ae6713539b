"""End-to-end acceptance checks.

Ten checks, one test each. Every test prints a single bracketed
PASS/FAIL line past the capture, so the full run reads as a checklist
with the observed numbers inline. Checks 1-7 are oracle equivalences
and exact invariances and finish in seconds; checks 8-10 generate the
seeded corpus, train the whole model grid, and score it, which takes
on the order of half an hour on one desktop core.
"""

from __future__ import annotations

import itertools
import time

import numpy as np
import pytest

from permsep import verify
from permsep.corpus import CorpusConfig, build_corpus, load_sample, read_manifest
from permsep.evaluation import evaluate_entries, mean_improvement, oracle_masks
from permsep.experiments import TABLE_ROWS, evaluate_model, train_model
from permsep.losses import (
    DominanceMatrix,
    EmbeddingMatrix,
    dc_loss,
    exhaustive_assignment_min,
    one_hot_rows,
    upit_loss_from_mags,
)

CORPUS_SEED = 7
ACCEPT_SEED = 0

# Mean oracle-mask improvement on the seeded 2spk test split, recorded
# from the reference run of this suite. Guards silent drift in the
# corpus generator and the scoring path; the slack absorbs BLAS-level
# float variation across machines.
ORACLE_2SPK_PIN: float | None = None  # filled in by the reference run
PIN_TOL_DB = 0.05

TIMES: dict[str, float] = {}

_TREND_MODELS = ("dc-2spk", "dc-3spk", "upit-2spk", "upit-3spk", "upit-2+3spk")
_EVAL_MATRIX = (
    ("dc-2spk", 2), ("dc-2spk", 3), ("dc-3spk", 2), ("dc-3spk", 3),
    ("upit-2spk", 2), ("upit-3spk", 3),
    ("upit-2+3spk", 2), ("upit-2+3spk", 3),
    ("upit-2+3spk-half", 2), ("upit-2+3spk-half", 3),
)


def _check(capsys, n: int, ok: bool, detail: str) -> None:
    line = f"[check {n:>2}] {'PASS' if ok else 'FAIL'}  {detail}"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_corpus")
    t0 = time.perf_counter()
    build_corpus(CorpusConfig(), root, seed=CORPUS_SEED)
    TIMES["corpus"] = time.perf_counter() - t0
    return root


@pytest.fixture(scope="session")
def models(corpus_dir):
    """The whole grid, trained serially so only one model's prepared
    data is resident at a time."""
    out = {}
    for spec in TABLE_ROWS:
        model = train_model(corpus_dir, spec, seed=ACCEPT_SEED)
        TIMES[f"train:{spec.label}"] = model.wall_s
        out[spec.label] = model
    return out


@pytest.fixture(scope="session")
def improvements(corpus_dir, models):
    out = {}
    for label, scenario in _EVAL_MATRIX:
        t0 = time.perf_counter()
        mean_db, _ = evaluate_model(corpus_dir, models[label], scenario, seed=ACCEPT_SEED)
        TIMES[f"eval:{label}@{scenario}"] = time.perf_counter() - t0
        out[(label, scenario)] = mean_db
    return out


def test_check01_dc_loss_matches_naive_reference(capsys):
    t0 = time.perf_counter()
    r = verify.suite_dc_naive(seed=ACCEPT_SEED, trials=200)
    dt = time.perf_counter() - t0
    ok = r.passed and dt < 10.0
    _check(capsys, 1, ok,
           f"dc efficient vs naive: max rel {r.max_error:.2e} "
           f"(tol {r.tolerance:.0e}), 200 instances in {dt:.1f}s")


def test_check02_upit_assignment_matches_exhaustive(capsys):
    rng = np.random.default_rng(ACCEPT_SEED)
    t0 = time.perf_counter()
    worst_exact = 0.0
    for _ in range(200):
        s = int(rng.choice([2, 3, 4]))
        t_len = int(rng.integers(2, 12))
        n_freq = int(rng.integers(2, 12))
        masks = rng.random((s, t_len, n_freq))
        masks /= masks.sum(axis=0, keepdims=True)
        mix = np.abs(rng.standard_normal((t_len, n_freq)))
        targets = np.abs(rng.standard_normal((s, t_len, n_freq)))
        lv = upit_loss_from_mags(masks, mix, targets)

        # rebuild the pairwise cost and enumerate all S! assignments
        est = (masks * mix[None, :, :]).reshape(s, -1)
        tgt = targets.reshape(s, -1)
        cost = np.maximum(
            (est * est).sum(axis=1)[:, None]
            + (tgt * tgt).sum(axis=1)[None, :]
            - 2.0 * (est @ tgt.T),
            0.0,
        )
        perm, total = exhaustive_assignment_min(cost)
        worst_exact = max(worst_exact, abs(lv.value - total))
        assert lv.chosen_permutation.mapping == perm.mapping
    # and the value agrees with the straight from-definition total
    r = verify.suite_upit_assignment(seed=ACCEPT_SEED, trials=200)
    dt = time.perf_counter() - t0
    ok = worst_exact == 0.0 and r.passed and dt < 10.0
    _check(capsys, 2, ok,
           f"upit vs exhaustive: assignment value exact "
           f"(max abs {worst_exact:.1e}), definition rel {r.max_error:.2e}, "
           f"200 instances in {dt:.1f}s")


def test_check03_analytic_gradients_match_finite_differences(capsys):
    t0 = time.perf_counter()
    r = verify.suite_gradients(seed=ACCEPT_SEED, coords_per_head=50)
    dt = time.perf_counter() - t0
    ok = r.passed and dt < 60.0
    _check(capsys, 3, ok,
           f"gradients vs central differences: max rel {r.max_error:.2e} "
           f"(tol {r.tolerance:.0e}; {r.detail}) in {dt:.1f}s")


def test_check04_adam_updates_are_scale_invariant(capsys):
    t0 = time.perf_counter()
    r = verify.suite_adam_scale(seed=ACCEPT_SEED, steps=10)
    dt = time.perf_counter() - t0
    ok = r.passed and dt < 5.0
    _check(capsys, 4, ok,
           f"adam scale invariance over 1e-3..1e3: max rel {r.max_error:.2e} "
           f"(tol {r.tolerance:.0e}) in {dt:.1f}s")


def test_check05_summed_gd_equals_joint_gd(capsys):
    t0 = time.perf_counter()
    r = verify.suite_gd_equivalence(seed=ACCEPT_SEED)
    dt = time.perf_counter() - t0
    ok = r.passed and dt < 5.0
    _check(capsys, 5, ok,
           f"summed vs joint gd step, three scenarios: max abs {r.max_error:.2e} "
           f"(tol {r.tolerance:.0e}) in {dt:.1f}s")


def test_check06_losses_are_exactly_permutation_invariant(capsys):
    rng = np.random.default_rng(ACCEPT_SEED)
    dc_exact = upit_exact = True

    for _ in range(100):
        tf = int(rng.integers(4, 200))
        d = int(rng.integers(2, 9))
        s = int(rng.integers(2, 5))
        v = rng.standard_normal((tf, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        rows = one_hot_rows(rng.integers(0, s, tf), s)
        weights = (rng.random(tf) > 0.2).astype(np.float64)
        base = dc_loss(EmbeddingMatrix(v), DominanceMatrix(rows, weights)).value
        for perm in itertools.permutations(range(s)):
            permuted = DominanceMatrix(rows[:, list(perm)], weights)
            if dc_loss(EmbeddingMatrix(v), permuted).value != base:
                dc_exact = False

    for _ in range(100):
        s = int(rng.integers(2, 5))
        t_len = int(rng.integers(2, 12))
        n_freq = int(rng.integers(2, 12))
        masks = rng.random((s, t_len, n_freq))
        masks /= masks.sum(axis=0, keepdims=True)
        mix = np.abs(rng.standard_normal((t_len, n_freq)))
        targets = np.abs(rng.standard_normal((s, t_len, n_freq)))
        base = upit_loss_from_mags(masks, mix, targets).value
        for perm in itertools.permutations(range(s)):
            shuffled = targets[list(perm)]
            if upit_loss_from_mags(masks, mix, shuffled).value != base:
                upit_exact = False

    ok = dc_exact and upit_exact
    _check(capsys, 6, ok,
           f"exact permutation invariance, 100 trials each: "
           f"dc {'exact' if dc_exact else 'BROKEN'}, "
           f"upit {'exact' if upit_exact else 'BROKEN'}")


def test_check07_stft_roundtrip(capsys):
    t0 = time.perf_counter()
    r = verify.suite_stft_roundtrip(seed=ACCEPT_SEED, trials=50)
    dt = time.perf_counter() - t0
    ok = r.passed
    _check(capsys, 7, ok,
           f"stft round-trip interior: max rel {r.max_error:.2e} "
           f"(tol {r.tolerance:.0e}), 50 signals in {dt:.1f}s")


@pytest.mark.slow
def test_check08_oracle_mask_ceiling(capsys, corpus_dir):
    t0 = time.perf_counter()
    entries = read_manifest(corpus_dir, "test").by_scenario(2)
    rows = evaluate_entries(corpus_dir, entries, oracle_masks, load_sample)
    observed = mean_improvement(rows)
    dt = time.perf_counter() - t0
    TIMES["eval:oracle@2"] = dt

    ok = observed > 5.0 and dt < 120.0
    pin_note = "pin pending"
    if ORACLE_2SPK_PIN is not None:
        ok = ok and abs(observed - ORACLE_2SPK_PIN) < PIN_TOL_DB
        pin_note = f"pin {ORACLE_2SPK_PIN:+.4f}"
    _check(capsys, 8, ok,
           f"oracle masks on 2spk test: {observed:+.4f} dB (> 5 dB, {pin_note}), "
           f"{len(rows)} samples in {dt:.0f}s")


@pytest.mark.slow
def test_check09_trend_reproduction(capsys, improvements):
    multi2 = improvements[("upit-2+3spk", 2)]
    multi3 = improvements[("upit-2+3spk", 3)]
    single2 = improvements[("upit-2spk", 2)]
    single3 = improvements[("upit-3spk", 3)]
    # (a) one model across both scenarios keeps up with the dedicated
    # single-scenario model on each test set
    gap2 = multi2 - single2
    gap3 = multi3 - single3
    ok_a = gap2 >= -1.0 and gap3 >= -1.0

    # (b) mismatched speaker counts hurt asymmetrically: a two-speaker
    # model scoring three-speaker mixtures loses more than the reverse
    deg_2on3 = improvements[("dc-3spk", 3)] - improvements[("dc-2spk", 3)]
    deg_3on2 = improvements[("dc-2spk", 2)] - improvements[("dc-3spk", 2)]
    ok_b = deg_2on3 > deg_3on2

    wall = TIMES["corpus"]
    wall += sum(TIMES[f"train:{label}"] for label in _TREND_MODELS)
    wall += sum(
        TIMES[f"eval:{label}@{s}"]
        for label, s in _EVAL_MATRIX if label in _TREND_MODELS
    )
    ok_time = wall < 45 * 60

    ok = ok_a and ok_b and ok_time
    _check(capsys, 9, ok,
           f"trends: multi-single gap 2spk {gap2:+.2f} dB, 3spk {gap3:+.2f} dB "
           f"(>= -1.0); dc degradation 2spk model on 3spk {deg_2on3:+.2f} dB > "
           f"3spk model on 2spk {deg_3on2:+.2f} dB; pipeline {wall / 60:.1f} min (< 45)")


@pytest.mark.slow
def test_check10_half_data_stability(capsys, improvements):
    gap2 = improvements[("upit-2+3spk-half", 2)] - improvements[("upit-2+3spk", 2)]
    gap3 = improvements[("upit-2+3spk-half", 3)] - improvements[("upit-2+3spk", 3)]
    ok = abs(gap2) <= 0.7 and abs(gap3) <= 0.7
    _check(capsys, 10, ok,
           f"half training data shifts the multi model by {gap2:+.2f} dB (2spk) "
           f"and {gap3:+.2f} dB (3spk), both within 0.7")
