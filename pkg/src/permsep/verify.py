"""Self-contained oracle suites behind the `verify` command.

Each suite checks the fast implementation against an independent
reference: brute-force enumeration, naive dense formulations, central
finite differences, or closed-form limits. The suites return their
worst observed error next to the tolerance so regressions show up as
numbers, not just booleans.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import network
from .losses import (
    DominanceMatrix,
    assignment_min,
    dc_loss,
    dc_loss_naive,
    exhaustive_assignment_min,
    one_hot_rows,
    upit_loss_from_mags,
)
from .network import EmbeddingMatrix, NetworkConfig, init_params
from .signal_core import SignalBuffer, cola_interior, istft, stft
from .trainer import AdamState, PreparedSample, ScenarioSpec, TrainerConfig, adam_update, train_multi_joint, train_multi_summed
from .util import rng_for


@dataclass
class SuiteResult:
    name: str
    max_error: float
    tolerance: float
    passed: bool
    detail: str = ""


def _result(name: str, max_error: float, tolerance: float, detail: str = "") -> SuiteResult:
    return SuiteResult(name, float(max_error), tolerance, bool(max_error < tolerance), detail)


def suite_stft_roundtrip(seed: int = 0, trials: int = 50) -> SuiteResult:
    rng = rng_for(seed, "verify", "stft")
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(256, 16001))
        x = rng.standard_normal(n)
        rec = istft(stft(SignalBuffer(x)), n_samples=n).samples
        interior = cola_interior(n)
        diff = rec[interior] - x[interior]
        err = np.linalg.norm(diff) / np.linalg.norm(x[interior])
        worst = max(worst, float(err))
    return _result("stft round-trip (interior rel L2)", worst, 1e-6)


def suite_dc_naive(seed: int = 0, trials: int = 200) -> SuiteResult:
    rng = rng_for(seed, "verify", "dc_naive")
    worst = 0.0
    for _ in range(trials):
        tf = int(rng.integers(2, 201))
        d = int(rng.integers(2, 9))
        s = int(rng.integers(1, 5))
        v = rng.standard_normal((tf, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        labels = rng.integers(0, s, tf)
        w = DominanceMatrix(one_hot_rows(labels, s))
        fast = dc_loss(EmbeddingMatrix(v), w).value
        naive = dc_loss_naive(EmbeddingMatrix(v), w)
        err = abs(fast - naive) / max(abs(naive), 1e-12)
        worst = max(worst, float(err))
    return _result("dc loss efficient vs naive (rel)", worst, 1e-10)


def suite_upit_assignment(seed: int = 0, trials: int = 200) -> SuiteResult:
    rng = rng_for(seed, "verify", "upit_assign")
    worst = 0.0
    for _ in range(trials):
        s = int(rng.choice([2, 3, 4]))
        t_len = int(rng.integers(2, 10))
        n_freq = int(rng.integers(2, 10))
        logits = rng.standard_normal((t_len, s, n_freq))
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        masks = (e / e.sum(axis=1, keepdims=True)).transpose(1, 0, 2)
        mix = np.abs(rng.standard_normal((t_len, n_freq)))
        targets = np.abs(rng.standard_normal((s, t_len, n_freq)))
        lv = upit_loss_from_mags(masks, mix, targets)

        # exhaustive oracle straight from the definition
        estimates = masks * mix[None, :, :]
        best = np.inf
        for perm in itertools.permutations(range(s)):
            total = sum(((estimates[i] - targets[perm[i]]) ** 2).sum() for i in range(s))
            best = min(best, total)
        err = abs(lv.value - best) / max(abs(best), 1e-12)
        worst = max(worst, float(err))
    return _result("upit assignment vs exhaustive (rel)", worst, 1e-9)


def suite_assignment_solver(seed: int = 0, trials: int = 100) -> SuiteResult:
    rng = rng_for(seed, "verify", "assign")
    worst = 0.0
    for _ in range(trials):
        s = int(rng.choice([2, 3, 4]))
        cost = rng.random((s, s))
        _, fast = assignment_min(cost)
        _, slow = exhaustive_assignment_min(cost)
        worst = max(worst, abs(fast - slow))
    return _result("assignment solver vs enumeration (abs)", worst, 1e-12)


def _fd_check(loss_fn, params, coords, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference
    gradients on the chosen coordinates."""
    analytic = loss_fn(params, want_grad=True)
    fd = np.zeros(len(coords))
    for k, i in enumerate(coords):
        saved = params.values[i]
        params.values[i] = saved + h
        f_plus = loss_fn(params, want_grad=False)
        params.values[i] = saved - h
        f_minus = loss_fn(params, want_grad=False)
        params.values[i] = saved
        fd[k] = (f_plus - f_minus) / (2.0 * h)
    ana = analytic[list(coords)]
    floor = max(1e-6 * np.abs(fd).max(), 1e-12)
    rel = np.abs(ana - fd) / np.maximum(np.abs(fd), floor)
    return float(rel.max())


def suite_gradients(seed: int = 0, coords_per_head: int = 50) -> SuiteResult:
    rng = rng_for(seed, "verify", "grads")
    t_len = 3
    worst = 0.0
    details = []

    # DC head, on both trunk variants
    feats = None
    for recurrent in (True, False):
        cfg = NetworkConfig(head="dc", hidden_layers=2, hidden_units=8,
                            recurrent=recurrent, embedding_dim=4)
        params = init_params(cfg, seed=11)
        params.values += 0.05 * rng.standard_normal(params.size)
        if feats is None:
            feats = rng.standard_normal((t_len, cfg.input_dim))
            labels = rng.integers(0, 2, t_len * cfg.input_dim)
            w = DominanceMatrix(one_hot_rows(labels, 2))

        def dc_fn(p, want_grad):
            v = network.forward_dc(p, feats)
            lv = dc_loss(v, w)
            if not want_grad:
                return lv.value
            return network.backward(p, feats, lv.gradient, "dc")

        coords = rng.choice(params.size, size=coords_per_head, replace=False)
        err = _fd_check(dc_fn, params, list(coords))
        details.append(f"dc{'' if recurrent else '-ff'} {err:.2e}")
        worst = max(worst, err)

    # uPIT heads, on both trunk variants
    for recurrent in (True, False):
        cfg_u = NetworkConfig(head="upit", hidden_layers=2, hidden_units=8,
                              recurrent=recurrent, scenarios=(2, 3))
        params_u = init_params(cfg_u, seed=13)
        params_u.values += 0.05 * rng.standard_normal(params_u.size)
        mix = np.abs(rng.standard_normal((t_len, cfg_u.input_dim)))
        tag = "" if recurrent else "-ff"
        for scenario in (2, 3):
            targets = np.abs(rng.standard_normal((scenario, t_len, cfg_u.input_dim)))

            def upit_fn(p, want_grad, scenario=scenario, targets=targets):
                masks = network.forward_upit(p, feats, scenario)
                lv = upit_loss_from_mags(masks.masks, mix, targets)
                if not want_grad:
                    return lv.value
                return network.backward(p, feats, lv.gradient, scenario)

            coords = rng.choice(params_u.size, size=coords_per_head, replace=False)
            err = _fd_check(upit_fn, params_u, list(coords))
            details.append(f"upit{scenario}{tag} {err:.2e}")
            worst = max(worst, err)

    return _result("gradient vs central differences (rel)", worst, 1e-4, ", ".join(details))


def suite_adam_scale(seed: int = 0, steps: int = 10) -> SuiteResult:
    rng = rng_for(seed, "verify", "adam")
    n = 64
    grads = [rng.standard_normal(n) for _ in range(steps)]
    theta0 = rng.standard_normal(n)

    def trajectory(alpha: float) -> np.ndarray:
        state = AdamState.fresh(n, epsilon=1e-12)
        theta = theta0.copy()
        for g in grads:
            theta += adam_update(state, alpha * g)
        return theta

    base = trajectory(1.0)
    worst = 0.0
    for alpha in (1e-3, 1e3):
        other = trajectory(alpha)
        err = np.linalg.norm(other - base) / np.linalg.norm(base)
        worst = max(worst, float(err))
    return _result("adam scale invariance (rel, 10 steps)", worst, 1e-5)


def _random_scenario_data(rng, speaker_counts, t_len=30, n_freq=129):
    data = {}
    for sid, s in enumerate(speaker_counts):
        def make(tag):
            return PreparedSample(
                sample_id=f"synthetic{sid}{tag}",
                features=rng.standard_normal((t_len, n_freq)),
                mix_mag=np.abs(rng.standard_normal((t_len, n_freq))),
                target_mags=np.abs(rng.standard_normal((s, t_len, n_freq))),
            )
        data[sid] = ([make("train")], [make("val")])
    return data


def suite_gd_equivalence(seed: int = 0) -> SuiteResult:
    """One summed per-scenario plain-GD step vs one joint GD step on
    the alpha-weighted loss, J=3."""
    rng = rng_for(seed, "verify", "gd_equiv")
    counts = (2, 3, 4)
    net_cfg = NetworkConfig(head="upit", hidden_layers=1, hidden_units=8, scenarios=counts)
    data = _random_scenario_data(rng, counts)
    alphas = (1.0, float(rng.uniform(0.1, 5.0)), float(rng.uniform(0.1, 5.0)))
    scenarios = tuple(ScenarioSpec(i, s) for i, s in enumerate(counts))
    common = dict(
        scenarios=scenarios,
        algo="upit",
        alphas=alphas,
        max_epochs=1,
        curriculum_epochs=0,
        noise_std=0.0,
        optimizer="gd",
        seed=seed,
    )
    p_summed, _ = train_multi_summed(TrainerConfig(mode="multi_summed", **common), net_cfg, data)
    p_joint, _ = train_multi_joint(TrainerConfig(mode="multi_joint", **common), net_cfg, data)
    err = np.abs(p_summed.values - p_joint.values).max()
    return _result("gd summed vs joint, one step (abs)", float(err), 1e-12)


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [
        suite_stft_roundtrip(seed),
        suite_dc_naive(seed),
        suite_upit_assignment(seed),
        suite_assignment_solver(seed),
        suite_gradients(seed),
        suite_adam_scale(seed),
        suite_gd_equivalence(seed),
    ]


def format_table(results: list[SuiteResult]) -> str:
    name_w = max(len(r.name) for r in results)
    lines = [f"{'suite':<{name_w}}  {'max error':>12}  {'tolerance':>10}  status"]
    for r in results:
        status = "pass" if r.passed else "FAIL"
        line = f"{r.name:<{name_w}}  {r.max_error:>12.3e}  {r.tolerance:>10.1e}  {status}"
        if r.detail:
            line += f"  ({r.detail})"
        lines.append(line)
    return "\n".join(lines)
