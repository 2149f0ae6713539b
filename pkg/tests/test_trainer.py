import numpy as np
import pytest

from permsep.errors import ConfigError, EmptyDataset, NonFiniteGradient
from permsep.network import NetworkConfig
from permsep.trainer import (
    AdamState,
    EarlyStopper,
    PreparedSample,
    ScenarioSpec,
    TrainerConfig,
    adam_update,
    compute_feature_stats,
    gd_update,
    prepare_data,
    segment_items,
    train,
    train_multi_joint,
    train_multi_summed,
    train_single,
)

F = 16  # small frequency axis keeps the loops quick


def _upit_net(counts=(2, 3)):
    return NetworkConfig(head="upit", hidden_layers=1, hidden_units=8,
                         input_dim=F, scenarios=tuple(counts))


def _dc_net():
    return NetworkConfig(head="dc", hidden_layers=1, hidden_units=8,
                         input_dim=F, embedding_dim=4)


def _upit_items(rng, s_count, n, t=20):
    items = []
    for i in range(n):
        mix = rng.uniform(0.1, 1.0, (t, F))
        targets = rng.uniform(0.0, 1.0, (s_count, t, F))
        items.append(PreparedSample(f"u{s_count}_{i}", rng.standard_normal((t, F)),
                                    mix, target_mags=targets))
    return items


def _dc_items(rng, s_count, n, t=20):
    items = []
    for i in range(n):
        mix = rng.uniform(0.1, 1.0, (t, F))
        labels = rng.integers(0, s_count, t * F)
        weights = (rng.random(t * F) > 0.1).astype(np.float64)
        items.append(PreparedSample(f"d{s_count}_{i}", rng.standard_normal((t, F)),
                                    mix, labels=labels, weights=weights))
    return items


def _config(counts, **kw):
    base = dict(
        scenarios=tuple(ScenarioSpec(i, c) for i, c in enumerate(counts)),
        algo="upit",
        mode="single" if len(counts) == 1 else "multi_summed",
        max_epochs=2,
        curriculum_epochs=1,
        curriculum_segment_frames=8,
        noise_std=0.0,
        seed=3,
    )
    base.update(kw)
    return TrainerConfig(**base)


# --- Adam ----------------------------------------------------------------

def test_adam_zero_gradient_zero_delta():
    state = AdamState.fresh(5)
    delta = adam_update(state, np.zeros(5))
    np.testing.assert_array_equal(delta, np.zeros(5))
    # stays zero on repeated zero gradients (structural-zero isolation)
    for _ in range(3):
        np.testing.assert_array_equal(adam_update(state, np.zeros(5)), np.zeros(5))


def test_adam_structural_zero_coordinates_never_move():
    rng = np.random.default_rng(0)
    state = AdamState.fresh(6)
    for _ in range(10):
        grad = rng.standard_normal(6)
        grad[2] = 0.0
        grad[5] = 0.0
        delta = adam_update(state, grad)
        assert delta[2] == 0.0 and delta[5] == 0.0


def test_adam_constant_gradient_step_magnitude():
    """With a constant gradient the bias-corrected moments are g and
    g^2, so each step has magnitude lr * |g| / (|g| + eps) ~= lr."""
    state = AdamState.fresh(4, lr=1e-3)
    g = np.array([2.0, -0.5, 10.0, -7.0])
    for _ in range(3):
        delta = adam_update(state, g)
        np.testing.assert_allclose(np.abs(delta), 1e-3, rtol=1e-6)
        np.testing.assert_array_equal(np.sign(delta), -np.sign(g))


def test_adam_scale_invariance_with_tiny_epsilon():
    rng = np.random.default_rng(1)
    grads = [rng.standard_normal(8) for _ in range(10)]
    trajectories = {}
    for alpha in (1e-3, 1.0, 1e3):
        state = AdamState.fresh(8, epsilon=1e-12)
        x = np.zeros(8)
        for g in grads:
            x = x + adam_update(state, alpha * g)
        trajectories[alpha] = x
    base = trajectories[1.0]
    for alpha in (1e-3, 1e3):
        err = np.linalg.norm(trajectories[alpha] - base) / np.linalg.norm(base)
        assert err < 1e-5


def test_adam_rejects_non_finite():
    state = AdamState.fresh(3)
    with pytest.raises(NonFiniteGradient):
        adam_update(state, np.array([1.0, np.nan, 0.0]))
    with pytest.raises(NonFiniteGradient):
        gd_update(0.1, np.array([np.inf, 0.0]))


def test_gd_update_is_plain_scaling():
    g = np.array([1.0, -2.0])
    np.testing.assert_array_equal(gd_update(0.5, g), np.array([-0.5, 1.0]))


# --- early stopping --------------------------------------------------------

def test_early_stopper_consecutive_rises():
    stopper = EarlyStopper(patience=4)
    values = [5.0, 4.0, 4.1, 4.2, 4.3, 4.4]
    stops = [stopper.update(v, i) for i, v in enumerate(values)]
    assert stops == [False, False, False, False, False, True]
    assert stopper.best == 4.0
    assert stopper.best_epoch == 1


def test_early_stopper_reset_on_improvement():
    stopper = EarlyStopper(patience=2)
    assert not stopper.update(3.0, 0)
    assert not stopper.update(3.5, 1)  # rise 1
    assert not stopper.update(2.0, 2)  # reset
    assert not stopper.update(2.5, 3)  # rise 1
    assert stopper.update(2.6, 4)  # rise 2 -> stop


def test_early_stopper_plateau_does_not_stop():
    stopper = EarlyStopper(patience=1)
    for epoch in range(5):
        assert not stopper.update(1.0, epoch)


# --- config ----------------------------------------------------------------

def test_trainer_config_validation():
    spec2 = (ScenarioSpec(0, 2), ScenarioSpec(1, 3))
    with pytest.raises(ConfigError):
        TrainerConfig(scenarios=())
    with pytest.raises(ConfigError):
        TrainerConfig(scenarios=spec2, mode="single")
    with pytest.raises(ConfigError):
        TrainerConfig(scenarios=spec2, mode="multi_joint", alphas=(2.0, 1.0))
    with pytest.raises(ConfigError):
        TrainerConfig(scenarios=spec2, mode="multi_joint", alphas=(1.0,))
    with pytest.raises(ConfigError):
        TrainerConfig(scenarios=spec2, mode="multi_joint", alphas=(1.0, -0.5))


def test_trainer_config_section_round_trip():
    config = _config((2, 3), alphas=(1.0, 0.7), silence_db=None, optimizer="gd")
    back = TrainerConfig.from_section(config.to_section())
    assert back == config


# --- data preparation --------------------------------------------------------

def test_prepare_data_dc_and_upit(small_corpus, small_manifests, small_stats):
    root, _ = small_corpus
    dc_items = prepare_data(root, small_manifests["train"], 2, "dc", small_stats)
    assert len(dc_items) == 6
    item = dc_items[0]
    assert item.labels is not None and item.weights is not None
    assert item.target_mags is None
    assert item.labels.shape == (item.n_bins,)
    assert set(np.unique(item.labels)) <= {0, 1}

    upit_items = prepare_data(root, small_manifests["train"], 3, "upit", small_stats)
    item = upit_items[0]
    assert item.target_mags is not None and item.labels is None
    assert item.target_mags.shape == (3,) + item.features.shape


def test_prepare_data_silence_optional(small_corpus, small_manifests, small_stats):
    root, _ = small_corpus
    items = prepare_data(root, small_manifests["train"], 2, "dc", small_stats, silence_db=None)
    assert items[0].weights is None


def test_compute_feature_stats_matches_direct(small_corpus, small_manifests):
    from permsep.signal_core import compute_stats, log_magnitude, read_wav, stft

    root, _ = small_corpus
    manifest = small_manifests["train"]
    stats = compute_feature_stats(root, manifest, (2,))
    mats = [
        log_magnitude(stft(read_wav(root / e.mixture_path)))
        for e in manifest.by_scenario(2)
    ]
    direct = compute_stats(mats)
    np.testing.assert_allclose(stats.mean, direct.mean, atol=1e-12)
    np.testing.assert_allclose(stats.std, direct.std, rtol=1e-12)


def test_segment_items_non_overlapping():
    rng = np.random.default_rng(2)
    items = _upit_items(rng, 2, 1, t=25)
    segs = segment_items(items, 10)
    assert len(segs) == 2  # 25 -> [0:10], [10:20], tail of 5 dropped
    assert all(s.n_frames == 10 for s in segs)
    short = segment_items(_upit_items(rng, 2, 1, t=7), 10)
    assert len(short) == 1 and short[0].n_frames == 7


def test_segment_slices_labels_consistently():
    rng = np.random.default_rng(3)
    item = _dc_items(rng, 2, 1, t=12)[0]
    seg = item.segment(3, 7)
    assert seg.features.shape == (4, F)
    np.testing.assert_array_equal(seg.labels, item.labels[3 * F:7 * F])
    np.testing.assert_array_equal(seg.weights, item.weights[3 * F:7 * F])


# --- training loops ---------------------------------------------------------

def test_max_epochs_zero_returns_initialization():
    rng = np.random.default_rng(4)
    data = {0: (_upit_items(rng, 2, 3), _upit_items(rng, 2, 2))}
    config = _config((2,), max_epochs=0)
    params, log = train_single(config, _upit_net((2,)), data)
    from permsep.network import init_params

    np.testing.assert_array_equal(params.values, init_params(_upit_net((2,)), config.seed).values)
    assert log.rows == []
    assert log.best_epoch == -1


def test_empty_dataset_rejected():
    config = _config((2,))
    with pytest.raises(EmptyDataset):
        train_single(config, _upit_net((2,)), {0: ([], [])})
    with pytest.raises(EmptyDataset):
        train_single(config, _upit_net((2,)), {})


def test_mode_wrappers_check_mode():
    rng = np.random.default_rng(5)
    data = {0: (_upit_items(rng, 2, 2), _upit_items(rng, 2, 1))}
    with pytest.raises(ConfigError):
        train_multi_summed(_config((2,)), _upit_net((2,)), data)
    with pytest.raises(ConfigError):
        train_multi_joint(_config((2,)), _upit_net((2,)), data)


def test_single_is_summed_with_one_scenario():
    """One code path: J=1 summed training must match single-scenario
    training bit for bit."""
    rng = np.random.default_rng(6)
    data = {0: (_upit_items(rng, 2, 4), _upit_items(rng, 2, 2))}
    single_cfg = _config((2,), mode="single", noise_std=0.2)
    summed_cfg = _config((2,), mode="multi_summed", noise_std=0.2)
    p_single, log_single = train(single_cfg, _upit_net((2,)), data)
    p_summed, log_summed = train(summed_cfg, _upit_net((2,)), data)
    np.testing.assert_array_equal(p_single.values, p_summed.values)
    assert log_single.validation_history == log_summed.validation_history


def test_joint_with_zero_alpha_matches_single():
    """alpha = (1, 0) silences the second scenario's gradient, so the
    joint run follows the single-scenario trajectory exactly."""
    rng = np.random.default_rng(7)
    data2 = (_upit_items(rng, 2, 4), _upit_items(rng, 2, 2))
    data3 = (_upit_items(rng, 3, 4), _upit_items(rng, 3, 2))
    single_cfg = _config((2,), mode="single", max_epochs=1)
    joint_cfg = _config((2, 3), mode="multi_joint", alphas=(1.0, 0.0), max_epochs=1)
    p_single, _ = train(single_cfg, _upit_net((2,)), {0: data2})
    p_joint, _ = train(joint_cfg, _upit_net((2, 3)), {0: data2, 1: data3})
    # compare the shared trunk and the scenario-2 head; the 3-speaker
    # head only exists in the joint model
    from permsep.network import build_layout

    single_layout = build_layout(_upit_net((2,)))
    joint_layout = build_layout(_upit_net((2, 3)))
    for name in single_layout:
        a = p_single.values[single_layout[name][0]]
        b = p_joint.values[joint_layout[name][0]]
        np.testing.assert_array_equal(a, b)


def test_training_reduces_upit_loss():
    rng = np.random.default_rng(8)
    data = {0: (_upit_items(rng, 2, 6), _upit_items(rng, 2, 3))}
    config = _config((2,), max_epochs=4, curriculum_epochs=0, early_stop_patience=10)
    params, log = train(config, _upit_net((2,)), data)
    train_rows = [r.loss for r in log.rows if r.split == "train"]
    assert train_rows[-1] < train_rows[0]
    assert len(log.validation_history) == 4
    assert log.best_epoch >= 0


def test_training_reduces_dc_loss():
    rng = np.random.default_rng(9)
    data = {0: (_dc_items(rng, 2, 6), _dc_items(rng, 2, 3))}
    config = _config((2,), algo="dc", max_epochs=4, curriculum_epochs=0,
                     early_stop_patience=10)
    params, log = train(config, _dc_net(), data)
    train_rows = [r.loss for r in log.rows if r.split == "train"]
    assert train_rows[-1] < train_rows[0]


def test_best_validation_params_returned():
    """The returned parameters correspond to the best validation epoch,
    not the last one."""
    rng = np.random.default_rng(10)
    data = {0: (_upit_items(rng, 2, 5), _upit_items(rng, 2, 3))}
    config = _config((2,), max_epochs=5, curriculum_epochs=0,
                     early_stop_patience=10, snapshot_params=True)
    params, log = train(config, _upit_net((2,)), data)
    best_idx = int(np.argmin(log.validation_history))
    assert log.best_epoch == best_idx
    np.testing.assert_array_equal(params.values, log.param_snapshots[best_idx])


def test_unequal_dataset_sizes_wrap_around():
    rng = np.random.default_rng(11)
    data = {
        0: (_upit_items(rng, 2, 5), _upit_items(rng, 2, 2)),
        1: (_upit_items(rng, 3, 2), _upit_items(rng, 3, 2)),
    }
    config = _config((2, 3), max_epochs=1)
    params, log = train(config, _upit_net((2, 3)), data)
    train_rows = [r for r in log.rows if r.split == "train"]
    assert {r.scenario_id for r in train_rows} == {0, 1}


def test_multi_summed_alpha_scaling_is_negligible():
    """With near-zero epsilon the summed rule is insensitive to the
    per-scenario loss scales (the Adam step normalizes them away)."""
    rng = np.random.default_rng(12)
    data = {
        0: (_upit_items(rng, 2, 3), _upit_items(rng, 2, 2)),
        1: (_upit_items(rng, 3, 3), _upit_items(rng, 3, 2)),
    }
    base_cfg = _config((2, 3), max_epochs=1, epsilon=1e-12)
    scaled_cfg = _config((2, 3), max_epochs=1, epsilon=1e-12, alphas=(1.0, 1000.0))
    p_base, _ = train(base_cfg, _upit_net((2, 3)), data)
    p_scaled, _ = train(scaled_cfg, _upit_net((2, 3)), data)
    err = np.linalg.norm(p_base.values - p_scaled.values) / np.linalg.norm(p_base.values)
    assert err < 1e-5


def test_log_csv_format(tmp_path):
    rng = np.random.default_rng(13)
    data = {0: (_upit_items(rng, 2, 2), _upit_items(rng, 2, 1))}
    config = _config((2,), max_epochs=1)
    _, log = train(config, _upit_net((2,)), data)
    path = tmp_path / "log.csv"
    log.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,scenario_id,split,loss,wall_ms"
    assert len(lines) == 1 + len(log.rows)
    assert any(",validation," in line for line in lines[1:])
