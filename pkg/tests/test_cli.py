import numpy as np
import pytest

from permsep import cli
from permsep import network
from permsep.network import init_params, load_checkpoint

CORPUS_CFG = """\
[corpus_config]
scenarios = 2, 3
train_per_scenario = 3
validation_per_scenario = 2
test_per_scenario = 2
"""

TRAIN_CFG = """\
[trainer]
max_epochs = 1
curriculum_epochs = 1
curriculum_segment_frames = 50

[network]
hidden_layers = 1
hidden_units = 8
"""


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "corpus.cfg"
    cfg.write_text(CORPUS_CFG)
    corpus = root / "corpus"
    assert cli.main(["gen-corpus", "--config", str(cfg), "--out", str(corpus), "--seed", "5"]) == 0
    return root, corpus


@pytest.fixture(scope="module")
def train_cfg_path(cli_corpus):
    root, _ = cli_corpus
    path = root / "train.cfg"
    path.write_text(TRAIN_CFG)
    return path


@pytest.fixture(scope="module")
def upit_2spk_run(cli_corpus, train_cfg_path):
    root, corpus = cli_corpus
    out = root / "run_upit2"
    code = cli.main([
        "train", "--config", str(train_cfg_path), "--corpus", str(corpus),
        "--out", str(out), "--algo", "upit", "--train", "2spk",
    ])
    assert code == 0
    return out


def test_gen_corpus_is_deterministic(cli_corpus, tmp_path):
    root, corpus = cli_corpus
    cfg = root / "corpus.cfg"
    other = tmp_path / "corpus_b"
    assert cli.main(["gen-corpus", "--config", str(cfg), "--out", str(other), "--seed", "5"]) == 0
    for rel in ("train.txt", "test.txt", "train/2spk_0000_mix.wav"):
        assert (corpus / rel).read_bytes() == (other / rel).read_bytes()


def test_gen_corpus_half_train(cli_corpus, tmp_path):
    root, _ = cli_corpus
    cfg = root / "corpus.cfg"
    out = tmp_path / "half"
    assert cli.main(["gen-corpus", "--config", str(cfg), "--out", str(out),
                     "--seed", "5", "--half-train"]) == 0
    from permsep.corpus import read_manifest

    manifest = read_manifest(out, "train")
    assert manifest.counts == {2: 2, 3: 2}  # ceil(3 / 2) per scenario
    assert [e.sample_id for e in manifest.by_scenario(2)] == ["2spk_0000", "2spk_0002"]


def test_train_zero_epochs_checkpoint_is_initialization(cli_corpus, train_cfg_path, tmp_path):
    _, corpus = cli_corpus
    out = tmp_path / "run0"
    code = cli.main([
        "train", "--config", str(train_cfg_path), "--corpus", str(corpus),
        "--out", str(out), "--algo", "upit", "--train", "2spk", "--max-epochs", "0",
    ])
    assert code == 0
    params, nconf, _ = load_checkpoint(out / "model.ckpt")
    np.testing.assert_array_equal(params.values, init_params(nconf, 0).values)


def test_train_writes_artifacts(upit_2spk_run):
    out = upit_2spk_run
    for name in ("model.ckpt", "model.ckpt.cfg", "log.csv", "resolved_config.txt"):
        assert (out / name).exists()
    log = (out / "log.csv").read_text().strip().splitlines()
    assert log[0] == "epoch,scenario_id,split,loss,wall_ms"
    assert len(log) > 1
    resolved = (out / "resolved_config.txt").read_text()
    assert "[network]" in resolved and "[trainer]" in resolved
    assert "hidden_units = 8" in resolved


def test_eval_checkpoint(cli_corpus, upit_2spk_run, tmp_path, capsys):
    _, corpus = cli_corpus
    out = tmp_path / "eval"
    code = cli.main([
        "eval", "--corpus", str(corpus), "--checkpoint", str(upit_2spk_run / "model.ckpt"),
        "--test", "2spk", "--out", str(out),
    ])
    assert code == 0
    assert (out / "results_2spk.csv").exists()
    assert (out / "aggregate.csv").exists()
    agg = (out / "aggregate.csv").read_text()
    assert "upit" in agg and "2spk" in agg
    assert "mean SDR improvement" in capsys.readouterr().out


def test_eval_oracle_masks(cli_corpus, tmp_path):
    _, corpus = cli_corpus
    out = tmp_path / "eval_oracle"
    code = cli.main([
        "eval", "--corpus", str(corpus), "--oracle-masks", "--out", str(out),
    ])
    assert code == 0
    agg = (out / "aggregate.csv").read_text()
    assert "oracle" in agg
    assert (out / "results_2spk.csv").exists()
    assert (out / "results_3spk.csv").exists()


def test_eval_without_checkpoint_or_oracle_fails(cli_corpus, tmp_path, capsys):
    _, corpus = cli_corpus
    code = cli.main(["eval", "--corpus", str(corpus), "--out", str(tmp_path / "x")])
    assert code == 2


def test_eval_untrained_scenario_fails(cli_corpus, upit_2spk_run, tmp_path):
    """A uPIT model carries heads only for its training scenarios."""
    _, corpus = cli_corpus
    code = cli.main([
        "eval", "--corpus", str(corpus), "--checkpoint", str(upit_2spk_run / "model.ckpt"),
        "--test", "3spk", "--out", str(tmp_path / "y"),
    ])
    assert code == 2


def test_missing_corpus_is_io_error(tmp_path):
    assert cli.main(["train", "--corpus", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "o")]) == 3
    assert cli.main(["eval", "--corpus", str(tmp_path / "nope"), "--oracle-masks",
                     "--out", str(tmp_path / "o2")]) == 3


def test_missing_checkpoint_is_io_error(cli_corpus, tmp_path):
    _, corpus = cli_corpus
    code = cli.main([
        "eval", "--corpus", str(corpus), "--checkpoint", str(tmp_path / "no.ckpt"),
        "--test", "2spk", "--out", str(tmp_path / "z"),
    ])
    assert code == 3


def test_mode_scenario_cross_validation(cli_corpus, tmp_path):
    _, corpus = cli_corpus
    assert cli.main([
        "train", "--corpus", str(corpus), "--out", str(tmp_path / "a"),
        "--train", "2spk", "--mode", "multi_summed",
    ]) == 2
    assert cli.main([
        "train", "--corpus", str(corpus), "--out", str(tmp_path / "b"),
        "--train", "2+3spk", "--mode", "single",
    ]) == 2


def test_verify_passes(capsys):
    assert cli.main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "pass" in out and "FAIL" not in out


def test_verify_catches_injected_gradient_bug(monkeypatch, capsys):
    """Negative control: corrupt the backward pass and the verify
    command must exit 4, not quietly pass."""
    real = network.backward

    def broken(params, features, upstream, head="dc", cache=None):
        grad = real(params, features, upstream, head, cache)
        return grad * 1.01

    monkeypatch.setattr(network, "backward", broken)
    assert cli.main(["verify"]) == 4
    assert "FAIL" in capsys.readouterr().out
