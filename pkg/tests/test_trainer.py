import struct

import numpy as np
import pytest

from attngen import trainer as trainer_mod
from attngen.checkpoint import (ModelCheckpoint, load_checkpoint, load_into, restore_model,
                                save_checkpoint)
from attngen.dataio import DatasetSplit, EncodedSequence, SyntheticSpec, generate_synthetic, split_corpus
from attngen.errors import (CheckpointFormatError, CheckpointVersionError, ConfigError, DataError,
                            NumericalError, ShapeError)
from attngen.model import AttnGenConfig, init_model
from attngen.rng import Xoshiro256pp
from attngen.trainer import (METRICS_HEADER, EvalResult, MetricsWriter, TrainConfig,
                             convergence_epoch, evaluate, rising_streak, train)

SMALL = AttnGenConfig(length=16, embed_dim=6, kernel_size=4, channels=(4, 3, 2), fc_hidden=5)


def _corpus(n, length=16, seed=0):
    toks = Xoshiro256pp(seed).nucleotides(n * length).reshape(n, length)
    return [EncodedSequence(t, i % 2) for i, t in enumerate(toks)]


def _split(n=24, seed=0):
    return split_corpus(_corpus(n, seed=seed), 0.75, 42)


class FixedLogits:
    """Stands in for a model whose logits are known in advance."""

    def __init__(self, logits):
        self.logits = np.asarray(logits, dtype=np.float64)

    def predict_logits(self, tokens, batch_size=256):
        return self.logits


def test_evaluate_three_of_four():
    model = FixedLogits([[2.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 3.0]])
    labels = np.array([0, 1, 0, 0])
    res = evaluate(model, (np.zeros((4, 16), dtype=np.int64), labels))
    assert res.accuracy == 0.75
    assert res.correct.tolist() == [1, 1, 1, 0]
    assert res.indicator_std() == pytest.approx(0.5)
    np.testing.assert_allclose(res.probabilities.sum(axis=1), 1.0)


def test_evaluate_tie_goes_to_class_zero():
    res = evaluate(FixedLogits([[0.5, 0.5]]), (np.zeros((1, 16), dtype=np.int64), np.array([0])))
    assert res.accuracy == 1.0


def test_evaluate_empty_is_data_error():
    with pytest.raises(DataError):
        evaluate(FixedLogits(np.zeros((0, 2))), [])


def test_indicator_std_population_vs_sample():
    res = EvalResult(0.5, np.array([1, 0, 1, 0]), np.zeros((4, 2)), 0.0)
    assert res.indicator_std(ddof=0) == pytest.approx(0.5)
    assert res.indicator_std(ddof=1) == pytest.approx(np.sqrt(1 / 3))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(patience=0).resolved()
    with pytest.raises(ConfigError):
        TrainConfig(alpha=1.5).resolved()
    with pytest.raises(ConfigError):
        TrainConfig(mask_mode="gradient").resolved()
    assert TrainConfig(alpha=0.0, kl_weight=0.5).resolved().kl_weight == 0.0


def test_memorizes_tiny_corpus():
    seqs = _corpus(8, seed=5)
    split = DatasetSplit(seqs, seqs, 0, list(range(8)), list(range(8)))
    model = init_model(SMALL, 1)
    cfg = TrainConfig(lr=0.02, batch_size=8, max_epochs=80, patience=80, weight_decay=0.0,
                      alpha=0.0)
    result = train(model, split, cfg)
    assert result.best_val_acc == 1.0
    assert evaluate(model, seqs).accuracy == 1.0


def test_patience_one_with_zero_lr_stops_at_epoch_two():
    model = init_model(SMALL, 1)
    result = train(model, _split(), TrainConfig(lr=0.0, patience=1, max_epochs=20, batch_size=8))
    assert result.epochs_run == 2
    assert result.checkpoint.epoch == 1


def test_zero_lr_leaves_parameters_and_clears_grads():
    model = init_model(SMALL, 1)
    before = {k: p.data.copy() for k, p in model.params.items()}
    train(model, _split(), TrainConfig(lr=0.0, max_epochs=2, batch_size=8))
    for name, p in model.params.items():
        np.testing.assert_array_equal(p.data, before[name])
        assert p.grad is None or not np.any(p.grad)


def test_training_is_deterministic():
    runs = []
    for _ in range(2):
        model = init_model(SMALL, 7)
        runs.append(train(model, _split(), TrainConfig(max_epochs=3, batch_size=8)))
    a, b = runs
    assert a.batch_losses == b.batch_losses
    assert a.checkpoint.to_bytes() == b.checkpoint.to_bytes()


def test_metrics_rows_match_epochs():
    writer = MetricsWriter()
    result = train(init_model(SMALL, 2), _split(), TrainConfig(max_epochs=3, batch_size=8), sink=writer)
    lines = writer.render().strip().split("\n")
    assert lines[0] == METRICS_HEADER
    assert len(lines) == result.epochs_run + 1
    assert [int(line.split(",")[0]) for line in lines[1:]] == list(range(1, result.epochs_run + 1))
    assert all(line.endswith(",0.0") for line in lines[1:])


def test_alpha_zero_reports_zero_kl():
    result = train(init_model(SMALL, 2), _split(), TrainConfig(alpha=0.0, max_epochs=2, batch_size=8))
    assert all(m.train_kl == 0.0 for m in result.history)
    assert all(m.train_loss == pytest.approx(m.train_ce) for m in result.history)


def test_non_finite_loss_aborts():
    model = init_model(SMALL, 2)
    model.params["fc2.bias"].data[:] = np.nan
    with pytest.raises(NumericalError, match="epoch 1, batch 1"):
        train(model, _split(), TrainConfig(max_epochs=2, batch_size=8))


def test_empty_validation_rejected():
    seqs = _corpus(8)
    with pytest.raises(DataError):
        train(init_model(SMALL, 0), DatasetSplit(seqs, [], 0, list(range(8)), []), TrainConfig())


def test_rising_streak():
    assert rising_streak([]) == 0
    assert rising_streak([1.0]) == 0
    assert rising_streak([3.0, 1.0, 2.0, 3.0, 4.0]) == 3
    assert rising_streak([1.0, 2.0, 2.0]) == 0


def test_stability_warning_on_rising_val_loss(monkeypatch):
    real = trainer_mod.evaluate
    calls = {"n": 0}

    def rising(model, sequences, batch_size=256):
        res = real(model, sequences, batch_size)
        calls["n"] += 1
        res.loss = float(calls["n"])
        return res

    monkeypatch.setattr(trainer_mod, "evaluate", rising)
    result = train(init_model(SMALL, 2), _split(),
                   TrainConfig(lr=0.0, max_epochs=5, patience=10, batch_size=8))
    assert len(result.warnings) == 1
    assert "3 consecutive epochs" in result.warnings[0]


def test_convergence_epoch():
    class M:
        def __init__(self, epoch, val_acc):
            self.epoch, self.val_acc = epoch, val_acc

    hist = [M(1, 0.5), M(2, 0.955), M(3, 0.96)]
    assert convergence_epoch(hist) == 2
    assert convergence_epoch([]) is None


# checkpoints

@pytest.fixture(scope="module")
def trained():
    model = init_model(SMALL, 3)
    result = train(model, _split(), TrainConfig(max_epochs=2, batch_size=8))
    return model, result.checkpoint


def test_checkpoint_round_trip_bit_exact(trained, tmp_path):
    model, ck = trained
    path = tmp_path / "m.atng"
    save_checkpoint(ck, path)
    again = load_checkpoint(path)
    assert again.meta == ck.meta
    assert again.to_bytes() == ck.to_bytes()
    tokens = Xoshiro256pp(9).nucleotides(64 * 16).reshape(64, 16)
    restored = restore_model(again)
    assert restored.predict_logits(tokens).tobytes() == model.predict_logits(tokens).tobytes()
    assert restored.config == SMALL


def test_checkpoint_layout(trained):
    _, ck = trained
    blob = ck.to_bytes()
    assert blob[:4] == b"ATNG"
    assert struct.unpack("<I", blob[4:8])[0] == 1
    assert ck.meta["model.length"] == "16"
    assert "param:conv1.weight" in ck.arrays and "adam_m:conv1.weight" in ck.arrays
    assert len(ck.rng_state("dropout")) == 4


def test_checkpoint_truncated(trained):
    blob = trained[1].to_bytes()
    for cut in (3, 10, len(blob) // 2, len(blob) - 1):
        with pytest.raises(CheckpointFormatError):
            ModelCheckpoint.from_bytes(blob[:cut])


def test_checkpoint_trailing_and_magic(trained):
    blob = trained[1].to_bytes()
    with pytest.raises(CheckpointFormatError):
        ModelCheckpoint.from_bytes(blob + b"\0")
    with pytest.raises(CheckpointFormatError):
        ModelCheckpoint.from_bytes(b"XXXX" + blob[4:])


def test_checkpoint_version_mismatch(trained):
    blob = trained[1].to_bytes()
    with pytest.raises(CheckpointVersionError, match="version 2"):
        ModelCheckpoint.from_bytes(blob[:4] + struct.pack("<I", 2) + blob[8:])


def test_checkpoint_wrong_length_names_parameter(trained):
    other = init_model(AttnGenConfig(length=32, embed_dim=6, kernel_size=4, channels=(4, 3, 2),
                                     fc_hidden=5), 0)
    before = other.params["embedding.weight"].data.copy()
    with pytest.raises(ShapeError, match="fc1.weight"):
        load_into(other, trained[1])
    np.testing.assert_array_equal(other.params["embedding.weight"].data, before)


def test_synthetic_run_learns_planted_motif():
    planted = generate_synthetic(SyntheticSpec(count=120, length=16, motif_class0="GCGC",
                                               motif_class1="ATAT", seed=1))
    split = split_corpus([p.sequence for p in planted], 0.75, 42)
    result = train(init_model(SMALL, 0), split, TrainConfig(lr=0.01, max_epochs=30, batch_size=16))
    assert result.best_val_acc >= 0.8
