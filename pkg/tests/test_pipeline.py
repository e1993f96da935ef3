import numpy as np
import pytest

from supreme.data import SynthesisConfig, synthesize_transfer_pair
from supreme.model import HeadModel, ModelConfig, checkpoint_bytes, pretrain
from supreme.objective import LossWeights
from supreme.pipeline import TrainConfig, make_prior, run_all, train


@pytest.fixture(scope="module")
def small_pair():
    src, tgt, y = synthesize_transfer_pair(SynthesisConfig(per_class=40, std=1.0, shift=4.0, seed=2))
    m = HeadModel(ModelConfig(16, 4, 4, seed=2))
    pretrain(m, src, epochs=20, seed=2)
    return src, tgt, y, m


def test_train_rejects_labelled_target(small_pair):
    src, tgt, y, m = small_pair
    from supreme.data import EmbeddingDataset

    labelled = EmbeddingDataset(tgt.features, tgt.k, tgt.domain, y)
    cfg = TrainConfig(epochs=1)
    prior = make_prior(m, tgt, cfg)
    with pytest.raises(ValueError, match="unlabelled"):
        train(m.clone(), prior, labelled, src, cfg)


def test_zero_epochs_is_noop(small_pair):
    src, tgt, _, m = small_pair
    model = m.clone()
    cfg = TrainConfig(epochs=0)
    hist = train(model, make_prior(model, tgt, cfg), tgt, src, cfg)
    assert hist == [] and checkpoint_bytes(model) == checkpoint_bytes(m)


def test_training_is_deterministic(small_pair):
    src, tgt, y, m = small_pair
    cfg = TrainConfig(epochs=2, seed=5)
    blobs, hists = [], []
    for _ in range(2):
        model = m.clone()
        hists.append(train(model, make_prior(model, tgt, cfg), tgt, src, cfg, eval_labels=y))
        blobs.append(checkpoint_bytes(model))
    assert blobs[0] == blobs[1]
    assert [h.loss.row() for h in hists[0]] == [h.loss.row() for h in hists[1]]
    assert hists[0][-1].acc is not None


def test_freeze_encoder(small_pair):
    src, tgt, _, m = small_pair
    model = m.clone()
    cfg = TrainConfig(epochs=1, freeze_encoder=True)
    train(model, make_prior(model, tgt, cfg), tgt, src, cfg)
    for p, q in zip(model.encoder_params(), m.encoder_params()):
        assert np.array_equal(p.data, q.data) and p.requires_grad
    assert not np.array_equal(model.target_head.W.data, m.target_head.W.data)


@pytest.mark.parametrize("mode", ["joint", "transfer", "self"])
def test_modes_and_refresh_run(small_pair, mode):
    src, tgt, y, m = small_pair
    model = m.clone()
    cfg = TrainConfig(epochs=2, supervision=mode, refresh_prior=1)
    hist = train(model, make_prior(model, tgt, cfg), tgt, src, cfg, eval_labels=y)
    assert len(hist) == 2 and all(np.isfinite(h.loss.total) for h in hist)


def test_config_validation():
    with pytest.raises(ValueError, match="alpha"):
        TrainConfig(alpha=0.0)
    with pytest.raises(ValueError):
        TrainConfig(tau=0.0)
    with pytest.raises(ValueError):
        TrainConfig(supervision="both")


def test_run_all_beats_chance(small_pair):
    src, tgt, y, m = small_pair
    res = run_all(src, tgt, y, m.config, TrainConfig(epochs=5, weights=LossWeights()), pretrained=m)
    assert res.final_acc > 0.5 and 0 <= res.final_nmi <= 1
    assert len(res.history) == 5
