import numpy as np
import pytest
from dataclasses import replace

from sib import diffcore as dc
from sib.datasets import batches, find_mnist
from sib.gaussian import rsample
from sib.model import Decoder, Encoder, SibModel, aggregate, encode
from sib.objectives import BatchPosteriors, ObjectiveKind, prediction_loss, vib_compression
from sib.training import (NumericalAbort, StageIsolationError, Streams, TrainConfig, build_model,
                          param_hash, run_full, train_stage1, train_stage2, train_stage3)

TINY = TrainConfig(epochs=(2, 1, 1), hidden_width=16, feature_dim=4, lr=1e-3, disc_hidden=(8, 8),
                   batch_size=50)


@pytest.fixture(scope="module")
def data():
    train, test = find_mnist()
    return train.subset(np.arange(300)), test.subset(np.arange(200))


def test_same_seed_same_everything(data):
    cfg = replace(TINY, k=2, seed=4)
    m1, h1, r1 = run_full(cfg, *data)
    m2, h2, r2 = run_full(cfg, *data)
    assert param_hash(m1.parameters()) == param_hash(m2.parameters())
    assert (r1.i_xz, r1.i_zy, r1.accuracy) == (r2.i_xz, r2.i_zy, r2.accuracy)
    assert [r.loss for r in h1.records] == [r.loss for r in h2.records]
    m3, _, _ = run_full(replace(cfg, seed=5), *data)
    assert param_hash(m1.parameters()) != param_hash(m3.parameters())


def test_decoder_frozen_through_stages_two_and_three(data):
    cfg = replace(TINY, k=2)
    streams = Streams(0)
    model = build_model(cfg, data[0], streams)
    train_stage1(model, data[0], cfg, streams)
    h = param_hash(model.decoder.parameters())
    main_h = param_hash(model.main.parameters())
    assert not any(p.trainable for p in model.decoder.parameters())
    train_stage2(model, data[0], cfg, streams)
    assert param_hash(model.decoder.parameters()) == h
    assert param_hash(model.main.parameters()) == main_h
    aux_h = param_hash([p for e in model.aux for p in e.parameters()])
    w0 = model.weights.value.copy()
    train_stage3(model, data[0], cfg, streams)
    assert param_hash(model.decoder.parameters()) == h
    assert param_hash([p for e in model.aux for p in e.parameters()]) == aux_h
    assert not np.array_equal(model.weights.value, w0)


def test_stage2_refuses_unfrozen_decoder(data):
    cfg = replace(TINY, k=1)
    streams = Streams(0)
    model = build_model(cfg, data[0], streams)
    with pytest.raises(StageIsolationError):
        train_stage2(model, data[0], cfg, streams)


def test_k0_pipeline_is_plain_ib_bit_for_bit(data):
    train, _ = data
    cfg = replace(TINY, k=0, train_weights=False, epochs=(3, 1, 1))
    model, _, _ = run_full(cfg, *data)

    # hand-written plain IB: one encoder, one decoder, Adam on the Lagrangian
    s = Streams(cfg.seed)
    kind = ObjectiveKind("vib", cfg.beta, kl_reduction=cfg.kl_reduction)
    enc = Encoder(784, cfg.hidden_width, cfg.feature_dim, kind.variant, s.init, "main")
    dec = Decoder(cfg.feature_dim, 10, s.init, "decoder")
    params = enc.parameters() + dec.parameters()
    state = dc.AdamState()
    prior = kind.prior_for(cfg.feature_dim)
    d = cfg.feature_dim
    for _ in range(cfg.epochs[0]):
        for x, y in batches(train, cfg.batch_size, s.order):
            out = enc(x)
            mean, var = out[:, :d], dc.clip(dc.exp(out[:, d:]), 1e-8, np.inf)
            z = rsample(mean, var, s.noise)
            kl = vib_compression(BatchPosteriors(mean, var, z), prior) / d
            loss = prediction_loss(dec(z), y) + kind.beta * kl
            dc.zero_grad(params)
            dc.backward(loss)
            dc.adam_step(params, state, cfg.lr)
    for a, b in zip(model.main.parameters() + model.decoder.parameters(), params):
        assert a.name == b.name
        np.testing.assert_array_equal(a.value, b.value)
    np.testing.assert_array_equal(model.weights.value, [1.0])


def test_k0_weight_tuning_preserves_accuracy(data):
    cfg = replace(TINY, k=0, epochs=(3, 1, 3))
    _, _, fixed = run_full(replace(cfg, train_weights=False), *data)
    model, _, tuned = run_full(cfg, *data)
    assert abs(tuned.accuracy - fixed.accuracy) <= 0.005
    assert model.weights.value.shape == (1,)


def test_zero_aux_weights_reproduce_k0_loss():
    rng = np.random.default_rng(0)
    kind = ObjectiveKind("vib")
    m = SibModel.build(kind, 2, rng, input_dim=5, base_hidden=8, feature_dim=3, n_classes=4)
    x, y = rng.normal(size=(6, 5)), rng.integers(0, 4, 6)
    main = encode(m.main, x, np.random.default_rng(1), kind)
    aux = [encode(e, x, np.random.default_rng(2), kind) for e in m.aux]
    agg = aggregate(dc.const(np.array([1.0, 0.0, 0.0])), main, aux)

    def loss(post):
        return (prediction_loss(m.decoder(post.samples), y).value
                + vib_compression(post, kind.prior_for(3)).value)

    assert loss(agg) == loss(main)


def test_resume_matches_uninterrupted_run(data, tmp_path):
    cfg = replace(TINY, k=1, seed=2)
    full, _, r_full = run_full(cfg, *data, checkpoint_dir=tmp_path / "a")
    run_full(cfg, *data, checkpoint_dir=tmp_path / "b")
    (tmp_path / "b" / "stage3.npz").unlink()
    (tmp_path / "b" / "stage2.npz").unlink()
    resumed, hist, r_res = run_full(cfg, *data, checkpoint_dir=tmp_path / "b", resume=True)
    assert param_hash(full.parameters()) == param_hash(resumed.parameters())
    assert r_full.i_zy == r_res.i_zy
    assert [r.stage for r in hist.records].count("stage1") == cfg.epochs[0]


def test_nan_input_aborts_with_stage_info(data):
    train, test = data
    poisoned = train.subset(np.arange(len(train)))  # fancy indexing copies
    poisoned.inputs[7, 100] = np.nan  # bypasses construction-time validation
    with pytest.raises(NumericalAbort, match="stage1"):
        run_full(TINY, poisoned, test)


def test_history_has_one_record_per_encoder_epoch(data):
    cfg = replace(TINY, k=2, epochs=(1, 2, 1))
    _, hist, _ = run_full(cfg, *data)
    stage2 = [(r.epoch, r.encoder) for r in hist.stage("stage2")]
    assert stage2 == [(0, 1), (0, 2), (1, 1), (1, 2)]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=(1, 0, 1))
    with pytest.raises(ValueError):
        TrainConfig(variant="xib")
    with pytest.raises(ValueError):
        TrainConfig(k=-1)
