import math

import numpy as np
import pytest

from arnet import checkpoint as ckio
from arnet.gradcheck import run_scope
from arnet.lstm import RegularizerConfig
from arnet.seq2seq.data import Batch, make_batch, make_examples
from arnet.seq2seq.model import CaptionModel, ModelConfig
from arnet.seq2seq.schedule import gold_probability, scheduled_sampling_step
from arnet.seq2seq.training import Trainer, TrainingConfig, joint_loss, train_two_stage
from arnet.seq2seq.vocab import BOS, EOS, Vocabulary
from arnet.tensor import RngStream


def tiny_model(attention=False, V=6, seed=0, **kw):
    cfg = ModelConfig(src_vocab=V, tgt_vocab=V, emb_dim=4, hidden_dim=5, attention=attention, **kw)
    return CaptionModel(cfg, rng=RngStream(seed))


def copy_examples(n=12, seed=3):
    rng = RngStream(seed)
    vocab = Vocabulary(["a", "b"])
    pairs = []
    for _ in range(n):
        seq = [("a", "b")[int(k)] for k in rng.integers(0, 2, int(rng.integers(1, 4)))]
        pairs.append((seq, list(seq)))
    return make_examples(pairs, vocab, vocab, max_len=8), vocab


def test_zero_output_layer_gives_uniform_loss():
    model = tiny_model()
    model.params["out.W"][...] = 0.0
    model.params["out.b"][...] = 0.0
    ex, _ = copy_examples()
    batch = make_batch(ex)
    tf = model.teacher_forced(batch, need_grads=False)
    assert tf.nll / tf.count == pytest.approx(math.log(6), abs=1e-12)


def test_engineered_logits_give_near_zero_loss():
    model = tiny_model()
    model.params["out.W"][...] = 0.0
    model.params["out.b"][...] = -40.0
    model.params["out.b"][EOS] = 40.0
    batch = Batch(np.array([[BOS, EOS]]), np.ones((1, 2)), np.array([[4]]), np.ones((1, 1)))
    tf = model.teacher_forced(batch, need_grads=False)
    assert tf.nll < 1e-30
    assert tf.correct == tf.count == 1


def test_loss_is_mean_of_nll_and_weighted_reconstruction():
    model = tiny_model(seed=4)
    model.add_arnet(RngStream(5))
    batch = make_batch(copy_examples()[0])
    tf = model.teacher_forced(batch, lam=0.3, arnet="attached", need_grads=False)
    assert tf.l_ar > 0
    assert tf.loss == pytest.approx((tf.nll + 0.3 * tf.l_ar) / batch.size, rel=1e-14)


def test_joint_loss():
    assert joint_loss(2.0, 3.0, 0.01) == pytest.approx(2.03)
    assert joint_loss(2.0, 3.0, 0.0) == 2.0
    with pytest.raises(ValueError):
        joint_loss(1.0, 1.0, -0.1)


@pytest.mark.parametrize("lam", [0, 0.001, 0.005, 0.01, 0.05, 0.1])
def test_lambda_grid_accepted(lam):
    assert TrainingConfig(lam=lam).lam == lam


def test_training_config_lists_every_problem():
    with pytest.raises(ValueError) as err:
        TrainingConfig(lam=-1, beam_size=0, batch_size=0, arnet="sideways")
    msg = str(err.value)
    for key in ("lam", "beam_size", "batch_size", "arnet"):
        assert key in msg


def test_seq2seq_gradients_match_finite_differences():
    report = run_scope("seq2seq", trials=6, tolerance=1e-4, seed=2)
    assert report.passed, report.failures


def test_detached_reconstructor_leaves_host_gradients_alone():
    model = tiny_model(attention=True, seed=6)
    model.add_arnet(RngStream(7))
    batch = make_batch(copy_examples()[0])
    off = model.teacher_forced(batch, lam=0.5, arnet="off").grads
    det = model.teacher_forced(batch, lam=0.5, arnet="detached").grads
    att = model.teacher_forced(batch, lam=0.5, arnet="attached").grads
    for name in model.base_names():
        assert np.array_equal(off[name], det[name]), name
    assert np.any(det["ar.T"] != 0) and not np.any(off["ar.T"])
    assert any(not np.allclose(att[n], off[n]) for n in model.base_names())


def test_length_one_source_encodes_to_single_local_equal_to_global():
    model = tiny_model()
    batch = Batch(np.array([[BOS, EOS]]), np.ones((1, 2)), np.array([[4]]), np.ones((1, 1)))
    g, s, _, _ = model.encode(batch)
    assert s.shape == (1, 1, 5)
    assert np.array_equal(s[0, 0], g[0])


def test_zero_encoder_parameters_give_zero_summary():
    model = tiny_model()
    model.params["enc.T"][...] = 0.0
    model.params["enc.b"][...] = 0.0
    batch = make_batch(copy_examples()[0])
    g, s, _, _ = model.encode(batch)
    assert not np.any(g) and not np.any(s)


def test_scheduled_sampling_extremes_and_frequency():
    rng = RngStream(9)
    gold, model = np.zeros(1000, dtype=int), np.ones(1000, dtype=int)
    assert np.all(scheduled_sampling_step(1.0, gold, model, rng) == 0)
    assert np.all(scheduled_sampling_step(0.0, gold, model, rng) == 1)
    picks = scheduled_sampling_step(0.75, np.zeros(200_000, dtype=int), np.ones(200_000, dtype=int), rng)
    assert abs(np.mean(picks == 0) - 0.75) < 0.01
    assert scheduled_sampling_step(1.0, 3, 5, rng) == 3
    with pytest.raises(ValueError):
        scheduled_sampling_step(1.5, gold, model, rng)


def test_gold_probability_schedule():
    assert gold_probability(0) == 1.0
    assert gold_probability(2, 0.05, 0.75) == pytest.approx(0.9)
    assert gold_probability(100, 0.05, 0.75) == 0.75


def test_attention_check_counts_decoder_steps():
    model = tiny_model(attention=True)
    batch = make_batch(copy_examples()[0])
    tf = model.teacher_forced(batch, need_grads=False, check_attention=True)
    assert tf.attention_checks == batch.tgt.shape[1] - 1


def _cfg(**kw):
    base = dict(lr_stage1=5e-3, lr_stage2=2e-3, batch_size=4, max_len=8, epochs_stage1=2, epochs_stage2=2,
                early_stop_metric="nll", seed=3,
                regularizer=RegularizerConfig("zoneout", 0.1, 0.1, 0.1))
    base.update(kw)
    return TrainingConfig(**base)


def test_stage2_checkpoint_carries_reconstructor():
    ex, _ = copy_examples()
    ck1, ck2, hist = train_two_stage(tiny_model(seed=1), ex, ex, _cfg())
    assert not any(k.startswith("ar.") for k in ck1.params())
    assert {"ar.T", "ar.b", "ar.fc.W", "ar.fc.b"} <= set(ck2.params())
    assert [r["stage"] for r in hist] == ["stage1"] * 2 + ["stage2"] * 2


def test_resume_from_mid_stage_is_bitwise_identical():
    ex, _ = copy_examples()
    _, full, _ = train_two_stage(tiny_model(seed=1), ex, ex, _cfg())

    tr = Trainer(tiny_model(seed=1), ex, ex, _cfg())
    tr.run_stage(max_epochs=1)
    blob = ckio.encode(tr.checkpoint())
    tr2 = Trainer.from_checkpoint(ckio.decode(blob), ex, ex)
    tr2.run_stage()
    tr2.begin_stage2()
    tr2.run_stage()
    assert ckio.encode(tr2.checkpoint()) == ckio.encode(full)


def test_invalid_arnet_mode_and_missing_reconstructor():
    model = tiny_model()
    batch = make_batch(copy_examples()[0])
    with pytest.raises(ValueError):
        model.teacher_forced(batch, arnet="attached")
    with pytest.raises(ValueError):
        model.teacher_forced(batch, arnet="bogus")
