import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slotcast.nanoformer import (BadToken, ConfigError, CorpusTooShort, CorruptFile,
                                 IncrementalDecoder, ModelConfig, NonFiniteLoss, SamplerConfig,
                                 TooLong, TrainConfig, VersionMismatch, VocabMismatch, forward,
                                 init_params, load_checkpoint, loss_and_grads, loss_only,
                                 sample_slot, save_checkpoint, train)
from slotcast.nanoformer import autodiff as ad
from slotcast.nanoformer.checkpoint import dumps, loads
from slotcast.nanoformer.sample import EmptyMask, SlotOverflow, write_probability_csv
from slotcast.nanoformer.train import lr_at, write_loss_csv
from slotcast.slottok import Token, encode_stream
from slotcast.synchk import SyntaxMask, validate

from conftest import finite_difference_errors, periodic_records

SMALL = ModelConfig(context_len=32, n_layers=2)


def test_default_parameter_count():
    p = init_params(ModelConfig())
    assert p.count() == 2888
    assert 2400 <= p.count() <= 3000
    assert p.count(include_position=True) == 2888 + 1024 * 8


def test_init_deterministic_and_layout():
    a, b = init_params(SMALL, seed=5), init_params(SMALL, seed=5)
    assert all(np.array_equal(a[k], b[k]) for k in a.tensors)
    assert np.all(a["h0.ln1.g"] == 1) and np.all(a["h0.attn.b"] == 0)
    assert abs(float(a["wte"].std()) - 0.02) < 0.01
    c = init_params(SMALL, seed=6)
    assert not np.array_equal(a["wte"], c["wte"])


def test_config_errors():
    with pytest.raises(ConfigError):
        init_params(ModelConfig(embed_dim=9, n_heads=8))
    with pytest.raises(ConfigError):
        init_params(ModelConfig(activation="relu"))


def test_forward_shape_and_errors():
    p = init_params(SMALL)
    out = forward(p, [3])
    assert out.shape == (1, 32) and np.isfinite(out).all()
    with pytest.raises(TooLong):
        forward(p, np.zeros(33, dtype=int))
    with pytest.raises(BadToken):
        forward(p, [32])


def test_causal_masking_is_bitwise(rng):
    p = init_params(SMALL, seed=1)
    toks = rng.integers(0, 32, size=32)
    base = forward(p, toks)
    for j in (0, 7, 31):
        other = toks.copy()
        other[j:] = rng.integers(0, 32, size=32 - j)
        out = forward(p, other)
        assert np.array_equal(out[:j], base[:j])


def test_attention_rows_sum_to_one(rng):
    s = rng.normal(size=(2, 3, 9, 9)).astype(np.float32)
    p = ad.causal_softmax_raw(s)
    assert np.allclose(p.sum(-1), 1.0, atol=1e-6)
    assert np.all(np.triu(p[0, 0], k=1) == 0)


def test_softmax_argmax_invariant_to_scaling(rng):
    z = rng.normal(size=32)
    for c in (0.5, 2.0, 10.0):
        assert np.argmax(np.exp(z * c) / np.exp(z * c).sum()) == np.argmax(z)


def test_baseline_loss(rng):
    p = init_params(ModelConfig(), seed=0)
    x = rng.integers(0, 32, size=(4, 257))
    assert abs(loss_only(p, x[:, :-1], x[:, 1:]) - math.log(32)) < 0.15


def test_gradient_check_two_layers():
    errs = finite_difference_errors(ModelConfig(context_len=8, n_layers=2), 60, seed=2)
    assert max(errs) < 1e-4


def test_loss_grads_deterministic(rng):
    p = init_params(SMALL)
    x = rng.integers(0, 32, size=(3, 33))
    a = loss_and_grads(p, x[:, :-1], x[:, 1:])
    b = loss_and_grads(p, x[:, :-1], x[:, 1:])
    assert a[0] == b[0]
    assert all(np.array_equal(a[1][k], b[1][k]) for k in a[1])


def test_nonfinite_loss():
    p = init_params(SMALL)
    p.tensors["lnf.b"][:] = np.nan
    with pytest.raises(NonFiniteLoss):
        loss_and_grads(p, np.zeros((1, 4), int), np.zeros((1, 4), int))


def test_incremental_decoder_matches_forward(rng):
    p = init_params(SMALL, seed=3)
    toks = rng.integers(0, 32, size=40).tolist()
    dec = IncrementalDecoder(p)
    got = [dec.prefill(toks[:5])]
    for t in toks[5:]:
        got.append(dec.step(t))
    for n, logits in enumerate(got):
        end = 5 + n
        window = toks[max(0, end - 32):end]
        ref = forward(p, window)[-1]
        assert np.allclose(logits, ref, atol=1e-5)


def test_checkpoint_round_trip(tmp_path):
    p = init_params(SMALL, seed=9)
    path = tmp_path / "m.ckpt"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    assert q.config == p.config
    assert all(q[k].dtype == p[k].dtype and q[k].tobytes() == p[k].tobytes() for k in p.tensors)


def test_checkpoint_errors(tmp_path):
    p = init_params(SMALL)
    blob = dumps(p)
    with pytest.raises(CorruptFile):
        loads(blob[: len(blob) // 2])
    with pytest.raises(VocabMismatch):
        loads(dumps(p, vocab_digest=bytes(32)))
    bumped = blob[:4] + (99).to_bytes(2, "little") + blob[6:]
    with pytest.raises(VersionMismatch):
        loads(bumped)
    flipped = bytearray(blob)
    flipped[-20] ^= 0xFF
    with pytest.raises(CorruptFile):
        loads(bytes(flipped))
    with pytest.raises(CorruptFile):
        loads(b"junk")


CONTEXT = encode_stream(periodic_records(10))


def test_sampling_determinism():
    p = init_params(SMALL, seed=4)
    g = SamplerConfig(mode="greedy", max_tokens_per_slot=64)
    m = SamplerConfig(seed=11, max_tokens_per_slot=64)
    mask = lambda: SyntaxMask.following(CONTEXT)  # noqa: E731
    assert sample_slot(p, CONTEXT, g, mask()).tokens == sample_slot(p, CONTEXT, g, mask()).tokens
    a, b = sample_slot(p, CONTEXT, m, mask()), sample_slot(p, CONTEXT, m, mask())
    assert a.tokens == b.tokens
    assert np.array_equal(a.probs, b.probs)
    assert a.probs.shape == (len(a.tokens), 32)
    assert np.allclose(a.probs.sum(1), 1.0)


def test_low_temperature_matches_greedy():
    p = init_params(SMALL, seed=4)
    greedy = sample_slot(p, CONTEXT, SamplerConfig(mode="greedy"), SyntaxMask.following(CONTEXT))
    cold = sample_slot(p, CONTEXT, SamplerConfig(temperature=1e-6, seed=3),
                       SyntaxMask.following(CONTEXT))
    assert cold.tokens == greedy.tokens


def test_overflow_and_empty_mask():
    p = init_params(SMALL, seed=4)

    class Never:
        def allowed(self):
            m = np.zeros(32, bool)
            m[Token.D1] = True
            return m

        def push(self, tok):
            pass

    with pytest.raises(SlotOverflow) as info:
        sample_slot(p, CONTEXT, SamplerConfig(max_tokens_per_slot=5), Never())
    assert len(info.value.tokens) == 5

    class Nothing(Never):
        def allowed(self):
            return np.zeros(32, bool)

    with pytest.raises(EmptyMask):
        sample_slot(p, CONTEXT, SamplerConfig(), Nothing())
    with pytest.raises(ConfigError):
        sample_slot(p, CONTEXT, SamplerConfig(temperature=0.0))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.3, 3.0))
def test_masked_samples_always_validate(seed, temperature):
    p = init_params(SMALL, seed=seed % 7)
    mask = SyntaxMask.following(CONTEXT)
    out = sample_slot(p, CONTEXT, SamplerConfig(temperature=temperature, seed=seed), mask)
    assert out.tokens[-1] == Token.SEMICOLON
    assert validate(out.tokens, mask_start_digit(CONTEXT)) == []


def mask_start_digit(context):
    from slotcast.synchk import next_slot_digit
    return next_slot_digit(context)


def test_probability_csv():
    import io
    buf = io.StringIO()
    write_probability_csv(np.full((2, 32), 1 / 32), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "sampling_step,token_id,probability"
    assert len(lines) == 1 + 64 and lines[1].startswith("0,0,")


def test_lr_schedule():
    tc = TrainConfig(steps=1000, learning_rate=1e-3, warmup_steps=100)
    assert lr_at(tc, 0) == pytest.approx(1e-5)
    assert lr_at(tc, 99) == pytest.approx(1e-3)
    assert lr_at(tc, 999) == pytest.approx(1e-4, rel=1e-2)
    assert all(lr_at(tc, s) >= lr_at(tc, s + 1) for s in range(100, 999))


def test_train_edge_cases():
    p = init_params(SMALL)
    corpus = encode_stream(periodic_records(60))
    res = train(p, corpus, TrainConfig(steps=0))
    assert res.history == [] and all(np.array_equal(res.params[k], p[k]) for k in p.tensors)
    with pytest.raises(CorpusTooShort):
        train(p, corpus[:33], TrainConfig(steps=1))
    with pytest.raises(ConfigError):
        train(p, corpus, TrainConfig(steps=1, batch_windows=0))


def test_short_training_is_deterministic_and_learns():
    p = init_params(SMALL, seed=0)
    corpus = encode_stream(periodic_records(300))
    tc = TrainConfig(steps=60, batch_windows=8, micro_batch=4, learning_rate=1e-2,
                     warmup_steps=10, eval_interval=20, eval_windows=8, seed=5)
    a = train(p, corpus, tc)
    b = train(p, corpus, tc)
    assert [r["train_loss"] for r in a.history] == [r["train_loss"] for r in b.history]
    assert all(np.array_equal(a.params[k], b.params[k]) for k in p.tensors)
    losses = [r["train_loss"] for r in a.history]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    assert a.best_step in (20, 40, 60)
    import io
    buf = io.StringIO()
    write_loss_csv(a.history, buf)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "step,train_loss,val_loss,lr" and len(rows) == 61
    assert rows[1].split(",")[2] == "" and rows[20].split(",")[2] != ""


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_reports_last_good_on_divergence():
    p = init_params(SMALL, seed=0)
    corpus = encode_stream(periodic_records(300))
    tc = TrainConfig(steps=5, batch_windows=2, micro_batch=2, learning_rate=1e30,
                     warmup_steps=1, clip_norm=1e30, eval_interval=1, eval_windows=2)
    with pytest.raises(NonFiniteLoss) as info:
        train(p, corpus, tc)
    assert info.value.last_good is not None and info.value.last_good.all_finite()
