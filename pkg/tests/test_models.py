import itertools

import numpy as np
import pytest

from ucap import autodiff as ad
from ucap.models import Con2Sen, Discriminator, Generator, Latent, ModelConfig, beam_search
from ucap.textcorpus import EOS, SOS

CFG = ModelConfig(vocab_size=12, feature_dim=6, embed_dim=8, hidden=10)


def make_gen(seed=0, cfg=CFG):
    return Generator(cfg, np.random.default_rng(seed))


def make_dis(seed=0, cfg=CFG):
    return Discriminator(cfg, np.random.default_rng(seed))


def zero_out(params):
    for t in params.values():
        t.data[...] = 0.0


def feats(n=2, seed=1):
    return np.random.default_rng(seed).normal(size=(n, CFG.feature_dim))


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def oracle_lstm(x, h, c, wx, wh, b):
    z = x @ wx + h @ wh + b
    H = h.shape[-1]
    i, f, o = sig(z[:H]), sig(z[H:2 * H]), sig(z[2 * H:3 * H])
    g = np.tanh(z[3 * H:])
    c = f * c + i * g
    return o * np.tanh(c), c


# ---------------------------------------------------------------- generator

def test_greedy_is_deterministic():
    gen = make_gen()
    a = gen.rollout(feats(), mode="greedy")
    b = gen.rollout(feats(), mode="greedy")
    assert [r.ids for r in a] == [r.ids for r in b]


def test_eos_bias_terminates_immediately():
    gen = make_gen()
    gen.params["gen.b_out"].data[EOS] = 50.0
    rolls = gen.rollout(feats(3), mode="sample", rng=np.random.default_rng(0))
    assert all(r.ids == (EOS,) and r.n == 1 for r in rolls)


def test_cap_forces_eos():
    gen = make_gen()
    gen.params["gen.b_out"].data[EOS] = -50.0
    r = gen.rollout(feats(1), mode="greedy", cap=5)[0]
    assert r.n == 5 and r.ids[-1] == EOS and r.forced_eos


def test_first_step_sampling_frequencies():
    gen = make_gen(3)
    f = feats(1)
    with ad.no_grad():
        logp, _ = gen.step(np.array([SOS]), gen.start(f))
    p = np.exp(logp.data[0])
    rolls = gen.rollout(np.repeat(f, 50_000, axis=0), mode="sample",
                        rng=np.random.default_rng(0), cap=1 + 1)
    counts = np.bincount([r.ids[0] for r in rolls], minlength=CFG.vocab_size)
    assert np.abs(counts / 50_000 - p).max() <= 0.01


def test_rollout_logprobs_match_teacher_forcing():
    gen = make_gen(4)
    f = feats(4)
    rolls = gen.rollout(f, mode="sample", rng=np.random.default_rng(1))
    lp, mask = gen.score_sequences(f, [r.ids for r in rolls])
    for b, r in enumerate(rolls):
        np.testing.assert_allclose(lp.data[b, :r.n], r.logprobs, atol=1e-10)
        assert np.all(r.logprobs <= 0)


def test_zero_model_is_uniform():
    gen = make_gen()
    zero_out(gen.params)
    lp, mask = gen.logprob(feats(1), [(3, 4, 5)])
    np.testing.assert_allclose(lp.data, np.full((1, 4), np.log(1 / CFG.vocab_size)), atol=1e-12)


def test_logprob_two_paths():
    gen = make_gen(5)
    f = feats(1)
    target = (4, 7, 3)
    lp, _ = gen.logprob(f, [target])
    # independent path: plain numpy forward through the generator's weights
    P = {k: v.data for k, v in gen.params.items()}
    x = f[0] @ P["gen.W_in"] + P["gen.b_in"]
    h, c = oracle_lstm(x, np.zeros(CFG.hidden), np.zeros(CFG.hidden),
                       P["gen.lstm.Wx"], P["gen.lstm.Wh"], P["gen.lstm.b"])
    total = 0.0
    for prev, nxt in zip((SOS,) + target, target + (EOS,)):
        h, c = oracle_lstm(P["gen.W_e"][prev], h, c, P["gen.lstm.Wx"], P["gen.lstm.Wh"],
                           P["gen.lstm.b"])
        z = h @ P["gen.W_out"] + P["gen.b_out"]
        total += z[nxt] - np.log(np.exp(z).sum())
    assert lp.data.sum() == pytest.approx(total, abs=1e-10)
    assert lp.data.sum() <= 0


def test_logprob_rejects_bad_ids():
    with pytest.raises(ValueError, match="invalid"):
        make_gen().logprob(feats(1), [(3, 99)])


def test_latent_input_bypasses_projection():
    gen = make_gen()
    z = ad.Tensor(np.random.default_rng(0).normal(size=(1, CFG.embed_dim)))
    a, _ = gen.logprob(Latent(z), [(3, 4)])
    gen.params["gen.W_in"].data[...] = 7.0
    b, _ = gen.logprob(Latent(z), [(3, 4)])
    np.testing.assert_array_equal(a.data, b.data)


# ---------------------------------------------------------------- discriminator

def test_zero_discriminator_scores_half():
    dis = make_dis()
    zero_out(dis.params)
    q, _, _ = dis.run([(3, 4, 5, EOS)])
    np.testing.assert_array_equal(q.data, 0.5)


def test_discriminator_is_causal():
    dis = make_dis(2)
    seq = (3, 8, 5, 9, EOS)
    full, _, _ = dis.run([seq])
    for t in range(1, len(seq)):
        part, _, _ = dis.run([seq[:t]])
        np.testing.assert_array_equal(part.data[0], full.data[0, :t])


def test_discriminator_gate_oracle():
    dis = make_dis(6)
    seq = (5, 3, 11, EOS)
    q, _, h_last = dis.run([seq, (4, EOS)])
    P = {k: v.data for k, v in dis.params.items()}
    h = c = np.zeros(CFG.hidden)
    for t, w in enumerate(seq):
        h, c = oracle_lstm(P["dis.W_e"][w], h, c, P["dis.lstm.Wx"], P["dis.lstm.Wh"],
                           P["dis.lstm.b"])
        assert q.data[0, t] == pytest.approx(sig(h @ P["dis.w_q"][:, 0] + P["dis.b_q"][0]),
                                             abs=1e-12)
    np.testing.assert_allclose(h_last.data[0], h, atol=1e-12)


def test_padding_does_not_leak():
    dis = make_dis(1)
    _, _, alone = dis.run([(4, EOS)])
    _, _, batched = dis.run([(4, EOS), (3, 5, 6, 7, EOS)])
    # batched BLAS calls may round differently, but nothing after EOS may leak in
    np.testing.assert_allclose(alone.data[0], batched.data[0], rtol=0, atol=1e-15)


def test_latent_zero_head():
    dis = make_dis()
    dis.params["dis.W_lat"].data[...] = 0.0
    assert not dis.encode_latent([(3, 4, EOS)]).data.any()


def test_latent_dimension_and_determinism():
    dis = make_dis(3)
    a = dis.encode_latent([(3, 4, EOS)]).data
    assert a.shape == (1, CFG.embed_dim)
    np.testing.assert_array_equal(a, dis.encode_latent([(3, 4, EOS)]).data)


def test_latent_sees_last_word():
    rng = np.random.default_rng(0)
    for seed in range(5):
        dis = make_dis(seed)
        body = tuple(int(w) for w in rng.integers(3, CFG.vocab_size, size=4))
        a = dis.encode_latent([body + (3,)]).data
        b = dis.encode_latent([body + (4,)]).data
        assert np.abs(a - b).max() > 1e-8


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        make_dis().run([()])


# ---------------------------------------------------------------- con2sen

def test_con2sen_zero_model_uniform():
    c2s = Con2Sen(CFG, np.random.default_rng(0), [3, 4, 5])
    zero_out(c2s.params)
    lp, _ = c2s.logprob([[3]], [(6,)])
    np.testing.assert_allclose(lp.data, np.log(1 / CFG.vocab_size), atol=1e-12)


def test_con2sen_concept_order_is_canonical():
    c2s = Con2Sen(CFG, np.random.default_rng(1), [5, 3, 4])
    a = c2s.rollout([[3, 5, 4]], mode="greedy")[0]
    b = c2s.rollout([[4, 3, 5]], mode="greedy")[0]
    assert a.ids == b.ids
    assert c2s.order([3, 4, 5]) == [5, 3, 4]


def test_con2sen_concept_count_bounds():
    c2s = Con2Sen(CFG, np.random.default_rng(0), [3])
    with pytest.raises(ValueError):
        c2s.start([[]])
    with pytest.raises(ValueError):
        c2s.start([[3] * 11])


# ---------------------------------------------------------------- beam search

def test_beam_one_is_greedy():
    for seed in range(5):
        gen = make_gen(seed)
        f = feats(1, seed)
        ids, _ = beam_search(gen, f, beam_size=1)
        assert ids == gen.rollout(f, mode="greedy")[0].ids


def test_beam_dominates_greedy():
    for seed in range(5):
        gen = make_gen(seed)
        f = feats(1, seed)
        _, score = beam_search(gen, f, beam_size=3)
        g = gen.rollout(f, mode="greedy")[0]
        assert score >= g.logprobs.mean() - 1e-12


def test_exhaustive_beam_matches_brute_force():
    cfg = ModelConfig(vocab_size=4, feature_dim=3, embed_dim=5, hidden=6)
    gen = Generator(cfg, np.random.default_rng(8))
    for p in gen.params.values():
        p.data *= 20  # sharpen away from uniform so the argmax is unique
    f = np.random.default_rng(2).normal(size=(1, 3))
    cap = 3
    words = [w for w in range(4) if w != EOS]
    candidates = [(EOS,)] + [(w, EOS) for w in words]
    candidates += [(a, b, EOS) for a, b in itertools.product(words, repeat=2)]
    best = max(candidates, key=lambda s: gen.score_sequences(f, [s])[0].data.sum() / len(s))
    ids, _ = beam_search(gen, f, beam_size=4 ** 3, cap=cap)
    assert ids == best


def test_beam_size_validated():
    with pytest.raises(ValueError):
        beam_search(make_gen(), feats(1), beam_size=0)
