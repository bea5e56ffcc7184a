"""Policy-gradient training of the captioner and its initialization pipeline."""

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .autodiff import AdamState, ContractError, adam_step, clip_grad_norm
from .models import Con2Sen, Discriminator, Generator, Latent, ModelConfig, pad
from .textcorpus import EOS, LENGTH_CAP, P_DROP, SHUFFLE_K, SOS, add_noise

log = logging.getLogger(__name__)

ABLATIONS = {
    "adv": (True, False, False, False),
    "adv+con": (True, True, False, False),
    "adv+con+im": (True, True, True, False),
    "full": (True, True, True, True),
}

LOG_FIELDS = ("step", "l_adv", "l_im", "l_sen", "mean_r_adv", "mean_r_c", "mean_r_im",
              "avg_concepts")


@dataclass
class TrainConfig:
    weights: obj.ObjectiveWeights = field(default_factory=obj.ObjectiveWeights)
    lr_main: float = 1e-4
    lr_init: float = 1e-3
    batch_size: int = 32
    steps: int = 1000
    seed: int = 0
    cap: int = LENGTH_CAP
    clip_norm: float = 5.0
    use_adv: bool = True
    use_con: bool = True
    use_im: bool = True
    use_sen: bool = True
    literal_discount: bool = False
    concept_first_only: bool = False
    sen_updates_encoder: bool = False
    p_drop: float = P_DROP
    shuffle_k: int = SHUFFLE_K
    init_con2sen_steps: int = 400
    init_feat2sen_steps: int = 400
    init_dis_steps: int = 100
    init_lm_steps: int = 100

    def __post_init__(self):
        if self.lr_main <= 0 or self.lr_init <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def set_ablation(self, name):
        try:
            self.use_adv, self.use_con, self.use_im, self.use_sen = ABLATIONS[name]
        except KeyError:
            raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}") from None

    def effective_weights(self):
        w = self.weights
        return obj.ObjectiveWeights(
            lambda_c=w.lambda_c if self.use_con else 0.0,
            lambda_im=w.lambda_im if self.use_im else 0.0,
            lambda_sen=w.lambda_sen if self.use_sen else 0.0,
            gamma=w.gamma,
        )


class TrainLog:
    """Append-only list of per-iteration scalar records."""

    def __init__(self):
        self.records = []

    def append(self, record):
        self.records.append(dict(record))

    def __len__(self):
        return len(self.records)

    def __getitem__(self, k):
        return self.records[k]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in self.records:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in LOG_FIELDS[1:]])
        return buf.getvalue()

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


# ---------------------------------------------------------------- models bundle

@dataclass
class Captioner:
    vocab: object
    config: ModelConfig
    generator: Generator
    discriminator: Discriminator
    con2sen: Con2Sen = None

    @classmethod
    def create(cls, vocab, config, concept_ids, rng):
        gen = Generator(config, rng)
        dis = Discriminator(config, rng, shared_embedding=gen.params["gen.W_e"])
        c2s = Con2Sen(config, rng, concept_ids)
        return cls(vocab, config, gen, dis, c2s)

    def params(self):
        p = self.generator.params.merged(self.discriminator.params)
        return p.merged(self.con2sen.params) if self.con2sen is not None else p

    def state_dict(self):
        return self.params().state_dict()

    def load_state_dict(self, arrays):
        self.params().load_state_dict(arrays)


@dataclass
class TrainData:
    """Unpaired training material: image features, their detections, and a corpus."""

    features: np.ndarray
    detections: list
    corpus: list
    truth: list = None
    ids: list = None


# ---------------------------------------------------------------- returns and baseline

def compute_returns(trace, weights, literal=False):
    """Discounted reward-to-go plus the undiscounted sentence-level image term.

    With ``literal=True`` the discount is gamma**s (s counted from 1) instead of
    gamma**(s - t).
    """
    inst = trace.r_adv + weights.lambda_c * trace.r_c
    n = len(inst)
    g = weights.gamma
    out = np.empty(n)
    if literal:
        disc = inst * g ** np.arange(1, n + 1)
        out[:] = np.cumsum(disc[::-1])[::-1]
    else:
        acc = 0.0
        for t in range(n - 1, -1, -1):
            acc = inst[t] + g * acc
            out[t] = acc
    return out + weights.lambda_im * trace.r_im


def baseline_for(greedy_returns, n):
    """Self-critic baseline for a sampled rollout of length ``n``."""
    b = np.empty(n)
    m = min(n, len(greedy_returns))
    b[:m] = greedy_returns[:m]
    b[m:] = greedy_returns[-1]
    return b


def self_critic_baseline(captioner, features, detections, cfg):
    """Greedy rollouts scored exactly like samples; returns their per-step returns."""
    gen = captioner.generator
    greedy = gen.rollout(features, mode="greedy", cap=cfg.cap)
    traces = score_rollouts(captioner, features, greedy, detections, cfg)
    w = cfg.effective_weights()
    return [compute_returns(tr, w, cfg.literal_discount) for tr in traces]


def score_rollouts(captioner, features, rollouts, detections, cfg):
    """Reward traces (adversarial, concept, image) for rollouts of ``features``."""
    gen, dis = captioner.generator, captioner.discriminator
    with ad.no_grad():
        q, _, h_last = dis.run([r.ids for r in rollouts])
        x_sen = dis.latent_from_hidden(h_last).data
        x_img = gen.project(features).data
    r_im = obj.image_recon_reward(x_img, x_sen) if cfg.use_im else np.zeros(len(rollouts))
    traces = []
    for b, r in enumerate(rollouts):
        r.q = q.data[b, :r.n].copy()
        r_adv = obj.adversarial_reward(r.q) if cfg.use_adv else np.zeros(r.n)
        r_c = obj.concept_reward(r.ids, detections[b], first_only=cfg.concept_first_only)
        traces.append(obj.RewardTrace(r_adv, r_c, float(r_im[b])))
    return traces


def policy_gradient_loss(logp, advantages, mask):
    """-(1/B) sum_b sum_t A_bt log pi_bt over the sampled (unforced) steps."""
    coef = advantages * mask
    return ad.mul(ad.tsum(ad.mul(logp, coef)), -1.0 / logp.shape[0])


def _pad_rows(rows, T):
    out = np.zeros((len(rows), T))
    for b, r in enumerate(rows):
        out[b, :len(r)] = r
    return out


def _pg_mask(rollouts, T):
    m = np.zeros((len(rollouts), T))
    for b, r in enumerate(rollouts):
        m[b, :r.n - 1 if r.forced_eos else r.n] = 1.0
    return m


def _count_concepts(ids, concept_set):
    return len(set(ids) & concept_set)


# ---------------------------------------------------------------- optimizer steps

class Trainer:
    """Owns the optimizers and RNG for one training run."""

    def __init__(self, captioner, data, cfg, rng=None):
        self.cap = captioner
        self.data = data
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.gen_opt = AdamState(learning_rate=cfg.lr_main)
        self.dis_opt = AdamState(learning_rate=cfg.lr_main)
        self.enc_opt = AdamState(learning_rate=cfg.lr_main)
        self.log = TrainLog()
        self.steps_done = 0

    def _batch(self, n_items):
        return self.rng.integers(0, n_items, size=self.cfg.batch_size)

    def generator_step(self, features, detections, corpus_batch, truth=None):
        if len(features) == 0:
            raise ContractError("generator_step: empty batch")
        cfg, gen, dis = self.cfg, self.cap.generator, self.cap.discriminator
        w = cfg.effective_weights()
        sampled = gen.rollout(features, mode="sample", rng=self.rng, cap=cfg.cap)
        traces = score_rollouts(self.cap, features, sampled, detections, cfg)
        greedy_returns = self_critic_baseline(self.cap, features, detections, cfg)
        adv_rows = []
        for r, tr, gret in zip(sampled, traces, greedy_returns):
            ret = compute_returns(tr, w, cfg.literal_discount)
            adv_rows.append(ret - baseline_for(gret, r.n))
        T = max(r.n for r in sampled)
        advantages = _pad_rows(adv_rows, T)

        params = gen.params
        logp, _ = gen.score_sequences(features, [r.ids for r in sampled])
        loss = policy_gradient_loss(logp, advantages, _pg_mask(sampled, T))

        l_sen = 0.0
        update_encoder = cfg.sen_updates_encoder and w.lambda_sen > 0
        if w.lambda_sen > 0 and corpus_batch:
            noisy = [add_noise(s, self.rng, cfg.p_drop, cfg.shuffle_k).ids + (EOS,)
                     for s in corpus_batch]
            if update_encoder:
                latent = dis.encode_latent(noisy)
            else:
                with ad.no_grad():
                    latent = dis.encode_latent(noisy)
            lp, mask = gen.logprob(Latent(latent), corpus_batch)
            sen = obj.sentence_recon_loss(lp, mask)
            l_sen = sen.item()
            loss = ad.add(loss, ad.mul(sen, w.lambda_sen))
        if update_encoder:
            enc = ad.ModelParams({k: v for k, v in dis.params.items()
                                  if not k.startswith(("dis.w_q", "dis.b_q"))})
            enc.zero_grad()
        params.zero_grad()
        ad.backward(loss)
        clip_grad_norm(params, cfg.clip_norm)
        adam_step(params, self.gen_opt)
        if update_encoder:
            clip_grad_norm(enc, cfg.clip_norm)
            adam_step(enc, self.enc_opt)

        if truth is not None:
            concepts = [_count_concepts(r.words, t) for r, t in zip(sampled, truth)]
        else:
            concepts = [_count_concepts(r.words, set(d)) for r, d in zip(sampled, detections)]
        return {
            "pg_loss": loss.item() - w.lambda_sen * l_sen,
            "l_sen": l_sen,
            "mean_r_adv": float(np.mean([tr.r_adv.mean() for tr in traces])),
            "mean_r_c": float(np.mean([tr.r_c.sum() for tr in traces])),
            "mean_r_im": float(np.mean([tr.r_im for tr in traces])),
            "avg_concepts": float(np.mean(concepts)),
        }

    def discriminator_step(self, features, corpus_batch):
        if len(features) == 0 or not corpus_batch:
            raise ContractError("discriminator_step: empty batch")
        cfg, gen, dis = self.cfg, self.cap.generator, self.cap.discriminator
        w = cfg.effective_weights()
        fake = gen.rollout(features, mode="sample", rng=self.rng, cap=cfg.cap)
        with ad.no_grad():
            x_img = gen.project(features).detach()
        return self.discriminator_update([tuple(s) + (EOS,) for s in corpus_batch],
                                         [r.ids for r in fake], x_img, w.lambda_im)

    def discriminator_update(self, real_seqs, fake_seqs, x_img, lambda_im):
        dis = self.cap.discriminator
        q_real, m_real, _ = dis.run(real_seqs)
        q_fake, m_fake, h_last = dis.run(fake_seqs)
        l_adv = obj.discriminator_adv_loss(q_real, q_fake, m_real, m_fake)
        loss = l_adv
        l_im = 0.0
        if lambda_im > 0 and x_img is not None:
            im = obj.image_recon_loss(x_img, dis.latent_from_hidden(h_last))
            l_im = im.item()
            loss = obj.discriminator_total_loss(l_adv, im, obj.ObjectiveWeights(lambda_im=lambda_im))
        params = dis.params
        params.zero_grad()
        ad.backward(loss)
        clip_grad_norm(params, self.cfg.clip_norm)
        adam_step(params, self.dis_opt)
        q_r = float((q_real.data * m_real).sum() / m_real.sum())
        q_f = float((q_fake.data * m_fake).sum() / m_fake.sum())
        return {"l_adv": l_adv.item(), "l_im": l_im, "mean_q_real": q_r, "mean_q_fake": q_f}

    def iteration(self):
        d = self.data
        idx = self._batch(len(d.features))
        sents = [d.corpus[i] for i in self._batch(len(d.corpus))]
        truth = [d.truth[i] for i in idx] if d.truth is not None else None
        g = self.generator_step(d.features[idx], [d.detections[i] for i in idx], sents, truth)
        idx = self._batch(len(d.features))
        sents = [d.corpus[i] for i in self._batch(len(d.corpus))]
        dstats = self.discriminator_step(d.features[idx], sents)
        self.steps_done += 1
        rec = {"step": self.steps_done, "l_adv": dstats["l_adv"], "l_im": dstats["l_im"],
               "l_sen": g["l_sen"], "mean_r_adv": g["mean_r_adv"], "mean_r_c": g["mean_r_c"],
               "mean_r_im": g["mean_r_im"], "avg_concepts": g["avg_concepts"]}
        self.log.append(rec)
        return rec

    def train(self, steps=None, callback=None):
        steps = self.cfg.steps if steps is None else steps
        for _ in range(steps):
            rec = self.iteration()
            if callback is not None:
                callback(self, rec)
        return self.cap, self.log


def train(captioner, data, cfg, callback=None):
    """Alternate one generator and one discriminator update per iteration."""
    return Trainer(captioner, data, cfg).train(callback=callback)


# ---------------------------------------------------------------- initialization

def _supervised_steps(model, params, inputs, targets, steps, batch, lr, clip, rng, input_pick):
    """Teacher-forced cross-entropy training; returns the per-step losses."""
    opt = AdamState(learning_rate=lr)
    losses = []
    n = len(targets)
    for _ in range(steps):
        idx = rng.integers(0, n, size=min(batch, n))
        lp, mask = model.logprob(input_pick(inputs, idx), [targets[i] for i in idx])
        loss = obj.sentence_recon_loss(lp, mask)
        params.zero_grad()
        ad.backward(loss)
        clip_grad_norm(params, clip)
        adam_step(params, opt)
        losses.append(loss.item())
    return losses


def concept_pairs(corpus, concept_ids):
    """(ordered concept ids, sentence) training pairs; sentences without concepts are dropped."""
    cset = set(concept_ids)
    pairs = []
    for s in corpus:
        found = [i for i in s if i in cset]
        if found:
            pairs.append((tuple(dict.fromkeys(found)), tuple(s)))
    return pairs


def pseudo_captions(con2sen, detections, cap=LENGTH_CAP, batch=64, max_concepts=Con2Sen.MAX_CONCEPTS):
    """Greedy con2sen decodes of each image's detected concepts (None when nothing detected).

    Only the ``max_concepts`` most confident detections are fed in, so con2sen
    never sees more concepts than any sentence it was trained on.
    """
    out = [None] * len(detections)
    todo = [k for k, d in enumerate(detections) if d]
    for s in range(0, len(todo), batch):
        chunk = todo[s:s + batch]
        lists = [sorted(detections[k], key=lambda i: (-detections[k][i], i))[:max_concepts]
                 for k in chunk]
        rolls = con2sen.rollout(lists, mode="greedy", cap=cap, banned=(SOS,), min_len=1)
        for k, r in zip(chunk, rolls):
            out[k] = tuple(r.words)
    return out


@dataclass
class InitResult:
    pseudo: list
    skipped: list
    con2sen_losses: list
    feat2sen_losses: list
    dis_stats: list


def init_pipeline(captioner, data, concept_ids, cfg, rng):
    """Pretrain con2sen, build pseudo pairs, fit feat2sen and pretrain the discriminator."""
    gen, dis, c2s = captioner.generator, captioner.discriminator, captioner.con2sen
    pairs = concept_pairs(data.corpus, concept_ids)
    if not pairs:
        raise ContractError("no corpus sentence mentions a dictionary concept")
    c2s_losses = _supervised_steps(
        c2s, c2s.params, [p[0] for p in pairs], [p[1] for p in pairs], cfg.init_con2sen_steps,
        cfg.batch_size, cfg.lr_init, cfg.clip_norm, rng,
        lambda inputs, idx: [inputs[i] for i in idx])

    widest = min(max(len(p[0]) for p in pairs), Con2Sen.MAX_CONCEPTS)
    pseudo = pseudo_captions(c2s, data.detections, cfg.cap, max_concepts=widest)
    keep = [k for k, p in enumerate(pseudo) if p]
    skipped = [k for k, p in enumerate(pseudo) if not p]
    if skipped:
        log.info("feat2sen: skipping %d images without detections", len(skipped))
    if not keep:
        raise ContractError("no image has a pseudo caption")
    feats = data.features[keep]
    f2s_losses = _supervised_steps(
        gen, gen.params, feats, [pseudo[k] for k in keep], cfg.init_feat2sen_steps,
        cfg.batch_size, cfg.lr_init, cfg.clip_norm, rng, lambda inputs, idx: inputs[idx])

    dis_stats = pretrain_discriminator(captioner, data.corpus, cfg, rng)
    return InitResult(pseudo, skipped, c2s_losses, f2s_losses, dis_stats)


def pretrain_discriminator(captioner, corpus, cfg, rng):
    """Adversarial sentence generation on the corpus with a throwaway unconditional generator.

    The throwaway generator sees an all-zero feature vector, is warmed up as a
    language model, then alternates policy-gradient updates against the
    discriminator, which learns from the adversarial loss alone.
    """
    mcfg = captioner.config
    lm = Generator(mcfg, rng)
    zeros = np.zeros((cfg.batch_size, mcfg.feature_dim))
    _supervised_steps(lm, lm.params, zeros, corpus, cfg.init_lm_steps, cfg.batch_size,
                      cfg.lr_init, cfg.clip_norm, rng, lambda inputs, idx: inputs[:len(idx)])
    lm_cap = Captioner(captioner.vocab, mcfg, lm, captioner.discriminator)
    lm_cfg = TrainConfig(**{**asdict(cfg), "weights": obj.ObjectiveWeights(
        lambda_c=0.0, lambda_im=0.0, lambda_sen=0.0, gamma=cfg.weights.gamma)})
    lm_cfg.use_con = lm_cfg.use_im = lm_cfg.use_sen = False
    lm_cfg.use_adv = True
    lm_cfg.lr_main = cfg.lr_init
    tr = Trainer(lm_cap, None, lm_cfg, rng)
    stats = []
    no_det = [{}] * cfg.batch_size
    for _ in range(cfg.init_dis_steps):
        sents = [corpus[i] for i in rng.integers(0, len(corpus), size=cfg.batch_size)]
        tr.generator_step(zeros, no_det, sents)
        sents = [corpus[i] for i in rng.integers(0, len(corpus), size=cfg.batch_size)]
        fake = lm.rollout(zeros, mode="sample", rng=rng, cap=cfg.cap)
        stats.append(tr.discriminator_update([tuple(s) + (EOS,) for s in sents],
                                             [r.ids for r in fake], None, 0.0))
    return stats


def mean_sentence_xent(model, inputs, targets):
    with ad.no_grad():
        lp, mask = model.logprob(inputs, targets)
    return float(-(lp.data * mask).sum() / len(targets))


def token_accuracy(generator, discriminator, sentences, rng, p_drop=P_DROP, k=SHUFFLE_K,
                   batch=64):
    """Teacher-forced argmax accuracy of reconstructing clean sentences from noised ones."""
    hits = total = 0
    with ad.no_grad():
        for s in range(0, len(sentences), batch):
            chunk = [tuple(x) for x in sentences[s:s + batch]]
            noisy = [add_noise(x, rng, p_drop, k).ids + (EOS,) for x in chunk]
            latent = discriminator.encode_latent(noisy)
            targets = [x + (EOS,) for x in chunk]
            ids, mask = pad(targets)
            state = generator.start(Latent(latent))
            prev = np.full(len(chunk), SOS, dtype=np.int64)
            for t in range(ids.shape[1]):
                logp, state = generator.step(prev, state)
                pred = logp.data.argmax(axis=1)
                hits += int(((pred == ids[:, t]) * mask[:, t]).sum())
                total += int(mask[:, t].sum())
                prev = ids[:, t]
    return hits / total
