"""Generator, discriminator and concept-to-sentence networks.

All three are single-layer LSTMs built on :mod:`ucap.autodiff`. Batches of
variable-length sequences are right-padded with EOS and carried with 0/1
masks; nothing after a sequence's EOS influences its outputs.

The shared latent space is the generator's input space: an image enters it
through the generator's input projection, a sentence through the
discriminator's latent head, and the generator decodes from either.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ModelParams, Tensor, uniform_init
from .textcorpus import EOS, LENGTH_CAP, SOS

HIDDEN = 512


@dataclass
class ModelConfig:
    vocab_size: int
    feature_dim: int
    embed_dim: int = HIDDEN
    hidden: int = HIDDEN
    share_embedding: bool = False


@dataclass
class Rollout:
    """One decoded sentence; ``ids`` ends with EOS."""

    ids: tuple
    logprobs: np.ndarray
    greedy: bool = False
    forced_eos: bool = False
    q: np.ndarray = None

    @property
    def n(self):
        return len(self.ids)

    @property
    def words(self):
        return self.ids[:-1]


def _lstm_params(params, prefix, rng, d_in, hidden):
    params.add(prefix + "Wx", uniform_init(rng, (d_in, 4 * hidden)))
    params.add(prefix + "Wh", uniform_init(rng, (hidden, 4 * hidden)))
    params.add(prefix + "b", np.zeros(4 * hidden))


def _lstm(params, prefix, x, state):
    h, c = state
    return ad.lstm_cell(x, h, c, params[prefix + "Wx"], params[prefix + "Wh"], params[prefix + "b"])


def _zeros_state(batch, hidden):
    return Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden)))


def pad(seqs, fill=EOS):
    """Right-pad id sequences into an int matrix and its 0/1 mask."""
    T = max(len(s) for s in seqs)
    ids = np.full((len(seqs), T), fill, dtype=np.int64)
    mask = np.zeros((len(seqs), T))
    for b, s in enumerate(seqs):
        ids[b, :len(s)] = s
        mask[b, :len(s)] = 1.0
    return ids, mask


def _carry(new, old, keep):
    """Row-wise select: ``new`` where ``keep`` is 1, ``old`` elsewhere."""
    if keep.all():
        return new
    k = np.repeat(keep[:, None], new.shape[1], axis=1)
    return ad.add(ad.mul(new, k), ad.mul(old, 1.0 - k))


def _select_rows(state, rows):
    return tuple(Tensor(s.data[rows]) for s in state)


class _Decoder:
    """Autoregressive word decoder shared by the generator and con2sen.

    Subclasses provide ``start(inputs) -> state`` (after which the first
    input word is SOS) and the parameter prefix of their decoder weights.
    """

    prefix = ""
    emb_name = ""

    def step(self, ids, state):
        p = self.params
        x = ad.take_rows(p[self.emb_name], ids)
        h, c = _lstm(p, self.prefix + "lstm.", x, state)
        logits = ad.affine(h, p[self.prefix + "W_out"], p[self.prefix + "b_out"])
        return ad.log_softmax(logits), (h, c)

    def score_sequences(self, inputs, seqs, state=None):
        """Teacher-forced log-probabilities of full output sequences (EOS included).

        Returns ``(logp, mask)``, both ``[B, T]``.
        """
        ids, mask = pad(seqs)
        B, T = ids.shape
        if state is None:
            state = self.start(inputs)
        prev = np.full(B, SOS, dtype=np.int64)
        cols = []
        for t in range(T):
            logp, state = self.step(prev, state)
            cols.append(ad.gather(logp, ids[:, t]))
            prev = ids[:, t]
        return ad.mul(ad.stack(cols, axis=1), mask), mask

    def logprob(self, inputs, sentences):
        """Per-step log p(w_t | w_<t) for word sequences, with EOS appended."""
        for s in sentences:
            if len(s) == 0:
                raise ValueError("target sentence is empty")
            if any(not 0 <= i < self.cfg.vocab_size for i in s):
                raise ValueError(f"target contains invalid ids: {list(s)}")
        return self.score_sequences(inputs, [tuple(s) + (EOS,) for s in sentences])

    def rollout(self, inputs, mode="sample", rng=None, cap=LENGTH_CAP, banned=(), min_len=0):
        """Decode a batch by sampling (``mode="sample"``) or argmax (``"greedy"``).

        EOS is forced at step ``cap``. ``banned`` ids and ``min_len`` only
        constrain greedy choices; sampling always follows the model.
        """
        if cap < 1:
            raise ValueError("cap must be >= 1")
        if mode not in ("sample", "greedy"):
            raise ValueError(f"unknown rollout mode {mode!r}")
        with ad.no_grad():
            state = self.start(inputs)
            B = state[0].shape[0]
            prev = np.full(B, SOS, dtype=np.int64)
            done = np.zeros(B, dtype=bool)
            out_ids = [[] for _ in range(B)]
            out_lp = [[] for _ in range(B)]
            forced = np.zeros(B, dtype=bool)
            rows = np.arange(B)
            for t in range(1, cap + 1):
                logp, state = self.step(prev, state)
                lp = logp.data
                if t == cap:
                    tok = np.full(B, EOS, dtype=np.int64)
                    forced |= ~done
                elif mode == "greedy":
                    tok = _constrained_argmax(lp, banned, t - 1 < min_len)
                else:
                    tok = _sample(lp, rng)
                for b in rows[~done]:
                    out_ids[b].append(int(tok[b]))
                    out_lp[b].append(float(lp[b, tok[b]]))
                done |= tok == EOS
                if done.all():
                    break
                prev = np.where(done, EOS, tok)
        return [Rollout(tuple(out_ids[b]), np.array(out_lp[b]), greedy=mode == "greedy",
                        forced_eos=bool(forced[b]))
                for b in range(B)]


def _sample(logp, rng):
    p = np.exp(logp)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(logp.shape[0]) * cdf[:, -1]
    tok = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(tok, logp.shape[1] - 1)


def _constrained_argmax(logp, banned, block_eos):
    if banned or block_eos:
        logp = logp.copy()
        for i in banned:
            logp[:, i] = -np.inf
        if block_eos:
            logp[:, EOS] = -np.inf
    return logp.argmax(axis=1)


class Generator(_Decoder):
    """Image-conditioned captioner: FC(feature) primes an LSTM that then emits words."""

    emb_name = "gen.W_e"
    prefix = "gen."

    def __init__(self, cfg, rng):
        self.cfg = cfg
        E, H, V, D = cfg.embed_dim, cfg.hidden, cfg.vocab_size, cfg.feature_dim
        p = self.params = ModelParams()
        p.add("gen.W_in", uniform_init(rng, (D, E)))
        p.add("gen.b_in", np.zeros(E))
        p.add("gen.W_e", uniform_init(rng, (V, E)))
        _lstm_params(p, "gen.lstm.", rng, E, H)
        p.add("gen.W_out", uniform_init(rng, (H, V)))
        p.add("gen.b_out", np.zeros(V))

    def project(self, features):
        """The image's position in the shared latent space."""
        f = ad.as_tensor(np.atleast_2d(np.asarray(features.data if isinstance(features, Tensor)
                                                  else features, dtype=np.float64)))
        return ad.affine(f, self.params["gen.W_in"], self.params["gen.b_in"])

    def start(self, inputs):
        """``inputs`` is either raw features ``[B, D]`` or a :class:`Latent`."""
        x = inputs.vector if isinstance(inputs, Latent) else self.project(inputs)
        return _lstm(self.params, "gen.lstm.", x, _zeros_state(x.shape[0], self.cfg.hidden))


@dataclass
class Latent:
    """A batch of vectors already in the shared latent space, ``[B, E]``."""

    vector: Tensor


class Discriminator:
    """Per-prefix real/fake scorer whose final state also encodes the sentence."""

    def __init__(self, cfg, rng, shared_embedding=None):
        self.cfg = cfg
        E, H, V = cfg.embed_dim, cfg.hidden, cfg.vocab_size
        p = self.params = ModelParams()
        self._shared = shared_embedding if cfg.share_embedding else None
        if self._shared is None:
            p.add("dis.W_e", uniform_init(rng, (V, E)))
        _lstm_params(p, "dis.lstm.", rng, E, H)
        p.add("dis.w_q", uniform_init(rng, (H, 1)))
        p.add("dis.b_q", np.zeros(1))
        p.add("dis.W_lat", uniform_init(rng, (H, E)))
        p.add("dis.b_lat", np.zeros(E))

    @property
    def embedding(self):
        return self._shared if self._shared is not None else self.params["dis.W_e"]

    def run(self, seqs):
        """Returns ``(q [B,T], mask [B,T], h_last [B,H])`` for id sequences."""
        if any(len(s) == 0 for s in seqs):
            raise ValueError("discriminator input must be nonempty")
        ids, mask = pad(seqs)
        B, T = ids.shape
        p = self.params
        state = _zeros_state(B, self.cfg.hidden)
        qs = []
        for t in range(T):
            x = ad.take_rows(self.embedding, ids[:, t])
            h, c = _lstm(p, "dis.lstm.", x, state)
            keep = mask[:, t]
            state = (_carry(h, state[0], keep), _carry(c, state[1], keep))
            qs.append(ad.reshape(ad.sigmoid(ad.affine(h, p["dis.w_q"], p["dis.b_q"])), (B,)))
        return ad.stack(qs, axis=1), mask, state[0]

    def score(self, seqs):
        q, mask, h_last = self.run(seqs)
        return q, h_last

    def latent_from_hidden(self, h_last):
        return ad.affine(h_last, self.params["dis.W_lat"], self.params["dis.b_lat"])

    def encode_latent(self, seqs):
        """x' = FC(h_n): the sentence's position in the shared latent space."""
        return self.latent_from_hidden(self.run(seqs)[2])


class Con2Sen(_Decoder):
    """Concept-words encoder LSTM feeding a sentence decoder LSTM.

    ``concept_ids`` lists vocabulary ids in concept-dictionary order; the
    encoder always consumes a sentence's concepts in that order.
    """

    emb_name = "c2s.W_e"
    prefix = "c2s.dec."
    MAX_CONCEPTS = 10

    def __init__(self, cfg, rng, concept_ids):
        self.cfg = cfg
        self.rank = {cid: k for k, cid in enumerate(concept_ids)}
        E, H, V = cfg.embed_dim, cfg.hidden, cfg.vocab_size
        p = self.params = ModelParams()
        p.add("c2s.W_e", uniform_init(rng, (V, E)))
        _lstm_params(p, "c2s.enc.lstm.", rng, E, H)
        _lstm_params(p, "c2s.dec.lstm.", rng, E, H)
        p.add("c2s.dec.W_out", uniform_init(rng, (H, V)))
        p.add("c2s.dec.b_out", np.zeros(V))

    def order(self, ids):
        return sorted(set(ids), key=lambda i: self.rank.get(i, len(self.rank) + i))

    def start(self, concept_lists):
        for cl in concept_lists:
            if not 1 <= len(cl) <= self.MAX_CONCEPTS:
                raise ValueError(f"con2sen needs 1..{self.MAX_CONCEPTS} concepts, got {len(cl)}")
        ids, mask = pad([self.order(cl) for cl in concept_lists])
        state = _zeros_state(len(concept_lists), self.cfg.hidden)
        for t in range(ids.shape[1]):
            x = ad.take_rows(self.params["c2s.W_e"], ids[:, t])
            h, c = _lstm(self.params, "c2s.enc.lstm.", x, state)
            keep = mask[:, t]
            state = (_carry(h, state[0], keep), _carry(c, state[1], keep))
        return state


def beam_search(model, inputs, beam_size=3, cap=LENGTH_CAP, banned=(), min_len=0):
    """Length-normalized beam search for a single input.

    Hypotheses are ranked by total log-probability while expanding and by
    mean per-token log-probability once finished. The greedy decode is kept
    as a candidate, so the result never scores below it.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    with ad.no_grad():
        state = model.start(inputs)
        if state[0].shape[0] != 1:
            raise ValueError("beam_search decodes one input at a time")
        live = [((), 0.0)]
        finished = []
        for t in range(1, cap + 1):
            prev = np.array([h[-1] if h else SOS for h, _ in live], dtype=np.int64)
            logp, state = model.step(prev, state)
            lp = logp.data.copy()
            for i in banned:
                lp[:, i] = -np.inf
            if t - 1 < min_len:
                lp[:, EOS] = -np.inf
            if t == cap:
                keep_eos = lp[:, EOS].copy()
                lp[:] = -np.inf
                lp[:, EOS] = keep_eos
            totals = np.array([s for _, s in live])[:, None] + lp
            flat = totals.ravel()
            order = np.lexsort((np.arange(flat.size), -flat))
            new_live, rows = [], []
            for k in order:
                if len(new_live) >= beam_size or not np.isfinite(flat[k]):
                    break
                r, w = divmod(int(k), lp.shape[1])
                hyp = live[r][0] + (w,)
                if w == EOS:
                    finished.append((hyp, float(flat[k])))
                    # a finished hypothesis still uses one beam slot
                    new_live.append(None)
                else:
                    new_live.append((hyp, float(flat[k])))
                    rows.append(r)
            live = [h for h in new_live if h is not None]
            if not live:
                break
            state = _select_rows(state, np.array(rows))
        greedy = model.rollout(inputs, mode="greedy", cap=cap, banned=banned, min_len=min_len)[0]
        finished.append((greedy.ids, float(greedy.logprobs.sum())))
    best = max(finished, key=lambda hs: (hs[1] / len(hs[0]), -len(hs[0])))
    return best[0], best[1] / len(best[0])
