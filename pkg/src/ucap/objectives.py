"""Rewards and losses for the captioner.

Loss functions operate on :class:`~ucap.autodiff.Tensor` so they sit on the
tape; reward functions are plain numpy because rewards are constants to the
policy gradient.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

PROB_EPS = 1e-8


@dataclass
class ObjectiveWeights:
    lambda_c: float = 10.0
    lambda_im: float = 0.2
    lambda_sen: float = 1.0
    gamma: float = 0.9

    def __post_init__(self):
        if min(self.lambda_c, self.lambda_im, self.lambda_sen) < 0:
            raise ValueError("objective weights must be non-negative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")


@dataclass
class RewardTrace:
    """Per-step rewards of one rollout plus its sentence-level image reward."""

    r_adv: np.ndarray
    r_c: np.ndarray
    r_im: float = 0.0

    def __post_init__(self):
        self.r_adv = np.asarray(self.r_adv, dtype=np.float64)
        self.r_c = np.asarray(self.r_c, dtype=np.float64)
        if self.r_adv.shape != self.r_c.shape:
            raise ValueError("reward streams differ in length")

    def __len__(self):
        return len(self.r_adv)


def adversarial_reward(q):
    return np.log(np.clip(np.asarray(q, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS))


def _clamped_log(q):
    return ad.log(ad.clip(ad.as_tensor(q), PROB_EPS, 1.0 - PROB_EPS))


def _masked_mean(x, mask):
    """Per-row mean of ``x`` over the mask's active steps, averaged over rows."""
    mask = np.asarray(mask, dtype=np.float64)
    weights = mask / mask.sum(axis=1, keepdims=True)
    return ad.mul(ad.tsum(ad.mul(x, weights)), 1.0 / mask.shape[0])


def discriminator_adv_loss(q_real, q_fake, mask_real=None, mask_fake=None):
    """-[mean_t log q_real + mean_t log(1 - q_fake)], averaged over the batch.

    Accepts single sequences (1-D) or padded batches (2-D, with masks).
    """
    q_real, q_fake = ad.as_tensor(q_real), ad.as_tensor(q_fake)
    if q_real.data.ndim == 1:
        q_real = ad.reshape(q_real, (1, -1))
    if q_fake.data.ndim == 1:
        q_fake = ad.reshape(q_fake, (1, -1))
    if q_real.size == 0 or q_fake.size == 0:
        raise ValueError("discriminator loss needs nonempty real and generated scores")
    mask_real = np.ones(q_real.shape) if mask_real is None else mask_real
    mask_fake = np.ones(q_fake.shape) if mask_fake is None else mask_fake
    real = _masked_mean(ad.mul(_clamped_log(q_real), mask_real), mask_real)
    fake = _masked_mean(ad.mul(_clamped_log(ad.sub(1.0, q_fake)), mask_fake), mask_fake)
    return ad.neg(ad.add(real, fake))


def detection_by_id(detection, vocab):
    """``{vocab id: confidence}`` for the in-vocabulary concepts of a detection."""
    return {vocab.stoi[w]: s for w, s in detection.concepts if w in vocab.stoi}


def concept_reward(ids, detection, vocab=None, first_only=False):
    """Per-step confidence of the detected concept equal to each generated word.

    ``detection`` is a ConceptDetection (then ``vocab`` is required) or an
    already-mapped ``{id: confidence}`` dict. Duplicates are merged upstream,
    so at most one concept can match a step. With ``first_only`` a concept
    pays out at its first occurrence in the sentence and never again.
    """
    if vocab is not None:
        detection = detection_by_id(detection, vocab)
    out = np.array([detection.get(int(i), 0.0) for i in ids], dtype=np.float64)
    if first_only:
        seen = set()
        for t, i in enumerate(ids):
            if int(i) in seen:
                out[t] = 0.0
            seen.add(int(i))
    return out


def image_recon_loss(x_img, x_sen):
    """Squared distance between image and sentence latents; batch mean for matrices."""
    x_img, x_sen = ad.as_tensor(x_img), ad.as_tensor(x_sen)
    if x_img.shape != x_sen.shape:
        raise ad.ShapeError(f"image_recon_loss: {x_img.shape} vs {x_sen.shape}")
    sq = ad.tsum(ad.square(ad.sub(x_img, x_sen)))
    if x_img.data.ndim == 2:
        sq = ad.mul(sq, 1.0 / x_img.shape[0])
    return sq


def image_recon_reward(x_img, x_sen):
    """Per-row negative squared distance (numpy)."""
    d = np.atleast_2d(np.asarray(x_img, dtype=np.float64) - np.asarray(x_sen, dtype=np.float64))
    return -(d * d).sum(axis=1)


def sentence_recon_loss(logp, mask=None):
    """Cross-entropy of a teacher-forced target: -sum_t log p, batch-averaged."""
    logp = ad.as_tensor(logp)
    if logp.data.ndim == 1:
        logp = ad.reshape(logp, (1, -1))
    if mask is not None:
        logp = ad.mul(logp, mask)
    return ad.mul(ad.tsum(logp), -1.0 / logp.shape[0])


def discriminator_total_loss(l_adv, l_im, weights=None):
    weights = weights or ObjectiveWeights()
    return ad.add(l_adv, ad.mul(l_im, weights.lambda_im))
