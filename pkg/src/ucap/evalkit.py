"""Corpus BLEU, the correct-concept-words metric, and batch captioning."""

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

from .autodiff.checkpoint import atomic_write_bytes
from .models import beam_search
from .textcorpus import EOS, SOS, LENGTH_CAP


def _ngrams(words, n):
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def closest_ref_length(c, refs):
    return min((len(r) for r in refs), key=lambda rl: (abs(rl - c), rl))


def brevity_penalty(c, r):
    if c == 0:
        return 0.0
    return 1.0 if c > r else math.exp(1.0 - r / c)


def bleu(candidates, references, max_n=4):
    """Corpus BLEU-1..max_n with clipped counts and the closest-length brevity penalty.

    ``candidates`` is a list of token lists; ``references`` a parallel list of
    lists of token lists. No smoothing: any zero precision gives 0.
    """
    if not candidates:
        raise ValueError("bleu: empty candidate set")
    if len(candidates) != len(references):
        raise ValueError("bleu: candidates and references are not aligned")
    matched = [0] * max_n
    total = [0] * max_n
    c_len = r_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("bleu: every candidate needs at least one reference")
        c_len += len(cand)
        r_len += closest_ref_length(len(cand), refs)
        for n in range(1, max_n + 1):
            counts = _ngrams(cand, n)
            max_ref = Counter()
            for ref in refs:
                max_ref |= _ngrams(ref, n)
            matched[n - 1] += sum(min(k, max_ref[g]) for g, k in counts.items())
            total[n - 1] += sum(counts.values())
    bp = brevity_penalty(c_len, r_len)
    scores = []
    log_sum = 0.0
    for n in range(1, max_n + 1):
        if matched[n - 1] == 0 or bp == 0.0:
            scores.extend([0.0] * (max_n - n + 1))
            break
        log_sum += math.log(matched[n - 1] / total[n - 1])
        scores.append(bp * math.exp(log_sum / n))
    return scores


def modified_precision(candidate, references, n):
    counts = _ngrams(candidate, n)
    max_ref = Counter()
    for ref in references:
        max_ref |= _ngrams(ref, n)
    denom = sum(counts.values())
    return sum(min(k, max_ref[g]) for g, k in counts.items()) / denom if denom else 0.0


def correct_concepts(caption, concepts, mode="types"):
    if mode == "types":
        return len(set(caption) & set(concepts))
    if mode == "tokens":
        concepts = set(concepts)
        return sum(1 for w in caption if w in concepts)
    raise ValueError(f"unknown count mode {mode!r}")


def avg_correct_concepts(captions, concepts, mode="types"):
    """Mean number of caption words that are concepts of the image.

    ``captions`` and ``concepts`` are dicts keyed by image id. ``types`` counts
    each distinct concept once per caption; ``tokens`` counts positions.
    """
    if set(captions) != set(concepts):
        missing = sorted(set(captions) ^ set(concepts))[:5]
        raise KeyError(f"caption/concept ids do not match, e.g. {missing}")
    if not captions:
        return 0.0
    return sum(correct_concepts(captions[k], concepts[k], mode) for k in captions) / len(captions)


def generate_captions(generator, features, vocab, beam_size=3, cap=LENGTH_CAP):
    """Beam-decode each ``(id, vector)``; returns ``{id: list of words}``.

    Decoding never emits SOS and always produces at least one word.
    """
    out = {}
    for rid, vec in features:
        ids, _ = beam_search(generator, [vec], beam_size=beam_size, cap=cap,
                             banned=(SOS,), min_len=1)
        out[rid] = [vocab.word(i) for i in ids if i != EOS]
    return out


def save_captions(path, captions):
    lines = [json.dumps({"id": k, "caption": " ".join(v)}) + "\n" for k, v in captions.items()]
    atomic_write_bytes(path, "".join(lines).encode("utf-8"))


def load_captions(path):
    with open(path, encoding="utf-8") as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    return {r["id"]: r["caption"].split() for r in recs}


@dataclass
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    avg_correct_concepts: float
    num_images: int
    count_mode: str = "types"
    captions: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evaluate(captions, references, concepts, count_mode="types"):
    ids = sorted(captions)
    b = bleu([captions[i] for i in ids], [references[i] for i in ids], 4)
    acc = avg_correct_concepts(captions, {i: concepts[i] for i in ids}, count_mode)
    return EvalReport(*b, avg_correct_concepts=acc, num_images=len(ids), count_mode=count_mode,
                      captions={i: " ".join(captions[i]) for i in ids})
