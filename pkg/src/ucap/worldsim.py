"""Synthetic images, a noisy concept detector, a template corpus, and file I/O.

Images are stand-ins for CNN features: each concept owns a fixed random unit
pattern and an image vector is the sum of its concepts' patterns plus
Gaussian noise. Vectors are rounded to float32 so the on-disk format
round-trips exactly.
"""

import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff.checkpoint import atomic_write_bytes

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"UFEA1"
FEATURE_DIM = 64
NOISE_SIGMA = 0.05
P_MISS = 0.1
P_FALSE = 0.02

CONCEPT_WORDS = (
    "dog", "cat", "car", "horse", "bird", "person", "table", "chair", "bottle", "cup",
    "bus", "boat", "train", "tree", "clock", "bench", "laptop", "phone", "pizza", "kite",
    "bicycle", "truck", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "umbrella",
    "book", "vase", "bowl", "banana", "apple", "sandwich", "orange", "couch", "bed", "sink",
    "oven",
)

TEMPLATES = (
    "a photo of a {c} in the room with light",
    "there is a {c} standing near the old wooden fence",
    "close up view of a {c} on a sunny summer day",
    "an image showing a {c} in front of a white wall",
    "a small {c} sitting quietly in the middle of the street",
    "a {c} and a {c} together in the green park",
    "picture of a {c} next to a {c} on the ground",
    "a {c} with a {c} near the window at night",
)


class ConfigError(ValueError):
    pass


class DatasetError(ValueError):
    pass


@dataclass
class ImageFeature:
    id: str
    vector: np.ndarray
    truth_concepts: tuple = None


@dataclass
class ConceptDetection:
    """Detected ``(concept word, confidence)`` pairs, one per concept."""

    concepts: list = field(default_factory=list)

    def __post_init__(self):
        merged = {}
        for word, score in self.concepts:
            score = float(score)
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"confidence {score} for {word!r} outside [0, 1]")
            merged[word] = max(score, merged.get(word, 0.0))
        self.concepts = list(merged.items())

    def __len__(self):
        return len(self.concepts)

    def as_dict(self):
        return dict(self.concepts)

    def words(self):
        return [w for w, _ in self.concepts]


def concept_dictionary(num_concepts):
    if num_concepts <= len(CONCEPT_WORDS):
        return list(CONCEPT_WORDS[:num_concepts])
    extra = [f"object{k}" for k in range(num_concepts - len(CONCEPT_WORDS))]
    return list(CONCEPT_WORDS) + extra


@dataclass
class World:
    concepts: list
    patterns: np.ndarray
    images: list

    @property
    def truth(self):
        return {img.id: list(img.truth_concepts) for img in self.images}


def gen_world(seed, num_concepts=20, num_images=500, dim=FEATURE_DIM, sigma=NOISE_SIGMA,
              max_concepts=4, id_prefix="img"):
    """Deterministic synthetic image set with known concepts per image."""
    if num_concepts > dim:
        raise ConfigError(f"num_concepts ({num_concepts}) must not exceed dim ({dim})")
    rng = np.random.default_rng(seed)
    concepts = concept_dictionary(num_concepts)
    patterns = rng.normal(size=(num_concepts, dim))
    patterns /= np.linalg.norm(patterns, axis=1, keepdims=True)
    images = []
    for k in range(num_images):
        n = int(rng.integers(1, min(max_concepts, num_concepts) + 1))
        chosen = np.sort(rng.choice(num_concepts, size=n, replace=False))
        vec = patterns[chosen].sum(axis=0) + sigma * rng.normal(size=dim)
        vec = vec.astype(np.float32).astype(np.float64)
        images.append(ImageFeature(f"{id_prefix}{k}", vec, tuple(concepts[c] for c in chosen)))
    return World(concepts, patterns, images)


def sample_images(world, seed, num_images, sigma=NOISE_SIGMA, max_concepts=4, id_prefix="test"):
    """Fresh images drawn from an existing world's concept patterns."""
    rng = np.random.default_rng(seed)
    C, dim = world.patterns.shape
    out = []
    for k in range(num_images):
        n = int(rng.integers(1, min(max_concepts, C) + 1))
        chosen = np.sort(rng.choice(C, size=n, replace=False))
        vec = world.patterns[chosen].sum(axis=0) + sigma * rng.normal(size=dim)
        out.append(ImageFeature(f"{id_prefix}{k}", vec.astype(np.float32).astype(np.float64),
                                tuple(world.concepts[c] for c in chosen)))
    return out


def detect_concepts(image, concepts, rng, p_miss=P_MISS, p_false=P_FALSE):
    """Noisy stand-in for an object detector, reporting in dictionary order."""
    if not concepts:
        raise ConfigError("concept dictionary is empty")
    truth = set(image.truth_concepts or ())
    found = []
    for word in concepts:
        u = rng.random()
        if word in truth:
            if u >= p_miss:
                found.append((word, float(rng.uniform(0.6, 1.0))))
        elif u < p_false:
            found.append((word, float(rng.uniform(0.1, 0.5))))
    return ConceptDetection(found)


def synth_corpus(concept_sets, rng, templates=TEMPLATES, num_sentences=None):
    """Template sentences mentioning one or two concepts each.

    Concepts are drawn from a randomly chosen entry of ``concept_sets`` per
    sentence; nothing in the output links a sentence to an image.
    """
    by_slots = {}
    for t in templates:
        n = t.count("{c}")
        if n == 0:
            raise ConfigError(f"template has no concept slot: {t!r}")
        by_slots.setdefault(n, []).append(t)
    concept_sets = [list(s) for s in concept_sets if len(s)]
    if not concept_sets:
        return []
    if num_sentences is None:
        num_sentences = len(concept_sets)
    out = []
    for _ in range(num_sentences):
        cs = concept_sets[rng.integers(len(concept_sets))]
        options = [n for n in by_slots if n <= len(cs)]
        n = options[rng.integers(len(options))]
        template = by_slots[n][rng.integers(len(by_slots[n]))]
        picked = [cs[i] for i in rng.choice(len(cs), size=n, replace=False)]
        for word in picked:
            template = template.replace("{c}", word, 1)
        out.append(template)
    return out


def reference_captions(images, rng, templates=TEMPLATES, per_image=3):
    """Ground-truth style captions for held-out evaluation images."""
    return {img.id: synth_corpus([img.truth_concepts], rng, templates, per_image) for img in images}


# ---------------------------------------------------------------- file formats

def features_bytes(images):
    if not images:
        raise DatasetError("no images to write")
    dim = len(images[0].vector)
    parts = [FEATURE_MAGIC, struct.pack("<I", dim)]
    for img in images:
        if len(img.vector) != dim:
            raise DatasetError(f"record {img.id!r}: dimension {len(img.vector)} != {dim}")
        raw = img.id.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(np.asarray(img.vector, dtype="<f4").tobytes())
    return b"".join(parts)


def save_features(path, images):
    atomic_write_bytes(path, features_bytes(images))


def load_features(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != FEATURE_MAGIC:
        raise DatasetError(f"{path}: not a UFEA1 feature file")
    (dim,) = struct.unpack_from("<I", blob, 5)
    pos = 9
    images = []
    seen = set()
    while pos < len(blob):
        if pos + 2 > len(blob):
            raise DatasetError(f"{path}: truncated record header at byte {pos}")
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        try:
            rid = blob[pos:pos + nlen].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DatasetError(f"{path}: corrupt record id at byte {pos}") from exc
        pos += nlen
        avail = (len(blob) - pos) // 4
        if avail < dim:
            raise DatasetError(f"record {rid!r}: dimension {avail} != {dim}")
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        pos += 4 * dim
        if rid in seen:
            raise DatasetError(f"duplicate record id {rid!r}")
        seen.add(rid)
        images.append(ImageFeature(rid, vec))
    return images


def save_detections(path, detections):
    lines = []
    for rid, det in detections.items():
        rec = {"id": rid, "concepts": [{"name": w, "score": s} for w, s in det.concepts]}
        lines.append(json.dumps(rec) + "\n")
    atomic_write_bytes(path, "".join(lines).encode("utf-8"))


@dataclass
class LoadReport:
    unknown_concepts: list = field(default_factory=list)
    rejected: list = field(default_factory=list)


def load_detections(path, concepts=None, known_ids=None):
    """Read JSON-lines detections.

    Unknown concept words are skipped and listed in the report; records with
    out-of-range confidences are rejected whole. ``known_ids`` cross-checks
    against a feature file.
    """
    vocab = set(concepts) if concepts is not None else None
    report = LoadReport()
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            rid = rec["id"]
            if known_ids is not None and rid not in known_ids:
                raise DatasetError(f"{path}:{lineno}: detection for unknown image id {rid!r}")
            pairs = []
            for c in rec.get("concepts", []):
                if vocab is not None and c["name"] not in vocab:
                    report.unknown_concepts.append(c["name"])
                    continue
                pairs.append((c["name"], c["score"]))
            try:
                out[rid] = ConceptDetection(pairs)
            except ValueError as exc:
                report.rejected.append(rid)
                log.warning("rejected detection record %r: %s", rid, exc)
    if report.unknown_concepts:
        log.warning("skipped %d unknown concept words", len(report.unknown_concepts))
    return out, report


def save_truth(path, images):
    lines = [json.dumps({"id": im.id, "concepts": list(im.truth_concepts)}) + "\n" for im in images]
    atomic_write_bytes(path, "".join(lines).encode("utf-8"))


def load_truth(path):
    with open(path, encoding="utf-8") as fh:
        return {r["id"]: list(r["concepts"]) for r in map(json.loads, filter(str.strip, fh))}


def save_lines(path, lines):
    atomic_write_bytes(path, "".join(line + "\n" for line in lines).encode("utf-8"))


def load_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]
