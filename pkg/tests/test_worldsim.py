import json
import struct

import numpy as np
import pytest

from ucap import textcorpus as tc
from ucap import worldsim as ws


def test_same_seed_same_world():
    a, b = ws.gen_world(3, 10, 40), ws.gen_world(3, 10, 40)
    assert [im.truth_concepts for im in a.images] == [im.truth_concepts for im in b.images]
    assert all(np.array_equal(x.vector, y.vector) for x, y in zip(a.images, b.images))


def test_one_to_four_concepts():
    world = ws.gen_world(0, 20, 300)
    sizes = {len(im.truth_concepts) for im in world.images}
    assert sizes == {1, 2, 3, 4}


def test_noiseless_single_concept_images_coincide():
    world = ws.gen_world(1, 5, 200, sigma=0.0, max_concepts=1)
    by_truth = {}
    for im in world.images:
        by_truth.setdefault(im.truth_concepts, []).append(im.vector)
    for vecs in by_truth.values():
        assert all(np.array_equal(v, vecs[0]) for v in vecs)


def test_more_concepts_than_dims_rejected():
    with pytest.raises(ws.ConfigError):
        ws.gen_world(0, num_concepts=65, dim=64)


def test_same_concept_images_are_more_similar():
    world = ws.gen_world(2, 20, 500)
    vecs = np.stack([im.vector for im in world.images])
    unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    cos = unit @ unit.T
    sets = [set(im.truth_concepts) for im in world.images]
    share, disjoint = [], []
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            (share if sets[i] & sets[j] else disjoint).append(cos[i, j])
    assert np.mean(share) > np.mean(disjoint) + 0.2


def _image(truth):
    return ws.ImageFeature("x", np.zeros(4), tuple(truth))


def test_perfect_detector():
    concepts = ws.concept_dictionary(20)
    det = ws.detect_concepts(_image(["dog", "bus"]), concepts, np.random.default_rng(0), 0.0, 0.0)
    assert sorted(det.words()) == ["bus", "dog"]
    assert all(0.6 <= s <= 1.0 for _, s in det.concepts)


def test_blind_detector():
    concepts = ws.concept_dictionary(20)
    det = ws.detect_concepts(_image(["dog", "bus"]), concepts, np.random.default_rng(0), 1.0, 0.0)
    assert len(det) == 0


def test_miss_rate_monte_carlo():
    concepts = ws.concept_dictionary(20)
    rng = np.random.default_rng(9)
    world = ws.gen_world(9, 20, 10_000)
    found = total = false = 0
    for im in world.images:
        det = ws.detect_concepts(im, concepts, rng)
        truth = set(im.truth_concepts)
        hits = set(det.words()) & truth
        found += len(hits)
        total += len(truth)
        false += len(set(det.words()) - truth)
        for w, s in det.concepts:
            assert (0.6 <= s <= 1.0) if w in truth else (0.1 <= s <= 0.5)
    assert abs(1 - found / total - 0.1) <= 0.01
    negatives = 20 * len(world.images) - total
    assert abs(false / negatives - 0.02) <= 0.005


def test_detection_merges_duplicates():
    det = ws.ConceptDetection([("dog", 0.3), ("dog", 0.8), ("cat", 0.4)])
    assert det.as_dict() == {"dog": 0.8, "cat": 0.4}


def test_detection_range_checked():
    with pytest.raises(ValueError):
        ws.ConceptDetection([("dog", 1.2)])


def test_template_sentence():
    out = ws.synth_corpus([["dog"]], np.random.default_rng(0),
                          templates=("a photo of a {c} in the room with light",))
    assert out == ["a photo of a dog in the room with light"]
    assert len(tc.tokenize(out[0])) == 10


def test_empty_concept_sets_give_empty_corpus():
    assert ws.synth_corpus([], np.random.default_rng(0)) == []


def test_template_without_slot():
    with pytest.raises(ws.ConfigError, match="slot"):
        ws.synth_corpus([["dog"]], np.random.default_rng(0), templates=("no slot here",))


def test_corpus_survives_filter():
    world = ws.gen_world(4, 20, 100)
    corpus = [tc.tokenize(s) for s in ws.synth_corpus(
        [im.truth_concepts for im in world.images], np.random.default_rng(1), num_sentences=2000)]
    vocab = tc.build_vocab(corpus, 40, world.concepts)
    assert len(tc.filter_corpus(corpus, vocab)) == len(corpus)
    concepts = set(world.concepts)
    assert all(1 <= len(concepts & set(s)) <= 2 for s in corpus)


def test_feature_round_trip(tmp_path):
    world = ws.gen_world(5, 8, 30)
    path = tmp_path / "f.ufea"
    ws.save_features(path, world.images)
    back = ws.load_features(path)
    assert [im.id for im in back] == [im.id for im in world.images]
    assert all(np.array_equal(a.vector, b.vector) for a, b in zip(back, world.images))


def test_feature_file_layout(tmp_path):
    path = tmp_path / "f.ufea"
    ws.save_features(path, [ws.ImageFeature("ab", np.array([1.0, -2.0]))])
    blob = path.read_bytes()
    assert blob == b"UFEA1" + struct.pack("<IH", 2, 2) + b"ab" + struct.pack("<2f", 1.0, -2.0)


def test_short_record_names_id(tmp_path):
    path = tmp_path / "f.ufea"
    good = ws.ImageFeature("img0", np.ones(64))
    blob = ws.features_bytes([good])
    blob += struct.pack("<H", 4) + b"bad7" + np.ones(63, dtype="<f4").tobytes()
    path.write_bytes(blob)
    with pytest.raises(ws.DatasetError, match="bad7"):
        ws.load_features(path)


def test_detection_round_trip(tmp_path):
    dets = {"a": ws.ConceptDetection([("dog", 0.9)]), "b": ws.ConceptDetection()}
    ws.save_detections(tmp_path / "d.jsonl", dets)
    back, report = ws.load_detections(tmp_path / "d.jsonl", ["dog", "cat"], {"a", "b"})
    assert {k: v.concepts for k, v in back.items()} == {"a": [("dog", 0.9)], "b": []}
    assert report.rejected == [] and report.unknown_concepts == []


def test_detection_loader_rejects_and_skips(tmp_path):
    recs = [{"id": "a", "concepts": [{"name": "dog", "score": 1.2}]},
            {"id": "b", "concepts": [{"name": "ufo", "score": 0.5}, {"name": "cat", "score": 0.5}]}]
    path = tmp_path / "d.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    back, report = ws.load_detections(path, ["dog", "cat"])
    assert report.rejected == ["a"] and "a" not in back
    assert report.unknown_concepts == ["ufo"]
    assert back["b"].concepts == [("cat", 0.5)]


def test_detection_for_unknown_image(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps({"id": "zz", "concepts": []}) + "\n")
    with pytest.raises(ws.DatasetError, match="zz"):
        ws.load_detections(path, known_ids={"a"})
