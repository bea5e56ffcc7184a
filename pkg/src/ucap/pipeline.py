"""Pipeline stages behind the command line: each reads and writes a run directory."""

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import evalkit
from . import textcorpus as tc
from . import worldsim as ws
from .autodiff import checkpoint
from .models import ModelConfig
from .objectives import detection_by_id
from .trainer import Captioner, TrainData, Trainer, init_pipeline

log = logging.getLogger(__name__)

# independent RNG streams per stage, all derived from the run seed
STREAM_WORLD, STREAM_DETECT, STREAM_CORPUS, STREAM_MODEL, STREAM_INIT, STREAM_TRAIN, STREAM_EVAL = range(7)


class StageError(RuntimeError):
    pass


def stream(seed, k):
    return np.random.default_rng([seed, k])


def paths(out_dir):
    j = lambda *p: os.path.join(out_dir, *p)  # noqa: E731
    return {
        "config": j("config.resolved.ini"),
        "features": j("world", "features.ufea"),
        "detections": j("world", "detections.jsonl"),
        "truth": j("world", "truth.jsonl"),
        "corpus": j("world", "corpus.txt"),
        "concepts": j("world", "concepts.txt"),
        "eval_features": j("world", "eval_features.ufea"),
        "eval_truth": j("world", "eval_truth.jsonl"),
        "eval_refs": j("world", "eval_refs.jsonl"),
        "vocab": j("vocab.txt"),
        "init": j("init.ckpt"),
        "pseudo": j("pseudo_captions.jsonl"),
        "model": j("model.ckpt"),
        "trainlog_csv": j("trainlog.csv"),
        "trainlog_jsonl": j("trainlog.jsonl"),
        "captions": j("captions.jsonl"),
        "report": j("report.json"),
    }


def write_text(path, text):
    checkpoint.atomic_write_bytes(path, text.encode("utf-8"))


def echo_config(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_text(paths(cfg.out_dir)["config"], cfg.to_text())


# ---------------------------------------------------------------- gen-world

def gen_world(cfg):
    """Write the synthetic images, detections, corpus and held-out evaluation set."""
    if not cfg.synthetic:
        raise StageError("gen-world is for synthetic runs; external data is read in place")
    p = paths(cfg.out_dir)
    world = ws.gen_world(cfg.seed, cfg.num_concepts, cfg.num_images, cfg.feature_dim,
                         cfg.noise_sigma)
    rng = stream(cfg.seed, STREAM_DETECT)
    dets = {im.id: ws.detect_concepts(im, world.concepts, rng, cfg.p_miss, cfg.p_false)
            for im in world.images}
    rng = stream(cfg.seed, STREAM_CORPUS)
    # corpus concepts are drawn from independently sampled concept sets, not the training images
    pool = ws.sample_images(world, cfg.seed + 1, cfg.num_sentences, cfg.noise_sigma, id_prefix="c")
    corpus = ws.synth_corpus([im.truth_concepts for im in pool], rng, num_sentences=cfg.num_sentences)
    eval_images = ws.sample_images(world, cfg.seed + 2, cfg.num_eval_images, cfg.noise_sigma)
    refs = ws.reference_captions(eval_images, stream(cfg.seed, STREAM_EVAL),
                                 per_image=cfg.refs_per_image)
    ws.save_features(p["features"], world.images)
    ws.save_detections(p["detections"], dets)
    ws.save_truth(p["truth"], world.images)
    ws.save_lines(p["corpus"], corpus)
    ws.save_lines(p["concepts"], world.concepts)
    ws.save_features(p["eval_features"], eval_images)
    ws.save_truth(p["eval_truth"], eval_images)
    write_text(p["eval_refs"], "".join(json.dumps({"id": k, "captions": v}) + "\n"
                                       for k, v in refs.items()))
    return world


# ---------------------------------------------------------------- shared loading

@dataclass
class Inputs:
    images: list
    detections: dict
    corpus_tokens: list
    concepts: list
    truth: dict = None
    eval_images: list = None
    eval_refs: dict = None
    eval_truth: dict = None


def _require(path, what, hint):
    if not os.path.exists(path):
        raise StageError(f"missing {what} ({path}); {hint}")


def load_inputs(cfg):
    p = paths(cfg.out_dir)
    if cfg.synthetic:
        _require(p["features"], "synthetic world", "run `ucap gen-world` first")
        feat, det, corpus, conc = p["features"], p["detections"], p["corpus"], p["concepts"]
        truth = ws.load_truth(p["truth"])
        eval_feat, eval_refs = p["eval_features"], p["eval_refs"]
        eval_truth = ws.load_truth(p["eval_truth"])
    else:
        feat, det, corpus, conc = (cfg.features_path, cfg.detections_path, cfg.corpus_path,
                                   cfg.concepts_path)
        truth = eval_truth = None
        eval_feat, eval_refs = cfg.eval_features_path, cfg.eval_refs_path
    images = ws.load_features(feat)
    concepts = ws.load_lines(conc)
    if det and os.path.exists(det):
        dets, report = ws.load_detections(det, concepts, {im.id for im in images})
        if report.rejected:
            log.warning("%d detection records rejected", len(report.rejected))
    else:
        dets = {}
    inputs = Inputs(images, dets, tc.read_corpus(corpus), concepts, truth)
    if eval_feat and os.path.exists(eval_feat):
        inputs.eval_images = ws.load_features(eval_feat)
        inputs.eval_truth = eval_truth
    if eval_refs and os.path.exists(eval_refs):
        with open(eval_refs, encoding="utf-8") as fh:
            inputs.eval_refs = {r["id"]: [tc.tokenize(c) for c in r["captions"]]
                                for r in map(json.loads, filter(str.strip, fh))}
    return inputs


def vocab_for(cfg, inputs):
    """Build (and persist) the vocabulary, or reuse the run's saved one."""
    p = paths(cfg.out_dir)["vocab"]
    if os.path.exists(p):
        return tc.Vocabulary.load(p)
    vocab = tc.build_vocab(inputs.corpus_tokens, cfg.min_freq, inputs.concepts)
    vocab.save(p + ".tmp")
    os.replace(p + ".tmp", p)
    return vocab


def train_data(cfg, inputs, vocab):
    kept = tc.filter_corpus(inputs.corpus_tokens, vocab, cfg.min_len, cfg.max_unk_frac)
    corpus = [tc.encode(t, vocab).ids for t in kept]
    feats = np.stack([im.vector for im in inputs.images])
    dets = [detection_by_id(inputs.detections.get(im.id, ws.ConceptDetection()), vocab)
            for im in inputs.images]
    truth = None
    if inputs.truth is not None:
        truth = [{vocab.id(w) for w in inputs.truth[im.id]} for im in inputs.images]
    return TrainData(feats, dets, corpus, truth, [im.id for im in inputs.images])


def new_captioner(cfg, vocab, concepts):
    mcfg = ModelConfig(len(vocab), cfg.feature_dim, cfg.embed_dim, cfg.hidden, cfg.share_embedding)
    return Captioner.create(vocab, mcfg, [vocab.id(c) for c in concepts],
                            stream(cfg.seed, STREAM_MODEL))


def _feature_dim(cfg, inputs):
    dim = len(inputs.images[0].vector)
    if dim != cfg.feature_dim:
        log.info("feature_dim %d taken from data (config said %d)", dim, cfg.feature_dim)
        cfg.feature_dim = dim


# ---------------------------------------------------------------- init / train

def run_init(cfg):
    inputs = load_inputs(cfg)
    _feature_dim(cfg, inputs)
    vocab = vocab_for(cfg, inputs)
    data = train_data(cfg, inputs, vocab)
    cap = new_captioner(cfg, vocab, inputs.concepts)
    res = init_pipeline(cap, data, [vocab.id(c) for c in inputs.concepts], cfg.train_config(),
                        stream(cfg.seed, STREAM_INIT))
    p = paths(cfg.out_dir)
    checkpoint.save(p["init"], cap.state_dict())
    lines = []
    for rid, cap_ids in zip(data.ids, res.pseudo):
        text = " ".join(vocab.word(i) for i in cap_ids) if cap_ids else None
        lines.append(json.dumps({"id": rid, "caption": text}) + "\n")
    write_text(p["pseudo"], "".join(lines))
    return cap, res


def load_captioner(cfg, which="model"):
    inputs = load_inputs(cfg)
    _feature_dim(cfg, inputs)
    p = paths(cfg.out_dir)
    _require(p["vocab"], "vocabulary", "run `ucap init-pipeline` or `ucap train` first")
    vocab = tc.Vocabulary.load(p["vocab"])
    cap = new_captioner(cfg, vocab, inputs.concepts)
    _require(p[which], f"{which} checkpoint", f"run the stage that writes {p[which]}")
    cap.load_state_dict(checkpoint.load(p[which]))
    return cap, inputs


def run_train(cfg, callback=None):
    p = paths(cfg.out_dir)
    if not cfg.skip_init and not os.path.exists(p["init"]):
        raise StageError(f"no initialization checkpoint at {p['init']}; run `ucap init-pipeline` "
                         "first or pass --skip-init to train from scratch")
    inputs = load_inputs(cfg)
    _feature_dim(cfg, inputs)
    vocab = vocab_for(cfg, inputs)
    cap = new_captioner(cfg, vocab, inputs.concepts)
    if not cfg.skip_init:
        cap.load_state_dict(checkpoint.load(p["init"]))
    data = train_data(cfg, inputs, vocab)
    trainer = Trainer(cap, data, cfg.train_config(), stream(cfg.seed, STREAM_TRAIN))

    def hook(tr, rec):
        if cfg.checkpoint_every and rec["step"] % cfg.checkpoint_every == 0:
            checkpoint.save(p["model"], cap.state_dict())
            write_text(p["trainlog_csv"], tr.log.to_csv())
        if callback is not None:
            callback(tr, rec)

    trainer.train(callback=hook)
    checkpoint.save(p["model"], cap.state_dict())
    write_text(p["trainlog_csv"], trainer.log.to_csv())
    write_text(p["trainlog_jsonl"], trainer.log.to_jsonl())
    return cap, trainer.log


# ---------------------------------------------------------------- generate / evaluate

def run_generate(cfg, which="model", out_path=None):
    cap, inputs = load_captioner(cfg, which)
    if inputs.eval_images is None:
        raise StageError("no evaluation features available")
    caps = evalkit.generate_captions(cap.generator, [(im.id, im.vector) for im in inputs.eval_images],
                                     cap.vocab, cfg.beam_size, cfg.cap)
    evalkit.save_captions(out_path or paths(cfg.out_dir)["captions"], caps)
    return caps


def run_evaluate(cfg, captions_path=None, out_path=None):
    p = paths(cfg.out_dir)
    captions_path = captions_path or p["captions"]
    _require(captions_path, "captions", "run `ucap generate` first")
    inputs = load_inputs(cfg)
    if inputs.eval_refs is None:
        raise StageError("no evaluation references available")
    caps = evalkit.load_captions(captions_path)
    if inputs.eval_truth is not None:
        concepts = inputs.eval_truth
    else:
        concepts = {k: [] for k in caps}
    report = evalkit.evaluate(caps, inputs.eval_refs, concepts, cfg.count_mode)
    write_text(out_path or p["report"], report.to_json() + "\n")
    return report
