"""Run configuration: sectioned ``key = value`` files plus flag overrides."""

import configparser
import io
import os
from dataclasses import dataclass, field, fields

from .objectives import ObjectiveWeights
from .trainer import ABLATIONS, TrainConfig


class ConfigError(ValueError):
    pass


def _f(section, default, help=""):
    return field(default=default, metadata={"section": section, "help": help})


@dataclass
class RunConfig:
    out_dir: str = _f("run", "", "run directory (required)")
    seed: int = _f("run", 0)
    ablation: str = _f("run", "full", "one of adv, adv+con, adv+con+im, full")
    skip_init: bool = _f("run", False, "train from random parameters")

    num_concepts: int = _f("world", 20)
    num_images: int = _f("world", 500)
    num_eval_images: int = _f("world", 100)
    feature_dim: int = _f("world", 64)
    noise_sigma: float = _f("world", 0.05)
    num_sentences: int = _f("world", 2000)
    p_miss: float = _f("world", 0.1)
    p_false: float = _f("world", 0.02)
    refs_per_image: int = _f("world", 3)
    features_path: str = _f("world", "", "external UFEA1 features (replaces the synthetic world)")
    detections_path: str = _f("world", "", "external JSON-lines detections")
    corpus_path: str = _f("world", "", "external corpus, one sentence per line")
    concepts_path: str = _f("world", "", "external concept dictionary, one word per line")
    eval_features_path: str = _f("world", "")
    eval_refs_path: str = _f("world", "", "JSON lines {id, captions: [str]}")

    min_freq: int = _f("text", 40)
    min_len: int = _f("text", 8)
    max_unk_frac: float = _f("text", 0.15)
    p_drop: float = _f("text", 0.1)
    shuffle_k: int = _f("text", 3)

    embed_dim: int = _f("model", 512)
    hidden: int = _f("model", 512)
    share_embedding: bool = _f("model", False)

    lambda_c: float = _f("train", 10.0)
    lambda_im: float = _f("train", 0.2)
    lambda_sen: float = _f("train", 1.0)
    gamma: float = _f("train", 0.9)
    lr_main: float = _f("train", 1e-4)
    lr_init: float = _f("train", 1e-3)
    batch_size: int = _f("train", 32)
    steps: int = _f("train", 1000)
    cap: int = _f("train", 20)
    clip_norm: float = _f("train", 5.0)
    literal_discount: bool = _f("train", False)
    concept_first_only: bool = _f("train", False, "concept reward only at a concept's first mention")
    sen_updates_encoder: bool = _f("train", False)
    init_con2sen_steps: int = _f("train", 400)
    init_feat2sen_steps: int = _f("train", 400)
    init_lm_steps: int = _f("train", 100)
    init_dis_steps: int = _f("train", 100)
    checkpoint_every: int = _f("train", 0, "0 disables periodic checkpoints")

    beam_size: int = _f("eval", 3)
    count_mode: str = _f("eval", "types")

    def validate(self):
        if not self.out_dir:
            raise ConfigError("missing required path: out_dir")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {sorted(ABLATIONS)}, got {self.ablation!r}")
        if self.count_mode not in ("types", "tokens"):
            raise ConfigError("count_mode must be 'types' or 'tokens'")
        for name in ("features_path", "detections_path", "corpus_path", "concepts_path",
                     "eval_features_path", "eval_refs_path"):
            path = getattr(self, name)
            if path and not os.path.exists(path):
                raise ConfigError(f"{name}: no such file {path!r}")
        external = [self.features_path, self.corpus_path, self.concepts_path]
        if any(external) and not all(external):
            raise ConfigError("external data needs features_path, corpus_path and concepts_path")
        return self

    @property
    def synthetic(self):
        return not self.features_path

    def weights(self):
        return ObjectiveWeights(self.lambda_c, self.lambda_im, self.lambda_sen, self.gamma)

    def train_config(self):
        tc = TrainConfig(
            weights=self.weights(), lr_main=self.lr_main, lr_init=self.lr_init,
            batch_size=self.batch_size, steps=self.steps, seed=self.seed, cap=self.cap,
            clip_norm=self.clip_norm, literal_discount=self.literal_discount,
            concept_first_only=self.concept_first_only,
            sen_updates_encoder=self.sen_updates_encoder, p_drop=self.p_drop,
            shuffle_k=self.shuffle_k, init_con2sen_steps=self.init_con2sen_steps,
            init_feat2sen_steps=self.init_feat2sen_steps, init_dis_steps=self.init_dis_steps,
            init_lm_steps=self.init_lm_steps)
        tc.set_ablation(self.ablation)
        return tc

    def to_text(self):
        cp = configparser.ConfigParser()
        for f in fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, f.name, _fmt(getattr(self, f.name)))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


FIELDS = {f.name: f for f in fields(RunConfig)}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def coerce(name, raw):
    """Convert a text value to the declared type of field ``name``."""
    if name not in FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    typ = FIELDS[name].type
    typ = {"int": int, "float": float, "bool": bool, "str": str}.get(typ, typ)
    if isinstance(raw, typ) and not (typ is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{name}: expected {typ.__name__}, got {text!r}") from None


def parse_text(text):
    """Values from config text; sections are cosmetic but must match the key's home."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            if key not in FIELDS:
                raise ConfigError(f"unknown config key {key!r} in section [{sec}]")
            if FIELDS[key].metadata["section"] != sec:
                raise ConfigError(f"key {key!r} belongs in section [{FIELDS[key].metadata['section']}]")
            values[key] = coerce(key, raw)
    return values


def parse_config(path=None, overrides=None, env=None):
    """File values, then flag overrides, then ``UCAP_SEED`` from the environment."""
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_text(fh.read()))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = coerce(k, v)
    env = os.environ if env is None else env
    if env.get("UCAP_SEED"):
        values["seed"] = coerce("seed", env["UCAP_SEED"])
    return RunConfig(**values).validate()
