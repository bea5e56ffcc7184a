import json
import os

import pytest

from ucap import cli
from ucap.config import ConfigError, RunConfig, parse_config, parse_text

TINY = """
[run]
seed = 3
[world]
num_concepts = 6
num_images = 24
num_eval_images = 6
feature_dim = 8
num_sentences = 300
[text]
min_freq = 2
[model]
embed_dim = 8
hidden = 8
[train]
steps = 3
batch_size = 4
init_con2sen_steps = 3
init_feat2sen_steps = 3
init_lm_steps = 2
init_dis_steps = 2
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return str(path), str(tmp_path / "run")


def test_defaults():
    cfg = parse_config(overrides={"out_dir": "x"}, env={})
    assert (cfg.lambda_c, cfg.lambda_im, cfg.lambda_sen, cfg.gamma) == (10.0, 0.2, 1.0, 0.9)
    assert (cfg.lr_main, cfg.beam_size, cfg.ablation, cfg.count_mode) == (1e-4, 3, "full", "types")
    assert cfg.train_config().weights == cfg.weights()


def test_flag_overrides_file(tiny):
    path, out = tiny
    args = cli.build_parser().parse_args(["train", "--config", path, "--gamma", "0.5",
                                          "--out", out, "--skip-init"])
    cfg = parse_config(args.config, {k: getattr(args, k) for k in RunConfig.__dataclass_fields__},
                       env={})
    assert cfg.gamma == 0.5 and cfg.skip_init and cfg.hidden == 8 and cfg.out_dir == out


def test_ablation_switches_terms():
    cfg = parse_config(overrides={"out_dir": "x", "ablation": "adv"}, env={})
    w = cfg.train_config().effective_weights()
    assert (w.lambda_c, w.lambda_im, w.lambda_sen) == (0.0, 0.0, 0.0)
    with pytest.raises(ConfigError, match="ablation"):
        parse_config(overrides={"out_dir": "x", "ablation": "nope"}, env={})


def test_unknown_key_and_bad_type():
    with pytest.raises(ConfigError, match="unknown config key 'gama'"):
        parse_text("[train]\ngama = 0.5\n")
    with pytest.raises(ConfigError, match="steps: expected int"):
        parse_text("[train]\nsteps = many\n")
    with pytest.raises(ConfigError, match="belongs in section"):
        parse_text("[model]\ngamma = 0.5\n")


def test_out_dir_required():
    with pytest.raises(ConfigError, match="out_dir"):
        parse_config(env={})


def test_seed_from_environment():
    assert parse_config(overrides={"out_dir": "x", "seed": 1}, env={"UCAP_SEED": "9"}).seed == 9


def test_train_refused_without_init(tiny, capsys):
    path, out = tiny
    assert cli.main(["gen-world", "--config", path, "--out", out]) == 0
    assert cli.main(["train", "--config", path, "--out", out]) == 2
    assert "init-pipeline" in capsys.readouterr().err
    assert cli.main(["train", "--config", path, "--out", out, "--skip-init"]) == 0
    assert os.path.exists(os.path.join(out, "model.ckpt"))


def test_stage_order_errors(tiny, capsys):
    path, out = tiny
    assert cli.main(["init-pipeline", "--config", path, "--out", out]) == 2
    assert "gen-world" in capsys.readouterr().err


def test_all_runs_end_to_end(tiny, capsys):
    path, out = tiny
    assert cli.main(["all", "--config", path, "--out", out]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["num_images"] == 6
    for name in ("config.resolved.ini", "init.ckpt", "pseudo_captions.jsonl", "model.ckpt",
                 "trainlog.csv", "captions.jsonl", "report.json"):
        assert os.path.exists(os.path.join(out, name)), name
    resolved = parse_text(open(os.path.join(out, "config.resolved.ini")).read())
    assert resolved["hidden"] == 8 and resolved["out_dir"] == out
    lines = open(os.path.join(out, "trainlog.csv")).read().strip().splitlines()
    assert len(lines) == 1 + 3
