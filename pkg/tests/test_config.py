import os

import pytest

from arnet.config import KEYS, ConfigError, build, data_root, load, parse_text, render_defaults
from arnet.pmnist import PmnistConfig
from arnet.seq2seq.training import TrainingConfig


def test_defaults_build_and_render_round_trip(tmp_path):
    cfg = load()
    assert cfg.task and cfg.lam == 0.01
    path = tmp_path / "defaults.cfg"
    path.write_text(render_defaults())
    assert load(str(path)).to_dict() == cfg.to_dict()
    text = render_defaults()
    for k in KEYS:
        assert f"\n{k.name} = " in "\n" + text


def test_comments_blank_lines_and_overrides(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("# comment\n\ntask = pmnist   # trailing\nlam = 0.05\nseeds = 1, 2, 3\n")
    cfg = load(str(path), ["lam = 0.1"])
    assert cfg.task == "pmnist"
    assert cfg.lam == 0.1
    assert cfg.seeds == [1, 2, 3]


def test_every_problem_is_reported_at_once(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("lam = -1\nbeam_size = 0\nnot_a_key = 3\nthis line has no equals\nemb_dim = many\n")
    with pytest.raises(ConfigError) as err:
        load(str(path))
    text = "\n".join(err.value.problems)
    assert len(err.value.problems) >= 5
    for needle in ("lam", "beam_size", "not_a_key", "bad.cfg:4", "emb_dim"):
        assert needle in text


def test_choices_and_cross_key_checks():
    with pytest.raises(ConfigError, match="regularizer"):
        build({"regularizer": "dropconnect"})
    with pytest.raises(ConfigError, match="attention"):
        build({"task": "pmnist", "attention": "true"})
    with pytest.raises(ConfigError, match="distinct"):
        build({"seeds": "1, 1"})


def test_task_defaults_fill_zero_values():
    pm = build({"task": "pmnist"})
    cap = build({"task": "caption-seq"})
    assert pm.resolved("hidden_dim") != cap.resolved("hidden_dim")
    assert build({"task": "pmnist", "hidden_dim": "7"}).resolved("hidden_dim") == 7
    assert isinstance(pm.training_config(3), PmnistConfig)
    tc = cap.training_config(4)
    assert isinstance(tc, TrainingConfig)
    assert tc.seed == 4 and tc.batch_size == cap.resolved("batch_size")


def test_parse_text_reports_line_numbers():
    raw, problems = parse_text("a = 1\n= 2\nnonsense\n", "x.cfg")
    assert raw == {"a": "1"}
    assert problems == ["x.cfg:2: missing key", "x.cfg:3: expected 'key = value', got 'nonsense'"]


def test_data_root_resolution(monkeypatch, tmp_path):
    monkeypatch.delenv("ARNET_DATA_ROOT", raising=False)
    assert data_root("") == "."
    assert data_root("corpus") == "corpus"
    monkeypatch.setenv("ARNET_DATA_ROOT", str(tmp_path))
    assert data_root("corpus") == os.path.join(str(tmp_path), "corpus")
    assert data_root("/abs/dir") == "/abs/dir"
    cfg = build({"data_dir": "c", "train_src": "train.src"})
    assert cfg.data_path("train_src") == os.path.join(str(tmp_path), "c", "train.src")
