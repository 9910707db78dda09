import json
import os

import numpy as np
import pytest
import yaml
from scipy.io import wavfile

from conductor_motion import cli
from conductor_motion.config import RunConfig, dump_config, load_config, parse_config
from conductor_motion.exceptions import ConfigError
from conductor_motion.motion_data import load_motion


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("ds")
    assert cli.main(["synth", "--clips", "4", "--seconds", "12", "--seed", "2", "-o", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    m = str(dataset / "manifest.json")
    assert cli.main(["train-amc", "--manifest", m, "-o", str(root / "amc"), "--iterations", "30", "--checkpoint-every", "10"]) == 0
    assert cli.main(["train-gen", "--manifest", m, "--amc-ckpt", str(root / "amc" / "ckpt_best"),
                     "-o", str(root / "gen"), "--iterations", "6", "--checkpoint-every", "3"]) == 0  # fmt: skip
    return root


def test_features_batch(tmp_path, dataset, capsys):
    src = tmp_path / "in"
    src.mkdir()
    for i in range(3):
        (src / f"c{i}.wav").write_bytes((dataset / f"clip_00{i}.wav").read_bytes())
    code, out, _ = run(["features", src, "-o", tmp_path / "out"], capsys)
    assert code == 0 and json.loads(out) == {"written": 3, "warnings": 0}
    assert sorted(os.listdir(tmp_path / "out")) == ["c0.vcf", "c1.vcf", "c2.vcf"]


def test_features_empty_dir_and_corrupt_file(tmp_path, dataset, capsys):
    (tmp_path / "empty").mkdir()
    code, out, err = run(["features", tmp_path / "empty", "-o", tmp_path / "o1"], capsys)
    assert code == 0 and json.loads(out)["written"] == 0 and err.startswith("warning: ")
    assert os.listdir(tmp_path / "o1") == []
    (tmp_path / "bad.wav").write_bytes(b"not audio")
    code, out, _ = run(["features", tmp_path / "bad.wav", dataset / "clip_000.wav", "-o", tmp_path / "o2"], capsys)
    assert code == 0 and json.loads(out) == {"written": 1, "warnings": 1}


def test_synth_determinism_and_manifest(tmp_path, capsys):
    for name in ("a", "b"):
        code, out, _ = run(["synth", "--clips", "3", "--seconds", "10", "--seed", "9", "-o", tmp_path / name], capsys)
        assert code == 0 and json.loads(out)["clips"] == 3
    for f in os.listdir(tmp_path / "a"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_rundir_layout(trained):
    for stage in ("amc", "gen"):
        names = set(os.listdir(trained / stage))
        assert {"config.echo", "metrics.jsonl", "ckpt_latest", "ckpt_best"} <= names
    lines = (trained / "gen" / "metrics.jsonl").read_text().splitlines()
    recs = [json.loads(x) for x in lines]
    assert [r["iter"] for r in recs] == list(range(6))
    assert {"loss_mse", "loss_per", "loss_adv", "w_estimate", "gp", "loss_d"} <= set(recs[0])
    echo = load_config(trained / "amc" / "config.echo")
    assert echo.amc.iterations == 30 and echo.run.checkpoint_every == 10


def test_resume_after_interrupt_matches_uninterrupted_run(tmp_path, dataset, monkeypatch, capsys):
    m = dataset / "manifest.json"
    args = ["train-amc", "--manifest", m, "--iterations", "25", "--checkpoint-every", "10"]
    assert run(args + ["-o", tmp_path / "straight"], capsys)[0] == 0

    real_logger = cli.RunDir.logger

    def interrupting_logger(self):
        write, fh = real_logger(self)
        count = [0]

        def w(rec):
            write(rec)
            count[0] += 1
            if count[0] == 16:
                raise KeyboardInterrupt

        return w, fh

    monkeypatch.setattr(cli.RunDir, "logger", interrupting_logger)
    with pytest.raises(KeyboardInterrupt):
        cli.main([str(a) for a in args + ["-o", tmp_path / "cut"]])
    assert len((tmp_path / "cut" / "metrics.jsonl").read_text().splitlines()) == 16
    monkeypatch.setattr(cli.RunDir, "logger", real_logger)
    assert run(args + ["-o", tmp_path / "cut"], capsys)[0] == 0
    resumed = (tmp_path / "cut" / "metrics.jsonl").read_text()
    assert [json.loads(x)["iter"] for x in resumed.splitlines()] == list(range(25))
    assert resumed == (tmp_path / "straight" / "metrics.jsonl").read_text()


def test_missing_amc_checkpoint(tmp_path, dataset, capsys):
    code, _, err = run(["train-gen", "--manifest", dataset / "manifest.json", "--amc-ckpt", tmp_path / "nope",
                        "-o", tmp_path / "g"], capsys)  # fmt: skip
    assert code != 0
    assert err.count("\n") == 1 and err.startswith("error: not-found:")


def test_generate_outputs(tmp_path, dataset, trained, capsys):
    code, out, _ = run(["generate", dataset / "clip_001.wav", "--gen-ckpt", trained / "gen" / "ckpt_latest",
                        "-o", tmp_path, "--frames", "--export-pose"], capsys)  # fmt: skip
    assert code == 0
    motion = load_motion(tmp_path / "motion.json")
    assert len(motion) == 360 and json.loads(out)["frames"] == 360
    assert len(os.listdir(tmp_path / "frames")) == len(motion)
    assert len(json.loads((tmp_path / "pose_coco17.json").read_text())["frames"][0]) == 17


def test_generate_only_motion_by_default(tmp_path, dataset, trained, capsys):
    code, _, _ = run(["generate", dataset / "clip_001.wav", "--gen-ckpt", trained / "gen" / "ckpt_latest", "-o", tmp_path], capsys)
    assert code == 0 and os.listdir(tmp_path) == ["motion.json"]


def test_generate_too_short_audio(tmp_path, trained, capsys):
    wavfile.write(tmp_path / "short.wav", 22050, np.zeros(22050, dtype=np.float32))
    code, _, err = run(["generate", tmp_path / "short.wav", "--gen-ckpt", trained / "gen" / "ckpt_latest", "-o", tmp_path / "o"], capsys)
    assert code != 0 and err.startswith("error: input-too-short:")


def test_generate_rejects_amc_checkpoint(tmp_path, dataset, trained, capsys):
    code, _, err = run(["generate", dataset / "clip_001.wav", "--gen-ckpt", trained / "amc" / "ckpt_best", "-o", tmp_path], capsys)
    assert code != 0 and err.startswith("error: bad-checkpoint:")


def test_eval_sync_schema(tmp_path, dataset, trained, capsys):
    args = ["eval-sync", "--amc-ckpt", trained / "amc" / "ckpt_best", "--features", dataset / "clip_000.vcf",
            "--motion", dataset / "clip_000.motion.json"]  # fmt: skip
    code, out, _ = run(args, capsys)
    first, doc = out.splitlines()
    doc = json.loads(doc)
    assert code == 0 and set(doc) == {"mean_score", "window", "stride", "starts", "scores"}
    assert 0 < float(first) < 1 and len(doc["scores"]) == (360 - 60) // 30 + 1
    code, out, _ = run(args + ["--json-out", tmp_path / "s.json"], capsys)
    assert json.loads((tmp_path / "s.json").read_text())["scores"] == doc["scores"]


def test_plot_metrics(tmp_path, trained, capsys):
    code, out, _ = run(["plot-metrics", trained / "gen" / "metrics.jsonl", "-o", tmp_path / "c.png"], capsys)
    assert code == 0 and (tmp_path / "c.png").stat().st_size > 0


def test_argument_errors_are_one_line(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train-gen", "--manifest", "x", "-o", "y"])
    err = capsys.readouterr().err
    assert exc.value.code != 0 and err.count("\n") == 1 and err.startswith("error: usage:")


def test_help_documents_every_flag(capsys):
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        for action in p._actions:
            assert action.help, f"{name}: {action.dest} lacks help text"


# --- config --------------------------------------------------------------------


def test_config_defaults_and_round_trip(tmp_path):
    cfg = load_config(env={})
    assert cfg == RunConfig()
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml", env={}) == cfg


def test_config_rejects_unknown_keys(tmp_path, capsys):
    with pytest.raises(ConfigError):
        parse_config({"amc": {"learning_rate": 1}}, env={})
    with pytest.raises(ConfigError):
        parse_config({"optimizer": {}}, env={})
    with pytest.raises(ConfigError):
        parse_config({"amc": {"batch": 1}}, env={})
    (tmp_path / "bad.yaml").write_text(yaml.safe_dump({"gen": {"lambda": 1}}))
    code, _, err = run(["synth", "--config", tmp_path / "bad.yaml", "-o", tmp_path / "d"], capsys)
    assert code != 0 and err.startswith("error: bad-config:")


def test_vc_seed_override():
    cfg = parse_config({"amc": {"seed": 3}, "gen": {"seed": 4}}, env={"VC_SEED": "11"})
    assert cfg.amc.seed == 11 and cfg.gen.seed == 11
    assert parse_config({"amc": {"seed": 3}}, env={}).amc.seed == 3
    with pytest.raises(ConfigError):
        parse_config({}, env={"VC_SEED": "abc"})


def test_vc_seed_reaches_training_run(tmp_path, dataset, monkeypatch, capsys):
    monkeypatch.setenv("VC_SEED", "42")
    code, _, _ = run(["train-amc", "--manifest", dataset / "manifest.json", "-o", tmp_path, "--iterations", "2", "--seed", "1"], capsys)
    assert code == 0 and load_config(tmp_path / "config.echo", env={}).amc.seed == 42
