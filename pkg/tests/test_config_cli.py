import csv
import json
import os
import shutil
import subprocess
import sys

import pytest

from clipcurate.cli import EXIT_CONFIG, EXIT_ERROR, EXIT_OK, EXIT_SINK, main
from clipcurate.config import ConfigError, PipelineConfig, config_from_dict, dump_config, load_config
from clipcurate.manifest import read_records
from oracles import reference_samples


def write(path, text):
    path.write_text(text)
    return str(path)


# --------------------------------------------------------------------------
# config


def test_defaults_without_file():
    assert load_config(None) == PipelineConfig()
    cfg = PipelineConfig()
    assert (cfg.segmenter.min_len_s, cfg.segmenter.max_len_s, cfg.sampler.N) == (3.0, 16.0, 85)
    assert (cfg.filter.theta_aes, cfg.filter.theta_qual, cfg.filter.c5_quota) == (3.5, 4.0, 0.05)


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"segmenter": {"theta_moton": 1.0}},
    {"sampler": {"N": "85"}},
    {"workers": 1.5},
    {"media": 3},
])
def test_bad_config_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_relative_paths_follow_config_file(tmp_path):
    cfg = load_config(write(tmp_path / "c.toml", '[paths]\nsources = "s.txt"\nmanifest = "out/m.jsonl"\n'))
    assert cfg.paths.sources == str(tmp_path / "s.txt")
    assert cfg.paths.manifest == str(tmp_path / "out" / "m.jsonl")


def test_seed_drives_quota_seed():
    assert config_from_dict({"seed": "abc"}).filter.quota_seed == "abc"
    cfg = config_from_dict({"seed": "abc", "filter": {"quota_seed": "x"}})
    assert cfg.filter.quota_seed == "x"


def test_dump_round_trip(tmp_path):
    cfg = config_from_dict({"workers": 3, "seed": "s1", "segmenter": {"theta_motion": 1.25},
                            "sampler": {"N": 49}}, base_dir=str(tmp_path))
    text = dump_config(cfg)
    assert load_config(write(tmp_path / "d.toml", text)) == cfg


@pytest.mark.parametrize("data", [
    {"stages": ["segment", "filter"]},
    {"stages": ["segment", "caption"]},
    {"workers": 0},
    {"segmenter": {"theta_motion": 30.0}},
])
def test_validate_rejects(data):
    with pytest.raises(ConfigError):
        config_from_dict(data).validate()


# --------------------------------------------------------------------------
# cli


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_print_config(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "run", "--print-config", "--workers", "2", "--stages", "segment,classify")
    assert code == EXIT_OK
    cfg = load_config(write(tmp_path / "p.toml", out))
    assert cfg.workers == 2 and cfg.stages == ("segment", "classify")


def test_unknown_stage_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["run", "--stages", "segment,nope"])
    assert e.value.code == 2


def test_config_error_exit_code(capsys, tmp_path):
    cfg = write(tmp_path / "c.toml", "[segmenter]\nunknown = 1\n")
    assert run_cli(capsys, "run", "--config", cfg)[0] == EXIT_CONFIG
    assert run_cli(capsys, "run", "--config", str(tmp_path / "absent.toml"))[0] == EXIT_CONFIG
    bad_toml = write(tmp_path / "b.toml", "workers = = 2\n")
    assert run_cli(capsys, "run", "--config", bad_toml)[0] == EXIT_CONFIG


def test_missing_source_list_exit_code(capsys, tmp_path):
    code, _, err = run_cli(capsys, "run", "--sources", str(tmp_path / "none.txt"),
                           "--manifest", str(tmp_path / "m.jsonl"))
    assert code == EXIT_CONFIG and "none.txt" in err


def test_sink_failure_exit_code(capsys, tmp_path):
    (tmp_path / "m.jsonl").mkdir()
    src = write(tmp_path / "s.txt", "")
    code, _, err = run_cli(capsys, "run", "--sources", src, "--manifest", str(tmp_path / "m.jsonl"))
    assert code == EXIT_SINK and "sink failure" in err


def test_run_and_report(capsys, pipeline_runs, tmp_path):
    manifest = tmp_path / "m.jsonl"
    shutil.copy(pipeline_runs.single, manifest)
    src = os.path.join(pipeline_runs.directory, "sources.txt")
    cfg = write(tmp_path / "c.toml", "[media]\ntarget_height = 180\n")
    code, out, _ = run_cli(capsys, "run", "--config", cfg, "--sources", src, "--manifest", str(manifest))
    assert code == EXIT_OK and json.loads(out)["written"] == 0

    code, out, _ = run_cli(capsys, "report", "--manifest", str(manifest), "--out", str(tmp_path / "rep"))
    assert code == EXIT_OK
    stats = json.loads(out)
    recs = read_records(manifest)
    kept = [r for r in recs if r.kept]
    assert stats == json.loads((tmp_path / "rep" / "stats.json").read_text())
    assert stats["kept_clips"] == len(kept) and stats["total_records"] == len(recs)
    assert stats["avg_duration_s"] == pytest.approx(sum(r.duration_s for r in kept) / len(kept), abs=1e-6)
    # kept clips passed the 3.5 / 4.0 gates, so every one is above them
    assert stats["aesthetic_frac_at_least"]["3.5"] == 1.0
    assert stats["quality_frac_at_least"]["4.0"] == 1.0
    for name, n in (("aesthetic_hist.csv", len(kept)), ("quality_hist.csv", len(kept)),
                    ("aesthetic_hist_all.csv", len(recs))):
        with open(tmp_path / "rep" / name) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 20 and sum(int(r["count"]) for r in rows) == n
    with open(tmp_path / "rep" / "labels.csv") as f:
        labels = {r["label"]: int(r["count"]) for r in csv.DictReader(f)}
    assert sum(labels.values()) == len(kept) and labels == stats["label_histogram"]


def test_report_on_empty_manifest(capsys, tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    code, out, _ = run_cli(capsys, "report", "--manifest", str(tmp_path / "m.jsonl"), "--out", str(tmp_path / "r"))
    stats = json.loads(out)
    assert code == EXIT_OK and stats["kept_clips"] == 0 and stats["avg_caption_words"] == 0.0
    assert stats["aesthetic_frac_at_least"]["3.5"] == 0.0


def test_report_on_malformed_manifest(capsys, tmp_path):
    (tmp_path / "m.jsonl").write_text('{"clip_id": 1}\n')
    code, _, err = run_cli(capsys, "report", "--manifest", str(tmp_path / "m.jsonl"), "--out", str(tmp_path / "r"))
    assert code == EXIT_ERROR and "line 1" in err
    assert run_cli(capsys, "report", "--manifest", str(tmp_path / "absent"), "--out", str(tmp_path / "r"))[0] == 1


def test_probe(capsys, corpus_dir):
    code, out, _ = run_cli(capsys, "probe", os.path.join(corpus_dir, "video_01.y4m"))
    d = json.loads(out)
    assert code == EXIT_OK and d["fps"] == 30.0 and d["frame_count"] == 90 and d["width"] == 320
    code, _, err = run_cli(capsys, "probe", os.path.join(corpus_dir, "sources.txt"))
    assert code == EXIT_ERROR and err


def test_sample(capsys):
    code, out, _ = run_cli(capsys, "sample", "--clip-n", "100", "--n", "8")
    d = json.loads(out)
    assert code == EXIT_OK and d["indices"] == [10, 21, 33, 44, 55, 66, 78, 89]
    assert d["indices"] == reference_samples(100, 8, 0.10) and d["M"] == pytest.approx(2.4)
    assert run_cli(capsys, "sample", "--clip-n", "50")[0] == EXIT_ERROR


def test_classify(capsys, corpus_dir):
    code, out, _ = run_cli(capsys, "classify", "--clip", os.path.join(corpus_dir, "video_01.y4m"))
    d = json.loads(out)
    assert code == EXIT_OK and d["label"] == "C5" and d["frames"] == 90


def test_console_script(corpus_dir):
    exe = shutil.which("curate")
    cmd = [exe] if exe else [sys.executable, "-m", "clipcurate"]
    p = subprocess.run(cmd + ["sample", "--clip-n", "255"], capture_output=True, text=True, timeout=120)
    assert p.returncode == 0 and json.loads(p.stdout)["M"] == 10.0
    p = subprocess.run(cmd + ["report"], capture_output=True, text=True, timeout=120)
    assert p.returncode == 2
