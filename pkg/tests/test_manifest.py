import dataclasses
import io
import json
from importlib import resources

import jsonschema
import pytest

from clipcurate.camera_motion import Label, MotionLabel
from clipcurate.captions import CaptionRecord
from clipcurate.manifest import (MalformedLine, ManifestWarning, ValidationError,
                                 compute_stats, dumps_record, existing_clip_ids, make_clip_id, new_record,
                                 read_records, record_to_dict, repair_tail, write_records)
from clipcurate.quality import Decision, Provenance, Reason, ScoreRecord
from clipcurate.sampler import plan_samples
from clipcurate.segmenter import ClipSpan


def full_record(source="src/a.y4m", start=0, pairs=150, fps=30.0, words=100, label=Label.C4, keep=True):
    cid = make_clip_id(source, start, start + pairs)
    text = " ".join(["word"] * (words - 2) + ["camera", "pans"])
    return new_record(
        source, ClipSpan(start, start + pairs), fps,
        motion_label=MotionLabel(label, 0.8123456789, "heuristic", "linear"),
        scores=ScoreRecord(cid, 5.123456789, 6.5, Provenance.builtin_proxy),
        sampling_plan=plan_samples(pairs + 1, 8, 0.10, fps),
        caption=CaptionRecord(cid, text, words, ("camera", "pan"), "en", "m1", 1),
        decision=Decision(cid, keep, Reason.passed if keep else Reason.low_quality),
        pipeline_version="0.1.0",
    )


def test_round_trip(tmp_path):
    recs = [full_record(start=s * 200) for s in range(5)]
    path = tmp_path / "m.jsonl"
    assert write_records(recs, path) == 5
    assert read_records(path) == recs


def test_canonical_bytes(tmp_path):
    r = full_record()
    line = dumps_record(r)
    assert line == json.dumps(json.loads(line), ensure_ascii=False, separators=(",", ":"))
    assert '"confidence":0.812346' in line
    write_records([r], tmp_path / "a.jsonl")
    write_records(read_records(tmp_path / "a.jsonl"), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_duration_must_match_span():
    r = dataclasses.replace(full_record(), duration_s=6.0)
    with pytest.raises(ValidationError) as e:
        record_to_dict(r)
    assert e.value.path == "duration_s"


def test_nothing_written_when_a_record_is_invalid(tmp_path):
    bad = dataclasses.replace(full_record(start=500), duration_s=1.0)
    with pytest.raises(ValidationError):
        write_records([full_record(), bad], tmp_path / "m.jsonl")
    assert not (tmp_path / "m.jsonl").exists()


@pytest.mark.parametrize("field,value", [
    ("clip_id", "0" * 32),
    ("scores", ScoreRecord("other", 1.0, 1.0)),
])
def test_cross_field_checks(field, value):
    with pytest.raises(ValidationError) as e:
        record_to_dict(dataclasses.replace(full_record(), **{field: value}))
    assert e.value.path.startswith(field)


def test_corrupted_line(tmp_path):
    path = tmp_path / "m.jsonl"
    write_records([full_record(start=s * 200) for s in range(6)], path)
    lines = path.read_text().splitlines(keepends=True)
    lines[3] = lines[3][:40] + "\n"
    path.write_text("".join(lines))
    with pytest.raises(MalformedLine) as e:
        read_records(path)
    assert e.value.line_no == 4
    with pytest.warns(ManifestWarning):
        got = read_records(path, strict=False)
    assert len(got) == 5


def test_line_with_bad_values_is_malformed():
    d = record_to_dict(full_record())
    d["scores"]["aesthetic"] = 11
    with pytest.raises(MalformedLine):
        read_records(io.StringIO(json.dumps(d) + "\n"))


def test_schema_file_accepts_records():
    schema = json.loads(resources.files("clipcurate").joinpath("data/manifest.schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    v = jsonschema.Draft202012Validator(schema)
    bare = new_record("s", ClipSpan(3, 93), 30.0)
    for r in (full_record(), bare):
        v.validate(json.loads(dumps_record(r)))
    d = json.loads(dumps_record(full_record()))
    d["extra"] = 1
    assert not v.is_valid(d)


def test_repair_tail(tmp_path):
    path = tmp_path / "m.jsonl"
    write_records([full_record(), full_record(start=300)], path)
    good = path.read_bytes()
    with open(path, "ab") as f:
        f.write(b'{"schema_version":1,"clip_id":"ab')
    assert repair_tail(path) == len(b'{"schema_version":1,"clip_id":"ab')
    assert path.read_bytes() == good
    assert repair_tail(path) == 0
    assert repair_tail(tmp_path / "missing.jsonl") == 0


def test_existing_ids_skip_torn_line(tmp_path):
    path = tmp_path / "m.jsonl"
    recs = [full_record(), full_record(start=300)]
    write_records(recs, path)
    with open(path, "a") as f:
        f.write(dumps_record(full_record(start=600))[:-1])
    assert existing_clip_ids(path) == {r.clip_id for r in recs}


def test_clip_id():
    a = make_clip_id("s", 0, 10)
    assert len(a) == 32 and int(a, 16) >= 0
    assert a != make_clip_id("s", 0, 11) != make_clip_id("t", 0, 10)
    # the separator keeps concatenations apart
    assert make_clip_id("s1", 0, 10) != make_clip_id("s", 10, 10)
    ids = {make_clip_id(f"video_{i % 50}.mp4", i, i + 90) for i in range(20000)}
    assert len(ids) == 20000


# --------------------------------------------------------------------------
# statistics


def test_stats_durations():
    recs = [full_record(start=i * 1000, pairs=p) for i, p in enumerate([150, 210, 300])]
    s = compute_stats(recs)
    assert s.kept_clips == 3 and s.avg_duration_s == pytest.approx(22 / 3, abs=1e-6)
    assert s.total_duration_hr == pytest.approx(22 / 3600, abs=1e-9)


def test_stats_caption_words():
    recs = [full_record(start=i * 1000, words=w) for i, w in enumerate([100, 206, 312])]
    assert compute_stats(recs).avg_caption_words == 206.0


def test_stats_empty():
    s = compute_stats([])
    assert (s.kept_clips, s.total_duration_hr, s.avg_duration_s, s.avg_caption_words) == (0, 0.0, 0.0, 0.0)
    assert set(s.label_histogram.values()) == {0}


def test_stats_only_count_kept():
    recs = [full_record(start=0, label=Label.C1), full_record(start=500, keep=False),
            full_record(start=1000, label=Label.C1), new_record("s", ClipSpan(0, 60), 30.0)]
    s = compute_stats(recs)
    assert s.kept_clips == 3 and s.total_records == 4
    assert s.label_histogram["C1"] == 2 and s.label_histogram["none"] == 1 and s.label_histogram["C4"] == 0


def test_stats_duplication_scales_totals():
    recs = [full_record(start=i * 1000, pairs=90 + 17 * i) for i in range(7)]
    one, two = compute_stats(recs), compute_stats(recs + recs)
    assert two.total_duration_hr == pytest.approx(2 * one.total_duration_hr)
    assert two.avg_duration_s == pytest.approx(one.avg_duration_s)
    assert two.kept_clips == 2 * one.kept_clips
