import dataclasses
import os
import sys
from fractions import Fraction

import cv2
import numpy as np
import pytest

from clipcurate.media import (DecoderCommand, FrameStream, UndecodableStream, UnreadableSource,
                              open_stream, parse_y4m_header, prefetch, probe, read_frames,
                              read_source_list, rgb_to_luma, scaled_size, write_y4m)
from oracles import luma_601


def solid(rgb, n=3, h=72, w=96):
    return [np.full((h, w, 3), rgb, np.uint8) for _ in range(n)]


def noise_frames(n, h=72, w=96, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 256, (h, w, 3), dtype=np.uint8) for _ in range(n)]


def test_luma_examples():
    px = np.array([[[255, 255, 255], [255, 0, 0], [0, 255, 0], [0, 0, 255]]], np.uint8)
    assert rgb_to_luma(px).tolist() == [[255, 76, 150, 29]]


def test_luma_matches_exact_rational_oracle():
    rng = np.random.default_rng(3)
    px = rng.integers(0, 256, (500, 3))
    got = rgb_to_luma(px.reshape(1, -1, 3).astype(np.uint8))[0]
    want = [luma_601(*map(int, p)) for p in px]
    assert got.tolist() == want


def test_scaled_size():
    assert scaled_size(1920, 1080, 270) == (480, 270)
    assert scaled_size(640, 480, 270) == (360, 270)
    # odd widths are rounded to even
    assert scaled_size(1000, 999, 100)[0] % 2 == 0


def test_probe_y4m_counts_frames(tmp_path):
    p = tmp_path / "a.y4m"
    write_y4m(p, noise_frames(300, 36, 64), 30)
    meta = probe(str(p))
    assert (meta.frame_count, meta.fps, meta.width, meta.height) == (300, Fraction(30), 64, 36)
    assert meta.duration_s == pytest.approx(10.0)
    assert len(list(open_stream(meta, 64))) == 300


def test_probe_single_frame(tmp_path):
    p = tmp_path / "one.y4m"
    write_y4m(p, noise_frames(1), Fraction(24000, 1001))
    meta = probe(str(p))
    assert meta.frame_count == 1
    assert meta.duration_s == pytest.approx(1001 / 24000)


def test_probe_errors(tmp_path):
    txt = tmp_path / "notes.txt"
    txt.write_text("not a video\n" * 20)
    with pytest.raises(UndecodableStream):
        probe(str(txt))
    with pytest.raises(UnreadableSource):
        probe(str(tmp_path / "missing.y4m"))


def test_stream_indices_timestamps_and_size(tmp_path):
    p = tmp_path / "a.y4m"
    write_y4m(p, noise_frames(12, 1080 // 8, 1920 // 8), 25)
    meta = probe(str(p))
    frames = list(open_stream(meta, 64))
    assert [f.index for f in frames] == list(range(12))
    for f in frames:
        assert abs(f.timestamp_s - f.index / 25) < 1e-6
        assert f.luma.shape == (64, 114) and f.luma.dtype == np.uint8
        assert f.luma.size == f.width * f.height


def test_full_hd_downscale(tmp_path):
    p = tmp_path / "hd.y4m"
    write_y4m(p, solid((255, 0, 0), n=2, h=1080, w=1920), 30)
    frames = list(open_stream(probe(str(p)), 270))
    assert (frames[0].width, frames[0].height) == (480, 270)
    assert set(np.unique(frames[0].luma)) == {76}


def test_decode_is_deterministic(tmp_path):
    p = tmp_path / "a.y4m"
    write_y4m(p, noise_frames(5), 30)
    meta = probe(str(p))
    a = [f.luma.tobytes() for f in open_stream(meta, 64)]
    b = [f.luma.tobytes() for f in open_stream(meta, 64)]
    assert a == b


def test_truncated_stream_raises(tmp_path):
    p = tmp_path / "a.y4m"
    write_y4m(p, noise_frames(6), 30)
    meta = probe(str(p))
    with open(p, "r+b") as f:
        f.truncate(os.path.getsize(p) - 100)
    with pytest.raises(UnreadableSource):
        list(open_stream(meta, 72))


def test_read_selected_frames_with_color(tmp_path):
    p = tmp_path / "a.y4m"
    frames = [np.full((72, 96, 3), (10 * i, 128, 255 - 10 * i), np.uint8) for i in range(10)]
    write_y4m(p, frames, 30)
    got = read_frames(probe(str(p)), [7, 2, 2, 5], 72)
    assert [g.index for g in got] == [2, 5, 7]
    for g in got:
        # full-range YCbCr round trip of a flat color is within one level
        assert np.abs(g.rgb.astype(int) - frames[g.index].astype(int)).max() <= 1


def test_mono_y4m(tmp_path):
    p = tmp_path / "m.y4m"
    write_y4m(p, [np.full((72, 96), v, np.uint8) for v in (0, 100, 255)], 30)
    assert [int(f.luma.mean()) for f in open_stream(probe(str(p)), 72)] == [0, 100, 255]


def test_y4m_header_parse():
    h = parse_y4m_header(b"YUV4MPEG2 W640 H360 F30000:1001 Ip A1:1 C420jpeg")
    assert (h.width, h.height, h.fps) == (640, 360, Fraction(30000, 1001))


def test_limited_range_420(tmp_path):
    # hand-built 4:2:0 limited-range file: Y=16 is black, Y=235 white
    p = tmp_path / "l.y4m"
    w, h = 8, 64
    with open(p, "wb") as f:
        f.write(f"YUV4MPEG2 W{w} H{h} F30:1 Ip C420jpeg\n".encode())
        for y in (16, 235):
            f.write(b"FRAME\n" + bytes([y]) * (w * h) + bytes([128]) * (w * h // 2))
    got = [int(f.luma.mean()) for f in open_stream(probe(str(p)), 64)]
    assert got == [0, 255]


def test_decoder_pipe_y4m(tmp_path):
    p = tmp_path / "a.y4m"
    write_y4m(p, noise_frames(4), 30)
    dec = DecoderCommand("cat {src}", "y4m")
    meta = probe(str(p))
    piped_meta = dataclasses.replace(meta, container="pipe")
    direct = [f.luma.tobytes() for f in open_stream(meta, 72)]
    piped = [f.luma.tobytes() for f in FrameStream(piped_meta, 72, decoder=dec)]
    assert direct == piped


def test_decoder_pipe_raw_rgb(tmp_path):
    frames = noise_frames(3)
    raw = tmp_path / "a.rgb"
    raw.write_bytes(b"".join(f.tobytes() for f in frames))
    y4m = tmp_path / "a.y4m"
    write_y4m(y4m, frames, 30)
    meta = probe(str(y4m))
    meta = dataclasses.replace(meta, path_or_uri=str(raw), container="pipe")
    got = list(FrameStream(meta, 72, decoder=DecoderCommand("cat {src}", "rgb24")))
    assert [g.luma.tolist() for g in got] == [rgb_to_luma(f).tolist() for f in frames]


def test_decoder_failure_is_explicit(tmp_path):
    p = tmp_path / "a.y4m"
    write_y4m(p, noise_frames(2), 30)
    meta = dataclasses.replace(probe(str(p)), container="pipe")
    bad = DecoderCommand(f"{sys.executable} -c \"import sys; sys.exit(3)\"", "rgb24")
    with pytest.raises(UnreadableSource):
        list(FrameStream(meta, 72, decoder=bad))


def test_opencv_container(tmp_path):
    p = str(tmp_path / "a.avi")
    w = cv2.VideoWriter(p, cv2.VideoWriter_fourcc(*"MJPG"), 20, (160, 96))
    if not w.isOpened():
        pytest.skip("no MJPG writer in this OpenCV build")
    for f in noise_frames(15, 96, 160):
        w.write(f)
    w.release()
    meta = probe(p)
    assert meta.container == "opencv" and meta.frame_count == 15 and meta.fps == 20
    frames = list(open_stream(meta, 96))
    assert [f.index for f in frames] == list(range(15))


def test_prefetch_forwards_errors():
    def gen():
        yield 1
        raise UnreadableSource("boom")

    it = prefetch(gen(), 2)
    assert next(it) == 1
    with pytest.raises(UnreadableSource):
        next(it)


def test_source_list(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("# header\n\na.y4m\n  b.mp4  \n# c\n")
    assert read_source_list(p) == ["a.y4m", "b.mp4"]
