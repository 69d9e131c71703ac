"""Source decoding: probe videos and stream downscaled grayscale frames.

Three backends feed the same ``FrameBuffer`` stream:

* Y4M files read directly (the bit-exact path used by all fixtures),
* an external decoder command writing Y4M or raw RGB24/gray to a pipe,
* OpenCV's bundled FFmpeg for anything else.
"""
from __future__ import annotations

import io
import os
import queue
import shlex
import shutil
import subprocess
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import BinaryIO, Iterable, Iterator, Optional, Sequence

import cv2
import numpy as np

Y4M_MAGIC = b"YUV4MPEG2"
DEFAULT_TARGET_HEIGHT = 270


class MediaError(Exception):
    pass


class UnreadableSource(MediaError):
    """I/O failure opening or reading a source (including mid-stream)."""


class UndecodableStream(MediaError):
    """The source is readable but carries no decodable video track."""


@dataclass(frozen=True)
class VideoMeta:
    source_id: str
    path_or_uri: str
    fps: Fraction
    width: int
    height: int
    frame_count: int
    duration_s: float
    container: str = "y4m"

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")


@dataclass
class FrameBuffer:
    index: int
    timestamp_s: float
    width: int
    height: int
    luma: np.ndarray  # (height, width) uint8
    rgb: Optional[np.ndarray] = field(default=None, repr=False)  # (height, width, 3) uint8

    @property
    def mean_luma(self) -> float:
        return float(self.luma.mean())


@dataclass(frozen=True)
class DecoderCommand:
    """External decoder invoked per source.

    ``argv`` is a shell-style template; ``{src}`` is replaced by the source
    path. The process must write ``fmt`` frames to stdout: ``y4m``, or raw
    ``rgb24``/``gray`` at the probed resolution.
    """

    argv: str
    fmt: str = "y4m"

    def build(self, src: str) -> list[str]:
        return [a.replace("{src}", src) for a in shlex.split(self.argv)]


def default_decoder() -> Optional[DecoderCommand]:
    if shutil.which("ffmpeg"):
        return DecoderCommand(
            "ffmpeg -v error -nostdin -i {src} -an -f yuv4mpegpipe -pix_fmt yuvj444p -strict -1 -",
            "y4m",
        )
    return None


# --------------------------------------------------------------------------
# color


def rgb_to_luma(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma with integer weights, rounded half up."""
    rgb = rgb.astype(np.int32)
    y = 299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2]
    return ((y + 500) // 1000).astype(np.uint8)


def rgb_to_ycbcr(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full-range (JFIF) YCbCr; Y matches :func:`rgb_to_luma` exactly."""
    y = rgb_to_luma(rgb)
    f = rgb.astype(np.float64)
    cb = 128.0 - 0.168736 * f[..., 0] - 0.331264 * f[..., 1] + 0.5 * f[..., 2]
    cr = 128.0 + 0.5 * f[..., 0] - 0.418688 * f[..., 1] - 0.081312 * f[..., 2]
    cb = np.clip(np.floor(cb + 0.5), 0, 255).astype(np.uint8)
    cr = np.clip(np.floor(cr + 0.5), 0, 255).astype(np.uint8)
    return y, cb, cr


def ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    y = y.astype(np.float64)
    cb = cb.astype(np.float64) - 128.0
    cr = cr.astype(np.float64) - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    out = np.stack([r, g, b], axis=-1)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def scaled_size(width: int, height: int, target_height: int) -> tuple[int, int]:
    w = int(np.floor(width * target_height / height / 2.0 + 0.5)) * 2
    return max(w, 2), target_height


def _resize(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    if (img.shape[1], img.shape[0]) == size:
        return img
    return cv2.resize(img, size, interpolation=cv2.INTER_AREA)


# --------------------------------------------------------------------------
# Y4M


@dataclass
class Y4MHeader:
    width: int
    height: int
    fps: Fraction
    colorspace: str = "420jpeg"
    full_range: bool = False

    @property
    def chroma_shape(self) -> Optional[tuple[int, int]]:
        cs = self.colorspace
        if cs.startswith("mono"):
            return None
        if cs.startswith("444"):
            return self.height, self.width
        if cs.startswith("422"):
            return self.height, (self.width + 1) // 2
        if cs.startswith("420"):
            return (self.height + 1) // 2, (self.width + 1) // 2
        raise UndecodableStream(f"unsupported Y4M colorspace C{cs}")

    @property
    def frame_bytes(self) -> int:
        n = self.width * self.height
        cshape = self.chroma_shape
        if cshape is not None:
            n += 2 * cshape[0] * cshape[1]
        return n


def parse_y4m_header(line: bytes) -> Y4MHeader:
    parts = line.rstrip(b"\n").split(b" ")
    if parts[0] != Y4M_MAGIC:
        raise UndecodableStream("not a YUV4MPEG2 stream")
    width = height = None
    fps = Fraction(25)
    colorspace = "420jpeg"
    full_range = False
    for p in parts[1:]:
        if not p:
            continue
        tag, val = chr(p[0]), p[1:].decode("ascii", "replace")
        if tag == "W":
            width = int(val)
        elif tag == "H":
            height = int(val)
        elif tag == "F":
            num, den = val.split(":")
            fps = Fraction(int(num), int(den))
        elif tag == "C":
            colorspace = val
        elif tag == "X" and val.upper() == "COLORRANGE=FULL":
            full_range = True
    if not width or not height or fps <= 0:
        raise UndecodableStream("Y4M header missing W/H/F")
    if colorspace.startswith("mono"):
        full_range = True
    return Y4MHeader(width, height, fps, colorspace, full_range)


def _readline(f: BinaryIO, limit: int = 4096) -> bytes:
    line = f.readline(limit)
    if line and not line.endswith(b"\n"):
        raise UnreadableSource("unterminated Y4M header line")
    return line


class Y4MReader:
    """Sequential Y4M frame reader over a binary file object or pipe."""

    def __init__(self, f: BinaryIO):
        self.f = f
        first = f.read(len(Y4M_MAGIC))
        if first != Y4M_MAGIC:
            raise UndecodableStream("not a YUV4MPEG2 stream")
        self.header = parse_y4m_header(first + _readline(f))
        self.index = 0

    def _read_exact(self, n: int) -> bytes:
        buf = self.f.read(n)
        if len(buf) != n:
            raise UnreadableSource(
                f"truncated Y4M frame {self.index}: got {len(buf)} of {n} bytes"
            )
        return buf

    def skip(self) -> bool:
        line = _readline(self.f)
        if not line:
            return False
        if not line.startswith(b"FRAME"):
            raise UnreadableSource(f"bad frame marker at frame {self.index}")
        if self.f.seekable():
            here = self.f.tell()
            end = self.f.seek(0, io.SEEK_END)
            if end - here < self.header.frame_bytes:
                raise UnreadableSource(f"truncated Y4M frame {self.index}")
            self.f.seek(here + self.header.frame_bytes)
        else:
            self._read_exact(self.header.frame_bytes)
        self.index += 1
        return True

    def read(self) -> Optional[tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]]:
        line = _readline(self.f)
        if not line:
            return None
        if not line.startswith(b"FRAME"):
            raise UnreadableSource(f"bad frame marker at frame {self.index}")
        h = self.header
        data = self._read_exact(h.frame_bytes)
        y = np.frombuffer(data, np.uint8, h.width * h.height).reshape(h.height, h.width)
        cshape = h.chroma_shape
        cb = cr = None
        if cshape is not None:
            n = cshape[0] * cshape[1]
            off = h.width * h.height
            cb = np.frombuffer(data, np.uint8, n, off).reshape(cshape)
            cr = np.frombuffer(data, np.uint8, n, off + n).reshape(cshape)
        self.index += 1
        return y, cb, cr


def _y4m_planes_to_luma_rgb(header: Y4MHeader, y, cb, cr, with_color: bool):
    if header.full_range:
        luma = y
    else:
        luma = np.clip(np.floor((y.astype(np.float64) - 16.0) * 255.0 / 219.0 + 0.5), 0, 255)
        luma = luma.astype(np.uint8)
    rgb = None
    if with_color:
        if cb is None:
            rgb = np.repeat(luma[..., None], 3, axis=2)
        else:
            if cb.shape != y.shape:
                fy = -(-y.shape[0] // cb.shape[0])
                fx = -(-y.shape[1] // cb.shape[1])
                cb = np.repeat(np.repeat(cb, fy, 0), fx, 1)[: y.shape[0], : y.shape[1]]
                cr = np.repeat(np.repeat(cr, fy, 0), fx, 1)[: y.shape[0], : y.shape[1]]
            if not header.full_range:
                cb = (cb.astype(np.float64) - 128.0) * 255.0 / 224.0 + 128.0
                cr = (cr.astype(np.float64) - 128.0) * 255.0 / 224.0 + 128.0
            rgb = ycbcr_to_rgb(luma, cb, cr)
    return luma, rgb


def write_y4m(path: str | os.PathLike, frames: Iterable[np.ndarray], fps: Fraction | int) -> int:
    """Write 8-bit frames as full-range Y4M (``C444`` for RGB, ``Cmono`` for gray)."""
    fps = Fraction(fps)
    n = 0
    with open(path, "wb") as f:
        for frame in frames:
            frame = np.asarray(frame, dtype=np.uint8)
            if n == 0:
                h, w = frame.shape[:2]
                cs = "Cmono" if frame.ndim == 2 else "C444 XCOLORRANGE=FULL"
                f.write(f"YUV4MPEG2 W{w} H{h} F{fps.numerator}:{fps.denominator} Ip A1:1 {cs}\n".encode())
                mono = frame.ndim == 2
            f.write(b"FRAME\n")
            if mono:
                f.write(frame.tobytes())
            else:
                y, cb, cr = rgb_to_ycbcr(frame)
                f.write(y.tobytes())
                f.write(cb.tobytes())
                f.write(cr.tobytes())
            n += 1
    return n


# --------------------------------------------------------------------------
# raw pipes


class RawFrameReader:
    def __init__(self, f: BinaryIO, width: int, height: int, fmt: str = "rgb24"):
        if fmt not in ("rgb24", "gray"):
            raise ValueError(f"unsupported raw format {fmt!r}")
        self.f, self.width, self.height, self.fmt = f, width, height, fmt
        self.channels = 3 if fmt == "rgb24" else 1
        self.index = 0

    def read(self) -> Optional[np.ndarray]:
        n = self.width * self.height * self.channels
        buf = self.f.read(n)
        if not buf:
            return None
        if len(buf) != n:
            raise UnreadableSource(f"truncated raw frame {self.index}: got {len(buf)} of {n} bytes")
        self.index += 1
        shape = (self.height, self.width, 3) if self.channels == 3 else (self.height, self.width)
        return np.frombuffer(buf, np.uint8).reshape(shape)


# --------------------------------------------------------------------------
# probe


def _is_y4m(path: str) -> bool:
    try:
        with open(path, "rb") as f:
            return f.read(len(Y4M_MAGIC)) == Y4M_MAGIC
    except OSError as e:
        raise UnreadableSource(f"{path}: {e}") from e


def _is_remote(src: str) -> bool:
    return "://" in src


def _meta(source_id, src, fps, width, height, frame_count, container) -> VideoMeta:
    if frame_count < 1:
        raise UndecodableStream(f"{src}: no decodable frames")
    return VideoMeta(source_id, src, fps, width, height, frame_count, frame_count / float(fps), container)


def probe(source: str, *, source_id: Optional[str] = None,
          decoder: Optional[DecoderCommand] = None) -> VideoMeta:
    """Return exact fps, dimensions and frame count for ``source``.

    Frame counts are obtained by walking the stream, not from container
    metadata, so they are exact.
    """
    source_id = source if source_id is None else source_id
    if not _is_remote(source):
        if not os.path.exists(source):
            raise UnreadableSource(f"{source}: no such file")
        if not os.access(source, os.R_OK) or os.path.isdir(source):
            raise UnreadableSource(f"{source}: not readable")
        if _is_y4m(source):
            try:
                with open(source, "rb") as f:
                    r = Y4MReader(f)
                    while r.skip():
                        pass
            except OSError as e:
                raise UnreadableSource(f"{source}: {e}") from e
            h = r.header
            return _meta(source_id, source, h.fps, h.width, h.height, r.index, "y4m")
    decoder = decoder or default_decoder()
    if decoder is not None and decoder.fmt == "y4m":
        with _DecoderProcess(decoder, source) as pipe:
            r = Y4MReader(pipe)
            while r.skip():
                pass
        h = r.header
        return _meta(source_id, source, h.fps, h.width, h.height, r.index, "pipe")
    return _probe_cv2(source, source_id)


def _cv2_fps(cap) -> Fraction:
    fps = cap.get(cv2.CAP_PROP_FPS)
    if not fps or fps <= 0 or not np.isfinite(fps):
        raise UndecodableStream("no frame rate reported")
    return Fraction(fps).limit_denominator(1001)


def _probe_cv2(source: str, source_id: str) -> VideoMeta:
    cap = cv2.VideoCapture(source)
    try:
        if not cap.isOpened():
            raise UndecodableStream(f"{source}: no decodable video track")
        width = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
        height = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
        fps = _cv2_fps(cap)
        n = 0
        while cap.grab():
            n += 1
    finally:
        cap.release()
    if width <= 0 or height <= 0:
        raise UndecodableStream(f"{source}: no video dimensions")
    return _meta(source_id, source, fps, width, height, n, "opencv")


class _DecoderProcess:
    def __init__(self, decoder: DecoderCommand, src: str):
        self.argv = decoder.build(src)

    def __enter__(self) -> BinaryIO:
        try:
            self.proc = subprocess.Popen(
                self.argv, stdin=subprocess.DEVNULL, stdout=subprocess.PIPE, stderr=subprocess.PIPE
            )
        except OSError as e:
            raise UnreadableSource(f"decoder failed to start: {e}") from e
        return self.proc.stdout

    def __exit__(self, exc_type, exc, tb):
        proc = self.proc
        if exc_type is not None:
            proc.kill()
        proc.stdout.close()
        err = proc.stderr.read().decode("utf-8", "replace").strip()
        proc.stderr.close()
        rc = proc.wait()
        if exc_type is None and rc != 0:
            raise UnreadableSource(f"decoder exited with {rc}: {err[:200]}")
        return False


# --------------------------------------------------------------------------
# streams


class FrameStream:
    """Iterator of :class:`FrameBuffer` for one source.

    When ``indices`` is given, only those frames are decoded and yielded
    (Y4M files seek past the others).
    """

    def __init__(self, meta: VideoMeta, target_height: int = DEFAULT_TARGET_HEIGHT, *,
                 with_color: bool = False, indices: Optional[Sequence[int]] = None,
                 decoder: Optional[DecoderCommand] = None):
        if target_height < 64:
            raise ValueError("target_height must be >= 64")
        self.meta = meta
        self.target_height = target_height
        self.size = scaled_size(meta.width, meta.height, target_height)
        self.with_color = with_color
        self.wanted = None if indices is None else sorted(set(int(i) for i in indices))
        self.decoder = decoder

    @property
    def width(self) -> int:
        return self.size[0]

    @property
    def height(self) -> int:
        return self.size[1]

    def _make(self, index: int, luma: np.ndarray, rgb: Optional[np.ndarray]) -> FrameBuffer:
        luma = _resize(np.ascontiguousarray(luma), self.size)
        if rgb is not None:
            rgb = _resize(np.ascontiguousarray(rgb), self.size)
        return FrameBuffer(index, index / float(self.meta.fps), self.size[0], self.size[1], luma, rgb)

    def __iter__(self) -> Iterator[FrameBuffer]:
        src = self.meta.path_or_uri
        if self.meta.container == "y4m":
            try:
                with open(src, "rb") as f:
                    yield from self._iter_y4m(f)
            except OSError as e:
                raise UnreadableSource(f"{src}: {e}") from e
            return
        decoder = self.decoder or default_decoder()
        if self.meta.container == "pipe" or decoder is not None:
            if decoder is None:
                raise UnreadableSource(f"{src}: no decoder command available")
            with _DecoderProcess(decoder, src) as pipe:
                if decoder.fmt == "y4m":
                    yield from self._iter_y4m(pipe)
                else:
                    yield from self._iter_raw(RawFrameReader(pipe, self.meta.width, self.meta.height, decoder.fmt))
            return
        yield from self._iter_cv2(src)

    def _want(self, i: int) -> bool:
        return self.wanted is None or i in self._wanted_set

    def _done(self, i: int) -> bool:
        return self.wanted is not None and (not self.wanted or i > self.wanted[-1])

    def _check_count(self, n: int) -> None:
        if self.wanted is None and n != self.meta.frame_count:
            raise UnreadableSource(
                f"{self.meta.path_or_uri}: stream ended after {n} of {self.meta.frame_count} frames"
            )
        if self.wanted is not None and self.wanted and self.wanted[-1] >= n:
            raise UnreadableSource(f"{self.meta.path_or_uri}: frame {self.wanted[-1]} beyond end ({n})")

    def _iter_y4m(self, f: BinaryIO) -> Iterator[FrameBuffer]:
        self._wanted_set = set(self.wanted or ())
        r = Y4MReader(f)
        h = r.header
        if (h.width, h.height) != (self.meta.width, self.meta.height):
            raise UnreadableSource("decoded dimensions differ from probe")
        while not self._done(r.index):
            i = r.index
            if not self._want(i):
                if not r.skip():
                    break
                continue
            planes = r.read()
            if planes is None:
                break
            luma, rgb = _y4m_planes_to_luma_rgb(h, *planes, self.with_color)
            yield self._make(i, luma, rgb)
        if not self._done(r.index):
            self._check_count(r.index)

    def _iter_raw(self, r: RawFrameReader) -> Iterator[FrameBuffer]:
        self._wanted_set = set(self.wanted or ())
        while not self._done(r.index):
            i = r.index
            frame = r.read()
            if frame is None:
                break
            if not self._want(i):
                continue
            if frame.ndim == 2:
                luma = frame
                rgb = np.repeat(frame[..., None], 3, axis=2) if self.with_color else None
            else:
                luma = rgb_to_luma(frame)
                rgb = frame if self.with_color else None
            yield self._make(i, luma, rgb)
        if not self._done(r.index):
            self._check_count(r.index)

    def _iter_cv2(self, src: str) -> Iterator[FrameBuffer]:
        self._wanted_set = set(self.wanted or ())
        cap = cv2.VideoCapture(src)
        if not cap.isOpened():
            raise UnreadableSource(f"{src}: cannot reopen")
        i = 0
        try:
            while not self._done(i):
                if not self._want(i):
                    if not cap.grab():
                        break
                    i += 1
                    continue
                ok, bgr = cap.read()
                if not ok:
                    break
                rgb = np.ascontiguousarray(bgr[..., ::-1])
                yield self._make(i, rgb_to_luma(rgb), rgb if self.with_color else None)
                i += 1
        finally:
            cap.release()
        if not self._done(i):
            self._check_count(i)


def open_stream(meta: VideoMeta, target_height: int = DEFAULT_TARGET_HEIGHT, **kw) -> FrameStream:
    return FrameStream(meta, target_height, **kw)


def read_frames(meta: VideoMeta, indices: Sequence[int], target_height: int = DEFAULT_TARGET_HEIGHT,
                *, with_color: bool = True, decoder: Optional[DecoderCommand] = None) -> list[FrameBuffer]:
    """Decode only ``indices`` from a source, in index order."""
    return list(FrameStream(meta, target_height, with_color=with_color, indices=indices, decoder=decoder))


_END = object()


def prefetch(it: Iterable, maxsize: int = 4) -> Iterator:
    """Run ``it`` in a producer thread behind a bounded queue.

    Exceptions raised by the producer are re-raised in the consumer.
    """
    q: queue.Queue = queue.Queue(maxsize=max(1, maxsize))
    stop = threading.Event()

    def produce():
        try:
            for item in it:
                while not stop.is_set():
                    try:
                        q.put((None, item), timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            q.put((None, _END))
        except BaseException as e:  # noqa: BLE001 - forwarded to consumer
            q.put((e, None))

    t = threading.Thread(target=produce, daemon=True)
    t.start()
    try:
        while True:
            err, item = q.get()
            if err is not None:
                raise err
            if item is _END:
                return
            yield item
    finally:
        stop.set()
        t.join(timeout=5)


def read_source_list(path: str | os.PathLike) -> list[str]:
    """Read a newline-delimited source manifest; blank lines and ``#`` comments skipped."""
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            out.append(s)
    return out
