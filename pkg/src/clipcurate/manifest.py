"""Line-delimited JSON manifest of scored clips, plus corpus statistics."""
from __future__ import annotations

import hashlib
import io
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Union

from .camera_motion import Label, MotionLabel
from .captions import CaptionRecord
from .quality import Decision, Provenance, Reason, ScoreRecord
from .sampler import SamplingPlan
from .segmenter import ClipSpan

SCHEMA_VERSION = 1
FLOAT_DECIMALS = 6


class ManifestError(Exception):
    pass


class ValidationError(ManifestError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class MalformedLine(ManifestError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class IOFailure(ManifestError):
    pass


class ManifestWarning(UserWarning):
    pass


def make_clip_id(source_id: str, start_frame: int, end_frame: int) -> str:
    """128-bit content hash of the source and span."""
    key = f"{source_id}\x1f{start_frame}\x1f{end_frame}".encode("utf-8")
    return hashlib.blake2b(key, digest_size=16).hexdigest()


def q(x: float) -> float:
    """Quantize a float to the manifest precision."""
    v = round(float(x), FLOAT_DECIMALS)
    return 0.0 if v == 0 else v


@dataclass(frozen=True)
class ClipManifestRecord:
    clip_id: str
    source_id: str
    span: ClipSpan
    fps: float
    duration_s: float
    motion_label: Optional[MotionLabel] = None
    scores: Optional[ScoreRecord] = None
    sampling_plan: Optional[SamplingPlan] = None
    caption: Optional[CaptionRecord] = None
    caption_flags: tuple[str, ...] = ()
    decision: Optional[Decision] = None
    pipeline_version: str = ""
    schema_version: int = SCHEMA_VERSION

    @property
    def kept(self) -> bool:
        return self.decision is None or self.decision.keep

    def validate(self) -> "ClipManifestRecord":
        return validate_record(self)

    def canonical(self) -> "ClipManifestRecord":
        """Same record with every float quantized as it will be serialized."""
        return record_from_dict(record_to_dict(self, validate=False), validate=False)


def new_record(source_id: str, span: ClipSpan, fps: float, **kw) -> ClipManifestRecord:
    return ClipManifestRecord(
        clip_id=make_clip_id(source_id, span.start_frame, span.end_frame),
        source_id=source_id,
        span=ClipSpan(span.start_frame, span.end_frame, source_id),
        fps=float(fps),
        duration_s=span.n_pairs / float(fps),
        **kw,
    ).canonical()


# --------------------------------------------------------------------------
# validation


def validate_record(r: ClipManifestRecord) -> ClipManifestRecord:
    if not r.source_id:
        raise ValidationError("source_id", "empty")
    if r.clip_id != make_clip_id(r.source_id, r.span.start_frame, r.span.end_frame):
        raise ValidationError("clip_id", "does not match hash of source_id and span")
    if r.span.end_frame <= r.span.start_frame or r.span.start_frame < 0:
        raise ValidationError("span", "end_frame must exceed start_frame >= 0")
    if not (r.fps > 0 and math.isfinite(r.fps)):
        raise ValidationError("fps", "must be positive")
    expect = r.span.n_pairs / r.fps
    if abs(r.duration_s - expect) > 1e-6:
        raise ValidationError("duration_s", f"{r.duration_s} != span length / fps = {expect:.6f}")
    if r.motion_label is not None and not 0 <= r.motion_label.confidence <= 1:
        raise ValidationError("motion_label.confidence", "outside [0, 1]")
    if r.scores is not None:
        for k in ("aesthetic", "quality"):
            v = getattr(r.scores, k)
            if not 0 <= v <= 10:
                raise ValidationError(f"scores.{k}", f"{v} outside [0, 10]")
        if r.scores.clip_id != r.clip_id:
            raise ValidationError("scores.clip_id", "does not match clip_id")
    p = r.sampling_plan
    if p is not None:
        if p.clip_n != r.span.n_frames:
            raise ValidationError("sampling_plan.clip_n", f"{p.clip_n} != span frame count {r.span.n_frames}")
        if len(p.indices) != p.N:
            raise ValidationError("sampling_plan.indices", "length differs from N")
        if any(b <= a for a, b in zip(p.indices, p.indices[1:])):
            raise ValidationError("sampling_plan.indices", "not strictly increasing")
        if p.indices and (p.indices[0] < 0 or p.indices[-1] >= p.clip_n):
            raise ValidationError("sampling_plan.indices", "outside the clip")
        if abs(p.M * p.clip_n - p.N * p.FPS) > 1e-6 * max(1.0, p.N * p.FPS):
            raise ValidationError("sampling_plan.M", "M != N * FPS / clip_n")
    c = r.caption
    if c is not None and c.word_count != len(c.text.split()):
        raise ValidationError("caption.word_count", "differs from whitespace token count")
    if r.decision is not None and r.decision.clip_id != r.clip_id:
        raise ValidationError("decision.clip_id", "does not match clip_id")
    return r


# --------------------------------------------------------------------------
# (de)serialization


def record_to_dict(r: ClipManifestRecord, validate: bool = True) -> dict:
    if validate:
        validate_record(r)
    ml = r.motion_label
    sc = r.scores
    sp = r.sampling_plan
    cap = r.caption
    dec = r.decision
    return {
        "schema_version": r.schema_version,
        "clip_id": r.clip_id,
        "source_id": r.source_id,
        "span": {"start_frame": r.span.start_frame, "end_frame": r.span.end_frame},
        "fps": q(r.fps),
        "duration_s": q(r.duration_s),
        "motion_label": None if ml is None else {
            "label": Label(ml.label).value,
            "confidence": q(ml.confidence),
            "provenance": ml.provenance,
            "rule": ml.rule,
        },
        "scores": None if sc is None else {
            "aesthetic": q(sc.aesthetic),
            "quality": q(sc.quality),
            "scorer_provenance": Provenance(sc.scorer_provenance).value,
        },
        "sampling_plan": None if sp is None else {
            "N": sp.N,
            "FPS": q(sp.FPS),
            "clip_n": sp.clip_n,
            "M": q(sp.M),
            "trim_fraction": q(sp.trim_fraction),
            "clip_n_trimmed": sp.clip_n_trimmed,
            "M_trimmed": q(sp.M_trimmed),
            "rounding": sp.rounding,
            "dedup": sp.dedup,
            "indices": list(sp.indices),
        },
        "caption": None if cap is None else {
            "text": cap.text,
            "word_count": cap.word_count,
            "camera_terms_found": list(cap.camera_terms_found),
            "language_tag": cap.language_tag,
            "model_id": cap.model_id,
            "attempts": cap.attempts,
        },
        "caption_flags": list(r.caption_flags),
        "decision": None if dec is None else {"keep": dec.keep, "reason": Reason(dec.reason).value},
        "pipeline_version": r.pipeline_version,
    }


def record_from_dict(d: dict, validate: bool = True) -> ClipManifestRecord:
    try:
        cid = d["clip_id"]
        src = d["source_id"]
        ml = d.get("motion_label")
        sc = d.get("scores")
        sp = d.get("sampling_plan")
        cap = d.get("caption")
        dec = d.get("decision")
        r = ClipManifestRecord(
            clip_id=cid,
            source_id=src,
            span=ClipSpan(int(d["span"]["start_frame"]), int(d["span"]["end_frame"]), src),
            fps=q(d["fps"]),
            duration_s=q(d["duration_s"]),
            motion_label=None if ml is None else MotionLabel(
                Label(ml["label"]), q(ml["confidence"]), ml.get("provenance", "heuristic"), ml.get("rule", "")
            ),
            scores=None if sc is None else ScoreRecord(
                cid, q(sc["aesthetic"]), q(sc["quality"]), Provenance(sc["scorer_provenance"])
            ),
            sampling_plan=None if sp is None else SamplingPlan(
                N=int(sp["N"]), FPS=q(sp["FPS"]), clip_n=int(sp["clip_n"]), M=q(sp["M"]),
                trim_fraction=q(sp["trim_fraction"]), indices=tuple(int(i) for i in sp["indices"]),
                clip_n_trimmed=int(sp.get("clip_n_trimmed", 0)), M_trimmed=q(sp.get("M_trimmed", 0.0)),
                rounding=sp.get("rounding", "half_up"), dedup=sp.get("dedup", "bump_forward"),
            ),
            caption=None if cap is None else CaptionRecord(
                cid, cap["text"], int(cap["word_count"]), tuple(cap.get("camera_terms_found", ())),
                cap.get("language_tag", "en"), cap.get("model_id", ""), int(cap.get("attempts", 1)),
            ),
            caption_flags=tuple(d.get("caption_flags", ())),
            decision=None if dec is None else Decision(cid, bool(dec["keep"]), Reason(dec["reason"])),
            pipeline_version=d.get("pipeline_version", ""),
            schema_version=int(d.get("schema_version", SCHEMA_VERSION)),
        )
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(type(e).__name__, str(e)) from e
    return validate_record(r) if validate else r


def dumps_record(r: ClipManifestRecord) -> str:
    return json.dumps(record_to_dict(r), ensure_ascii=False, separators=(",", ":"), allow_nan=False)


Sink = Union[str, os.PathLike, IO[str]]


def write_records(records: Iterable[ClipManifestRecord], sink: Sink) -> int:
    """Append records as canonical JSON lines; all are validated before any write.

    Each line goes out in a single ``write`` on an ``O_APPEND`` descriptor.
    """
    lines = [(dumps_record(r) + "\n").encode("utf-8") for r in records]
    if not isinstance(sink, (str, os.PathLike)):
        for line in lines:
            sink.write(line.decode("utf-8"))
        sink.flush()
        return len(lines)
    try:
        fd = os.open(sink, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
    except OSError as e:
        raise IOFailure(f"cannot open {sink}: {e}") from e
    try:
        for line in lines:
            n = os.write(fd, line)
            if n != len(line):
                raise IOFailure(f"short write to {sink} ({n} of {len(line)} bytes)")
    except OSError as e:
        raise IOFailure(f"write to {sink} failed: {e}") from e
    finally:
        os.close(fd)
    return len(lines)


def read_records(source: Sink, strict: bool = True) -> list[ClipManifestRecord]:
    """Parse and re-validate every line.

    With ``strict=False`` bad lines are skipped with a :class:`ManifestWarning`.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8") as f:
            return _read(f, strict)
    return _read(source, strict)


def _read(f: IO[str], strict: bool) -> list[ClipManifestRecord]:
    out = []
    for line_no, line in enumerate(f, start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            if not isinstance(d, dict):
                raise ValueError("not a JSON object")
            out.append(record_from_dict(d))
        except (ValueError, ValidationError) as e:
            err = MalformedLine(line_no, str(e))
            if strict:
                raise err from e
            warnings.warn(str(err), ManifestWarning, stacklevel=3)
    return out


def repair_tail(path: str | os.PathLike) -> int:
    """Truncate an unterminated final line left by an interrupted writer.

    Returns the number of bytes removed.
    """
    if not os.path.exists(path):
        return 0
    with open(path, "rb+") as f:
        size = f.seek(0, io.SEEK_END)
        if size == 0:
            return 0
        f.seek(size - 1)
        if f.read(1) == b"\n":
            return 0
        pos = size
        chunk = 4096
        while pos > 0:
            start = max(0, pos - chunk)
            f.seek(start)
            buf = f.read(pos - start)
            k = buf.rfind(b"\n")
            if k >= 0:
                keep = start + k + 1
                break
            pos = start
        else:
            keep = 0
        f.truncate(keep)
        return size - keep


def existing_clip_ids(path: str | os.PathLike) -> set[str]:
    if not os.path.exists(path):
        return set()
    ids = set()
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.endswith("\n"):
                continue
            try:
                ids.add(json.loads(line)["clip_id"])
            except (ValueError, KeyError, TypeError):
                continue
    return ids


# --------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class DatasetStats:
    kept_clips: int = 0
    total_duration_hr: float = 0.0
    avg_duration_s: float = 0.0
    avg_caption_words: float = 0.0
    label_histogram: dict = field(default_factory=dict)
    captioned_clips: int = 0
    total_records: int = 0
    total_duration_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "kept_clips": self.kept_clips,
            "total_records": self.total_records,
            "total_duration_s": q(self.total_duration_s),
            "total_duration_hr": q(self.total_duration_hr),
            "avg_duration_s": q(self.avg_duration_s),
            "captioned_clips": self.captioned_clips,
            "avg_caption_words": q(self.avg_caption_words),
            "label_histogram": dict(self.label_histogram),
        }


HIST_KEYS = tuple(l.value for l in Label) + ("none",)


def compute_stats(records: Iterable[ClipManifestRecord]) -> DatasetStats:
    """Table-style corpus statistics over kept records."""
    records = list(records)
    kept = [r for r in records if r.kept]
    hist = {k: 0 for k in HIST_KEYS}
    for r in kept:
        hist[Label(r.motion_label.label).value if r.motion_label else "none"] += 1
    total = math.fsum(r.duration_s for r in kept)
    words = [r.caption.word_count for r in kept if r.caption is not None]
    return DatasetStats(
        kept_clips=len(kept),
        total_duration_hr=total / 3600.0,
        avg_duration_s=total / len(kept) if kept else 0.0,
        avg_caption_words=math.fsum(words) / len(words) if words else 0.0,
        label_histogram=hist,
        captioned_clips=len(words),
        total_records=len(records),
        total_duration_s=total,
    )
